#include "cp4vlm/tensor_io.hpp"

#include "cp4vlm/error.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace cp4vlm {

using nlohmann::json;

namespace {

std::string quoted(const fs::path& p) { return "'" + p.string() + "'"; }

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + quoted(path));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + quoted(path));
    out << text;
    if (!out) fail(ErrorKind::Io, "write failed for " + quoted(path));
}

json parse_json(const fs::path& path) {
    const std::string text = read_text(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::Io, quoted(path) + " is not valid JSON: " + e.what());
    }
}

std::uint32_t byteswap32(std::uint32_t v) {
    return (v >> 24) | ((v >> 8) & 0x0000ff00u) | ((v << 8) & 0x00ff0000u) | (v << 24);
}

// Raw file bytes are always little-endian.
void to_from_little(std::vector<float>& values) {
    if constexpr (std::endian::native == std::endian::little) return;
    for (float& v : values) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        bits = byteswap32(bits);
        std::memcpy(&v, &bits, 4);
    }
}

fs::path data_path_for(const fs::path& manifest_path) {
    std::string name = manifest_path.filename().string();
    const std::string suffix = ".manifest.json";
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
        name.resize(name.size() - suffix.size());
    } else {
        name = manifest_path.stem().string();
    }
    return name + ".bin";
}

const json& require_field(const json& manifest, const char* key, const fs::path& path) {
    if (!manifest.contains(key)) fail(ErrorKind::Io, quoted(path) + ": missing field '" + key + "'");
    return manifest.at(key);
}

} // namespace

std::string ClassVocabulary::prompt(int k) const {
    const std::string placeholder = "{class}";
    std::string out = prompt_template;
    const auto pos = out.find(placeholder);
    if (pos != std::string::npos) out.replace(pos, placeholder.size(), names.at(static_cast<std::size_t>(k)));
    return out;
}

Index Tensor::element_count() const {
    Index count = 1;
    for (Index s : shape) count *= s;
    return count;
}

RowMatrixXf Tensor::as_matrix() const {
    if (rank() != 2) fail(ErrorKind::Io, "expected a 2-D tensor, got rank " + std::to_string(rank()));
    return Eigen::Map<const RowMatrixXf>(values.data(), shape[0], shape[1]);
}

FrameTensor Tensor::as_frames() const {
    if (rank() != 3) fail(ErrorKind::Io, "expected a 3-D [n, frames, d] tensor, got rank " + std::to_string(rank()));
    FrameTensor out;
    out.frames = shape[1];
    out.dim = shape[2];
    out.data = Eigen::Map<const RowMatrixXf>(values.data(), shape[0], shape[1] * shape[2]);
    return out;
}

Tensor load_bundle(const fs::path& manifest_path) {
    if (!fs::exists(manifest_path)) fail(ErrorKind::Io, "manifest not found: " + quoted(manifest_path));
    const json manifest = parse_json(manifest_path);
    if (!manifest.is_object()) fail(ErrorKind::Io, quoted(manifest_path) + ": manifest must be a JSON object");

    const json& dtype = require_field(manifest, "dtype", manifest_path);
    if (!dtype.is_string() || dtype.get<std::string>() != "f32")
        fail(ErrorKind::Io, quoted(manifest_path) + ": field 'dtype' must be \"f32\", got " + dtype.dump());
    const json& layout = require_field(manifest, "layout", manifest_path);
    if (!layout.is_string() || layout.get<std::string>() != "row-major")
        fail(ErrorKind::Io, quoted(manifest_path) + ": field 'layout' must be \"row-major\", got " + layout.dump());
    const json& endianness = require_field(manifest, "endianness", manifest_path);
    if (!endianness.is_string() || endianness.get<std::string>() != "little")
        fail(ErrorKind::Io, quoted(manifest_path) + ": field 'endianness' must be \"little\", got " + endianness.dump());
    const json& data = require_field(manifest, "data", manifest_path);
    if (!data.is_string() || data.get<std::string>().empty())
        fail(ErrorKind::Io, quoted(manifest_path) + ": field 'data' must be a non-empty path string");

    const json& shape_json = require_field(manifest, "shape", manifest_path);
    if (!shape_json.is_array() || shape_json.size() < 2 || shape_json.size() > 3)
        fail(ErrorKind::Io, quoted(manifest_path) + ": field 'shape' must list 2 or 3 dimensions, got " + shape_json.dump());

    Tensor tensor;
    for (const json& dim : shape_json) {
        if (!dim.is_number_integer() || dim.get<std::int64_t>() < 1)
            fail(ErrorKind::Io, quoted(manifest_path) + ": field 'shape' entries must be positive integers, got " + shape_json.dump());
        tensor.shape.push_back(static_cast<Index>(dim.get<std::int64_t>()));
    }

    const fs::path data_path = manifest_path.parent_path() / data.get<std::string>();
    if (!fs::exists(data_path)) fail(ErrorKind::Io, "data file not found: " + quoted(data_path));
    const auto expected_bytes = static_cast<std::uintmax_t>(tensor.element_count()) * 4u;
    const auto actual_bytes = fs::file_size(data_path);
    if (actual_bytes != expected_bytes) {
        fail(ErrorKind::Io, quoted(manifest_path) + ": field 'shape' " + shape_json.dump() + " needs " +
                                std::to_string(expected_bytes) + " bytes but " + quoted(data_path) + " has " +
                                std::to_string(actual_bytes));
    }

    tensor.values.resize(static_cast<std::size_t>(tensor.element_count()));
    std::ifstream in(data_path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + quoted(data_path));
    in.read(reinterpret_cast<char*>(tensor.values.data()), static_cast<std::streamsize>(expected_bytes));
    if (!in) fail(ErrorKind::Io, "short read from " + quoted(data_path));
    to_from_little(tensor.values);

    for (std::size_t i = 0; i < tensor.values.size(); ++i) {
        if (!std::isfinite(tensor.values[i]))
            fail(ErrorKind::Io, quoted(data_path) + ": non-finite value at flat index " + std::to_string(i));
    }
    return tensor;
}

void save_bundle(const Tensor& tensor, const fs::path& manifest_path) {
    if (tensor.rank() < 2 || tensor.rank() > 3) fail(ErrorKind::Numeric, "bundle tensors must have 2 or 3 dimensions");
    for (Index s : tensor.shape)
        if (s < 1) fail(ErrorKind::Numeric, "bundle tensors must be non-empty");
    if (static_cast<Index>(tensor.values.size()) != tensor.element_count())
        fail(ErrorKind::Internal, "tensor value count does not match its shape");
    for (std::size_t i = 0; i < tensor.values.size(); ++i) {
        if (!std::isfinite(tensor.values[i]))
            fail(ErrorKind::Numeric, "refusing to save non-finite value at flat index " + std::to_string(i));
    }

    const fs::path data_name = data_path_for(manifest_path);
    nlohmann::ordered_json manifest;
    manifest["dtype"] = "f32";
    manifest["shape"] = tensor.shape;
    manifest["layout"] = "row-major";
    manifest["endianness"] = "little";
    manifest["data"] = data_name.string();

    std::vector<float> bytes = tensor.values;
    to_from_little(bytes);
    const fs::path data_path = manifest_path.parent_path() / data_name;
    {
        std::ofstream out(data_path, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::Io, "cannot write " + quoted(data_path));
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size() * 4));
        if (!out) fail(ErrorKind::Io, "write failed for " + quoted(data_path));
    }
    write_text(manifest_path, manifest.dump() + "\n");
}

void save_bundle(const Eigen::Ref<const RowMatrixXf>& matrix, const fs::path& manifest_path) {
    Tensor t;
    t.shape = {matrix.rows(), matrix.cols()};
    t.values.resize(static_cast<std::size_t>(matrix.size()));
    Eigen::Map<RowMatrixXf>(t.values.data(), matrix.rows(), matrix.cols()) = matrix;
    save_bundle(t, manifest_path);
}

void save_bundle(const FrameTensor& frames, const fs::path& manifest_path) {
    Tensor t;
    t.shape = {frames.samples(), frames.frames, frames.dim};
    t.values.assign(frames.data.data(), frames.data.data() + frames.data.size());
    save_bundle(t, manifest_path);
}

RowMatrixXf load_matrix(const fs::path& manifest_path) { return load_bundle(manifest_path).as_matrix(); }

FrameTensor load_frames(const fs::path& manifest_path) { return load_bundle(manifest_path).as_frames(); }

LabelVector load_labels(const fs::path& path, int num_classes) {
    const std::string text = read_text(path);
    LabelVector labels;

    auto push = [&](long long v, std::size_t position) {
        if (v < 0 || v >= num_classes) {
            fail(ErrorKind::Io, quoted(path) + ": label " + std::to_string(v) + " at position " +
                                    std::to_string(position) + " is outside [0, " + std::to_string(num_classes) + ")");
        }
        labels.push_back(static_cast<int>(v));
    };

    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '[') {
        json arr;
        try {
            arr = json::parse(text);
        } catch (const json::parse_error& e) {
            fail(ErrorKind::Io, quoted(path) + " is not valid JSON: " + e.what());
        }
        if (!arr.is_array()) fail(ErrorKind::Io, quoted(path) + ": labels must be a JSON array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            if (!arr[i].is_number_integer())
                fail(ErrorKind::Io, quoted(path) + ": non-integer label " + arr[i].dump() + " at position " + std::to_string(i));
            push(arr[i].get<long long>(), i);
        }
        return labels;
    }

    std::istringstream lines(text);
    std::string line;
    std::size_t position = 0;
    while (std::getline(lines, line)) {
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r");
        const std::string token = line.substr(b, e - b + 1);
        std::size_t consumed = 0;
        long long v = 0;
        try {
            v = std::stoll(token, &consumed);
        } catch (const std::exception&) {
            consumed = 0;
        }
        if (consumed != token.size())
            fail(ErrorKind::Io, quoted(path) + ": non-integer label '" + token + "' at position " + std::to_string(position));
        push(v, position);
        ++position;
    }
    return labels;
}

LabelVector load_labels(const fs::path& path, const ClassVocabulary& vocab) {
    validate_vocabulary(vocab);
    return load_labels(path, vocab.size());
}

void save_labels(const LabelVector& labels, const fs::path& path) {
    write_text(path, json(labels).dump() + "\n");
}

void validate_vocabulary(const ClassVocabulary& vocab) {
    if (vocab.names.size() < 2) fail(ErrorKind::Config, "vocabulary needs at least 2 classes");
    std::unordered_set<std::string> seen;
    for (const auto& name : vocab.names) {
        if (!seen.insert(name).second) fail(ErrorKind::Config, "duplicate class name in vocabulary: '" + name + "'");
    }
    const std::string placeholder = "{class}";
    const auto first = vocab.prompt_template.find(placeholder);
    if (first == std::string::npos || vocab.prompt_template.find(placeholder, first + 1) != std::string::npos)
        fail(ErrorKind::Config, "prompt_template must contain '{class}' exactly once");
}

ClassVocabulary load_vocabulary(const fs::path& path) {
    const json j = parse_json(path);
    if (!j.is_object() || !j.contains("names") || !j["names"].is_array())
        fail(ErrorKind::Io, quoted(path) + ": vocabulary must be an object with a 'names' array");
    ClassVocabulary vocab;
    for (const json& name : j["names"]) {
        if (!name.is_string()) fail(ErrorKind::Io, quoted(path) + ": class names must be strings");
        vocab.names.push_back(name.get<std::string>());
    }
    if (j.contains("prompt_template")) {
        if (!j["prompt_template"].is_string()) fail(ErrorKind::Io, quoted(path) + ": 'prompt_template' must be a string");
        vocab.prompt_template = j["prompt_template"].get<std::string>();
    }
    validate_vocabulary(vocab);
    return vocab;
}

void save_vocabulary(const ClassVocabulary& vocab, const fs::path& path) {
    validate_vocabulary(vocab);
    nlohmann::ordered_json j;
    j["names"] = vocab.names;
    j["prompt_template"] = vocab.prompt_template;
    write_text(path, j.dump(2) + "\n");
}

RowMatrixXf import_csv(const fs::path& path) {
    std::istringstream lines(read_text(path));
    std::vector<std::vector<float>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::vector<float> row;
        std::istringstream cells(line);
        std::string cell;
        while (std::getline(cells, cell, ',')) {
            std::size_t consumed = 0;
            float v = 0.0f;
            try {
                v = std::stof(cell, &consumed);
            } catch (const std::exception&) {
                consumed = 0;
            }
            if (consumed == 0 || cell.find_first_not_of(" \t\r", consumed) != std::string::npos)
                fail(ErrorKind::Io, quoted(path) + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
            if (!std::isfinite(v)) fail(ErrorKind::Io, quoted(path) + ":" + std::to_string(line_no) + ": non-finite value");
            row.push_back(v);
        }
        if (!rows.empty() && row.size() != rows.front().size())
            fail(ErrorKind::Io, quoted(path) + ":" + std::to_string(line_no) + ": ragged row");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) fail(ErrorKind::Io, quoted(path) + ": no data rows");
    RowMatrixXf out(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
    for (Index i = 0; i < out.rows(); ++i)
        for (Index j = 0; j < out.cols(); ++j) out(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    return out;
}

} // namespace cp4vlm
