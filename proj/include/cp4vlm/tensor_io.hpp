#pragma once

#include "cp4vlm/types.hpp"

#include <filesystem>
#include <vector>

namespace cp4vlm {

namespace fs = std::filesystem;

// Per-sample frame embeddings, shape [samples, frames, dim]. Storage is
// samples x (frames * dim), row-major, so one clip occupies one matrix row.
struct FrameTensor {
    Index frames = 0;
    Index dim = 0;
    RowMatrixXf data;

    Index samples() const { return data.rows(); }
    Eigen::Map<const RowMatrixXf> clip(Index i) const {
        return {data.row(i).data(), frames, dim};
    }
};

// Contents of a bundle on disk: 2-D or 3-D little-endian f32, row-major.
struct Tensor {
    std::vector<Index> shape;
    std::vector<float> values;

    Index rank() const { return static_cast<Index>(shape.size()); }
    Index element_count() const;

    RowMatrixXf as_matrix() const;
    FrameTensor as_frames() const;
};

// Manifest layout:
//   {"dtype":"f32","shape":[n,d],"layout":"row-major","endianness":"little","data":"<relative path>"}
// The data path is resolved relative to the manifest's directory.
Tensor load_bundle(const fs::path& manifest_path);

void save_bundle(const Tensor& tensor, const fs::path& manifest_path);
void save_bundle(const Eigen::Ref<const RowMatrixXf>& matrix, const fs::path& manifest_path);
void save_bundle(const FrameTensor& frames, const fs::path& manifest_path);

RowMatrixXf load_matrix(const fs::path& manifest_path);
FrameTensor load_frames(const fs::path& manifest_path);

// Accepts a JSON array of integers or one integer per line.
LabelVector load_labels(const fs::path& path, int num_classes);
LabelVector load_labels(const fs::path& path, const ClassVocabulary& vocab);
void save_labels(const LabelVector& labels, const fs::path& path);

// {"names":[...],"prompt_template":"..."}
ClassVocabulary load_vocabulary(const fs::path& path);
void save_vocabulary(const ClassVocabulary& vocab, const fs::path& path);
void validate_vocabulary(const ClassVocabulary& vocab);

// Small hand-written fixtures: comma-separated rows, '#' comments allowed.
RowMatrixXf import_csv(const fs::path& path);

} // namespace cp4vlm
