// cp4vlm: conformal prediction sets with temperature tuning on precomputed
// vision-language logits.
//
// Exit codes: 0 success, 1 config, 2 I/O or format, 3 numeric/domain,
// 4 internal invariant violation.

#include "cp4vlm/conformal.hpp"
#include "cp4vlm/embed_ops.hpp"
#include "cp4vlm/error.hpp"
#include "cp4vlm/harness.hpp"
#include "cp4vlm/report.hpp"
#include "cp4vlm/synthetic.hpp"
#include "cp4vlm/temperature.hpp"
#include "cp4vlm/tensor_io.hpp"
#include "cp4vlm/version.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <iostream>
#include <thread>
#include <unistd.h>

using namespace cp4vlm;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct RunConfig {
    std::string command;

    std::string logits;
    std::string visual;
    std::string textual;
    std::string labels;
    std::string vocab;
    std::string frames;
    std::string calibration;

    std::vector<double> alphas = {0.1};
    double tau = kBaselineTau;
    bool tuned = false;
    std::vector<std::string> modes = {"fixed", "tuned"};
    std::string grid = "1:1000:201log";
    bool refine = true;
    double tune_split = 0.0;
    std::uint64_t seed = 0;
    std::string seeds = "0:40";
    int shots = 10;
    std::string split_mode = "per-class";
    std::string quantile_mode = "corrected";
    bool force_nonempty = false;
    bool pooled_quantiles = false;
    bool no_renorm_gap = false;

    SyntheticSpec synth;
    int synth_frames = 0;
    double frame_jitter = 0.1;
};

ordered_json config_json(const RunConfig& c) {
    ordered_json j;
    j["command"] = c.command;
    j["inputs"] = {{"logits", c.logits},   {"visual", c.visual},   {"textual", c.textual},
                   {"labels", c.labels},   {"vocab", c.vocab},     {"frames", c.frames},
                   {"calibration", c.calibration}};
    j["alphas"] = c.alphas;
    j["tau"] = c.tau;
    j["tuned"] = c.tuned;
    j["modes"] = c.modes;
    j["grid"] = c.grid;
    j["refine"] = c.refine;
    j["tune_split"] = c.tune_split;
    j["seed"] = c.seed;
    j["seeds"] = c.seeds;
    j["shots"] = c.shots;
    j["split_mode"] = c.split_mode;
    j["quantile_mode"] = c.quantile_mode;
    j["force_nonempty"] = c.force_nonempty;
    j["pooled_quantiles"] = c.pooled_quantiles;
    j["no_renorm_gap"] = c.no_renorm_gap;
    j["synth"] = {{"classes", c.synth.n_classes},
                  {"dim", c.synth.dim},
                  {"per_class", c.synth.samples_per_class},
                  {"noise", c.synth.noise_scale},
                  {"confusability", c.synth.confusability},
                  {"spread", c.synth.cluster_spread},
                  {"seed", c.synth.seed},
                  {"frames", c.synth_frames},
                  {"frame_jitter", c.frame_jitter}};
    return j;
}

RunConfig config_from_json(const json& j) {
    RunConfig c;
    try {
        c.command = j.at("command").get<std::string>();
        const json& in = j.at("inputs");
        c.logits = in.at("logits").get<std::string>();
        c.visual = in.at("visual").get<std::string>();
        c.textual = in.at("textual").get<std::string>();
        c.labels = in.at("labels").get<std::string>();
        c.vocab = in.at("vocab").get<std::string>();
        c.frames = in.at("frames").get<std::string>();
        c.calibration = in.at("calibration").get<std::string>();
        c.alphas = j.at("alphas").get<std::vector<double>>();
        c.tau = j.at("tau").get<double>();
        c.tuned = j.at("tuned").get<bool>();
        c.modes = j.at("modes").get<std::vector<std::string>>();
        c.grid = j.at("grid").get<std::string>();
        c.refine = j.at("refine").get<bool>();
        c.tune_split = j.at("tune_split").get<double>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.seeds = j.at("seeds").get<std::string>();
        c.shots = j.at("shots").get<int>();
        c.split_mode = j.at("split_mode").get<std::string>();
        c.quantile_mode = j.at("quantile_mode").get<std::string>();
        c.force_nonempty = j.at("force_nonempty").get<bool>();
        c.pooled_quantiles = j.at("pooled_quantiles").get<bool>();
        c.no_renorm_gap = j.at("no_renorm_gap").get<bool>();
        const json& s = j.at("synth");
        c.synth.n_classes = s.at("classes").get<int>();
        c.synth.dim = s.at("dim").get<int>();
        c.synth.samples_per_class = s.at("per_class").get<int>();
        c.synth.noise_scale = s.at("noise").get<double>();
        c.synth.confusability = s.at("confusability").get<double>();
        c.synth.cluster_spread = s.at("spread").get<double>();
        c.synth.seed = s.at("seed").get<std::uint64_t>();
        c.synth_frames = s.at("frames").get<int>();
        c.frame_jitter = s.at("frame_jitter").get<double>();
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, std::string("run manifest is incomplete: ") + e.what());
    }
    return c;
}

std::string absolute_or_empty(const std::string& p) {
    return p.empty() ? p : fs::absolute(p).lexically_normal().string();
}

void resolve_paths(RunConfig& c) {
    for (std::string* p : {&c.logits, &c.visual, &c.textual, &c.labels, &c.vocab, &c.frames, &c.calibration}) {
        *p = absolute_or_empty(*p);
        if (!p->empty() && !fs::exists(*p)) fail(ErrorKind::Io, "input not found: '" + *p + "'");
    }
}

std::uint64_t parse_u64(const std::string& text, const char* what) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
        fail(ErrorKind::Config, std::string("bad ") + what + " '" + text + "'");
    return v;
}

// "A:B" is the half-open range [A, B); otherwise a comma-separated list.
std::vector<std::uint64_t> parse_seeds(const std::string& spec) {
    std::vector<std::uint64_t> seeds;
    const auto colon = spec.find(':');
    if (colon != std::string::npos) {
        const std::uint64_t lo = parse_u64(spec.substr(0, colon), "seed range");
        const std::uint64_t hi = parse_u64(spec.substr(colon + 1), "seed range");
        if (hi <= lo) fail(ErrorKind::Config, "seed range '" + spec + "' is empty");
        for (std::uint64_t s = lo; s < hi; ++s) seeds.push_back(s);
        return seeds;
    }
    std::size_t start = 0;
    while (start <= spec.size()) {
        const auto comma = spec.find(',', start);
        const std::string token = spec.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        seeds.push_back(parse_u64(token, "seed"));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return seeds;
}

double parse_double(const std::string& text, const char* what) {
    try {
        std::size_t consumed = 0;
        const double v = std::stod(text, &consumed);
        if (consumed == text.size()) return v;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::Config, std::string("bad ") + what + " '" + text + "'");
}

// LO:HI:POINTS with an optional spacing suffix: "1:1000:201log", "1:100:50:lin".
TemperatureGrid parse_grid(const std::string& spec) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (;;) {
        const auto colon = spec.find(':', start);
        parts.push_back(spec.substr(start, colon == std::string::npos ? std::string::npos : colon - start));
        if (colon == std::string::npos) break;
        start = colon + 1;
    }
    if (parts.size() != 3 && parts.size() != 4) fail(ErrorKind::Config, "grid must look like LO:HI:POINTS(log|lin), got '" + spec + "'");
    std::string points = parts[2];
    std::string spacing = parts.size() == 4 ? parts[3] : "log";
    for (const char* suffix : {"log", "lin"}) {
        if (points.size() > 3 && points.compare(points.size() - 3, 3, suffix) == 0) {
            spacing = suffix;
            points.resize(points.size() - 3);
        }
    }
    if (spacing != "log" && spacing != "lin") fail(ErrorKind::Config, "grid spacing must be 'log' or 'lin', got '" + spacing + "'");
    const auto n = parse_u64(points, "grid point count");
    if (n > 10'000'000) fail(ErrorKind::Config, "grid point count is too large");
    return TemperatureGrid::make(parse_double(parts[0], "grid LO"), parse_double(parts[1], "grid HI"), static_cast<int>(n),
                                 spacing == "log" ? GridSpacing::Log : GridSpacing::Linear);
}

QuantileMode parse_quantile_mode(const std::string& s) {
    if (s == "corrected") return QuantileMode::Corrected;
    if (s == "raw") return QuantileMode::Raw;
    fail(ErrorKind::Config, "quantile mode must be 'corrected' or 'raw', got '" + s + "'");
}

SplitMode parse_split_mode(const std::string& s) {
    if (s == "per-class") return SplitMode::PerClass;
    if (s == "global") return SplitMode::Global;
    fail(ErrorKind::Config, "split mode must be 'per-class' or 'global', got '" + s + "'");
}

EvalOptions eval_options(const RunConfig& c) {
    EvalOptions o;
    o.quantile_mode = parse_quantile_mode(c.quantile_mode);
    o.predict.force_nonempty = c.force_nonempty;
    o.pooled_quantiles = c.pooled_quantiles;
    return o;
}

TauMode tuned_mode(const RunConfig& c) {
    TauMode m = TauMode::tuned(parse_grid(c.grid), c.refine);
    m.tune_split = c.tune_split;
    return m;
}

void check_alphas(const RunConfig& c) {
    if (c.alphas.empty()) fail(ErrorKind::Config, "at least one --alpha is required");
    for (double a : c.alphas)
        if (!(a > 0.0 && a < 1.0)) fail(ErrorKind::Config, "--alpha values must lie in (0, 1), got " + format_number(a));
    if (!(c.tune_split >= 0.0 && c.tune_split < 1.0)) fail(ErrorKind::Config, "--tune-split must lie in [0, 1)");
}

struct Dataset {
    LogitMatrix logits;
    LabelVector truth;
};

LogitMatrix load_logits(const RunConfig& c) {
    if (!c.logits.empty()) {
        if (!c.visual.empty() || !c.textual.empty()) fail(ErrorKind::Config, "give either --logits or --visual/--textual, not both");
        return load_matrix(c.logits);
    }
    if (c.visual.empty() || c.textual.empty()) fail(ErrorKind::Config, "need --logits, or both --visual and --textual");
    const Tensor visual_raw = load_bundle(c.visual);
    EmbeddingMatrix visual = visual_raw.rank() == 3 ? gap_pool(visual_raw.as_frames(), !c.no_renorm_gap)
                                                    : as_embeddings(visual_raw.as_matrix());
    const EmbeddingMatrix textual = as_embeddings(load_matrix(c.textual));
    if (!textual.normalized) fail(ErrorKind::Numeric, "textual embeddings are not l2-normalized");
    if (!visual.normalized) {
        if (!c.no_renorm_gap) fail(ErrorKind::Numeric, "visual embeddings are not l2-normalized");
        return dot_logits(visual.rows, textual.rows);
    }
    return cosine_logits(visual, textual);
}

Dataset load_dataset(const RunConfig& c) {
    if (c.labels.empty()) fail(ErrorKind::Config, "--labels is required");
    Dataset d;
    d.logits = load_logits(c);
    const auto K = static_cast<int>(d.logits.cols());
    if (!c.vocab.empty()) {
        const ClassVocabulary vocab = load_vocabulary(c.vocab);
        if (vocab.size() != K)
            fail(ErrorKind::Config, "vocabulary has " + std::to_string(vocab.size()) + " classes but logits have " + std::to_string(K));
        d.truth = load_labels(c.labels, vocab);
    } else {
        d.truth = load_labels(c.labels, K);
    }
    if (static_cast<Index>(d.truth.size()) != d.logits.rows()) {
        fail(ErrorKind::Io, "labels have " + std::to_string(d.truth.size()) + " entries but logits have " +
                                std::to_string(d.logits.rows()) + " rows");
    }
    return d;
}

std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

// Files are written to a staging directory next to the target and moved into
// place only after every output succeeded.
class OutputDir {
public:
    explicit OutputDir(const std::string& target) : target_(fs::absolute(target).lexically_normal()) {
        if (target.empty()) fail(ErrorKind::Config, "--out is required");
        staging_ = target_;
        staging_ += ".partial-" + std::to_string(::getpid());
        std::error_code ec;
        fs::remove_all(staging_, ec);
        fs::create_directories(staging_, ec);
        if (ec) fail(ErrorKind::Io, "cannot create '" + staging_.string() + "': " + ec.message());
    }
    ~OutputDir() {
        std::error_code ec;
        fs::remove_all(staging_, ec);
    }
    OutputDir(const OutputDir&) = delete;
    OutputDir& operator=(const OutputDir&) = delete;

    fs::path file(const std::string& name) const { return staging_ / name; }

    void commit() {
        std::error_code ec;
        if (!fs::exists(target_)) {
            if (target_.has_parent_path()) fs::create_directories(target_.parent_path(), ec);
            fs::rename(staging_, target_, ec);
            if (!ec) return;
            ec.clear();
            fs::create_directories(target_, ec);
        }
        for (const auto& entry : fs::directory_iterator(staging_)) {
            fs::rename(entry.path(), target_ / entry.path().filename(), ec);
            if (ec) fail(ErrorKind::Io, "cannot move output into '" + target_.string() + "': " + ec.message());
        }
    }

private:
    fs::path target_;
    fs::path staging_;
};

void write_run_manifest(const OutputDir& out, const RunConfig& c, const std::vector<std::uint64_t>& seeds) {
    ordered_json j;
    j["tool"] = kToolName;
    j["version"] = kVersion;
    j["config"] = config_json(c);
    j["seed_list"] = seeds;
    write_file(out.file("run-manifest.json"), dump(j));
}

void cmd_synth(const RunConfig& c, OutputDir& out) {
    const SyntheticData data = generate(c.synth);
    save_bundle(data.visual.rows, out.file("visual.manifest.json"));
    save_bundle(data.textual.rows, out.file("textual.manifest.json"));
    save_bundle(cosine_logits(data.visual, data.textual), out.file("logits.manifest.json"));
    save_labels(data.truth, out.file("labels.json"));
    ClassVocabulary vocab;
    for (int k = 0; k < c.synth.n_classes; ++k) vocab.names.push_back("class_" + std::to_string(k));
    save_vocabulary(vocab, out.file("vocab.json"));
    if (c.synth_frames > 0)
        save_bundle(generate_frames(data.visual, c.synth_frames, c.frame_jitter, c.synth.seed), out.file("frames.manifest.json"));
    write_run_manifest(out, c, {c.synth.seed});
}

void cmd_embed_pool(const RunConfig& c, OutputDir& out) {
    if (c.frames.empty()) fail(ErrorKind::Config, "--frames is required");
    const FrameTensor frames = load_frames(c.frames);
    const EmbeddingMatrix pooled = gap_pool(frames, !c.no_renorm_gap);
    save_bundle(pooled.rows, out.file("visual.manifest.json"));
    write_run_manifest(out, c, {});
}

void cmd_calibrate(const RunConfig& c, OutputDir& out) {
    check_alphas(c);
    const Dataset d = load_dataset(c);
    const ConformalCalibration cal = calibrate(d.logits, d.truth, c.alphas.front(), c.tau, parse_quantile_mode(c.quantile_mode));
    write_file(out.file("calibration.json"), dump(to_json(cal)));
    write_run_manifest(out, c, {});
}

// Reads only the calibration bundle it is given; there is no test input.
void cmd_tune(const RunConfig& c, OutputDir& out) {
    check_alphas(c);
    const Dataset d = load_dataset(c);
    const QuantileMode qmode = parse_quantile_mode(c.quantile_mode);
    const TemperatureGrid grid = parse_grid(c.grid);
    const double alpha = c.alphas.front();

    ConformalCalibration cal;
    TuningResult tuned;
    if (c.tune_split > 0.0) {
        const Split parts = fraction_split(d.logits.rows(), c.tune_split, c.seed);
        const std::vector<Index>& tune_rows = parts.cal;
        const std::vector<Index>& rest = parts.test;
        LabelVector tune_truth, rest_truth;
        for (Index i : tune_rows) tune_truth.push_back(d.truth[static_cast<std::size_t>(i)]);
        for (Index i : rest) rest_truth.push_back(d.truth[static_cast<std::size_t>(i)]);
        tuned = tune_temperature(d.logits(tune_rows, Eigen::all), tune_truth, alpha, grid, c.refine, qmode);
        cal = calibrate(d.logits(rest, Eigen::all), rest_truth, alpha, tuned.tau_star, qmode);
    } else {
        tuned = tune_temperature(d.logits, d.truth, alpha, grid, c.refine, qmode);
        cal = calibrate(d.logits, d.truth, alpha, tuned.tau_star, qmode);
    }
    ordered_json j = to_json(cal);
    j["inv_temp"] = 1.0 / cal.temperature;
    j["refined"] = tuned.refined;
    write_file(out.file("calibration.json"), dump(j));
    write_file(out.file("qhat_curve.csv"), curve_csv(tuned.curve));
    write_run_manifest(out, c, {c.seed});
}

void cmd_eval(const RunConfig& c, OutputDir& out) {
    const Dataset d = load_dataset(c);
    const EvalOptions options = eval_options(c);
    FoldReport report;
    if (!c.calibration.empty()) {
        report = evaluate_calibration(load_calibration(c.calibration), d.logits, d.truth, options);
    } else {
        check_alphas(c);
        const TauMode mode = c.tuned ? tuned_mode(c) : TauMode::fixed(c.tau);
        report = run_fold(d.logits, d.truth, {c.shots, c.seed, parse_split_mode(c.split_mode)}, c.alphas.front(), mode, options);
    }
    ordered_json j = to_json(report);
    j["force_nonempty"] = c.force_nonempty;
    write_file(out.file("fold_report.json"), dump(j));
    write_file(out.file("fold_report.csv"), folds_csv({report}));
    write_file(out.file("histogram.csv"), histogram_csv(report.size_histogram));
    write_run_manifest(out, c, {c.seed});
}

std::string file_tag(const AggregateReport& a) {
    std::string tag = "alpha" + format_number(a.alpha) + "_" + a.mode;
    for (char& ch : tag)
        if (ch == ':') ch = '-';
    return tag;
}

void cmd_sweep(const RunConfig& c, OutputDir& out, unsigned jobs) {
    check_alphas(c);
    const Dataset d = load_dataset(c);
    const std::vector<std::uint64_t> seeds = parse_seeds(c.seeds);
    std::vector<TauMode> modes;
    for (const std::string& m : c.modes) {
        if (m == "fixed") modes.push_back(TauMode::fixed(c.tau));
        else if (m == "tuned") modes.push_back(tuned_mode(c));
        else fail(ErrorKind::Config, "unknown tau mode '" + m + "' (expected fixed or tuned)");
    }
    const SweepReport report = run_sweep(d.logits, d.truth, seeds, c.alphas, modes, c.shots, parse_split_mode(c.split_mode),
                                         eval_options(c), jobs);
    ordered_json j = to_json(report);
    j["force_nonempty"] = c.force_nonempty;
    j["pooled_quantiles"] = c.pooled_quantiles;
    write_file(out.file("sweep_report.json"), dump(j));
    write_file(out.file("sweep_folds.csv"), folds_csv(report.folds));
    for (const auto& a : report.aggregates)
        write_file(out.file("histogram_" + file_tag(a) + ".csv"), histogram_csv(a.size_histogram));
    write_run_manifest(out, c, seeds);
}

void add_data_options(CLI::App* cmd, RunConfig& c) {
    cmd->add_option("--logits", c.logits, "logit bundle manifest (n x K)");
    cmd->add_option("--visual", c.visual, "visual embedding bundle (n x d, or n x frames x d)");
    cmd->add_option("--textual", c.textual, "textual embedding bundle (K x d)");
    cmd->add_option("--labels", c.labels, "labels (JSON array or one integer per line)");
    cmd->add_option("--vocab", c.vocab, "class vocabulary JSON");
    cmd->add_option("--quantile-mode", c.quantile_mode, "corrected (default) or raw");
    cmd->add_flag("--no-renorm-gap", c.no_renorm_gap, "skip re-normalizing pooled frame means");
}

void add_tuning_options(CLI::App* cmd, RunConfig& c) {
    cmd->add_option("--grid", c.grid, "1/tau grid LO:HI:POINTS(log|lin)");
    cmd->add_flag("--refine,!--no-refine", c.refine, "golden-section refinement around the grid minimum");
    cmd->add_option("--tune-split", c.tune_split, "tune on this fraction of calibration rows, calibrate on the rest");
}

void add_eval_options(CLI::App* cmd, RunConfig& c) {
    cmd->add_option("--shots", c.shots, "calibration samples per class");
    cmd->add_option("--split-mode", c.split_mode, "per-class (default) or global");
    cmd->add_flag("--force-nonempty", c.force_nonempty, "put the argmax class into empty sets (not LAC)");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conformal prediction sets with softmax temperature tuning for zero-shot classifiers"};
    app.set_version_flag("--version", std::string(kToolName) + " " + kVersion);
    app.require_subcommand(1);

    RunConfig c;
    std::string out_dir;
    std::string from_manifest;
    unsigned jobs = std::max(1u, std::thread::hardware_concurrency());

    auto common = [&](CLI::App* cmd) {
        cmd->add_option("--out", out_dir, "output directory")->required();
        cmd->add_option("--from-manifest", from_manifest, "re-run the configuration stored in a run-manifest.json");
        cmd->add_option("--jobs", jobs, "worker threads")->envname("CP4VLM_JOBS")->check(CLI::PositiveNumber);
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic exchangeable dataset");
    common(synth);
    synth->add_option("--classes", c.synth.n_classes, "number of classes K");
    synth->add_option("--dim", c.synth.dim, "embedding dimension d");
    synth->add_option("--per-class", c.synth.samples_per_class, "samples per class");
    synth->add_option("--noise", c.synth.noise_scale, "expected norm of per-sample noise");
    synth->add_option("--confusability", c.synth.confusability, "fraction of classes clustered together");
    synth->add_option("--spread", c.synth.cluster_spread, "spread of clustered prototypes");
    synth->add_option("--seed", c.synth.seed, "generator seed");
    synth->add_option("--frames", c.synth_frames, "also write an [n, frames, d] frame bundle");
    synth->add_option("--frame-jitter", c.frame_jitter, "per-frame noise norm");

    auto* pool = app.add_subcommand("embed-pool", "average frame embeddings into one vector per clip");
    common(pool);
    pool->add_option("--frames", c.frames, "frame bundle [n, frames, d]");
    pool->add_flag("--no-renorm-gap", c.no_renorm_gap, "skip re-normalizing the mean");

    auto* cal = app.add_subcommand("calibrate", "compute q_hat at a fixed temperature");
    common(cal);
    add_data_options(cal, c);
    cal->add_option("--alpha", c.alphas, "error level")->expected(1);
    cal->add_option("--tau", c.tau, "softmax temperature");

    auto* tune = app.add_subcommand("tune", "select tau* = argmin q_hat(tau) on calibration data");
    common(tune);
    add_data_options(tune, c);
    add_tuning_options(tune, c);
    tune->add_option("--alpha", c.alphas, "error level")->expected(1);
    tune->add_option("--seed", c.seed, "seed for --tune-split");

    auto* eval = app.add_subcommand("eval", "run one calibration/test fold");
    common(eval);
    add_data_options(eval, c);
    add_tuning_options(eval, c);
    add_eval_options(eval, c);
    eval->add_option("--alpha", c.alphas, "error level")->expected(1);
    eval->add_option("--tau", c.tau, "fixed softmax temperature");
    eval->add_flag("--tuned", c.tuned, "tune tau on the calibration split");
    eval->add_option("--seed", c.seed, "split seed");
    eval->add_option("--calibration", c.calibration, "evaluate an existing calibration.json on every row");

    auto* sweep = app.add_subcommand("sweep", "multi-seed, multi-alpha evaluation");
    common(sweep);
    add_data_options(sweep, c);
    add_tuning_options(sweep, c);
    add_eval_options(sweep, c);
    sweep->add_option("--alpha", c.alphas, "error levels")->delimiter(',')->default_str("0.01,0.02,0.03,0.05,0.1");
    sweep->add_option("--tau", c.tau, "temperature of the fixed mode");
    sweep->add_option("--modes", c.modes, "tau modes: fixed,tuned")->delimiter(',');
    sweep->add_option("--seeds", c.seeds, "A:B (half-open range) or comma list");
    sweep->add_flag("--pooled-quantiles", c.pooled_quantiles, "aggregate size quantiles over pooled folds");

    // Sweeps default to the standard alpha grid unless --alpha is given.
    sweep->preparse_callback([&](std::size_t) { c.alphas = {0.01, 0.02, 0.03, 0.05, 0.1}; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ErrorKind::Config);
    }

    CLI::App* chosen = app.get_subcommands().front();
    try {
        if (!from_manifest.empty()) {
            const json j = json::parse(read_file(from_manifest), nullptr, false);
            if (j.is_discarded() || !j.contains("config")) fail(ErrorKind::Config, "'" + from_manifest + "' is not a run manifest");
            c = config_from_json(j["config"]);
            if (c.command != chosen->get_name())
                fail(ErrorKind::Config, "manifest was written by '" + c.command + "', not '" + chosen->get_name() + "'");
        }
        c.command = chosen->get_name();
        resolve_paths(c);
        if (c.force_nonempty) std::cerr << "note: --force-nonempty adds argmax classes to empty sets; results are not LAC\n";

        OutputDir out(out_dir);
        if (c.command == "synth") cmd_synth(c, out);
        else if (c.command == "embed-pool") cmd_embed_pool(c, out);
        else if (c.command == "calibrate") cmd_calibrate(c, out);
        else if (c.command == "tune") cmd_tune(c, out);
        else if (c.command == "eval") cmd_eval(c, out);
        else if (c.command == "sweep") cmd_sweep(c, out, jobs);
        out.commit();
    } catch (const Error& e) {
        std::cerr << error_prefix(e.kind()) << ": " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << error_prefix(ErrorKind::Internal) << ": " << e.what() << "\n";
        return static_cast<int>(ErrorKind::Internal);
    }
    return 0;
}
