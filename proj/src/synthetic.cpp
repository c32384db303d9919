#include "cp4vlm/synthetic.hpp"

#include "cp4vlm/error.hpp"
#include "cp4vlm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cp4vlm {

namespace {

constexpr std::uint64_t kPrototypeStream = 0x70726f746fULL; // "proto"
constexpr std::uint64_t kSampleStream = 0x73616d706cULL;    // "sampl"
constexpr std::uint64_t kFrameStream = 0x6672616d65ULL;     // "frame"
constexpr int kMaxRetries = 16;

Eigen::VectorXd gaussian_vector(Pcg32& rng, int dim) {
    Eigen::VectorXd v(dim);
    for (int j = 0; j < dim; ++j) v(j) = rng.normal();
    return v;
}

// Normalizes `make()` output, redrawing if it lands on (numerically) zero.
template <typename Make>
Eigen::VectorXd unit_from(Make&& make, const char* what) {
    for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
        Eigen::VectorXd v = make();
        const double norm = v.norm();
        if (norm > 1e-12) return v / norm;
    }
    fail(ErrorKind::Numeric, std::string("synthetic generator could not normalize a ") + what);
}

} // namespace

void SyntheticSpec::validate(int shots_per_class) const {
    if (n_classes < 2) fail(ErrorKind::Config, "synthetic data needs at least 2 classes");
    if (dim < 2) fail(ErrorKind::Config, "synthetic data needs dimension >= 2");
    if (samples_per_class < shots_per_class + 1) {
        fail(ErrorKind::Config, "synthetic samples_per_class must be at least shots_per_class + 1 = " +
                                    std::to_string(shots_per_class + 1));
    }
    if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) fail(ErrorKind::Config, "noise_scale must be >= 0");
    if (!(confusability >= 0.0 && confusability <= 1.0)) fail(ErrorKind::Config, "confusability must lie in [0, 1]");
    if (!(cluster_spread >= 0.0) || !std::isfinite(cluster_spread)) fail(ErrorKind::Config, "cluster_spread must be >= 0");
}

SyntheticData generate(const SyntheticSpec& spec) {
    spec.validate(0);
    const int K = spec.n_classes;
    const int d = spec.dim;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    Pcg32 proto_rng(spec.seed, kPrototypeStream);
    const Eigen::VectorXd shared = unit_from([&] { return gaussian_vector(proto_rng, d); }, "shared direction");
    const int confusable = static_cast<int>(std::lround(spec.confusability * K));

    SyntheticData data;
    data.textual.rows.resize(K, d);
    for (int k = 0; k < K; ++k) {
        Eigen::VectorXd t;
        if (k < confusable) {
            t = unit_from([&] { return (shared + spec.cluster_spread * inv_sqrt_d * gaussian_vector(proto_rng, d)).eval(); },
                          "confusable prototype");
        } else {
            t = unit_from([&] { return gaussian_vector(proto_rng, d); }, "prototype");
        }
        data.textual.rows.row(k) = t.transpose().cast<float>();
    }
    data.textual.normalized = true;

    // Prototypes as stored, so that zero noise reproduces them exactly.
    const RowMatrixXd prototypes = data.textual.rows.cast<double>();

    Pcg32 sample_rng(spec.seed, kSampleStream);
    const Index n = static_cast<Index>(K) * spec.samples_per_class;
    data.visual.rows.resize(n, d);
    data.truth.reserve(static_cast<std::size_t>(n));
    Index row = 0;
    for (int k = 0; k < K; ++k) {
        for (int s = 0; s < spec.samples_per_class; ++s, ++row) {
            const Eigen::VectorXd f = unit_from(
                [&] {
                    return (prototypes.row(k).transpose() + spec.noise_scale * inv_sqrt_d * gaussian_vector(sample_rng, d)).eval();
                },
                "sample");
            data.visual.rows.row(row) = f.transpose().cast<float>();
            data.truth.push_back(k);
        }
    }
    data.visual.normalized = true;
    return data;
}

FrameTensor generate_frames(const EmbeddingMatrix& visual, int frames, double jitter, std::uint64_t seed) {
    if (frames < 1) fail(ErrorKind::Config, "frames per clip must be at least 1");
    const auto d = static_cast<int>(visual.rows.cols());
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    Pcg32 rng(seed, kFrameStream);
    FrameTensor out;
    out.frames = frames;
    out.dim = d;
    out.data.resize(visual.rows.rows(), static_cast<Index>(frames) * d);
    for (Index i = 0; i < visual.rows.rows(); ++i) {
        const Eigen::VectorXd base = visual.rows.row(i).transpose().cast<double>();
        for (int f = 0; f < frames; ++f) {
            const Eigen::VectorXd v =
                unit_from([&] { return (base + jitter * inv_sqrt_d * gaussian_vector(rng, d)).eval(); }, "frame");
            out.data.row(i).segment(static_cast<Index>(f) * d, d) = v.transpose().cast<float>();
        }
    }
    return out;
}

double oracle_quantile(std::vector<double> scores, double alpha, QuantileMode mode) {
    if (scores.empty()) fail(ErrorKind::Numeric, "oracle_quantile needs at least one score");
    std::sort(scores.begin(), scores.end());
    const std::size_t n = scores.size();
    const double count = mode == QuantileMode::Corrected ? static_cast<double>(n + 1) : static_cast<double>(n);
    const double target = count * (1.0 - alpha) - kRankSlack;
    std::size_t rank = 1;
    while (static_cast<double>(rank) < target) ++rank;
    if (rank > n) return 1.0;
    return scores[rank - 1];
}

OracleResult oracle_conformal(const LogitMatrix& logits, const LabelVector& truth, const std::vector<Index>& cal_indices,
                              double alpha, double tau, QuantileMode mode) {
    const Index n = logits.rows();
    const Index K = logits.cols();

    // Plain softmax, double arithmetic, stored at the same f32 precision as
    // the main path.
    std::vector<std::vector<float>> probs(static_cast<std::size_t>(n), std::vector<float>(static_cast<std::size_t>(K)));
    for (Index i = 0; i < n; ++i) {
        double m = logits(i, 0);
        for (Index k = 1; k < K; ++k) m = std::max(m, static_cast<double>(logits(i, k)));
        std::vector<double> e(static_cast<std::size_t>(K));
        double total = 0.0;
        for (Index k = 0; k < K; ++k) {
            e[static_cast<std::size_t>(k)] = std::exp((static_cast<double>(logits(i, k)) - m) / tau);
            total += e[static_cast<std::size_t>(k)];
        }
        for (Index k = 0; k < K; ++k)
            probs[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = static_cast<float>(e[static_cast<std::size_t>(k)] / total);
    }

    std::vector<bool> is_cal(static_cast<std::size_t>(n), false);
    std::vector<double> scores;
    for (Index i : cal_indices) {
        is_cal[static_cast<std::size_t>(i)] = true;
        scores.push_back(1.0 - static_cast<double>(probs[static_cast<std::size_t>(i)][static_cast<std::size_t>(truth[static_cast<std::size_t>(i)])]));
    }

    OracleResult result;
    result.q_hat = oracle_quantile(scores, alpha, mode);
    const double threshold_score = result.q_hat;
    std::size_t covered = 0;
    for (Index i = 0; i < n; ++i) {
        if (is_cal[static_cast<std::size_t>(i)]) continue;
        PredictionSet set;
        bool hit = false;
        for (Index k = 0; k < K; ++k) {
            const double score = 1.0 - static_cast<double>(probs[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]);
            if (score <= threshold_score) {
                set.push_back(static_cast<int>(k));
                if (k == truth[static_cast<std::size_t>(i)]) hit = true;
            }
        }
        if (hit) ++covered;
        result.test_indices.push_back(i);
        result.sets.push_back(std::move(set));
    }
    result.coverage = result.sets.empty() ? 0.0 : static_cast<double>(covered) / static_cast<double>(result.sets.size());
    return result;
}

std::vector<PredictionSet> oracle_predict_sets(const LogitMatrix& logits, const LabelVector& truth,
                                               const std::vector<Index>& cal_indices, double alpha, double tau) {
    return oracle_conformal(logits, truth, cal_indices, alpha, tau).sets;
}

} // namespace cp4vlm
