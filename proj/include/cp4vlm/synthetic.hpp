#pragma once

#include "cp4vlm/conformal.hpp"
#include "cp4vlm/tensor_io.hpp"
#include "cp4vlm/types.hpp"

#include <cstdint>
#include <vector>

namespace cp4vlm {

/// Exchangeable synthetic zero-shot data.
///
/// Class prototypes (the "textual" rows) are random unit vectors. A fraction
/// `confusability` of the classes is drawn near one shared direction instead,
/// so samples of those classes produce high-entropy logit rows and a long tail
/// of large prediction sets. Each visual row is its class prototype plus
/// isotropic Gaussian noise of expected norm `noise_scale`, re-normalized.
/// Samples are i.i.d. within a class, which makes any calibration/test split
/// exchangeable.
struct SyntheticSpec {
    int n_classes = 50;
    int dim = 64;
    int samples_per_class = 30;
    double noise_scale = 1.0;
    double confusability = 0.0;
    std::uint64_t seed = 0;
    // Spread of confusable prototypes around the shared direction.
    double cluster_spread = 0.5;

    void validate(int shots_per_class = 10) const;
};

struct SyntheticData {
    EmbeddingMatrix visual;
    EmbeddingMatrix textual;
    LabelVector truth;
};

// Deterministic in spec.seed. Samples are stored class by class.
SyntheticData generate(const SyntheticSpec& spec);

// Per-frame views of each visual row: row + Gaussian jitter of expected norm
// `jitter`, re-normalized. Shape [n, frames, d].
FrameTensor generate_frames(const EmbeddingMatrix& visual, int frames, double jitter, std::uint64_t seed);

// Independent reference implementation of the whole LAC pipeline, written
// with plain loops and a full sort. Only the rank slack is shared with
// conformal.cpp.
struct OracleResult {
    double q_hat = 1.0;
    std::vector<Index> test_indices;        // ascending, complement of calibration
    std::vector<PredictionSet> sets;        // aligned with test_indices
    double coverage = 0.0;
};

OracleResult oracle_conformal(const LogitMatrix& logits, const LabelVector& truth, const std::vector<Index>& cal_indices,
                              double alpha, double tau, QuantileMode mode = QuantileMode::Corrected);

std::vector<PredictionSet> oracle_predict_sets(const LogitMatrix& logits, const LabelVector& truth,
                                               const std::vector<Index>& cal_indices, double alpha, double tau);

// Sort-and-index (1 - alpha) quantile with a linear rank search.
double oracle_quantile(std::vector<double> scores, double alpha, QuantileMode mode = QuantileMode::Corrected);

} // namespace cp4vlm
