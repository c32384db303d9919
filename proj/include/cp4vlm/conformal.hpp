#pragma once

#include "cp4vlm/error.hpp"
#include "cp4vlm/types.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace cp4vlm {

// LAC nonconformity scores s_i = 1 - y_{i,k*}, one per calibration sample.
using ScoreVector = Eigen::VectorXd;

/// Which order statistic stands for the (1 - alpha) quantile of n scores.
///   Corrected: rank ceil((n + 1)(1 - alpha)); ranks beyond n mean "no finite
///              quantile" and the caller substitutes the maximal value.
///   Raw:       rank ceil(n (1 - alpha)), the plain empirical quantile.
enum class QuantileMode { Corrected, Raw };

// Slack applied before ceil() so that products such as 100 * 0.93 that land a
// few ulps above an integer do not bump the rank.
inline constexpr double kRankSlack = 1e-9;

struct ConformalCalibration {
    double alpha = 0.1;
    double temperature = 0.01;
    double q_hat = 1.0;
    Index n_cal = 0;
};

struct PredictOptions {
    // Adds the argmax class to empty sets. Not part of LAC; off by default.
    bool force_nonempty = false;
};

void check_alpha(double alpha);
void check_temperature(double tau);

// 1-indexed rank of the order statistic; may exceed n in Corrected mode.
Index quantile_rank(Index n, double level, QuantileMode mode = QuantileMode::Corrected);

/// Row-wise softmax of logits / tau with max subtraction, evaluated in double.
template <typename Derived>
RowMatrix<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& logits, double tau) {
    check_temperature(tau);
    if (!logits.allFinite()) fail(ErrorKind::Numeric, "softmax input contains non-finite logits");
    RowMatrix<typename Derived::Scalar> out(logits.rows(), logits.cols());
    for (Index i = 0; i < logits.rows(); ++i) {
        const Eigen::RowVectorXd row = logits.row(i).template cast<double>();
        const Eigen::RowVectorXd e = ((row.array() - row.maxCoeff()) / tau).exp().matrix();
        out.row(i) = (e / e.sum()).template cast<typename Derived::Scalar>();
    }
    return out;
}

SoftLabelMatrix softmax_with_temperature(const Eigen::Ref<const LogitMatrix>& logits, double tau);

ScoreVector lac_scores(const SoftLabelMatrix& soft_labels, const LabelVector& truth);

double conformal_quantile(const ScoreVector& scores, double alpha, QuantileMode mode = QuantileMode::Corrected);

ConformalCalibration calibrate(const Eigen::Ref<const LogitMatrix>& logits_cal, const LabelVector& truth_cal, double alpha,
                               double tau, QuantileMode mode = QuantileMode::Corrected);

// Inclusion test for one class, written on the score scale so that a test
// sample identical to the sample defining q_hat is always included.
inline bool lac_includes(double probability, double q_hat) { return 1.0 - probability <= q_hat; }

template <typename Derived>
PredictionSet predict_set_from_probabilities(const Eigen::MatrixBase<Derived>& probabilities, double q_hat,
                                             PredictOptions options = {}) {
    PredictionSet set;
    for (Index k = 0; k < probabilities.size(); ++k) {
        if (lac_includes(static_cast<double>(probabilities(k)), q_hat)) set.push_back(static_cast<int>(k));
    }
    if (set.empty() && options.force_nonempty && probabilities.size() > 0) {
        Index best = 0;
        probabilities.maxCoeff(&best);
        set.push_back(static_cast<int>(best));
    }
    return set;
}

PredictionSet predict_set(const ConformalCalibration& calibration, const Eigen::Ref<const Eigen::RowVectorXf>& logit_row,
                          PredictOptions options = {});

std::vector<PredictionSet> batch_predict_sets(const ConformalCalibration& calibration,
                                              const Eigen::Ref<const LogitMatrix>& logits, PredictOptions options = {});

} // namespace cp4vlm
