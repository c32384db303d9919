#include "cp4vlm/conformal.hpp"

#include <algorithm>

namespace cp4vlm {

void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorKind::Numeric, "alpha must lie in (0, 1), got " + std::to_string(alpha));
}

void check_temperature(double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau))
        fail(ErrorKind::Numeric, "temperature must be positive and finite, got " + std::to_string(tau));
}

Index quantile_rank(Index n, double level, QuantileMode mode) {
    const double count = mode == QuantileMode::Corrected ? static_cast<double>(n + 1) : static_cast<double>(n);
    const auto rank = static_cast<Index>(std::ceil(count * level - kRankSlack));
    return std::max<Index>(rank, 1);
}

SoftLabelMatrix softmax_with_temperature(const Eigen::Ref<const LogitMatrix>& logits, double tau) {
    return {softmax_rows(logits, tau), tau};
}

ScoreVector lac_scores(const SoftLabelMatrix& soft_labels, const LabelVector& truth) {
    if (static_cast<Index>(truth.size()) != soft_labels.values.rows()) {
        fail(ErrorKind::Numeric, "label count " + std::to_string(truth.size()) + " does not match " +
                                     std::to_string(soft_labels.values.rows()) + " soft-label rows");
    }
    ScoreVector scores(soft_labels.values.rows());
    for (Index i = 0; i < scores.size(); ++i) {
        const int k = truth[static_cast<std::size_t>(i)];
        if (k < 0 || k >= soft_labels.values.cols())
            fail(ErrorKind::Numeric, "label " + std::to_string(k) + " of sample " + std::to_string(i) + " is out of range");
        scores(i) = 1.0 - static_cast<double>(soft_labels.values(i, k));
    }
    return scores;
}

double conformal_quantile(const ScoreVector& scores, double alpha, QuantileMode mode) {
    check_alpha(alpha);
    const Index n = scores.size();
    if (n < 1) fail(ErrorKind::Numeric, "conformal_quantile needs at least one score");
    const Index rank = quantile_rank(n, 1.0 - alpha, mode);
    if (rank > n) return 1.0;
    std::vector<double> sorted(scores.data(), scores.data() + n);
    const auto nth = sorted.begin() + (rank - 1);
    std::nth_element(sorted.begin(), nth, sorted.end());
    return *nth;
}

ConformalCalibration calibrate(const Eigen::Ref<const LogitMatrix>& logits_cal, const LabelVector& truth_cal, double alpha,
                               double tau, QuantileMode mode) {
    check_alpha(alpha);
    if (logits_cal.rows() < 1) fail(ErrorKind::Numeric, "calibration needs at least one sample");
    const SoftLabelMatrix soft = softmax_with_temperature(logits_cal, tau);
    const ScoreVector scores = lac_scores(soft, truth_cal);
    return {alpha, tau, conformal_quantile(scores, alpha, mode), logits_cal.rows()};
}

PredictionSet predict_set(const ConformalCalibration& calibration, const Eigen::Ref<const Eigen::RowVectorXf>& logit_row,
                          PredictOptions options) {
    const RowMatrixXf probs = softmax_rows(logit_row, calibration.temperature);
    return predict_set_from_probabilities(probs.row(0), calibration.q_hat, options);
}

std::vector<PredictionSet> batch_predict_sets(const ConformalCalibration& calibration,
                                              const Eigen::Ref<const LogitMatrix>& logits, PredictOptions options) {
    std::vector<PredictionSet> sets;
    sets.reserve(static_cast<std::size_t>(logits.rows()));
    if (logits.rows() == 0) return sets;
    const RowMatrixXf probs = softmax_rows(logits, calibration.temperature);
    for (Index i = 0; i < probs.rows(); ++i) sets.push_back(predict_set_from_probabilities(probs.row(i), calibration.q_hat, options));
    return sets;
}

} // namespace cp4vlm
