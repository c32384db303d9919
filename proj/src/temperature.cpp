#include "cp4vlm/temperature.hpp"

#include <cmath>

namespace cp4vlm {

namespace {

constexpr double kGoldenTolerance = 1e-7; // bracket width in log(1/tau)
constexpr int kGoldenMaxIterations = 200;

double qhat_at(const Eigen::Ref<const LogitMatrix>& logits, const LabelVector& truth, double alpha, double inverse_temp,
               QuantileMode mode) {
    return calibrate(logits, truth, alpha, 1.0 / inverse_temp, mode).q_hat;
}

} // namespace

TemperatureGrid TemperatureGrid::make(double lo, double hi, int points, GridSpacing spacing) {
    if (!(lo > 0.0) || !(hi > lo) || !std::isfinite(hi))
        fail(ErrorKind::Config, "temperature grid needs 0 < LO < HI, got " + std::to_string(lo) + ":" + std::to_string(hi));
    if (points < 2) fail(ErrorKind::Config, "temperature grid needs at least 2 points");
    TemperatureGrid grid;
    grid.spacing = spacing;
    grid.inverse_temps.resize(static_cast<std::size_t>(points));
    const double steps = static_cast<double>(points - 1);
    for (int i = 0; i < points; ++i) {
        const double t = static_cast<double>(i) / steps;
        grid.inverse_temps[static_cast<std::size_t>(i)] =
            spacing == GridSpacing::Log ? std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo))) : lo + t * (hi - lo);
    }
    grid.inverse_temps.front() = lo;
    grid.inverse_temps.back() = hi;
    return grid;
}

void TemperatureGrid::validate() const {
    if (inverse_temps.empty()) fail(ErrorKind::Config, "temperature grid is empty");
    for (std::size_t i = 0; i < inverse_temps.size(); ++i) {
        if (!(inverse_temps[i] > 0.0) || !std::isfinite(inverse_temps[i]))
            fail(ErrorKind::Config, "temperature grid values must be positive and finite");
        if (i > 0 && !(inverse_temps[i] > inverse_temps[i - 1]))
            fail(ErrorKind::Config, "temperature grid must be strictly increasing");
    }
}

QhatCurve qhat_curve(const Eigen::Ref<const LogitMatrix>& logits_cal, const LabelVector& truth_cal, double alpha,
                     const TemperatureGrid& grid, QuantileMode mode) {
    grid.validate();
    QhatCurve curve;
    curve.reserve(grid.inverse_temps.size());
    for (double inv : grid.inverse_temps) curve.push_back({inv, qhat_at(logits_cal, truth_cal, alpha, inv, mode)});
    return curve;
}

TuningResult tune_temperature(const Eigen::Ref<const LogitMatrix>& logits_cal, const LabelVector& truth_cal, double alpha,
                              const TemperatureGrid& grid, bool refine, QuantileMode mode) {
    grid.validate();
    if (grid.inverse_temps.back() < 10.0 * grid.inverse_temps.front())
        fail(ErrorKind::Config, "temperature grid must span at least one decade of 1/tau");

    TuningResult result;
    result.curve = qhat_curve(logits_cal, truth_cal, alpha, grid, mode);

    std::size_t best = 0;
    for (std::size_t i = 1; i < result.curve.size(); ++i)
        if (result.curve[i].q_hat < result.curve[best].q_hat) best = i;

    double best_inv = result.curve[best].inverse_temp;
    double best_q = result.curve[best].q_hat;

    if (refine && result.curve.size() >= 2) {
        const std::size_t lo_idx = best == 0 ? 0 : best - 1;
        const std::size_t hi_idx = std::min(best + 1, result.curve.size() - 1);
        double a = std::log(result.curve[lo_idx].inverse_temp);
        double b = std::log(result.curve[hi_idx].inverse_temp);

        // Track the best probe; a non-unimodal bracket then degrades to the
        // grid minimum instead of a worse interior point. Equal values move
        // left, so a flat-bottomed minimum resolves to its smallest 1/tau.
        double probe_inv = best_inv;
        double probe_q = best_q;
        auto eval = [&](double x) {
            const double inv = std::exp(x);
            const double q = qhat_at(logits_cal, truth_cal, alpha, inv, mode);
            if (q < probe_q || (q == probe_q && inv < probe_inv)) {
                probe_q = q;
                probe_inv = inv;
            }
            return q;
        };

        const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
        double c = b - ratio * (b - a);
        double d = a + ratio * (b - a);
        double fc = eval(c);
        double fd = eval(d);
        for (int it = 0; it < kGoldenMaxIterations && (b - a) > kGoldenTolerance; ++it) {
            if (fc <= fd) {
                b = d;
                d = c;
                fd = fc;
                c = b - ratio * (b - a);
                fc = eval(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + ratio * (b - a);
                fd = eval(d);
            }
        }

        if (probe_q < best_q || (probe_q == best_q && probe_inv < best_inv)) {
            best_q = probe_q;
            best_inv = probe_inv;
            result.refined = true;
        }
    }

    result.tau_star = 1.0 / best_inv;
    result.q_hat_star = best_q;
    return result;
}

} // namespace cp4vlm
