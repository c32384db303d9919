#pragma once

#include "cp4vlm/conformal.hpp"

#include <string>
#include <vector>

namespace cp4vlm {

enum class GridSpacing { Log, Linear };

// Candidate inverse temperatures 1/tau, strictly increasing and positive.
struct TemperatureGrid {
    std::vector<double> inverse_temps;
    GridSpacing spacing = GridSpacing::Log;

    // Endpoints are reproduced exactly; interior points are spaced evenly in
    // log(1/tau) or 1/tau.
    static TemperatureGrid make(double lo, double hi, int points, GridSpacing spacing = GridSpacing::Log);
    // 201 log-spaced points over 1/tau in [1, 1000].
    static TemperatureGrid default_grid() { return make(1.0, 1000.0, 201); }

    void validate() const;
};

struct QhatPoint {
    double inverse_temp;
    double q_hat;
};

using QhatCurve = std::vector<QhatPoint>;

struct TuningResult {
    double tau_star = 0.01;
    double q_hat_star = 1.0;
    QhatCurve curve;
    bool refined = false; // true when golden-section search improved on the grid
};

QhatCurve qhat_curve(const Eigen::Ref<const LogitMatrix>& logits_cal, const LabelVector& truth_cal, double alpha,
                     const TemperatureGrid& grid, QuantileMode mode = QuantileMode::Corrected);

/// Picks tau* = argmin q_hat(tau) on calibration data only.
///
/// The grid minimum wins ties toward the smallest 1/tau. With `refine`, a
/// golden-section search on log(1/tau) runs inside the bracket formed by the
/// grid neighbours of that minimum; the refined point is kept only when its
/// q_hat is lower, or equal at a smaller 1/tau. The result is never worse than
/// the grid and a flat curve always returns the first grid point.
TuningResult tune_temperature(const Eigen::Ref<const LogitMatrix>& logits_cal, const LabelVector& truth_cal, double alpha,
                              const TemperatureGrid& grid, bool refine = true,
                              QuantileMode mode = QuantileMode::Corrected);

} // namespace cp4vlm
