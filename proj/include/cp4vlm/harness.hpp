#pragma once

#include "cp4vlm/conformal.hpp"
#include "cp4vlm/temperature.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cp4vlm {

// Tail levels reported for set-size distributions.
inline constexpr std::array<double, 3> kSizeLevels = {0.9, 0.95, 0.975};
inline constexpr double kBaselineTau = 0.01;

enum class SplitMode {
    PerClass, // shots_per_class samples of every class go to calibration
    Global,   // shots_per_class * K samples drawn uniformly regardless of class
};

struct SplitSpec {
    int shots_per_class = 10;
    std::uint64_t seed = 0;
    SplitMode mode = SplitMode::PerClass;
};

struct Split {
    std::vector<Index> cal;  // ascending
    std::vector<Index> test; // ascending
};

Split kshot_split(const LabelVector& truth, int num_classes, const SplitSpec& spec);

// Uniform partition of rows [0, n): round(fraction * n) rows (at least one,
// at most n - 1) land in `cal`, the rest in `test`. Used for --tune-split.
Split fraction_split(Index n, double fraction, std::uint64_t seed);

struct TauMode {
    enum class Kind { Fixed, Tuned };

    Kind kind = Kind::Fixed;
    double tau = kBaselineTau;
    TemperatureGrid grid = TemperatureGrid::default_grid();
    bool refine = true;
    // In (0, 1): tune on this fraction of the calibration rows and calibrate
    // on the rest. 0 tunes and calibrates on the same rows.
    double tune_split = 0.0;

    static TauMode fixed(double tau) { return {Kind::Fixed, tau}; }
    static TauMode tuned(TemperatureGrid grid = TemperatureGrid::default_grid(), bool refine = true) {
        return {Kind::Tuned, kBaselineTau, std::move(grid), refine};
    }

    std::string label() const;
};

struct EvalOptions {
    QuantileMode quantile_mode = QuantileMode::Corrected;
    PredictOptions predict;
    // Aggregate size quantiles from the pooled histogram instead of averaging
    // per-fold quantiles.
    bool pooled_quantiles = false;
};

struct FoldReport {
    std::uint64_t seed = 0;
    double alpha = 0.0;
    std::string mode;
    double tau_used = 0.0;
    double q_hat = 0.0;
    Index n_cal = 0;
    Index n_test = 0;
    double coverage = 0.0;
    double mean_size = 0.0;
    std::map<double, double> size_quantiles;
    double empty_rate = 0.0;
    double top1_accuracy = 0.0;
    std::map<int, Index> size_histogram;
};

// Order statistic of set sizes using the same rank rule as
// conformal_quantile; a rank past the end yields `max_size`.
double size_quantile(std::vector<int> sizes, double level, int max_size, QuantileMode mode = QuantileMode::Corrected);

FoldReport run_fold(const LogitMatrix& logits, const LabelVector& truth, const SplitSpec& split, double alpha,
                    const TauMode& tau_mode, const EvalOptions& options = {});

// Test-time evaluation of an existing calibration on every row.
FoldReport evaluate_calibration(const ConformalCalibration& calibration, const LogitMatrix& logits,
                                const LabelVector& truth, const EvalOptions& options = {});

struct MetricSummary {
    double mean = 0.0;
    double std = 0.0; // sample standard deviation, 0 for a single fold
};

// Names of the scalar FoldReport metrics that are aggregated, in report order.
const std::vector<std::string>& aggregate_metric_names();
double metric_value(const FoldReport& fold, const std::string& metric);

struct AggregateReport {
    double alpha = 0.0;
    std::string mode;
    Index folds = 0;
    std::map<std::string, MetricSummary> metrics;
    std::map<double, double> size_quantiles; // per-fold mean, or pooled
    std::map<int, Index> size_histogram;     // summed over folds
};

struct BaselineComparison {
    double alpha = 0.0;
    std::string baseline_mode;
    std::string tuned_mode;
    // metric -> {baseline, tuned, tuned - baseline}
    std::map<std::string, std::array<double, 3>> metrics;
    std::map<double, double> tail_gain;
};

struct SweepReport {
    std::vector<FoldReport> folds; // (seed, alpha, mode) order
    std::vector<AggregateReport> aggregates; // (alpha, mode) order
    std::vector<BaselineComparison> baseline_comparison;
};

// Decrease of the level-quantile of set sizes from baseline to tuned.
double tail_gain(const AggregateReport& baseline, const AggregateReport& tuned, double level);

AggregateReport aggregate_folds(const std::vector<FoldReport>& folds, int num_classes, const EvalOptions& options = {});

// Folds run on up to `jobs` threads; the report is identical for any value.
SweepReport run_sweep(const LogitMatrix& logits, const LabelVector& truth, const std::vector<std::uint64_t>& seeds,
                      const std::vector<double>& alphas, const std::vector<TauMode>& modes, int shots_per_class = 10,
                      SplitMode split_mode = SplitMode::PerClass, const EvalOptions& options = {}, unsigned jobs = 1);

} // namespace cp4vlm
