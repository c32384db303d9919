#include "cp4vlm/harness.hpp"

#include "cp4vlm/error.hpp"
#include "cp4vlm/report.hpp"
#include "cp4vlm/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

namespace cp4vlm {

namespace {

constexpr std::uint64_t kSplitStream = 0x73706c6974ULL; // "split"
constexpr std::uint64_t kTuneStream = 0x74756e65ULL;    // "tune"

// Runs fn(i) for i in [0, n) on up to `jobs` threads. If any call throws, the
// exception of the lowest failing index is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const unsigned threads = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(threads);
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

LabelVector gather(const LabelVector& truth, const std::vector<Index>& indices) {
    LabelVector out;
    out.reserve(indices.size());
    for (Index i : indices) out.push_back(truth[static_cast<std::size_t>(i)]);
    return out;
}

Index argmax_first(const Eigen::Ref<const Eigen::RowVectorXf>& row) {
    Index best = 0;
    for (Index k = 1; k < row.size(); ++k)
        if (row(k) > row(best)) best = k;
    return best;
}

// Fills every test-time metric of `report` from logits of the test rows.
void evaluate_test_rows(FoldReport& report, const ConformalCalibration& calibration, const LogitMatrix& logits_test,
                        const LabelVector& truth_test, const EvalOptions& options) {
    const Index n = logits_test.rows();
    const int K = static_cast<int>(logits_test.cols());
    report.tau_used = calibration.temperature;
    report.q_hat = calibration.q_hat;
    report.n_cal = calibration.n_cal;
    report.n_test = n;
    if (n == 0) fail(ErrorKind::Numeric, "evaluation needs at least one test sample");

    const RowMatrixXf probs = softmax_rows(logits_test, calibration.temperature);
    std::vector<int> sizes;
    sizes.reserve(static_cast<std::size_t>(n));
    Index covered = 0;
    Index empty = 0;
    Index correct = 0;
    Index total_size = 0;
    for (Index i = 0; i < n; ++i) {
        const PredictionSet set = predict_set_from_probabilities(probs.row(i), calibration.q_hat, options.predict);
        const int truth_k = truth_test[static_cast<std::size_t>(i)];
        if (std::binary_search(set.begin(), set.end(), truth_k)) ++covered;
        if (set.empty()) ++empty;
        if (argmax_first(logits_test.row(i)) == truth_k) ++correct;
        const int size = static_cast<int>(set.size());
        sizes.push_back(size);
        total_size += size;
        ++report.size_histogram[size];
    }
    const auto dn = static_cast<double>(n);
    report.coverage = static_cast<double>(covered) / dn;
    report.empty_rate = static_cast<double>(empty) / dn;
    report.top1_accuracy = static_cast<double>(correct) / dn;
    report.mean_size = static_cast<double>(total_size) / dn;
    for (double level : kSizeLevels) report.size_quantiles[level] = size_quantile(sizes, level, K, options.quantile_mode);
}

double histogram_quantile(const std::map<int, Index>& histogram, double level, int max_size, QuantileMode mode) {
    Index total = 0;
    for (const auto& [size, count] : histogram) total += count;
    if (total == 0) fail(ErrorKind::Numeric, "cannot take a quantile of an empty histogram");
    const Index rank = quantile_rank(total, level, mode);
    if (rank > total) return static_cast<double>(max_size);
    Index seen = 0;
    for (const auto& [size, count] : histogram) {
        seen += count;
        if (seen >= rank) return static_cast<double>(size);
    }
    return static_cast<double>(max_size);
}

} // namespace

std::string TauMode::label() const {
    if (kind == Kind::Fixed) return "fixed:" + format_number(tau);
    if (tune_split > 0.0) return "tuned-split:" + format_number(tune_split);
    return "tuned";
}

Split kshot_split(const LabelVector& truth, int num_classes, const SplitSpec& spec) {
    if (spec.shots_per_class < 1) fail(ErrorKind::Config, "shots_per_class must be positive");
    if (num_classes < 2) fail(ErrorKind::Config, "need at least 2 classes to split");
    Pcg32 rng(spec.seed, kSplitStream);
    Split split;

    if (spec.mode == SplitMode::PerClass) {
        std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(num_classes));
        for (std::size_t i = 0; i < truth.size(); ++i) {
            const int k = truth[i];
            if (k < 0 || k >= num_classes) fail(ErrorKind::Numeric, "label " + std::to_string(k) + " out of range in split");
            by_class[static_cast<std::size_t>(k)].push_back(static_cast<Index>(i));
        }
        for (int k = 0; k < num_classes; ++k) {
            auto& members = by_class[static_cast<std::size_t>(k)];
            if (static_cast<int>(members.size()) < spec.shots_per_class + 1) {
                fail(ErrorKind::Numeric, "class " + std::to_string(k) + " has " + std::to_string(members.size()) +
                                             " samples; a " + std::to_string(spec.shots_per_class) +
                                             "-shot split needs at least " + std::to_string(spec.shots_per_class + 1));
            }
            rng.shuffle(members);
            split.cal.insert(split.cal.end(), members.begin(), members.begin() + spec.shots_per_class);
            split.test.insert(split.test.end(), members.begin() + spec.shots_per_class, members.end());
        }
    } else {
        const auto cal_count = static_cast<std::size_t>(spec.shots_per_class) * static_cast<std::size_t>(num_classes);
        if (truth.size() <= cal_count) {
            fail(ErrorKind::Numeric, "global split needs more than " + std::to_string(cal_count) + " samples, got " +
                                         std::to_string(truth.size()));
        }
        std::vector<Index> all(truth.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<Index>(i);
        rng.shuffle(all);
        split.cal.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(cal_count));
        split.test.assign(all.begin() + static_cast<std::ptrdiff_t>(cal_count), all.end());
    }
    std::sort(split.cal.begin(), split.cal.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

Split fraction_split(Index n, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) fail(ErrorKind::Config, "tune split fraction must lie in (0, 1)");
    if (n < 2) fail(ErrorKind::Numeric, "tune split needs at least 2 calibration samples");
    const auto wanted = static_cast<Index>(std::llround(fraction * static_cast<double>(n)));
    const Index first = std::clamp<Index>(wanted, 1, n - 1);
    std::vector<Index> order(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Pcg32 rng(seed, kTuneStream);
    rng.shuffle(order);
    Split split;
    split.cal.assign(order.begin(), order.begin() + first);
    split.test.assign(order.begin() + first, order.end());
    std::sort(split.cal.begin(), split.cal.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

double size_quantile(std::vector<int> sizes, double level, int max_size, QuantileMode mode) {
    const auto n = static_cast<Index>(sizes.size());
    if (n == 0) fail(ErrorKind::Numeric, "cannot take a quantile of zero set sizes");
    const Index rank = quantile_rank(n, level, mode);
    if (rank > n) return static_cast<double>(max_size);
    const auto nth = sizes.begin() + (rank - 1);
    std::nth_element(sizes.begin(), nth, sizes.end());
    return static_cast<double>(*nth);
}

FoldReport run_fold(const LogitMatrix& logits, const LabelVector& truth, const SplitSpec& split_spec, double alpha,
                    const TauMode& tau_mode, const EvalOptions& options) {
    check_alpha(alpha);
    if (static_cast<Index>(truth.size()) != logits.rows()) {
        fail(ErrorKind::Numeric, "label count " + std::to_string(truth.size()) + " does not match " +
                                     std::to_string(logits.rows()) + " logit rows");
    }
    const int K = static_cast<int>(logits.cols());
    const Split split = kshot_split(truth, K, split_spec);

    const LogitMatrix logits_cal = logits(split.cal, Eigen::all);
    const LabelVector truth_cal = gather(truth, split.cal);

    ConformalCalibration calibration;
    if (tau_mode.kind == TauMode::Kind::Fixed) {
        calibration = calibrate(logits_cal, truth_cal, alpha, tau_mode.tau, options.quantile_mode);
    } else if (tau_mode.tune_split > 0.0) {
        const Split parts = fraction_split(static_cast<Index>(split.cal.size()), tau_mode.tune_split, split_spec.seed);
        const std::vector<Index>& tune_rows = parts.cal;
        const std::vector<Index>& cal_rows = parts.test;
        const TuningResult tuned = tune_temperature(logits_cal(tune_rows, Eigen::all), gather(truth_cal, tune_rows), alpha,
                                                    tau_mode.grid, tau_mode.refine, options.quantile_mode);
        calibration = calibrate(logits_cal(cal_rows, Eigen::all), gather(truth_cal, cal_rows), alpha, tuned.tau_star,
                                options.quantile_mode);
    } else {
        const TuningResult tuned =
            tune_temperature(logits_cal, truth_cal, alpha, tau_mode.grid, tau_mode.refine, options.quantile_mode);
        calibration = calibrate(logits_cal, truth_cal, alpha, tuned.tau_star, options.quantile_mode);
    }

    FoldReport report;
    report.seed = split_spec.seed;
    report.alpha = alpha;
    report.mode = tau_mode.label();
    const LogitMatrix logits_test = logits(split.test, Eigen::all);
    evaluate_test_rows(report, calibration, logits_test, gather(truth, split.test), options);
    return report;
}

FoldReport evaluate_calibration(const ConformalCalibration& calibration, const LogitMatrix& logits,
                                const LabelVector& truth, const EvalOptions& options) {
    if (static_cast<Index>(truth.size()) != logits.rows())
        fail(ErrorKind::Numeric, "label count does not match logit rows");
    FoldReport report;
    report.alpha = calibration.alpha;
    report.mode = "calibration";
    evaluate_test_rows(report, calibration, logits, truth, options);
    return report;
}

const std::vector<std::string>& aggregate_metric_names() {
    static const std::vector<std::string> names = {"inv_temp", "q_hat",     "coverage",   "mean_size",
                                                   "q90",      "q95",       "q975",       "empty_rate",
                                                   "accuracy"};
    return names;
}

double metric_value(const FoldReport& fold, const std::string& metric) {
    if (metric == "inv_temp") return 1.0 / fold.tau_used;
    if (metric == "q_hat") return fold.q_hat;
    if (metric == "coverage") return fold.coverage;
    if (metric == "mean_size") return fold.mean_size;
    if (metric == "q90") return fold.size_quantiles.at(0.9);
    if (metric == "q95") return fold.size_quantiles.at(0.95);
    if (metric == "q975") return fold.size_quantiles.at(0.975);
    if (metric == "empty_rate") return fold.empty_rate;
    if (metric == "accuracy") return fold.top1_accuracy;
    fail(ErrorKind::Internal, "unknown metric '" + metric + "'");
}

AggregateReport aggregate_folds(const std::vector<FoldReport>& folds, int num_classes, const EvalOptions& options) {
    if (folds.empty()) fail(ErrorKind::Internal, "cannot aggregate zero folds");
    AggregateReport agg;
    agg.alpha = folds.front().alpha;
    agg.mode = folds.front().mode;
    agg.folds = static_cast<Index>(folds.size());
    const auto count = static_cast<double>(folds.size());

    for (const std::string& name : aggregate_metric_names()) {
        double sum = 0.0;
        for (const auto& f : folds) sum += metric_value(f, name);
        const double mean = sum / count;
        double sq = 0.0;
        for (const auto& f : folds) sq += (metric_value(f, name) - mean) * (metric_value(f, name) - mean);
        agg.metrics[name] = {mean, folds.size() > 1 ? std::sqrt(sq / (count - 1.0)) : 0.0};
    }
    for (const auto& f : folds)
        for (const auto& [size, n] : f.size_histogram) agg.size_histogram[size] += n;

    for (double level : kSizeLevels) {
        if (options.pooled_quantiles) {
            agg.size_quantiles[level] = histogram_quantile(agg.size_histogram, level, num_classes, options.quantile_mode);
        } else {
            double sum = 0.0;
            for (const auto& f : folds) sum += f.size_quantiles.at(level);
            agg.size_quantiles[level] = sum / count;
        }
    }
    return agg;
}

double tail_gain(const AggregateReport& baseline, const AggregateReport& tuned, double level) {
    const auto b = baseline.size_quantiles.find(level);
    const auto t = tuned.size_quantiles.find(level);
    if (b == baseline.size_quantiles.end() || t == tuned.size_quantiles.end())
        fail(ErrorKind::Numeric, "size quantile at level " + format_number(level) + " was not computed");
    return b->second - t->second;
}

SweepReport run_sweep(const LogitMatrix& logits, const LabelVector& truth, const std::vector<std::uint64_t>& seeds,
                      const std::vector<double>& alphas, const std::vector<TauMode>& modes, int shots_per_class,
                      SplitMode split_mode, const EvalOptions& options, unsigned jobs) {
    if (seeds.empty() || alphas.empty() || modes.empty())
        fail(ErrorKind::Config, "sweep needs at least one seed, one alpha and one tau mode");

    struct Task {
        std::uint64_t seed;
        std::size_t alpha_idx;
        std::size_t mode_idx;
    };
    std::vector<Task> tasks;
    for (auto seed : seeds)
        for (std::size_t a = 0; a < alphas.size(); ++a)
            for (std::size_t m = 0; m < modes.size(); ++m) tasks.push_back({seed, a, m});

    SweepReport report;
    report.folds.resize(tasks.size());
    parallel_for(tasks.size(), jobs, [&](std::size_t i) {
        const Task& t = tasks[i];
        const double alpha = alphas[t.alpha_idx];
        const TauMode& mode = modes[t.mode_idx];
        try {
            report.folds[i] = run_fold(logits, truth, {shots_per_class, t.seed, split_mode}, alpha, mode, options);
        } catch (const Error& e) {
            throw Error(e.kind(), "fold seed=" + std::to_string(t.seed) + " alpha=" + format_number(alpha) +
                                      " mode=" + mode.label() + ": " + e.what());
        }
    });

    const int K = static_cast<int>(logits.cols());
    for (std::size_t a = 0; a < alphas.size(); ++a) {
        std::vector<AggregateReport> per_mode;
        for (std::size_t m = 0; m < modes.size(); ++m) {
            std::vector<FoldReport> group;
            for (std::size_t i = 0; i < tasks.size(); ++i)
                if (tasks[i].alpha_idx == a && tasks[i].mode_idx == m) group.push_back(report.folds[i]);
            per_mode.push_back(aggregate_folds(group, K, options));
            report.aggregates.push_back(per_mode.back());
        }

        const auto baseline = std::find_if(modes.begin(), modes.end(), [](const TauMode& m) {
            return m.kind == TauMode::Kind::Fixed && m.tau == kBaselineTau;
        });
        if (baseline == modes.end()) continue;
        const AggregateReport& base = per_mode[static_cast<std::size_t>(baseline - modes.begin())];
        for (std::size_t m = 0; m < modes.size(); ++m) {
            if (modes[m].kind != TauMode::Kind::Tuned) continue;
            const AggregateReport& tuned = per_mode[m];
            BaselineComparison cmp;
            cmp.alpha = alphas[a];
            cmp.baseline_mode = base.mode;
            cmp.tuned_mode = tuned.mode;
            for (const std::string& name : aggregate_metric_names()) {
                const double b = base.metrics.at(name).mean;
                const double t = tuned.metrics.at(name).mean;
                cmp.metrics[name] = {b, t, t - b};
            }
            for (double level : kSizeLevels) cmp.tail_gain[level] = tail_gain(base, tuned, level);
            report.baseline_comparison.push_back(std::move(cmp));
        }
    }
    return report;
}

} // namespace cp4vlm
