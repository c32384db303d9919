#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cp4vlm/embed_ops.hpp"
#include "cp4vlm/harness.hpp"
#include "cp4vlm/report.hpp"
#include "cp4vlm/synthetic.hpp"

#include <algorithm>
#include <set>

using namespace cp4vlm;

namespace {

struct Data {
    LogitMatrix logits;
    LabelVector truth;
    int classes;
};

Data synthetic(std::uint64_t seed, int classes = 12, int per_class = 20, double noise = 1.0, double conf = 0.5) {
    SyntheticSpec spec;
    spec.n_classes = classes;
    spec.dim = 32;
    spec.samples_per_class = per_class;
    spec.noise_scale = noise;
    spec.confusability = conf;
    spec.cluster_spread = 1.0;
    spec.seed = seed;
    const SyntheticData d = generate(spec);
    return {cosine_logits(d.visual, d.textual), d.truth, classes};
}

std::string dump(const SweepReport& r) { return to_json(r).dump() + folds_csv(r.folds); }

} // namespace

TEST_CASE("per-class split takes k of every class") {
    const Data d = synthetic(1, 5, 13);
    const Split s = kshot_split(d.truth, 5, {10, 7});
    CHECK(s.cal.size() == 50);
    CHECK(s.test.size() == 15);
    CHECK(std::is_sorted(s.cal.begin(), s.cal.end()));
    CHECK(std::is_sorted(s.test.begin(), s.test.end()));
    std::vector<int> per_class(5, 0);
    for (Index i : s.cal) ++per_class[static_cast<std::size_t>(d.truth[static_cast<std::size_t>(i)])];
    for (int c : per_class) CHECK(c == 10);
    std::set<Index> all(s.cal.begin(), s.cal.end());
    all.insert(s.test.begin(), s.test.end());
    CHECK(all.size() == 65);

    const Split again = kshot_split(d.truth, 5, {10, 7});
    CHECK(again.cal == s.cal);
    CHECK(kshot_split(d.truth, 5, {10, 8}).cal != s.cal);
}

TEST_CASE("global split draws k times K samples") {
    const Data d = synthetic(2, 5, 13);
    const Split s = kshot_split(d.truth, 5, {4, 3, SplitMode::Global});
    CHECK(s.cal.size() == 20);
    CHECK(s.test.size() == 45);
    CHECK(kshot_split(d.truth, 5, {4, 3, SplitMode::Global}).cal == s.cal);
    CHECK_THROWS_AS(kshot_split(d.truth, 5, {13, 3, SplitMode::Global}), Error);
}

TEST_CASE("under-populated class is named") {
    LabelVector truth;
    for (int k = 0; k < 3; ++k)
        for (int i = 0; i < (k == 1 ? 10 : 11); ++i) truth.push_back(k);
    try {
        kshot_split(truth, 3, {10, 0});
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("class 1") != std::string::npos);
    }
    CHECK_THROWS_AS(kshot_split(truth, 3, {0, 0}), Error);
}

TEST_CASE("separable data gives full coverage with singleton sets") {
    const Data d = synthetic(3, 10, 20, 0.0, 0.0);
    for (double alpha : {0.05, 0.1}) {
        const FoldReport f = run_fold(d.logits, d.truth, {10, 1}, alpha, TauMode::fixed(kBaselineTau));
        CHECK(f.coverage >= 1.0 - alpha);
        CHECK(f.mean_size == doctest::Approx(1.0).epsilon(0.05));
        CHECK(f.top1_accuracy == 1.0);
        CHECK(f.n_cal == 100);
        CHECK(f.n_test == 100);
    }
}

TEST_CASE("calibration set too small for alpha yields full sets") {
    const Data d = synthetic(4, 3, 20);
    const FoldReport f = run_fold(d.logits, d.truth, {10, 0}, 0.01, TauMode::fixed(kBaselineTau));
    CHECK(f.q_hat == 1.0);
    CHECK(f.coverage == 1.0);
    CHECK(f.mean_size == 3.0);
    for (double level : kSizeLevels) CHECK(f.size_quantiles.at(level) == 3.0);
    CHECK(f.size_histogram.size() == 1);
    CHECK(f.size_histogram.at(3) == 30);
}

TEST_CASE("fold metrics are consistent with their histogram") {
    const Data d = synthetic(5, 12, 25, 2.0, 0.8);
    const FoldReport f = run_fold(d.logits, d.truth, {10, 2}, 0.1, TauMode::tuned());
    Index total = 0;
    double size_sum = 0.0;
    for (const auto& [size, count] : f.size_histogram) {
        total += count;
        size_sum += static_cast<double>(size) * static_cast<double>(count);
    }
    CHECK(total == f.n_test);
    CHECK(size_sum / static_cast<double>(total) == doctest::Approx(f.mean_size));
    const double empty = f.size_histogram.count(0) ? static_cast<double>(f.size_histogram.at(0)) : 0.0;
    CHECK(empty / static_cast<double>(total) == doctest::Approx(f.empty_rate));
    CHECK(f.size_quantiles.at(0.9) <= f.size_quantiles.at(0.95));
    CHECK(f.size_quantiles.at(0.95) <= f.size_quantiles.at(0.975));
    CHECK(f.mode == "tuned");

    EvalOptions force;
    force.predict.force_nonempty = true;
    const FoldReport g = run_fold(d.logits, d.truth, {10, 2}, 0.1, TauMode::tuned(), force);
    CHECK(g.empty_rate == 0.0);
    CHECK(g.coverage >= f.coverage);
}

TEST_CASE("size quantile rule") {
    CHECK(size_quantile({1, 1, 2, 5}, 0.5, 9) == 2.0); // rank ceil(2.5) = 3
    CHECK(size_quantile({1, 1, 2, 5}, 0.9, 9) == 9.0); // rank 5 > 4
    CHECK(size_quantile({1, 1, 2, 5}, 0.9, 9, QuantileMode::Raw) == 5.0);
    CHECK_THROWS_AS(size_quantile({}, 0.9, 9), Error);
}

TEST_CASE("larger alpha gives nested, smaller sets") {
    const Data d = synthetic(6, 12, 25, 2.0, 0.8);
    double previous_size = 1e9, previous_q = 2.0;
    for (double alpha : {0.01, 0.05, 0.1, 0.2, 0.4}) {
        const FoldReport f = run_fold(d.logits, d.truth, {10, 0}, alpha, TauMode::fixed(0.05));
        CHECK(f.q_hat <= previous_q);
        CHECK(f.mean_size <= previous_size);
        previous_q = f.q_hat;
        previous_size = f.mean_size;
    }
}

TEST_CASE("sweep aggregates match a hand computation") {
    const Data d = synthetic(7, 8, 20, 1.5, 0.6);
    const std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    const SweepReport r = run_sweep(d.logits, d.truth, seeds, {0.1}, {TauMode::fixed(kBaselineTau)}, 10);
    REQUIRE(r.folds.size() == 5);
    REQUIRE(r.aggregates.size() == 1);
    CHECK(r.baseline_comparison.empty());

    std::vector<double> cov;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        const FoldReport f = run_fold(d.logits, d.truth, {10, seeds[i]}, 0.1, TauMode::fixed(kBaselineTau));
        CHECK(to_json(f).dump() == to_json(r.folds[i]).dump());
        cov.push_back(f.coverage);
    }
    double mean = 0.0;
    for (double c : cov) mean += c;
    mean /= 5.0;
    double var = 0.0;
    for (double c : cov) var += (c - mean) * (c - mean);
    const double sd = std::sqrt(var / 4.0);
    CHECK(r.aggregates[0].metrics.at("coverage").mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(r.aggregates[0].metrics.at("coverage").std == doctest::Approx(sd).epsilon(1e-12));
    double q90 = 0.0;
    for (const auto& f : r.folds) q90 += f.size_quantiles.at(0.9);
    CHECK(r.aggregates[0].size_quantiles.at(0.9) == doctest::Approx(q90 / 5.0));

    const SweepReport single = run_sweep(d.logits, d.truth, {3}, {0.1}, {TauMode::fixed(kBaselineTau)});
    CHECK(single.aggregates[0].metrics.at("coverage").std == 0.0);
}

TEST_CASE("sweep is identical for any job count and orders folds by seed, alpha, mode") {
    const Data d = synthetic(8, 10, 20, 2.0, 0.8);
    const std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5};
    const std::vector<double> alphas = {0.05, 0.1};
    const std::vector<TauMode> modes = {TauMode::fixed(kBaselineTau), TauMode::tuned()};
    const SweepReport one = run_sweep(d.logits, d.truth, seeds, alphas, modes, 10, SplitMode::PerClass, {}, 1);
    const SweepReport four = run_sweep(d.logits, d.truth, seeds, alphas, modes, 10, SplitMode::PerClass, {}, 4);
    CHECK(dump(one) == dump(four));
    REQUIRE(one.folds.size() == 24);
    CHECK(one.folds[0].seed == 0);
    CHECK(one.folds[1].mode == "tuned");
    CHECK(one.folds[2].alpha == 0.1);
    CHECK(one.folds[4].seed == 1);
    REQUIRE(one.baseline_comparison.size() == 2);
    const auto& cmp = one.baseline_comparison[0];
    CHECK(cmp.baseline_mode == "fixed:0.01");
    CHECK(cmp.tuned_mode == "tuned");
    CHECK(cmp.tail_gain.at(0.9) == doctest::Approx(tail_gain(one.aggregates[0], one.aggregates[1], 0.9)));
    const auto& q = cmp.metrics.at("q_hat");
    CHECK(q[2] == doctest::Approx(q[1] - q[0]));
}

TEST_CASE("sweep errors carry fold context") {
    const Data d = synthetic(9, 5, 12);
    try {
        run_sweep(d.logits, d.truth, {0}, {0.1}, {TauMode::fixed(kBaselineTau)}, 12);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("fold seed=0 alpha=0.1 mode=fixed:0.01") != std::string::npos);
    }
    CHECK_THROWS_AS(run_sweep(d.logits, d.truth, {}, {0.1}, {TauMode::tuned()}), Error);
}

TEST_CASE("tail gain") {
    AggregateReport base, tuned;
    base.size_quantiles[0.975] = 120.0;
    tuned.size_quantiles[0.975] = 43.0;
    CHECK(tail_gain(base, tuned, 0.975) == 77.0);
    CHECK(tail_gain(tuned, base, 0.975) == -77.0);
    tuned.size_quantiles[0.975] = 120.0;
    CHECK(tail_gain(base, tuned, 0.975) == 0.0);
    CHECK_THROWS_AS(tail_gain(base, tuned, 0.9), Error);
}

TEST_CASE("pooled size quantiles come from the summed histogram") {
    const Data d = synthetic(10, 10, 20, 2.0, 0.8);
    EvalOptions pooled;
    pooled.pooled_quantiles = true;
    const SweepReport r = run_sweep(d.logits, d.truth, {0, 1, 2}, {0.1}, {TauMode::fixed(kBaselineTau)}, 10,
                                    SplitMode::PerClass, pooled);
    std::vector<int> sizes;
    for (const auto& [size, count] : r.aggregates[0].size_histogram)
        for (Index i = 0; i < count; ++i) sizes.push_back(size);
    CHECK(sizes.size() == 300);
    for (double level : kSizeLevels) CHECK(r.aggregates[0].size_quantiles.at(level) == size_quantile(sizes, level, 10));
}

TEST_CASE("tune split holds out part of the calibration rows") {
    const Data d = synthetic(11, 10, 30, 2.0, 0.8);
    TauMode mode = TauMode::tuned();
    mode.tune_split = 0.5;
    CHECK(mode.label() == "tuned-split:0.5");
    const FoldReport f = run_fold(d.logits, d.truth, {10, 0}, 0.1, mode);
    CHECK(f.n_cal == 50);
    CHECK(f.n_test == 200);

    const Split s = fraction_split(100, 0.3, 4);
    CHECK(s.cal.size() == 30);
    CHECK(s.test.size() == 70);
    CHECK(fraction_split(100, 0.3, 4).cal == s.cal);
    CHECK(fraction_split(2, 0.01, 4).cal.size() == 1);
    CHECK_THROWS_AS(fraction_split(1, 0.5, 4), Error);
    CHECK_THROWS_AS(fraction_split(10, 1.0, 4), Error);
}

TEST_CASE("evaluate_calibration scores every row") {
    const Data d = synthetic(12, 6, 20);
    const ConformalCalibration c = calibrate(d.logits.topRows(60), LabelVector(d.truth.begin(), d.truth.begin() + 60), 0.1, 0.02);
    const FoldReport f = evaluate_calibration(c, d.logits, d.truth);
    CHECK(f.n_test == 120);
    CHECK(f.q_hat == c.q_hat);
    CHECK(f.tau_used == 0.02);
    const auto sets = batch_predict_sets(c, d.logits);
    Index hit = 0;
    for (std::size_t i = 0; i < sets.size(); ++i) hit += std::count(sets[i].begin(), sets[i].end(), d.truth[i]);
    CHECK(f.coverage == doctest::Approx(static_cast<double>(hit) / 120.0));
}
