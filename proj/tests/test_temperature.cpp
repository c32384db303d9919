#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cp4vlm/embed_ops.hpp"
#include "cp4vlm/synthetic.hpp"
#include "cp4vlm/temperature.hpp"

#include <algorithm>

using namespace cp4vlm;

namespace {

struct Instance {
    LogitMatrix logits;
    LabelVector truth;
};

Instance make_instance(std::uint64_t seed, int classes = 20, int per_class = 11, double noise = 1.0) {
    SyntheticSpec spec;
    spec.n_classes = classes;
    spec.dim = 32;
    spec.samples_per_class = per_class;
    spec.noise_scale = noise;
    spec.confusability = 0.8;
    spec.cluster_spread = 1.0;
    spec.seed = seed;
    const SyntheticData data = generate(spec);
    return {cosine_logits(data.visual, data.textual), data.truth};
}

double dense_minimum(const Instance& inst, double alpha) {
    const auto curve = qhat_curve(inst.logits, inst.truth, alpha, TemperatureGrid::make(1.0, 1000.0, 4000));
    return std::min_element(curve.begin(), curve.end(), [](auto& a, auto& b) { return a.q_hat < b.q_hat; })->q_hat;
}

} // namespace

TEST_CASE("grid construction") {
    const TemperatureGrid g = TemperatureGrid::default_grid();
    REQUIRE(g.inverse_temps.size() == 201);
    CHECK(g.inverse_temps.front() == 1.0);
    CHECK(g.inverse_temps.back() == 1000.0);
    CHECK(g.inverse_temps[100] == doctest::Approx(std::sqrt(1000.0)).epsilon(1e-12));
    for (std::size_t i = 2; i < g.inverse_temps.size(); ++i) {
        const double r1 = g.inverse_temps[i] / g.inverse_temps[i - 1];
        const double r0 = g.inverse_temps[i - 1] / g.inverse_temps[i - 2];
        CHECK(r1 == doctest::Approx(r0).epsilon(1e-9));
    }
    const TemperatureGrid lin = TemperatureGrid::make(1.0, 100.0, 100, GridSpacing::Linear);
    CHECK(lin.inverse_temps[1] == doctest::Approx(2.0));
    CHECK_THROWS_AS(TemperatureGrid::make(0.0, 10.0, 5), Error);
    CHECK_THROWS_AS(TemperatureGrid::make(10.0, 1.0, 5), Error);
    CHECK_THROWS_AS(TemperatureGrid::make(1.0, 10.0, 1), Error);
    CHECK_THROWS_AS((TemperatureGrid{{1.0, 5.0, 5.0}}).validate(), Error);
    CHECK_THROWS_AS((TemperatureGrid{{}}).validate(), Error);
}

TEST_CASE("uniform logits give a constant curve") {
    const LogitMatrix l = LogitMatrix::Constant(30, 5, 0.2f);
    const LabelVector truth(30, 3);
    const auto curve = qhat_curve(l, truth, 0.1, TemperatureGrid::default_grid());
    for (const auto& p : curve) CHECK(p.q_hat == doctest::Approx(0.8).epsilon(1e-6));

    const TuningResult r = tune_temperature(l, truth, 0.1, TemperatureGrid::default_grid());
    CHECK(r.tau_star == 1.0);
    CHECK_FALSE(r.refined);
}

TEST_CASE("single-point curve and oracle agreement") {
    const Instance inst = make_instance(1);
    const auto one = qhat_curve(inst.logits, inst.truth, 0.05, TemperatureGrid{{100.0}});
    REQUIRE(one.size() == 1);
    std::vector<Index> all(inst.truth.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<Index>(i);
    CHECK(one[0].q_hat == oracle_conformal(inst.logits, inst.truth, all, 0.05, 0.01).q_hat);

    const auto grid = TemperatureGrid::make(1.0, 1000.0, 31);
    const auto curve = qhat_curve(inst.logits, inst.truth, 0.05, grid);
    for (const auto& p : curve)
        CHECK(p.q_hat == oracle_conformal(inst.logits, inst.truth, all, 0.05, 1.0 / p.inverse_temp).q_hat);
}

TEST_CASE("tuning picks the grid argmin and refinement never loses") {
    const TemperatureGrid grid = TemperatureGrid::default_grid();
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        const Instance inst = make_instance(seed);
        const TuningResult coarse = tune_temperature(inst.logits, inst.truth, 0.05, grid, false);
        const auto best = std::min_element(coarse.curve.begin(), coarse.curve.end(),
                                           [](auto& a, auto& b) { return a.q_hat < b.q_hat; });
        CHECK(1.0 / coarse.tau_star == doctest::Approx(best->inverse_temp).epsilon(1e-14));
        CHECK(coarse.q_hat_star == best->q_hat);
        CHECK_FALSE(coarse.refined);

        const TuningResult fine = tune_temperature(inst.logits, inst.truth, 0.05, grid, true);
        CHECK(fine.q_hat_star <= coarse.q_hat_star);
        CHECK(calibrate(inst.logits, inst.truth, 0.05, fine.tau_star).q_hat == fine.q_hat_star);
        const double step = grid.inverse_temps[1] / grid.inverse_temps[0];
        const double ratio = (1.0 / fine.tau_star) / best->inverse_temp;
        CHECK(ratio >= 1.0 / step - 1e-12);
        CHECK(ratio <= step + 1e-12);

        const double dense = dense_minimum(inst, 0.05);
        CHECK(fine.q_hat_star <= dense * 1.01 + 1e-12);
    }
}

TEST_CASE("tuned q_hat never exceeds the tau = 0.01 baseline") {
    TemperatureGrid grid = TemperatureGrid::default_grid();
    grid.inverse_temps.push_back(100.0);
    std::sort(grid.inverse_temps.begin(), grid.inverse_temps.end());
    grid.inverse_temps.erase(std::unique(grid.inverse_temps.begin(), grid.inverse_temps.end()), grid.inverse_temps.end());
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const Instance inst = make_instance(seed + 100, 30, 12, 1.5);
        const double baseline = calibrate(inst.logits, inst.truth, 0.03, 0.01).q_hat;
        for (bool refine : {false, true})
            CHECK(tune_temperature(inst.logits, inst.truth, 0.03, grid, refine).q_hat_star <= baseline);
    }
}

TEST_CASE("tuning is deterministic") {
    const Instance inst = make_instance(42);
    const TuningResult a = tune_temperature(inst.logits, inst.truth, 0.1, TemperatureGrid::default_grid());
    const TuningResult b = tune_temperature(inst.logits, inst.truth, 0.1, TemperatureGrid::default_grid());
    CHECK(a.tau_star == b.tau_star);
    CHECK(a.q_hat_star == b.q_hat_star);
    CHECK(a.refined == b.refined);
}

TEST_CASE("grid must cover a decade") {
    const Instance inst = make_instance(3);
    try {
        tune_temperature(inst.logits, inst.truth, 0.1, TemperatureGrid::make(10.0, 50.0, 20));
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Config);
    }
    CHECK_NOTHROW(qhat_curve(inst.logits, inst.truth, 0.1, TemperatureGrid::make(10.0, 50.0, 20)));
}
