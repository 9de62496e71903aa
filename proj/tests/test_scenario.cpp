#include <catch2/catch_amalgamated.hpp>

#include "flexload/scenario.hpp"
#include "oracles.hpp"

using namespace flexload;

TEST_CASE("sampled fleets stay inside the configured bands", "[scenario]") {
    scen::FleetSpec spec; // paper-style defaults: 50 storages, 5 + 5 adjustables
    Rng rng(1);
    const AggregateModel m = scen::sample_fleet(spec, rng);
    REQUIRE(m.storages.size() == 50);
    REQUIRE(m.adjustables.size() == 10);
    CHECK(validate_model(m).ok);
    CHECK(m.fixed.minCoeff() >= 400.0);
    CHECK(m.fixed.maxCoeff() <= 600.0);
    for (const auto& s : m.storages) {
        CHECK(s.p_lo >= -18.0);
        CHECK(s.p_lo <= -6.0);
        CHECK(s.p_hi >= 4.0);
        CHECK(s.p_hi <= 16.0);
        CHECK(s.e_hi >= 8.0);
        CHECK(s.e_hi <= 64.0);
        CHECK(s.e_lo >= 0.10 * s.e_hi);
        CHECK(s.e_lo <= 0.15 * s.e_hi);
        CHECK(s.e0 >= s.e_lo);
        CHECK(s.e0 <= s.e_hi);
        CHECK(s.sigma >= 0.85);
        CHECK(s.sigma <= 1.0);
    }
    for (size_t j = 0; j < 5; ++j) {
        CHECK(m.adjustables[j].p_lo >= 3.0);
        CHECK(m.adjustables[j].p_hi <= 15.0);
        CHECK(m.adjustables[j].r_hi >= 2.0);
        CHECK(m.adjustables[j].r_hi <= 3.0);
    }
    for (size_t j = 5; j < 10; ++j) {
        CHECK(m.adjustables[j].p_lo >= 1.0);
        CHECK(m.adjustables[j].p_hi <= 10.0);
    }
}

TEST_CASE("zero component counts leave only the fixed profile", "[scenario]") {
    scen::FleetSpec spec;
    spec.n_storage = 0;
    spec.n_generators = 0;
    spec.n_interruptible = 0;
    Rng rng(2);
    const AggregateModel m = scen::sample_fleet(spec, rng);
    CHECK(m.storages.empty());
    CHECK(m.adjustables.empty());
    CHECK(m.fixed.size() == spec.grid.T);
}

TEST_CASE("fleet sampling is deterministic under a seed", "[scenario]") {
    scen::FleetSpec spec;
    spec.n_storage = 5;
    Rng r1(7), r2(7);
    const AggregateModel a = scen::sample_fleet(spec, r1);
    const AggregateModel b = scen::sample_fleet(spec, r2);
    CHECK(a.fixed == b.fixed);
    for (size_t i = 0; i < a.storages.size(); ++i) {
        CHECK(a.storages[i].p_lo == b.storages[i].p_lo);
        CHECK(a.storages[i].sigma == b.storages[i].sigma);
        CHECK(a.storages[i].e0 == b.storages[i].e0);
    }
}

TEST_CASE("bad bands are rejected", "[scenario]") {
    scen::FleetSpec spec;
    spec.str_sigma = {1.0, 0.85};
    Rng rng(3);
    CHECK_THROWS_AS(scen::sample_fleet(spec, rng), std::invalid_argument);
}

TEST_CASE("time-of-use prices are known in advance", "[scenario]") {
    scen::PriceSpec spec;
    Rng rng(4);
    const auto days = scen::generate_prices(spec, 24, 8, rng);
    REQUIRE(days.size() == 8);
    for (const auto& d : days) {
        CHECK(d.lambda.size() == 24);
        CHECK(d.lambda == d.lambda_hat);
        for (int t = 0; t < 24; ++t) {
            const double v = d.lambda[t];
            CHECK((v == 0.08 || v == 0.15 || v == 0.30));
        }
    }
}

TEST_CASE("real-time prices with zero forecast error degenerate to actuals", "[scenario]") {
    scen::PriceSpec spec;
    spec.kind = scen::PriceKind::SyntheticRt;
    spec.forecast_error_sd = 0.0;
    Rng rng(5);
    const auto days = scen::generate_prices(spec, 12, 3, rng);
    for (const auto& d : days) CHECK(d.lambda == d.lambda_hat);

    spec.forecast_error_sd = 0.01;
    Rng rng2(5);
    const auto noisy = scen::generate_prices(spec, 12, 3, rng2);
    CHECK(noisy[0].lambda != noisy[0].lambda_hat);
}

TEST_CASE("noise-free synthesis reproduces the forward solve", "[scenario]") {
    scen::FleetSpec fspec;
    fspec.n_storage = 2;
    fspec.n_generators = 1;
    fspec.n_interruptible = 0;
    fspec.grid = {6, 1.0};
    Rng rng(6);
    const AggregateModel m = scen::sample_fleet(fspec, rng);
    const auto prices = scen::generate_prices(scen::PriceSpec{}, 6, 3, rng);
    Rng noise_rng(7);
    const auto data = scen::synthesize_dataset(m, prices, ident::NoiseSpec{},
                                               ident::ResponseMode::Static, noise_rng);
    REQUIRE(data.size() == 3);
    for (size_t d = 0; d < data.size(); ++d) {
        const auto r = solve_static_response(m, prices[d]);
        CHECK(data[d].p_obs == r.p_agg);
        CHECK(data[d].p_fix_pred == m.fixed);
        // implied storage trajectories recover their initial energy
        for (size_t i = 0; i < m.storages.size(); ++i)
            CHECK(std::abs(r.e_str[i][5] - m.storages[i].e0) <= 1e-8);
    }
}

TEST_CASE("proportional synthesis noise has the configured spread", "[scenario]") {
    // Fixed-only model keeps the clean response constant at 500 kW, so the
    // sample standard deviation estimates sqrt(0.005 * 500).
    scen::FleetSpec fspec;
    fspec.n_storage = 0;
    fspec.n_generators = 0;
    fspec.n_interruptible = 0;
    fspec.grid = {2, 1.0};
    fspec.fixed_kw = {500.0, 500.0};
    Rng rng(8);
    const AggregateModel m = scen::sample_fleet(fspec, rng);
    const auto prices = scen::generate_prices(scen::PriceSpec{}, 2, 1, rng);

    ident::NoiseSpec noise;
    noise.proportional_factor = 0.005;
    const int reps = 10000;
    double acc = 0.0, acc2 = 0.0;
    Rng noise_rng(9);
    for (int i = 0; i < reps; ++i) {
        const auto data = scen::synthesize_dataset(m, prices, noise,
                                                   ident::ResponseMode::Static, noise_rng);
        const double eps = data[0].p_obs[0] - 500.0;
        acc += eps;
        acc2 += eps * eps;
    }
    const double var = acc2 / reps - (acc / reps) * (acc / reps);
    CHECK(std::sqrt(var) == Catch::Approx(std::sqrt(2.5)).epsilon(0.05));
}

TEST_CASE("infeasible truth is a hard synthesis error", "[scenario]") {
    AggregateModel m;
    m.grid = {3, 1.0};
    m.fixed = Vec::Zero(3);
    m.storages.push_back({-1.0, 0.0, 5.0, 5.0, 5.0, 0.9}); // cannot replace losses
    Rng price_rng(10);
    const auto prices = scen::generate_prices(scen::PriceSpec{}, 3, 1, price_rng);
    Rng rng(11);
    CHECK_THROWS_AS(scen::synthesize_dataset(m, prices, ident::NoiseSpec{},
                                             ident::ResponseMode::Static, rng),
                    InfeasibleResponse);
}

TEST_CASE("dynamic synthesis uses the rolling response", "[scenario]") {
    scen::FleetSpec fspec;
    fspec.n_storage = 1;
    fspec.n_generators = 0;
    fspec.n_interruptible = 0;
    fspec.grid = {8, 1.0};
    Rng rng(12);
    const AggregateModel m = scen::sample_fleet(fspec, rng);
    const auto prices = scen::generate_prices(scen::PriceSpec{}, 8, 2, rng);
    ident::ReplayOptions opt;
    opt.t_dc = 1;
    opt.t_ph = 4;
    Rng noise_rng(13);
    const auto data = scen::synthesize_dataset(m, prices, ident::NoiseSpec{},
                                               ident::ResponseMode::Dynamic, noise_rng, opt);
    for (size_t d = 0; d < data.size(); ++d) {
        const auto r = simulate_dynamic_day(m, prices[d], 1, 4);
        CHECK(data[d].p_obs == r.p_agg);
    }
}
