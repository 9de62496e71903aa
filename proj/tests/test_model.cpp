#include <catch2/catch_amalgamated.hpp>

#include "flexload/model.hpp"
#include "oracles.hpp"

using namespace flexload;

namespace {

AggregateModel one_storage_model() {
    AggregateModel m;
    m.grid = {4, 1.0};
    m.fixed = Vec::Constant(4, 100.0);
    StorageParams s;
    s.p_lo = -2.0;
    s.p_hi = 2.0;
    s.e_lo = 0.0;
    s.e_hi = 5.0;
    s.e0 = 1.0;
    s.sigma = 0.9;
    m.storages.push_back(s);
    return m;
}

} // namespace

TEST_CASE("validate_model accepts a well-formed model", "[model]") {
    const auto report = validate_model(one_storage_model());
    CAPTURE(report.violations);
    CHECK(report.ok);
    CHECK(report.violations.empty());
}

TEST_CASE("validate_model flags sigma outside (0,1]", "[model]") {
    auto m = one_storage_model();
    m.storages[0].sigma = 1.2;
    const auto report = validate_model(m);
    REQUIRE_FALSE(report.ok);
    REQUIRE(report.violations.size() == 1);
    CHECK(report.violations[0].first == "storages[0].sigma");
}

TEST_CASE("validate_model flags e0 outside the energy bounds", "[model]") {
    auto m = one_storage_model();
    m.storages[0].e_lo = 6.0;
    m.storages[0].e_hi = 10.0;
    m.storages[0].e0 = 5.0;
    const auto report = validate_model(m);
    REQUIRE_FALSE(report.ok);
    REQUIRE(report.violations.size() == 1);
    CHECK(report.violations[0].first == "storages[0].e0");
}

TEST_CASE("validate_model reports every violation with its path", "[model]") {
    auto m = one_storage_model();
    m.grid.dt = 0.0;
    m.storages[0].p_lo = 3.0; // above p_hi
    m.adjustables.push_back(AdjustableParams{0.0, 1.0, 0.0, 0.0, -1.0, Vec::Zero(4)});
    const auto report = validate_model(m);
    REQUIRE_FALSE(report.ok);
    CHECK(report.violations.size() == 3);
}

TEST_CASE("storage propagators collapse for lossless storage", "[model]") {
    const auto prop = build_storage_propagators(1.0, 3);
    CHECK(prop.gamma.isApprox(Vec::Ones(3)));
    Mat expect{{1, 0, 0}, {1, 1, 0}, {1, 1, 1}};
    CHECK(prop.upsilon.isApprox(expect));
}

TEST_CASE("storage propagators evaluate powers of sigma", "[model]") {
    const auto prop = build_storage_propagators(0.5, 3);
    CHECK(prop.gamma.isApprox(Vec{{0.5, 0.25, 0.125}}));
    Mat expect{{1, 0, 0}, {0.5, 1, 0}, {0.25, 0.5, 1}};
    CHECK(prop.upsilon.isApprox(expect));
}

TEST_CASE("propagator form matches the recursion", "[model]") {
    // e1 = 0.9*10 + 2 = 11, e2 = 0.9*11 - 1 = 8.9
    const auto prop = build_storage_propagators(0.9, 2);
    const Vec p{{2.0, -1.0}};
    const Vec e = prop.gamma * 10.0 + prop.upsilon * p * 1.0;
    CHECK(e[0] == Catch::Approx(11.0).margin(1e-12));
    CHECK(e[1] == Catch::Approx(8.9).margin(1e-12));

    StorageParams s;
    s.e0 = 10.0;
    s.sigma = 0.9;
    const Vec e_rec = energy_trajectory(s, p, 1.0);
    CHECK((e - e_rec).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("storage propagators reject bad arguments", "[model]") {
    CHECK_THROWS_AS(build_storage_propagators(0.0, 3), std::domain_error);
    CHECK_THROWS_AS(build_storage_propagators(1.5, 3), std::domain_error);
    CHECK_THROWS_AS(build_storage_propagators(0.9, 0), std::domain_error);
}

TEST_CASE("energy trajectory telescopes and decays", "[model]") {
    StorageParams s;
    s.sigma = 1.0;
    s.e0 = 0.0;
    CHECK(energy_trajectory(s, Vec{{1.0, -1.0}}, 1.0).isApprox(Vec{{1.0, 0.0}}));

    s.sigma = 0.8;
    s.e0 = 5.0;
    const Vec e = energy_trajectory(s, Vec::Zero(3), 1.0);
    CHECK(e.isApprox(Vec{{4.0, 3.2, 2.56}}));
}

TEST_CASE("energy trajectory matches the closed form on random inputs", "[model]") {
    Rng rng(7);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (int rep = 0; rep < 50; ++rep) {
        StorageParams s;
        s.sigma = 0.5 + 0.5 * std::abs(unif(rng));
        s.e0 = 10.0 * unif(rng);
        const int T = 1 + rep % 12;
        Vec p(T);
        for (int t = 0; t < T; ++t) p[t] = 5.0 * unif(rng);
        const double dt = 0.25 + std::abs(unif(rng));
        const Vec a = energy_trajectory(s, p, dt);
        const Vec b = oracles::energy_closed_form(s.sigma, s.e0, p, dt);
        const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
        CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12 * scale);
    }
}

TEST_CASE("difference matrix takes first differences", "[model]") {
    const Mat m3 = build_difference_matrix(3);
    Mat expect{{-1, 1, 0}, {0, -1, 1}};
    CHECK(m3.isApprox(expect));

    CHECK((build_difference_matrix(2) * Vec{{4.0, 7.0}}).isApprox(Vec::Constant(1, 3.0)));
    CHECK((build_difference_matrix(5) * Vec::Constant(5, 2.5)).isZero(0.0));
    CHECK_THROWS_AS(build_difference_matrix(1), std::domain_error);
}

TEST_CASE("unit-diagonal and gamma/upsilon consistency", "[model]") {
    Rng rng(11);
    std::uniform_real_distribution<double> unif(0.05, 1.0);
    for (int rep = 0; rep < 20; ++rep) {
        const double sigma = unif(rng);
        const int T = 1 + rep % 8;
        const auto prop = build_storage_propagators(sigma, T);
        for (int t = 0; t < T; ++t) {
            CHECK(prop.upsilon(t, t) == 1.0);
            for (int k = t + 1; k < T; ++k) CHECK(prop.upsilon(t, k) == 0.0);
        }
        for (int t = 0; t + 1 < T; ++t)
            CHECK(prop.gamma[t] == Catch::Approx(prop.upsilon(t + 1, 0)).epsilon(1e-12));
    }
}

TEST_CASE("flatten produces the documented layout", "[model]") {
    const auto m = one_storage_model();
    const ThetaVector theta = flatten_theta(m, full_selection());
    REQUIRE(theta.size() == 6);
    CHECK(theta.layout[0].param == "p_lo");
    CHECK(theta.layout[5].param == "sigma");
    CHECK(theta.values[5] == 0.9);

    AggregateModel m2 = m;
    m2.storages.push_back(m.storages[0]);
    AdjustableParams a;
    a.p_lo = 1.0;
    a.p_hi = 2.0;
    a.r_lo = -1.0;
    a.r_hi = 1.0;
    a.p_expect = Vec::Zero(4);
    m2.adjustables.push_back(a);
    CHECK(flatten_theta(m2, full_selection()).size() == 16);
}

TEST_CASE("flatten/unflatten round-trips random models", "[model]") {
    Rng rng(3);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int rep = 0; rep < 30; ++rep) {
        AggregateModel m;
        m.grid = {3, 1.0};
        m.fixed = Vec::Zero(3);
        const int ns = 1 + static_cast<int>(unif(rng) * 3);
        const int na = static_cast<int>(unif(rng) * 3);
        for (int i = 0; i < ns; ++i) {
            StorageParams s;
            s.p_lo = -1.0 - unif(rng);
            s.p_hi = 1.0 + unif(rng);
            s.e_lo = unif(rng);
            s.e_hi = s.e_lo + 1.0 + unif(rng);
            s.e0 = s.e_lo + unif(rng) * (s.e_hi - s.e_lo);
            s.sigma = 0.5 + 0.5 * unif(rng);
            m.storages.push_back(s);
        }
        for (int j = 0; j < na; ++j) {
            AdjustableParams a;
            a.p_lo = -unif(rng);
            a.p_hi = unif(rng);
            a.r_lo = -unif(rng);
            a.r_hi = unif(rng);
            a.p_expect = Vec::Zero(3);
            m.adjustables.push_back(a);
        }
        const ThetaVector theta = flatten_theta(m, full_selection());

        AggregateModel tmpl = m;
        for (auto& s : tmpl.storages) s = StorageParams{-5, 5, 0, 10, 5, 1.0};
        for (auto& a : tmpl.adjustables) {
            a.p_lo = a.r_lo = -9;
            a.p_hi = a.r_hi = 9;
        }
        const AggregateModel back = unflatten_theta(theta, tmpl);
        const ThetaVector theta2 = flatten_theta(back, full_selection());
        CHECK(theta2.values.isApprox(theta.values, 0.0));
    }
}

TEST_CASE("unflatten rejects mismatched templates and out-of-box values", "[model]") {
    const auto m = one_storage_model();
    ThetaVector theta = flatten_theta(m, full_selection());

    AggregateModel no_storage = m;
    no_storage.storages.clear();
    CHECK_THROWS_AS(unflatten_theta(theta, no_storage), std::invalid_argument);

    theta.box_lo = theta.values.array() - 1.0;
    theta.box_hi = theta.values.array() + 1.0;
    theta.values[0] += 5.0;
    CHECK_THROWS_AS(unflatten_theta(theta, m), std::invalid_argument);
}

TEST_CASE("unit-cube mapping respects the box", "[model]") {
    const auto m = one_storage_model();
    ThetaVector theta = flatten_theta(m, {"p_lo", "p_hi"});
    theta.box_lo = Vec{{-4.0, 0.0}};
    theta.box_hi = Vec{{0.0, 4.0}};
    const Vec u = theta_to_unit(theta);
    CHECK(u[0] == Catch::Approx(0.5));
    CHECK(u[1] == Catch::Approx(0.5));
    const ThetaVector back = theta_from_unit(theta, Vec{{0.0, 1.0}});
    CHECK(back.values[0] == -4.0);
    CHECK(back.values[1] == 4.0);
}
