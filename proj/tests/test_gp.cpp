#include <catch2/catch_amalgamated.hpp>

#include <chrono>

#include "flexload/gp.hpp"
#include "oracles.hpp"

using namespace flexload;
using gp::Hyperparams;

namespace {

Vec pt(double v) { return Vec::Constant(1, v); }

std::vector<Vec> random_points(int n, int dim, Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<Vec> x(n, Vec(dim));
    for (auto& p : x)
        for (int k = 0; k < dim; ++k) p[k] = unif(rng);
    return x;
}

} // namespace

TEST_CASE("matern kernel values", "[gp]") {
    const Hyperparams eta{1.0, 1.0, 0.1};
    CHECK(gp::matern_kernel(eta, pt(0.3), pt(0.3), true) == Catch::Approx(1.01));
    CHECK(gp::matern_kernel(eta, pt(0.0), pt(1.0), false) ==
          Catch::Approx(0.52399).margin(1e-4));
    CHECK(gp::matern_kernel(eta, pt(0.0), pt(100.0), false) <= 1e-10 * eta.alpha);
    CHECK_THROWS_AS(gp::matern_kernel(eta, pt(0.0), Vec::Zero(2), false),
                    std::invalid_argument);
}

TEST_CASE("gram matrix structure", "[gp]") {
    const Hyperparams eta{2.0, 1.0, 0.5};
    const Mat k1 = gp::gram_matrix({pt(0.2)}, eta);
    REQUIRE(k1.rows() == 1);
    CHECK(k1(0, 0) == Catch::Approx(2.25));

    const Mat k2 = gp::gram_matrix({pt(0.4), pt(0.4)}, eta);
    CHECK(k2(0, 1) == Catch::Approx(2.0)); // the noise term follows indices, not distance
    CHECK(k2(1, 0) == k2(0, 1));
    CHECK(k2(0, 0) == Catch::Approx(2.25));

    Rng rng(1);
    const auto x = random_points(5, 3, rng);
    const Mat k = gp::gram_matrix(x, Hyperparams{1.0, 0.3, 0.0});
    CHECK(k.isApprox(k.transpose()));
    CHECK_NOTHROW(gp::gp_fit(x, Vec::Zero(5), Hyperparams{1.0, 0.3, 0.0}));
}

TEST_CASE("gp_fit factors the gram matrix", "[gp]") {
    const gp::GPState s1 = gp::gp_fit({pt(0.5)}, Vec::Constant(1, 2.0), {1.0, 1.0, 0.1});
    CHECK(s1.l(0, 0) == Catch::Approx(std::sqrt(1.01)));

    Rng rng(2);
    const auto x = random_points(3, 2, rng);
    const gp::GPState s = gp::gp_fit(x, Vec::Ones(3), {1.5, 0.4, 0.2});
    const Mat k = gp::gram_matrix(x, s.eta);
    const Mat l = s.l.dense();
    CHECK(((l * l.transpose()) - k).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(((s.l_inv.dense() * l) - Mat::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-10);

    CHECK_THROWS_AS(gp::gp_fit({pt(0.5), pt(0.5)}, Vec::Zero(2), {1.0, 1.0, 0.0}),
                    gp::FactorizationError);
}

TEST_CASE("chol_append matches the worked 1x1 bordering", "[gp]") {
    auto l = gp::TriFactor::from_dense(Mat::Constant(1, 1, 2.0));
    auto l_inv = gp::TriFactor::from_dense(Mat::Constant(1, 1, 0.5));
    gp::chol_append(l, l_inv, Vec::Constant(1, 2.0), 5.0);
    Mat l_expect{{2.0, 0.0}, {1.0, 2.0}};
    Mat inv_expect{{0.5, 0.0}, {-0.25, 0.5}};
    CHECK((l.dense() - l_expect).cwiseAbs().maxCoeff() <= 1e-14);
    CHECK((l_inv.dense() - inv_expect).cwiseAbs().maxCoeff() <= 1e-14);

    // Direct dense factorization of the bordered matrix agrees.
    Mat k{{4.0, 2.0}, {2.0, 5.0}};
    const Mat l_dense = Eigen::LLT<Mat>(k).matrixL();
    CHECK((l.dense() - l_dense).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("chol_append with zero cross-covariance is block diagonal", "[gp]") {
    const Mat l0{{1.5, 0.0}, {0.5, 1.2}};
    auto l = gp::TriFactor::from_dense(l0);
    auto l_inv = gp::TriFactor::from_dense(
        l0.triangularView<Eigen::Lower>().solve(Mat::Identity(2, 2)));
    gp::chol_append(l, l_inv, Vec::Zero(2), 9.0);
    CHECK(l(2, 2) == Catch::Approx(3.0));
    CHECK(l(2, 0) == 0.0);
    CHECK(l(2, 1) == 0.0);
    CHECK(l_inv(2, 0) == 0.0);
    CHECK(l_inv(2, 1) == 0.0);
}

TEST_CASE("packed triangular operations match dense algebra", "[gp]") {
    Rng rng(21);
    std::uniform_real_distribution<double> unif(0.2, 1.5);
    for (int rep = 0; rep < 10; ++rep) {
        const int n = 1 + rep;
        Mat m = Mat::Zero(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j <= i; ++j) m(i, j) = unif(rng);
        const auto t = gp::TriFactor::from_dense(m);
        Vec v(n);
        for (int i = 0; i < n; ++i) v[i] = unif(rng);
        CHECK((t.matvec(v) - m * v).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((t.tmatvec(v) - m.transpose() * v).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((m * t.solve(v) - v).cwiseAbs().maxCoeff() <= 1e-10);
        CHECK((t.dense() - m).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("append chain tracks from-scratch factorization", "[gp]") {
    Rng rng(3);
    const int n_final = 200;
    const Hyperparams eta{1.0, 0.5, 0.05};
    const auto x = random_points(n_final, 4, rng);

    gp::GPState s = gp::gp_fit({x[0]}, Vec::Zero(1), eta);
    for (int n = 1; n < n_final; ++n) {
        gp::append_point(s, x[n], 0.0);
        if (n % 40 == 0 || n == n_final - 1) {
            const std::vector<Vec> prefix(x.begin(), x.begin() + n + 1);
            const gp::GPState full = gp::gp_fit(prefix, Vec::Zero(n + 1), eta);
            const double tol = 1e-8 * (n + 1);
            CHECK(gp::max_abs_diff(s.l, full.l) <= tol);
            CHECK(gp::max_abs_diff(s.l_inv, full.l_inv) <= tol);
        }
    }
}

TEST_CASE("append cost grows quadratically, not cubically", "[gp][timing]") {
    Rng rng(4);
    const Hyperparams eta{1.0, 0.5, 0.1};
    auto time_append_at = [&](int n) {
        auto x = random_points(n, 6, rng);
        gp::GPState s = gp::gp_fit(x, Vec::Zero(n), eta);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        gp::append_point(s, random_points(1, 6, rng)[0], 0.0); // warm-up
        std::vector<double> times;
        for (int rep = 0; rep < 7; ++rep) {
            Vec p(6);
            for (int k = 0; k < 6; ++k) p[k] = unif(rng);
            const auto t0 = std::chrono::steady_clock::now();
            gp::append_point(s, p, 0.0);
            const auto t1 = std::chrono::steady_clock::now();
            times.push_back(std::chrono::duration<double>(t1 - t0).count());
        }
        return *std::min_element(times.begin(), times.end());
    };
    const double t500 = time_append_at(500);
    const double t1000 = time_append_at(1000);
    CHECK(t1000 / t500 <= 5.0);
}

TEST_CASE("posterior closed form at a single training point", "[gp]") {
    const gp::GPState s = gp::gp_fit({pt(0.5)}, Vec::Constant(1, 1.0), {1.0, 1.0, 0.1});
    const gp::Posterior p = gp::posterior(s, pt(0.5));
    CHECK(p.mean == Catch::Approx(1.0 / 1.01).epsilon(1e-9));
    CHECK(p.variance == Catch::Approx(1.0 - 1.0 / 1.01).epsilon(1e-6));

    const gp::Posterior far = gp::posterior(s, pt(500.0));
    CHECK(std::abs(far.mean) <= 1e-10);
    CHECK(far.variance == Catch::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("posterior through the factor matches the dense inverse", "[gp]") {
    Rng rng(5);
    const auto x = random_points(3, 2, rng);
    const Vec y{{0.3, -1.2, 0.7}};
    const Hyperparams eta{1.3, 0.6, 0.15};
    const gp::GPState s = gp::gp_fit(x, y, eta);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int rep = 0; rep < 10; ++rep) {
        Vec q(2);
        q << unif(rng), unif(rng);
        const gp::Posterior a = gp::posterior(s, q);
        const gp::Posterior b = oracles::posterior_dense(x, y, eta, q);
        CHECK(a.mean == Catch::Approx(b.mean).margin(1e-8));
        CHECK(a.variance == Catch::Approx(std::max(b.variance, 0.0)).margin(1e-8));
    }
}

TEST_CASE("posterior variance shrinks as nearby points accumulate", "[gp]") {
    Rng rng(6);
    std::uniform_real_distribution<double> unif(0.4, 0.6);
    const Vec probe = Vec::Constant(2, 0.5);
    gp::GPState s = gp::gp_fit({Vec::Constant(2, 0.45)}, Vec::Zero(1), {1.0, 0.4, 0.1});
    double last = gp::posterior(s, probe).variance;
    for (int n = 0; n < 20; ++n) {
        Vec q(2);
        q << unif(rng), unif(rng);
        gp::append_point(s, q, 0.0);
        const double var = gp::posterior(s, probe).variance;
        CHECK(var <= last + 1e-10);
        last = var;
    }
}

TEST_CASE("log marginal likelihood closed forms", "[gp]") {
    // alpha + eps^2 = 1 makes the 1x1 gram the identity
    const Hyperparams eta{1.0, 1.0, 0.0};
    CHECK(gp::log_marginal_likelihood({pt(0.5)}, Vec::Zero(1), eta) ==
          Catch::Approx(-0.918939).margin(1e-5));
    CHECK(gp::log_marginal_likelihood({pt(0.5)}, Vec::Ones(1), eta) ==
          Catch::Approx(-1.418939).margin(1e-5));

    Rng rng(7);
    const auto x = random_points(4, 3, rng);
    const Vec y{{0.1, -0.4, 1.2, 0.3}};
    const Hyperparams eta4{0.8, 0.5, 0.2};
    CHECK(gp::log_marginal_likelihood(x, y, eta4) ==
          Catch::Approx(oracles::lml_dense(x, y, eta4)).margin(1e-8));
}

TEST_CASE("hyperparameter tuning recovers the length scale", "[gp][tuning]") {
    Rng rng(8);
    const Hyperparams truth{1.0, 0.3, 0.05};
    const auto x = random_points(100, 1, rng);
    const Mat k = gp::gram_matrix(x, truth);
    const Mat l = Eigen::LLT<Mat>(k).matrixL();
    std::normal_distribution<double> normal(0.0, 1.0);
    Vec z(100);
    for (int i = 0; i < 100; ++i) z[i] = normal(rng);
    const Vec y = l * z;

    Rng tune_rng(9);
    const Hyperparams fit = gp::tune_hyperparameters(x, y, {}, 8, tune_rng);
    CHECK(fit.beta >= truth.beta / 2.0);
    CHECK(fit.beta <= truth.beta * 2.0);
}

TEST_CASE("constant values drive noise and signal to their floors", "[gp][tuning]") {
    Rng rng(10);
    const auto x = random_points(10, 2, rng);
    Rng tune_rng(11);
    const gp::HyperBounds bounds;
    const Hyperparams fit = gp::tune_hyperparameters(x, Vec::Zero(10), bounds, 8, tune_rng);
    CHECK(fit.alpha <= 10.0 * bounds.alpha_lo);
    CHECK(fit.eps <= 10.0 * bounds.eps_lo);
}

TEST_CASE("tuning the minimal two-point case stays in bounds", "[gp][tuning]") {
    Rng rng(12);
    const std::vector<Vec> x = {pt(0.2), pt(0.8)};
    const Vec y{{0.5, -0.5}};
    Rng tune_rng(13);
    const gp::HyperBounds bounds;
    const Hyperparams fit = gp::tune_hyperparameters(x, y, bounds, 8, tune_rng);
    CHECK(std::isfinite(fit.alpha));
    CHECK(fit.alpha >= bounds.alpha_lo);
    CHECK(fit.alpha <= bounds.alpha_hi);
    CHECK(fit.beta >= bounds.beta_lo);
    CHECK(fit.beta <= bounds.beta_hi);
    CHECK(fit.eps >= bounds.eps_lo);
    CHECK(fit.eps <= bounds.eps_hi);

    CHECK_THROWS_AS(gp::tune_hyperparameters({pt(0.1)}, Vec::Zero(1), bounds, 4, tune_rng),
                    std::invalid_argument);
}
