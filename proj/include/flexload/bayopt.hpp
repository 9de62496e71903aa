#pragma once

// Expected-improvement search over the unit cube with a two-phase loop: a
// classic phase that retunes kernel hyperparameters and refits after every
// evaluation, then a fast phase that freezes the hyperparameters and the
// y-standardization and grows the factor pair by bordered updates only.
// Failed objective evaluations are retried once at a perturbed point and
// otherwise excluded from the surrogate.

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "flexload/gp.hpp"

namespace flexload::bayopt {

struct OptBudget {
    int n0 = 8;         // initial space-filling design
    int n_classic = 24; // evaluations solved with per-step retuning
    int n_max = 80;     // total evaluations
    int acq_starts = 64;

    void validate() const {
        if (!(1 <= n0 && n0 <= n_classic && n_classic <= n_max && acq_starts >= 1))
            throw std::invalid_argument("budget: need 1 <= n0 <= n_classic <= n_max, acq_starts >= 1");
    }
};

enum class Phase { Classic, Fast };

struct IterationRecord {
    Vec theta; // unit-cube point
    double f = 0.0;
    double ei = 0.0; // acquisition value at proposal time, objective units
    Phase phase = Phase::Classic;
    bool failed = false;
};

struct OptTrace {
    std::vector<IterationRecord> iterations;
    Vec best_theta;
    double best_f = kInf;
    // Surrogate as of the last iteration (frozen hyperparameters, y given as
    // (f - y_mean) / y_sd), for posterior slices and resumable runs.
    gp::GPState state;
    double y_mean = 0.0;
    double y_sd = 1.0;
};

inline double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
inline double norm_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }

inline double expected_improvement(double mean, double sd, double f_best) {
    if (sd <= 0.0) return std::max(f_best - mean, 0.0);
    const double z = (f_best - mean) / sd;
    return std::max(0.0, (f_best - mean) * norm_cdf(z) + sd * norm_pdf(z));
}

// Seeded Latin hypercube on [0,1]^d: one stratum per point and dimension.
inline std::vector<Vec> latin_hypercube(int n, int dim, Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<Vec> pts(n, Vec(dim));
    std::vector<int> strata(n);
    for (int k = 0; k < dim; ++k) {
        for (int i = 0; i < n; ++i) strata[i] = i;
        std::shuffle(strata.begin(), strata.end(), rng);
        for (int i = 0; i < n; ++i) pts[i][k] = (strata[i] + unif(rng)) / n;
    }
    return pts;
}

// Optional mask over the unit cube: points outside it are never worth
// evaluating (the objective would reject them), so the acquisition search
// scores them below every attainable EI value.
using Validity = std::function<bool(const Vec&)>;

// Best of acq_starts random starts, each refined by per-coordinate
// golden-section ascent on the acquisition.
inline Vec propose_next(const gp::GPState& state, double f_best, int acq_starts, Rng& rng,
                        const Validity& valid = {}) {
    const int dim = static_cast<int>(state.x.front().size());
    const Vec weights = gp::posterior_weights(state);
    auto ei_at = [&](const Vec& u) {
        if (valid && !valid(u)) return -1.0;
        const gp::Posterior p = gp::posterior(state, u, weights);
        return expected_improvement(p.mean, p.sd(), f_best);
    };

    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const int pool = std::max(acq_starts * 8, 256);
    std::vector<Vec> cand(pool, Vec(dim));
    std::vector<double> cand_ei(pool);
    for (int i = 0; i < pool; ++i) {
        for (int k = 0; k < dim; ++k) cand[i][k] = unif(rng);
        cand_ei[i] = ei_at(cand[i]);
    }
    std::vector<int> order(pool);
    for (int i = 0; i < pool; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return cand_ei[a] > cand_ei[b]; });

    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    Vec best = cand[order[0]];
    double best_ei = cand_ei[order[0]];
    const int n_starts = std::min(acq_starts, pool);
    for (int s = 0; s < n_starts; ++s) {
        Vec u = cand[order[s]];
        double u_ei = cand_ei[order[s]];
        for (int sweep = 0; sweep < 2; ++sweep)
            for (int k = 0; k < dim; ++k) {
                double a = 0.0, b = 1.0;
                double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
                Vec p1 = u, p2 = u;
                p1[k] = x1;
                p2[k] = x2;
                double f1 = ei_at(p1), f2 = ei_at(p2);
                for (int it = 0; it < 16; ++it) {
                    if (f1 < f2) {
                        a = x1;
                        x1 = x2;
                        f1 = f2;
                        x2 = a + gr * (b - a);
                        p2[k] = x2;
                        f2 = ei_at(p2);
                    } else {
                        b = x2;
                        x2 = x1;
                        f2 = f1;
                        x1 = b - gr * (b - a);
                        p1[k] = x1;
                        f1 = ei_at(p1);
                    }
                }
                const double xm = 0.5 * (a + b);
                Vec pm = u;
                pm[k] = xm;
                const double fm = ei_at(pm);
                if (fm > u_ei) {
                    u = pm;
                    u_ei = fm;
                }
            }
        if (u_ei > best_ei) {
            best = u;
            best_ei = u_ei;
        }
    }
    return best;
}

using Objective = std::function<std::optional<double>(const Vec&)>;

inline OptTrace optimize(const Objective& objective, int dim, const OptBudget& budget,
                         const gp::HyperBounds& eta_bounds, Rng& rng,
                         const Validity& valid = {}) {
    budget.validate();
    OptTrace trace;
    std::vector<Vec> xs;
    std::vector<double> ys;
    std::vector<Vec> failed_pts;
    std::normal_distribution<double> perturb(0.0, 0.01);

    auto record_best = [&](const Vec& u, double f) {
        if (f < trace.best_f) {
            trace.best_f = f;
            trace.best_theta = u;
        }
    };
    // Evaluates with one perturbed retry; returns whether a value was added.
    auto evaluate = [&](Vec u, double ei, Phase phase) {
        for (int attempt = 0; attempt < 2; ++attempt) {
            std::optional<double> f = objective(u);
            IterationRecord rec;
            rec.theta = u;
            rec.ei = ei;
            rec.phase = phase;
            if (f) {
                rec.f = *f;
                trace.iterations.push_back(rec);
                xs.push_back(u);
                ys.push_back(*f);
                record_best(u, *f);
                return true;
            }
            rec.f = std::numeric_limits<double>::quiet_NaN();
            rec.failed = true;
            trace.iterations.push_back(rec);
            failed_pts.push_back(u);
            for (int k = 0; k < dim; ++k) u[k] = std::clamp(u[k] + perturb(rng), 0.0, 1.0);
        }
        return false;
    };
    // Failed points carry no fantasy value in the surrogate, so the
    // acquisition would keep proposing the same attractor; a small exclusion
    // ball around each failure breaks that loop.
    const Validity proposable = [&](const Vec& u) {
        if (valid && !valid(u)) return false;
        for (const auto& p : failed_pts)
            if ((u - p).norm() < 0.02) return false;
        return true;
    };

    for (const Vec& u : latin_hypercube(budget.n0, dim, rng))
        evaluate(u, 0.0, Phase::Classic);
    if (xs.empty()) throw std::runtime_error("optimize: every initial-design point failed");

    auto standardizer = [&](const std::vector<double>& v) {
        double mean = 0.0;
        for (double f : v) mean += f;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double f : v) var += (f - mean) * (f - mean);
        double sd = std::sqrt(var / static_cast<double>(v.size()));
        if (!(sd > 1e-12)) sd = 1.0;
        return std::pair<double, double>(mean, sd);
    };
    auto standardized = [](const std::vector<double>& v, double mean, double sd) {
        Vec out(static_cast<Eigen::Index>(v.size()));
        for (size_t i = 0; i < v.size(); ++i)
            out[static_cast<Eigen::Index>(i)] = (v[i] - mean) / sd;
        return out;
    };

    const int attempts_cap = 2 * budget.n_max + 20;
    int attempts = static_cast<int>(trace.iterations.size());

    // Classic phase: retune, refit, propose, evaluate.
    while (static_cast<int>(xs.size()) < budget.n_classic && attempts < attempts_cap) {
        const auto [y_mean, y_sd] = standardizer(ys);
        const Vec y_std = standardized(ys, y_mean, y_sd);
        gp::Hyperparams eta;
        if (xs.size() >= 2) eta = gp::tune_hyperparameters(xs, y_std, eta_bounds, 8, rng);
        const gp::GPState state = gp::gp_fit(xs, y_std, eta);
        const double f_best_std = (trace.best_f - y_mean) / y_sd;
        const Vec u = propose_next(state, f_best_std, budget.acq_starts, rng, proposable);
        const gp::Posterior p = gp::posterior(state, u);
        const double ei = y_sd * expected_improvement(p.mean, p.sd(), f_best_std);
        evaluate(u, ei, Phase::Classic);
        ++attempts;
    }

    // Freeze hyperparameters and scaling, then grow by bordered updates.
    const auto [y_mean, y_sd] = standardizer(ys);
    gp::Hyperparams eta_frozen;
    if (static_cast<int>(xs.size()) >= 2)
        eta_frozen = gp::tune_hyperparameters(xs, standardized(ys, y_mean, y_sd), eta_bounds, 8, rng);
    gp::GPState state = gp::gp_fit(xs, standardized(ys, y_mean, y_sd), eta_frozen);

    while (static_cast<int>(xs.size()) < budget.n_max && attempts < attempts_cap) {
        const double f_best_std = (trace.best_f - y_mean) / y_sd;
        const Vec u = propose_next(state, f_best_std, budget.acq_starts, rng, proposable);
        const gp::Posterior p = gp::posterior(state, u);
        const double ei = y_sd * expected_improvement(p.mean, p.sd(), f_best_std);
        const size_t before = xs.size();
        evaluate(u, ei, Phase::Fast);
        if (xs.size() > before) {
            try {
                gp::append_point(state, xs.back(), (ys.back() - y_mean) / y_sd);
            } catch (const gp::FactorizationError&) {
                // Near-duplicate sample degenerated the bordered update; a
                // jittered refit restores a usable factor.
                state = gp::gp_fit(xs, standardized(ys, y_mean, y_sd), state.eta);
            }
        }
        ++attempts;
    }
    trace.state = std::move(state);
    trace.y_mean = y_mean;
    trace.y_sd = y_sd;
    return trace;
}

} // namespace flexload::bayopt
