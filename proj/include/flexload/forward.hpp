#pragma once

// Response models: the cost-minimizing power profiles a flexible load picks
// for given prices. Static mode solves the whole decision cycle at once with
// an energy-recovery constraint; dynamic mode rolls a short decision horizon
// forward, valuing terminal stored energy at the average forecast price over
// the remainder of the planning window. Components are independent given the
// prices, so each storage and adjustable block is solved on its own and the
// aggregate is reassembled.

#include <stdexcept>
#include <string>
#include <vector>

#include "flexload/model.hpp"
#include "flexload/solve.hpp"

namespace flexload {

struct PriceSignal {
    Vec lambda;     // actual prices, $/kWh
    Vec lambda_hat; // forecast prices, $/kWh, same length
};

struct ResponseResult {
    Vec p_agg;               // kW, length T
    std::vector<Vec> p_adj;  // per adjustable
    std::vector<Vec> p_str;  // per storage
    std::vector<Vec> e_str;  // per storage, kWh
    double objective = 0.0;  // $, forecast-price cost plus inner costs
};

struct DynamicState {
    int t = 0;
    Vec e; // stored energy per storage, kWh
};

struct ForwardOptions {
    double tol_feas = 1e-8;
    double tol_opt = 1e-8;
};

struct InfeasibleResponse : std::runtime_error {
    std::string block;
    explicit InfeasibleResponse(const std::string& blk)
        : std::runtime_error("response infeasible in block " + blk), block(blk) {}
};

// Feasibility pre-check without building any program. Storage blocks use
// exact interval reachability: the set of stored-energy levels attainable at
// each period is an interval whose endpoints follow the clamped max-charge /
// max-discharge recursions; a periodic block is feasible iff every interval
// is nonempty and e0 lies in the final one. An adjustable block is feasible
// iff the drift a one-sided ramp band forces over the horizon fits in the
// power band.
inline bool response_feasible(const AggregateModel& m, bool periodic) {
    const double dt = m.grid.dt;
    for (const auto& a : m.adjustables) {
        if (a.p_lo > a.p_hi || a.r_lo > a.r_hi) return false;
        const double forced =
            (m.grid.T - 1) * dt * std::max({a.r_lo, -a.r_hi, 0.0});
        if (forced > a.p_hi - a.p_lo) return false;
    }
    for (const auto& s : m.storages) {
        if (s.p_lo > s.p_hi || s.e_lo > s.e_hi) return false;
        if (s.e0 < s.e_lo || s.e0 > s.e_hi) return false;
        double hi = s.e0, lo = s.e0;
        for (int t = 0; t < m.grid.T; ++t) {
            hi = std::min(s.sigma * hi + s.p_hi * dt, s.e_hi);
            lo = std::max(s.sigma * lo + s.p_lo * dt, s.e_lo);
            if (hi < s.e_lo || lo > s.e_hi) return false;
            if (hi < lo) return false;
        }
        if (periodic && (s.e0 < lo || s.e0 > hi)) return false;
    }
    return true;
}

inline double extended_objective_terms(const AggregateModel& model,
                                       const std::vector<Vec>& p_adj) {
    double total = 0.0;
    for (size_t j = 0; j < model.adjustables.size(); ++j) {
        const auto& a = model.adjustables[j];
        if (a.c > 0.0) total += a.c * (p_adj[j] - a.p_expect).squaredNorm();
    }
    return total;
}

namespace detail {

// min lambda'P (+ c||P - p_expect||^2) over power and ramp limits.
inline Vec solve_adjustable_block(const AdjustableParams& a, const Vec& lambda_hat,
                                  const Vec& p_expect, double dt,
                                  const ForwardOptions& opt, const std::string& block) {
    const int T = static_cast<int>(lambda_hat.size());
    Program p = Program::lp(T);
    p.c = lambda_hat;
    p.lb = Vec::Constant(T, a.p_lo);
    p.ub = Vec::Constant(T, a.p_hi);
    if (T >= 2) {
        const Mat m = build_difference_matrix(T);
        p.a_ineq = Mat(2 * (T - 1), T);
        p.b_ineq = Vec(2 * (T - 1));
        p.a_ineq.topRows(T - 1) = m;
        p.b_ineq.head(T - 1) = Vec::Constant(T - 1, a.r_hi * dt);
        p.a_ineq.bottomRows(T - 1) = -m;
        p.b_ineq.tail(T - 1) = Vec::Constant(T - 1, -a.r_lo * dt);
    }
    if (a.c > 0.0) {
        p.q = 2.0 * a.c * Mat::Identity(T, T);
        p.c = lambda_hat - 2.0 * a.c * p_expect;
    }
    Solution s = solve(p, opt.tol_feas, opt.tol_opt);
    if (s.status != SolveStatus::Optimal) throw InfeasibleResponse(block);
    return s.x;
}

// min c'P over power and energy limits; optional extra equality row on the
// final energy and optional terminal-value adjustment folded into c by the
// caller.
inline Vec solve_storage_block(const StorageParams& st, const Vec& cost, double e_init,
                               double dt, bool periodic, const ForwardOptions& opt,
                               const std::string& block) {
    const int T = static_cast<int>(cost.size());
    const StoragePropagators prop = build_storage_propagators(st.sigma, T);
    Program p = Program::lp(T);
    p.c = cost;
    p.lb = Vec::Constant(T, st.p_lo);
    p.ub = Vec::Constant(T, st.p_hi);
    p.a_ineq = Mat(2 * T, T);
    p.b_ineq = Vec(2 * T);
    p.a_ineq.topRows(T) = dt * prop.upsilon;
    p.a_ineq.bottomRows(T) = -dt * prop.upsilon;
    for (int t = 0; t < T; ++t) {
        p.b_ineq[t] = st.e_hi - prop.gamma[t] * e_init;
        p.b_ineq[T + t] = prop.gamma[t] * e_init - st.e_lo;
    }
    if (periodic) {
        p.a_eq = dt * prop.upsilon.row(T - 1);
        p.b_eq = Vec::Constant(1, e_init - prop.gamma[T - 1] * e_init);
    }
    Solution s = solve(p, opt.tol_feas, opt.tol_opt);
    if (s.status != SolveStatus::Optimal) throw InfeasibleResponse(block);
    return s.x;
}

} // namespace detail

inline ResponseResult solve_static_response(const AggregateModel& model,
                                            const PriceSignal& prices,
                                            const ForwardOptions& opt = {}) {
    const int T = model.grid.T;
    if (prices.lambda_hat.size() < T)
        throw std::invalid_argument("static response: price signal shorter than T");
    const Vec lam = prices.lambda_hat.head(T);

    ResponseResult r;
    r.p_agg = model.fixed;
    for (size_t i = 0; i < model.storages.size(); ++i) {
        const auto& st = model.storages[i];
        Vec p = detail::solve_storage_block(st, lam, st.e0, model.grid.dt, true,
                                            opt, "storages[" + std::to_string(i) + "]");
        r.e_str.push_back(energy_trajectory(st, p, model.grid.dt));
        r.p_agg += p;
        r.p_str.push_back(std::move(p));
    }
    for (size_t j = 0; j < model.adjustables.size(); ++j) {
        const auto& a = model.adjustables[j];
        Vec p = detail::solve_adjustable_block(a, lam, a.p_expect, model.grid.dt, opt,
                                               "adjustables[" + std::to_string(j) + "]");
        r.p_agg += p;
        r.p_adj.push_back(std::move(p));
    }
    r.objective = lam.dot(r.p_agg) + extended_objective_terms(model, r.p_adj);
    return r;
}

struct DynamicStep {
    std::vector<Vec> p_adj; // first t_dc decisions per adjustable
    std::vector<Vec> p_str; // per storage
    std::vector<Vec> e_str; // energies over the step
    DynamicState next;
    double objective = 0.0; // step cost including the terminal-value credit
};

inline DynamicStep solve_dynamic_step(const AggregateModel& model, const DynamicState& state,
                                      const Vec& window, int t_dc, int t_ph,
                                      const ForwardOptions& opt = {}) {
    if (!(t_dc >= 1 && t_dc < t_ph && t_ph <= window.size()))
        throw std::invalid_argument("dynamic step: need 1 <= t_dc < t_ph <= window length");
    if (state.e.size() != static_cast<Eigen::Index>(model.storages.size()))
        throw std::invalid_argument("dynamic step: state size mismatch");
    for (size_t i = 0; i < model.storages.size(); ++i) {
        const auto& st = model.storages[i];
        if (state.e[static_cast<Eigen::Index>(i)] < st.e_lo - opt.tol_feas ||
            state.e[static_cast<Eigen::Index>(i)] > st.e_hi + opt.tol_feas)
            throw std::invalid_argument("dynamic step: stored energy outside bounds");
    }

    const double dt = model.grid.dt;
    const Vec lam_dy = window.head(t_dc);
    const double lam_ave = window.segment(t_dc, t_ph - t_dc).mean();

    DynamicStep out;
    out.next.t = state.t + t_dc;
    out.next.e = Vec(state.e.size());
    out.objective = 0.0;

    for (size_t i = 0; i < model.storages.size(); ++i) {
        const auto& st = model.storages[i];
        const double e_init = state.e[static_cast<Eigen::Index>(i)];
        const StoragePropagators prop = build_storage_propagators(st.sigma, t_dc);
        // Terminal energy e_{t+t_dc} = gamma_last*e_init + dt*(last row of
        // Upsilon)·P enters the objective with weight -lam_ave.
        Vec cost = lam_dy - lam_ave * dt * prop.upsilon.row(t_dc - 1).transpose();
        Vec p = detail::solve_storage_block(st, cost, e_init, dt, false, opt,
                                            "storages[" + std::to_string(i) + "]");
        Vec e = energy_trajectory(StorageParams{st.p_lo, st.p_hi, st.e_lo, st.e_hi,
                                                e_init, st.sigma},
                                  p, dt);
        out.objective += lam_dy.dot(p) - lam_ave * e[t_dc - 1];
        out.next.e[static_cast<Eigen::Index>(i)] = e[t_dc - 1];
        out.p_str.push_back(std::move(p));
        out.e_str.push_back(std::move(e));
    }
    for (size_t j = 0; j < model.adjustables.size(); ++j) {
        const auto& a = model.adjustables[j];
        Vec expect(t_dc);
        for (int k = 0; k < t_dc; ++k)
            expect[k] = a.p_expect.size() ? a.p_expect[(state.t + k) % model.grid.T] : 0.0;
        Vec p = detail::solve_adjustable_block(a, lam_dy, expect, dt, opt,
                                               "adjustables[" + std::to_string(j) + "]");
        out.objective += lam_dy.dot(p);
        if (a.c > 0.0) out.objective += a.c * (p - expect).squaredNorm();
        out.p_adj.push_back(std::move(p));
    }
    return out;
}

inline ResponseResult simulate_dynamic_day(const AggregateModel& model,
                                           const PriceSignal& prices, int t_dc, int t_ph,
                                           const ForwardOptions& opt = {}) {
    const int T = model.grid.T;
    if (prices.lambda_hat.size() < T)
        throw std::invalid_argument("dynamic day: price signal shorter than T");
    if (t_dc < 1 || T % t_dc != 0)
        throw std::invalid_argument("dynamic day: t_dc must divide T");
    const Vec lam_day = prices.lambda_hat.head(T);

    ResponseResult r;
    r.p_agg = model.fixed;
    r.p_adj.assign(model.adjustables.size(), Vec::Zero(T));
    r.p_str.assign(model.storages.size(), Vec::Zero(T));
    r.e_str.assign(model.storages.size(), Vec::Zero(T));

    DynamicState state;
    state.t = 0;
    state.e = Vec(model.storages.size());
    for (size_t i = 0; i < model.storages.size(); ++i)
        state.e[static_cast<Eigen::Index>(i)] = model.storages[i].e0;

    while (state.t < T) {
        Vec window(t_ph);
        for (int k = 0; k < t_ph; ++k) window[k] = lam_day[(state.t + k) % T];
        DynamicStep step = solve_dynamic_step(model, state, window, t_dc, t_ph, opt);
        for (size_t i = 0; i < model.storages.size(); ++i)
            for (int k = 0; k < t_dc; ++k) {
                r.p_str[i][state.t + k] = step.p_str[i][k];
                r.e_str[i][state.t + k] = step.e_str[i][k];
            }
        for (size_t j = 0; j < model.adjustables.size(); ++j)
            for (int k = 0; k < t_dc; ++k) r.p_adj[j][state.t + k] = step.p_adj[j][k];
        state = step.next;
    }
    for (const auto& p : r.p_str) r.p_agg += p;
    for (const auto& p : r.p_adj) r.p_agg += p;
    r.objective = lam_day.dot(r.p_agg) + extended_objective_terms(model, r.p_adj);
    return r;
}

} // namespace flexload
