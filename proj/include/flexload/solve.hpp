#pragma once

// Dense deterministic solver for the small LPs and convex QPs built by the
// response models. Objective convention: minimize 0.5*x'Qx + c'x. The LP path
// is a two-phase tableau simplex with Bland's rule (entering: lowest column
// index with negative reduced cost; leaving: lowest basic-variable index among
// minimal ratios), so identical inputs pivot identically and positive scaling
// of c never changes the returned vertex. The QP path is a primal active-set
// method with lowest-index tie-breaking.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "flexload/common.hpp"

namespace flexload {

enum class SolveStatus { Optimal, Infeasible, Unbounded };

inline const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Optimal: return "optimal";
        case SolveStatus::Infeasible: return "infeasible";
        case SolveStatus::Unbounded: return "unbounded";
    }
    return "?";
}

struct Program {
    Mat q;      // n x n symmetric PSD, or 0x0 for a pure LP
    Vec c;      // length n
    Mat a_ineq; // rows a'x <= b
    Vec b_ineq;
    Mat a_eq;   // rows a'x == b
    Vec b_eq;
    Vec lb;     // length n, -inf allowed
    Vec ub;     // length n, +inf allowed

    int num_vars() const { return static_cast<int>(c.size()); }

    static Program lp(int n) {
        Program p;
        p.c = Vec::Zero(n);
        p.lb = Vec::Constant(n, -kInf);
        p.ub = Vec::Constant(n, kInf);
        p.a_ineq = Mat(0, n);
        p.b_ineq = Vec(0);
        p.a_eq = Mat(0, n);
        p.b_eq = Vec(0);
        return p;
    }
};

struct Solution {
    Vec x;
    double objective = 0.0;
    SolveStatus status = SolveStatus::Optimal;
};

struct SolveError : std::runtime_error {
    explicit SolveError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

// ---------------------------------------------------------------------------
// LP: two-phase dense tableau simplex, Bland anti-cycling rule throughout.

struct SimplexTableau {
    Mat tab;                 // m x (ncols+1), last column is rhs
    Vec cost;                // reduced-cost row, length ncols+1 (rhs = -obj)
    std::vector<int> basis;  // basic column per row
    int ncols = 0;           // all columns
    int nelig = 0;           // columns eligible to enter (excludes artificials)

    void pivot(int row, int col) {
        const double piv = tab(row, col);
        tab.row(row) /= piv;
        for (int i = 0; i < static_cast<int>(tab.rows()); ++i) {
            if (i == row) continue;
            const double f = tab(i, col);
            if (f != 0.0) tab.row(i) -= f * tab.row(row);
        }
        const double fc = cost[col];
        if (fc != 0.0) cost -= fc * tab.row(row).transpose();
        basis[row] = col;
    }

    // Returns false on iteration-cap blowup.
    bool run(double enter_tol, int max_iter, bool* unbounded) {
        *unbounded = false;
        for (int iter = 0; iter < max_iter; ++iter) {
            int enter = -1;
            for (int j = 0; j < nelig; ++j)
                if (cost[j] < -enter_tol) { enter = j; break; }
            if (enter < 0) return true;
            int leave = -1;
            double best_ratio = kInf;
            for (int i = 0; i < static_cast<int>(tab.rows()); ++i) {
                const double a = tab(i, enter);
                if (a <= 1e-11) continue;
                const double ratio = tab(i, ncols) / a;
                if (ratio < best_ratio - 1e-12 ||
                    (ratio < best_ratio + 1e-12 && (leave < 0 || basis[i] < basis[leave]))) {
                    best_ratio = ratio;
                    leave = i;
                }
            }
            if (leave < 0) { *unbounded = true; return true; }
            pivot(leave, enter);
        }
        return false;
    }
};

// Variable change to y >= 0 standard form.
struct VarMap {
    // x_j = lo_shift + sign * y_col (+ optionally - y_col2 for free vars)
    int col = -1, col2 = -1;
    double shift = 0.0;
    double sign = 1.0;
};

inline Solution solve_lp(const Program& p, double tol_feas) {
    const int n = p.num_vars();
    std::vector<VarMap> vmap(n);
    int ny = 0;
    std::vector<std::pair<int, double>> upper_rows; // (y column, range) for boxed vars
    for (int j = 0; j < n; ++j) {
        const double lo = p.lb[j], hi = p.ub[j];
        if (lo > hi) return {Vec::Zero(n), 0.0, SolveStatus::Infeasible};
        if (std::isfinite(lo)) {
            vmap[j] = {ny++, -1, lo, 1.0};
            if (std::isfinite(hi)) upper_rows.push_back({vmap[j].col, hi - lo});
        } else if (std::isfinite(hi)) {
            vmap[j] = {ny++, -1, hi, -1.0};
        } else {
            vmap[j] = {ny, ny + 1, 0.0, 1.0};
            ny += 2;
        }
    }

    const int m_in = static_cast<int>(p.b_ineq.size());
    const int m_eq = static_cast<int>(p.b_eq.size());
    const int m = m_in + static_cast<int>(upper_rows.size()) + m_eq;

    // Assemble rows in y space: inequality rows, variable upper-bound rows,
    // then equality rows. Row senses: 0 is <=, 1 is ==.
    Mat rows = Mat::Zero(m, ny);
    Vec rhs = Vec::Zero(m);
    std::vector<int> sense(m, 0);
    auto emit = [&](int r, const Vec& a, double b) {
        double shift_sum = 0.0;
        for (int j = 0; j < n; ++j) {
            const double aj = a[j];
            if (aj == 0.0) continue;
            shift_sum += aj * vmap[j].shift;
            rows(r, vmap[j].col) += aj * vmap[j].sign;
            if (vmap[j].col2 >= 0) rows(r, vmap[j].col2) -= aj;
        }
        rhs[r] = b - shift_sum;
    };
    for (int i = 0; i < m_in; ++i) emit(i, p.a_ineq.row(i), p.b_ineq[i]);
    for (size_t k = 0; k < upper_rows.size(); ++k) {
        const int r = m_in + static_cast<int>(k);
        rows(r, upper_rows[k].first) = 1.0;
        rhs[r] = upper_rows[k].second;
    }
    for (int i = 0; i < m_eq; ++i) {
        const int r = m_in + static_cast<int>(upper_rows.size()) + i;
        emit(r, p.a_eq.row(i), p.b_eq[i]);
        sense[r] = 1;
    }

    // Objective in y space (the constant from shifts is re-added at the end
    // by evaluating c'x on the recovered point).
    Vec cy = Vec::Zero(ny);
    for (int j = 0; j < n; ++j) {
        cy[vmap[j].col] += p.c[j] * vmap[j].sign;
        if (vmap[j].col2 >= 0) cy[vmap[j].col2] -= p.c[j];
    }

    // Count slack/surplus and artificial columns. Rows with negative rhs are
    // negated first so every basis starts feasible for phase 1.
    int n_slack = 0, n_art = 0;
    for (int r = 0; r < m; ++r) {
        if (rhs[r] < 0.0) {
            rows.row(r) = -rows.row(r);
            rhs[r] = -rhs[r];
            if (sense[r] == 0) sense[r] = 2; // >= after negation
        }
        if (sense[r] != 1) ++n_slack;
        if (sense[r] != 0) ++n_art;
    }

    SimplexTableau t;
    const int ncols = ny + n_slack + n_art;
    t.ncols = ncols;
    t.nelig = ny + n_slack;
    t.tab = Mat::Zero(m, ncols + 1);
    t.basis.assign(m, -1);
    t.tab.block(0, 0, m, ny) = rows;
    t.tab.col(ncols) = rhs;
    int scol = ny, acol = ny + n_slack;
    for (int r = 0; r < m; ++r) {
        if (sense[r] == 0) {
            t.tab(r, scol) = 1.0;
            t.basis[r] = scol++;
        } else if (sense[r] == 2) {
            t.tab(r, scol) = -1.0;
            ++scol;
            t.tab(r, acol) = 1.0;
            t.basis[r] = acol++;
        } else {
            t.tab(r, acol) = 1.0;
            t.basis[r] = acol++;
        }
    }

    const int max_iter = 2000 + 60 * (m + ncols);
    const double bscale = std::max(1.0, rhs.size() ? rhs.cwiseAbs().maxCoeff() : 0.0);
    bool unbounded = false;

    if (n_art > 0) {
        // Phase 1: price out the artificial basis, minimize its sum.
        t.cost = Vec::Zero(ncols + 1);
        for (int r = 0; r < m; ++r)
            if (t.basis[r] >= ny + n_slack) t.cost -= t.tab.row(r).transpose();
        for (int j = ny + n_slack; j < ncols; ++j) t.cost[j] += 1.0;
        if (!t.run(1e-11, max_iter, &unbounded))
            throw SolveError("simplex: phase-1 iteration limit");
        const double infeas = -t.cost[ncols];
        if (infeas > tol_feas * bscale)
            return {Vec::Zero(n), 0.0, SolveStatus::Infeasible};
        // Pivot leftover artificials out where the row is not redundant.
        for (int r = 0; r < m; ++r) {
            if (t.basis[r] < ny + n_slack) continue;
            for (int j = 0; j < ny + n_slack; ++j)
                if (std::abs(t.tab(r, j)) > 1e-9) { t.pivot(r, j); break; }
        }
    }

    // Phase 2.
    t.cost = Vec::Zero(ncols + 1);
    t.cost.head(ny) = cy;
    for (int r = 0; r < m; ++r) {
        const double cb = t.cost[t.basis[r]];
        if (cb != 0.0) t.cost -= cb * t.tab.row(r).transpose();
    }
    const double cnorm = cy.size() ? cy.cwiseAbs().maxCoeff() : 0.0;
    if (!t.run(1e-9 * cnorm, max_iter, &unbounded))
        throw SolveError("simplex: phase-2 iteration limit");
    if (unbounded) return {Vec::Zero(n), 0.0, SolveStatus::Unbounded};

    Vec y = Vec::Zero(ncols);
    for (int r = 0; r < m; ++r) y[t.basis[r]] = t.tab(r, ncols);
    Vec x(n);
    for (int j = 0; j < n; ++j) {
        double v = vmap[j].shift + vmap[j].sign * y[vmap[j].col];
        if (vmap[j].col2 >= 0) v -= y[vmap[j].col2];
        x[j] = v;
    }
    const double obj = p.c.dot(x);
    return {std::move(x), obj, SolveStatus::Optimal};
}

// ---------------------------------------------------------------------------
// QP: primal active-set method. The unified constraint list is
// [equalities | inequalities | lower bounds | upper bounds] in that fixed
// order; ties in both the blocking test and the drop test resolve to the
// lowest list index.

struct ConstraintList {
    Mat a;               // one row per constraint
    Vec b;
    int num_eq = 0;      // leading rows held as equalities
};

inline ConstraintList build_constraints(const Program& p) {
    const int n = p.num_vars();
    std::vector<int> lbs, ubs;
    for (int j = 0; j < n; ++j) {
        if (std::isfinite(p.lb[j])) lbs.push_back(j);
        if (std::isfinite(p.ub[j])) ubs.push_back(j);
    }
    const int m_eq = static_cast<int>(p.b_eq.size());
    const int m_in = static_cast<int>(p.b_ineq.size());
    const int m = m_eq + m_in + static_cast<int>(lbs.size() + ubs.size());
    ConstraintList cl;
    cl.a = Mat::Zero(m, n);
    cl.b = Vec::Zero(m);
    cl.num_eq = m_eq;
    int r = 0;
    for (int i = 0; i < m_eq; ++i, ++r) {
        cl.a.row(r) = p.a_eq.row(i);
        cl.b[r] = p.b_eq[i];
    }
    for (int i = 0; i < m_in; ++i, ++r) {
        cl.a.row(r) = p.a_ineq.row(i);
        cl.b[r] = p.b_ineq[i];
    }
    for (int j : lbs) {
        cl.a(r, j) = -1.0;
        cl.b[r++] = -p.lb[j];
    }
    for (int j : ubs) {
        cl.a(r, j) = 1.0;
        cl.b[r++] = p.ub[j];
    }
    return cl;
}

inline Solution solve_qp(const Program& p, double tol_feas, double tol_opt) {
    const int n = p.num_vars();

    // PSD check with the jitter ladder; the jittered Q is used throughout.
    Mat q = p.q;
    {
        double jitter = 0.0;
        const double scale = std::max(1.0, q.diagonal().cwiseAbs().maxCoeff());
        Eigen::LLT<Mat> llt(q);
        while (llt.info() != Eigen::Success) {
            jitter = jitter == 0.0 ? 1e-12 * scale : jitter * 10.0;
            if (jitter > 1e-6 * scale)
                throw SolveError("qp: cost matrix not PSD within jitter ladder");
            llt.compute(q + jitter * Mat::Identity(n, n));
        }
        if (jitter > 0.0) q += jitter * Mat::Identity(n, n);
    }

    // Feasible vertex from the zero-cost LP over the same region.
    Program feas = p;
    feas.q = Mat();
    feas.c = Vec::Zero(n);
    Solution start = solve_lp(feas, tol_feas);
    if (start.status != SolveStatus::Optimal) return {Vec::Zero(n), 0.0, start.status};
    Vec x = start.x;

    const ConstraintList cl = build_constraints(p);
    const int m = static_cast<int>(cl.b.size());

    // Working set: all equalities plus active inequalities kept linearly
    // independent, added in list order.
    std::vector<int> work;
    std::vector<bool> in_work(m, false);
    auto try_add = [&](int k) {
        Mat stacked(static_cast<int>(work.size()) + 1, n);
        for (size_t i = 0; i < work.size(); ++i) stacked.row(static_cast<int>(i)) = cl.a.row(work[i]);
        stacked.row(static_cast<int>(work.size())) = cl.a.row(k);
        Eigen::ColPivHouseholderQR<Mat> qr(stacked.transpose());
        if (qr.rank() < stacked.rows()) return false;
        work.push_back(k);
        in_work[k] = true;
        return true;
    };
    for (int k = 0; k < cl.num_eq; ++k)
        if (!try_add(k)) throw SolveError("qp: dependent equality rows");
    for (int k = cl.num_eq; k < m; ++k) {
        if (static_cast<int>(work.size()) >= n) break;
        if (std::abs(cl.a.row(k).dot(x) - cl.b[k]) <= 1e-9 * std::max(1.0, std::abs(cl.b[k])))
            try_add(k);
    }

    const int max_iter = 200 + 50 * (n + m);
    for (int iter = 0; iter < max_iter; ++iter) {
        const int w = static_cast<int>(work.size());
        Vec g = q * x + p.c;
        Mat kkt = Mat::Zero(n + w, n + w);
        kkt.topLeftCorner(n, n) = q;
        for (int i = 0; i < w; ++i) {
            kkt.block(n + i, 0, 1, n) = cl.a.row(work[i]);
            kkt.block(0, n + i, n, 1) = cl.a.row(work[i]).transpose();
        }
        Vec rhs = Vec::Zero(n + w);
        rhs.head(n) = -g;
        Vec sol = kkt.partialPivLu().solve(rhs);
        Vec d = sol.head(n);
        Vec lam = sol.tail(w);

        if (d.cwiseAbs().maxCoeff() <= 1e-10 * std::max(1.0, x.cwiseAbs().maxCoeff())) {
            int drop = -1;
            double most_neg = -tol_opt;
            for (int i = 0; i < w; ++i) {
                if (work[i] < cl.num_eq) continue;
                if (lam[i] < most_neg) {
                    most_neg = lam[i];
                    drop = i;
                }
            }
            if (drop < 0) {
                const double obj = 0.5 * x.dot(p.q * x) + p.c.dot(x);
                return {std::move(x), obj, SolveStatus::Optimal};
            }
            in_work[work[drop]] = false;
            work.erase(work.begin() + drop);
            continue;
        }

        double alpha = 1.0;
        int blocking = -1;
        for (int k = cl.num_eq; k < m; ++k) {
            if (in_work[k]) continue;
            const double ad = cl.a.row(k).dot(d);
            if (ad <= 1e-12) continue;
            const double slack = cl.b[k] - cl.a.row(k).dot(x);
            const double ak = std::max(0.0, slack) / ad;
            if (ak < alpha - 1e-14) {
                alpha = ak;
                blocking = k;
            }
        }
        x += alpha * d;
        if (blocking >= 0 && !try_add(blocking)) {
            // Dependent blocking row at a degenerate point: nudge via jitter
            // on the drop tolerance would mask it; report instead.
            throw SolveError("qp: degenerate working set");
        }
    }
    throw SolveError("qp: active-set iteration limit");
}

} // namespace detail

inline Solution solve(const Program& p, double tol_feas = 1e-8, double tol_opt = 1e-8) {
    if (p.c.size() == 0) throw std::invalid_argument("solve: empty program");
    const bool has_q = p.q.size() > 0 && (p.q.array() != 0.0).any();
    Solution s = has_q ? detail::solve_qp(p, tol_feas, tol_opt)
                       : detail::solve_lp(p, tol_feas);
    if (s.status != SolveStatus::Optimal) return s;

    // Residual audit on the original rows.
    double resid = 0.0;
    for (Eigen::Index i = 0; i < p.b_ineq.size(); ++i)
        resid = std::max(resid, p.a_ineq.row(i).dot(s.x) - p.b_ineq[i]);
    for (Eigen::Index i = 0; i < p.b_eq.size(); ++i)
        resid = std::max(resid, std::abs(p.a_eq.row(i).dot(s.x) - p.b_eq[i]));
    for (int j = 0; j < p.num_vars(); ++j) {
        if (std::isfinite(p.lb[j])) resid = std::max(resid, p.lb[j] - s.x[j]);
        if (std::isfinite(p.ub[j])) resid = std::max(resid, s.x[j] - p.ub[j]);
    }
    double scale = 1.0;
    if (p.b_ineq.size()) scale = std::max(scale, p.b_ineq.cwiseAbs().maxCoeff());
    if (p.b_eq.size()) scale = std::max(scale, p.b_eq.cwiseAbs().maxCoeff());
    if (resid > tol_feas * scale)
        throw SolveError("solve: residual " + std::to_string(resid) + " exceeds tolerance");
    return s;
}

} // namespace flexload
