#pragma once

// Aggregate model of a price-responsive flexible load: a fixed profile plus
// adjustable-power and storage components on a common time grid, with the
// flattened parameter-vector view used by the identification layer.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "flexload/common.hpp"

namespace flexload {

struct TimeGrid {
    int T = 0;       // number of periods
    double dt = 1.0; // period length in hours
};

struct StorageParams {
    double p_lo = 0.0; // kW, charging negative means discharge allowed
    double p_hi = 0.0; // kW
    double e_lo = 0.0; // kWh
    double e_hi = 0.0; // kWh
    double e0 = 0.0;   // kWh at the start of the horizon
    double sigma = 1.0; // per-period retention factor, in (0,1]
};

struct AdjustableParams {
    double p_lo = 0.0;
    double p_hi = 0.0;
    double r_lo = 0.0; // kW/h
    double r_hi = 0.0; // kW/h
    double c = 0.0;    // $/kW^2 inner-cost coefficient, 0 disables
    Vec p_expect;      // kW, length T; deviation target for the inner cost
};

struct AggregateModel {
    TimeGrid grid;
    Vec fixed; // kW, length T
    std::vector<AdjustableParams> adjustables;
    std::vector<StorageParams> storages;
};

struct ValidationReport {
    bool ok = true;
    std::vector<std::pair<std::string, std::string>> violations; // (path, message)

    void add(std::string path, std::string message) {
        ok = false;
        violations.emplace_back(std::move(path), std::move(message));
    }
};

inline ValidationReport validate_model(const AggregateModel& m) {
    ValidationReport r;
    if (m.grid.T < 1) r.add("grid.T", "must be >= 1");
    if (!(m.grid.dt > 0.0)) r.add("grid.dt", "must be > 0");
    if (m.fixed.size() != m.grid.T)
        r.add("fixed", "length " + std::to_string(m.fixed.size()) + " != T");
    for (size_t j = 0; j < m.adjustables.size(); ++j) {
        const auto& a = m.adjustables[j];
        const std::string base = "adjustables[" + std::to_string(j) + "].";
        if (a.p_lo > a.p_hi) r.add(base + "p_lo", "p_lo > p_hi");
        if (a.r_lo > a.r_hi) r.add(base + "r_lo", "r_lo > r_hi");
        if (a.c < 0.0) r.add(base + "c", "must be >= 0");
        if (a.p_expect.size() != m.grid.T)
            r.add(base + "p_expect", "length != T");
    }
    for (size_t i = 0; i < m.storages.size(); ++i) {
        const auto& s = m.storages[i];
        const std::string base = "storages[" + std::to_string(i) + "].";
        if (s.p_lo > s.p_hi) r.add(base + "p_lo", "p_lo > p_hi");
        if (s.e_lo > s.e_hi) r.add(base + "e_lo", "e_lo > e_hi");
        if (s.e0 < s.e_lo || s.e0 > s.e_hi)
            r.add(base + "e0", "e0 outside [e_lo, e_hi]");
        if (!(s.sigma > 0.0) || s.sigma > 1.0)
            r.add(base + "sigma", "must be in (0, 1]");
    }
    return r;
}

// gamma[t] = sigma^(t+1), upsilon(t,k) = sigma^(t-k) for k <= t. Together they
// map initial energy and a power sequence to the stored-energy trajectory:
// E = gamma * e0 + Upsilon * P * dt.
struct StoragePropagators {
    Vec gamma;   // length T
    Mat upsilon; // T x T, unit-diagonal lower triangular
};

inline StoragePropagators build_storage_propagators(double sigma, int T) {
    if (!(sigma > 0.0) || sigma > 1.0)
        throw std::domain_error("storage propagators: sigma must be in (0, 1]");
    if (T < 1) throw std::domain_error("storage propagators: T must be >= 1");
    StoragePropagators out;
    out.gamma = Vec(T);
    out.upsilon = Mat::Zero(T, T);
    std::vector<double> pow_sigma(T + 1);
    pow_sigma[0] = 1.0;
    for (int k = 1; k <= T; ++k) pow_sigma[k] = pow_sigma[k - 1] * sigma;
    for (int t = 0; t < T; ++t) {
        out.gamma[t] = pow_sigma[t + 1];
        for (int k = 0; k <= t; ++k) out.upsilon(t, k) = pow_sigma[t - k];
    }
    return out;
}

// E[t] from the per-period recursion e_t = sigma*e_{t-1} + p_t*dt.
inline Vec energy_trajectory(const StorageParams& s, const Vec& p_str, double dt) {
    const int T = static_cast<int>(p_str.size());
    Vec e(T);
    double prev = s.e0;
    for (int t = 0; t < T; ++t) {
        prev = s.sigma * prev + p_str[t] * dt;
        e[t] = prev;
    }
    return e;
}

// First-difference operator: row k maps P to P[k+1] - P[k]. (T-1) x T, so ramp
// constraints apply between consecutive in-horizon periods only; there is no
// prior-period power to difference against at t = 0.
inline Mat build_difference_matrix(int T) {
    if (T < 2) throw std::domain_error("difference matrix: T must be >= 2");
    Mat m = Mat::Zero(T - 1, T);
    for (int k = 0; k + 1 < T; ++k) {
        m(k, k) = -1.0;
        m(k, k + 1) = 1.0;
    }
    return m;
}

// ---------------------------------------------------------------------------
// Flattened parameter vector

enum class ComponentKind { Storage, Adjustable };

struct ThetaEntry {
    ComponentKind kind;
    int index;         // component index within its kind
    std::string param; // field name
};

struct ThetaVector {
    Vec values;
    std::vector<ThetaEntry> layout;
    Vec box_lo;
    Vec box_hi;

    int size() const { return static_cast<int>(values.size()); }
};

// Canonical per-component parameter order. Flatten order is: storages by
// index, each in storage_param_order, then adjustables in adjustable_param_order.
inline const std::vector<std::string>& storage_param_order() {
    static const std::vector<std::string> order = {"p_lo", "p_hi", "e_lo",
                                                   "e_hi", "e0",   "sigma"};
    return order;
}

inline const std::vector<std::string>& adjustable_param_order() {
    static const std::vector<std::string> order = {"p_lo", "p_hi", "r_lo", "r_hi"};
    return order;
}

namespace detail {

inline bool selected(const std::vector<std::string>& selection, const std::string& name) {
    return std::find(selection.begin(), selection.end(), name) != selection.end();
}

inline double storage_field(const StorageParams& s, const std::string& p) {
    if (p == "p_lo") return s.p_lo;
    if (p == "p_hi") return s.p_hi;
    if (p == "e_lo") return s.e_lo;
    if (p == "e_hi") return s.e_hi;
    if (p == "e0") return s.e0;
    if (p == "sigma") return s.sigma;
    throw std::invalid_argument("unknown storage parameter: " + p);
}

inline void set_storage_field(StorageParams& s, const std::string& p, double v) {
    if (p == "p_lo") s.p_lo = v;
    else if (p == "p_hi") s.p_hi = v;
    else if (p == "e_lo") s.e_lo = v;
    else if (p == "e_hi") s.e_hi = v;
    else if (p == "e0") s.e0 = v;
    else if (p == "sigma") s.sigma = v;
    else throw std::invalid_argument("unknown storage parameter: " + p);
}

inline double adjustable_field(const AdjustableParams& a, const std::string& p) {
    if (p == "p_lo") return a.p_lo;
    if (p == "p_hi") return a.p_hi;
    if (p == "r_lo") return a.r_lo;
    if (p == "r_hi") return a.r_hi;
    throw std::invalid_argument("unknown adjustable parameter: " + p);
}

inline void set_adjustable_field(AdjustableParams& a, const std::string& p, double v) {
    if (p == "p_lo") a.p_lo = v;
    else if (p == "p_hi") a.p_hi = v;
    else if (p == "r_lo") a.r_lo = v;
    else if (p == "r_hi") a.r_hi = v;
    else throw std::invalid_argument("unknown adjustable parameter: " + p);
}

} // namespace detail

// Selection is a set of parameter names; each component type keeps the names
// that apply to it. Box bounds default to the flattened values themselves;
// callers widen them before searching.
inline ThetaVector flatten_theta(const AggregateModel& model,
                                 const std::vector<std::string>& selection) {
    ThetaVector theta;
    std::vector<double> vals;
    for (size_t i = 0; i < model.storages.size(); ++i)
        for (const auto& p : storage_param_order())
            if (detail::selected(selection, p)) {
                vals.push_back(detail::storage_field(model.storages[i], p));
                theta.layout.push_back({ComponentKind::Storage, static_cast<int>(i), p});
            }
    for (size_t j = 0; j < model.adjustables.size(); ++j)
        for (const auto& p : adjustable_param_order())
            if (detail::selected(selection, p)) {
                vals.push_back(detail::adjustable_field(model.adjustables[j], p));
                theta.layout.push_back({ComponentKind::Adjustable, static_cast<int>(j), p});
            }
    theta.values = Eigen::Map<Vec>(vals.data(), static_cast<Eigen::Index>(vals.size()));
    theta.box_lo = theta.values;
    theta.box_hi = theta.values;
    return theta;
}

inline std::vector<std::string> full_selection() {
    std::vector<std::string> s = storage_param_order();
    for (const auto& p : adjustable_param_order())
        if (!detail::selected(s, p)) s.push_back(p);
    return s;
}

inline AggregateModel unflatten_theta(const ThetaVector& theta, const AggregateModel& tmpl) {
    if (theta.values.size() != static_cast<Eigen::Index>(theta.layout.size()))
        throw std::invalid_argument("theta: values/layout length mismatch");
    AggregateModel out = tmpl;
    for (size_t k = 0; k < theta.layout.size(); ++k) {
        const auto& entry = theta.layout[k];
        const double v = theta.values[static_cast<Eigen::Index>(k)];
        if (theta.box_lo.size() == theta.values.size() &&
            (v < theta.box_lo[static_cast<Eigen::Index>(k)] ||
             v > theta.box_hi[static_cast<Eigen::Index>(k)]))
            throw std::invalid_argument("theta: value outside box at entry " + std::to_string(k));
        if (entry.kind == ComponentKind::Storage) {
            if (entry.index < 0 || entry.index >= static_cast<int>(out.storages.size()))
                throw std::invalid_argument("theta: storage index out of range in layout");
            detail::set_storage_field(out.storages[entry.index], entry.param, v);
        } else {
            if (entry.index < 0 || entry.index >= static_cast<int>(out.adjustables.size()))
                throw std::invalid_argument("theta: adjustable index out of range in layout");
            detail::set_adjustable_field(out.adjustables[entry.index], entry.param, v);
        }
    }
    return out;
}

// Unit-cube view of a boxed theta. Degenerate coordinates (box_lo == box_hi)
// map to 0 and back to the fixed value.
inline Vec theta_to_unit(const ThetaVector& theta) {
    Vec u(theta.values.size());
    for (Eigen::Index k = 0; k < u.size(); ++k) {
        const double range = theta.box_hi[k] - theta.box_lo[k];
        u[k] = range > 0.0 ? (theta.values[k] - theta.box_lo[k]) / range : 0.0;
    }
    return u;
}

inline ThetaVector theta_from_unit(const ThetaVector& boxed, const Vec& u) {
    if (u.size() != boxed.values.size())
        throw std::invalid_argument("theta_from_unit: dimension mismatch");
    ThetaVector out = boxed;
    for (Eigen::Index k = 0; k < u.size(); ++k) {
        const double range = boxed.box_hi[k] - boxed.box_lo[k];
        out.values[k] = boxed.box_lo[k] + std::clamp(u[k], 0.0, 1.0) * range;
    }
    return out;
}

} // namespace flexload
