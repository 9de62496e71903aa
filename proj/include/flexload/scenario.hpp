#pragma once

// Experiment synthesis: samples component fleets from uniform parameter
// bands, generates synthetic time-of-use or real-time price days, and builds
// datasets by solving the forward problem at the true parameters and adding
// observation noise.

#include <stdexcept>
#include <string>
#include <vector>

#include "flexload/identify.hpp"

namespace flexload::scen {

struct Band {
    double lo = 0.0;
    double hi = 0.0;
};

struct FleetSpec {
    int n_storage = 50;
    int n_generators = 5;
    int n_interruptible = 5;
    TimeGrid grid{24, 1.0};
    Band fixed_kw{400.0, 600.0};
    Band str_p_lo{-18.0, -6.0};
    Band str_p_hi{4.0, 16.0};
    Band str_e_hi{8.0, 64.0};
    Band str_e_lo_frac{0.10, 0.15}; // fraction of e_hi
    Band str_e0_frac{0.0, 1.0};     // position within [e_lo, e_hi]
    Band str_sigma{0.85, 1.0};
    Band gen_p_lo{3.0, 5.0};
    Band gen_p_hi{10.0, 15.0};
    Band gen_ramp{2.0, 3.0}; // kW/h, symmetric
    Band int_p_lo{1.0, 3.0};
    Band int_p_hi{5.0, 10.0};
    Band int_ramp{1000.0, 1000.0}; // wide enough to never bind
    double adj_cost = 0.0;         // inner-cost coefficient, extended modes only
    uint64_t seed = 1;

    bool valid() const {
        auto ok = [](const Band& b) { return b.lo <= b.hi; };
        return n_storage >= 0 && n_generators >= 0 && n_interruptible >= 0 && grid.T >= 1 &&
               grid.dt > 0 && ok(fixed_kw) && ok(str_p_lo) && ok(str_p_hi) && ok(str_e_hi) &&
               ok(str_e_lo_frac) && ok(str_e0_frac) && ok(str_sigma) && ok(gen_p_lo) &&
               ok(gen_p_hi) && ok(gen_ramp) && ok(int_p_lo) && ok(int_p_hi) && ok(int_ramp);
    }
};

namespace detail {

inline double draw(const Band& b, Rng& rng) {
    std::uniform_real_distribution<double> u(b.lo, b.hi);
    return b.lo == b.hi ? b.lo : u(rng);
}

} // namespace detail

inline AggregateModel sample_fleet(const FleetSpec& spec, Rng& rng) {
    if (!spec.valid()) throw std::invalid_argument("fleet spec: inconsistent bands");
    AggregateModel m;
    m.grid = spec.grid;
    m.fixed = Vec(spec.grid.T);
    for (int t = 0; t < spec.grid.T; ++t) m.fixed[t] = detail::draw(spec.fixed_kw, rng);
    for (int i = 0; i < spec.n_storage; ++i) {
        StorageParams s;
        s.p_lo = detail::draw(spec.str_p_lo, rng);
        s.p_hi = detail::draw(spec.str_p_hi, rng);
        s.e_hi = detail::draw(spec.str_e_hi, rng);
        s.e_lo = s.e_hi * detail::draw(spec.str_e_lo_frac, rng);
        s.sigma = detail::draw(spec.str_sigma, rng);
        // A lossy storage can only hold levels up to p_hi*dt/(1-sigma), and a
        // periodic cycle must return to e0; capping e0 at the sustainable
        // level keeps every sampled truth feasible.
        double e0_cap = s.e_hi;
        if (s.sigma < 1.0)
            e0_cap = std::clamp(s.p_hi * spec.grid.dt / (1.0 - s.sigma), s.e_lo, s.e_hi);
        s.e0 = s.e_lo + detail::draw(spec.str_e0_frac, rng) * (e0_cap - s.e_lo);
        m.storages.push_back(s);
    }
    auto add_adjustable = [&](const Band& lo, const Band& hi, const Band& ramp) {
        AdjustableParams a;
        a.p_lo = detail::draw(lo, rng);
        a.p_hi = detail::draw(hi, rng);
        a.r_hi = detail::draw(ramp, rng);
        a.r_lo = -a.r_hi;
        a.c = spec.adj_cost;
        a.p_expect = Vec::Constant(spec.grid.T, 0.5 * (a.p_lo + a.p_hi));
        m.adjustables.push_back(std::move(a));
    };
    for (int j = 0; j < spec.n_generators; ++j)
        add_adjustable(spec.gen_p_lo, spec.gen_p_hi, spec.gen_ramp);
    for (int j = 0; j < spec.n_interruptible; ++j)
        add_adjustable(spec.int_p_lo, spec.int_p_hi, spec.int_ramp);
    return m;
}

// Surrogate fleet template plus the search box spanned by the sampling bands.
// The template sits at band midpoints; the box covers everything the sampler
// could draw, so any fleet from the same spec lies inside it.
struct SurrogateBundle {
    ident::SurrogateSpec spec;
    ThetaVector box;
};

inline SurrogateBundle build_surrogate(const FleetSpec& fl, int n_storage, int n_generators,
                                       int n_interruptible) {
    AggregateModel tmpl;
    tmpl.grid = fl.grid;
    tmpl.fixed = Vec::Zero(fl.grid.T);
    for (int i = 0; i < n_storage; ++i) {
        StorageParams s;
        s.p_lo = 0.5 * (fl.str_p_lo.lo + fl.str_p_lo.hi);
        s.p_hi = 0.5 * (fl.str_p_hi.lo + fl.str_p_hi.hi);
        s.e_hi = 0.5 * (fl.str_e_hi.lo + fl.str_e_hi.hi);
        s.e_lo = s.e_hi * 0.5 * (fl.str_e_lo_frac.lo + fl.str_e_lo_frac.hi);
        s.e0 = 0.5 * (s.e_lo + s.e_hi);
        s.sigma = 0.5 * (fl.str_sigma.lo + fl.str_sigma.hi);
        tmpl.storages.push_back(s);
    }
    auto add_adj = [&](const Band& lo, const Band& hi, const Band& ramp) {
        AdjustableParams a;
        a.p_lo = 0.5 * (lo.lo + lo.hi);
        a.p_hi = 0.5 * (hi.lo + hi.hi);
        a.r_hi = 0.5 * (ramp.lo + ramp.hi);
        a.r_lo = -a.r_hi;
        a.c = fl.adj_cost;
        a.p_expect = Vec::Constant(fl.grid.T, 0.5 * (a.p_lo + a.p_hi));
        tmpl.adjustables.push_back(std::move(a));
    };
    for (int j = 0; j < n_generators; ++j) add_adj(fl.gen_p_lo, fl.gen_p_hi, fl.gen_ramp);
    for (int j = 0; j < n_interruptible; ++j) add_adj(fl.int_p_lo, fl.int_p_hi, fl.int_ramp);

    SurrogateBundle sur;
    sur.spec.tmpl = tmpl;
    sur.spec.selection = full_selection();
    sur.box = flatten_theta(tmpl, sur.spec.selection);
    for (int k = 0; k < sur.box.size(); ++k) {
        const auto& e = sur.box.layout[k];
        Band b{sur.box.values[k], sur.box.values[k]};
        if (e.kind == ComponentKind::Storage) {
            if (e.param == "p_lo") b = fl.str_p_lo;
            else if (e.param == "p_hi") b = fl.str_p_hi;
            else if (e.param == "e_hi") b = fl.str_e_hi;
            else if (e.param == "e_lo")
                b = {fl.str_e_lo_frac.lo * fl.str_e_hi.lo, fl.str_e_lo_frac.hi * fl.str_e_hi.hi};
            else if (e.param == "e0")
                b = {fl.str_e_lo_frac.lo * fl.str_e_hi.lo, fl.str_e_hi.hi};
            else if (e.param == "sigma") b = fl.str_sigma;
        } else {
            const bool gen = e.index < n_generators;
            if (e.param == "p_lo") b = gen ? fl.gen_p_lo : fl.int_p_lo;
            else if (e.param == "p_hi") b = gen ? fl.gen_p_hi : fl.int_p_hi;
            else if (e.param == "r_hi") b = gen ? fl.gen_ramp : fl.int_ramp;
            else if (e.param == "r_lo") {
                const Band r = gen ? fl.gen_ramp : fl.int_ramp;
                b = {-r.hi, -r.lo};
            }
        }
        sur.box.box_lo[k] = b.lo;
        sur.box.box_hi[k] = b.hi;
    }
    return sur;
}

enum class PriceKind { SyntheticTou, SyntheticRt, Csv };

struct PriceSpec {
    PriceKind kind = PriceKind::SyntheticTou;
    std::vector<double> levels = {0.08, 0.15, 0.30}; // $/kWh, off-peak/shoulder/peak
    double volatility = 0.02;                        // rt per-period price noise, $/kWh
    double forecast_error_sd = 0.0;                  // rt forecast error, $/kWh
    std::string path;                                // csv source
};

// Three-block day profile with randomized block boundaries and a random
// cyclic shift so price-direction patterns vary across days.
inline Vec tou_day(const std::vector<double>& levels, int T, Rng& rng) {
    if (levels.size() < 2) throw std::invalid_argument("prices: need at least 2 levels");
    const int blocks = static_cast<int>(levels.size());
    std::vector<int> cuts(blocks - 1);
    std::uniform_int_distribution<int> cut_at(1, T - 1);
    for (auto& c : cuts) c = cut_at(rng);
    std::sort(cuts.begin(), cuts.end());
    std::uniform_int_distribution<int> shift_at(0, T - 1);
    const int shift = shift_at(rng);
    Vec lam(T);
    for (int t = 0; t < T; ++t) {
        int block = 0;
        while (block < blocks - 1 && t >= cuts[block]) ++block;
        lam[(t + shift) % T] = levels[block];
    }
    return lam;
}

inline std::vector<PriceSignal> generate_prices(const PriceSpec& spec, int T, int days,
                                                Rng& rng) {
    if (T < 1 || days < 1) throw std::invalid_argument("prices: need T >= 1 and days >= 1");
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<PriceSignal> out;
    out.reserve(days);
    for (int d = 0; d < days; ++d) {
        Vec lam = tou_day(spec.levels, T, rng);
        PriceSignal sig;
        if (spec.kind == PriceKind::SyntheticRt) {
            for (int t = 0; t < T; ++t) lam[t] += spec.volatility * normal(rng);
            sig.lambda = lam;
            sig.lambda_hat = lam;
            if (spec.forecast_error_sd > 0.0)
                for (int t = 0; t < T; ++t)
                    sig.lambda_hat[t] += spec.forecast_error_sd * normal(rng);
        } else {
            sig.lambda = lam;
            sig.lambda_hat = lam; // time-of-use: prices are known in advance
        }
        out.push_back(std::move(sig));
    }
    return out;
}

// Solves the forward problem at the true parameters for every price day and
// perturbs the observations. Infeasibility of the truth is a hard error.
inline std::vector<ident::ResponseSample> synthesize_dataset(
    const AggregateModel& model, const std::vector<PriceSignal>& prices,
    const ident::NoiseSpec& noise, ident::ResponseMode mode, Rng& rng,
    const ident::ReplayOptions& opt = {}) {
    const ident::NoiseSampler sampler(noise, model.grid.T);
    std::vector<ident::ResponseSample> out;
    out.reserve(prices.size());
    for (const auto& day : prices) {
        const ResponseResult r =
            ident::mode_is_dynamic(mode)
                ? simulate_dynamic_day(model, day, opt.t_dc, opt.t_ph, opt.forward)
                : solve_static_response(model, day, opt.forward);
        ident::ResponseSample clean{day, r.p_agg, model.fixed};
        out.push_back(sampler.apply(clean, rng));
    }
    return out;
}

} // namespace flexload::scen
