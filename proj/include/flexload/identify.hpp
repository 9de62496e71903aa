#pragma once

// Inverse problem: recover aggregate-model parameters from observed responses.
// Each objective evaluation replays the forward problem for a candidate
// parameter vector against every sample's prices and predicted fixed profile,
// and scores the mean squared aggregate-power deviation. Includes the error
// metrics (NRMSE, scaled parameter deviation), the Gaussian noise machinery,
// the noise-gap experiment, and posterior slices for identifiability plots.

#include <optional>
#include <stdexcept>
#include <vector>

#include "flexload/bayopt.hpp"
#include "flexload/forward.hpp"
#include "flexload/model.hpp"

namespace flexload::ident {

struct ResponseSample {
    PriceSignal prices;
    Vec p_obs;      // observed aggregate power, kW
    Vec p_fix_pred; // predicted fixed profile, kW
};

struct NoiseSpec {
    Vec mu_agg;    // empty means zero
    Vec mu_fix;
    Mat sigma_agg; // empty means no noise
    Mat sigma_fix;
    std::optional<double> proportional_factor; // variance = factor * |P*_t|, replaces sigma_agg
};

enum class ResponseMode { Static, Dynamic, StaticExt, DynamicExt };

inline bool mode_is_dynamic(ResponseMode m) {
    return m == ResponseMode::Dynamic || m == ResponseMode::DynamicExt;
}
inline bool mode_is_extended(ResponseMode m) {
    return m == ResponseMode::StaticExt || m == ResponseMode::DynamicExt;
}

struct ReplayOptions {
    ForwardOptions forward;
    int t_dc = 1;
    int t_ph = 24;
};

struct SurrogateSpec {
    AggregateModel tmpl;
    std::vector<std::string> selection;
};

inline AggregateModel surrogate_at(const SurrogateSpec& sur, const ThetaVector& theta,
                                   ResponseMode mode) {
    AggregateModel m = unflatten_theta(theta, sur.tmpl);
    if (!mode_is_extended(mode))
        for (auto& a : m.adjustables) a.c = 0.0;
    return m;
}

// Aggregate response the surrogate would produce for one sample: its own
// flexible components plus the sample's predicted fixed profile, replayed
// under the sample's forecast prices.
inline Vec replay_response(const AggregateModel& m, const ResponseSample& s, ResponseMode mode,
                           const ReplayOptions& opt = {}) {
    AggregateModel replay = m;
    replay.fixed = s.p_fix_pred;
    const ResponseResult r =
        mode_is_dynamic(mode)
            ? simulate_dynamic_day(replay, s.prices, opt.t_dc, opt.t_ph, opt.forward)
            : solve_static_response(replay, s.prices, opt.forward);
    return r.p_agg;
}

// Mean squared l2 deviation over samples; nullopt flags a parameter vector
// whose forward problem is invalid or infeasible so the optimizer can skip it.
inline std::optional<double> identification_objective(const std::vector<ResponseSample>& samples,
                                                      const SurrogateSpec& surrogate,
                                                      const ThetaVector& theta, ResponseMode mode,
                                                      const ReplayOptions& opt = {}) {
    if (samples.empty()) throw std::invalid_argument("identification objective: no samples");
    const AggregateModel m = surrogate_at(surrogate, theta, mode);
    if (!validate_model(m).ok) return std::nullopt;
    double total = 0.0;
    for (const auto& s : samples) {
        try {
            total += (s.p_obs - replay_response(m, s, mode, opt)).squaredNorm();
        } catch (const InfeasibleResponse&) {
            return std::nullopt;
        }
    }
    return total / static_cast<double>(samples.size());
}

inline double nrmse(const std::vector<Vec>& truth, const std::vector<Vec>& est) {
    if (truth.empty() || truth.size() != est.size())
        throw std::invalid_argument("nrmse: shape mismatch");
    double ssq = 0.0, count = 0.0;
    double lo = kInf, hi = -kInf;
    for (size_t n = 0; n < truth.size(); ++n) {
        if (truth[n].size() != est[n].size()) throw std::invalid_argument("nrmse: shape mismatch");
        ssq += (truth[n] - est[n]).squaredNorm();
        count += static_cast<double>(truth[n].size());
        lo = std::min(lo, truth[n].minCoeff());
        hi = std::max(hi, truth[n].maxCoeff());
    }
    if (!(hi - lo > 0.0)) throw std::invalid_argument("nrmse: zero range in truth profiles");
    return std::sqrt(ssq / count) / (hi - lo);
}

// l2 distance between the two vectors after each is min-max scaled by its own
// box bounds. Coordinates whose box collapses in either vector are dropped.
inline double beta_deviation(const ThetaVector& a, const ThetaVector& b,
                             std::vector<int>* dropped = nullptr) {
    if (a.size() != b.size()) throw std::invalid_argument("beta: layout mismatch");
    for (int k = 0; k < a.size(); ++k)
        if (a.layout[k].kind != b.layout[k].kind || a.layout[k].index != b.layout[k].index ||
            a.layout[k].param != b.layout[k].param)
            throw std::invalid_argument("beta: layout mismatch");
    double ssq = 0.0;
    int kept = 0;
    for (int k = 0; k < a.size(); ++k) {
        const double ra = a.box_hi[k] - a.box_lo[k];
        const double rb = b.box_hi[k] - b.box_lo[k];
        if (!(ra > 0.0) || !(rb > 0.0)) {
            if (dropped) dropped->push_back(k);
            continue;
        }
        const double sa = (a.values[k] - a.box_lo[k]) / ra;
        const double sb = (b.values[k] - b.box_lo[k]) / rb;
        ssq += (sa - sb) * (sa - sb);
        ++kept;
    }
    if (kept == 0) throw std::invalid_argument("beta: all coordinates degenerate");
    return std::sqrt(ssq);
}

// ---------------------------------------------------------------------------
// Gaussian noise

namespace detail {

// Square root of a PSD covariance via symmetric eigendecomposition; tolerates
// singular matrices, rejects indefinite ones.
inline Mat psd_sqrt(const Mat& sigma, const char* name) {
    Eigen::SelfAdjointEigenSolver<Mat> es(sigma);
    const Vec evals = es.eigenvalues();
    const double scale = std::max(1.0, evals.cwiseAbs().maxCoeff());
    if (evals.minCoeff() < -1e-10 * scale)
        throw std::invalid_argument(std::string(name) + ": covariance not PSD");
    return es.eigenvectors() * evals.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

} // namespace detail

class NoiseSampler {
  public:
    NoiseSampler(const NoiseSpec& spec, int T) : spec_(spec), T_(T) {
        auto check_vec = [&](const Vec& v, const char* name) {
            if (v.size() != 0 && v.size() != T)
                throw std::invalid_argument(std::string(name) + ": dimension mismatch");
        };
        check_vec(spec.mu_agg, "mu_agg");
        check_vec(spec.mu_fix, "mu_fix");
        if (spec.sigma_agg.size() != 0 && !spec.proportional_factor) {
            if (spec.sigma_agg.rows() != T || spec.sigma_agg.cols() != T)
                throw std::invalid_argument("sigma_agg: dimension mismatch");
            agg_sqrt_ = detail::psd_sqrt(spec.sigma_agg, "sigma_agg");
        }
        if (spec.sigma_fix.size() != 0) {
            if (spec.sigma_fix.rows() != T || spec.sigma_fix.cols() != T)
                throw std::invalid_argument("sigma_fix: dimension mismatch");
            fix_sqrt_ = detail::psd_sqrt(spec.sigma_fix, "sigma_fix");
        }
    }

    ResponseSample apply(const ResponseSample& clean, Rng& rng) const {
        std::normal_distribution<double> normal(0.0, 1.0);
        ResponseSample out = clean;
        if (spec_.proportional_factor) {
            const double f = *spec_.proportional_factor;
            for (int t = 0; t < T_; ++t) {
                const double var = std::max(f * std::abs(clean.p_obs[t]), 1e-6);
                out.p_obs[t] += std::sqrt(var) * normal(rng);
            }
        } else if (agg_sqrt_.size() != 0) {
            Vec z(T_);
            for (int t = 0; t < T_; ++t) z[t] = normal(rng);
            out.p_obs += agg_sqrt_ * z;
        }
        if (spec_.mu_agg.size() != 0) out.p_obs += spec_.mu_agg;
        if (fix_sqrt_.size() != 0) {
            Vec z(T_);
            for (int t = 0; t < T_; ++t) z[t] = normal(rng);
            out.p_fix_pred += fix_sqrt_ * z;
        }
        if (spec_.mu_fix.size() != 0) out.p_fix_pred += spec_.mu_fix;
        return out;
    }

    // Expected contribution of the noise to the identification objective at
    // the true parameters: tr(Sigma_agg) + tr(Sigma_fix).
    double trace_target(const std::vector<Vec>& clean_obs) const {
        double tr = 0.0;
        if (spec_.proportional_factor) {
            double acc = 0.0;
            for (const auto& p : clean_obs)
                for (int t = 0; t < T_; ++t)
                    acc += std::max(*spec_.proportional_factor * std::abs(p[t]), 1e-6);
            tr += acc / static_cast<double>(clean_obs.size());
        } else if (spec_.sigma_agg.size() != 0) {
            tr += spec_.sigma_agg.trace();
        }
        if (spec_.sigma_fix.size() != 0) tr += spec_.sigma_fix.trace();
        return tr;
    }

  private:
    NoiseSpec spec_;
    int T_;
    Mat agg_sqrt_;
    Mat fix_sqrt_;
};

inline ResponseSample apply_noise(const ResponseSample& clean, const NoiseSpec& spec, Rng& rng) {
    return NoiseSampler(spec, static_cast<int>(clean.p_obs.size())).apply(clean, rng);
}

// ---------------------------------------------------------------------------
// Identification driver

struct IdentOptions {
    ReplayOptions replay;
    gp::HyperBounds eta_bounds;
};

struct IdentResult {
    ThetaVector theta_hat;
    double f_hat = 0.0;
    bayopt::OptTrace trace;
    double nrmse_train = 0.0;
    std::optional<double> nrmse_test;
};

namespace detail {

inline std::vector<Vec> collect(const std::vector<ResponseSample>& samples,
                                const AggregateModel& m, ResponseMode mode,
                                const ReplayOptions& opt, bool test_prices) {
    std::vector<Vec> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        ResponseSample rs = s;
        // Test-set evaluation replays under actual prices.
        if (test_prices) rs.prices.lambda_hat = rs.prices.lambda;
        out.push_back(replay_response(m, rs, mode, opt));
    }
    return out;
}

inline std::vector<Vec> observed(const std::vector<ResponseSample>& samples) {
    std::vector<Vec> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.p_obs);
    return out;
}

} // namespace detail

inline IdentResult identify(const std::vector<ResponseSample>& train,
                            const std::vector<ResponseSample>& test,
                            const SurrogateSpec& surrogate, const ThetaVector& box,
                            const bayopt::OptBudget& budget, ResponseMode mode, Rng& rng,
                            const IdentOptions& opt = {}) {
    if (train.empty()) throw std::invalid_argument("identify: empty training set");
    const auto objective = [&](const Vec& u) {
        return identification_objective(train, surrogate, theta_from_unit(box, u), mode,
                                        opt.replay);
    };
    // Steers the acquisition away from parameter combinations that violate
    // model invariants or cannot satisfy the storage energy constraints;
    // those never reach a forward solve.
    const bayopt::Validity valid = [&](const Vec& u) {
        const AggregateModel m = surrogate_at(surrogate, theta_from_unit(box, u), mode);
        return validate_model(m).ok && response_feasible(m, !mode_is_dynamic(mode));
    };
    IdentResult res;
    res.trace = bayopt::optimize(objective, box.size(), budget, opt.eta_bounds, rng, valid);
    res.theta_hat = theta_from_unit(box, res.trace.best_theta);
    res.f_hat = res.trace.best_f;
    const AggregateModel m = surrogate_at(surrogate, res.theta_hat, mode);
    res.nrmse_train =
        nrmse(detail::observed(train), detail::collect(train, m, mode, opt.replay, false));
    if (!test.empty())
        res.nrmse_test =
            nrmse(detail::observed(test), detail::collect(test, m, mode, opt.replay, true));
    return res;
}

// ---------------------------------------------------------------------------
// Noise-gap experiment

struct GapStats {
    int n_samples = 0;
    double mean_gap = 0.0;
    double se_gap = 0.0;
    double var_gap = 0.0;
    double target = 0.0;
    std::optional<double> theta_dev; // |theta_nd - theta_nf| on the unit cube
    std::optional<double> beta;      // box-scaled parameter deviation
};

struct GapOptions {
    ResponseMode mode = ResponseMode::Static;
    ReplayOptions replay;
    bool identify_trend = false;
    SurrogateSpec surrogate; // used only when identify_trend is set
    ThetaVector box;
    bayopt::OptBudget budget;
};

// For each sample count N: draws `trials` noisy datasets over the same clean
// days and reports statistics of f_nd(theta*) - f_nf(theta*). The flexible
// response at the true parameters does not depend on the fixed profile, so
// the per-day forward solve is shared across trials.
inline std::vector<GapStats> noise_gap_experiment(const AggregateModel& truth,
                                                  const NoiseSpec& spec,
                                                  const std::vector<PriceSignal>& prices,
                                                  const std::vector<int>& sample_counts,
                                                  int trials, Rng& rng,
                                                  const GapOptions& opt = {}) {
    if (sample_counts.empty() || trials < 2)
        throw std::invalid_argument("noise gap: need sample counts and trials >= 2");
    const int n_days = *std::max_element(sample_counts.begin(), sample_counts.end());
    if (static_cast<int>(prices.size()) < n_days)
        throw std::invalid_argument("noise gap: not enough price days");
    const int T = truth.grid.T;
    const NoiseSampler sampler(spec, T);

    std::vector<ResponseSample> clean(n_days);
    std::vector<Vec> flex(n_days);
    for (int d = 0; d < n_days; ++d) {
        const ResponseResult r =
            mode_is_dynamic(opt.mode)
                ? simulate_dynamic_day(truth, prices[d], opt.replay.t_dc, opt.replay.t_ph,
                                       opt.replay.forward)
                : solve_static_response(truth, prices[d], opt.replay.forward);
        clean[d] = {prices[d], r.p_agg, truth.fixed};
        flex[d] = r.p_agg - truth.fixed;
    }

    std::vector<GapStats> out;
    for (int count : sample_counts) {
        std::vector<double> gaps(trials);
        for (int trial = 0; trial < trials; ++trial) {
            double f_nd = 0.0, f_nf = 0.0;
            for (int d = 0; d < count; ++d) {
                const ResponseSample noisy = sampler.apply(clean[d], rng);
                f_nd += (noisy.p_obs - noisy.p_fix_pred - flex[d]).squaredNorm();
                f_nf += (clean[d].p_obs - clean[d].p_fix_pred - flex[d]).squaredNorm();
            }
            gaps[trial] = (f_nd - f_nf) / static_cast<double>(count);
        }
        GapStats st;
        st.n_samples = count;
        for (double g : gaps) st.mean_gap += g;
        st.mean_gap /= trials;
        double var = 0.0;
        for (double g : gaps) var += (g - st.mean_gap) * (g - st.mean_gap);
        st.var_gap = var / (trials - 1);
        st.se_gap = std::sqrt(st.var_gap / trials);
        std::vector<Vec> obs;
        for (int d = 0; d < count; ++d) obs.push_back(clean[d].p_obs);
        st.target = sampler.trace_target(obs);

        if (opt.identify_trend) {
            std::vector<ResponseSample> nf(clean.begin(), clean.begin() + count);
            std::vector<ResponseSample> nd;
            for (int d = 0; d < count; ++d) nd.push_back(sampler.apply(clean[d], rng));
            // Both runs share a search stream so the deviation reflects the
            // data, not the acquisition path.
            const uint64_t run_seed = rng();
            Rng rng_nf(run_seed), rng_nd(run_seed);
            const IdentResult r_nf =
                identify(nf, {}, opt.surrogate, opt.box, opt.budget, opt.mode, rng_nf);
            const IdentResult r_nd =
                identify(nd, {}, opt.surrogate, opt.box, opt.budget, opt.mode, rng_nd);
            st.theta_dev = (theta_to_unit(r_nf.theta_hat) - theta_to_unit(r_nd.theta_hat)).norm();
            st.beta = beta_deviation(r_nf.theta_hat, r_nd.theta_hat);
        }
        out.push_back(std::move(st));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Posterior slices

struct SlicePoint {
    Vec coords; // physical parameter values along the sliced dimensions
    double mean = 0.0;
    double sd = 0.0;
};

inline std::vector<SlicePoint> posterior_slice(const gp::GPState& state,
                                               const std::vector<int>& dims, int resolution,
                                               const Vec& fixed_unit_point,
                                               const ThetaVector& box) {
    if (dims.empty() || dims.size() > 2)
        throw std::invalid_argument("posterior slice: dims must have 1 or 2 entries");
    const int d = static_cast<int>(fixed_unit_point.size());
    for (int k : dims)
        if (k < 0 || k >= d) throw std::invalid_argument("posterior slice: dim out of range");
    if (resolution < 1) throw std::invalid_argument("posterior slice: resolution must be >= 1");

    auto grid_value = [&](int i) {
        return resolution == 1 ? 0.5 : static_cast<double>(i) / (resolution - 1);
    };
    auto physical = [&](int dim, double u) {
        return box.box_lo[dim] + u * (box.box_hi[dim] - box.box_lo[dim]);
    };
    const Vec weights = gp::posterior_weights(state);
    std::vector<SlicePoint> out;
    const int inner = dims.size() == 2 ? resolution : 1;
    for (int i = 0; i < resolution; ++i)
        for (int j = 0; j < inner; ++j) {
            Vec u = fixed_unit_point;
            u[dims[0]] = grid_value(i);
            if (dims.size() == 2) u[dims[1]] = grid_value(j);
            const gp::Posterior p = gp::posterior(state, u, weights);
            SlicePoint sp;
            sp.coords = Vec(static_cast<Eigen::Index>(dims.size()));
            sp.coords[0] = physical(dims[0], u[dims[0]]);
            if (dims.size() == 2) sp.coords[1] = physical(dims[1], u[dims[1]]);
            sp.mean = p.mean;
            sp.sd = p.sd();
            out.push_back(std::move(sp));
        }
    return out;
}

} // namespace flexload::ident
