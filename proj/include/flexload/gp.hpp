#pragma once

// Gaussian-process surrogate on the unit cube: Matern-5/2 kernel with an
// additive index-matched noise term, exact posterior through a maintained
// Cholesky factor and its inverse, log marginal likelihood, and multi-start
// Nelder-Mead evidence maximization for the hyperparameters. The factor pair
// (L, L^-1) grows in place by a bordered O(n^2) update so the surrogate can
// absorb new evaluations without refitting. Prior mean is zero on whatever
// scale y is given in; callers standardize.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "flexload/common.hpp"

namespace flexload::gp {

struct Hyperparams {
    double alpha = 1.0; // signal variance
    double beta = 1.0;  // length scale
    double eps = 0.1;   // noise standard deviation
};

struct Posterior {
    double mean = 0.0;
    double variance = 0.0;
    double sd() const { return std::sqrt(variance); }
};

struct FactorizationError : std::runtime_error {
    explicit FactorizationError(const std::string& what) : std::runtime_error(what) {}
};

inline double matern_kernel(const Hyperparams& eta, const Vec& xi, const Vec& xj,
                            bool same_index) {
    if (xi.size() != xj.size())
        throw std::invalid_argument("matern_kernel: dimension mismatch");
    const double r = (xi - xj).norm();
    const double s = std::sqrt(5.0) * r / eta.beta;
    double k = eta.alpha * (1.0 + s + s * s / 3.0) * std::exp(-s);
    if (same_index) k += eta.eps * eta.eps;
    return k;
}

inline Mat gram_matrix(const std::vector<Vec>& x, const Hyperparams& eta) {
    const int n = static_cast<int>(x.size());
    Mat k(n, n);
    for (int i = 0; i < n; ++i) {
        k(i, i) = eta.alpha + eta.eps * eta.eps;
        for (int j = 0; j < i; ++j) {
            const double v = matern_kernel(eta, x[i], x[j], false);
            k(i, j) = v;
            k(j, i) = v;
        }
    }
    return k;
}

// Lower-triangular factor stored packed by rows, so growing by one row is an
// amortized push-back instead of an O(n^2) matrix reallocation per append.
class TriFactor {
  public:
    TriFactor() = default;

    static TriFactor from_dense(const Mat& m) {
        TriFactor t;
        t.n_ = static_cast<int>(m.rows());
        t.a_.reserve(static_cast<size_t>(t.n_) * (t.n_ + 1) / 2);
        for (int i = 0; i < t.n_; ++i)
            for (int j = 0; j <= i; ++j) t.a_.push_back(m(i, j));
        return t;
    }

    int size() const { return n_; }

    double operator()(int i, int j) const {
        return j > i ? 0.0 : a_[static_cast<size_t>(i) * (i + 1) / 2 + j];
    }

    // Appends the row [head..., diag].
    void push_row(const Vec& head, double diag) {
        a_.insert(a_.end(), head.begin(), head.end());
        a_.push_back(diag);
        ++n_;
    }

    Vec diagonal() const {
        Vec d(n_);
        for (int i = 0; i < n_; ++i) d[i] = (*this)(i, i);
        return d;
    }

    // this * v
    Vec matvec(const Vec& v) const {
        Vec out(n_);
        const double* row = a_.data();
        for (int i = 0; i < n_; ++i) {
            double acc = 0.0;
            for (int j = 0; j <= i; ++j) acc += row[j] * v[j];
            out[i] = acc;
            row += i + 1;
        }
        return out;
    }

    // this' * v
    Vec tmatvec(const Vec& v) const {
        Vec out = Vec::Zero(n_);
        const double* row = a_.data();
        for (int i = 0; i < n_; ++i) {
            const double vi = v[i];
            for (int j = 0; j <= i; ++j) out[j] += row[j] * vi;
            row += i + 1;
        }
        return out;
    }

    // Forward substitution: this * z = b.
    Vec solve(const Vec& b) const {
        Vec z(n_);
        const double* row = a_.data();
        for (int i = 0; i < n_; ++i) {
            double acc = b[i];
            for (int j = 0; j < i; ++j) acc -= row[j] * z[j];
            z[i] = acc / row[i];
            row += i + 1;
        }
        return z;
    }

    Mat dense() const {
        Mat m = Mat::Zero(n_, n_);
        for (int i = 0; i < n_; ++i)
            for (int j = 0; j <= i; ++j) m(i, j) = (*this)(i, j);
        return m;
    }

  private:
    std::vector<double> a_;
    int n_ = 0;
};

inline double max_abs_diff(const TriFactor& a, const TriFactor& b) {
    if (a.size() != b.size()) return kInf;
    double worst = 0.0;
    for (int i = 0; i < a.size(); ++i)
        for (int j = 0; j <= i; ++j) worst = std::max(worst, std::abs(a(i, j) - b(i, j)));
    return worst;
}

namespace detail {

// Lower Cholesky with a diagonal jitter ladder, 1e-12 to 1e-6 of the diagonal
// scale.
inline Mat cholesky_with_jitter(const Mat& k) {
    const double scale = std::max(1.0, k.diagonal().cwiseAbs().maxCoeff());
    double jitter = 0.0;
    while (true) {
        Eigen::LLT<Mat> llt(jitter == 0.0 ? k
                                          : Mat(k + jitter * Mat::Identity(k.rows(), k.cols())));
        if (llt.info() == Eigen::Success) return llt.matrixL();
        jitter = jitter == 0.0 ? 1e-12 * scale : jitter * 10.0;
        if (jitter > 1e-6 * scale)
            throw FactorizationError("gram matrix not PD within jitter ladder");
    }
}

} // namespace detail

struct GPState {
    std::vector<Vec> x; // evaluated points, unit-cube scale
    Vec y;
    Hyperparams eta;
    TriFactor l;     // factor of gram_matrix(x, eta)
    TriFactor l_inv; // its inverse, maintained alongside

    int size() const { return static_cast<int>(x.size()); }
};

inline GPState gp_fit(std::vector<Vec> x, Vec y, const Hyperparams& eta) {
    if (x.empty() || y.size() != static_cast<Eigen::Index>(x.size()))
        throw std::invalid_argument("gp_fit: need n >= 1 matching points and values");
    if (eta.eps == 0.0) {
        // Without the noise term, coincident points make the gram matrix
        // exactly singular; jitter would mask that rather than fix it.
        for (size_t i = 0; i < x.size(); ++i)
            for (size_t j = i + 1; j < x.size(); ++j)
                if ((x[i] - x[j]).norm() == 0.0)
                    throw FactorizationError("gp_fit: duplicate points with zero noise");
    }
    GPState s;
    const Mat l_dense = detail::cholesky_with_jitter(gram_matrix(x, eta));
    const int n = static_cast<int>(x.size());
    s.l = TriFactor::from_dense(l_dense);
    s.l_inv = TriFactor::from_dense(
        l_dense.triangularView<Eigen::Lower>().solve(Mat::Identity(n, n)));
    s.x = std::move(x);
    s.y = std::move(y);
    s.eta = eta;
    return s;
}

// Bordered update: grows the factor of K_n to the factor of
// [[K_n, k_vec], [k_vec', k_scalar]] together with its inverse, using only
// the stored pair. Two triangular products and a row push, so O(n^2).
inline void chol_append(TriFactor& l, TriFactor& l_inv, const Vec& k_vec, double k_scalar) {
    const int n = l.size();
    if (k_vec.size() != n) throw std::invalid_argument("chol_append: k_vec length mismatch");
    const Vec w = l_inv.matvec(k_vec); // row L21 transposed
    double schur = k_scalar - w.squaredNorm();
    if (schur <= 0.0) {
        const double scale = std::max(1.0, std::abs(k_scalar));
        double jitter = 1e-12 * scale;
        while (schur + jitter <= 0.0 && jitter <= 1e-6 * scale) jitter *= 10.0;
        if (schur + jitter <= 0.0)
            throw FactorizationError("chol_append: nonpositive Schur complement");
        schur += jitter;
    }
    const double l22 = std::sqrt(schur);
    const Vec bottom_inv = (-1.0 / l22) * l_inv.tmatvec(w);
    l.push_row(w, l22);
    l_inv.push_row(bottom_inv, 1.0 / l22);
}

inline void append_point(GPState& s, const Vec& x_new, double y_new) {
    const int n = s.size();
    Vec k_vec(n);
    for (int i = 0; i < n; ++i) k_vec[i] = matern_kernel(s.eta, s.x[i], x_new, false);
    chol_append(s.l, s.l_inv, k_vec, s.eta.alpha + s.eta.eps * s.eta.eps);
    s.x.push_back(x_new);
    s.y.conservativeResize(n + 1);
    s.y[n] = y_new;
}

// K^{-1} y; reusing this across posterior calls on a fixed state saves a
// matrix-vector product per call.
inline Vec posterior_weights(const GPState& s) {
    return s.l_inv.tmatvec(s.l_inv.matvec(s.y));
}

inline Posterior posterior(const GPState& s, const Vec& theta, const Vec& weights) {
    const int n = s.size();
    Vec k_vec(n);
    for (int i = 0; i < n; ++i) k_vec[i] = matern_kernel(s.eta, s.x[i], theta, false);
    Posterior p;
    p.mean = k_vec.dot(weights);
    const Vec w = s.l_inv.matvec(k_vec);
    // Latent-value variance: the test-point prior term carries no noise.
    p.variance = std::max(0.0, s.eta.alpha - w.squaredNorm());
    return p;
}

inline Posterior posterior(const GPState& s, const Vec& theta) {
    return posterior(s, theta, posterior_weights(s));
}

inline double log_marginal_likelihood(const std::vector<Vec>& x, const Vec& y,
                                      const Hyperparams& eta) {
    const int n = static_cast<int>(x.size());
    if (n < 1 || y.size() != n)
        throw std::invalid_argument("log_marginal_likelihood: bad sizes");
    const Mat l = detail::cholesky_with_jitter(gram_matrix(x, eta));
    const Vec z = l.triangularView<Eigen::Lower>().solve(y);
    return -0.5 * z.squaredNorm() - l.diagonal().array().log().sum() -
           0.5 * n * std::log(2.0 * M_PI);
}

struct HyperBounds {
    double alpha_lo = 1e-4, alpha_hi = 1e4;
    double beta_lo = 1e-3, beta_hi = 1e2;
    double eps_lo = 1e-6, eps_hi = 1e1;
};

namespace detail {

// Nelder-Mead minimization in a box, vertices clamped into bounds.
inline Vec nelder_mead(const std::function<double(const Vec&)>& f, const Vec& start,
                       const Vec& lo, const Vec& hi, int max_iter) {
    const int d = static_cast<int>(start.size());
    auto clamp = [&](Vec v) {
        for (int k = 0; k < d; ++k) v[k] = std::clamp(v[k], lo[k], hi[k]);
        return v;
    };
    std::vector<Vec> pts(d + 1);
    std::vector<double> vals(d + 1);
    pts[0] = clamp(start);
    vals[0] = f(pts[0]);
    for (int k = 0; k < d; ++k) {
        Vec v = pts[0];
        const double step = 0.2 * (hi[k] - lo[k]);
        v[k] = v[k] + step <= hi[k] ? v[k] + step : v[k] - step;
        pts[k + 1] = clamp(v);
        vals[k + 1] = f(pts[k + 1]);
    }
    auto order = [&] {
        for (int a = 0; a <= d; ++a)
            for (int b = a + 1; b <= d; ++b)
                if (vals[b] < vals[a]) {
                    std::swap(vals[a], vals[b]);
                    std::swap(pts[a], pts[b]);
                }
    };
    order();
    for (int iter = 0; iter < max_iter; ++iter) {
        if (std::abs(vals[d] - vals[0]) <= 1e-10 * (1.0 + std::abs(vals[0]))) break;
        Vec centroid = Vec::Zero(d);
        for (int a = 0; a < d; ++a) centroid += pts[a];
        centroid /= d;
        const Vec refl = clamp(centroid + (centroid - pts[d]));
        const double f_refl = f(refl);
        if (f_refl < vals[0]) {
            const Vec expd = clamp(centroid + 2.0 * (centroid - pts[d]));
            const double f_exp = f(expd);
            if (f_exp < f_refl) {
                pts[d] = expd;
                vals[d] = f_exp;
            } else {
                pts[d] = refl;
                vals[d] = f_refl;
            }
        } else if (f_refl < vals[d - 1]) {
            pts[d] = refl;
            vals[d] = f_refl;
        } else {
            const Vec contr = clamp(centroid + 0.5 * (pts[d] - centroid));
            const double f_con = f(contr);
            if (f_con < vals[d]) {
                pts[d] = contr;
                vals[d] = f_con;
            } else {
                for (int a = 1; a <= d; ++a) {
                    pts[a] = clamp(pts[0] + 0.5 * (pts[a] - pts[0]));
                    vals[a] = f(pts[a]);
                }
            }
        }
        order();
    }
    return pts[0];
}

} // namespace detail

inline Hyperparams tune_hyperparameters(const std::vector<Vec>& x, const Vec& y,
                                        const HyperBounds& bounds, int restarts, Rng& rng) {
    if (x.size() < 2) throw std::invalid_argument("tune_hyperparameters: need n >= 2");
    Vec lo(3), hi(3);
    lo << std::log(bounds.alpha_lo), std::log(bounds.beta_lo), std::log(bounds.eps_lo);
    hi << std::log(bounds.alpha_hi), std::log(bounds.beta_hi), std::log(bounds.eps_hi);

    auto neg_lml = [&](const Vec& u) {
        const Hyperparams eta{std::exp(u[0]), std::exp(u[1]), std::exp(u[2])};
        try {
            return -log_marginal_likelihood(x, y, eta);
        } catch (const FactorizationError&) {
            return kInf;
        }
    };

    std::uniform_real_distribution<double> unif(0.0, 1.0);
    bool any_ok = false;
    double best_val = kInf;
    Vec best_u;
    for (int r = 0; r < restarts; ++r) {
        Vec u0(3);
        if (r == 0)
            u0 = 0.5 * (lo + hi);
        else
            for (int k = 0; k < 3; ++k) u0[k] = lo[k] + unif(rng) * (hi[k] - lo[k]);
        if (!std::isfinite(neg_lml(u0))) continue;
        const Vec u = detail::nelder_mead(neg_lml, u0, lo, hi, 300);
        const double v = neg_lml(u);
        if (std::isfinite(v)) {
            any_ok = true;
            if (v < best_val) {
                best_val = v;
                best_u = u;
            }
        }
    }
    if (!any_ok) throw FactorizationError("tune_hyperparameters: all restarts failed");
    return {std::exp(best_u[0]), std::exp(best_u[1]), std::exp(best_u[2])};
}

} // namespace flexload::gp
