#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "thresh2d/discretize.hpp"
#include "thresh2d/errors.hpp"
#include "thresh2d/fit.hpp"
#include "thresh2d/parallel.hpp"
#include "thresh2d/quadrature.hpp"

namespace thresh2d::kernelbounds {

using discretize::bracket;
using discretize::GridPtr;
using discretize::Point;
using discretize::QuadratureGrid;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// |K(x, y)| with optional declared decay exponents: |K| <~ |y|^{-row_decay} for fixed x
/// and |x|^{-col_decay} for fixed y.
struct KernelFunction {
    std::string name;
    std::function<double(Point, Point)> eval;
    bool symmetric = false;
    std::optional<double> row_decay, col_decay;
};

/// Polar grid with composite radial Gauss-Legendre panels of unit length (4 nodes each).
inline GridPtr build_panel_grid(double R, int n_theta = 16, int nodes_per_panel = 4) {
    if (!(R > 0.0)) throw domain_error("panel grid: R must be positive");
    auto g = std::make_shared<QuadratureGrid>();
    g->R = R;
    g->n_theta = n_theta;
    const int panels = std::max(1, static_cast<int>(std::ceil(R)));
    const auto rule = quad::gauss_legendre(nodes_per_panel);
    const double h = R / panels;
    for (int p = 0; p < panels; ++p)
        for (int k = 0; k < nodes_per_panel; ++k) {
            g->radii.push_back(h * (p + 0.5 + 0.5 * rule.nodes[k]));
            g->radial_weights.push_back(0.5 * h * rule.weights[k]);
        }
    g->n_r = static_cast<int>(g->radii.size());
    const double dt = 2.0 * std::numbers::pi / n_theta;
    for (int a = 0; a < g->n_r; ++a)
        for (int q = 0; q < n_theta; ++q) {
            const double t = g->angle(q);
            g->nodes.push_back({g->radii[a] * std::cos(t), g->radii[a] * std::sin(t)});
            g->weights.push_back(g->radial_weights[a] * g->radii[a] * dt);
        }
    return g;
}

/// Dense |K(x_i, y_j)|.
inline MatrixXd kernel_matrix(const KernelFunction& k, const QuadratureGrid& g, int jobs = 0) {
    const auto n = static_cast<Eigen::Index>(g.size());
    MatrixXd m(n, n);
    parallel_for(g.size(), [&](std::size_t i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const double v = std::abs(k.eval(g.nodes[i], g.nodes[static_cast<std::size_t>(j)]));
            if (!std::isfinite(v)) {
                std::ostringstream msg;
                msg << "kernel " << k.name << " not finite at node pair (" << i << ", " << j << ")";
                throw evaluation_error(msg.str());
            }
            m(static_cast<Eigen::Index>(i), j) = v;
        }
    }, jobs);
    return m;
}

// ---------------------------------------------------------------------------
// Admissibility

struct Admissibility {
    double row_sup = 0.0, col_sup = 0.0;
    double row_tail = 0.0, col_tail = 0.0;  // from declared decay
    bool admissible = true;
    std::string reason;
};

namespace detail {
/// Tail of int_{|y| > R} |y|^{-d} dy scaled by the kernel size at |y| = R.
inline double tail(double at_R, double R, std::optional<double> d) {
    if (!d) return 0.0;
    if (*d <= 2.0) return std::numeric_limits<double>::infinity();
    return at_R * 2.0 * std::numbers::pi * R * R / (*d - 2.0);
}
}  // namespace detail

/// Row sup = sup_x int |K(x, y)| dy, col sup = sup_y int |K(x, y)| dx, on one grid.
inline Admissibility admissibility(const KernelFunction& k, const QuadratureGrid& g, int jobs = 0) {
    const MatrixXd m = kernel_matrix(k, g, jobs);
    const VectorXd w = Eigen::Map<const VectorXd>(g.weights.data(), static_cast<Eigen::Index>(g.size()));
    const VectorXd rows = m * w;
    const VectorXd cols = m.transpose() * w;
    Admissibility a;
    a.row_sup = rows.maxCoeff();
    a.col_sup = cols.maxCoeff();
    // kernel size on the boundary circle, sampled in 8 directions
    double at_r = 0.0, at_c = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
        for (int q = 0; q < 8; ++q) {
            const double t = 2.0 * std::numbers::pi * q / 8;
            const Point b{g.R * std::cos(t), g.R * std::sin(t)};
            at_r = std::max(at_r, std::abs(k.eval(g.nodes[i], b)));
            at_c = std::max(at_c, std::abs(k.eval(b, g.nodes[i])));
        }
    a.row_tail = detail::tail(at_r, g.R, k.row_decay);
    a.col_tail = detail::tail(at_c, g.R, k.col_decay);
    if (!std::isfinite(a.row_tail) || !std::isfinite(a.col_tail)) {
        a.admissible = false;
        std::ostringstream msg;
        msg << "divergent tail: declared decay exponents " << k.row_decay.value_or(0.0) << " / "
            << k.col_decay.value_or(0.0) << " do not exceed 2";
        a.reason = msg.str();
    }
    return a;
}

struct AdmissibilitySweep {
    std::vector<double> radii, row_sups, col_sups;
    double row_slope = 0.0, col_slope = 0.0;  // log-log growth in R
    bool admissible = true;
    std::string reason;
};

/// Repeats the check on growing disks; a sup growing like R^slope with slope above
/// `max_slope` means the kernel is not admissible.
inline AdmissibilitySweep admissibility_sweep(const KernelFunction& k, const std::vector<double>& radii, int n_theta = 16,
                                              int nodes_per_panel = 4, double max_slope = 0.25, int jobs = 0) {
    AdmissibilitySweep s;
    s.radii = radii;
    for (double R : radii) {
        const auto a = admissibility(k, *build_panel_grid(R, n_theta, nodes_per_panel), jobs);
        s.row_sups.push_back(a.row_sup + a.row_tail);
        s.col_sups.push_back(a.col_sup + a.col_tail);
        if (!a.admissible) {
            s.admissible = false;
            s.reason = a.reason;
        }
    }
    if (radii.size() >= 2 && s.admissible) {
        s.row_slope = loglog_slope(radii, s.row_sups);
        s.col_slope = loglog_slope(radii, s.col_sups);
        if (s.row_slope > max_slope || s.col_slope > max_slope) {
            s.admissible = false;
            std::ostringstream msg;
            msg << "row/column sups grow with the domain radius, exponents " << s.row_slope << " / " << s.col_slope;
            s.reason = msg.str();
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// L^p test kernels

inline KernelFunction k1_kernel() {
    return {"K1", [](Point x, Point y) { return 1.0 / (bracket(x.norm()) * std::pow(bracket(x.norm() - y.norm()), 2)); }, false,
            std::nullopt, std::nullopt};
}

inline KernelFunction k2_kernel(double eps = 0.1) {
    if (!(eps > 0.0 && eps < 1.0)) throw domain_error("K2: eps must lie in (0, 1)");
    return {"K2",
            [eps](Point x, Point y) {
                const double a = x.norm(), b = y.norm();
                return 1.0 / (std::pow(bracket(a), 1.0 - eps) * bracket(a - b) * bracket(a + b));
            },
            false, std::nullopt, std::nullopt};
}

/// 1 / (<|x| - |y|>^2 (<x><y>)^{1/2})
inline KernelFunction error_kernel() {
    return {"error", [](Point x, Point y) {
                const double a = x.norm(), b = y.norm();
                return 1.0 / (std::pow(bracket(a - b), 2) * std::sqrt(bracket(a) * bracket(b)));
            },
            true, std::nullopt, std::nullopt};
}

/// Restriction to the region |y| < |x| / 2.
inline KernelFunction restrict_inner(KernelFunction k) {
    auto f = k.eval;
    k.name += "|y|<|x|/2";
    k.eval = [f](Point x, Point y) { return y.norm() < 0.5 * x.norm() ? f(x, y) : 0.0; };
    k.symmetric = false;
    return k;
}

// ---------------------------------------------------------------------------
// Empirical p -> p norms

inline double lp_norm(const VectorXd& f, const QuadratureGrid& g, double p) {
    quad::NeumaierSum<double> s;
    for (Eigen::Index i = 0; i < f.size(); ++i) s.add(g.weights[static_cast<std::size_t>(i)] * std::pow(std::abs(f(i)), p));
    return std::pow(s.value(), 1.0 / p);
}

/// 64 test profiles: fixed-scale bumps, annuli and power profiles, plus disks that
/// fill a fraction of the domain. All are sampled at the grid nodes.
inline std::vector<VectorXd> test_dictionary(const QuadratureGrid& g) {
    std::vector<std::function<double(Point)>> fs;
    for (double c : {0.0, 1.0, 2.0, 4.0})
        for (double w : {0.5, 1.0, 2.0, 4.0})
            fs.push_back([c, w](Point x) { return std::exp(-(std::pow(x.x1 - c, 2) + x.x2 * x.x2) / (w * w)); });
    for (double c : {1.0, 3.0, 6.0, 10.0})
        for (double w : {0.5, 1.0, 2.0, 4.0})
            fs.push_back([c, w](Point x) { return std::exp(-std::pow(x.norm() - c, 2) / (w * w)); });
    for (double a : {0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 6.0}) {
        fs.push_back([a](Point x) { return std::pow(bracket(x.norm()), -a); });
        fs.push_back([a](Point x) { return std::pow(bracket(x.norm()), -a) * std::cos(std::atan2(x.x2, x.x1)); });
    }
    for (double frac : {0.125, 0.25, 0.5, 1.0})
        for (int m = 0; m < 4; ++m) {
            const double rad = frac * g.R;
            fs.push_back([rad, m](Point x) {
                const double t = std::clamp(x.norm() - rad + 1.0, 0.0, 1.0);  // unit-width edge
                return 0.5 * (1.0 + std::cos(std::numbers::pi * t)) * std::cos(m * std::atan2(x.x2, x.x1));
            });
        }
    std::vector<VectorXd> out;
    for (const auto& f : fs) {
        VectorXd v(static_cast<Eigen::Index>(g.size()));
        for (std::size_t i = 0; i < g.size(); ++i) v(static_cast<Eigen::Index>(i)) = f(g.nodes[i]);
        out.push_back(std::move(v));
    }
    return out;
}

/// Largest singular value of W^{1/2} K W^{1/2} by power iteration on its Gram matrix.
inline double power_iteration_norm(const MatrixXd& a, int iters = 200, double tol = 1e-10) {
    VectorXd x = VectorXd::Ones(a.cols()).normalized();
    double prev = 0.0, est = 0.0;
    for (int k = 0; k < iters; ++k) {
        const VectorXd y = a.transpose() * (a * x);
        est = std::sqrt(y.norm());
        if (est == 0.0) return 0.0;
        x = y / y.norm();
        if (std::abs(est - prev) < tol * est) break;
        prev = est;
    }
    return est;
}

struct LpNorms {
    double R = 0.0;
    std::vector<double> p;
    std::vector<double> norm;        // dictionary max (and power iteration at p = 2)
    std::vector<int> best_profile;   // dictionary index, -1 for power iteration
    double power_norm = 0.0;
};

inline LpNorms empirical_lp_norms(const KernelFunction& k, const QuadratureGrid& g, const std::vector<double>& ps, int jobs = 0) {
    const MatrixXd m = kernel_matrix(k, g, jobs);
    const VectorXd w = Eigen::Map<const VectorXd>(g.weights.data(), static_cast<Eigen::Index>(g.size()));
    const auto dict = test_dictionary(g);
    LpNorms out;
    out.R = g.R;
    out.p = ps;
    std::vector<VectorXd> images(dict.size());
    parallel_for(dict.size(), [&](std::size_t d) { images[d] = m * w.cwiseProduct(dict[d]); }, jobs);
    const VectorXd sw = w.cwiseSqrt();
    out.power_norm = power_iteration_norm(sw.asDiagonal() * m * sw.asDiagonal());
    for (double p : ps) {
        double best = 0.0;
        int arg = 0;
        for (std::size_t d = 0; d < dict.size(); ++d) {
            const double den = lp_norm(dict[d], g, p);
            if (den <= 0.0) continue;
            const double r = lp_norm(images[d], g, p) / den;
            if (r > best) {
                best = r;
                arg = static_cast<int>(d);
            }
        }
        if (p == 2.0 && out.power_norm > best) {
            best = out.power_norm;
            arg = -1;
        }
        out.norm.push_back(best);
        out.best_profile.push_back(arg);
    }
    return out;
}

struct LpLemmaCheck {
    std::string which;
    std::vector<LpNorms> per_radius;
    std::vector<double> max_change;  // per p, over consecutive radius doublings
    bool stable = true;
};

/// Empirical p -> p norms over growing disks; stable when every R -> 2R step changes
/// the estimate by less than `threshold`.
/// Empirical p-norms of k over growing disks; stable when each R -> 2R change is below threshold.
inline LpLemmaCheck lp_stability_check(const KernelFunction& k, const std::vector<double>& ps, const std::vector<double>& radii,
                                       double threshold = 0.1, int n_theta = 16, int jobs = 0) {
    for (double p : ps)
        if (!(p >= 1.0)) throw domain_error("lp check: p must be >= 1");
    LpLemmaCheck c;
    c.which = k.name;
    for (double R : radii) c.per_radius.push_back(empirical_lp_norms(k, *build_panel_grid(R, n_theta), ps, jobs));
    c.max_change.assign(ps.size(), 0.0);
    for (std::size_t i = 1; i < c.per_radius.size(); ++i)
        for (std::size_t j = 0; j < ps.size(); ++j) {
            const double a = c.per_radius[i - 1].norm[j], b = c.per_radius[i].norm[j];
            c.max_change[j] = std::max(c.max_change[j], std::abs(b - a) / a);
        }
    for (double d : c.max_change)
        if (!(d < threshold)) c.stable = false;
    return c;
}

inline LpLemmaCheck lp_kernel_lemma_check(const std::string& which, const std::vector<double>& ps,
                                          const std::vector<double>& radii, double eps = 0.1, double threshold = 0.1,
                                          int n_theta = 16, int jobs = 0) {
    if (which == "K1") return lp_stability_check(k1_kernel(), ps, radii, threshold, n_theta, jobs);
    if (which == "K2") return lp_stability_check(k2_kernel(eps), ps, radii, threshold, n_theta, jobs);
    throw domain_error("lp check: unknown kernel '" + which + "'");
}

// ---------------------------------------------------------------------------
// Bracket convolution decay

/// int_{R^2} <x - x1>^{-alpha} <x1>^{-beta} dx1 at |x| = X.
inline double bracket_convolution(double alpha, double beta, double X, double rel_tol = 1e-10) {
    if (!(alpha > 0.0 && beta > 0.0 && alpha + beta > 2.0)) throw domain_error("bracket convolution: need alpha, beta > 0 and alpha + beta > 2");
    auto inner = [&](double rho) {
        // 2 int_0^pi (1 + X^2 + rho^2 - 2 X rho cos t)^{-alpha/2} dt, peaked at t = 0 when rho ~ X
        const double base = 1.0 + (X - rho) * (X - rho);
        auto f = [&](double t) {
            const double s = std::sin(0.5 * t);
            return std::pow(base + 4.0 * X * rho * s * s, -0.5 * alpha);
        };
        std::vector<double> bp{0.0};
        const double w = 1.0 / std::max(1.0, std::sqrt(X * rho));
        for (double t = w; t < std::numbers::pi; t *= 4.0) bp.push_back(t);
        bp.push_back(std::numbers::pi);
        return 2.0 * quad::integrate_adaptive(f, bp, 1e-12, 0.0, 100000).value;
    };
    auto radial = [&](double rho) { return rho * std::pow(bracket(rho), -beta) * inner(rho); };
    // finite part on [0, rho_hi], log variable above, analytic far tail
    const double rho_hi = 2.0 * X + 10.0;
    std::vector<double> bp{0.0};
    for (double r = 0.5; r < rho_hi; r *= 2.0) {
        if (std::abs(r - X) > 2.0) bp.push_back(r);
    }
    for (double d : {-8.0, -2.0, -0.5, 0.0, 0.5, 2.0, 8.0})
        if (X + d > 0.0 && X + d < rho_hi) bp.push_back(X + d);
    bp.push_back(rho_hi);
    std::sort(bp.begin(), bp.end());
    const double near = quad::integrate_adaptive(radial, bp, rel_tol, 0.0, 200000).value;
    const double top = 1e12 * std::max(1.0, X);
    std::vector<double> tb;
    for (double t = std::log(rho_hi); t < std::log(top); t += 2.0) tb.push_back(t);
    tb.push_back(std::log(top));
    const double far = quad::integrate_adaptive([&](double t) { const double r = std::exp(t); return r * radial(r); }, tb, rel_tol, 0.0, 200000).value;
    const double tail = 2.0 * std::numbers::pi * std::pow(top, 2.0 - alpha - beta) / (alpha + beta - 2.0);
    return near + far + tail;
}

struct BracketDecay {
    double alpha = 0.0, beta = 0.0;
    double predicted = 0.0;  // min(alpha, beta, alpha + beta - 2)
    double fitted = 0.0;
    double at_origin = 0.0;
    std::vector<double> x, value;
    bool passed = false;
};

inline std::vector<double> default_bracket_samples() { return {1e4, 3e4, 1e5, 3e5, 1e6}; }

/// Fitted decay exponent of the convolution over the given |x| samples.
inline BracketDecay bracket_decay_check(double alpha, double beta, const std::vector<double>& xs = default_bracket_samples(),
                                        double tol = 0.05, int jobs = 0) {
    if (alpha == 2.0 || beta == 2.0) throw domain_error("bracket decay: alpha and beta must differ from 2");
    BracketDecay b;
    b.alpha = alpha;
    b.beta = beta;
    b.predicted = std::min({alpha, beta, alpha + beta - 2.0});
    b.x = xs;
    b.value.resize(xs.size());
    parallel_for(xs.size(), [&](std::size_t i) { b.value[i] = bracket_convolution(alpha, beta, xs[i]); }, jobs);
    b.at_origin = bracket_convolution(alpha, beta, 0.0);
    std::vector<double> bx;
    for (double x : xs) bx.push_back(bracket(x));
    b.fitted = -loglog_slope(bx, b.value);
    b.passed = std::abs(b.fitted - b.predicted) <= tol && std::isfinite(b.at_origin);
    return b;
}

// ---------------------------------------------------------------------------
// Schur test

struct SchurBound {
    double bound = std::numeric_limits<double>::infinity();
    double weight_exponent = 0.0;  // optimizing a in h = <x>^{-a}
};

/// min over a of sqrt(C1 C2) with C1 = max_i sum_j w_j |K_ij| h_j / h_i and the
/// transposed counterpart, h = <x>^{-a}. `abs_kernel` holds |K(x_i, y_j)|.
inline SchurBound schur_norm(const MatrixXd& abs_kernel, const QuadratureGrid& g,
                             const std::vector<double>& exponents = {0.0, 0.5, 1.0, 1.5, 2.0, 3.0}) {
    const auto n = static_cast<Eigen::Index>(g.size());
    const VectorXd w = Eigen::Map<const VectorXd>(g.weights.data(), n);
    SchurBound best;
    for (double a : exponents) {
        VectorXd h(n);
        for (Eigen::Index i = 0; i < n; ++i) h(i) = std::pow(bracket(g.nodes[static_cast<std::size_t>(i)].norm()), -a);
        const VectorXd rows = (abs_kernel * w.cwiseProduct(h)).cwiseQuotient(h);
        const VectorXd cols = (abs_kernel.transpose() * w.cwiseProduct(h)).cwiseQuotient(h);
        const double b = std::sqrt(rows.maxCoeff() * cols.maxCoeff());
        if (b < best.bound) best = {b, a};
    }
    return best;
}

inline SchurBound schur_norm(const KernelFunction& k, const QuadratureGrid& g, const std::vector<double>& exponents = {0.0, 0.5, 1.0, 1.5, 2.0, 3.0}) {
    return schur_norm(kernel_matrix(k, g), g, exponents);
}

/// CSV: parameter, value, bound, verdict.
struct CsvRow {
    std::string parameter;
    double value = 0.0, bound = 0.0;
    bool pass = false;
};

inline void write_csv(std::ostream& os, const std::vector<CsvRow>& rows) {
    os << "parameter,value,bound,verdict\n";
    os.precision(12);
    for (const auto& r : rows) os << r.parameter << ',' << r.value << ',' << r.bound << ',' << (r.pass ? "pass" : "fail") << '\n';
}

}  // namespace thresh2d::kernelbounds
