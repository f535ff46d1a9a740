#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <memory>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "thresh2d/errors.hpp"
#include "thresh2d/fit.hpp"
#include "thresh2d/parallel.hpp"
#include "thresh2d/quadrature.hpp"
#include "thresh2d/specfun.hpp"

namespace thresh2d::oscint {

using cplx = std::complex<double>;

// ---------------------------------------------------------------------------
// Cutoff

/// chi(lambda) = 1 on (0, lambda1], 0 on [2 lambda1, inf), with a transition given
/// by the normalized integral of the bump exp(-1/t) exp(-1/(1-t)).
class CutoffSpec {
public:
    explicit CutoffSpec(double lambda1 = 0.1) : lambda1_(lambda1) {
        if (!(lambda1 > 0.0) || !std::isfinite(lambda1)) throw domain_error("cutoff: lambda1 must be positive");
        build_table();
    }

    double lambda1() const { return lambda1_; }
    double support() const { return 2.0 * lambda1_; }

    double operator()(double lambda) const {
        if (lambda <= lambda1_) return 1.0;
        if (lambda >= 2.0 * lambda1_) return 0.0;
        return 1.0 - integrated_bump((lambda - lambda1_) / lambda1_);
    }

    /// First and second derivative, from the bump directly.
    double derivative(double lambda) const {
        const double t = (lambda - lambda1_) / lambda1_;
        return -bump(t) / (norm_ * lambda1_);
    }
    double second_derivative(double lambda) const {
        const double t = (lambda - lambda1_) / lambda1_;
        if (t <= 0.0 || t >= 1.0) return 0.0;
        const double db = bump(t) * (1.0 / (t * t) - 1.0 / ((1.0 - t) * (1.0 - t)));
        return -db / (norm_ * lambda1_ * lambda1_);
    }

    /// Sampled sup of |chi'| and |chi''|.
    std::pair<double, double> derivative_bounds(int samples = 2000) const {
        double d1 = 0.0, d2 = 0.0;
        for (int i = 1; i < samples; ++i) {
            const double l = lambda1_ * (1.0 + static_cast<double>(i) / samples);
            d1 = std::max(d1, std::abs(derivative(l)));
            d2 = std::max(d2, std::abs(second_derivative(l)));
        }
        return {d1, d2};
    }

private:
    static double bump(double t) {
        if (t <= 0.0 || t >= 1.0) return 0.0;
        return std::exp(-1.0 / t - 1.0 / (1.0 - t));
    }

    void build_table() {
        rule_ = quad::gauss_legendre(20);
        cum_.assign(kPanels + 1, 0.0);
        for (int p = 0; p < kPanels; ++p) cum_[p + 1] = cum_[p] + panel(p / double(kPanels), (p + 1) / double(kPanels));
        norm_ = cum_.back();
    }

    double panel(double a, double b) const {
        double s = 0.0;
        for (std::size_t k = 0; k < rule_.nodes.size(); ++k)
            s += rule_.weights[k] * bump(0.5 * (a + b) + 0.5 * (b - a) * rule_.nodes[k]);
        return 0.5 * (b - a) * s;
    }

    double integrated_bump(double t) const {
        const int p = std::min(kPanels - 1, static_cast<int>(t * kPanels));
        return (cum_[p] + panel(p / double(kPanels), t)) / norm_;
    }

    static constexpr int kPanels = 128;
    double lambda1_;
    double norm_ = 1.0;
    quad::GaussLegendre rule_;
    std::vector<double> cum_;
};

// ---------------------------------------------------------------------------
// h^-(lambda) = ||v||^2 (a ln lambda + conj z) + b

struct HCoefficient {
    double v_norm2 = 1.0;
    double b = 0.0;

    cplx operator()(double lambda) const {
        static const auto rc = specfun::resolvent_constants();
        return v_norm2 * rc.g(lambda, -1) + b;
    }
};

// ---------------------------------------------------------------------------
// Integrals

enum class Kind { Js, Jpp, Jp };

inline std::string to_string(Kind k) {
    switch (k) {
        case Kind::Js: return "Js";
        case Kind::Jpp: return "Jpp";
        case Kind::Jp: return "Jp";
    }
    return "?";
}

inline Kind kind_from_string(const std::string& s) {
    if (s == "Js") return Kind::Js;
    if (s == "Jpp") return Kind::Jpp;
    if (s == "Jp") return Kind::Jp;
    throw domain_error("unknown integral kind '" + s + "'");
}

struct Options {
    double rel_tol = 1e-9;
    double abs_tol = 1e-14;
    int max_panels = 20000;
};

namespace detail {

inline specfun::Target s_target(Kind k) { return k == Kind::Jpp ? specfun::Target::J0pp : specfun::Target::J0p; }

/// Weight lambda^p * (h^-(lambda) for Js) * chi(lambda).
inline cplx weight(Kind k, double lambda, const CutoffSpec& chi, const HCoefficient& h) {
    const double c = chi(lambda);
    if (c == 0.0) return 0.0;
    switch (k) {
        case Kind::Js: return lambda * lambda * lambda * h(lambda) * c;
        case Kind::Jpp: return lambda * lambda * c;
        case Kind::Jp: return lambda * c;
    }
    return 0.0;
}

/// Geometric panels toward 0 plus panels no longer than pi / (4 (r + s)).
inline std::vector<double> breakpoints(double r, double s, double top) {
    std::vector<double> bp;
    const double step = std::numbers::pi / (4.0 * (r + s));
    const double lo = std::min(top, std::max(step, top / 64.0));
    for (double x = lo; x > 1e-12 * top; x *= 0.5) bp.push_back(x);
    bp.push_back(0.0);
    std::reverse(bp.begin(), bp.end());
    const int n = std::max(1, static_cast<int>(std::ceil((top - lo) / step)));
    for (int i = 1; i <= n; ++i) bp.push_back(lo + (top - lo) * i / n);
    return bp;
}

inline void check_rs(double r, double s) {
    if (!(r > 0.0) || !(s > 0.0) || !std::isfinite(r) || !std::isfinite(s)) throw domain_error("oscillatory integral: r and s must be positive");
}

template <typename F>
cplx adaptive(const F& f, double r, double s, double top, const Options& opt) {
    try {
        return quad::integrate_adaptive(f, breakpoints(r, s, top), opt.rel_tol, opt.abs_tol, opt.max_panels).value;
    } catch (const quadrature_error& e) {
        std::ostringstream msg;
        msg << e.what() << " at (r, s) = (" << r << ", " << s << ")";
        throw quadrature_error(msg.str());
    }
}

}  // namespace detail

/// The integrand (H0^-)'(lambda r) * J(lambda s) * weight(lambda).
inline cplx integrand(Kind k, double lambda, double r, double s, const CutoffSpec& chi, const HCoefficient& h,
                      bool conjugate_h0 = false) {
    if (lambda <= 0.0) return 0.0;
    const cplx w = detail::weight(k, lambda, chi, h);
    if (w == 0.0) return 0.0;
    cplx hp = specfun::envelope_target(lambda * r, specfun::Target::H0mp);
    if (conjugate_h0) hp = std::conj(hp);
    const double js = specfun::envelope_target(lambda * s, detail::s_target(k)).real();
    return hp * js * w;
}

/// Adaptive evaluation over (0, 2 lambda1]. `conjugate_h0` replaces (H0^-)' by its conjugate.
inline cplx osc_integral(Kind k, double r, double s, const CutoffSpec& chi, const HCoefficient& h = {},
                         const Options& opt = {}, bool conjugate_h0 = false) {
    detail::check_rs(r, s);
    auto f = [&](double l) { return integrand(k, l, r, s, chi, h, conjugate_h0); };
    return detail::adaptive(f, r, s, chi.support(), opt);
}

/// Fixed composite Gauss-Legendre reference with equal panels over [0, upper].
inline cplx brute_force_integral(Kind k, double r, double s, const CutoffSpec& chi, const HCoefficient& h = {},
                                 long panels = 1000000, int order = 5, double upper = 0.0) {
    detail::check_rs(r, s);
    if (upper <= 0.0) upper = chi.support();
    return quad::integrate_composite([&](double l) { return integrand(k, l, r, s, chi, h); }, 0.0, upper, panels, order);
}

// ---------------------------------------------------------------------------
// Envelope split of the integrand into A + B + C + D

struct SplitTerms {
    cplx A, B, C, D;
    cplx total() const { return A + B + C + D; }
};

/// A: eta x rho, B: omega x omega, C: eta x omega, D: omega x rho, after writing
/// (H0^-)' = eta + e^{-iz} omega and J = rho + e^{iz} omega + e^{-iz} omega.
inline SplitTerms split_integral(Kind k, double r, double s, const CutoffSpec& chi, const HCoefficient& h = {},
                                 const Options& opt = {}) {
    detail::check_rs(r, s);
    const auto tgt = detail::s_target(k);
    auto part = [&](int which) {
        return [&, which](double l) -> cplx {
            if (l <= 0.0) return 0.0;
            const cplx w = detail::weight(k, l, chi, h);
            if (w == 0.0) return 0.0;
            const auto hr = specfun::envelope_split(l * r, specfun::Target::H0mp);
            const auto js = specfun::envelope_split(l * s, tgt);
            const double zs = l * s;
            const cplx rho = (tgt == specfun::Target::J0p ? zs : 1.0) * js.rho_part;
            const cplx es(std::cos(zs), std::sin(zs));
            const cplx osc_s = es * js.omega_plus + std::conj(es) * js.omega_minus;
            const cplx er(std::cos(l * r), -std::sin(l * r));
            const cplx osc_r = er * hr.omega_minus;
            switch (which) {
                case 0: return hr.eta_part * rho * w;
                case 1: return osc_r * osc_s * w;
                case 2: return hr.eta_part * osc_s * w;
                default: return osc_r * rho * w;
            }
        };
    };
    SplitTerms t;
    t.A = detail::adaptive(part(0), r, s, chi.support(), opt);
    t.B = detail::adaptive(part(1), r, s, chi.support(), opt);
    t.C = detail::adaptive(part(2), r, s, chi.support(), opt);
    t.D = detail::adaptive(part(3), r, s, chi.support(), opt);
    return t;
}

// ---------------------------------------------------------------------------
// Bounds and sweeps

inline double bracket(double x) { return std::sqrt(1.0 + x * x); }

/// Kind-matched majorant with the "2+" / "2-" exponents realized as 2 +/- eps.
inline double bound(Kind k, double r, double s, double eps = 0.01) {
    switch (k) {
        case Kind::Js:
            return 1.0 / (std::sqrt(r * s) * std::pow(bracket(r - s), 2.0)) + 1.0 / (r * std::pow(bracket(r + s), 2.0 + eps));
        case Kind::Jpp:
            return 1.0 / (std::sqrt(r * s) * std::pow(bracket(r - s), 2.0 - eps)) + 1.0 / (r * std::pow(bracket(r + s), 2.0));
        case Kind::Jp:
            return s * bracket(std::log(bracket(r))) / (r * bracket(r + s) * bracket(r - s));
    }
    return 0.0;
}

inline std::vector<double> logspace(double a, double b, int n) {
    std::vector<double> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out[i] = (n == 1) ? a : a * std::pow(b / a, static_cast<double>(i) / (n - 1));
    return out;
}

struct BoundSweep {
    Kind kind = Kind::Js;
    double eps = 0.01;
    std::vector<double> r, s;  // one entry per point
    std::vector<cplx> value;
    std::vector<double> bound, ratio;
    double C = 0.0;
    std::size_t argmax = 0;

    std::size_t size() const { return r.size(); }
};

struct SweepSpec {
    double lo = 0.1, hi = 200.0;
    int n = 40;
    double eps = 0.01;
};

/// Evaluates the integral and its majorant on an n x n log grid over [lo, hi]^2.
inline BoundSweep bound_sweep(Kind k, const SweepSpec& spec, const CutoffSpec& chi, const HCoefficient& h = {},
                              const Options& opt = {}, int jobs = 0) {
    const auto axis = logspace(spec.lo, spec.hi, spec.n);
    BoundSweep out;
    out.kind = k;
    out.eps = spec.eps;
    const std::size_t n = axis.size() * axis.size();
    out.r.resize(n);
    out.s.resize(n);
    out.value.resize(n);
    out.bound.resize(n);
    out.ratio.resize(n);
    for (std::size_t i = 0; i < axis.size(); ++i)
        for (std::size_t j = 0; j < axis.size(); ++j) {
            out.r[i * axis.size() + j] = axis[i];
            out.s[i * axis.size() + j] = axis[j];
        }
    parallel_for(n, [&](std::size_t p) {
        out.value[p] = osc_integral(k, out.r[p], out.s[p], chi, h, opt);
        out.bound[p] = bound(k, out.r[p], out.s[p], spec.eps);
        out.ratio[p] = std::abs(out.value[p]) / out.bound[p];
    }, jobs);
    for (std::size_t p = 0; p < n; ++p) {
        if (!std::isfinite(out.ratio[p])) {
            std::ostringstream msg;
            msg << "bound sweep " << to_string(k) << ": non-finite ratio at (r, s) = (" << out.r[p] << ", " << out.s[p] << ")";
            throw consistency_error(msg.str());
        }
        if (out.ratio[p] > out.C) {
            out.C = out.ratio[p];
            out.argmax = p;
        }
    }
    return out;
}

/// Columns r, s, re, im, bound, ratio.
inline void write_csv(std::ostream& os, const BoundSweep& b) {
    os << "r,s,re,im,k,ratio\n";
    os.precision(12);
    for (std::size_t p = 0; p < b.size(); ++p)
        os << b.r[p] << ',' << b.s[p] << ',' << b.value[p].real() << ',' << b.value[p].imag() << ',' << b.bound[p] << ','
           << b.ratio[p] << '\n';
}

// ---------------------------------------------------------------------------
// Lipschitz-average bound

struct LipschitzCheck {
    double sup = 0.0;
    double shift_integral = 0.0;
    double bound = 0.0;   // sup / L + int |f(l + pi/L) - f(l)|
    double direct = 0.0;  // |int e^{i l L} f|
    bool dominates = false;
};

/// f is taken to vanish outside (0, top]. The sup is sampled on a fine grid.
inline LipschitzCheck lipschitz_average_bound(const std::function<double(double)>& f, double top, double L,
                                              int samples = 20000) {
    if (!(L > 1.0)) throw domain_error("lipschitz bound: L must exceed 1");
    auto g = [&](double l) { return (l > 0.0 && l <= top) ? f(l) : 0.0; };
    LipschitzCheck c;
    for (int i = 1; i <= samples; ++i) c.sup = std::max(c.sup, std::abs(g(top * i / samples)));
    const double shift = std::numbers::pi / L;
    const int n = std::max(8, static_cast<int>(std::ceil(top / (0.25 * shift))));
    std::vector<double> bp;
    for (int i = 0; i <= n; ++i) bp.push_back(top * i / n);
    c.shift_integral = quad::integrate_adaptive([&](double l) { return std::abs(g(l + shift) - g(l)); }, bp, 1e-10, 1e-15).value;
    c.direct = std::abs(quad::integrate_adaptive([&](double l) { return cplx(std::cos(l * L), std::sin(l * L)) * g(l); }, bp,
                                                 1e-10, 1e-15)
                            .value);
    c.bound = c.sup / L + c.shift_integral;
    c.dominates = c.direct <= c.bound * (1.0 + 1e-9) + 1e-15;
    return c;
}

}  // namespace thresh2d::oscint
