#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>
#include <vector>

#include "thresh2d/errors.hpp"

namespace thresh2d::specfun {

using cplx = std::complex<double>;

inline constexpr double euler_gamma = 0.577215664901532860606512090082402431;

/// Order-zero Bessel data at a positive real argument.
struct BesselValue {
    double z = 0.0;
    double j0 = 0.0, y0 = 0.0;
    double j1 = 0.0, y1 = 0.0;
    double dj0 = 0.0;   // J0'
    double d2j0 = 0.0;  // J0''
    cplx h0m;           // J0 - i Y0
    cplx dh0m;          // (H0^-)' = -J1 + i Y1

    cplx h0p() const { return std::conj(h0m); }
    cplx h1p() const { return {j1, y1}; }
    cplx h1m() const { return {j1, -y1}; }
    double dy0() const { return -y1; }
};

namespace detail {

inline void check_argument(double z, const char* who) {
    if (!(z > 0.0) || !std::isfinite(z)) {
        std::ostringstream msg;
        msg << who << ": argument must be positive and finite (got " << z << ")";
        throw domain_error(msg.str());
    }
}

struct Pair01 {
    double j0, y0, j1, y1;
};

// Ascending series; used for z <= 8.
inline Pair01 series(double z) {
    const double q = 0.25 * z * z;
    double t0 = 1.0;  // (-q)^k / (k!)^2
    double t1 = 1.0;  // (-q)^k / (k!(k+1)!)
    double h = 0.0;   // H_k
    double sj0 = 0.0, sj1 = 0.0, sy0 = 0.0, sy1 = 0.0;
    for (int k = 0; k < 200; ++k) {
        const double hn = h + 1.0 / (k + 1);
        sj0 += t0;
        sj1 += t1;
        sy0 += h * t0;
        sy1 += (h + hn) * t1;
        if (k > 2 && std::abs(t0) < 1e-18) break;
        t0 *= -q / ((k + 1.0) * (k + 1.0));
        t1 *= -q / ((k + 1.0) * (k + 2.0));
        h = hn;
    }
    const double lg = std::log(0.5 * z) + euler_gamma;
    const double j0 = sj0;
    const double j1 = 0.5 * z * sj1;
    const double y0 = (2.0 / std::numbers::pi) * (lg * j0 - sy0);
    const double y1 = -2.0 / (std::numbers::pi * z) + (2.0 / std::numbers::pi) * lg * j1 -
                      z / (2.0 * std::numbers::pi) * sy1;
    return {j0, y0, j1, y1};
}

// Miller backward recurrence plus Neumann series for Y; used for 8 < z <= 25.
inline Pair01 miller(double z) {
    int m = static_cast<int>(z + 40.0 + 4.0 * std::sqrt(z));
    if (m % 2 == 1) ++m;
    std::vector<double> jn(m + 2, 0.0);
    jn[m + 1] = 0.0;
    jn[m] = 1e-300;
    for (int k = m; k >= 1; --k) {
        jn[k - 1] = (2.0 * k / z) * jn[k] - jn[k + 1];
        if (std::abs(jn[k - 1]) > 1e200) {
            for (int i = k - 1; i <= m + 1; ++i) jn[i] *= 1e-200;
        }
    }
    double norm = jn[0];
    for (int k = 2; k <= m; k += 2) norm += 2.0 * jn[k];
    for (double& v : jn) v /= norm;

    const double lg = std::log(0.5 * z) + euler_gamma;
    double s0 = 0.0, s1 = 0.0;
    for (int k = 1; 2 * k + 1 <= m + 1; ++k) {
        const double sgn = (k % 2 == 0) ? 1.0 : -1.0;
        s0 += sgn * jn[2 * k] / k;
        s1 += sgn * (jn[2 * k - 1] - jn[2 * k + 1]) / k;
    }
    const double y0 = (2.0 / std::numbers::pi) * lg * jn[0] - (4.0 / std::numbers::pi) * s0;
    const double y1 = -(2.0 / (std::numbers::pi * z)) * jn[0] + (2.0 / std::numbers::pi) * lg * jn[1] +
                      (2.0 / std::numbers::pi) * s1;
    return {jn[0], y0, jn[1], y1};
}

// Hankel asymptotic expansion; P and Q for order nu.
inline void hankel_pq(double nu, double z, double& p, double& q) {
    const double mu = 4.0 * nu * nu;
    double t = 1.0;
    p = 1.0;
    q = 0.0;
    double prev = 1.0;
    for (int k = 1; k < 200; ++k) {
        const double next = t * (mu - (2.0 * k - 1) * (2.0 * k - 1)) / (k * 8.0 * z);
        if (std::abs(next) > std::abs(prev) && k > 2) break;  // series started diverging
        t = next;
        prev = t;
        // k odd -> Q, k even -> P; signs alternate in pairs
        const double sgn = ((k / 2) % 2 == 0) ? 1.0 : -1.0;
        if (k % 2 == 1)
            q += sgn * t;
        else
            p += sgn * t;
        if (std::abs(t) < 1e-17) break;
    }
}

inline Pair01 asymptotic(double z) {
    double p0, q0, p1, q1;
    hankel_pq(0.0, z, p0, q0);
    hankel_pq(1.0, z, p1, q1);
    const double c = std::cos(z), s = std::sin(z);
    const double r2 = 1.0 / std::numbers::sqrt2;
    // phases z - pi/4 and z - 3pi/4
    const double c0 = (c + s) * r2, s0 = (s - c) * r2;
    const double c1 = (s - c) * r2, s1 = -(s + c) * r2;
    const double amp = std::sqrt(2.0 / (std::numbers::pi * z));
    return {amp * (p0 * c0 - q0 * s0), amp * (p0 * s0 + q0 * c0), amp * (p1 * c1 - q1 * s1),
            amp * (p1 * s1 + q1 * c1)};
}

inline Pair01 pair(double z) {
    if (z <= 8.0) return series(z);
    if (z <= 25.0) return miller(z);
    return asymptotic(z);
}

}  // namespace detail

/// Which evaluation branch eval_bessel uses at z.
enum class Branch { Series, Miller, Asymptotic };

inline Branch branch_for(double z) {
    if (z <= 8.0) return Branch::Series;
    if (z <= 25.0) return Branch::Miller;
    return Branch::Asymptotic;
}

/// J0, Y0, J1, Y1 by an explicitly chosen branch (for cross-validation).
inline BesselValue eval_bessel_branch(double z, Branch b) {
    detail::check_argument(z, "eval_bessel");
    detail::Pair01 v{};
    switch (b) {
        case Branch::Series: v = detail::series(z); break;
        case Branch::Miller: v = detail::miller(z); break;
        case Branch::Asymptotic: v = detail::asymptotic(z); break;
    }
    BesselValue out;
    out.z = z;
    out.j0 = v.j0;
    out.y0 = v.y0;
    out.j1 = v.j1;
    out.y1 = v.y1;
    out.dj0 = -v.j1;
    out.d2j0 = -v.j0 + v.j1 / z;
    out.h0m = cplx(v.j0, -v.y0);
    out.dh0m = cplx(-v.j1, v.y1);
    return out;
}

inline BesselValue eval_bessel(double z) { return eval_bessel_branch(z, branch_for(z)); }

/// J0 alone, for hot loops.
inline double bessel_j0(double z) {
    if (z == 0.0) return 1.0;
    detail::check_argument(z, "bessel_j0");
    return detail::pair(z).j0;
}

/// H0^-(z) = J0 - iY0.
inline cplx h0m(double z) {
    detail::check_argument(z, "h0m");
    const auto v = detail::pair(z);
    return {v.j0, -v.y0};
}

// ---------------------------------------------------------------------------
// Partition of unity on [1/2, 1]

namespace detail {
inline double psi(double t) { return t > 0.0 ? std::exp(-1.0 / t) : 0.0; }
}  // namespace detail

/// Smooth cutoff equal to 1 on [0, 1/2] and 0 on [1, inf).
inline double phi_small(double z) {
    const double t = 2.0 * (z - 0.5);
    if (t <= 0.0) return 1.0;
    if (t >= 1.0) return 0.0;
    const double a = detail::psi(1.0 - t), b = detail::psi(t);
    return a / (a + b);
}

inline double phi_large(double z) { return 1.0 - phi_small(z); }

enum class Target { J0p, J0pp, H0mp };

/// Decomposition of a Bessel derivative into a compactly supported part near zero
/// and oscillatory envelopes: value = scale*rho + eta + e^{iz} omega_plus + e^{-iz} omega_minus,
/// with scale = z for J0' and 1 otherwise.
struct EnvelopeSplit {
    double z = 0.0;
    Target which = Target::J0p;
    double rho_part = 0.0;
    cplx eta_part;
    cplx omega_plus, omega_minus;

    cplx recompose() const {
        const double scale = (which == Target::J0p) ? z : 1.0;
        const cplx e(std::cos(z), std::sin(z));
        return scale * rho_part + eta_part + e * omega_plus + std::conj(e) * omega_minus;
    }
};

inline EnvelopeSplit envelope_split(double z, Target which) {
    const BesselValue b = eval_bessel(z);
    const double ps = phi_small(z), pl = 1.0 - ps;
    const cplx em(std::cos(z), -std::sin(z));  // e^{-iz}
    EnvelopeSplit out;
    out.z = z;
    out.which = which;
    switch (which) {
        case Target::J0p: {
            out.rho_part = ps * b.dj0 / z;
            out.omega_plus = -pl * em * b.h1p() * 0.5;
            out.omega_minus = std::conj(out.omega_plus);
            break;
        }
        case Target::J0pp: {
            out.rho_part = ps * b.d2j0;
            out.omega_plus = pl * em * (-b.h0p() + b.h1p() / z) * 0.5;
            out.omega_minus = std::conj(out.omega_plus);
            break;
        }
        case Target::H0mp: {
            out.eta_part = ps * b.dh0m;
            out.omega_minus = pl * std::conj(em) * (-b.h1m());
            break;
        }
    }
    return out;
}

/// The exact derivative value that envelope_split(z, which) decomposes.
inline cplx envelope_target(double z, Target which) {
    const BesselValue b = eval_bessel(z);
    switch (which) {
        case Target::J0p: return b.dj0;
        case Target::J0pp: return b.d2j0;
        case Target::H0mp: return b.dh0m;
    }
    return {};
}

/// Empirical envelope constants: max over samples of z^{1/2+j}|omega^{(j)}| on the
/// large-argument support and z^{1+l}|eta^{(l)}| on (0, 1].
struct EnvelopeConstants {
    double omega[3] = {0, 0, 0};
    double eta[3] = {0, 0, 0};
};

inline EnvelopeConstants envelope_constants(Target which, double zmax = 1e3, int samples = 400) {
    EnvelopeConstants c;
    auto omega = [which](double z) {
        const auto e = envelope_split(z, which);
        return which == Target::H0mp ? e.omega_minus : e.omega_plus;
    };
    auto eta = [which](double z) { return envelope_split(z, which).eta_part; };
    auto derivs = [](const auto& f, double z, cplx out[3]) {
        const double h = 1e-3 * std::min(z, 1.0);
        const cplx fm = f(z - h), f0 = f(z), fp = f(z + h);
        out[0] = f0;
        out[1] = (fp - fm) / (2.0 * h);
        out[2] = (fp - 2.0 * f0 + fm) / (h * h);
    };
    for (int i = 0; i < samples; ++i) {
        // omega on [1/2, zmax], log-spaced
        const double zo = 0.5 * std::pow(zmax / 0.5, (i + 0.5) / samples);
        cplx d[3];
        derivs(omega, zo, d);
        for (int j = 0; j < 3; ++j)
            c.omega[j] = std::max(c.omega[j], std::pow(zo, 0.5 + j) * std::abs(d[j]));
        if (which == Target::H0mp) {
            const double ze = 1e-3 * std::pow(1e3, (i + 0.5) / samples);  // (1e-3, 1]
            derivs(eta, ze, d);
            for (int j = 0; j < 3; ++j)
                c.eta[j] = std::max(c.eta[j], std::pow(ze, 1.0 + j) * std::abs(d[j]));
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// Low-energy resolvent constants

/// Small-argument coefficients of Y0(z) = c_log*ln z + c_const + o(1).
inline constexpr double y0_log_coefficient = 2.0 / std::numbers::pi;
inline const double y0_constant_term = (2.0 / std::numbers::pi) * (euler_gamma - std::numbers::ln2);

struct ResolventConstants {
    double a = 0.0;
    cplx z_const;

    /// g^+(lambda) for sign = +1, its conjugate for sign = -1.
    cplx g(double lambda, int sign) const {
        const cplx gp = a * std::log(lambda) + z_const;
        return sign > 0 ? gp : std::conj(gp);
    }
};

/// R0^+(lambda^2)(x,y) = (i/4)H0^+(lambda r) = (i/4)J0 - Y0/4; with J0 -> 1 and the
/// small-argument Y0 expansion this yields G0 + a ln(lambda) + z_const.
inline ResolventConstants resolvent_constants() {
    ResolventConstants rc;
    rc.a = -0.25 * y0_log_coefficient;
    rc.z_const = cplx(-0.25 * y0_constant_term, 0.25);
    return rc;
}

/// Free resolvent kernel R0^{+/-}(lambda^2) at distance r > 0: +/-(i/4) H0^{+/-}(lambda r).
inline cplx free_resolvent(double lambda, double r, int sign) {
    const auto v = detail::pair(lambda * r);
    const cplx hp(v.j0, v.y0);
    const cplx i4(0.0, 0.25);
    return sign > 0 ? i4 * hp : std::conj(i4 * hp);
}

/// Fundamental solution of the Laplacian, -(1/2pi) log r.
inline double g0(double r) { return -std::log(r) / (2.0 * std::numbers::pi); }

}  // namespace thresh2d::specfun
