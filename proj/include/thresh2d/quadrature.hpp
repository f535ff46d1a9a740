#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <queue>
#include <sstream>
#include <type_traits>
#include <vector>

#include "thresh2d/errors.hpp"

namespace thresh2d::quad {

/// Gauss-Legendre rule on [-1, 1].
struct GaussLegendre {
    std::vector<double> nodes;
    std::vector<double> weights;
};

/// Newton iteration on P_n from Tricomi initial guesses; nodes ascending.
inline GaussLegendre gauss_legendre(int n) {
    if (n < 1) throw domain_error("gauss_legendre: n must be >= 1");
    GaussLegendre rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    const int half = (n + 1) / 2;
    for (int i = 0; i < half; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 1.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            if (n == 1) p0 = 1.0, p1 = x;
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        {
            // refresh derivative at the converged node
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = (n == 1) ? 1.0 : n * (x * p1 - p0) / (x * x - 1.0);
        }
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.nodes[i] = -x;
        rule.nodes[n - 1 - i] = x;
        rule.weights[i] = w;
        rule.weights[n - 1 - i] = w;
    }
    if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
    return rule;
}

/// Gauss-Legendre nodes/weights mapped to [a, b].
inline GaussLegendre gauss_legendre(int n, double a, double b) {
    GaussLegendre rule = gauss_legendre(n);
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    for (int i = 0; i < n; ++i) {
        rule.nodes[i] = mid + half * rule.nodes[i];
        rule.weights[i] *= half;
    }
    return rule;
}

/// Barycentric weights for Lagrange interpolation through Gauss-Legendre points
/// (closed form, up to a common factor).
inline std::vector<double> barycentric_weights(const GaussLegendre& unit_rule) {
    const std::size_t n = unit_rule.nodes.size();
    std::vector<double> bw(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = unit_rule.nodes[i];
        bw[i] = ((i % 2 == 0) ? 1.0 : -1.0) * std::sqrt((1.0 - x * x) * unit_rule.weights[i]);
    }
    return bw;
}

/// Values of all Lagrange basis polynomials at x (barycentric second form).
inline void lagrange_basis(const std::vector<double>& nodes, const std::vector<double>& bw, double x,
                           std::vector<double>& out) {
    const std::size_t n = nodes.size();
    out.assign(n, 0.0);
    double denom = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = x - nodes[i];
        if (d == 0.0) {
            out.assign(n, 0.0);
            out[i] = 1.0;
            return;
        }
        out[i] = bw[i] / d;
        denom += out[i];
    }
    for (double& v : out) v /= denom;
}

/// Compensated (Neumaier) accumulator.
template <typename T>
class NeumaierSum {
public:
    void add(T x) {
        if constexpr (std::is_same_v<T, double>) {
            const double t = sum_ + x;
            if (std::abs(sum_) >= std::abs(x))
                comp_ += (sum_ - t) + x;
            else
                comp_ += (x - t) + sum_;
            sum_ = t;
        } else {
            re_.add(x.real());
            im_.add(x.imag());
        }
    }
    T value() const {
        if constexpr (std::is_same_v<T, double>)
            return sum_ + comp_;
        else
            return T(re_.value(), im_.value());
    }

private:
    double sum_ = 0.0, comp_ = 0.0;
    struct Inner {
        double s = 0.0, c = 0.0;
        void add(double x) {
            const double t = s + x;
            if (std::abs(s) >= std::abs(x))
                c += (s - t) + x;
            else
                c += (x - t) + s;
            s = t;
        }
        double value() const { return s + c; }
    };
    Inner re_, im_;
};

namespace detail {

// Gauss-Kronrod 7-15 abscissae/weights (positive half, center last).
inline constexpr std::array<double, 8> kXgk = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> kWgk = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr std::array<double, 4> kWg = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

inline double magnitude(double x) { return std::abs(x); }
inline double magnitude(std::complex<double> x) { return std::abs(x); }

template <typename T>
struct Panel {
    double a, b;
    T value;
    double error;
    bool operator<(const Panel& o) const { return error < o.error; }
};

template <typename T, typename F>
Panel<T> gk15(const F& f, double a, double b) {
    const double center = 0.5 * (a + b), half = 0.5 * (b - a);
    const T fc = f(center);
    T resk = fc * kWgk[7];
    T resg = fc * kWg[3];
    for (int j = 0; j < 7; ++j) {
        const double dx = half * kXgk[j];
        const T f1 = f(center - dx);
        const T f2 = f(center + dx);
        resk += (f1 + f2) * kWgk[j];
        if (j % 2 == 1) resg += (f1 + f2) * kWg[j / 2];
    }
    return {a, b, resk * half, magnitude((resk - resg) * half)};
}

}  // namespace detail

/// Result of an adaptive integration.
template <typename T>
struct Integral {
    T value{};
    double error = 0.0;
    int evaluations = 0;
};

/// Globally adaptive Gauss-Kronrod 7-15 over the union of the given breakpoints.
/// Stops when the summed error estimate is below max(rel_tol*|I|, abs_tol).
template <typename F>
auto integrate_adaptive(const F& f, const std::vector<double>& breakpoints, double rel_tol,
                        double abs_tol, int max_panels = 20000)
    -> Integral<decltype(f(0.0))> {
    using T = decltype(f(0.0));
    std::priority_queue<detail::Panel<T>> heap;
    Integral<T> out;
    for (std::size_t i = 0; i + 1 < breakpoints.size(); ++i) {
        if (breakpoints[i + 1] <= breakpoints[i]) continue;
        heap.push(detail::gk15<T>(f, breakpoints[i], breakpoints[i + 1]));
        out.evaluations += 15;
    }
    auto totals = [&heap]() {
        auto copy = heap;
        NeumaierSum<T> v;
        double e = 0.0;
        while (!copy.empty()) {
            v.add(copy.top().value);
            e += copy.top().error;
            copy.pop();
        }
        return std::pair<T, double>(v.value(), e);
    };
    T value{};
    double err = 0.0;
    std::tie(value, err) = totals();
    // incremental bookkeeping; a full recount every so often controls drift
    int since_recount = 0;
    while (err > std::max(rel_tol * detail::magnitude(value), abs_tol)) {
        if (static_cast<int>(heap.size()) >= max_panels) {
            std::ostringstream msg;
            msg << "adaptive quadrature: subdivision budget exhausted (error " << err << ")";
            throw quadrature_error(msg.str());
        }
        const auto worst = heap.top();
        heap.pop();
        const double mid = 0.5 * (worst.a + worst.b);
        if (!(mid > worst.a && mid < worst.b)) {
            throw quadrature_error("adaptive quadrature: panel below floating-point resolution");
        }
        const auto left = detail::gk15<T>(f, worst.a, mid);
        const auto right = detail::gk15<T>(f, mid, worst.b);
        out.evaluations += 30;
        value += left.value + right.value - worst.value;
        err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        if (++since_recount == 64) {
            std::tie(value, err) = totals();
            since_recount = 0;
        }
    }
    std::tie(value, err) = totals();
    out.value = value;
    out.error = err;
    return out;
}

template <typename F>
auto integrate_adaptive(const F& f, double a, double b, double rel_tol, double abs_tol,
                        int max_panels = 20000) {
    return integrate_adaptive(f, std::vector<double>{a, b}, rel_tol, abs_tol, max_panels);
}

/// Fixed composite Gauss-Legendre rule: `panels` equal panels of `order` points on [a, b].
template <typename F>
auto integrate_composite(const F& f, double a, double b, long panels, int order) {
    using T = decltype(f(0.0));
    const GaussLegendre rule = gauss_legendre(order);
    const double h = (b - a) / static_cast<double>(panels);
    NeumaierSum<T> sum;
    for (long p = 0; p < panels; ++p) {
        const double lo = a + h * static_cast<double>(p);
        const double mid = lo + 0.5 * h;
        T panel{};
        for (int k = 0; k < order; ++k) panel += rule.weights[k] * f(mid + 0.5 * h * rule.nodes[k]);
        sum.add(panel * (0.5 * h));
    }
    return sum.value();
}

}  // namespace thresh2d::quad
