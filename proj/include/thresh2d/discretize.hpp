#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "thresh2d/errors.hpp"
#include "thresh2d/fit.hpp"
#include "thresh2d/parallel.hpp"
#include "thresh2d/quadrature.hpp"
#include "thresh2d/specfun.hpp"

namespace thresh2d::discretize {

using cplx = std::complex<double>;
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

struct Point {
    double x1 = 0.0, x2 = 0.0;
    double norm() const { return std::hypot(x1, x2); }
};

inline double distance(Point a, Point b) { return std::hypot(a.x1 - b.x1, a.x2 - b.x2); }

/// Japanese bracket <t> = sqrt(1 + t^2).
inline double bracket(double t) { return std::sqrt(1.0 + t * t); }

// ---------------------------------------------------------------------------
// Grid

/// Polar product rule on the disk of radius R. Node index = ring * n_theta + angle.
struct QuadratureGrid {
    double R = 0.0;
    int n_r = 0, n_theta = 0;
    std::vector<double> radii;           // Gauss-Legendre nodes on [0, R]
    std::vector<double> radial_weights;  // matching weights (without the r factor)
    std::vector<Point> nodes;
    std::vector<double> weights;

    std::size_t size() const { return nodes.size(); }
    std::size_t index(int ring, int angle) const {
        return static_cast<std::size_t>(ring) * n_theta + static_cast<std::size_t>(angle);
    }
    double angle(int p) const { return 2.0 * std::numbers::pi * p / n_theta; }
    int ring_of(std::size_t i) const { return static_cast<int>(i / n_theta); }
    int angle_of(std::size_t i) const { return static_cast<int>(i % n_theta); }
};

using GridPtr = std::shared_ptr<const QuadratureGrid>;

inline GridPtr build_polar_grid(double R, int n_r, int n_theta) {
    if (!(R > 0.0) || !std::isfinite(R)) throw domain_error("build_polar_grid: R must be positive");
    if (n_r < 4 || n_theta < 4) throw domain_error("build_polar_grid: n_r and n_theta must be >= 4");
    auto g = std::make_shared<QuadratureGrid>();
    g->R = R;
    g->n_r = n_r;
    g->n_theta = n_theta;
    const auto rule = quad::gauss_legendre(n_r, 0.0, R);
    g->radii = rule.nodes;
    g->radial_weights = rule.weights;
    g->nodes.reserve(static_cast<std::size_t>(n_r) * n_theta);
    g->weights.reserve(g->nodes.capacity());
    const double dtheta = 2.0 * std::numbers::pi / n_theta;
    for (int a = 0; a < n_r; ++a) {
        for (int p = 0; p < n_theta; ++p) {
            const double t = g->angle(p);
            g->nodes.push_back({g->radii[a] * std::cos(t), g->radii[a] * std::sin(t)});
            g->weights.push_back(g->radial_weights[a] * g->radii[a] * dtheta);
        }
    }
    return g;
}

template <typename F>
auto integrate(const QuadratureGrid& grid, const F& f) {
    using T = decltype(f(Point{}));
    quad::NeumaierSum<T> s;
    for (std::size_t i = 0; i < grid.size(); ++i) s.add(grid.weights[i] * f(grid.nodes[i]));
    return s.value();
}

/// Columnar text: x1 x2 w per line.
inline void write_grid(std::ostream& os, const QuadratureGrid& grid) {
    const auto old = os.precision(17);
    for (std::size_t i = 0; i < grid.size(); ++i)
        os << grid.nodes[i].x1 << ' ' << grid.nodes[i].x2 << ' ' << grid.weights[i] << '\n';
    os.precision(old);
}

// ---------------------------------------------------------------------------
// Potentials

enum class Family { Zero, Gaussian, Bump, InversePoly };

inline std::string to_string(Family f) {
    switch (f) {
        case Family::Zero: return "zero";
        case Family::Gaussian: return "gaussian";
        case Family::Bump: return "bump";
        case Family::InversePoly: return "inverse_poly";
    }
    return "?";
}

inline Family family_from_string(const std::string& s) {
    if (s == "zero") return Family::Zero;
    if (s == "gaussian") return Family::Gaussian;
    if (s == "bump") return Family::Bump;
    if (s == "inverse_poly") return Family::InversePoly;
    throw std::invalid_argument("unknown potential family '" + s + "'");
}

/// V(x) = -coupling * profile(x - center) * (1 + perturbation*cos(mode*angle)).
/// Positive coupling gives a well.
struct PotentialSpec {
    Family family = Family::Gaussian;
    double coupling = 1.0;
    double beta = 8.0;
    Point center{};
    double width = 1.0;  // Gaussian length scale or bump radius
    double perturbation = 0.0;
    int perturbation_mode = 2;
};

inline double potential_value(const PotentialSpec& spec, Point x) {
    const double d1 = x.x1 - spec.center.x1, d2 = x.x2 - spec.center.x2;
    const double r = std::hypot(d1, d2);
    double profile = 0.0;
    switch (spec.family) {
        case Family::Zero: return 0.0;
        case Family::Gaussian: profile = std::exp(-(r * r) / (spec.width * spec.width)); break;
        case Family::Bump: {
            const double t = r / spec.width;
            profile = t < 1.0 ? std::exp(1.0 - 1.0 / (1.0 - t * t)) : 0.0;
            break;
        }
        case Family::InversePoly: profile = std::pow(1.0 + r * r, -0.5 * spec.beta); break;
    }
    double angular = 1.0;
    if (spec.perturbation != 0.0 && r > 0.0)
        angular += spec.perturbation * std::cos(spec.perturbation_mode * std::atan2(d2, d1));
    return -spec.coupling * profile * angular;
}

/// Node samples of V with the factorization V = U v^2.
struct SampledPotential {
    GridPtr grid;
    PotentialSpec spec;
    std::vector<double> values;    // V
    std::vector<double> v_values;  // |V|^{1/2}
    std::vector<double> u_signs;   // +1 where V >= 0, else -1
    double beta = 0.0;
    double decay_constant = 0.0;   // max |V| <x>^beta over nodes
    double decay_exponent = 0.0;   // log-log fit on R/2 <= |x| <= R (inf if V vanishes there)
    double tail_mass = 0.0;        // integral of |V| over |x| > R
};

namespace detail {

inline double tail_mass(const PotentialSpec& spec, double R) {
    if (spec.family == Family::Zero) return 0.0;
    // integral over |x| > R in polar form, r = R e^t
    constexpr int n_angle = 64;
    auto ring = [&](double r) {
        double s = 0.0;
        for (int k = 0; k < n_angle; ++k) {
            const double t = 2.0 * std::numbers::pi * k / n_angle;
            s += std::abs(potential_value(spec, {r * std::cos(t), r * std::sin(t)}));
        }
        return s * 2.0 * std::numbers::pi / n_angle;
    };
    auto f = [&](double t) {
        const double r = R * std::exp(t);
        return ring(r) * r * r;
    };
    std::vector<double> bp;
    for (double t = 0.0; t <= 12.0; t += 0.5) bp.push_back(t);
    return quad::integrate_adaptive(f, bp, 1e-8, 1e-300).value;
}

}  // namespace detail

inline SampledPotential sample_potential(const PotentialSpec& spec, GridPtr grid) {
    if (!(spec.beta > 0.0)) {
        std::ostringstream msg;
        msg << "sample_potential: decay exponent beta must be positive (got " << spec.beta << ")";
        throw domain_error(msg.str());
    }
    SampledPotential pot;
    pot.grid = grid;
    pot.spec = spec;
    pot.beta = spec.beta;
    const std::size_t n = grid->size();
    pot.values.resize(n);
    pot.v_values.resize(n);
    pot.u_signs.resize(n);
    std::vector<double> fx, fy;
    for (std::size_t i = 0; i < n; ++i) {
        const Point x = grid->nodes[i];
        const double V = potential_value(spec, x);
        if (!std::isfinite(V)) throw evaluation_error("sample_potential: non-finite V");
        pot.u_signs[i] = (V < 0.0) ? -1.0 : 1.0;
        pot.v_values[i] = std::sqrt(std::abs(V));
        // store the rounded product so that V = U v^2 holds exactly
        pot.values[i] = pot.u_signs[i] * pot.v_values[i] * pot.v_values[i];
        const double bx = bracket(x.norm());
        pot.decay_constant = std::max(pot.decay_constant, std::abs(V) * std::pow(bx, spec.beta));
        if (x.norm() >= 0.5 * grid->R && std::abs(V) > 0.0 && std::abs(V) > 1e-300) {
            fx.push_back(bx);
            fy.push_back(std::abs(V));
        }
    }
    if (fx.size() >= 2 && grid->n_r > 1) {
        pot.decay_exponent = -loglog_slope(fx, fy);
    } else {
        pot.decay_exponent = std::numeric_limits<double>::infinity();
    }
    pot.tail_mass = detail::tail_mass(spec, grid->R);
    return pot;
}

// ---------------------------------------------------------------------------
// Operators

enum class Symmetry { Symmetric, General };

/// Integral operator on the grid, stored in the orthonormal node basis
/// A~_ij = sqrt(w_i) K(x_i, x_j) sqrt(w_j).
class DiscreteOperator {
public:
    DiscreteOperator() = default;
    DiscreteOperator(GridPtr grid, MatrixXcd ortho, Symmetry sym)
        : grid_(std::move(grid)), mat_(std::move(ortho)), sym_(sym) {}

    const MatrixXcd& matrix() const { return mat_; }
    const GridPtr& grid() const { return grid_; }
    Symmetry symmetry() const { return sym_; }
    Eigen::Index size() const { return mat_.rows(); }

    /// Nystrom matrix K(x_i, x_j) w_j.
    MatrixXcd nystrom() const {
        const VectorXd s = sqrt_weights();
        MatrixXcd out = mat_;
        for (Eigen::Index i = 0; i < out.rows(); ++i)
            for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) *= s(j) / s(i);
        return out;
    }

    /// Kernel values K(x_i, x_j).
    MatrixXcd kernel() const {
        const VectorXd s = sqrt_weights();
        MatrixXcd out = mat_;
        for (Eigen::Index i = 0; i < out.rows(); ++i)
            for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) /= s(i) * s(j);
        return out;
    }

    /// Discrete (K u)(x_i) = sum_j K(x_i, x_j) w_j u_j.
    VectorXcd apply(const VectorXcd& u) const {
        const VectorXd s = sqrt_weights();
        VectorXcd su = (s.array() * u.array()).matrix();
        VectorXcd out = mat_ * su;
        return (out.array() / s.array()).matrix();
    }

    /// Operator with kernel |K(x, y)|.
    DiscreteOperator modulus() const { return {grid_, mat_.cwiseAbs().cast<cplx>(), sym_}; }

    /// Operator 2-norm on the weighted L^2 space.
    double norm() const { return spectral_norm(mat_); }

    static double spectral_norm(const MatrixXcd& m) {
        if (m.size() == 0) return 0.0;
        // largest eigenvalue of the Gram matrix of the smaller side
        const MatrixXcd gram = (m.rows() <= m.cols()) ? MatrixXcd(m * m.adjoint()) : MatrixXcd(m.adjoint() * m);
        Eigen::SelfAdjointEigenSolver<MatrixXcd> es(gram, Eigen::EigenvaluesOnly);
        return std::sqrt(std::max(es.eigenvalues().maxCoeff(), 0.0));
    }

private:
    VectorXd sqrt_weights() const {
        VectorXd s(grid_->size());
        for (std::size_t i = 0; i < grid_->size(); ++i) s(static_cast<Eigen::Index>(i)) = std::sqrt(grid_->weights[i]);
        return s;
    }

    GridPtr grid_;
    MatrixXcd mat_;
    Symmetry sym_ = Symmetry::General;
};

/// Log-singular diagonal: K(x, y) ~ log_coefficient * log|x - y| + regular(x) near y = x.
struct LogSingular {
    double log_coefficient = 0.0;
    std::function<cplx(Point)> regular_diagonal;
};

/// Nystrom discretization of a general kernel. With a log-singular tag the diagonal is
/// replaced by the exact integral of log over a disk cell of the node's area.
inline DiscreteOperator op_from_kernel(const std::function<cplx(Point, Point)>& k, GridPtr grid,
                                       Symmetry sym = Symmetry::General,
                                       const std::optional<LogSingular>& log_tag = std::nullopt) {
    const auto n = static_cast<Eigen::Index>(grid->size());
    MatrixXcd m(n, n);
    std::vector<double> s(grid->size());
    for (std::size_t i = 0; i < grid->size(); ++i) s[i] = std::sqrt(grid->weights[i]);
    parallel_for(grid->size(), [&](std::size_t i) {
        for (std::size_t j = 0; j < grid->size(); ++j) {
            cplx kij;
            if (i == j && log_tag) {
                const double rho = std::sqrt(grid->weights[i] / std::numbers::pi);
                kij = log_tag->log_coefficient * (std::log(rho) - 0.5) + log_tag->regular_diagonal(grid->nodes[i]);
            } else {
                kij = k(grid->nodes[i], grid->nodes[j]);
            }
            if (!std::isfinite(kij.real()) || !std::isfinite(kij.imag())) {
                std::ostringstream msg;
                msg << "op_from_kernel: non-finite kernel value at node pair (" << i << ", " << j << ")";
                throw evaluation_error(msg.str());
            }
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = s[i] * kij * s[j];
        }
    });
    return {grid, std::move(m), sym};
}

namespace detail {

/// Squared distance between nodes (a, p) and (b, q) with angular offset d = p - q.
inline double node_distance(const QuadratureGrid& g, int a, int b, int d) {
    const double ra = g.radii[a], rb = g.radii[b];
    const double s = std::sin(std::numbers::pi * d / g.n_theta);
    return std::sqrt((ra - rb) * (ra - rb) + 4.0 * ra * rb * s * s);
}

/// Fill an orthonormal-basis matrix from a table indexed by (a, b, d mod n_theta).
template <typename T>
MatrixXcd expand_table(const QuadratureGrid& g, const std::vector<T>& table, bool weight_both) {
    const auto n = static_cast<Eigen::Index>(g.size());
    MatrixXcd m(n, n);
    const int nt = g.n_theta;
    for (int a = 0; a < g.n_r; ++a) {
        for (int b = 0; b < g.n_r; ++b) {
            const double sa = std::sqrt(g.radial_weights[a] * g.radii[a] * 2.0 * std::numbers::pi / nt);
            const double sb = std::sqrt(g.radial_weights[b] * g.radii[b] * 2.0 * std::numbers::pi / nt);
            const double scale = weight_both ? sa * sb : sa / sb;
            for (int p = 0; p < nt; ++p) {
                for (int q = 0; q < nt; ++q) {
                    const int d = ((p - q) % nt + nt) % nt;
                    m(static_cast<Eigen::Index>(g.index(a, p)), static_cast<Eigen::Index>(g.index(b, q))) =
                        scale * cplx(table[(static_cast<std::size_t>(a) * g.n_r + b) * nt + d]);
                }
            }
        }
    }
    return m;
}

}  // namespace detail

/// Nystrom discretization of a kernel depending only on |x - y|; f(0) must be given
/// separately as the diagonal value.
template <typename F>
DiscreteOperator op_from_radial_kernel(const F& f, cplx diagonal, GridPtr grid) {
    const QuadratureGrid& g = *grid;
    const int nt = g.n_theta;
    std::vector<cplx> table(static_cast<std::size_t>(g.n_r) * g.n_r * nt);
    parallel_for(static_cast<std::size_t>(g.n_r), [&](std::size_t ai) {
        const int a = static_cast<int>(ai);
        for (int b = 0; b < g.n_r; ++b) {
            for (int d = 0; d < nt; ++d) {
                cplx val;
                if (a == b && d == 0) {
                    val = diagonal;
                } else {
                    val = cplx(f(detail::node_distance(g, a, b, d)));
                }
                if (!std::isfinite(val.real()) || !std::isfinite(val.imag())) {
                    std::ostringstream msg;
                    msg << "op_from_radial_kernel: non-finite kernel value at rings (" << a << ", " << b
                        << "), angular offset " << d;
                    throw evaluation_error(msg.str());
                }
                table[(static_cast<std::size_t>(a) * g.n_r + b) * nt + d] = val;
            }
        }
    });
    return {grid, detail::expand_table(g, table, true), Symmetry::Symmetric};
}

/// G0 = -(1/2pi) log|x - y| by product integration against the grid interpolant:
/// exact angular Fourier coefficients of log|x - y| and Lagrange interpolation in the radius.
/// Returned in the orthonormal basis and symmetrized.
inline DiscreteOperator g0_operator(GridPtr grid) {
    const QuadratureGrid& g = *grid;
    const int nr = g.n_r, nt = g.n_theta;
    const int mmax = nt / 2;
    const bool nyquist = (nt % 2 == 0);
    const auto unit = quad::gauss_legendre(nr);
    const auto bw = quad::barycentric_weights(unit);
    // W[m][a][b] = int_0^R c_m(r_a, rho) L_b(rho) rho d rho
    std::vector<double> W(static_cast<std::size_t>(mmax + 1) * nr * nr, 0.0);
    auto widx = [nr](int m, int a, int b) { return (static_cast<std::size_t>(m) * nr + a) * nr + b; };
    const int nq = nr + mmax + 8;
    const auto qrule = quad::gauss_legendre(nq);
    parallel_for(static_cast<std::size_t>(nr), [&](std::size_t ai) {
        const int a = static_cast<int>(ai);
        const double ra = g.radii[a];
        std::vector<double> basis;
        auto accumulate = [&](double lo, double hi, bool inner) {
            const double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
            for (int k = 0; k < nq; ++k) {
                const double rho = mid + half * qrule.nodes[k];
                const double wq = half * qrule.weights[k] * rho;
                quad::lagrange_basis(g.radii, bw, rho, basis);
                const double t = inner ? rho / ra : ra / rho;
                double tm = 1.0;
                for (int m = 0; m <= mmax; ++m) {
                    const double c = (m == 0) ? std::log(inner ? ra : rho) : -tm / (2.0 * m);
                    for (int b = 0; b < nr; ++b) W[widx(m, a, b)] += wq * c * basis[b];
                    tm *= t;
                }
            }
        };
        // inner piece: polynomial integrand; outer piece on geometric panels
        accumulate(0.0, ra, true);
        double lo = ra;
        while (lo < g.R) {
            double hi = std::min(g.R, lo * 1.5);
            if (g.R - hi < 1e-12 * g.R) hi = g.R;
            accumulate(lo, hi, false);
            lo = hi;
        }
    });
    // A(a,p; b,q) acting on nodal values
    std::vector<double> table(static_cast<std::size_t>(nr) * nr * nt);
    for (int a = 0; a < nr; ++a) {
        for (int b = 0; b < nr; ++b) {
            for (int d = 0; d < nt; ++d) {
                const double delta = 2.0 * std::numbers::pi * d / nt;
                double s = W[widx(0, a, b)];
                const int mtop = nyquist ? mmax - 1 : mmax;
                for (int m = 1; m <= mtop; ++m) s += 2.0 * W[widx(m, a, b)] * std::cos(m * delta);
                if (nyquist) s += W[widx(mmax, a, b)] * std::cos(mmax * delta);
                table[(static_cast<std::size_t>(a) * nr + b) * nt + d] = -s / nt;
            }
        }
    }
    MatrixXcd m = detail::expand_table(g, table, false);
    MatrixXcd sym = 0.5 * (m + m.transpose());
    return {grid, std::move(sym), Symmetry::Symmetric};
}

/// Plain Nystrom of the continuous remainder R0^{+/-}(lambda^2) - G0, whose value at
/// coincident points is g^{+/-}(lambda).
inline DiscreteOperator resolvent_remainder_operator(GridPtr grid, double lambda, int sign) {
    if (!(lambda > 0.0)) throw domain_error("resolvent_remainder_operator: lambda must be positive");
    const auto rc = specfun::resolvent_constants();
    auto f = [lambda, sign](double r) { return specfun::free_resolvent(lambda, r, sign) - specfun::g0(r); };
    return op_from_radial_kernel(f, rc.g(lambda, sign), std::move(grid));
}

/// Diagonal operator (multiplication by f) in the orthonormal basis.
inline DiscreteOperator multiplication_operator(const std::vector<double>& f, GridPtr grid) {
    const auto n = static_cast<Eigen::Index>(f.size());
    MatrixXcd m = MatrixXcd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) m(i, i) = f[static_cast<std::size_t>(i)];
    return {std::move(grid), std::move(m), Symmetry::Symmetric};
}

}  // namespace thresh2d::discretize
