#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "thresh2d/discretize.hpp"
#include "thresh2d/errors.hpp"
#include "thresh2d/fit.hpp"
#include "thresh2d/specfun.hpp"

namespace thresh2d::operators {

using cplx = std::complex<double>;
using discretize::DiscreteOperator;
using discretize::GridPtr;
using discretize::Point;
using discretize::SampledPotential;
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

enum class ThresholdKind { Regular, SWaveResonance, EigenvalueOnly, Other };

inline std::string to_string(ThresholdKind k) {
    switch (k) {
        case ThresholdKind::Regular: return "Regular";
        case ThresholdKind::SWaveResonance: return "SWaveResonance";
        case ThresholdKind::EigenvalueOnly: return "EigenvalueOnly";
        case ThresholdKind::Other: return "Other";
    }
    return "?";
}

/// Reflector I - 2uu^T/|u|^2 mapping e to a multiple of the first unit vector.
/// Columns 1..N-1 span the orthogonal complement of e.
class Householder {
public:
    Householder() = default;
    explicit Householder(const VectorXd& e) : u_(e) {
        const double s = (e(0) >= 0.0) ? 1.0 : -1.0;
        u_(0) += s * e.norm();
        nn_ = u_.squaredNorm();
    }
    Eigen::Index size() const { return u_.size(); }

    /// H A H for symmetric A.
    MatrixXd sandwich(const MatrixXd& a) const {
        if (nn_ == 0.0) return a;
        const VectorXd au = a * u_;
        const double uau = u_.dot(au);
        const double c = 2.0 / nn_;
        MatrixXd out = a;
        out.noalias() -= c * u_ * au.transpose();
        out.noalias() -= c * au * u_.transpose();
        out.noalias() += (c * c * uau) * u_ * u_.transpose();
        return out;
    }

    /// B^T A B with B the complement columns.
    MatrixXd compress(const MatrixXd& a) const {
        const MatrixXd h = sandwich(a);
        const Eigen::Index n = h.rows();
        return h.bottomRightCorner(n - 1, n - 1);
    }

    /// B X B^T for X on the complement.
    MatrixXd expand(const MatrixXd& x) const {
        const Eigen::Index n = x.rows() + 1;
        MatrixXd full = MatrixXd::Zero(n, n);
        full.bottomRightCorner(n - 1, n - 1) = x;
        return sandwich(full);
    }

    /// B y for a complement vector (or matrix of columns).
    MatrixXd lift(const MatrixXd& y) const {
        MatrixXd full = MatrixXd::Zero(y.rows() + 1, y.cols());
        full.bottomRows(y.rows()) = y;
        if (nn_ == 0.0) return full;
        const Eigen::RowVectorXd uy = u_.transpose() * full;
        full.noalias() -= (2.0 / nn_) * u_ * uy;
        return full;
    }

private:
    VectorXd u_;
    double nn_ = 0.0;
};

/// Discrete operators of the threshold problem for one sampled potential, in the
/// orthonormal node basis: T = U + vG0v, M(lambda) = U + vR0(lambda^2)v.
class ThresholdOperators {
public:
    explicit ThresholdOperators(SampledPotential pot) : pot_(std::move(pot)) {
        const auto& g = *pot_.grid;
        const auto n = static_cast<Eigen::Index>(g.size());
        g0_ = discretize::g0_operator(pot_.grid).matrix().real();
        v_.resize(n);
        vt_.resize(n);
        u_.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto k = static_cast<std::size_t>(i);
            v_(i) = pot_.v_values[k];
            u_(i) = pot_.u_signs[k];
            vt_(i) = pot_.v_values[k] * std::sqrt(g.weights[k]);
        }
        t_ = v_.asDiagonal() * g0_ * v_.asDiagonal();
        t_.diagonal() += u_;
        t_ = 0.5 * (t_ + t_.transpose());
        vnorm2_ = vt_.squaredNorm();
        if (vnorm2_ > 0.0) {
            e_ = vt_ / std::sqrt(vnorm2_);
        } else {
            e_ = VectorXd::Zero(n);
        }
    }

    const SampledPotential& potential() const { return pot_; }
    const GridPtr& grid() const { return pot_.grid; }
    Eigen::Index size() const { return t_.rows(); }

    const MatrixXd& T() const { return t_; }
    const MatrixXd& G0() const { return g0_; }
    const VectorXd& v() const { return v_; }
    const VectorXd& u() const { return u_; }
    /// v sqrt(w): the function v in the orthonormal basis.
    const VectorXd& v_tilde() const { return vt_; }
    /// Unit vector spanning range(P); zero when V = 0.
    const VectorXd& e() const { return e_; }
    /// ||v||^2 = ||V||_1 on the grid.
    double v_norm2() const { return vnorm2_; }

    MatrixXd P() const { return e_ * e_.transpose(); }
    MatrixXd Q() const { return MatrixXd::Identity(size(), size()) - P(); }

    DiscreteOperator build_T() const { return {grid(), t_.cast<cplx>(), discretize::Symmetry::Symmetric}; }

    /// M^{+/-}(lambda) in the orthonormal basis.
    MatrixXcd M(double lambda, int sign) const {
        if (!(lambda > 0.0)) {
            std::ostringstream msg;
            msg << "build_M: lambda must be positive (got " << lambda << ")";
            throw domain_error(msg.str());
        }
        const MatrixXcd rem = discretize::resolvent_remainder_operator(grid(), lambda, sign).matrix();
        MatrixXcd m = (g0_.cast<cplx>() + rem);
        m = v_.asDiagonal() * m * v_.asDiagonal();
        m.diagonal() += u_.cast<cplx>();
        return m;
    }

    DiscreteOperator build_M(double lambda, int sign) const {
        return {grid(), M(lambda, sign), discretize::Symmetry::Symmetric};
    }

    /// h^{+/-}(lambda) = ||v||^2 (a ln lambda + z^{+/-}) + b.
    cplx h(double lambda, int sign, double b) const {
        return vnorm2_ * specfun::resolvent_constants().g(lambda, sign) + b;
    }

private:
    SampledPotential pot_;
    MatrixXd g0_, t_;
    VectorXd v_, vt_, u_, e_;
    double vnorm2_ = 0.0;
};

struct ProjectionSet {
    MatrixXd P, Q, S1, S3;
    int rank_S1 = 0, rank_S3 = 0;
};

struct EigenfunctionDiagnostics {
    std::vector<double> psi;   // nodal values, sum w psi^2 = 1
    double moment0 = 0.0;      // int V psi
    double moment1 = 0.0;      // int x1 V psi
    double moment2 = 0.0;      // int x2 V psi
    double decay_exponent = 0.0;
    double residual = 0.0;     // ||psi + G0 V psi|| / ||psi||
};

struct ThresholdReport {
    ThresholdKind kind = ThresholdKind::Regular;
    int rank_S1 = 0, rank_S3 = 0;
    double smallest_sv_QTQ = 0.0;
    double largest_sv_QTQ = 0.0;
    double gap_ratio = 0.0;
    double tol = 0.0;
    std::vector<double> leading_svs;  // smallest singular values of QTQ, ascending
    std::optional<cplx> d1_scalar;
    double t_norm = 0.0;
    double b = 0.0;
    double v_norm2 = 0.0;
    std::vector<std::array<double, 3>> s1_moments;  // (int v phi, int x1 v phi, int x2 v phi) per S1 vector
    std::vector<EigenfunctionDiagnostics> eigenfunctions;
};

/// Everything produced by the inversion hierarchy.
struct Hierarchy {
    ProjectionSet proj;
    ThresholdReport report;
    MatrixXd Phi;       // orthonormal basis of range(S1)
    MatrixXd Phi3;      // orthonormal basis of range(S3)
    MatrixXd QD0Q;
    VectorXd t;         // Phi^T T e
    MatrixXd S;         // rank-one: (e - QD0QTe)(e - QD0QTe)^T
    MatrixXd S1D1S1;    // zero unless s-wave
    MatrixXd S3D3S3;    // zero unless eigenvalue-only
    double b = 0.0;
};

namespace detail {

inline double psi_offgrid(const ThresholdOperators& ops, const VectorXd& phi, Point x) {
    const auto& g = *ops.grid();
    double s = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) {
        const double d = discretize::distance(x, g.nodes[j]);
        s += std::log(d) * ops.v_tilde()(static_cast<Eigen::Index>(j)) * phi(static_cast<Eigen::Index>(j));
    }
    return s / (2.0 * std::numbers::pi);
}

inline EigenfunctionDiagnostics eigenfunction(const ThresholdOperators& ops, const VectorXd& phi) {
    const auto& g = *ops.grid();
    const auto n = ops.size();
    EigenfunctionDiagnostics d;
    VectorXd psit = -(ops.G0() * (ops.v().asDiagonal() * phi));
    const double nrm = psit.norm();
    if (nrm == 0.0) throw consistency_error("zero_eigenfunctions: recovered psi vanishes");
    psit /= nrm;
    d.psi.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const double sw = std::sqrt(g.weights[k]);
        d.psi[k] = psit(i) / sw;
        const double vpsi = ops.potential().values[k] * psit(i) * sw;
        d.moment0 += vpsi;
        d.moment1 += g.nodes[k].x1 * vpsi;
        d.moment2 += g.nodes[k].x2 * vpsi;
    }
    VectorXd vpsi(n);
    for (Eigen::Index i = 0; i < n; ++i) vpsi(i) = ops.potential().values[static_cast<std::size_t>(i)] * psit(i);
    d.residual = (psit + ops.G0() * vpsi).norm();

    std::vector<double> rs, amp;
    for (int k = 0; k < 16; ++k) {
        const double r = 0.5 * g.R * std::pow(4.0, k / 15.0);
        double best = 0.0;
        for (int q = 0; q < 32; ++q) {
            const double th = 2.0 * std::numbers::pi * (q + 0.5) / 32;
            best = std::max(best, std::abs(psi_offgrid(ops, phi, {r * std::cos(th), r * std::sin(th)})) / nrm);
        }
        rs.push_back(r);
        amp.push_back(std::max(best, 1e-300));
    }
    d.decay_exponent = -loglog_slope(rs, amp);
    return d;
}

}  // namespace detail

/// Inversion hierarchy: S1 from the kernel of QTQ on range(Q), D0, T1, S3, D1/D3, and the
/// threshold classification.
inline Hierarchy riesz_hierarchy(const ThresholdOperators& ops, double tol = 1e-8, double moment_tol = 1e-6) {
    if (!(tol >= 1e-12 && tol <= 1e-4)) throw domain_error("riesz_hierarchy: tol must lie in [1e-12, 1e-4]");
    const auto n = ops.size();
    const MatrixXd& T = ops.T();
    const VectorXd& e = ops.e();
    const bool has_p = ops.v_norm2() > 0.0;
    Hierarchy h;
    h.proj.P = ops.P();
    h.proj.Q = ops.Q();
    h.report.tol = tol;
    h.report.v_norm2 = ops.v_norm2();

    Householder hh;
    MatrixXd K;
    if (has_p) {
        hh = Householder(e);
        K = hh.compress(T);
    } else {
        K = T;
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(K);
    const VectorXd mu = es.eigenvalues();
    const MatrixXd& Y = es.eigenvectors();
    const auto m = mu.size();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return std::abs(mu(a)) < std::abs(mu(b)) || (std::abs(mu(a)) == std::abs(mu(b)) && a < b);
    });
    const double smax = std::abs(mu(order.back()));
    int r1 = 0;
    while (r1 < m && std::abs(mu(order[static_cast<std::size_t>(r1)])) < tol * smax) ++r1;
    h.report.smallest_sv_QTQ = std::abs(mu(order.front()));
    h.report.largest_sv_QTQ = smax;
    for (int k = 0; k < std::min<Eigen::Index>(8, m); ++k)
        h.report.leading_svs.push_back(std::abs(mu(order[static_cast<std::size_t>(k)])));
    {
        const double below = (r1 == 0) ? tol * smax : std::abs(mu(order[static_cast<std::size_t>(r1 - 1)]));
        const double above = (r1 < m) ? std::abs(mu(order[static_cast<std::size_t>(r1)])) : std::numeric_limits<double>::infinity();
        h.report.gap_ratio = (below > 0.0) ? above / below : std::numeric_limits<double>::infinity();
        if (h.report.gap_ratio < 10.0) {
            std::ostringstream msg;
            msg << "riesz_hierarchy: singular-value gap ratio " << h.report.gap_ratio
                << " < 10 around the rank threshold; refine the grid or change tol";
            throw classification_uncertain(msg.str());
        }
    }

    // D0 = (QTQ + S1)^{-1} on range(Q); kernel directions mapped to 1
    VectorXd dinv(m);
    MatrixXd Ynull(m, r1);
    for (Eigen::Index i = 0; i < m; ++i) dinv(i) = 1.0 / mu(i);
    for (int k = 0; k < r1; ++k) {
        const Eigen::Index idx = order[static_cast<std::size_t>(k)];
        dinv(idx) = 1.0;
        Ynull.col(k) = Y.col(idx);
    }
    const MatrixXd d0c = Y * dinv.asDiagonal() * Y.transpose();
    if (has_p) {
        h.QD0Q = hh.expand(d0c);
        h.Phi = hh.lift(Ynull);
    } else {
        h.QD0Q = d0c;
        h.Phi = Ynull;
    }
    h.proj.S1 = h.Phi * h.Phi.transpose();
    h.proj.rank_S1 = r1;
    h.report.rank_S1 = r1;

    const VectorXd Te = T * e;
    const VectorXd QTe = Te - e * e.dot(Te);
    h.b = has_p ? e.dot(Te) - QTe.dot(h.QD0Q * QTe) : 0.0;
    h.report.b = h.b;
    const VectorXd sv = e - h.QD0Q * QTe;
    h.S = has_p ? MatrixXd(sv * sv.transpose()) : MatrixXd::Zero(n, n);
    h.t = h.Phi.transpose() * Te;
    h.report.t_norm = h.t.norm();
    h.S1D1S1 = MatrixXd::Zero(n, n);
    h.S3D3S3 = MatrixXd::Zero(n, n);
    h.proj.S3 = MatrixXd::Zero(n, n);

    const auto& g = *ops.grid();
    MatrixXd mom(3, r1);
    for (int k = 0; k < r1; ++k) {
        double a0 = 0.0, a1 = 0.0, a2 = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double f = ops.v_tilde()(i) * h.Phi(i, k);
            a0 += f;
            a1 += g.nodes[static_cast<std::size_t>(i)].x1 * f;
            a2 += g.nodes[static_cast<std::size_t>(i)].x2 * f;
        }
        mom(0, k) = a0;
        mom(1, k) = a1;
        mom(2, k) = a2;
        h.report.s1_moments.push_back({a0, a1, a2});
    }

    if (r1 == 0) {
        h.report.kind = ThresholdKind::Regular;
        return h;
    }
    const bool t_small = h.report.t_norm < std::sqrt(tol) * smax;
    if (r1 == 1 && !t_small) {
        h.report.kind = ThresholdKind::SWaveResonance;
        const double t2 = h.t(0) * h.t(0);
        h.report.d1_scalar = cplx(1.0 / t2, 0.0);
        h.S1D1S1 = h.proj.S1 / t2;
        return h;
    }
    if (!t_small) {
        h.report.kind = ThresholdKind::Other;
        return h;
    }
    // T1 vanishes on range(S1): S3 = directions with vanishing first moments
    Eigen::JacobiSVD<MatrixXd> svd(mom.bottomRows(2), Eigen::ComputeFullV);
    const VectorXd ms = svd.singularValues();
    int nonzero = 0;
    for (Eigen::Index i = 0; i < ms.size(); ++i)
        if (ms(i) > moment_tol) ++nonzero;
    const int r3 = r1 - nonzero;
    if (r3 <= 0 || r3 < r1) {
        h.report.kind = ThresholdKind::Other;
        return h;
    }
    const MatrixXd Vnull = svd.matrixV().rightCols(r3);
    h.Phi3 = h.Phi * Vnull;
    h.proj.S3 = h.Phi3 * h.Phi3.transpose();
    h.proj.rank_S3 = r3;
    h.report.rank_S3 = r3;

    bool good = true;
    for (int k = 0; k < r3; ++k) {
        auto d = detail::eigenfunction(ops, h.Phi3.col(k));
        if (std::abs(d.moment0) > moment_tol || std::abs(d.moment1) > moment_tol ||
            std::abs(d.moment2) > moment_tol || !(d.decay_exponent >= 1.0))
            good = false;
        h.report.eigenfunctions.push_back(std::move(d));
    }
    if (!good) {
        h.report.kind = ThresholdKind::Other;
        return h;
    }
    // lambda^2 coefficient of R0 restricted to S3 reduces to (1/8pi)|x-y|^2 log|x-y|
    const MatrixXd g2 = discretize::op_from_radial_kernel(
                            [](double r) { return r * r * std::log(r); }, cplx(0.0), ops.grid())
                            .matrix()
                            .real();
    const MatrixXd c3 = h.Phi3.transpose() * ops.v().asDiagonal() * g2 * ops.v().asDiagonal() * h.Phi3;
    const MatrixXd d3 = 8.0 * std::numbers::pi * c3.inverse();
    h.S3D3S3 = h.Phi3 * d3 * h.Phi3.transpose();
    h.report.kind = ThresholdKind::EigenvalueOnly;
    return h;
}

/// Zero-energy eigenfunctions of an eigenvalue-only report.
inline const std::vector<EigenfunctionDiagnostics>& zero_eigenfunctions(const Hierarchy& h) {
    if (h.report.kind != ThresholdKind::EigenvalueOnly)
        throw precondition_error("zero_eigenfunctions: requires an EigenvalueOnly classification");
    return h.report.eigenfunctions;
}

// ---------------------------------------------------------------------------
// M^{-1} expansion

enum class Coefficient { H, HInverse, One, LambdaInverseSquared };

struct ExpansionTerm {
    std::string label;
    Coefficient coefficient = Coefficient::One;
    double scale = 1.0;
    MatrixXd factor;
};

struct MInverseExpansion {
    ThresholdKind kind = ThresholdKind::Regular;
    int sign = +1;
    double b = 0.0;
    double v_norm2 = 0.0;
    double error_order = 0.0;
    std::vector<ExpansionTerm> terms;

    cplx h(double lambda) const { return v_norm2 * specfun::resolvent_constants().g(lambda, sign) + b; }

    cplx coefficient(const ExpansionTerm& t, double lambda) const {
        switch (t.coefficient) {
            case Coefficient::H: return t.scale * h(lambda);
            case Coefficient::HInverse: return t.scale / h(lambda);
            case Coefficient::One: return t.scale;
            case Coefficient::LambdaInverseSquared: return t.scale / (lambda * lambda);
        }
        return 0.0;
    }

    MatrixXcd evaluate(double lambda) const {
        if (terms.empty()) return {};
        MatrixXcd out = MatrixXcd::Zero(terms.front().factor.rows(), terms.front().factor.cols());
        for (const auto& t : terms) out += coefficient(t, lambda) * t.factor.cast<cplx>();
        return out;
    }

    const ExpansionTerm& term(const std::string& label) const {
        for (const auto& t : terms)
            if (t.label == label) return t;
        throw std::out_of_range("MInverseExpansion: no term " + label);
    }
};

inline MInverseExpansion m_inverse_expansion(const Hierarchy& h, const ThresholdOperators& ops, int sign) {
    MInverseExpansion ex;
    ex.kind = h.report.kind;
    ex.sign = sign;
    ex.b = h.b;
    ex.v_norm2 = ops.v_norm2();
    switch (h.report.kind) {
        case ThresholdKind::Regular:
            ex.error_order = 2.0;
            ex.terms.push_back({"h^-1 S", Coefficient::HInverse, 1.0, h.S});
            ex.terms.push_back({"QD0Q", Coefficient::One, 1.0, h.QD0Q});
            break;
        case ThresholdKind::SWaveResonance: {
            ex.error_order = 1.5;
            const MatrixXd& s = h.S;
            const MatrixXd& d1 = h.S1D1S1;
            ex.terms.push_back({"-h S1D1S1", Coefficient::H, -1.0, d1});
            ex.terms.push_back({"-S S1D1S1", Coefficient::One, -1.0, s * d1});
            ex.terms.push_back({"-S1D1S1 S", Coefficient::One, -1.0, d1 * s});
            ex.terms.push_back({"-h^-1 S S1D1S1 S", Coefficient::HInverse, -1.0, s * d1 * s});
            ex.terms.push_back({"h^-1 S", Coefficient::HInverse, 1.0, s});
            ex.terms.push_back({"QD0Q", Coefficient::One, 1.0, h.QD0Q});
            break;
        }
        case ThresholdKind::EigenvalueOnly:
            ex.error_order = 1.0;
            ex.terms.push_back({"lambda^-2 S3D3S3", Coefficient::LambdaInverseSquared, 1.0, h.S3D3S3});
            ex.terms.push_back({"h^-1 S", Coefficient::HInverse, 1.0, h.S});
            ex.terms.push_back({"QD0Q", Coefficient::One, 1.0, h.QD0Q});
            break;
        case ThresholdKind::Other:
            throw precondition_error("m_inverse_expansion: no expansion for threshold kind Other");
    }
    return ex;
}

/// Spectral norm of a complex matrix.
inline double op_norm(const MatrixXcd& m) { return DiscreteOperator::spectral_norm(m); }

struct ResidualFit {
    std::vector<double> lambdas;
    std::vector<double> residuals;
    double slope = 0.0;
};

/// ||M(lambda)^{-1} - expansion(lambda)|| on the lambda grid (s-wave / regular), or
/// ||lambda^2 M(lambda)^{-1} - S3D3S3|| (eigenvalue-only), with a log-log slope.
inline ResidualFit expansion_residuals(const ThresholdOperators& ops, const MInverseExpansion& ex,
                                       const std::vector<double>& lambdas) {
    ResidualFit f;
    f.lambdas = lambdas;
    for (double lam : lambdas) {
        const MatrixXcd minv = ops.M(lam, ex.sign).partialPivLu().inverse();
        double r = 0.0;
        if (ex.kind == ThresholdKind::EigenvalueOnly) {
            r = op_norm(lam * lam * minv - ex.term("lambda^-2 S3D3S3").factor.cast<cplx>());
        } else {
            r = op_norm(minv - ex.evaluate(lam));
        }
        f.residuals.push_back(r);
    }
    f.slope = loglog_slope(f.lambdas, f.residuals);
    return f;
}

/// Throws consistency_error if the residual slope misses the claimed order by more than 0.1.
inline ResidualFit validate_expansion(const ThresholdOperators& ops, const MInverseExpansion& ex,
                                      const std::vector<double>& lambdas) {
    auto f = expansion_residuals(ops, ex, lambdas);
    const double claimed = (ex.kind == ThresholdKind::EigenvalueOnly) ? 1.0 : ex.error_order;
    if (!(f.slope >= claimed - 0.1)) {
        std::ostringstream msg;
        msg << "m_inverse_expansion: residual slope " << f.slope << " below claimed order " << claimed;
        throw consistency_error(msg.str());
    }
    return f;
}

inline std::vector<double> dyadic_lambdas(double lambda1, int kmax = 6) {
    std::vector<double> out;
    for (int k = 1; k <= kmax; ++k) out.push_back(lambda1 / std::pow(2.0, k));
    return out;
}

// ---------------------------------------------------------------------------
// O~_2(lambda^s) scaling

struct ScalingReport {
    double s = 0.0;
    std::vector<double> lambdas;
    std::array<std::vector<double>, 3> norms;  // ||d^j op|| per lambda
    std::array<double, 3> sup{};               // sup lambda^{j-s} ||d^j op||
    std::array<double, 3> slope{};             // fitted log-log slope (nan if all zero)
    bool passed = true;
};

/// Centered finite differences (step 0.05 lambda) of op(lambda), j = 0, 1, 2.
inline ScalingReport error_scaling_check(const std::function<MatrixXcd(double)>& op, double s,
                                         const std::vector<double>& lambdas, double zero_floor = 1e-13) {
    ScalingReport rep;
    rep.s = s;
    rep.lambdas = lambdas;
    for (double lam : lambdas) {
        const double dl = 0.05 * lam;
        const MatrixXcd fm = op(lam - dl), f0 = op(lam), fp = op(lam + dl);
        const double n0 = op_norm(f0);
        const double n1 = op_norm((fp - fm) / (2.0 * dl));
        const double n2 = op_norm((fp - 2.0 * f0 + fm) / (dl * dl));
        const std::array<double, 3> nn{n0, n1, n2};
        for (int j = 0; j < 3; ++j) {
            if (!std::isfinite(nn[j])) {
                std::ostringstream msg;
                msg << "error_scaling_check: non-finite norm of derivative " << j << " at lambda = " << lam;
                throw consistency_error(msg.str());
            }
            rep.norms[j].push_back(nn[j]);
            rep.sup[j] = std::max(rep.sup[j], std::pow(lam, j - s) * nn[j]);
        }
    }
    for (int j = 0; j < 3; ++j) {
        const double scale = std::max(1.0, rep.norms[0].empty() ? 1.0 : *std::max_element(rep.norms[0].begin(), rep.norms[0].end()));
        const bool all_zero = std::all_of(rep.norms[j].begin(), rep.norms[j].end(),
                                          [&](double x) { return x <= zero_floor * scale * std::pow(1.0 / lambdas.back(), j); });
        if (all_zero) {
            rep.slope[j] = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        std::vector<double> nz;
        for (double x : rep.norms[j]) nz.push_back(std::max(x, 1e-300));
        rep.slope[j] = loglog_slope(rep.lambdas, nz);
        if (!(rep.slope[j] >= s - j - 0.1)) rep.passed = false;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Coupling tuning

/// Orthonormal columns spanning angular channel m (cos(m theta) on each ring) in the
/// orthonormal node basis; for m = 0 the direction e is projected out.
inline MatrixXd channel_basis(const discretize::QuadratureGrid& g, int m, const VectorXd& e) {
    const auto n = static_cast<Eigen::Index>(g.size());
    MatrixXd b = MatrixXd::Zero(n, g.n_r);
    for (int a = 0; a < g.n_r; ++a) {
        double nn = 0.0;
        for (int p = 0; p < g.n_theta; ++p) {
            const double c = std::cos(m * g.angle(p));
            b(static_cast<Eigen::Index>(g.index(a, p)), a) = c;
            nn += c * c;
        }
        b.col(a) /= std::sqrt(nn);
    }
    if (m == 0 && e.norm() > 0.0) {
        const VectorXd ec = b.transpose() * e;
        Householder hh(ec / ec.norm());
        MatrixXd sub = hh.lift(MatrixXd::Identity(g.n_r - 1, g.n_r - 1));
        b = b * sub;
    }
    return b;
}

struct CriticalCoupling {
    double coupling = 0.0;
    int channel = 0;
    int crossing = 1;
    int iterations = 0;
    double bracket_width = 0.0;
};

/// Bisection for the coupling c at which the crossing-th eigenvalue of the channel
/// block of QTQ(c) passes through zero. V = -c * profile with c > 0.
inline CriticalCoupling find_critical_coupling(discretize::PotentialSpec spec, const GridPtr& grid, int channel,
                                               int crossing = 1) {
    if (crossing < 1) throw domain_error("find_critical_coupling: crossing must be >= 1");
    spec.coupling = 1.0;
    const ThresholdOperators unit(discretize::sample_potential(spec, grid));
    const bool all = channel < 0;
    MatrixXd B;
    if (!all) B = channel_basis(*grid, channel, unit.e());
    // T(c) = U + c K with K = s G0 s, s = sqrt(|V_1|); U does not depend on c > 0
    const MatrixXd K = unit.v().asDiagonal() * unit.G0() * unit.v().asDiagonal();
    MatrixXd Uc, Kc;
    if (all) {
        Householder hh(unit.e());
        MatrixXd um = unit.u().asDiagonal();
        Uc = hh.compress(um);
        Kc = hh.compress(0.5 * (K + K.transpose()));
    } else {
        Uc = B.transpose() * unit.u().asDiagonal() * B;
        Kc = B.transpose() * (0.5 * (K + K.transpose())) * B;
    }
    auto positives = [&](double c) {
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(Uc + c * Kc, Eigen::EigenvaluesOnly);
        return static_cast<int>((es.eigenvalues().array() > 0.0).count());
    };
    const int base = positives(0.0);
    double lo = 0.0, hi = 1.0;
    int guard = 0;
    while (positives(hi) - base < crossing) {
        lo = hi;
        hi *= 2.0;
        if (++guard > 60) throw consistency_error("find_critical_coupling: no crossing found");
    }
    CriticalCoupling out;
    out.channel = channel;
    out.crossing = crossing;
    while (hi - lo > 4.0 * std::numeric_limits<double>::epsilon() * hi) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (positives(mid) - base >= crossing)
            hi = mid;
        else
            lo = mid;
        ++out.iterations;
    }
    // pick the endpoint with the smaller |eigenvalue|
    auto closest = [&](double c) {
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(Uc + c * Kc, Eigen::EigenvaluesOnly);
        return es.eigenvalues().cwiseAbs().minCoeff();
    };
    out.coupling = closest(lo) <= closest(hi) ? lo : hi;
    out.bracket_width = hi - lo;
    return out;
}

}  // namespace thresh2d::operators
