#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "thresh2d/discretize.hpp"
#include "thresh2d/errors.hpp"
#include "thresh2d/fit.hpp"
#include "thresh2d/kernelbounds.hpp"
#include "thresh2d/operators.hpp"
#include "thresh2d/oscint.hpp"
#include "thresh2d/parallel.hpp"
#include "thresh2d/quadrature.hpp"
#include "thresh2d/specfun.hpp"

namespace thresh2d::waveop {

using cplx = std::complex<double>;
using discretize::bracket;
using discretize::Point;
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;
using operators::Hierarchy;
using operators::ThresholdKind;
using operators::ThresholdOperators;
using oscint::CutoffSpec;

enum class Label { SWaveLeading, QD0Q, STerm, D3Leading, ErrorTerm };

inline std::string to_string(Label l) {
    switch (l) {
        case Label::SWaveLeading: return "SWaveLeading";
        case Label::QD0Q: return "QD0Q";
        case Label::STerm: return "STerm";
        case Label::D3Leading: return "D3Leading";
        case Label::ErrorTerm: return "ErrorTerm";
    }
    return "?";
}

/// One low-energy term: prefactor * int R0^- v [c(lambda) op] v (R0^+ - R0^-) lambda^p chi dlambda.
struct WaveOpTerm {
    Label label = Label::QD0Q;
    MatrixXd op;           // orthonormal node basis, restricted to the active nodes
    MatrixXd left, right;  // op = left * right^T
    std::function<cplx(double)> coefficient = [](double) { return cplx(1.0); };
    double lambda_power = 1.0;
    cplx prefactor = 1.0 / cplx(0.0, std::numbers::pi);
    bool orthogonal = false;  // op annihilates v on both sides
    bool moments = false;     // op also annihilates x_j v on the right
};

/// Replacements inside the assembled integrand that orthogonality leaves invisible.
struct Substitution {
    bool subtract_h = false;         // H0^-(l|x-z|) -> H0^-(l|x-z|) - H0^-(l<x>)
    bool subtract_j = false;         // J0(l|y-w|) -> J0(l|y-w|) - J0(l|y|)
    bool subtract_j_moment = false;  // ... + l (w.y/|y|) J0'(l|y|)
};

/// Lower end of every lambda integral. The integrands are O(lambda log lambda) or smaller at 0,
/// while the unsubtracted orthogonal terms carry round-off growing like 1/lambda there.
inline constexpr double lambda_floor = 1e-6;

/// Fixed composite Gauss-Legendre rule over [lambda_floor, 2 lambda1]: geometric panels toward 0,
/// then panels no wider than pi / (2 L) and lambda1 / 16.
struct LambdaRule {
    std::vector<double> nodes, weights;
};

inline LambdaRule lambda_rule(double L, const CutoffSpec& chi, int order = 10) {
    const double top = chi.support();
    const double step = std::min(std::numbers::pi / (2.0 * std::max(L, 1.0)), chi.lambda1() / 16.0);
    std::vector<double> bp;
    for (double x = step; x > lambda_floor; x *= 0.5) bp.push_back(x);
    bp.push_back(lambda_floor);
    std::reverse(bp.begin(), bp.end());
    const int n = static_cast<int>(std::ceil((top - step) / step));
    for (int i = 1; i <= n; ++i) bp.push_back(step + (top - step) * i / n);
    const auto gl = quad::gauss_legendre(order);
    LambdaRule r;
    for (std::size_t p = 0; p + 1 < bp.size(); ++p) {
        const double a = bp[p], b = bp[p + 1];
        for (int k = 0; k < order; ++k) {
            r.nodes.push_back(0.5 * (a + b) + 0.5 * (b - a) * gl.nodes[k]);
            r.weights.push_back(0.5 * (b - a) * gl.weights[k]);
        }
    }
    return r;
}

class Assembler {
public:
    Assembler(const ThresholdOperators& ops, Hierarchy h, CutoffSpec chi = CutoffSpec(0.1))
        : h_(std::move(h)), chi_(chi), b_(h_.b), vnorm2_(ops.v_norm2()) {
        const auto& g = *ops.grid();
        const VectorXd& vt = ops.v_tilde();
        const double vmax = vt.size() ? vt.cwiseAbs().maxCoeff() : 0.0;
        for (Eigen::Index i = 0; i < vt.size(); ++i)
            if (vmax > 0.0 && std::abs(vt(i)) > 1e-14 * vmax) active_.push_back(i);
        vt_.resize(static_cast<Eigen::Index>(active_.size()));
        for (std::size_t k = 0; k < active_.size(); ++k) {
            vt_(static_cast<Eigen::Index>(k)) = vt(active_[k]);
            nodes_.push_back(g.nodes[static_cast<std::size_t>(active_[k])]);
            support_ = std::max(support_, nodes_.back().norm());
        }
    }

    const Hierarchy& hierarchy() const { return h_; }
    const CutoffSpec& cutoff() const { return chi_; }
    double support_radius() const { return support_; }
    std::size_t active_size() const { return active_.size(); }

    cplx h_minus(double lambda) const {
        return vnorm2_ * specfun::resolvent_constants().g(lambda, -1) + b_;
    }

    /// Builds a leading or expansion term; the classification must match.
    WaveOpTerm term(Label label) const {
        const auto kind = h_.report.kind;
        WaveOpTerm t;
        t.label = label;
        switch (label) {
            case Label::SWaveLeading:
                if (kind != ThresholdKind::SWaveResonance)
                    throw precondition_error("SWaveLeading requires an s-wave classification, got " + operators::to_string(kind));
                t.op = restrict(h_.S1D1S1);
                t.coefficient = [this](double l) { return h_minus(l); };
                t.orthogonal = true;
                break;
            case Label::QD0Q:
                if (kind == ThresholdKind::Other) throw precondition_error("QD0Q requires a classified threshold");
                t.op = restrict(h_.QD0Q);
                t.orthogonal = true;
                break;
            case Label::STerm:
                if (kind == ThresholdKind::Other) throw precondition_error("STerm requires a classified threshold");
                t.op = restrict(h_.S);
                t.coefficient = [this](double l) { return 1.0 / h_minus(l); };
                break;
            case Label::D3Leading:
                if (kind != ThresholdKind::EigenvalueOnly)
                    throw precondition_error("D3Leading requires an eigenvalue-only classification, got " + operators::to_string(kind));
                t.op = restrict(h_.S3D3S3);
                t.lambda_power = -1.0;
                t.orthogonal = true;
                t.moments = true;
                break;
            case Label::ErrorTerm:
                throw precondition_error("ErrorTerm is built with error_term(F, ell)");
        }
        factorize(t);
        return t;
    }

    /// N(lambda) = lambda^ell F with F given in the full orthonormal node basis.
    WaveOpTerm error_term(const MatrixXd& F, double ell) const {
        WaveOpTerm t;
        t.label = Label::ErrorTerm;
        t.op = restrict(F);
        t.coefficient = [ell](double l) { return cplx(std::pow(l, ell)); };
        t.prefactor = -1.0 / cplx(0.0, std::numbers::pi);
        factorize(t);
        return t;
    }

    // -- route (i): adaptive lambda integral of the composed node-basis operators

    cplx assemble(const WaveOpTerm& t, Point x, Point y, Substitution sub = {}, double rel_tol = 1e-10, double abs_tol = 1e-15) const {
        if (active_.empty()) return 0.0;
        check_points(x, y);
        const VectorXd wx = distances(x), wy = distances(y);
        const double bx = bracket(x.norm()), ny = y.norm();
        auto f = [&](double l) -> cplx {
            const double c = chi_(l);
            if (c == 0.0 || l <= 0.0) return 0.0;
            const auto n = vt_.size();
            VectorXcd a(n);
            VectorXd b(n);
            const cplx hx = sub.subtract_h ? specfun::h0m(l * bx) : cplx(0.0);
            double jy = 0.0, djy = 0.0;
            if (sub.subtract_j || sub.subtract_j_moment) {
                const auto bv = specfun::eval_bessel(l * ny);
                jy = bv.j0;
                djy = bv.dj0;
            }
            for (Eigen::Index i = 0; i < n; ++i) {
                a(i) = (specfun::h0m(l * wx(i)) - hx) * vt_(i);
                double bj = specfun::bessel_j0(l * wy(i));
                if (sub.subtract_j || sub.subtract_j_moment) bj -= jy;
                if (sub.subtract_j_moment) {
                    const Point& w = nodes_[static_cast<std::size_t>(i)];
                    bj += l * (w.x1 * y.x1 + w.x2 * y.x2) / ny * djy;
                }
                b(i) = bj * vt_(i);
            }
            const cplx inner = (a.array() * (t.op * b).cast<cplx>().array()).sum();
            return kHankelJ * t.coefficient(l) * std::pow(l, t.lambda_power) * c * inner;
        };
        const double L = x.norm() + y.norm() + 2.0 * support_;
        return t.prefactor * adaptive(f, L, rel_tol, abs_tol);
    }

    // -- route (ii): rank factors with the Hankel and Bessel differences written as
    // integrals of their derivatives

    cplx assemble_rank_factor(const WaveOpTerm& t, Point x, Point y, int gl_points = 20) const {
        if (active_.empty()) return 0.0;
        check_points(x, y);
        const VectorXd wx = distances(x), wy = distances(y);
        const double bx = bracket(x.norm()), ny = y.norm();
        const auto gl = quad::gauss_legendre(gl_points);
        const auto rule = lambda_rule(x.norm() + y.norm() + 2.0 * support_, chi_);
        const auto n = vt_.size();
        // integral of g over [lo, hi], log variable when the ratio is large
        auto line = [&](auto&& g, double lo, double hi) -> decltype(g(1.0)) {
            using T = decltype(g(1.0));
            T s{};
            if (lo == hi) return s;
            const double a = std::min(lo, hi), b = std::max(lo, hi);
            const double sign = hi > lo ? 1.0 : -1.0;
            if (a > 0.0 && b / a > 4.0) {
                const double la = std::log(a), lb = std::log(b);
                for (int k = 0; k < gl_points; ++k) {
                    const double r = std::exp(0.5 * (la + lb) + 0.5 * (lb - la) * gl.nodes[k]);
                    s += 0.5 * (lb - la) * gl.weights[k] * r * g(r);
                }
            } else {
                for (int k = 0; k < gl_points; ++k) s += 0.5 * (b - a) * gl.weights[k] * g(0.5 * (a + b) + 0.5 * (b - a) * gl.nodes[k]);
            }
            return sign * s;
        };
        quad::NeumaierSum<cplx> total;
        for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
            const double l = rule.nodes[k];
            const double c = chi_(l);
            if (c == 0.0) continue;
            VectorXcd a(n);
            VectorXd b(n);
            const double dj = t.moments ? specfun::eval_bessel(l * ny).dj0 : 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const Point& w = nodes_[static_cast<std::size_t>(i)];
                if (t.orthogonal) {
                    a(i) = l * line([&](double r) { return specfun::envelope_target(l * r, specfun::Target::H0mp); }, bx, wx(i));
                    if (t.moments) {
                        const double geo = wy(i) - ny + (w.x1 * y.x1 + w.x2 * y.x2) / ny;
                        const double d0 = wy(i);
                        b(i) = l * geo * dj +
                               l * l * line([&](double s) { return (s - d0) * specfun::eval_bessel(l * s).d2j0; }, d0, ny);
                    } else {
                        b(i) = l * line([&](double s) { return specfun::eval_bessel(l * s).dj0; }, ny, wy(i));
                    }
                } else {
                    a(i) = specfun::h0m(l * wx(i));
                    b(i) = specfun::bessel_j0(l * wy(i));
                }
                a(i) *= vt_(i);
                b(i) *= vt_(i);
            }
            const VectorXcd pa = t.left.transpose() * a;
            const VectorXd pb = t.right.transpose() * b;
            total.add(rule.weights[k] * kHankelJ * t.coefficient(l) * std::pow(l, t.lambda_power) * c * (pa.array() * pb.cast<cplx>().array()).sum());
        }
        return t.prefactor * total.value();
    }

    // -- batch evaluation on a fixed lambda rule: values(ix, iy). Each x gives a row
    // of weighted left vectors, each y a column of right vectors; the sum over lambda
    // nodes and rank becomes one matrix product per block of y.

    MatrixXcd assemble_batch(const WaveOpTerm& t, const std::vector<Point>& xs, const std::vector<Point>& ys, int jobs = 0) const {
        MatrixXcd out = MatrixXcd::Zero(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(ys.size()));
        if (active_.empty() || xs.empty() || ys.empty()) return out;
        for (const auto& x : xs) check_points(x, ys.front());
        for (const auto& y : ys) check_points(xs.front(), y);
        double L = 0.0, Ly = 0.0;
        for (const auto& p : xs) L = std::max(L, p.norm());
        for (const auto& p : ys) Ly = std::max(Ly, p.norm());
        const auto rule = lambda_rule(L + Ly + 2.0 * support_, chi_);
        const auto n = vt_.size();
        const auto m = static_cast<Eigen::Index>(rule.nodes.size());
        // full-rank operators go on the x side whole
        const bool dense = 2 * t.left.cols() > n;
        const MatrixXd xop = dense ? MatrixXd(t.op.transpose()) : MatrixXd(t.left.transpose());
        const Eigen::Index rank = xop.rows();
        const Eigen::Index K = rank * m;
        VectorXcd c(m);
        for (Eigen::Index k = 0; k < m; ++k) {
            const double l = rule.nodes[static_cast<std::size_t>(k)];
            c(k) = rule.weights[static_cast<std::size_t>(k)] * kHankelJ * t.coefficient(l) * std::pow(l, t.lambda_power) * chi_(l);
        }
        MatrixXd xre(static_cast<Eigen::Index>(xs.size()), K), xim(static_cast<Eigen::Index>(xs.size()), K);
        parallel_for(xs.size(), [&](std::size_t ix) {
            const VectorXd d = distances(xs[ix]);
            MatrixXcd a(n, m);
            for (Eigen::Index k = 0; k < m; ++k)
                for (Eigen::Index i = 0; i < n; ++i) a(i, k) = specfun::h0m(rule.nodes[static_cast<std::size_t>(k)] * d(i)) * vt_(i);
            MatrixXcd pa = xop * a;
            pa = pa * c.asDiagonal();
            const auto row = static_cast<Eigen::Index>(ix);
            for (Eigen::Index q = 0; q < K; ++q) {
                xre(row, q) = pa.data()[q].real();
                xim(row, q) = pa.data()[q].imag();
            }
        }, jobs);
        const std::size_t block = 32;
        for (std::size_t y0 = 0; y0 < ys.size(); y0 += block) {
            const std::size_t nb = std::min(block, ys.size() - y0);
            MatrixXd pb(K, static_cast<Eigen::Index>(nb));
            parallel_for(nb, [&](std::size_t j) {
                const VectorXd d = distances(ys[y0 + j]);
                MatrixXd b(n, m);
                for (Eigen::Index k = 0; k < m; ++k)
                    for (Eigen::Index i = 0; i < n; ++i) b(i, k) = specfun::bessel_j0(rule.nodes[static_cast<std::size_t>(k)] * d(i)) * vt_(i);
                if (dense) {
                    pb.col(static_cast<Eigen::Index>(j)) = Eigen::Map<const VectorXd>(b.data(), K);
                } else {
                    const MatrixXd r = t.right.transpose() * b;
                    pb.col(static_cast<Eigen::Index>(j)) = Eigen::Map<const VectorXd>(r.data(), K);
                }
            }, jobs);
            const MatrixXd re = xre * pb, im = xim * pb;
            for (Eigen::Index ix = 0; ix < re.rows(); ++ix)
                for (std::size_t j = 0; j < nb; ++j)
                    out(ix, static_cast<Eigen::Index>(y0 + j)) = t.prefactor * cplx(re(ix, static_cast<Eigen::Index>(j)), im(ix, static_cast<Eigen::Index>(j)));
        }
        return out;
    }

private:
    // (R0^+ - R0^-) = (i/2) J0 and R0^- = -(i/4) H0^-
    static inline const cplx kHankelJ = cplx(0.0, -0.25) * cplx(0.0, 0.5);

    MatrixXd restrict(const MatrixXd& full) const {
        const auto n = static_cast<Eigen::Index>(active_.size());
        MatrixXd r(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) r(i, j) = full(active_[static_cast<std::size_t>(i)], active_[static_cast<std::size_t>(j)]);
        return r;
    }

    static void factorize(WaveOpTerm& t) {
        if (t.op.size() == 0) {
            t.left = t.right = MatrixXd(0, 0);
            return;
        }
        Eigen::BDCSVD<MatrixXd> svd(t.op, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const auto& s = svd.singularValues();
        Eigen::Index r = 0;
        while (r < s.size() && s(r) > 1e-13 * std::max(s(0), 1e-300)) ++r;
        t.left = svd.matrixU().leftCols(r) * s.head(r).asDiagonal();
        t.right = svd.matrixV().leftCols(r);
    }

    VectorXd distances(Point p) const {
        VectorXd d(static_cast<Eigen::Index>(nodes_.size()));
        for (std::size_t i = 0; i < nodes_.size(); ++i) d(static_cast<Eigen::Index>(i)) = discretize::distance(p, nodes_[i]);
        return d;
    }

    void check_points(Point x, Point y) const {
        if (!(y.norm() > 0.0)) throw domain_error("wave operator kernel: y must be nonzero");
        for (const auto& z : nodes_)
            if (discretize::distance(x, z) == 0.0 || discretize::distance(y, z) == 0.0)
                throw domain_error("wave operator kernel: evaluation point coincides with a grid node");
    }

    template <typename F>
    cplx adaptive(const F& f, double L, double rel_tol, double abs_tol) const {
        std::vector<double> bp;
        const double top = chi_.support();
        const double step = std::min(std::numbers::pi / (4.0 * std::max(L, 1.0)), top / 32.0);
        for (double x = step; x > lambda_floor; x *= 0.5) bp.push_back(x);
        bp.push_back(lambda_floor);
        std::reverse(bp.begin(), bp.end());
        const int n = static_cast<int>(std::ceil((top - step) / step));
        for (int i = 1; i <= n; ++i) bp.push_back(step + (top - step) * i / n);
        return quad::integrate_adaptive(f, bp, rel_tol, abs_tol, 100000).value;
    }

    Hierarchy h_;
    CutoffSpec chi_;
    double b_ = 0.0, vnorm2_ = 0.0;
    std::vector<Eigen::Index> active_;
    VectorXd vt_;
    std::vector<Point> nodes_;
    double support_ = 0.0;
};

// ---------------------------------------------------------------------------
// Majorants

/// int int r^eps k(r,s) / (<r>^eps <r - X>^N <s - Y>^N) ds dr with N = 2 + eps and
/// k(r,s) = 1/(sqrt(rs) <r-s>^2) + 1/(r <r+s>^{2+eps}), tabulated as G_X^T K G_Y on
/// fixed radial rules. The pieces below r0, s0 are integrated from the small-argument form.
class KBoundMajorant {
public:
    explicit KBoundMajorant(double eps = 0.25, double rmax = 1e5) : eps_(eps) {
        if (!(eps > 0.0 && eps < 0.5)) throw domain_error("kbound majorant: eps must lie in (0, 1/2)");
        const auto gl = quad::gauss_legendre(6);
        std::vector<double> bp;
        for (double x = 1.0; x > kR0; x *= 0.25) bp.push_back(x);
        bp.push_back(kR0);
        std::reverse(bp.begin(), bp.end());
        for (double x = 2.0; x <= 160.0; x += 1.0) bp.push_back(x);
        for (double x = 160.0 * 1.15; x < rmax; x *= 1.15) bp.push_back(x);
        for (std::size_t p = 0; p + 1 < bp.size(); ++p)
            for (int k = 0; k < 6; ++k) {
                const double a = bp[p], b = bp[p + 1];
                nodes_.push_back(0.5 * (a + b) + 0.5 * (b - a) * gl.nodes[k]);
                weights_.push_back(0.5 * (b - a) * gl.weights[k]);
            }
        const auto n = static_cast<Eigen::Index>(nodes_.size());
        // index 0 carries the [0, r0] (resp. [0, s0]) piece
        kq_ = MatrixXd::Zero(n + 1, n + 1);
        for (Eigen::Index a = 0; a < n; ++a) {
            const double r = nodes_[a], wr = weights_[a];
            const double phi = std::pow(r / bracket(r), eps_);
            for (Eigen::Index b = 0; b < n; ++b) kq_(a + 1, b + 1) = phi * k(r, nodes_[b]) * wr * weights_[b];
            // s in [0, s0]
            kq_(a + 1, 0) = phi * wr * (2.0 * std::sqrt(kR0) / (std::sqrt(r) * std::pow(bracket(r), 2)) + kR0 / (r * std::pow(bracket(r), 2.0 + eps_)));
        }
        for (Eigen::Index b = 0; b < n; ++b) {
            const double s = nodes_[b];
            kq_(0, b + 1) = weights_[b] * (std::pow(kR0, eps_ + 0.5) / (eps_ + 0.5) / (std::sqrt(s) * std::pow(bracket(s), 2)) +
                                           std::pow(kR0, eps_) / eps_ / std::pow(bracket(s), 2.0 + eps_));
        }
        kq_(0, 0) = std::pow(kR0, eps_) / eps_ * kR0;
    }

    double eps() const { return eps_; }

    double k(double r, double s) const {
        return 1.0 / (std::sqrt(r * s) * std::pow(bracket(r - s), 2)) + 1.0 / (r * std::pow(bracket(r + s), 2.0 + eps_));
    }

    MatrixXd table(const std::vector<double>& X, const std::vector<double>& Y) const {
        return gmat(X) * kq_ * gmat(Y).transpose();
    }

    double operator()(double X, double Y) const { return table({X}, {Y})(0, 0); }

private:
    MatrixXd gmat(const std::vector<double>& X) const {
        const double N = 2.0 + eps_;
        MatrixXd g(static_cast<Eigen::Index>(X.size()), static_cast<Eigen::Index>(nodes_.size() + 1));
        for (std::size_t i = 0; i < X.size(); ++i) {
            g(static_cast<Eigen::Index>(i), 0) = std::pow(bracket(X[i]), -N);
            for (std::size_t a = 0; a < nodes_.size(); ++a)
                g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a + 1)) = std::pow(bracket(nodes_[a] - X[i]), -N);
        }
        return g;
    }

    static constexpr double kR0 = 1e-8;
    double eps_;
    std::vector<double> nodes_, weights_;
    MatrixXd kq_;
};

/// 1/(<x><|x|-|y|>^2) + 1/(<x>^{1-eps}<|x|-|y|><|x|+|y|>)
inline double d3_majorant(double X, double Y, double eps = 0.1) {
    return 1.0 / (bracket(X) * std::pow(bracket(X - Y), 2)) + 1.0 / (std::pow(bracket(X), 1.0 - eps) * bracket(X - Y) * bracket(X + Y));
}

/// 1/(<|x|-|y|>^2 (<x><y>)^{1/2})
inline double error_majorant(double X, double Y) {
    return 1.0 / (std::pow(bracket(X - Y), 2) * std::sqrt(bracket(X) * bracket(Y)));
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepSpec {
    double lo = 0.5, hi = 100.0;
    int n = 10;
    int angles = 8;
};

struct KernelSweep {
    Label label = Label::QD0Q;
    std::vector<double> x_radius, y_radius;
    std::vector<int> angle;
    std::vector<cplx> value;
    std::vector<double> majorant, ratio;
    double C = 0.0;
    std::size_t argmax = 0;
    std::size_t size() const { return value.size(); }
};

/// x on the positive first axis, y at `angles` directions. The radii are kept off the
/// grid radii by a small irrational shift of the angle.
inline KernelSweep kernel_sweep(const Assembler& as, const WaveOpTerm& t, const SweepSpec& spec,
                                const std::function<MatrixXd(const std::vector<double>&, const std::vector<double>&)>& majorant,
                                int jobs = 0) {
    const auto radii = oscint::logspace(spec.lo, spec.hi, spec.n);
    std::vector<Point> xs, ys;
    const double tilt = 0.0123456789;
    for (double r : radii) xs.push_back({r * std::cos(tilt), r * std::sin(tilt)});
    std::vector<double> yr;
    std::vector<int> ya;
    for (double r : radii)
        for (int q = 0; q < spec.angles; ++q) {
            const double th = tilt + 2.0 * std::numbers::pi * (q + 0.5) / spec.angles;
            ys.push_back({r * std::cos(th), r * std::sin(th)});
            yr.push_back(r);
            ya.push_back(q);
        }
    const MatrixXcd vals = as.assemble_batch(t, xs, ys, jobs);
    const MatrixXd maj = majorant(radii, radii);
    KernelSweep s;
    s.label = t.label;
    for (std::size_t ix = 0; ix < xs.size(); ++ix)
        for (std::size_t iy = 0; iy < ys.size(); ++iy) {
            s.x_radius.push_back(radii[ix]);
            s.y_radius.push_back(yr[iy]);
            s.angle.push_back(ya[iy]);
            const cplx v = vals(static_cast<Eigen::Index>(ix), static_cast<Eigen::Index>(iy));
            const double m = maj(static_cast<Eigen::Index>(ix), static_cast<Eigen::Index>(iy / spec.angles));
            s.value.push_back(v);
            s.majorant.push_back(m);
            s.ratio.push_back(std::abs(v) / m);
        }
    for (std::size_t p = 0; p < s.size(); ++p) {
        if (!std::isfinite(s.ratio[p])) {
            std::ostringstream msg;
            msg << to_string(t.label) << " sweep: unbounded ratio at |x| = " << s.x_radius[p] << ", |y| = " << s.y_radius[p];
            throw consistency_error(msg.str());
        }
        if (s.ratio[p] > s.C) {
            s.C = s.ratio[p];
            s.argmax = p;
        }
    }
    return s;
}

/// Columns |x|, |y|, angle index, |A|, majorant, ratio.
inline void write_csv(std::ostream& os, const KernelSweep& s) {
    os << "x,y,angle,abs_A,majorant,ratio\n";
    os.precision(12);
    for (std::size_t p = 0; p < s.size(); ++p)
        os << s.x_radius[p] << ',' << s.y_radius[p] << ',' << s.angle[p] << ',' << std::abs(s.value[p]) << ',' << s.majorant[p] << ','
           << s.ratio[p] << '\n';
}

struct StabilityCheck {
    double coarse = 0.0, fine = 0.0, change = 0.0;
    bool stable = false;
};

inline StabilityCheck stability(double coarse, double fine, double threshold = 0.05) {
    StabilityCheck c{coarse, fine, std::abs(fine - coarse) / coarse, false};
    c.stable = std::isfinite(c.change) && c.change < threshold;
    return c;
}

/// Row and column sups of a radial kernel m(|x|, |y|) over the disk of radius R; the growth
/// exponents in R are judged as in kernelbounds::admissibility_sweep.
struct RadialAdmissibility {
    std::vector<double> radii, row_sups, col_sups;
    double row_slope = 0.0, col_slope = 0.0;
    bool admissible = false;
};

inline RadialAdmissibility radial_admissibility(const std::function<MatrixXd(const std::vector<double>&, const std::vector<double>&)>& m,
                                               const std::vector<double>& radii, double max_slope = 0.25) {
    RadialAdmissibility out;
    out.radii = radii;
    const auto gl = quad::gauss_legendre(4);
    for (double R : radii) {
        std::vector<double> rho, w;
        const int panels = static_cast<int>(std::ceil(2.0 * R));
        for (int p = 0; p < panels; ++p)
            for (int k = 0; k < 4; ++k) {
                const double a = R * p / panels, b = R * (p + 1) / panels;
                rho.push_back(0.5 * (a + b) + 0.5 * (b - a) * gl.nodes[k]);
                w.push_back(0.5 * (b - a) * gl.weights[k] * 2.0 * std::numbers::pi * rho.back());
            }
        const MatrixXd t = m(rho, rho);
        const VectorXd wv = Eigen::Map<const VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
        out.row_sups.push_back((t * wv).maxCoeff());
        out.col_sups.push_back((t.transpose() * wv).maxCoeff());
    }
    out.admissible = true;
    for (std::size_t i = 0; i < radii.size(); ++i)
        if (!std::isfinite(out.row_sups[i]) || !std::isfinite(out.col_sups[i])) out.admissible = false;
    if (out.admissible && radii.size() >= 2) {
        out.row_slope = loglog_slope(radii, out.row_sups);
        out.col_slope = loglog_slope(radii, out.col_sups);
        out.admissible = out.row_slope <= max_slope && out.col_slope <= max_slope;
    }
    return out;
}

/// Fitted decay exponent of max over y-angles |A| in <|x| - |y|> at fixed |y|.
struct DecayFit {
    std::vector<double> separation, magnitude;
    double exponent = 0.0;
};

inline DecayFit decay_in_separation(const Assembler& as, const WaveOpTerm& t, double y_radius, const std::vector<double>& separations,
                                    bool normalize_brackets = false, int angles = 8, int jobs = 0) {
    std::vector<Point> xs, ys;
    const double tilt = 0.0123456789;
    for (double d : separations) xs.push_back({(y_radius + d) * std::cos(tilt), (y_radius + d) * std::sin(tilt)});
    for (int q = 0; q < angles; ++q) {
        const double th = tilt + 2.0 * std::numbers::pi * (q + 0.5) / angles;
        ys.push_back({y_radius * std::cos(th), y_radius * std::sin(th)});
    }
    const MatrixXcd v = as.assemble_batch(t, xs, ys, jobs);
    DecayFit f;
    std::vector<double> bx;
    for (std::size_t i = 0; i < separations.size(); ++i) {
        double m = v.row(static_cast<Eigen::Index>(i)).cwiseAbs().maxCoeff();
        if (normalize_brackets) m *= std::sqrt(bracket(y_radius + separations[i]) * bracket(y_radius));
        f.separation.push_back(separations[i]);
        f.magnitude.push_back(m);
        bx.push_back(bracket(separations[i]));
    }
    f.exponent = -loglog_slope(bx, f.magnitude);
    return f;
}

// ---------------------------------------------------------------------------
// Ingredient checks

/// sup over samples of | |y-w| - |y| + w.y/|y| | |y| / |w|^2.
inline double geometric_constant(int samples = 10000, std::uint64_t seed = 17) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> lr(std::log(1e-3), std::log(1e3)), ang(0.0, 2.0 * std::numbers::pi);
    double c = 0.0;
    for (int i = 0; i < samples; ++i) {
        const double ry = std::exp(lr(rng)), rw = std::exp(lr(rng)), ty = ang(rng), tw = ang(rng);
        const Point y{ry * std::cos(ty), ry * std::sin(ty)}, w{rw * std::cos(tw), rw * std::sin(tw)};
        const double q = std::abs(discretize::distance(y, w) - ry + (w.x1 * y.x1 + w.x2 * y.x2) / ry) * ry / (rw * rw);
        c = std::max(c, q);
    }
    return c;
}

/// lambda-derivatives of G^{+/-}_y(y1) = e^{-/+ i lambda |y|} R0^{+/-}(lambda^2)(y1, y).
inline std::array<cplx, 3> g_function(double lambda, Point y, Point y1, int sign) {
    const double d = discretize::distance(y, y1), ny = y.norm();
    const auto bv = specfun::eval_bessel(lambda * d);
    const cplx h0 = sign > 0 ? bv.h0p() : bv.h0m, h1 = sign > 0 ? bv.h1p() : bv.h1m();
    const cplx c = sign > 0 ? cplx(0.0, 0.25) : cplx(0.0, -0.25);
    const cplx iphi = cplx(0.0, sign > 0 ? -ny : ny);
    const cplx ph = std::exp(iphi * lambda);
    const cplx H = h0, H1 = -d * h1, H2 = -d * d * (h0 - h1 / (lambda * d));
    return {c * ph * H, c * ph * (iphi * H + H1), c * ph * (iphi * iphi * H + 2.0 * iphi * H1 + H2)};
}

struct GBoundCheck {
    double ratio[3] = {0.0, 0.0, 0.0};  // sup |d^j G| sqrt(lambda |y1 - y|) / <y1>^j
    int samples = 0;
};

/// Derivative orders j >= 1 are sampled only where lambda |y1 - y| >= 1; below that the
/// Hankel derivative carries a 1/lambda singularity the bound does not describe.
inline GBoundCheck g_bound_check(const CutoffSpec& chi, int samples = 4000, std::uint64_t seed = 23) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> lr(std::log(0.1), std::log(50.0)), ang(0.0, 2.0 * std::numbers::pi),
        ll(std::log(1e-4 * chi.support()), std::log(chi.support()));
    GBoundCheck c;
    for (int i = 0; i < samples; ++i) {
        const double ry = std::exp(lr(rng)), r1 = std::exp(lr(rng)), ty = ang(rng), t1 = ang(rng), l = std::exp(ll(rng));
        const Point y{ry * std::cos(ty), ry * std::sin(ty)}, y1{r1 * std::cos(t1), r1 * std::sin(t1)};
        const double d = discretize::distance(y, y1);
        for (int sign : {+1, -1}) {
            const auto g = g_function(l, y, y1, sign);
            for (int j = 0; j < 3; ++j) {
                if (j > 0 && l * d < 1.0) continue;
                c.ratio[j] = std::max(c.ratio[j], std::abs(g[j]) * std::sqrt(l * d) / std::pow(bracket(r1), j));
            }
        }
        ++c.samples;
    }
    return c;
}

// ---------------------------------------------------------------------------
// Proposition-level checks

using RadialTable = std::function<MatrixXd(const std::vector<double>&, const std::vector<double>&)>;

inline RadialTable pointwise(std::function<double(double, double)> f) {
    return [f = std::move(f)](const std::vector<double>& a, const std::vector<double>& b) {
        MatrixXd m(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::size_t j = 0; j < b.size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = f(a[i], b[j]);
        return m;
    };
}

inline kernelbounds::KernelFunction d3_majorant_kernel(double eps = 0.1) {
    return {"D3 majorant", [eps](Point x, Point y) { return d3_majorant(x.norm(), y.norm(), eps); }, false, std::nullopt, std::nullopt};
}

/// P + e2 e2^T with e2 the normalized first moment v~ x_1.
inline MatrixXd default_error_operator(const ThresholdOperators& ops) {
    const auto& g = *ops.grid();
    VectorXd e2(ops.size());
    for (Eigen::Index i = 0; i < e2.size(); ++i) e2(i) = ops.v_tilde()(i) * g.nodes[static_cast<std::size_t>(i)].x1;
    if (e2.norm() == 0.0) return ops.P();
    e2.normalize();
    return ops.P() + e2 * e2.transpose();
}

struct CheckConfig {
    SweepSpec coarse{0.5, 100.0, 73, 8};
    SweepSpec fine{0.5, 100.0, 145, 8};
    double stability = 0.05;               // relative change of C under refinement
    std::vector<double> radii{15.0, 30.0, 60.0};
    std::vector<double> lp_exponents{1.0, 2.0, 8.0};
    int samples = 10;                      // random (x, y) for identities and route agreement
    double sample_lo = 0.5, sample_hi = 10.0;
    double identity_tol = 1e-7;
    double decay_required = 2.0;
    double decay_y = 0.5;                  // |y| for the decay fit
    int decay_points = 4;
    std::uint64_t seed = 7;
    int jobs = 0;
};

struct TermCheck {
    Label label = Label::QD0Q;
    KernelSweep sweep;
    StabilityCheck refinement;
    DecayFit decay;
    double identity_error = 0.0;  // max relative change under the orthogonality substitutions
    double route_error = 0.0;     // adaptive assembly vs rank factors
    std::optional<RadialAdmissibility> admissibility;
    std::optional<kernelbounds::LpLemmaCheck> lp;
    std::optional<double> geometric;
    std::optional<GBoundCheck> gbounds;
    std::optional<operators::ScalingReport> scaling;
    std::vector<std::string> failures;
    bool passed() const { return failures.empty(); }
};

namespace detail {

inline std::vector<std::pair<Point, Point>> random_pairs(const CheckConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> r(cfg.sample_lo, cfg.sample_hi), a(0.0, 2.0 * std::numbers::pi);
    std::vector<std::pair<Point, Point>> out;
    for (int i = 0; i < cfg.samples; ++i) {
        const double rx = r(rng), ax = a(rng), ry = r(rng), ay = a(rng);
        out.push_back({{rx * std::cos(ax), rx * std::sin(ax)}, {ry * std::cos(ay), ry * std::sin(ay)}});
    }
    return out;
}

inline double rel(cplx a, cplx b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

inline std::vector<Substitution> substitutions(const WaveOpTerm& t) {
    std::vector<Substitution> out;
    if (!t.orthogonal) return out;
    out.push_back({true, false, false});
    out.push_back({false, true, false});
    out.push_back({true, true, false});
    if (t.moments) out.push_back({true, true, true});
    return out;
}

inline void common(TermCheck& c, const Assembler& as, const WaveOpTerm& t, const RadialTable& majorant, const CheckConfig& cfg,
                   bool normalize_decay) {
    c.label = t.label;
    for (const auto& [x, y] : random_pairs(cfg)) {
        const cplx plain = as.assemble(t, x, y);
        for (const auto& sub : substitutions(t)) c.identity_error = std::max(c.identity_error, rel(as.assemble(t, x, y, sub), plain));
        c.route_error = std::max(c.route_error, rel(as.assemble_rank_factor(t, x, y), plain));
    }
    if (c.identity_error > cfg.identity_tol) c.failures.push_back("orthogonality substitution changes the value");
    if (c.route_error > cfg.identity_tol) c.failures.push_back("assembly routes disagree");
    c.sweep = kernel_sweep(as, t, cfg.coarse, majorant, cfg.jobs);
    const auto fine = kernel_sweep(as, t, cfg.fine, majorant, cfg.jobs);
    c.refinement = stability(c.sweep.C, fine.C, cfg.stability);
    if (!c.refinement.stable) c.failures.push_back("sweep constant is not refinement-stable");
    // far field: separations well past the cutoff wavelength
    const double l1 = as.cutoff().lambda1();
    c.decay = decay_in_separation(as, t, cfg.decay_y, oscint::logspace(10.0 / l1, 40.0 / l1, cfg.decay_points), normalize_decay, 8, cfg.jobs);
    if (!(c.decay.exponent >= cfg.decay_required)) c.failures.push_back("decay in ||x| - |y|| is slower than required");
}

}  // namespace detail

/// s-wave leading term (or its QD0Q companion) against the kbound majorant.
inline TermCheck swave_bound_check(const Assembler& as, Label label = Label::SWaveLeading, const CheckConfig& cfg = {},
                                   double eps = 0.25) {
    if (label != Label::SWaveLeading && label != Label::QD0Q) throw domain_error("swave_bound_check: label must be SWaveLeading or QD0Q");
    const auto t = as.term(label);
    const auto kb = std::make_shared<KBoundMajorant>(eps);
    const RadialTable maj = [kb](const std::vector<double>& a, const std::vector<double>& b) { return kb->table(a, b); };
    TermCheck c;
    detail::common(c, as, t, maj, cfg, false);
    c.admissibility = radial_admissibility(maj, cfg.radii);
    if (!c.admissibility->admissible) c.failures.push_back("majorant is not admissible");
    return c;
}

inline TermCheck d3_bound_check(const Assembler& as, const CheckConfig& cfg = {}, double eps = 0.1) {
    const auto t = as.term(Label::D3Leading);
    TermCheck c;
    detail::common(c, as, t, pointwise([eps](double a, double b) { return d3_majorant(a, b, eps); }), cfg, false);
    c.geometric = geometric_constant();
    if (!std::isfinite(*c.geometric)) c.failures.push_back("geometric inequality constant is not finite");
    c.lp = kernelbounds::lp_stability_check(d3_majorant_kernel(eps), cfg.lp_exponents, cfg.radii, 0.1, 16, cfg.jobs);
    if (!c.lp->stable) c.failures.push_back("majorant p-norms are not stable under domain growth");
    return c;
}

/// Error term with N(lambda) = lambda^ell F; needs ell > 1.
inline TermCheck error_term_check(const Assembler& as, const MatrixXd& F, double ell, const CheckConfig& cfg = {}) {
    if (!(ell > 1.0)) throw precondition_error("error_term_check: the order ell must exceed 1");
    TermCheck c;
    c.scaling = operators::error_scaling_check([&](double l) { return MatrixXcd((std::pow(l, ell) * F).cast<cplx>()); }, ell,
                                               operators::dyadic_lambdas(as.cutoff().lambda1()));
    if (!c.scaling->passed) throw precondition_error("error_term_check: N(lambda) fails the lambda^ell derivative scaling");
    const auto t = as.error_term(F, ell);
    CheckConfig local = cfg;
    local.decay_y = 1.0;
    detail::common(c, as, t, pointwise(error_majorant), local, true);
    c.admissibility = radial_admissibility(pointwise(error_majorant), cfg.radii);
    if (!c.admissibility->admissible) c.failures.push_back("majorant is not admissible");
    c.gbounds = g_bound_check(as.cutoff());
    for (double r : c.gbounds->ratio)
        if (!std::isfinite(r)) c.failures.push_back("G-function bound ratio is not finite");
    return c;
}

/// S term: assembled and compared with the kbound majorant for information only.
inline KernelSweep sterm_sweep(const Assembler& as, const SweepSpec& spec = {}, double eps = 0.25, int jobs = 0) {
    const auto kb = std::make_shared<KBoundMajorant>(eps);
    return kernel_sweep(as, as.term(Label::STerm), spec, [kb](const std::vector<double>& a, const std::vector<double>& b) { return kb->table(a, b); },
                        jobs);
}

}  // namespace thresh2d::waveop
