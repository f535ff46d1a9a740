#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

#include "thresh2d/kernelbounds.hpp"

using namespace thresh2d;
using namespace thresh2d::kernelbounds;

namespace {
KernelFunction gaussian_kernel() {
    return {"gauss", [](Point x, Point y) { return std::exp(-x.norm() * x.norm() - y.norm() * y.norm()); }, true, {}, {}};
}
KernelFunction flat_kernel(double eps) {
    return {"flat", [eps](Point x, Point) { return std::pow(bracket(x.norm()), -(1.0 - eps)); }, false, {}, {}};
}
}  // namespace

TEST_CASE("separable Gaussian row integrals", "[kernelbounds]") {
    const auto g = build_panel_grid(8.0, 16, 8);
    const MatrixXd m = kernel_matrix(gaussian_kernel(), *g);
    const VectorXd w = Eigen::Map<const VectorXd>(g->weights.data(), static_cast<Eigen::Index>(g->size()));
    const VectorXd rows = m * w;
    for (std::size_t i = 0; i < g->size(); i += 11) {
        const double r = g->nodes[i].norm();
        CHECK(std::abs(rows(static_cast<Eigen::Index>(i)) - std::numbers::pi * std::exp(-r * r)) < 1e-10);
    }
    const auto a = admissibility(gaussian_kernel(), *g);
    CHECK(a.admissible);
    CHECK(std::abs(a.row_sup - std::numbers::pi * std::exp(-g->radii[0] * g->radii[0])) < 1e-10);
}

TEST_CASE("error-term kernel is admissible and R-stable", "[kernelbounds]") {
    const auto s = admissibility_sweep(error_kernel(), {15.0, 30.0, 60.0});
    CHECK(s.admissible);
    for (std::size_t i = 0; i < s.radii.size(); ++i) {
        CHECK(std::isfinite(s.row_sups[i]));
        CHECK(std::isfinite(s.col_sups[i]));
    }
    CHECK(s.row_sups.back() / s.row_sups.front() < 1.2);
}

TEST_CASE("slowly decaying kernel is rejected by the radius sweep", "[kernelbounds]") {
    const auto s = admissibility_sweep(flat_kernel(0.1), {15.0, 30.0, 60.0});
    CHECK_FALSE(s.admissible);
    INFO("slopes " << s.row_slope << " " << s.col_slope);
    CHECK(std::abs(std::max(s.row_slope, s.col_slope) - 2.0) < 0.1);
    CHECK(s.reason.find("grow") != std::string::npos);

    auto declared = gaussian_kernel();
    declared.row_decay = 1.5;
    const auto a = admissibility(declared, *build_panel_grid(5.0, 8));
    CHECK_FALSE(a.admissible);
    CHECK(a.reason.find("1.5") != std::string::npos);
}

TEST_CASE("admissibility verdicts survive grid refinement", "[kernelbounds]") {
    for (const auto& k : {error_kernel(), gaussian_kernel(), flat_kernel(0.1), restrict_inner(k1_kernel()), restrict_inner(k2_kernel())}) {
        const auto a = admissibility_sweep(k, {10.0, 20.0, 40.0}, 8, 4);
        const auto b = admissibility_sweep(k, {10.0, 20.0, 40.0}, 16, 8);
        INFO(k.name);
        CHECK(a.admissible == b.admissible);
    }
}

TEST_CASE("K1 and K2 restricted to |y| < |x|/2 are admissible", "[kernelbounds]") {
    for (const auto& k : {restrict_inner(k1_kernel()), restrict_inner(k2_kernel())}) {
        const auto s = admissibility_sweep(k, {15.0, 30.0, 60.0});
        INFO(k.name << " " << s.reason);
        CHECK(s.admissible);
    }
}

TEST_CASE("K1 p-norms are stable under domain growth", "[kernelbounds]") {
    const auto c = lp_kernel_lemma_check("K1", {1.0, 2.0, 8.0}, {15.0, 30.0, 60.0});
    INFO("changes " << c.max_change[0] << " " << c.max_change[1] << " " << c.max_change[2]);
    CHECK(c.stable);
    for (const auto& r : c.per_radius)
        for (double v : r.norm) CHECK(std::isfinite(v));
    CHECK_THROWS_AS(lp_kernel_lemma_check("K3", {2.0}, {15.0}), thresh2d::domain_error);
}

TEST_CASE("K2 p-norms are stable under domain growth, p = 1, 2", "[kernelbounds]") {
    const auto c = lp_kernel_lemma_check("K2", {1.0, 2.0}, {15.0, 30.0, 60.0});
    INFO("changes " << c.max_change[0] << " " << c.max_change[1]);
    CHECK(c.stable);
    for (double eps : {0.05, 0.5}) CHECK(lp_kernel_lemma_check("K2", {2.0}, {15.0, 30.0}, eps).stable);
}

TEST_CASE("K2 p-norm is stable under domain growth, p = 8", "[kernelbounds]") {
    const auto c = lp_kernel_lemma_check("K2", {8.0}, {15.0, 30.0, 60.0});
    INFO("norms " << c.per_radius[0].norm[0] << " " << c.per_radius[1].norm[0] << " " << c.per_radius[2].norm[0]);
    for (const auto& r : c.per_radius) CHECK(std::isfinite(r.norm[0]));
    CHECK(c.stable);
}

TEST_CASE("power iteration matches a dense SVD", "[kernelbounds]") {
    const auto g = build_panel_grid(15.0, 8);
    const MatrixXd m = kernel_matrix(k1_kernel(), *g);
    const VectorXd sw = Eigen::Map<const VectorXd>(g->weights.data(), static_cast<Eigen::Index>(g->size())).cwiseSqrt();
    const MatrixXd a = sw.asDiagonal() * m * sw.asDiagonal();
    Eigen::JacobiSVD<MatrixXd> svd(a);
    CHECK(std::abs(power_iteration_norm(a, 1000, 1e-13) - svd.singularValues()(0)) < 1e-8 * svd.singularValues()(0));
}

TEST_CASE("K1 near p = infinity grows with R", "[kernelbounds]") {
    const auto c = lp_kernel_lemma_check("K1", {64.0}, {15.0, 30.0, 60.0});
    const double a = c.per_radius[0].norm[0], b = c.per_radius[1].norm[0], d = c.per_radius[2].norm[0];
    CHECK(b > a);
    CHECK(d > b);
    // roughly equal increments per doubling, i.e. logarithmic growth
    CHECK(std::abs((d - b) - (b - a)) < 0.5 * (b - a));
}

TEST_CASE("bracket decay exponents", "[kernelbounds]") {
    const auto a = bracket_decay_check(3.0, 3.0);
    CHECK(a.passed);
    CHECK(std::abs(a.fitted - 3.0) < 0.05);
    const auto b = bracket_decay_check(1.5, 1.0);
    CHECK(std::abs(b.fitted - 0.5) < 0.05);
    CHECK(std::isfinite(b.at_origin));
    // at the origin the convolution of <x>^{-3} with itself is 2 pi int r <r>^{-6} dr = pi / 2
    CHECK(std::abs(a.at_origin - std::numbers::pi / 2) < 1e-8);
    CHECK_THROWS_AS(bracket_decay_check(2.0, 3.0), thresh2d::domain_error);
    CHECK_THROWS_AS(bracket_convolution(0.5, 1.0, 1.0), thresh2d::domain_error);
}

TEST_CASE("bracket decay over a 5 x 5 grid", "[kernelbounds]") {
    const double vals[] = {1.0, 1.5, 2.5, 3.0, 4.0};
    for (double al : vals)
        for (double be : vals) {
            if (al + be <= 2.0) continue;
            const auto r = bracket_decay_check(al, be);
            INFO(al << " " << be << " fitted " << r.fitted << " predicted " << r.predicted);
            CHECK(r.passed);
        }
}

TEST_CASE("Schur bounds", "[kernelbounds]") {
    const auto g = build_panel_grid(6.0, 8);
    // rank one: exact norm is ||f|| ||g|| in the weighted l2
    auto f = [](Point x) { return std::exp(-x.norm()); };
    auto h = [](Point y) { return 1.0 / (1.0 + y.norm() * y.norm()); };
    const KernelFunction r1{"rank1", [&](Point x, Point y) { return f(x) * h(y); }, false, {}, {}};
    const double nf = std::sqrt(discretize::integrate(*g, [&](Point x) { return f(x) * f(x); }));
    const double nh = std::sqrt(discretize::integrate(*g, [&](Point y) { return h(y) * h(y); }));
    CHECK(schur_norm(r1, *g).bound >= nf * nh * (1.0 - 1e-12));

    // identity surrogate: diagonal 1 / w_j
    MatrixXd id = MatrixXd::Zero(static_cast<Eigen::Index>(g->size()), static_cast<Eigen::Index>(g->size()));
    for (std::size_t i = 0; i < g->size(); ++i) id(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = 1.0 / g->weights[i];
    CHECK(std::abs(schur_norm(id, *g).bound - 1.0) < 1e-12);

    const auto g30 = build_panel_grid(30.0, 16);
    const auto s = schur_norm(k1_kernel(), *g30);
    CHECK(std::isfinite(s.bound));
    const VectorXd sw = Eigen::Map<const VectorXd>(g30->weights.data(), static_cast<Eigen::Index>(g30->size())).cwiseSqrt();
    CHECK(s.bound >= power_iteration_norm(sw.asDiagonal() * kernel_matrix(k1_kernel(), *g30) * sw.asDiagonal()));
}

TEST_CASE("kernel csv export and NaN reporting", "[kernelbounds]") {
    std::ostringstream os;
    write_csv(os, {{"alpha=3,beta=3", 3.0, 3.0, true}});
    CHECK(os.str().rfind("parameter,value,bound,verdict\n", 0) == 0);
    CHECK(os.str().find("pass") != std::string::npos);
    const KernelFunction bad{"bad", [](Point, Point) { return std::nan(""); }, false, {}, {}};
    CHECK_THROWS_AS(kernel_matrix(bad, *build_panel_grid(2.0, 4)), thresh2d::evaluation_error);
}
