#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

#include "thresh2d/discretize.hpp"

using namespace thresh2d;
using namespace thresh2d::discretize;

TEST_CASE("polar grid integrates simple functions", "[discretize]") {
    auto g2 = build_polar_grid(2.0, 8, 8);
    CHECK(std::abs(integrate(*g2, [](Point) { return 1.0; }) - 4.0 * std::numbers::pi) < 1e-10);
    for (double w : g2->weights) CHECK(w > 0.0);
    for (const auto& p : g2->nodes) CHECK(p.norm() <= 2.0);

    auto g8 = build_polar_grid(8.0, 40, 16);
    const double gauss = integrate(*g8, [](Point p) { return std::exp(-p.norm() * p.norm()); });
    CHECK(std::abs(gauss - std::numbers::pi) < 1e-8);

    auto g5 = build_polar_grid(5.0, 13, 9);
    CHECK(std::abs(integrate(*g5, [](Point p) { return p.x1; })) < 1e-12);

    CHECK_THROWS_AS(build_polar_grid(0.0, 8, 8), thresh2d::domain_error);
    CHECK_THROWS_AS(build_polar_grid(1.0, 3, 8), thresh2d::domain_error);
}

TEST_CASE("grid refinement of a decaying integrand", "[discretize]") {
    auto f = [](Point p) { return std::pow(1.0 + p.norm() * p.norm(), -2.0); };
    const double a = integrate(*build_polar_grid(30.0, 80, 16), f);
    const double b = integrate(*build_polar_grid(30.0, 160, 32), f);
    CHECK(std::abs(a - b) / std::abs(b) < 1e-6);
}

TEST_CASE("grid serialization is columnar", "[discretize]") {
    auto g = build_polar_grid(1.0, 4, 4);
    std::ostringstream os;
    write_grid(os, *g);
    std::istringstream is(os.str());
    double x, y, w, total = 0.0;
    int lines = 0;
    while (is >> x >> y >> w) {
        total += w;
        ++lines;
    }
    CHECK(lines == 16);
    CHECK(std::abs(total - std::numbers::pi) < 1e-12);
}

TEST_CASE("potential sampling", "[discretize]") {
    auto g = build_polar_grid(8.0, 24, 16);
    PotentialSpec zero;
    zero.family = Family::Zero;
    const auto p0 = sample_potential(zero, g);
    for (std::size_t i = 0; i < g->size(); ++i) {
        CHECK(p0.v_values[i] == 0.0);
        CHECK(p0.u_signs[i] == 1.0);
    }

    PotentialSpec well;
    well.coupling = 2.5;
    const auto pw = sample_potential(well, g);
    for (std::size_t i = 0; i < g->size(); ++i) {
        const double r = g->nodes[i].norm();
        CHECK(pw.u_signs[i] == -1.0);
        CHECK(std::abs(pw.v_values[i] - std::sqrt(2.5) * std::exp(-r * r / 2)) < 1e-14);
        CHECK(pw.values[i] == pw.u_signs[i] * pw.v_values[i] * pw.v_values[i]);
    }
    CHECK(std::isfinite(pw.decay_constant));

    PotentialSpec bad = well;
    bad.beta = 0.0;
    CHECK_THROWS_AS(sample_potential(bad, g), thresh2d::domain_error);
}

TEST_CASE("decay fit and tail mass", "[discretize]") {
    auto g = build_polar_grid(30.0, 60, 16);
    PotentialSpec poly;
    poly.family = Family::InversePoly;
    poly.coupling = -1.0;  // V = +<x>^{-7}
    poly.beta = 7.0;
    const auto p = sample_potential(poly, g);
    CHECK(p.decay_exponent >= 6.0);
    CHECK(p.decay_constant <= 1.0 + 1e-12);
    for (std::size_t i = 0; i < g->size(); ++i) CHECK(p.u_signs[i] == 1.0);

    for (double beta : {8.0, 10.0, 12.0}) {
        poly.beta = beta;
        const auto q = sample_potential(poly, g);
        INFO("beta " << beta << " tail " << q.tail_mass);
        CHECK(q.tail_mass < 1e-8);
        // closed form 2 pi int_R^inf r (1+r^2)^{-beta/2} dr
        const double exact = 2.0 * std::numbers::pi * std::pow(1.0 + 900.0, 1.0 - beta / 2) / (beta - 2.0);
        CHECK(std::abs(q.tail_mass - exact) < 1e-6 * exact);
    }
}

TEST_CASE("rank-one kernel gives a rank-one matrix", "[discretize]") {
    auto g = build_polar_grid(3.0, 8, 8);
    auto op = op_from_kernel([](Point x, Point y) { return cplx(std::exp(-x.norm()) * (1.0 + y.x1 * y.x1)); }, g);
    Eigen::JacobiSVD<MatrixXcd> svd(op.nystrom());
    const auto s = svd.singularValues();
    CHECK(s(1) < 1e-10 * s(0));
}

TEST_CASE("identity surrogate and row integrals", "[discretize]") {
    auto g = build_polar_grid(3.0, 8, 8);
    std::vector<double> ones(g->size(), 1.0);
    auto id = multiplication_operator(ones, g);
    VectorXcd u(g->size());
    for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = cplx(std::sin(0.3 * i), 0.1 * i);
    CHECK((id.apply(u) - u).norm() < 1e-14);

    auto k = op_from_kernel([](Point x, Point y) { return cplx(std::exp(-distance(x, y))); }, g);
    VectorXcd one = VectorXcd::Ones(g->size());
    const VectorXcd rows = k.apply(one);
    for (std::size_t i = 0; i < g->size(); i += 7) {
        const Point x = g->nodes[i];
        const double direct = integrate(*g, [x](Point y) { return std::exp(-distance(x, y)); });
        CHECK(std::abs(rows(static_cast<Eigen::Index>(i)) - direct) < 1e-12);
    }
    auto mod = op_from_kernel([](Point x, Point y) { return cplx(std::cos(x.x1 - y.x2), 0.0); }, g).modulus();
    CHECK(std::isfinite(mod.norm()));
    CHECK((mod.matrix().array().real() >= 0.0).all());
}

TEST_CASE("radial table matches direct kernel assembly", "[discretize]") {
    auto g = build_polar_grid(4.0, 10, 12);
    auto f = [](double r) { return std::exp(-r) * std::cos(r); };
    auto a = op_from_radial_kernel(f, cplx(1.0), g);
    auto b = op_from_kernel([&](Point x, Point y) { return cplx(f(distance(x, y))); }, g);
    CHECK((a.matrix() - b.matrix()).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("NaN kernel reports the node pair", "[discretize]") {
    auto g = build_polar_grid(1.0, 4, 4);
    auto bad = [](Point x, Point y) { return cplx(std::log(distance(x, y) - 10.0)); };
    CHECK_THROWS_AS(op_from_kernel(bad, g), thresh2d::evaluation_error);
    try {
        op_from_kernel(bad, g);
    } catch (const evaluation_error& e) {
        CHECK(std::string(e.what()).find("node pair") != std::string::npos);
    }
}

TEST_CASE("G0 reproduces the logarithmic potential of a disk", "[discretize]") {
    const double a = 2.0;
    auto g = build_polar_grid(a, 16, 16);
    auto g0 = g0_operator(g);
    const VectorXcd u = g0.apply(VectorXcd::Ones(g->size()));
    double worst = 0.0;
    for (std::size_t i = 0; i < g->size(); ++i) {
        const double r = g->nodes[i].norm();
        const double exact = -(r * r - a * a) / 4.0 - 0.5 * a * a * std::log(a);
        worst = std::max(worst, std::abs(u(static_cast<Eigen::Index>(i)) - exact) / std::abs(exact));
    }
    INFO("worst relative error " << worst);
    CHECK(worst < 1e-4);
    CHECK((g0.matrix() - g0.matrix().transpose()).norm() < 1e-12);
}

TEST_CASE("G0 on a Gaussian density matches the radial closed form", "[discretize]") {
    // -(1/2pi) log * e^{-|y|^2} = -(1/4)[E1(r^2) + log(r^2)] for radial Gaussian mass pi
    auto g = build_polar_grid(8.0, 32, 16);
    auto g0 = g0_operator(g);
    VectorXcd f(g->size());
    for (std::size_t i = 0; i < g->size(); ++i) f(static_cast<Eigen::Index>(i)) = std::exp(-std::pow(g->nodes[i].norm(), 2));
    const VectorXcd u = g0.apply(f);
    double worst = 0.0;
    for (std::size_t i = 0; i < g->size(); ++i) {
        const double r = g->nodes[i].norm();
        const double r2 = r * r;
        // E1 by adaptive quadrature of e^{-t}/t on [r^2, inf)
        const double e1 = quad::integrate_adaptive([](double s) { return std::exp(-std::exp(s)); },
                                                   std::log(r2), std::max(std::log(r2) + 6.0, std::log(60.0)), 1e-13, 1e-300)
                              .value;
        const double exact = -0.25 * (e1 + std::log(r2));
        worst = std::max(worst, std::abs(u(static_cast<Eigen::Index>(i)) - exact));
    }
    INFO("worst absolute error " << worst);
    CHECK(worst < 1e-6);
}

TEST_CASE("log-tagged disk-cell diagonal is finite", "[discretize]") {
    auto g = build_polar_grid(2.0, 8, 8);
    LogSingular tag{-1.0 / (2.0 * std::numbers::pi), [](Point) { return cplx(0.0); }};
    auto op = op_from_kernel([](Point x, Point y) { return cplx(specfun::g0(distance(x, y))); }, g,
                             Symmetry::Symmetric, tag);
    CHECK(op.matrix().allFinite());
}
