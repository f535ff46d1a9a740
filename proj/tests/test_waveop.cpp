#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "thresh2d/waveop.hpp"

using namespace thresh2d;
using namespace thresh2d::operators;
using namespace thresh2d::discretize;
using namespace thresh2d::waveop;

namespace {
GridPtr default_grid() {
    static const GridPtr g = build_polar_grid(8.0, 24, 16);
    return g;
}

PotentialSpec gaussian(double c) {
    PotentialSpec s;
    s.family = Family::Gaussian;
    s.coupling = c;
    s.beta = 8.0;
    return s;
}

struct Case {
    ThresholdOperators ops;
    Assembler as;
};

Case make_case(int channel) {
    const double c = find_critical_coupling(gaussian(1.0), default_grid(), channel, 1).coupling;
    ThresholdOperators ops(sample_potential(gaussian(c), default_grid()));
    auto h = riesz_hierarchy(ops, 1e-8);
    Assembler as(ops, std::move(h));
    return {std::move(ops), std::move(as)};
}

const Case& swave() {
    static const Case c = make_case(0);
    return c;
}

const Case& eigen() {
    static const Case c = make_case(2);
    return c;
}

std::vector<std::pair<Point, Point>> pairs(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> r(0.5, 10.0), a(0.0, 2.0 * std::numbers::pi);
    std::vector<std::pair<Point, Point>> out;
    for (int i = 0; i < n; ++i) {
        const double rx = r(rng), ax = a(rng), ry = r(rng), ay = a(rng);
        out.push_back({{rx * std::cos(ax), rx * std::sin(ax)}, {ry * std::cos(ay), ry * std::sin(ay)}});
    }
    return out;
}

double rel(cplx a, cplx b) { return std::abs(a - b) / std::abs(b); }

// Kernel from its definition with the standard library Bessel functions and the
// full (unrestricted) operator matrix.
cplx direct_kernel(const Case& c, const MatrixXd& op, std::function<cplx(double)> coef, double power, cplx prefactor, Point x, Point y) {
    const auto& g = *c.ops.grid();
    const VectorXd& vt = c.ops.v_tilde();
    const auto n = vt.size();
    const oscint::CutoffSpec chi(0.1);
    auto f = [&](double l) -> cplx {
        VectorXcd a(n);
        VectorXd b(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double dx = distance(x, g.nodes[static_cast<std::size_t>(i)]), dy = distance(y, g.nodes[static_cast<std::size_t>(i)]);
            // R0^- = -(i/4) (J0 - i Y0), R0^+ - R0^- = (i/2) J0
            a(i) = cplx(0.0, -0.25) * cplx(std::cyl_bessel_j(0.0, l * dx), -std::cyl_neumann(0.0, l * dx)) * vt(i);
            b(i) = std::cyl_bessel_j(0.0, l * dy) * vt(i);
        }
        const VectorXd ob = op * b;
        cplx s = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) s += a(i) * ob(i);
        return s * cplx(0.0, 0.5) * coef(l) * std::pow(l, power) * chi(l);
    };
    std::vector<double> bp;
    for (double t = lambda_floor; t < 0.01; t *= 4.0) bp.push_back(t);
    for (int i = 1; i <= 40; ++i) bp.push_back(0.2 * i / 40.0);
    return prefactor * quad::integrate_adaptive(f, bp, 1e-10, 0.0, 20000).value;
}

}  // namespace

TEST_CASE("fixed lambda rule integrates smooth and oscillatory functions", "[waveop]") {
    const oscint::CutoffSpec chi(0.1);
    const auto r = lambda_rule(200.0, chi);
    double p = 0.0, o = 0.0, lg = 0.0;
    for (std::size_t k = 0; k < r.nodes.size(); ++k) {
        p += r.weights[k] * r.nodes[k] * r.nodes[k];
        o += r.weights[k] * std::cos(200.0 * r.nodes[k]);
        lg += r.weights[k] * std::log(r.nodes[k]);
    }
    const double a = lambda_floor;
    CHECK(std::abs(p - (std::pow(0.2, 3) - std::pow(a, 3)) / 3.0) < 1e-15);
    CHECK(std::abs(o - (std::sin(40.0) - std::sin(200.0 * a)) / 200.0) < 1e-13);
    CHECK(std::abs(lg - (0.2 * (std::log(0.2) - 1.0) - a * (std::log(a) - 1.0))) < 1e-12);
}

TEST_CASE("every term vanishes for the zero potential", "[waveop]") {
    PotentialSpec z;
    z.family = Family::Zero;
    ThresholdOperators ops(sample_potential(z, default_grid()));
    const Assembler as(ops, riesz_hierarchy(ops));
    CHECK(as.active_size() == 0);
    const Point x{3.3, 0.1}, y{-1.2, 4.4};
    for (Label l : {Label::QD0Q, Label::STerm}) {
        const auto t = as.term(l);
        CHECK(as.assemble(t, x, y) == cplx(0.0));
        CHECK(as.assemble_rank_factor(t, x, y) == cplx(0.0));
        CHECK(as.assemble_batch(t, {x}, {y}).norm() == 0.0);
    }
    CHECK(as.assemble(as.error_term(ops.P(), 1.5), x, y) == cplx(0.0));
}

TEST_CASE("terms require the matching classification", "[waveop]") {
    CHECK_THROWS_AS(eigen().as.term(Label::SWaveLeading), precondition_error);
    CHECK_THROWS_AS(swave().as.term(Label::D3Leading), precondition_error);
    CHECK_THROWS_AS(swave().as.term(Label::ErrorTerm), precondition_error);
    CHECK_THROWS_AS(error_term_check(swave().as, swave().ops.P(), 1.0), precondition_error);
    CHECK_NOTHROW(swave().as.term(Label::SWaveLeading));
    CHECK_NOTHROW(eigen().as.term(Label::D3Leading));
}

TEST_CASE("assembled kernels match the definition with library Bessel functions", "[waveop]") {
    const auto& c = swave();
    const auto& h = c.as.hierarchy();
    const cplx pre = 1.0 / cplx(0.0, std::numbers::pi);
    const Point x{4.1, -1.7}, y{-0.9, 2.3};
    const auto hm = [&](double l) { return c.as.h_minus(l); };
    {
        const cplx a = c.as.assemble(c.as.term(Label::SWaveLeading), x, y);
        const cplx b = direct_kernel(c, h.S1D1S1, hm, 1.0, pre, x, y);
        INFO(a << " vs " << b);
        CHECK(rel(a, b) < 1e-7);
    }
    {
        const cplx a = c.as.assemble(c.as.term(Label::STerm), x, y);
        const cplx b = direct_kernel(c, h.S, [&](double l) { return 1.0 / hm(l); }, 1.0, pre, x, y);
        INFO(a << " vs " << b);
        CHECK(rel(a, b) < 1e-7);
    }
    const auto& e = eigen();
    const cplx a = e.as.assemble(e.as.term(Label::D3Leading), y, x);
    const cplx b = direct_kernel(e, e.as.hierarchy().S3D3S3, [](double) { return cplx(1.0); }, -1.0, pre, y, x);
    INFO(a << " vs " << b);
    CHECK(rel(a, b) < 1e-6);
}

TEST_CASE("adaptive, rank-factor and batch assembly agree", "[waveop]") {
    for (const Case* c : {&swave(), &eigen()}) {
        std::vector<Label> labels{Label::QD0Q, Label::STerm};
        labels.push_back(c == &swave() ? Label::SWaveLeading : Label::D3Leading);
        for (Label l : labels) {
            const auto t = c->as.term(l);
            for (const auto& [x, y] : pairs(4, 3)) {
                const cplx a = c->as.assemble(t, x, y);
                INFO(to_string(l) << " x " << x.x1 << "," << x.x2 << " y " << y.x1 << "," << y.x2);
                CHECK(rel(c->as.assemble_rank_factor(t, x, y), a) < 1e-7);
                CHECK(rel(c->as.assemble_batch(t, {x}, {y})(0, 0), a) < 1e-7);
            }
        }
    }
}

TEST_CASE("orthogonality substitutions leave the kernels unchanged", "[waveop]") {
    const auto& s = swave();
    const auto ts = s.as.term(Label::SWaveLeading);
    const auto& e = eigen();
    const auto td = e.as.term(Label::D3Leading);
    for (const auto& [x, y] : pairs(10, 19)) {
        const cplx a = s.as.assemble(ts, x, y);
        CHECK(rel(s.as.assemble(ts, x, y, {false, true, false}), a) < 1e-7);
        CHECK(rel(s.as.assemble(ts, x, y, {true, false, false}), a) < 1e-7);
        const cplx d = e.as.assemble(td, x, y);
        CHECK(rel(e.as.assemble(td, x, y, {true, false, false}), d) < 1e-7);
        CHECK(rel(e.as.assemble(td, x, y, {true, true, true}), d) < 1e-7);
    }
    // the S term is not orthogonal to v, so the same replacement changes it
    const auto st = s.as.term(Label::STerm);
    const Point x{2.0, 1.0}, y{-3.0, 0.5};
    CHECK(rel(s.as.assemble(st, x, y, {true, false, false}), s.as.assemble(st, x, y)) > 0.1);
}

TEST_CASE("kbound majorant matches nested adaptive integration", "[waveop]") {
    const double eps = 0.25;
    const KBoundMajorant kb(eps);
    for (auto [X, Y] : {std::pair{0.5, 0.5}, std::pair{10.0, 10.0}, std::pair{3.0, 40.0}, std::pair{60.0, 1.0}}) {
        auto k = [&](double r, double s) {
            return 1.0 / (std::sqrt(r * s) * std::pow(bracket(r - s), 2)) + 1.0 / (r * std::pow(bracket(r + s), 2.0 + eps));
        };
        auto bps = [](double c) {
            std::vector<double> b{0.0};
            for (double t = 1e-12; t < 1.0; t *= 10.0) b.push_back(t);
            for (double t : {1.0, c - 1.0, c, c + 1.0, 2.0 * c + 10.0, 1e3, 1e4, 1e5})
                if (t > b.back()) b.push_back(t);
            return b;
        };
        const double N = 2.0 + eps;
        auto outer = [&](double r) {
            auto inner = [&](double s) { return k(r, s) * std::pow(bracket(s - Y), -N); };
            const double sv = quad::integrate_adaptive(inner, bps(Y), 1e-10, 1e-300, 100000).value;
            return std::pow(r / bracket(r), eps) * std::pow(bracket(r - X), -N) * sv;
        };
        const double direct = quad::integrate_adaptive(outer, bps(X), 1e-9, 1e-300, 100000).value;
        INFO(X << " " << Y << " table " << kb(X, Y) << " direct " << direct);
        CHECK(std::abs(kb(X, Y) - direct) < 1e-4 * direct);
    }
    CHECK_THROWS_AS(KBoundMajorant(0.5), thresh2d::domain_error);
}

TEST_CASE("majorant admissibility", "[waveop]") {
    const KBoundMajorant kb(0.25);
    const auto a = radial_admissibility([&](const auto& x, const auto& y) { return kb.table(x, y); }, {15.0, 30.0, 60.0});
    CHECK(a.admissible);
    const auto e = radial_admissibility(pointwise(error_majorant), {15.0, 30.0, 60.0});
    CHECK(e.admissible);
    // the D3 majorant has logarithmically growing rows; it is handled through p-norms
    const auto d = radial_admissibility(pointwise([](double x, double y) { return d3_majorant(x, y); }), {15.0, 30.0, 60.0, 120.0});
    CHECK(d.row_sups[3] - d.row_sups[2] > 0.5 * (d.row_sups[1] - d.row_sups[0]));
    CHECK(d.col_slope < 0.05);
}

TEST_CASE("geometric inequality constant", "[waveop]") {
    // |y| >> |w| with w orthogonal to y gives |w|^2 / 2
    const double c = geometric_constant();
    CHECK(c <= 0.5 + 1e-9);
    CHECK(c > 0.49);
}

TEST_CASE("G function derivatives and bound", "[waveop]") {
    const Point y{3.0, 4.0}, y1{-2.0, 1.5};
    for (int sign : {+1, -1})
        for (double l : {0.05, 0.15}) {
            const double h = 1e-5;
            const auto g = g_function(l, y, y1, sign), gp = g_function(l + h, y, y1, sign), gm = g_function(l - h, y, y1, sign);
            CHECK(std::abs((gp[0] - gm[0]) / (2 * h) - g[1]) < 1e-7 * std::abs(g[1]) + 1e-9);
            CHECK(std::abs((gp[1] - gm[1]) / (2 * h) - g[2]) < 1e-6 * std::abs(g[2]) + 1e-8);
            // R0^- is the conjugate of R0^+
            if (sign > 0) CHECK(std::abs(g[0] - std::conj(g_function(l, y, y1, -1)[0])) < 1e-15);
        }
    const auto c = g_bound_check(oscint::CutoffSpec(0.1));
    CHECK(c.ratio[0] <= 1.0);
    CHECK(std::isfinite(c.ratio[1]));
    CHECK(std::isfinite(c.ratio[2]));
}

TEST_CASE("sweep csv export and unbounded ratios", "[waveop]") {
    const auto& c = swave();
    SweepSpec spec;
    spec.n = 3;
    spec.angles = 2;
    const auto t = c.as.term(Label::SWaveLeading);
    const auto s = kernel_sweep(c.as, t, spec, pointwise([](double a, double b) { return d3_majorant(a, b); }));
    std::ostringstream os;
    write_csv(os, s);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    CHECK(line == "x,y,angle,abs_A,majorant,ratio");
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    CHECK(rows == 18);
    try {
        kernel_sweep(c.as, t, spec, pointwise([](double, double) { return 0.0; }));
        FAIL("expected a consistency error");
    } catch (const consistency_error& e) {
        CHECK(std::string(e.what()).find("|x| = ") != std::string::npos);
    }
    const auto& g = *c.ops.grid();
    CHECK_THROWS_AS(c.as.assemble(t, g.nodes[5], {1.0, 1.0}), thresh2d::domain_error);
}

TEST_CASE("s-wave leading kernel bound", "[waveop][slow]") {
    const auto c = swave_bound_check(swave().as);
    INFO("C " << c.refinement.coarse << " -> " << c.refinement.fine << " decay " << c.decay.exponent);
    for (const auto& f : c.failures) UNSCOPED_INFO(f);
    CHECK(c.passed());
    CHECK(c.sweep.C > 0.0);
    // on-diagonal ratio at |x| = |y| = 10
    const KBoundMajorant kb(0.25);
    const auto t = swave().as.term(Label::SWaveLeading);
    const cplx a = swave().as.assemble(t, {10.0, 0.01}, {-0.01, 10.0});
    CHECK(std::isfinite(std::abs(a) / kb(10.0, 10.0)));
}

TEST_CASE("QD0Q kernel bound in both threshold cases", "[waveop][slow]") {
    for (const Case* c : {&swave(), &eigen()}) {
        const auto r = swave_bound_check(c->as, Label::QD0Q);
        INFO("C " << r.refinement.coarse << " -> " << r.refinement.fine << " decay " << r.decay.exponent);
        for (const auto& f : r.failures) UNSCOPED_INFO(f);
        CHECK(r.passed());
    }
    CHECK_THROWS_AS(swave_bound_check(swave().as, Label::STerm), thresh2d::domain_error);
}

TEST_CASE("D3 kernel bound", "[waveop][slow]") {
    const auto c = d3_bound_check(eigen().as);
    INFO("C " << c.refinement.coarse << " -> " << c.refinement.fine << " decay " << c.decay.exponent << " identity " << c.identity_error);
    for (const auto& f : c.failures) UNSCOPED_INFO(f);
    CHECK(c.passed());
    REQUIRE(c.lp.has_value());
    CHECK(c.lp->stable);
}

TEST_CASE("error term bound", "[waveop][slow]") {
    const auto& s = swave();
    const auto c = error_term_check(s.as, default_error_operator(s.ops), 1.5);
    INFO("C " << c.refinement.coarse << " -> " << c.refinement.fine << " decay " << c.decay.exponent);
    for (const auto& f : c.failures) UNSCOPED_INFO(f);
    CHECK(c.passed());
    CHECK(c.decay.exponent >= 2.0);
    REQUIRE(c.scaling.has_value());
    CHECK(c.scaling->passed);
}

TEST_CASE("S term is assembled with a finite majorant ratio", "[waveop]") {
    SweepSpec spec;
    spec.n = 10;
    const auto s = sterm_sweep(swave().as, spec);
    CHECK(std::isfinite(s.C));
    CHECK(s.C > 0.0);
}
