#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "thresh2d/specfun.hpp"

using namespace thresh2d;
using namespace thresh2d::specfun;

namespace {

// Direct power series, summed independently of the library code path.
double j0_series_oracle(double z) {
    double sum = 0.0, term = 1.0;
    for (int k = 0; k < 60; ++k) {
        sum += term;
        term *= -(z * z / 4.0) / ((k + 1.0) * (k + 1.0));
    }
    return sum;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace

TEST_CASE("J0 at z = 1 matches direct series", "[specfun]") {
    REQUIRE(std::abs(eval_bessel(1.0).j0 - j0_series_oracle(1.0)) < 1e-12);
}

TEST_CASE("known values", "[specfun]") {
    // tabulated to 16 digits
    CHECK(std::abs(eval_bessel(1.0).y0 - 0.08825696421567696) < 1e-14);
    CHECK(std::abs(eval_bessel(10.0).j0 - (-0.2459357644513483)) < 1e-14);
    CHECK(std::abs(eval_bessel(10.0).y1 - 0.2490154242069539) < 1e-14);
    CHECK(std::abs(eval_bessel(100.0).j0 - 0.01998585030422312) < 1e-14);
}

TEST_CASE("Wronskian on a log grid", "[specfun]") {
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
        const double z = 0.05 * std::pow(1e4, i / 199.0);
        const auto b = eval_bessel(z);
        const double w = b.j0 * b.dy0() - b.dj0 * b.y0;
        worst = std::max(worst, rel(w, 2.0 / (std::numbers::pi * z)));
    }
    INFO("worst relative Wronskian error " << worst);
    REQUIRE(worst < 1e-10);
}

TEST_CASE("branches agree where they overlap", "[specfun]") {
    for (double z = 6.0; z <= 10.0; z += 0.125) {
        const auto a = eval_bessel_branch(z, Branch::Series);
        const auto b = eval_bessel_branch(z, Branch::Miller);
        CHECK(std::abs(a.j0 - b.j0) < 1e-12);
        CHECK(std::abs(a.y0 - b.y0) < 1e-12);
        CHECK(std::abs(a.j1 - b.j1) < 1e-12);
        CHECK(std::abs(a.y1 - b.y1) < 1e-12);
    }
    for (double z = 20.0; z <= 30.0; z += 0.25) {
        const auto a = eval_bessel_branch(z, Branch::Miller);
        const auto b = eval_bessel_branch(z, Branch::Asymptotic);
        CHECK(std::abs(a.j0 - b.j0) < 1e-13);
        CHECK(std::abs(a.y0 - b.y0) < 1e-13);
        CHECK(std::abs(a.j1 - b.j1) < 1e-13);
        CHECK(std::abs(a.y1 - b.y1) < 1e-13);
    }
}

TEST_CASE("pair identities and bounds", "[specfun]") {
    for (double z : {1.0, 10.0, 100.0}) {
        const auto b = eval_bessel(z);
        CHECK(b.h0m == cplx(b.j0, -b.y0));
    }
    for (int i = 0; i < 500; ++i) {
        const double z = 1e-3 * std::pow(1e6, i / 499.0);
        CHECK(std::abs(eval_bessel(z).j0) <= 1.0);
    }
    const auto tiny = eval_bessel(1e-8);
    CHECK(std::abs(tiny.j0 - 1.0) < 1e-15);
    CHECK(std::abs(tiny.dj0) < 1e-8);
}

TEST_CASE("domain errors", "[specfun]") {
    CHECK_THROWS_AS(eval_bessel(0.0), thresh2d::domain_error);
    CHECK_THROWS_AS(eval_bessel(-1.0), thresh2d::domain_error);
    CHECK_THROWS_AS(eval_bessel(std::nan("")), thresh2d::domain_error);
    CHECK_THROWS_AS(envelope_split(0.0, Target::J0p), thresh2d::domain_error);
}

TEST_CASE("envelope recomposition", "[specfun]") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(std::log(0.01), std::log(1e3));
    for (Target t : {Target::J0p, Target::J0pp, Target::H0mp}) {
        for (int i = 0; i < 100; ++i) {
            const double z = std::exp(u(rng));
            const auto e = envelope_split(z, t);
            CHECK(std::abs(e.recompose() - envelope_target(z, t)) < 1e-9);
        }
    }
    for (double z : {0.3, 3.0, 30.0}) {
        CHECK(std::abs(envelope_split(z, Target::J0pp).recompose() - eval_bessel(z).d2j0) < 1e-9);
    }
}

TEST_CASE("envelope supports", "[specfun]") {
    const auto inner = envelope_split(0.5, Target::J0p);
    CHECK(inner.omega_plus == cplx(0.0, 0.0));
    CHECK(inner.omega_minus == cplx(0.0, 0.0));
    CHECK(std::abs(0.5 * inner.rho_part - eval_bessel(0.5).dj0) < 1e-15);

    const auto outer = envelope_split(50.0, Target::J0p);
    CHECK(outer.rho_part == 0.0);
    const auto c = envelope_constants(Target::J0p);
    CHECK(std::abs(outer.omega_plus) <= c.omega[0] * std::pow(50.0, -0.5) * (1.0 + 1e-12));
}

TEST_CASE("envelope constants are finite", "[specfun]") {
    for (Target t : {Target::J0p, Target::J0pp, Target::H0mp}) {
        const auto c = envelope_constants(t);
        for (int j = 0; j < 3; ++j) {
            CHECK(std::isfinite(c.omega[j]));
            CHECK(c.omega[j] < 100.0);
            CHECK(std::isfinite(c.eta[j]));
            CHECK(c.eta[j] < 100.0);
        }
    }
    // z^{1/2}|omega| stays bounded and does not drift upward on [1, 1e3]
    double lo = 1e300, hi = 0.0;
    for (int i = 0; i < 200; ++i) {
        const double z = std::pow(1e3, i / 199.0);
        const double v = std::sqrt(z) * std::abs(envelope_split(z, Target::J0p).omega_plus);
        if (z > 2.0) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    CHECK(hi / lo < 1.5);
}

TEST_CASE("resolvent constants", "[specfun]") {
    const auto rc = resolvent_constants();
    CHECK(rc.a != 0.0);
    CHECK(rc.z_const.imag() != 0.0);
    CHECK(rc.g(1e-3, -1) == std::conj(rc.g(1e-3, +1)));

    double prev = 1e300;
    for (double lambda : {1e-2, 1e-3, 1e-4}) {
        const double r = 1.0;
        const double res = std::abs(free_resolvent(lambda, r, +1) - rc.g(lambda, +1) - g0(r));
        CHECK(res < prev);
        prev = res;
    }
    CHECK(prev < 1e-3);
}

TEST_CASE("resolvent jump is (i/2)J0", "[specfun]") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> ul(1e-3, 0.2), ur(1e-2, 100.0);
    for (int i = 0; i < 50; ++i) {
        const double lambda = ul(rng), r = ur(rng);
        const cplx jump = free_resolvent(lambda, r, +1) - free_resolvent(lambda, r, -1);
        CHECK(std::abs(jump - cplx(0.0, 0.5) * bessel_j0(lambda * r)) < 1e-12);
    }
}
