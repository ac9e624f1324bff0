#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "common.hpp"
#include "macp/ais.hpp"

using namespace macp;
using testutil::fixture;

TEST_CASE("generator parsing") {
    CHECK(builtin_generator("window:2").k == 2);
    CHECK(builtin_generator("constant").time_invariant);
    CHECK_FALSE(builtin_generator("identity").time_invariant);
    CHECK_THROWS_AS(builtin_generator("window:0"), DomainError);
    CHECK_THROWS_AS(builtin_generator("nope"), DomainError);
}

TEST_CASE("window generator keeps the last k (action, observation) pairs") {
    const auto g = builtin_generator("window:1");
    CHECK(g.private_map({0}, {2}) == AisValue{-1, 2});
    CHECK(g.private_map({0, 1}, {2, 1, 0}) == AisValue{1, 0});
}

TEST_CASE("identity certification is exactly zero") {
    for (const char* name : {"const", "bind1", "bind1c"}) {
        CAPTURE(name);
        const auto c = certify(fixture(name), builtin_generator("identity"), 2);
        CHECK(c.all_zero());
    }
}

TEST_CASE("constant generator on const certifies to zero") {
    CHECK(certify(fixture("const"), builtin_generator("constant"), 3).all_zero());
}

TEST_CASE("window:1 on bind1c has a positive private prediction deviation") {
    const auto m = fixture("bind1c");
    const auto g = builtin_generator("window:1");
    const auto fwd = certify(m, g, 2);
    CHECK(fwd.delta_p > 0.0);
    CertifyOptions rev;
    rev.reverse_order = true;
    const auto bwd = certify(m, g, 2, rev);
    CHECK(std::abs(fwd.delta_p - bwd.delta_p) <= 1e-12);
    CHECK(std::abs(fwd.eps_p1 - bwd.eps_p1) <= 1e-12);
    CHECK(std::abs(fwd.delta_c - bwd.delta_c) <= 1e-12);
}

TEST_CASE("gap bound formulas") {
    Certification c;
    c.eps_p1 = 0.1;
    c.eps_p2 = 0.2;
    c.delta_p = 0.3;
    c.eps_c1 = 0.4;
    c.eps_c2 = 0.5;
    c.delta_c = 0.6;
    SUBCASE("t = T leaves only the first-stage terms") {
        const auto g = gap_bounds(c, 3, 3, 0.5, {2.0}, 1.0, 1.0, {0.0});
        CHECK(g.M_c == doctest::Approx(0.4 + 2.0 * 0.5));
        CHECK(g.M_p == doctest::Approx(0.1 + 2.0 * 0.2));
    }
    SUBCASE("N at lambda=0") {
        CHECK(n_term(0.5, 3, {0.0}, 1.0, 1.0, {0.0}) == doctest::Approx(1.75));
    }
    SUBCASE("zero certification gives zero bounds") {
        for (int T = 1; T <= 4; ++T)
            for (int t = 1; t <= T; ++t) CHECK(gap_bounds(Certification{}, t, T, 0.5, {3.0}, 1.0, 2.0, {1.0}).total() == 0.0);
    }
    SUBCASE("bounds grow with the distance to the horizon") {
        double prev = -1.0;
        for (int t = 4; t >= 1; --t) {
            const double b = gap_bounds(c, t, 4, 0.5, {1.0}, 1.0, 1.0, {0.5}).total();
            CHECK(b > prev);
            prev = b;
        }
        CHECK(gap_bounds_infinite(c, fixture("bind1"), {1.0}).total() >= prev);
    }
    SUBCASE("alpha = 1 is a domain error") {
        CHECK_THROWS_AS(gap_bounds(c, 1, -1, 1.0, {1.0}, 1.0, 1.0, {0.0}), DomainError);
    }
}

TEST_CASE("identity compression reproduces exact tables") {
    for (const char* name : {"const", "bind1", "bind1c"}) {
        CAPTURE(name);
        const auto m = fixture(name);
        const Vec lam{0.5};
        for (int T = 1; T <= 2; ++T) {
            const auto vt = exact_dp(m, lam, T);
            const auto ct = compressed_dp(m, builtin_generator("identity"), lam, T);
            for (size_t i = 0; i < vt.roots.size(); ++i) CHECK(ct.V1(static_cast<int>(i)) == vt.V1(static_cast<int>(i)));
        }
    }
}

TEST_CASE("finite gap checks") {
    SUBCASE("identity gives zero gap and zero bound") {
        const auto r = check_finite_gap(fixture("bind1c"), builtin_generator("identity"), {0.0}, 2);
        CHECK(r.measured_gap == 0.0);
        CHECK(r.bound == 0.0);
        CHECK(r.holds);
    }
    SUBCASE("constant on const is tight") {
        const auto r = check_finite_gap(fixture("const"), builtin_generator("constant"), {0.0}, 3);
        CHECK(std::abs(r.measured_gap) <= 1e-14);
        CHECK(r.bound == 0.0);
        CHECK(r.holds);
    }
    SUBCASE("window:1 on bind1c holds with a recorded gap") {
        const auto r = check_finite_gap(fixture("bind1c"), builtin_generator("window:1"), {0.0}, 2);
        CHECK(r.min_gap >= -1e-12);
        CHECK(r.measured_gap <= r.bound + 1e-9);
        CHECK(r.bound > 0.0);
        CHECK(r.holds);
    }
}

TEST_CASE("infinite-horizon sandwich") {
    SUBCASE("const with the constant generator") {
        const auto r = check_infinite_gap(fixture("const"), builtin_generator("constant"), {0.0}, 1e-3);
        REQUIRE(r.feasible);
        CHECK(r.vhat[0] == doctest::Approx(2.0).epsilon(1e-3));
        CHECK(r.holds);
    }
    SUBCASE("zero is exact") {
        const auto r = check_infinite_gap(fixture("zero"), builtin_generator("constant"), {0.0}, 1e-3);
        REQUIRE(r.feasible);
        CHECK(r.vhat[0] == 0.0);
        CHECK(r.holds);
    }
    SUBCASE("bind1 at lambda=1") {
        const auto m = fixture("bind1");
        const auto r = check_infinite_gap(m, builtin_generator("constant"), {1.0}, 1e-3);
        REQUIRE(r.feasible);
        CHECK(r.holds);
        // per-stage kappa units: c + (d - kappa) = 0 for both actions
        CHECK(std::abs(r.vhat[0]) <= 1e-3);
    }
}
