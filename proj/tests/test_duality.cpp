#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "common.hpp"
#include "macp/duality.hpp"

using namespace macp;
using testutil::fixture;

namespace {

AgentRule always(int a) {
    return [a](const History&, const History&) { return a; };
}

}  // namespace

TEST_CASE("lagrangian arithmetic") {
    CHECK(lagrangian(1.75, {0.875}, {0.0}, {2.0}) == 1.75);
    CHECK(lagrangian(1.75, {0.875}, {2.0}, {2.0}) == doctest::Approx(-0.5).epsilon(1e-15));
    CHECK(lagrangian(0.75, {1.0}, {5.0}, {1.0}) == 0.75);
}

TEST_CASE("dual_function examples") {
    SUBCASE("const, lambda=0, T=3") {
        const auto dp = dual_function(fixture("const"), {0.0}, 3);
        CHECK(dp.value == doctest::Approx(1.75).epsilon(1e-14));
        CHECK(dp.supergradient[0] == doctest::Approx(-1.125).epsilon(1e-14));
    }
    SUBCASE("bind1, lambda=0 picks always-a0") {
        const auto dp = dual_function(fixture("bind1"), {0.0}, 3);
        CHECK(dp.value == doctest::Approx(0.0).epsilon(1e-14));
        CHECK(dp.supergradient[0] == doctest::Approx(0.75).epsilon(1e-14));
        CHECK(dp.eval.C == 0.0);
    }
    SUBCASE("bind1, lambda=2 picks always-a1") {
        const auto dp = dual_function(fixture("bind1"), {2.0}, 3);
        CHECK(dp.value == doctest::Approx(-0.25).epsilon(1e-14));
        CHECK(dp.supergradient[0] == doctest::Approx(-1.0).epsilon(1e-14));
        CHECK(dp.eval.D[0] == 0.0);
    }
}

TEST_CASE("dual function is concave along a lambda grid") {
    const auto m = fixture("bind1c");
    Vec v;
    for (int i = 0; i <= 10; ++i) v.push_back(dual_function(m, {0.2 * i}, 2).value);
    for (size_t i = 1; i + 1 < v.size(); ++i) CHECK(v[i] >= 0.5 * (v[i - 1] + v[i + 1]) - 1e-12);
}

TEST_CASE("multiplier upper bound") {
    CHECK(lambda_upper_bound(2.0, 1.0, 0.5, 1.0) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(lambda_upper_bound(2.0, 0.0, 0.5, 1.0) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(lambda_upper_bound(3.0, 3.0 * 0.25, 0.75, 0.5) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK_THROWS(lambda_upper_bound(2.0, 0.0, 0.5, 0.0));
    CHECK(slater_cap(fixture("const")).value() == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(slater_cap(fixture("bind1")).value() == doctest::Approx(2.0).epsilon(1e-15));
    CHECK_FALSE(slater_cap(fixture("zero")).has_value());
}

TEST_CASE("dual_ascent examples") {
    SUBCASE("const: every policy strictly feasible, lambda*=0") {
        const auto r = dual_ascent(fixture("const"), 3, DualConfig{2000, -1.0, 2.0});
        CHECK(r.lambda_star[0] == 0.0);
        CHECK(r.dual_value == doctest::Approx(1.75).epsilon(1e-12));
    }
    SUBCASE("bind1: vertex crossover") {
        const auto r = dual_ascent(fixture("bind1"), 3);
        CHECK(std::abs(r.lambda_star[0] - 1.0) <= 0.02);
        CHECK(std::abs(r.dual_value - 0.75) <= 1e-3);
        CHECK(r.lambda_star[0] <= r.lambda_max);
    }
    SUBCASE("zero: flat dual returns the first best iterate") {
        const auto r = dual_ascent(fixture("zero"), 2, DualConfig{200, -1.0, 5.0});
        CHECK(r.lambda_star[0] == 0.0);
        CHECK(r.dual_value == 0.0);
    }
}

TEST_CASE("primal_oracle examples") {
    CHECK(primal_oracle(fixture("bind1"), 3).primal_value == doctest::Approx(0.75).epsilon(1e-14));
    CHECK(primal_oracle(fixture("const-1a"), 3).primal_value == doctest::Approx(1.75).epsilon(1e-14));
    auto m = fixture("bind1");
    m.kappa = {-1.0};
    CHECK(std::isinf(primal_oracle(m, 3).primal_value));
    CHECK_THROWS_AS(primal_oracle(fixture("const"), 2), DomainError);
}

TEST_CASE("weak duality on bind1 at T=3") {
    const auto m = fixture("bind1");
    const double P = primal_oracle(m, 3).primal_value;
    for (int i = 0; i <= 20; ++i) CHECK(dual_function(m, {0.1 * i}, 3).value <= P + 1e-12);
}

TEST_CASE("mixture replication") {
    const auto m = fixture("const");
    SUBCASE("point mass equals the deterministic profile") {
        MixturePolicy mu;
        mu.agent = {{{always(1), 1.0}}, {{always(0), 1.0}}};
        const auto d = occupation_distance(enumerate_histories(m, replicate_mixture(m, mu), 3),
                                           enumerate_histories(m, constant_action_policy(m, {1, 0}), 3));
        CHECK(d == 0.0);
    }
    SUBCASE("50/50 mixture is sticky through the private history") {
        MixturePolicy mu;
        mu.agent = {{{always(0), 0.5}, {always(1), 0.5}}, {{always(0), 0.5}, {always(1), 0.5}}};
        const auto u = replicate_mixture(m, mu);
        // private history at t=2: (o1, a1, o2) with a1 = a1
        const History h0{0, 0}, hn{0, 1, 0};
        CHECK(u.row(0, h0, hn) == Vec{0.0, 1.0});
        CHECK(u.row(1, h0, History{0, 0, 0}) == Vec{1.0, 0.0});
        CHECK(occupation_distance(mixture_occupation(m, mu, 2), enumerate_histories(m, u, 2)) <= 1e-15);
    }
    SUBCASE("random mixtures match the enumeration oracle") {
        const auto b = fixture("bind1");
        std::mt19937_64 rng(4);
        const auto pols = enumerate_coordination_policies(b, 3);
        for (int r = 0; r < 5; ++r) {
            MixturePolicy mu;
            mu.agent.resize(1);
            double tot = 0.0;
            for (int c = 0; c < 4; ++c) {
                const double w = uniform01(rng) + 0.01;
                mu.agent[0].push_back({agent_rule(pols[rng() % pols.size()], 0), w});
                tot += w;
            }
            for (auto& [rule, w] : mu.agent[0]) w /= tot;
            double drift = 0.0;
            for (const auto& [rule, w] : mu.agent[0]) drift += w;
            mu.agent[0][0].second += 1.0 - drift;
            CHECK(occupation_distance(mixture_occupation(b, mu, 3), enumerate_histories(b, replicate_mixture(b, mu), 3)) <=
                  1e-10);
        }
    }
    SUBCASE("unnormalized weights are rejected") {
        MixturePolicy mu;
        mu.agent = {{{always(0), 0.4}}, {{always(0), 1.0}}};
        CHECK_THROWS_AS(replicate_mixture(m, mu), ValidationError);
    }
}

TEST_CASE("saddle check") {
    SUBCASE("bind1 oracle optimum is a saddle point with zero residual") {
        const auto m = fixture("bind1");
        const int T = 3;
        const auto P = primal_oracle(m, T);
        REQUIRE(P.lo >= 0);
        REQUIRE(P.hi >= 0);
        MixturePolicy mu;
        mu.agent = {{{agent_rule(P.policies[P.lo], 0), 1.0 - P.weight_hi}, {agent_rule(P.policies[P.hi], 0), P.weight_hi}}};
        std::vector<BehavioralPolicy> probes;
        for (const auto& v : P.policies) probes.push_back(coordination_to_behavioral(v, m));
        const auto rep = check_saddle(m, replicate_mixture(m, mu), {1.0}, T, {{0.0}, {0.5}, {1.0}, {2.0}}, probes);
        CHECK(rep.max_violation <= 1e-9);
        CHECK(rep.comp_slack_residual <= 1e-9);
        CHECK(rep.value == doctest::Approx(0.75).epsilon(1e-12));
    }
    SUBCASE("infeasible candidate violates the left inequality") {
        const auto m = fixture("bind1");
        const Evaluation cand{0.0, {1.75}};
        const auto rep = check_saddle(m, cand, {0.0}, {{10.0}}, {});
        CHECK(rep.left_violation == doctest::Approx(7.5));
    }
    SUBCASE("lambda=0 on const has zero residual") {
        const auto m = fixture("const");
        const auto rep = check_saddle(m, exact_evaluate(m, uniform_policy(m), 3), {0.0}, {}, {});
        CHECK(rep.comp_slack_residual == 0.0);
    }
}
