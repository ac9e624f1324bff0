// Acceptance suite: one PASS/FAIL line per criterion, tolerances fixed below.
#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "macp/ais.hpp"
#include "macp/duality.hpp"
#include "macp/io.hpp"
#include "macp/learner.hpp"

using namespace macp;

namespace {

constexpr double kStrongDualityTol = 1e-3;
constexpr double kWeakDualityTol = 1e-10;
constexpr double kSaddleTol = 1e-9;
constexpr double kCapTol = 1e-9;
constexpr double kMixtureTol = 1e-10;
constexpr double kEnvelopeTol = 1e-12;  // on top of the proxy tail
constexpr double kGapTol = 1e-9;
constexpr double kContractionTol = 1e-12;
constexpr double kSandwichTol = 1e-3;
constexpr double kGradTol = 1e-4;
constexpr double kLambdaTol = 0.15;
constexpr double kConstraintTol = 0.05;
constexpr double kLagrangianRelTol = 0.05;
constexpr double kConstLambdaCap = 0.05;

const std::vector<std::string> kFixtures = {"zero", "const", "const-1a", "bind1", "bind1c"};

ModelSpec fixture(const std::string& name) { return load_model(std::string(MACP_FIXTURES) + "/" + name + ".json"); }

/// Multiplier range explored per fixture. A zero Slater cap would make the
/// range degenerate, so it is widened to 2.
double lambda_range(const ModelSpec& m) {
    const double cap = default_lambda_max(m);
    return cap > 0.0 ? cap : 2.0;
}

struct Verdict {
    bool pass = true;
    std::ostringstream detail;
};

/// Distinct multiplier levels 0, top/(n-1), ..., top along every coordinate.
std::vector<double> lambda_levels(const ModelSpec& m, int n) {
    const double top = default_lambda_max(m);
    if (top == 0.0) return {0.0};
    std::vector<double> out;
    for (int i = 0; i < n; ++i) out.push_back(top * i / (n - 1));
    return out;
}

int failures = 0;

void report(int id, const std::string& name, const std::function<void(Verdict&)>& body) {
    const auto start = std::chrono::steady_clock::now();
    Verdict o;
    try {
        body(o);
    } catch (const std::exception& e) {
        o.pass = false;
        o.detail << " exception: " << e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failures;
    std::printf("C%-2d %s  %s |%s (%.1fs)\n", id, o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.str().c_str(), secs);
    std::fflush(stdout);
}

AgentRule always(int a) {
    return [a](const History&, const History&) { return a; };
}

std::string num(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", x);
    return buf;
}

}  // namespace

int main() {
    std::setvbuf(stdout, nullptr, _IOLBF, 0);

    report(1, "strong duality, single agent", [](Verdict& o) {
        double worst = 0.0;
        for (const char* name : {"bind1", "const-1a"}) {
            const auto m = fixture(name);
            for (int T : {2, 3}) {
                const double d = dual_ascent(m, T).dual_value, p = primal_oracle(m, T).primal_value;
                worst = std::max(worst, std::abs(d - p));
                o.detail << " " << name << "/T" << T << " dual=" << num(d) << " primal=" << num(p);
            }
        }
        o.pass = worst <= kStrongDualityTol;
        o.detail << " max|gap|=" << num(worst) << " tol=" << kStrongDualityTol;
    });

    report(2, "weak duality, two agents, T=2", [](Verdict& o) {
        const int T = 2;
        double worst = -std::numeric_limits<double>::infinity();
        for (const char* name : {"const", "bind1c"}) {
            const auto m = fixture(name);
            std::vector<double> feasible_C;
            for (const auto& v : enumerate_coordination_policies(m, T)) {
                const auto ev = coordinator_evaluate(m, v, T);
                bool ok = true;
                for (int k = 0; k < m.K(); ++k) ok = ok && ev.D[k] <= m.kappa[k];
                if (ok) feasible_C.push_back(ev.C);
            }
            const double minC = *std::min_element(feasible_C.begin(), feasible_C.end());
            const double top = lambda_range(m);
            for (int i = 0; i <= 20; ++i) {
                const double dv = dual_function(m, Vec(m.K(), top * i / 20.0), T).value;
                worst = std::max(worst, dv - minC);
            }
            o.detail << " " << name << ": " << feasible_C.size() << " feasible profiles, lambda in [0," << num(top)
                     << "]";
        }
        o.pass = worst <= kWeakDualityTol;
        o.detail << " max(dual - C)=" << num(worst);
    });

    report(3, "saddle point and complementary slackness on bind1", [](Verdict& o) {
        const auto m = fixture("bind1");
        const int T = 3;
        const auto P = primal_oracle(m, T);
        const auto& lo = P.points[P.lo];
        const auto& hi = P.points[P.hi];
        // multiplier = minus the slope of the lower envelope at D = kappa
        const double lam = P.lo == P.hi ? 0.0 : -(hi.second - lo.second) / (hi.first - lo.first);
        MixturePolicy mu;
        mu.agent = {{{agent_rule(P.policies[P.lo], 0), 1.0 - P.weight_hi}, {agent_rule(P.policies[P.hi], 0), P.weight_hi}}};
        std::vector<BehavioralPolicy> probes;
        for (const auto& v : P.policies) probes.push_back(coordination_to_behavioral(v, m));
        const auto r = check_saddle(m, replicate_mixture(m, mu), {lam}, T, {{0.0}, {0.5}, {1.0}, {2.0}}, probes);
        o.pass = r.max_violation <= kSaddleTol && r.comp_slack_residual <= kSaddleTol;
        o.detail << " lambda*=" << num(lam) << " L=" << num(r.value) << " max_violation=" << num(r.max_violation)
                 << " residual=" << num(r.comp_slack_residual) << " tol=" << kSaddleTol;
    });

    report(4, "multiplier cap under Slater", [](Verdict& o) {
        for (const auto& name : kFixtures) {
            const auto m = fixture(name);
            const auto cap = slater_cap(m);
            if (!cap) continue;
            const int T = m.num_agents == 1 ? 3 : 2;
            // default projection box, then a box ten times wider so the cap is not enforced by clipping
            for (double box : {*cap, 10.0 * std::max(*cap, 1.0)}) {
                const auto r = dual_ascent(m, T, DualConfig{4000, -1.0, box});
                const double l1 = norm1(r.lambda_star);
                o.pass = o.pass && l1 <= *cap + kCapTol;
                o.detail << " " << name << "[box " << num(box) << "] |lambda*|=" << num(l1) << "<=" << num(*cap);
            }
        }
    });

    report(5, "mixture replication preserves occupation measures", [](Verdict& o) {
        double worst = 0.0;
        int tested = 0;
        std::mt19937_64 rng(20240601);
        for (const auto& name : kFixtures) {
            const auto m = fixture(name);
            const int T = m.num_agents == 1 ? 3 : 2;
            const auto pols = enumerate_coordination_policies(m, T);
            for (int r = 0; r < 20; ++r) {
                MixturePolicy mu;
                mu.agent.resize(m.num_agents);
                for (int n = 0; n < m.num_agents; ++n) {
                    const int comps = 1 + static_cast<int>(rng() % 3);
                    double tot = 0.0;
                    for (int c = 0; c < comps; ++c) {
                        const double w = 0.05 + uniform01(rng);
                        AgentRule rule = rng() % 4 == 0 ? always(static_cast<int>(rng() % m.num_actions(n)))
                                                        : agent_rule(pols[rng() % pols.size()], n);
                        mu.agent[n].push_back({rule, w});
                        tot += w;
                    }
                    double acc = 0.0;
                    for (auto& [rule, w] : mu.agent[n]) acc += (w /= tot);
                    mu.agent[n].back().second += 1.0 - acc;
                }
                const double d = occupation_distance(mixture_occupation(m, mu, T),
                                                     enumerate_histories(m, replicate_mixture(m, mu), T));
                worst = std::max(worst, d);
                ++tested;
            }
        }
        o.pass = worst <= kMixtureTol;
        o.detail << " " << tested << " mixtures, max deviation=" << num(worst) << " tol=" << kMixtureTol;
    });

    report(6, "finite-horizon envelope contains the T+20 proxy", [](Verdict& o) {
        DPOptions proxy;
        proxy.memo_quantum = 1e-12;
        proxy.keep_q = false;
        int cases = 0;
        double worst = -std::numeric_limits<double>::infinity();
        for (const auto& name : kFixtures) {
            const auto m = fixture(name);
            const auto b = cost_bounds(m);
            for (double l : lambda_levels(m, 2)) {
                const Vec lam(m.K(), l);
                const auto [l_lo, l_hi] = lambda_cost_range(b, lam, m.kappa);
                for (int T = 1; T <= 3; ++T) {
                    const int Tp = T + 20;
                    const double vT = exact_dp(m, lam, T).objective;
                    const double vP = exact_dp(m, lam, Tp, proxy).objective;
                    const auto iv = finite_horizon_envelope(vT, 1, T, m.discount, lam, b, m.kappa);
                    // V_{1,T'} misses the tail beyond T', at most this much
                    const double tail = std::pow(m.discount, Tp) * std::max(std::abs(l_lo), std::abs(l_hi)) /
                                        (1.0 - m.discount);
                    const double excess = std::max(iv.lo - vP, vP - iv.hi) - tail;
                    worst = std::max(worst, excess);
                    if (excess > kEnvelopeTol) o.detail << " OUT " << name << " lambda=" << l << " T=" << T;
                    ++cases;
                }
            }
        }
        o.pass = worst <= kEnvelopeTol;
        o.detail << " " << cases << " cases, max excess beyond tail=" << num(worst);
    });

    report(7, "compressed-planning gap within M_c + M_p", [](Verdict& o) {
        int checked = 0, skipped = 0;
        double worst_excess = -std::numeric_limits<double>::infinity(), worst_neg = 0.0;
        bool identity_exact = true;
        std::string skips;
        for (const auto& name : kFixtures) {
            const auto m = fixture(name);
            for (const auto& g : builtin_generator_names()) {
                const auto gen = builtin_generator(g);
                for (double l : lambda_levels(m, 3)) {
                    for (int T = 1; T <= 3; ++T) {
                        try {
                            const auto r = check_finite_gap(m, gen, Vec(m.K(), l), T);
                            ++checked;
                            worst_excess = std::max(worst_excess, r.measured_gap - r.bound);
                            worst_neg = std::min(worst_neg, r.min_gap);
                            if (g == "identity" && (r.measured_gap != 0.0 || r.min_gap != 0.0 || r.bound != 0.0))
                                identity_exact = false;
                            if (!r.holds) o.detail << " FAIL " << name << "/" << g << "/l" << l << "/T" << T;
                        } catch (const SizingError&) {
                            ++skipped;
                            skips += " " + name + "/" + g + "/T" + std::to_string(T);
                        }
                    }
                }
            }
        }
        o.pass = worst_excess <= kGapTol && worst_neg >= -kGapTol && identity_exact;
        o.detail << " " << checked << " cases, max(gap-bound)=" << num(worst_excess) << " min gap=" << num(worst_neg)
                 << " identity exact=" << (identity_exact ? "yes" : "no") << "; skipped by guard: " << skipped
                 << (skipped ? skips : "");
    });

    report(8, "contraction and infinite-horizon sandwich", [](Verdict& o) {
        // contraction on a lossy kernel with several AIS values
        const auto m = fixture("bind1c");
        const auto K = build_kernel(m, builtin_generator("window:1"), {0.5}, 2);
        std::mt19937_64 rng(8);
        double worst = -std::numeric_limits<double>::infinity();
        for (int r = 0; r < 100; ++r) {
            Vec a(K.values.size()), b(K.values.size());
            for (auto& x : a) x = 20.0 * uniform01(rng) - 10.0;
            for (auto& x : b) x = 20.0 * uniform01(rng) - 10.0;
            worst = std::max(worst, sup_norm_diff(bellman(K, a, m.discount), bellman(K, b, m.discount)) -
                                        m.discount * sup_norm_diff(a, b));
        }
        o.pass = worst <= kContractionTol;
        o.detail << " contraction: 100 pairs on " << K.values.size() << " values, max excess=" << num(worst) << ";";
        int held = 0, total = 0;
        std::string skips;
        for (const auto& name : kFixtures) {
            const auto fm = fixture(name);
            for (const auto& g : builtin_generator_names()) {
                const auto gen = builtin_generator(g);
                if (!gen.time_invariant) continue;
                for (double l : lambda_levels(fm, 2)) {
                    try {
                        const auto r = check_infinite_gap(fm, gen, Vec(fm.K(), l), kSandwichTol);
                        if (!r.feasible) {
                            skips += " " + name + "/" + g + "(" + r.message + ")";
                            continue;
                        }
                        ++total;
                        held += r.holds;
                        if (!r.holds) o.detail << " FAIL " << name << "/" << g << "/l" << l;
                    } catch (const DomainError& e) {
                        skips += " " + name + "/" + g + "/l" + num(l);
                    } catch (const SizingError& e) {
                        skips += " " + name + "/" + g + "/l" + num(l) + "(guard)";
                    }
                }
            }
        }
        o.pass = o.pass && held == total && total > 0;
        o.detail << " sandwich held " << held << "/" << total << " at tol=" << kSandwichTol
                 << "; skipped (AIS range not closed):" << skips;
    });

    report(9, "finite-difference gradient agreement, 10 seeds", [](Verdict& o) {
        const auto m = fixture("bind1c");
        LearnerConfig cfg;
        cfg.z_width = 3;
        cfg.pred_width = 4;
        cfg.phi_width = 3;
        cfg = validate_config(cfg, m);
        double worst_layer = 0.0, worst_rc = 0.0, worst_rs = 0.0, worst_pg = 0.0;
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            {
                nn::ParamStore ps;
                std::mt19937_64 rng(seed);
                const auto d = nn::Dense::make(ps, "d", 3, 4, rng);
                const auto r = nn::RnnCell::make(ps, "r", 4, 3, rng);
                const auto f = nn::Mlp::make(ps, "f", 3, 4, 3, rng);
                Vec x(3);
                for (auto& v : x) v = 2.0 * uniform01(rng) - 1.0;
                const int obs = static_cast<int>(seed % 3);
                auto build = [&](nn::Tape& t) {
                    auto h = r.step(t, t.tanh(d.forward(t, t.constant(x))), t.constant(Vec(3, 0.2)));
                    auto logits = f.forward(t, h);
                    return t.add(t.nll(t.softmax(logits), obs, 1e-8), t.smooth_l1(t.pick(logits, 0), 0.1));
                };
                const auto gc = nn::finite_difference_check(
                    ps,
                    [&] {
                        nn::Tape t(&ps);
                        return t.scalar(build(t));
                    },
                    [&] {
                        nn::Tape t(&ps);
                        t.backward(build(t));
                    });
                worst_layer = std::max(worst_layer, gc.max_rel_error);
            }
            auto b = make_bundle(m, cfg, seed);
            const Vec lam{0.3 * static_cast<double>(seed % 4)};
            const auto batch = collect_batch(m, b, lam, 2, 3, 100 + seed);
            worst_rc = std::max(worst_rc, nn::finite_difference_check(
                                              b.store, [&] { return risk_coordinator(b, batch, cfg.beta, cfg.eta, false); },
                                              [&] { risk_coordinator(b, batch, cfg.beta, cfg.eta, true); })
                                              .max_rel_error);
            worst_rs = std::max(worst_rs, nn::finite_difference_check(
                                              b.store,
                                              [&] { return risk_supervisor(m, b, batch, cfg.beta_s, cfg.eta, false); },
                                              [&] { risk_supervisor(m, b, batch, cfg.beta_s, cfg.eta, true); })
                                              .max_rel_error);
            std::vector<Vec> g;
            for (const auto& tr : batch.traj) g.push_back(cost_to_go(tr, lam, m.kappa, m.discount));
            worst_pg = std::max(worst_pg, nn::finite_difference_check(
                                              b.store,
                                              [&] {
                                                  Batch probe = batch;
                                                  probe.policy_fingerprint = b.policy_fingerprint();
                                                  return policy_surrogate(b, probe, g, false);
                                              },
                                              [&] { policy_surrogate(b, batch, g, true); })
                                              .max_rel_error);
        }
        o.pass = std::max({worst_layer, worst_rc, worst_rs, worst_pg}) <= kGradTol;
        o.detail << " max rel error: layers=" << num(worst_layer) << " coordinator risk=" << num(worst_rc)
                 << " supervisor risk=" << num(worst_rs) << " estimator=" << num(worst_pg) << " tol=" << kGradTol;
    });

    report(10, "learner end to end", [](Verdict& o) {
        const auto m = fixture("bind1");
        LearnerConfig cfg;
        auto b = make_bundle(m, validate_config(cfg, m), cfg.seed);
        const auto st = train(m, cfg, b);
        const int w = static_cast<int>(st.history.size()) / 2;
        const double lam = st.recent_lambda(w), D = st.recent_D(w), L = st.recent_lagrangian(w);
        const double oracle = dual_ascent(m, cfg.horizon).dual_value;
        const bool ok_b = std::abs(lam - 1.0) <= kLambdaTol && std::abs(D - m.kappa[0]) <= kConstraintTol &&
                          std::abs(L - oracle) <= kLagrangianRelTol * std::abs(oracle);
        o.detail << " bind1 " << st.iteration << " iters, running means over last " << w << ": lambda=" << num(lam)
                 << " D=" << num(D) << " (kappa " << num(m.kappa[0]) << ") L=" << num(L) << " vs dual " << num(oracle)
                 << "; final lambda=" << num(st.lambda[0]) << ";";

        const auto c = fixture("const");
        LearnerConfig cc;
        cc.lambda_max = 2.0;  // Slater cap is 0 here
        auto bc = make_bundle(c, validate_config(cc, c), cc.seed);
        const auto sc = train(c, cc, bc);
        double peak = 0.0;
        for (const auto& h : sc.history) peak = std::max(peak, h.lambda[0]);
        peak = std::max(peak, sc.lambda[0]);
        o.detail << " const max lambda=" << num(peak) << " (cap " << kConstLambdaCap << ")";
        o.pass = ok_b && peak <= kConstLambdaCap;
    });

    report(11, "step-size contract", [](Verdict& o) {
        const auto m = fixture("bind1");
        // independent statement of the contract: each exponent in (1/2, 1], strictly increasing
        auto admissible = [](double a, double b, double c) {
            return a > 0.5 && c <= 1.0 && a < b && b < c;
        };
        const std::vector<double> grid{0.3, 0.5, 0.51, 0.6, 0.7, 0.8, 0.9, 1.0, 1.2};
        int disagreements = 0, rejected = 0, accepted = 0;
        for (double a : grid)
            for (double b : grid)
                for (double c : grid) {
                    LearnerConfig cfg;
                    cfg.p1 = a;
                    cfg.p2 = b;
                    cfg.p3 = c;
                    bool ok = true;
                    try {
                        validate_config(cfg, m);
                    } catch (const ValidationError&) {
                        ok = false;
                    }
                    (ok ? accepted : rejected)++;
                    disagreements += ok != admissible(a, b, c);
                }
        LearnerConfig def;
        bool default_ok = true;
        try {
            validate_config(def, m);
        } catch (const ValidationError&) {
            default_ok = false;
        }
        o.pass = disagreements == 0 && default_ok && def.p1 == 0.6 && def.p2 == 0.8 && def.p3 == 1.0;
        o.detail << " " << accepted + rejected << " triples, accepted=" << accepted << " rejected=" << rejected
                 << " disagreements=" << disagreements << " default (0.6,0.8,1.0) accepted=" << (default_ok ? "yes" : "no");
    });

    std::printf("%s: %d criteria failed\n", failures ? "FAILED" : "ALL PASSED", failures);
    return failures ? 1 : 0;
}
