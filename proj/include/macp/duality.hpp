#pragma once

#include "planner.hpp"

namespace macp {

/// L(u, lambda) = C + <lambda, D - kappa>; kappa enters once.
inline double lagrangian(double C, const Vec& D, const Vec& lambda, const Vec& kappa) {
    if (D.size() != lambda.size() || D.size() != kappa.size()) throw DomainError("lagrangian: dimension mismatch");
    double l = C;
    for (size_t k = 0; k < D.size(); ++k) l += lambda[k] * (D[k] - kappa[k]);
    return l;
}

inline double lagrangian(const Evaluation& ev, const Vec& lambda, const Vec& kappa) {
    return lagrangian(ev.C, ev.D, lambda, kappa);
}

struct DualPoint {
    double value = 0.0;
    Vec supergradient;  // D_T(minimizer) - kappa
    CoordinationPolicy minimizer;
    Evaluation eval;
};

/// inf over policies of L_T(., lambda), attained by the exact DP minimizer.
/// The DP objective differs from the returned value by lagrangian_offset only.
inline DualPoint dual_function(const ModelSpec& m, const Vec& lambda, int T, DPOptions opt = {}) {
    opt.keep_q = false;
    const auto vt = exact_dp(m, lambda, T, opt);
    DualPoint dp;
    dp.minimizer = extract_policy(m, vt);
    dp.eval = coordinator_evaluate(m, dp.minimizer, T);
    dp.value = lagrangian(dp.eval, lambda, m.kappa);
    dp.supergradient = dp.eval.D;
    for (int k = 0; k < m.K(); ++k) dp.supergradient[k] -= m.kappa[k];
    return dp;
}

/// (C(u_bar) - c_low / (1 - alpha)) / zeta.
inline double lambda_upper_bound(double C_feasible, double c_low, double alpha, double zeta) {
    if (!(zeta > 0.0)) throw DomainError("Slater slack must be positive");
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("discount must lie in (0,1)");
    return (C_feasible - c_low / (1.0 - alpha)) / zeta;
}

/// Cap from the model's declared Slater pair, evaluated at infinite horizon.
inline std::optional<double> slater_cap(const ModelSpec& m) {
    if (!m.slater) return std::nullopt;
    const auto ev = constant_action_value(m, m.slater->actions);
    return lambda_upper_bound(ev.C, cost_bounds(m).c_low, m.discount, m.slater->zeta);
}

/// The box used by dual ascent: the Slater cap, else `fallback`.
inline double default_lambda_max(const ModelSpec& m, double fallback = 1.0) {
    auto cap = slater_cap(m);
    return cap ? std::max(0.0, *cap) : fallback;
}

struct DualConfig {
    int iters = 20000;
    double delta0 = -1.0;      // < 0: lambda_max / 10
    double lambda_max = -1.0;  // < 0: default_lambda_max
    double tol = 1e-6;         // best-value gain over the second half below which we call it converged
};

struct DualResult {
    Vec lambda_star;
    double dual_value = -std::numeric_limits<double>::infinity();
    CoordinationPolicy inner_minimizer;
    Evaluation inner_eval;
    Vec supergradient;
    double comp_slack_residual = 0.0;
    int iterations = 0;
    bool converged = false;
    double lambda_max = 0.0;
    Vec best_history;  // best-so-far dual value per iteration
};

/// Projected supergradient ascent on the dual, returning the best iterate seen.
inline DualResult dual_ascent(const ModelSpec& m, int T, DualConfig cfg = {}, DPOptions opt = {}) {
    if (m.K() < 1) throw DomainError("dual ascent needs at least one constraint");
    DualResult r;
    r.lambda_max = cfg.lambda_max >= 0.0 ? cfg.lambda_max : default_lambda_max(m);
    const double delta0 = cfg.delta0 > 0.0 ? cfg.delta0 : r.lambda_max / 10.0;
    Vec lambda(m.K(), 0.0);
    // The DP value depends on lambda only through the minimizer; cache exact duplicates.
    std::map<Vec, DualPoint> cache;
    double half_best = -std::numeric_limits<double>::infinity();
    for (int i = 1; i <= cfg.iters; ++i) {
        auto it = cache.find(lambda);
        if (it == cache.end()) it = cache.emplace(lambda, dual_function(m, lambda, T, opt)).first;
        const DualPoint& dp = it->second;
        if (dp.value > r.dual_value) {
            r.dual_value = dp.value;
            r.lambda_star = lambda;
            r.inner_minimizer = dp.minimizer;
            r.inner_eval = dp.eval;
            r.supergradient = dp.supergradient;
        }
        r.best_history.push_back(r.dual_value);
        r.iterations = i;
        if (i == cfg.iters / 2) half_best = r.dual_value;
        const double step = delta0 / std::sqrt(static_cast<double>(i));
        for (int k = 0; k < m.K(); ++k) lambda[k] = std::clamp(lambda[k] + step * dp.supergradient[k], 0.0, r.lambda_max);
        if (cache.size() > 4096) cache.clear();
    }
    r.converged = r.dual_value - half_best <= cfg.tol;
    r.comp_slack_residual = std::abs(dot(r.lambda_star, r.supergradient));
    return r;
}

// ---------------------------------------------------------------------------
// Single-agent primal oracle

struct PrimalResult {
    double primal_value = std::numeric_limits<double>::infinity();
    std::vector<std::pair<double, double>> points;  // (D, C) per deterministic policy
    std::vector<std::pair<double, double>> hull;    // lower convex envelope, increasing D
    std::vector<CoordinationPolicy> policies;
    /// Envelope at D = kappa as a mixture of two enumerated policies.
    int lo = -1, hi = -1;
    double weight_hi = 0.0;
};

inline std::vector<std::pair<double, double>> lower_hull(std::vector<std::pair<double, double>> pts) {
    std::sort(pts.begin(), pts.end());
    std::vector<std::pair<double, double>> h;
    for (const auto& p : pts) {
        if (!h.empty() && std::abs(h.back().first - p.first) <= 1e-15) continue;  // same D: keep lowest C (sorted)
        while (h.size() >= 2) {
            const auto& a = h[h.size() - 2];
            const auto& b = h.back();
            const double cross = (b.first - a.first) * (p.second - a.second) - (b.second - a.second) * (p.first - a.first);
            if (cross <= 0.0) h.pop_back();
            else break;
        }
        h.push_back(p);
    }
    return h;
}

/// Brute force over deterministic history-dependent policies; mixtures of
/// them fill the lower convex envelope of their (D, C) points.
inline PrimalResult primal_oracle(const ModelSpec& m, int T, std::size_t guard = 100000) {
    if (m.num_agents != 1 || m.K() != 1) throw DomainError("primal oracle supports only N = 1, K = 1");
    PrimalResult r;
    r.policies = enumerate_coordination_policies(m, T, guard);
    for (const auto& v : r.policies) {
        const auto ev = coordinator_evaluate(m, v, T);
        r.points.push_back({ev.D[0], ev.C});
    }
    r.hull = lower_hull(r.points);
    const double kappa = m.kappa[0];
    auto locate = [&](double D, double C) {
        for (size_t i = 0; i < r.points.size(); ++i)
            if (r.points[i].first == D && r.points[i].second == C) return static_cast<int>(i);
        return -1;
    };
    if (r.hull.front().first > kappa) return r;  // infeasible: value stays +inf
    // the envelope is decreasing-then-increasing; feasible region is D <= kappa
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < r.hull.size(); ++i) {
        const auto& p = r.hull[i];
        if (p.first <= kappa && p.second < best) {
            best = p.second;
            r.lo = r.hi = locate(p.first, p.second);
            r.weight_hi = 0.0;
        }
        if (i + 1 < r.hull.size()) {
            const auto& q = r.hull[i + 1];
            if (p.first <= kappa && kappa < q.first) {
                const double w = (kappa - p.first) / (q.first - p.first);
                const double c = (1 - w) * p.second + w * q.second;
                if (c < best) {
                    best = c;
                    r.lo = locate(p.first, p.second);
                    r.hi = locate(q.first, q.second);
                    r.weight_hi = w;
                }
            }
        }
    }
    r.primal_value = best;
    return r;
}

// ---------------------------------------------------------------------------
// Mixtures and their behavioral replication

/// Deterministic agent policy: (h0, hn) -> action.
using AgentRule = std::function<int(const History& h0, const History& hn)>;

/// Independent per-agent mixtures (no common randomness).
struct MixturePolicy {
    std::vector<std::vector<std::pair<AgentRule, double>>> agent;
};

inline void validate_mixture(const MixturePolicy& mu, int N) {
    if (static_cast<int>(mu.agent.size()) != N) throw ValidationError("mixture must list every agent");
    for (const auto& comps : mu.agent) {
        double tot = 0.0;
        for (const auto& [rule, w] : comps) {
            if (w < 0.0) throw ValidationError("mixture weight is negative");
            tot += w;
        }
        if (comps.empty() || std::abs(tot - 1.0) > 1e-12) throw ValidationError("mixture weights must sum to 1");
    }
}

/// Agent rule of one player in a deterministic coordination policy.
inline AgentRule agent_rule(const CoordinationPolicy& v, int n) {
    return [v, n](const History& h0, const History& hn) { return apply_prescription(v.prescription(h0), n, hn); };
}

/// u-bar^n_t(a | h0, hn): weight of components consistent with hn's own actions
/// and choosing a, over weight of components consistent with hn. Agent
/// independence makes this ratio equal to the occupation-measure ratio.
inline BehavioralPolicy replicate_mixture(const ModelSpec& m, const MixturePolicy& mu) {
    validate_mixture(mu, m.num_agents);
    BehavioralPolicy u;
    for (int n = 0; n < m.num_agents; ++n) {
        const int nA = m.num_actions(n);
        const auto comps = mu.agent[n];
        u.agent.push_back([comps, nA](const History& h0, const History& hn) {
            const int t = static_cast<int>(h0.size());
            const auto past = own_actions(hn);
            Vec num(nA, 0.0);
            double den = 0.0;
            for (const auto& [rule, w] : comps) {
                if (w <= 0.0) continue;
                bool ok = true;
                for (int s = 1; s < t && ok; ++s)
                    ok = rule(History(h0.begin(), h0.begin() + s), private_prefix(hn, s)) == past[s - 1];
                if (!ok) continue;
                den += w;
                num[rule(h0, hn)] += w;
            }
            if (den <= 0.0) return Vec(nA, 1.0 / nA);
            for (double& x : num) x /= den;
            return num;
        });
    }
    return u;
}

/// Mixture occupation measure by enumerating every product of components.
inline OccupationMeasure mixture_occupation(const ModelSpec& m, const MixturePolicy& mu, int T,
                                            EnumerationOptions opt = {}) {
    validate_mixture(mu, m.num_agents);
    OccupationMeasure total(T);
    std::vector<int> idx(m.num_agents, 0);
    while (true) {
        double w = 1.0;
        BehavioralPolicy u;
        for (int n = 0; n < m.num_agents; ++n) {
            const auto& [rule, wn] = mu.agent[n][idx[n]];
            w *= wn;
            const int nA = m.num_actions(n);
            u.agent.push_back([rule, nA](const History& h0, const History& hn) {
                Vec r(nA, 0.0);
                r[rule(h0, hn)] = 1.0;
                return r;
            });
        }
        if (w > 0.0) {
            const auto occ = enumerate_histories(m, u, T, opt);
            for (int t = 0; t < T; ++t)
                for (const auto& [key, p] : occ[t]) total[t][key] += w * p;
        }
        int n = m.num_agents - 1;
        while (n >= 0 && ++idx[n] == static_cast<int>(mu.agent[n].size())) idx[n--] = 0;
        if (n < 0) break;
    }
    return total;
}

/// max over (t, h, a) of |p1 - p2|, treating missing keys as 0.
inline double occupation_distance(const OccupationMeasure& a, const OccupationMeasure& b) {
    double worst = 0.0;
    for (size_t t = 0; t < std::max(a.size(), b.size()); ++t) {
        static const std::map<std::tuple<History, std::vector<History>, int>, double> empty;
        const auto& x = t < a.size() ? a[t] : empty;
        const auto& y = t < b.size() ? b[t] : empty;
        for (const auto& [k, p] : x) {
            auto it = y.find(k);
            worst = std::max(worst, std::abs(p - (it == y.end() ? 0.0 : it->second)));
        }
        for (const auto& [k, p] : y)
            if (!x.count(k)) worst = std::max(worst, p);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Saddle diagnostics

struct SaddleReport {
    double left_violation = 0.0;   // max over lambda probes of L(u*, lambda) - L(u*, lambda*)
    double right_violation = 0.0;  // max over policy probes of L(u*, lambda*) - L(u, lambda*)
    double max_violation = 0.0;
    double comp_slack_residual = 0.0;
    double value = 0.0;  // L(u*, lambda*)
};

inline SaddleReport check_saddle(const ModelSpec& m, const Evaluation& candidate, const Vec& lambda_star,
                                 const std::vector<Vec>& lambda_probes, const std::vector<Evaluation>& policy_probes) {
    SaddleReport r;
    r.value = lagrangian(candidate, lambda_star, m.kappa);
    for (const auto& lam : lambda_probes)
        r.left_violation = std::max(r.left_violation, lagrangian(candidate, lam, m.kappa) - r.value);
    for (const auto& ev : policy_probes)
        r.right_violation = std::max(r.right_violation, r.value - lagrangian(ev, lambda_star, m.kappa));
    r.max_violation = std::max(r.left_violation, r.right_violation);
    Vec slack = candidate.D;
    for (int k = 0; k < m.K(); ++k) slack[k] -= m.kappa[k];
    r.comp_slack_residual = std::abs(dot(lambda_star, slack));
    return r;
}

inline SaddleReport check_saddle(const ModelSpec& m, const BehavioralPolicy& u, const Vec& lambda_star, int T,
                                 const std::vector<Vec>& lambda_probes, const std::vector<BehavioralPolicy>& probes) {
    std::vector<Evaluation> evs;
    for (const auto& p : probes) evs.push_back(exact_evaluate(m, p, T));
    return check_saddle(m, exact_evaluate(m, u, T), lambda_star, lambda_probes, evs);
}

}  // namespace macp
