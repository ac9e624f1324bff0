#pragma once

#include <bit>
#include <cstdint>

#include "coordinator.hpp"

namespace macp {

/// l^(lambda)(s,a) = c(s,a) + <lambda, d(s,a) - kappa>.
inline double lambda_cost(const ModelSpec& m, const Vec& lambda, int s, int a) {
    if (static_cast<int>(lambda.size()) != m.K()) throw DomainError("lambda has wrong dimension");
    double l = m.cost_c[s][a];
    for (int k = 0; k < m.K(); ++k) l += lambda[k] * (m.cost_d[s][a][k] - m.kappa[k]);
    return l;
}

/// Stage-cost expectation under l^(lambda) from the (c, d) expectations of a stage.
inline double stage_lagrangian(const ModelSpec& m, const Vec& lambda, double c, const Vec& d) {
    double l = c;
    for (int k = 0; k < m.K(); ++k) l += lambda[k] * (d[k] - m.kappa[k]);
    return l;
}

/// sum_{t=1}^{T} alpha^{t-1}; T < 0 means the infinite sum.
inline double geometric_weight(double alpha, int T) {
    if (T < 0) return 1.0 / (1.0 - alpha);
    return (1.0 - std::pow(alpha, T)) / (1.0 - alpha);
}

/// Per-stage-kappa objective minus C_T + <lambda, D_T - kappa>; independent of the policy.
inline double lagrangian_offset(const Vec& lambda, const Vec& kappa, double alpha, int T) {
    return -dot(lambda, kappa) * (geometric_weight(alpha, T) - 1.0);
}

struct DPOptions {
    std::size_t prescription_guard = 100000;
    std::size_t node_guard = 2000000;  // distinct information states across all stages
    /// 0 merges only bitwise-equal laws; a positive quantum merges laws whose
    /// probabilities round to the same multiple (long-horizon proxies).
    double memo_quantum = 0.0;
    bool keep_q = true;
};

using LawKey = std::vector<std::int64_t>;

inline LawKey law_key(const InfoState& is, double quantum) {
    LawKey key;
    for (const auto& sup : is.support) key.push_back(static_cast<std::int64_t>(sup.size()));
    for (const auto& e : is.entries) {
        key.push_back(e.s);
        for (int r : e.rank) key.push_back(r);
        key.push_back(quantum > 0.0 ? std::llround(e.p / quantum) : std::bit_cast<std::int64_t>(e.p));
    }
    return key;
}

/// One information state of the coordinator at stage t.
struct DPEntry {
    double V = 0.0;
    RankActions best;  // first minimizer in lexicographic prescription order
    int best_index = 0;
    Vec Q;  // per enumerated prescription, if kept
};

/// Backward-recursion values. Tables are indexed by the conditional law of
/// (S_t, H_t^{1:N}) given the prescription history, up to relabeling of
/// private histories; every prescription history maps to exactly one entry.
struct ValueTables {
    Vec lambda;
    int T = 0;
    DPOptions options;
    struct Root {
        History h0;
        double prob;
        int entry;
    };
    std::vector<Root> roots;
    std::vector<std::vector<DPEntry>> layers;               // [t-1]
    std::vector<std::map<LawKey, int>> index;               // [t-1]
    double objective = 0.0;                                 // per-stage-kappa objective of v*

    const DPEntry& at(int t, const InfoState& law) const {
        auto it = index[t - 1].find(law_key(law, options.memo_quantum));
        if (it == index[t - 1].end()) throw DomainError("information state not in value tables");
        return layers[t - 1][it->second];
    }
    double V1(int root) const { return layers[0][roots[root].entry].V; }
};

namespace detail {
inline std::vector<int> action_counts(const ModelSpec& m) {
    std::vector<int> a;
    for (int n = 0; n < m.num_agents; ++n) a.push_back(m.num_actions(n));
    return a;
}
inline std::vector<int> support_sizes(const InfoState& is) {
    std::vector<int> s;
    for (const auto& sup : is.support) s.push_back(static_cast<int>(sup.size()));
    return s;
}
}  // namespace detail

/// Backward recursion over coordinator information with V_{T+1} = 0
/// and the min over deterministic prescriptions on the conditional support.
inline ValueTables exact_dp(const ModelSpec& m, const Vec& lambda, int T, DPOptions opt = {}) {
    if (T < 1) throw DomainError("horizon must be >= 1");
    if (static_cast<int>(lambda.size()) != m.K()) throw DomainError("lambda has wrong dimension");
    for (double x : lambda)
        if (x < 0.0) throw DomainError("lambda must be nonnegative");
    ValueTables vt;
    vt.lambda = lambda;
    vt.T = T;
    vt.options = opt;
    vt.layers.resize(T);
    vt.index.resize(T);
    const auto acts = detail::action_counts(m);
    std::size_t count = 0;

    std::function<int(const CoordNode&, int)> solve = [&](const CoordNode& node, int t) -> int {
        LawKey key = law_key(node.law, opt.memo_quantum);
        auto found = vt.index[t - 1].find(key);
        if (found != vt.index[t - 1].end()) return found->second;
        if (++count > opt.node_guard)
            throw SizingError("information-state count exceeds guard at t=" + std::to_string(t));
        DPEntry entry;
        entry.V = std::numeric_limits<double>::infinity();
        const auto gs = enumerate_rank_prescriptions(detail::support_sizes(node.law), acts, opt.prescription_guard);
        for (int gi = 0; gi < static_cast<int>(gs.size()); ++gi) {
            auto st = apply_stage(m, node, to_rows(m, gs[gi]), t < T);
            double q = stage_lagrangian(m, lambda, st.c, st.d);
            if (t < T) {
                double future = 0.0;
                for (const auto& ch : st.children) {
                    const int id = solve(ch, t + 1);
                    future += ch.prob * vt.layers[t][id].V;
                }
                q += m.discount * future;
            }
            if (opt.keep_q) entry.Q.push_back(q);
            if (q < entry.V) {
                entry.V = q;
                entry.best = gs[gi];
                entry.best_index = gi;
            }
        }
        const int id = static_cast<int>(vt.layers[t - 1].size());
        vt.layers[t - 1].push_back(std::move(entry));
        vt.index[t - 1].emplace(std::move(key), id);
        return id;
    };

    for (const auto& root : initial_nodes(m)) {
        const int id = solve(root, 1);
        vt.roots.push_back({root.h0, root.prob, id});
        vt.objective += root.prob * vt.layers[0][id].V;
    }
    return vt;
}

/// Explicit coordination policy v* over every common history reachable under it.
inline CoordinationPolicy extract_policy(const ModelSpec& m, const ValueTables& vt, std::size_t guard = 1000000) {
    CoordinationPolicy v;
    std::function<void(const CoordNode&, int)> walk = [&](const CoordNode& node, int t) {
        const auto& e = vt.at(t, node.law);
        v.at[node.h0] = to_prescription(node.law, e.best);
        if (v.at.size() > guard) throw SizingError("policy extraction exceeds guard");
        if (t < vt.T)
            for (const auto& ch : apply_stage(m, node, to_rows(m, e.best)).children) walk(ch, t + 1);
    };
    for (const auto& root : initial_nodes(m)) walk(root, 1);
    return v;
}

/// Per-stage-kappa objective of v from exact (C_T, D_T).
inline double planner_objective(const ModelSpec& m, const Evaluation& ev, const Vec& lambda, int T) {
    Vec kT = m.kappa;
    for (double& x : kT) x *= geometric_weight(m.discount, T);
    double l = ev.C;
    for (int k = 0; k < m.K(); ++k) l += lambda[k] * (ev.D[k] - kT[k]);
    return l;
}

// ---------------------------------------------------------------------------
// Finite/infinite envelope

struct Interval {
    double lo = 0.0, hi = 0.0;
    bool contains(double x, double slack = 0.0) const { return x >= lo - slack && x <= hi + slack; }
};

inline std::pair<double, double> lambda_cost_range(const CostBounds& b, const Vec& lambda, const Vec& kappa) {
    double lo = b.c_low, hi = b.c_up;
    for (size_t k = 0; k < lambda.size(); ++k) {
        lo += lambda[k] * (b.d_low[k] - kappa[k]);
        hi += lambda[k] * (b.d_up[k] - kappa[k]);
    }
    return {lo, hi};
}

/// Interval for the infinite-horizon V_t given V_{t,T}.
inline Interval finite_horizon_envelope(double v_value, int t, int T, double alpha, const Vec& lambda,
                                        const CostBounds& b, const Vec& kappa) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("discount must lie in (0,1)");
    if (t > T || t < 1) throw DomainError("envelope requires 1 <= t <= T");
    auto [l_lo, l_hi] = lambda_cost_range(b, lambda, kappa);
    const double w = std::pow(alpha, T - t + 1) / (1.0 - alpha);
    return {v_value + w * l_lo, v_value + w * l_hi};
}

}  // namespace macp
