#pragma once

#include <algorithm>
#include <map>
#include <set>

#include "model.hpp"

namespace macp {

/// Conditional law of (S_t, H^1_t, ..., H^N_t) given a coordinator history.
/// Private histories are replaced by their rank in the sorted per-agent
/// support; entries are sorted by (s, ranks) so equal laws compare equal.
struct InfoState {
    struct Entry {
        int s;
        std::vector<int> rank;
        double p;
    };
    std::vector<Entry> entries;
    std::vector<std::vector<History>> support;  // [agent][rank]

    int support_size(int n) const { return static_cast<int>(support[n].size()); }
};

namespace detail {
using RawLaw = std::map<std::pair<int, std::vector<History>>, double>;

/// Normalizes and canonicalizes; `mass` must be the total of `raw`.
inline InfoState canonicalize(const RawLaw& raw, double mass, int N) {
    InfoState is;
    is.support.assign(N, {});
    std::vector<std::set<History>> sets(N);
    for (const auto& [k, p] : raw)
        for (int n = 0; n < N; ++n) sets[n].insert(k.second[n]);
    std::vector<std::map<History, int>> rank(N);
    for (int n = 0; n < N; ++n) {
        for (const auto& h : sets[n]) {
            rank[n][h] = static_cast<int>(is.support[n].size());
            is.support[n].push_back(h);
        }
    }
    for (const auto& [k, p] : raw) {
        std::vector<int> r(N);
        for (int n = 0; n < N; ++n) r[n] = rank[n][k.second[n]];
        is.entries.push_back({k.first, std::move(r), p / mass});
    }
    std::sort(is.entries.begin(), is.entries.end(), [](const auto& x, const auto& y) {
        return std::tie(x.s, x.rank) < std::tie(y.s, y.rank);
    });
    return is;
}
}  // namespace detail

/// A coordinator node: common history, its probability, and the law given it.
struct CoordNode {
    History h0;
    double prob = 1.0;  // P(this node | parent node, prescription)
    InfoState law;
};

/// One node per initial common observation, in increasing o0 order.
inline std::vector<CoordNode> initial_nodes(const ModelSpec& m) {
    std::map<int, detail::RawLaw> raw;
    std::map<int, double> mass;
    for (const auto& oc : m.initial) {
        if (oc.p <= 0.0) continue;
        std::vector<History> hp(m.num_agents);
        for (int n = 0; n < m.num_agents; ++n) hp[n] = {oc.o[n + 1]};
        raw[oc.o[0]][{oc.s, hp}] += oc.p;
        mass[oc.o[0]] += oc.p;
    }
    std::vector<CoordNode> out;
    for (const auto& [o0, law] : raw) out.push_back({History{o0}, mass[o0], detail::canonicalize(law, mass[o0], m.num_agents)});
    return out;
}

/// Prescription rows over the ranks of an InfoState's support: [agent][rank] -> distribution.
using RankPrescription = std::vector<std::vector<Vec>>;
/// Deterministic variant: [agent][rank] -> action.
using RankActions = std::vector<std::vector<int>>;

inline RankPrescription to_rows(const ModelSpec& m, const RankActions& g) {
    RankPrescription r(g.size());
    for (size_t n = 0; n < g.size(); ++n)
        for (int a : g[n]) {
            Vec row(m.num_actions(static_cast<int>(n)), 0.0);
            row[a] = 1.0;
            r[n].push_back(row);
        }
    return r;
}

/// One-stage expectations under a prescription at a node.
struct StageResult {
    double c = 0.0;
    Vec d;
    std::vector<CoordNode> children;  // one per positive-probability next common observation
};

inline StageResult apply_stage(const ModelSpec& m, const CoordNode& node, const RankPrescription& g,
                               bool want_children = true) {
    const int N = m.num_agents, K = m.K(), A = m.num_joint_actions();
    StageResult r;
    r.d.assign(K, 0.0);
    std::map<int, detail::RawLaw> raw;
    std::map<int, double> mass;
    for (const auto& e : node.law.entries) {
        for (int a = 0; a < A; ++a) {
            auto av = m.decode_action(a);
            double q = e.p;
            for (int n = 0; n < N && q > 0.0; ++n) q *= g[n][e.rank[n]][av[n]];
            if (q <= 0.0) continue;
            r.c += q * m.cost_c[e.s][a];
            for (int k = 0; k < K; ++k) r.d[k] += q * m.cost_d[e.s][a][k];
            if (!want_children) continue;
            for (const auto& oc : m.transition[e.s][a]) {
                if (oc.p <= 0.0) continue;
                std::vector<History> hp(N);
                for (int n = 0; n < N; ++n) {
                    hp[n] = node.law.support[n][e.rank[n]];
                    hp[n].push_back(av[n]);
                    hp[n].push_back(oc.o[n + 1]);
                }
                raw[oc.o[0]][{oc.s, std::move(hp)}] += q * oc.p;
                mass[oc.o[0]] += q * oc.p;
            }
        }
    }
    for (const auto& [o0, law] : raw) {
        History h0 = node.h0;
        h0.push_back(o0);
        r.children.push_back({std::move(h0), mass[o0], detail::canonicalize(law, mass[o0], N)});
    }
    return r;
}

// ---------------------------------------------------------------------------
// Prescription enumeration

/// All deterministic prescriptions over per-agent domains of the given sizes, in
/// lexicographic order of (agent, history rank, action): agent 0's first
/// history is the most significant digit.
inline std::vector<RankActions> enumerate_rank_prescriptions(const std::vector<int>& domain_sizes,
                                                             const std::vector<int>& num_actions,
                                                             std::size_t guard = 100000) {
    double count = 1.0;
    for (size_t n = 0; n < domain_sizes.size(); ++n) count *= std::pow(num_actions[n], domain_sizes[n]);
    if (count > static_cast<double>(guard))
        throw SizingError("prescription count " + detail::fmt_num(count) + " exceeds guard " + std::to_string(guard));
    std::vector<RankActions> out;
    RankActions cur(domain_sizes.size());
    for (size_t n = 0; n < domain_sizes.size(); ++n) cur[n].assign(domain_sizes[n], 0);
    while (true) {
        out.push_back(cur);
        // increment the mixed-radix counter from the least significant digit
        int n = static_cast<int>(cur.size()) - 1;
        int i = n >= 0 ? static_cast<int>(cur[n].size()) - 1 : -1;
        while (n >= 0) {
            if (i < 0) {
                --n;
                if (n >= 0) i = static_cast<int>(cur[n].size()) - 1;
                continue;
            }
            if (++cur[n][i] < num_actions[n]) break;
            cur[n][i] = 0;
            --i;
        }
        if (n < 0) break;
    }
    return out;
}

/// Deterministic prescription over explicit private histories.
struct DeterministicPrescription {
    std::vector<std::map<History, int>> rule;  // [agent]: history -> action
    bool operator==(const DeterministicPrescription&) const = default;
};

/// Private histories of each agent with positive probability under some policy at stage t.
inline std::vector<std::vector<History>> reachable_private_histories(const ModelSpec& m, int t,
                                                                     EnumerationOptions opt = {}) {
    auto law = forward_law(m, uniform_policy(m), t, opt);
    std::vector<std::set<History>> sets(m.num_agents);
    for (const auto& e : law[t - 1])
        for (int n = 0; n < m.num_agents; ++n) sets[n].insert(e.hp[n]);
    std::vector<std::vector<History>> out(m.num_agents);
    for (int n = 0; n < m.num_agents; ++n) out[n].assign(sets[n].begin(), sets[n].end());
    return out;
}

inline std::vector<DeterministicPrescription> enumerate_deterministic_prescriptions(
    const ModelSpec& m, const std::vector<std::vector<History>>& domains, std::size_t guard = 100000) {
    std::vector<int> sizes, acts;
    std::vector<std::vector<History>> sorted = domains;
    for (int n = 0; n < m.num_agents; ++n) {
        std::sort(sorted[n].begin(), sorted[n].end());
        sizes.push_back(static_cast<int>(sorted[n].size()));
        acts.push_back(m.num_actions(n));
    }
    std::vector<DeterministicPrescription> out;
    for (const auto& g : enumerate_rank_prescriptions(sizes, acts, guard)) {
        DeterministicPrescription p;
        p.rule.resize(m.num_agents);
        for (int n = 0; n < m.num_agents; ++n)
            for (int i = 0; i < sizes[n]; ++i) p.rule[n][sorted[n][i]] = g[n][i];
        out.push_back(std::move(p));
    }
    return out;
}

inline DeterministicPrescription to_prescription(const InfoState& law, const RankActions& g) {
    DeterministicPrescription p;
    p.rule.resize(g.size());
    for (size_t n = 0; n < g.size(); ++n)
        for (size_t i = 0; i < g[n].size(); ++i) p.rule[n][law.support[n][i]] = g[n][i];
    return p;
}

inline RankActions to_ranks(const InfoState& law, const DeterministicPrescription& p) {
    RankActions g(law.support.size());
    for (size_t n = 0; n < law.support.size(); ++n)
        for (const auto& h : law.support[n]) {
            auto it = p.rule[n].find(h);
            if (it == p.rule[n].end()) throw DomainError("prescription misses a reachable private history");
            g[n].push_back(it->second);
        }
    return g;
}

// ---------------------------------------------------------------------------
// Coordination policies

/// Deterministic coordination policy. Under a fixed policy the prescription
/// history is a function of the common history, so it is keyed by H^0_t.
struct CoordinationPolicy {
    std::map<History, DeterministicPrescription> at;

    const DeterministicPrescription& prescription(const History& h0) const {
        auto it = at.find(h0);
        if (it == at.end()) throw DomainError("coordination policy undefined at a reachable common history");
        return it->second;
    }
};

/// u^n_t(h0, hn) = (v_t(h0))^(n)(hn).
inline BehavioralPolicy coordination_to_behavioral(const CoordinationPolicy& v, const ModelSpec& m) {
    BehavioralPolicy u;
    for (int n = 0; n < m.num_agents; ++n) {
        const int nA = m.num_actions(n);
        u.agent.push_back([v, n, nA](const History& h0, const History& hn) {
            const auto& rule = v.prescription(h0).rule[n];
            auto it = rule.find(hn);
            if (it == rule.end()) throw DomainError("prescription undefined at a reachable private history");
            Vec row(nA, 0.0);
            row[it->second] = 1.0;
            return row;
        });
    }
    return u;
}

/// Coordinator-side (C_T, D_T): walks the coordinator tree with exact laws.
inline Evaluation coordinator_evaluate(const ModelSpec& m, const CoordinationPolicy& v, int T) {
    Evaluation ev;
    ev.D.assign(m.K(), 0.0);
    std::function<void(const CoordNode&, int, double)> walk = [&](const CoordNode& node, int t, double w) {
        auto g = to_ranks(node.law, v.prescription(node.h0));
        auto st = apply_stage(m, node, to_rows(m, g), t < T);
        const double disc = std::pow(m.discount, t - 1);
        ev.C += w * disc * st.c;
        for (int k = 0; k < m.K(); ++k) ev.D[k] += w * disc * st.d[k];
        if (t < T)
            for (const auto& ch : st.children) walk(ch, t + 1, w * ch.prob);
    };
    for (const auto& root : initial_nodes(m)) walk(root, 1, root.prob);
    return ev;
}

/// Every deterministic coordination policy up to horizon T, enumerated over the
/// coordinator tree (prescriptions over the support at each node). Each one is
/// a distinct decentralized behavior on reachable histories.
inline std::vector<CoordinationPolicy> enumerate_coordination_policies(const ModelSpec& m, int T,
                                                                       std::size_t guard = 100000) {
    std::vector<int> acts;
    for (int n = 0; n < m.num_agents; ++n) acts.push_back(m.num_actions(n));
    // Policies for the subtree under `node` at stage t.
    std::function<std::vector<CoordinationPolicy>(const CoordNode&, int)> expand = [&](const CoordNode& node, int t) {
        std::vector<int> sizes;
        for (int n = 0; n < m.num_agents; ++n) sizes.push_back(node.law.support_size(n));
        std::vector<CoordinationPolicy> out;
        for (const auto& g : enumerate_rank_prescriptions(sizes, acts, guard)) {
            std::vector<CoordinationPolicy> partial(1);
            partial[0].at[node.h0] = to_prescription(node.law, g);
            if (t < T) {
                auto st = apply_stage(m, node, to_rows(m, g));
                for (const auto& ch : st.children) {
                    auto subs = expand(ch, t + 1);
                    std::vector<CoordinationPolicy> combined;
                    if (partial.size() * subs.size() > guard)
                        throw SizingError("coordination policy count exceeds guard at t=" + std::to_string(t));
                    for (const auto& p : partial)
                        for (const auto& s : subs) {
                            CoordinationPolicy q = p;
                            q.at.insert(s.at.begin(), s.at.end());
                            combined.push_back(std::move(q));
                        }
                    partial = std::move(combined);
                }
            }
            if (out.size() + partial.size() > guard)
                throw SizingError("coordination policy count exceeds guard at t=" + std::to_string(t));
            out.insert(out.end(), partial.begin(), partial.end());
        }
        return out;
    };
    std::vector<CoordinationPolicy> all(1);
    for (const auto& root : initial_nodes(m)) {
        auto subs = expand(root, 1);
        std::vector<CoordinationPolicy> combined;
        for (const auto& p : all)
            for (const auto& s : subs) {
                CoordinationPolicy q = p;
                q.at.insert(s.at.begin(), s.at.end());
                combined.push_back(std::move(q));
            }
        all = std::move(combined);
        if (all.size() > guard) throw SizingError("coordination policy count exceeds guard");
    }
    return all;
}

/// Samples an action from a stochastic prescription row set.
struct Prescription {
    std::vector<std::map<History, Vec>> rule;  // [agent]: history -> distribution
};

inline int apply_prescription(const Prescription& g, int n, const History& hn, std::uint64_t seed) {
    if (n < 0 || n >= static_cast<int>(g.rule.size())) throw DomainError("agent outside prescription");
    auto it = g.rule[n].find(hn);
    if (it == g.rule[n].end()) throw DomainError("history outside prescription domain");
    std::mt19937_64 rng(seed);
    return draw(it->second, rng);
}

inline int apply_prescription(const DeterministicPrescription& g, int n, const History& hn) {
    if (n < 0 || n >= static_cast<int>(g.rule.size())) throw DomainError("agent outside prescription");
    auto it = g.rule[n].find(hn);
    if (it == g.rule[n].end()) throw DomainError("history outside prescription domain");
    return it->second;
}

}  // namespace macp
