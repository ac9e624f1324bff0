#pragma once

#include "generators.hpp"
#include "planner.hpp"

namespace macp {

/// Node of the compressed coordinator's reference enumeration. Prescription
/// histories are generated by a coordinator that draws reduced prescriptions
/// uniformly, so `w` is the reference probability of the record. Conditional
/// expectations given a common AIS value average the member nodes by `w`.
/// Only `rec.o0` is kept: history-based common AIS values advance through the
/// recursive update, and belief values need the law and the stage alone.
struct RefNode {
    CoordNode node;
    CoordRecord rec;
    AisValue z0;
    double w = 1.0;
    std::vector<std::vector<AisValue>> zpriv;  // [agent][rank]
};

struct RefGroup {
    AisValue z0;
    std::vector<int> members;
    std::vector<std::vector<AisValue>> domain;  // [agent] sorted private AIS values
    std::shared_ptr<const std::vector<ReducedPrescription>> lams;  // lexicographic order; may be shared

    std::size_t num_lams() const { return lams->size(); }
    const ReducedPrescription& lam(std::size_t j) const { return (*lams)[j]; }
};

/// Stage outcome of applying one reduced prescription at one node.
struct RefStage {
    double l = 0.0;
    double c = 0.0;
    Vec d;
    std::vector<std::pair<double, AisValue>> next;  // (P(o0' | node, lam), z0')
    std::vector<CoordNode> children;
    std::vector<int> child_o0;
};

namespace detail {

inline std::vector<ReducedPrescription> enumerate_reduced(const ModelSpec& m,
                                                          const std::vector<std::vector<AisValue>>& domain,
                                                          std::size_t guard) {
    std::vector<int> sizes;
    for (const auto& d : domain) sizes.push_back(static_cast<int>(d.size()));
    std::vector<ReducedPrescription> out;
    for (const auto& g : enumerate_rank_prescriptions(sizes, action_counts(m), guard)) {
        ReducedPrescription lam(domain.size());
        for (size_t n = 0; n < domain.size(); ++n)
            for (size_t i = 0; i < domain[n].size(); ++i) lam[n].push_back({domain[n][i], g[n][i]});
        out.push_back(std::move(lam));
    }
    return out;
}

inline RankActions ranks_from_reduced(const RefNode& rn, const ReducedPrescription& lam) {
    RankActions g(rn.zpriv.size());
    for (size_t n = 0; n < rn.zpriv.size(); ++n)
        for (const auto& z : rn.zpriv[n]) g[n].push_back(reduced_action(lam, static_cast<int>(n), z));
    return g;
}

inline std::vector<std::vector<AisValue>> private_values(const GeneratorBundle& gen, const CoordNode& node) {
    std::vector<std::vector<AisValue>> z(node.law.support.size());
    for (size_t n = 0; n < z.size(); ++n)
        for (const auto& h : node.law.support[n]) z[n].push_back(gen.private_map(node.h0, h));
    return z;
}

inline AisValue child_common(const GeneratorBundle& gen, const RefNode& parent, const ReducedPrescription& lam,
                             const CoordRecord& rec, const CoordNode& child) {
    if (gen.kind == GeneratorKind::Belief) return gen.common_map(rec, &child.law);
    return gen.common_update(&parent.z0, &lam, child.h0.back());
}

inline RefStage ref_stage(const ModelSpec& m, const GeneratorBundle& gen, const Vec& lambda, const RefNode& rn,
                          const ReducedPrescription& lam, bool children) {
    RefStage rs;
    auto st = apply_stage(m, rn.node, to_rows(m, ranks_from_reduced(rn, lam)), children);
    rs.c = st.c;
    rs.d = st.d;
    rs.l = stage_lagrangian(m, lambda, st.c, st.d);
    for (auto& ch : st.children) {
        CoordRecord rec = rn.rec;
        rec.o0.push_back(ch.h0.back());
        rs.next.push_back({ch.prob, child_common(gen, rn, lam, rec, ch)});
        rs.child_o0.push_back(ch.h0.back());
        rs.children.push_back(std::move(ch));
    }
    return rs;
}

inline RefNode root_ref(const GeneratorBundle& gen, const CoordNode& root) {
    RefNode rn;
    rn.node = root;
    rn.rec.o0 = root.h0;
    rn.w = root.prob;
    rn.z0 = gen.kind == GeneratorKind::Belief ? gen.common_map(rn.rec, &root.law) : gen.common_update(nullptr, nullptr, root.h0[0]);
    rn.zpriv = private_values(gen, root);
    return rn;
}

}  // namespace detail

struct CompressedOptions {
    std::size_t prescription_guard = 100000;
    std::size_t node_guard = 200000;
    std::size_t stage_guard = 1000000;  // (node, reduced prescription) evaluations
};

/// Reference enumeration of the compressed coordinator up to stage T.
struct RefEnumeration {
    std::vector<std::vector<RefNode>> layers;         // [t-1]
    std::vector<std::vector<RefGroup>> groups;        // [t-1]
    std::vector<std::map<AisValue, int>> group_of;    // [t-1]: z0 -> group
    std::vector<std::vector<std::vector<RefStage>>> stages;  // [t-1][node][lam index within group]
};

namespace detail {
inline double prescription_count(const ModelSpec& m, const std::vector<std::vector<AisValue>>& domain) {
    double c = 1.0;
    for (size_t n = 0; n < domain.size(); ++n) c *= std::pow(m.num_actions(static_cast<int>(n)), domain[n].size());
    return c;
}

/// Groups layer t by common AIS value. `work` accumulates (node, prescription)
/// pairs and is checked before any prescription list is built.
inline void build_groups(const ModelSpec& m, RefEnumeration& en, int t, const CompressedOptions& opt, std::size_t& work,
                         const std::vector<std::vector<AisValue>>* fixed_domain = nullptr) {
    auto& nodes = en.layers[t - 1];
    auto& groups = en.groups[t - 1];
    auto& index = en.group_of[t - 1];
    std::vector<std::vector<std::set<AisValue>>> dom;
    for (int i = 0; i < static_cast<int>(nodes.size()); ++i) {
        auto [it, fresh] = index.emplace(nodes[i].z0, static_cast<int>(groups.size()));
        if (fresh) {
            groups.push_back({nodes[i].z0, {}, {}, {}});
            dom.emplace_back(m.num_agents);
        }
        groups[it->second].members.push_back(i);
        for (int n = 0; n < m.num_agents; ++n)
            for (const auto& z : nodes[i].zpriv[n]) dom[it->second][n].insert(z);
    }
    double pending = static_cast<double>(work);
    for (size_t g = 0; g < groups.size(); ++g) {
        if (fixed_domain) groups[g].domain = *fixed_domain;
        else
            for (int n = 0; n < m.num_agents; ++n) groups[g].domain.emplace_back(dom[g][n].begin(), dom[g][n].end());
        const double count = prescription_count(m, groups[g].domain);
        if (count > static_cast<double>(opt.prescription_guard))
            throw SizingError("reduced prescription count " + std::to_string(static_cast<long long>(count)) +
                              " exceeds guard at t=" + std::to_string(t));
        pending += count * static_cast<double>(groups[g].members.size());
        if (pending > static_cast<double>(opt.stage_guard))
            throw SizingError("compressed stage evaluations exceed guard at t=" + std::to_string(t));
    }
    work = static_cast<std::size_t>(pending);
    std::shared_ptr<const std::vector<ReducedPrescription>> shared;
    for (auto& grp : groups) {
        if (fixed_domain) {
            if (!shared)
                shared = std::make_shared<const std::vector<ReducedPrescription>>(
                    enumerate_reduced(m, grp.domain, opt.prescription_guard));
            grp.lams = shared;
        } else {
            grp.lams = std::make_shared<const std::vector<ReducedPrescription>>(
                enumerate_reduced(m, grp.domain, opt.prescription_guard));
        }
    }
}
}  // namespace detail

/// Forward reference enumeration. With `expand_last`, stage results (without
/// child laws) are also computed at stage T.
inline RefEnumeration reference_enumeration(const ModelSpec& m, const GeneratorBundle& gen, const Vec& lambda, int T,
                                            CompressedOptions opt = {}, bool expand_last = true,
                                            const std::vector<std::vector<AisValue>>* fixed_domain = nullptr) {
    RefEnumeration en;
    en.layers.resize(T);
    en.groups.resize(T);
    en.group_of.resize(T);
    en.stages.resize(T);
    for (const auto& root : initial_nodes(m)) en.layers[0].push_back(detail::root_ref(gen, root));
    std::size_t total = en.layers[0].size(), work = 0;
    for (int t = 1; t <= T; ++t) {
        detail::build_groups(m, en, t, opt, work, fixed_domain);
        if (t == T && !expand_last) break;
        auto& nodes = en.layers[t - 1];
        en.stages[t - 1].resize(nodes.size());
        for (const auto& grp : en.groups[t - 1]) {
            const double share = 1.0 / static_cast<double>(grp.num_lams());
            for (int i : grp.members) {
                auto& row = en.stages[t - 1][i];
                for (const auto& lam : *grp.lams) {
                    RefStage rs = detail::ref_stage(m, gen, lambda, nodes[i], lam, true);
                    if (t < T) {
                        for (size_t c = 0; c < rs.children.size(); ++c) {
                            RefNode ch;
                            ch.rec = nodes[i].rec;
                            ch.rec.o0.push_back(rs.child_o0[c]);
                            ch.z0 = rs.next[c].second;
                            ch.w = nodes[i].w * share * rs.next[c].first;
                            ch.node = std::move(rs.children[c]);
                            ch.zpriv = detail::private_values(gen, ch.node);
                            en.layers[t].push_back(std::move(ch));
                            if (++total > opt.node_guard)
                                throw SizingError("compressed enumeration exceeds guard at t=" + std::to_string(t + 1));
                        }
                    }
                    rs.children.clear();
                    row.push_back(std::move(rs));
                }
            }
        }
    }
    return en;
}

struct CompressedEntry {
    double V = 0.0;
    int best_index = 0;
    ReducedPrescription best;
    Vec Q;
};

/// Values of the compressed-history dynamic program.
struct CompressedTables {
    Vec lambda;
    int T = 0;
    GeneratorBundle gen;
    std::vector<std::map<AisValue, CompressedEntry>> layers;  // [t-1]: z0 -> entry
    struct Root {
        History h0;
        double prob;
        AisValue z0;
    };
    std::vector<Root> roots;
    double objective = 0.0;

    double V1(int root) const { return layers[0].at(roots[root].z0).V; }
};

/// Same recursion as exact_dp over (common AIS, reduced prescription).
inline CompressedTables compressed_dp(const ModelSpec& m, const GeneratorBundle& gen, const Vec& lambda, int T,
                                      CompressedOptions opt = {}) {
    if (T < 1) throw DomainError("horizon must be >= 1");
    auto en = reference_enumeration(m, gen, lambda, T, opt);
    CompressedTables ct;
    ct.lambda = lambda;
    ct.T = T;
    ct.gen = gen;
    ct.layers.resize(T);
    for (int t = T; t >= 1; --t) {
        const auto& nodes = en.layers[t - 1];
        for (const auto& grp : en.groups[t - 1]) {
            double W = 0.0;
            for (int i : grp.members) W += nodes[i].w;
            CompressedEntry e;
            e.V = std::numeric_limits<double>::infinity();
            for (int j = 0; j < static_cast<int>(grp.num_lams()); ++j) {
                double q = 0.0;
                for (int i : grp.members) {
                    const auto& rs = en.stages[t - 1][i][j];
                    double qi = rs.l;
                    if (t < T) {
                        double future = 0.0;
                        for (const auto& [p, z] : rs.next) future += p * ct.layers[t].at(z).V;
                        qi += m.discount * future;
                    }
                    q += grp.members.size() == 1 ? qi : (nodes[i].w / W) * qi;
                }
                e.Q.push_back(q);
                if (q < e.V) {
                    e.V = q;
                    e.best_index = j;
                    e.best = grp.lam(j);
                }
            }
            ct.layers[t - 1].emplace(grp.z0, std::move(e));
        }
    }
    for (const auto& rn : en.layers[0]) {
        ct.roots.push_back({rn.node.h0, rn.node.prob, rn.z0});
        ct.objective += rn.node.prob * ct.layers[0].at(rn.z0).V;
    }
    return ct;
}

/// L_T (planner units) of actually executing the compressed policy v-hat*.
inline double realized_value(const ModelSpec& m, const CompressedTables& ct) {
    double total = 0.0;
    std::function<void(const RefNode&, int, double)> walk = [&](const RefNode& rn, int t, double w) {
        const auto& e = ct.layers[t - 1].at(rn.z0);
        auto rs = detail::ref_stage(m, ct.gen, ct.lambda, rn, e.best, t < ct.T);
        total += w * std::pow(m.discount, t - 1) * rs.l;
        if (t == ct.T) return;
        for (size_t c = 0; c < rs.children.size(); ++c) {
            RefNode ch;
            ch.rec = rn.rec;
            ch.rec.o0.push_back(rs.child_o0[c]);
            ch.z0 = rs.next[c].second;
            ch.node = rs.children[c];
            ch.zpriv = detail::private_values(ct.gen, ch.node);
            walk(ch, t + 1, w * rs.next[c].first);
        }
    };
    for (const auto& root : initial_nodes(m)) walk(detail::root_ref(ct.gen, root), 1, root.prob);
    return total;
}

// ---------------------------------------------------------------------------
// Infinite horizon: approximate Bellman operator on a finite common-AIS domain

/// Time-invariant compressed model: for each common AIS value and reduced
/// prescription, the expected l^(lambda) and the law of the next common AIS.
struct AisKernel {
    std::vector<AisValue> values;                          // common AIS domain
    std::map<AisValue, int> index;
    std::vector<std::vector<double>> cost;                 // [z][xi]
    std::vector<std::vector<std::vector<std::pair<int, double>>>> next;  // [z][xi] -> (z', p)
    std::vector<std::shared_ptr<const std::vector<ReducedPrescription>>> xis;  // [z]
    int depth = 0;                                         // enumeration depth used
    std::vector<int> initial;                              // z index per initial node
    Vec initial_prob;
};

/// Private AIS values over reachable private histories up to stage T.
inline std::vector<std::vector<AisValue>> private_range(const ModelSpec& m, const GeneratorBundle& gen, int T,
                                                        EnumerationOptions opt = {}) {
    auto law = forward_law(m, uniform_policy(m), T, opt);
    std::vector<std::set<AisValue>> sets(m.num_agents);
    for (const auto& layer : law)
        for (const auto& e : layer)
            for (int n = 0; n < m.num_agents; ++n) sets[n].insert(gen.private_map(e.h0, e.hp[n]));
    std::vector<std::vector<AisValue>> out;
    for (auto& s : sets) out.emplace_back(s.begin(), s.end());
    return out;
}

/// Builds the kernel from the reference enumeration pooled over stages
/// 1..depth; the largest depth <= max_depth that fits the guards is used.
inline AisKernel build_kernel(const ModelSpec& m, const GeneratorBundle& gen, const Vec& lambda, int max_depth = 6,
                              CompressedOptions opt = {}) {
    if (!gen.time_invariant) throw DomainError("generator " + gen.name() + " is not time-invariant");
    RefEnumeration en;
    int depth = max_depth;
    for (; depth >= 1; --depth) {
        try {
            // the domain must cover every private value met up to the enumeration depth
            const auto domain = private_range(m, gen, depth);
            en = reference_enumeration(m, gen, lambda, depth, opt, true, &domain);
            break;
        } catch (const SizingError&) {
            if (depth == 1) throw;
        }
    }
    AisKernel K;
    K.depth = depth;
    struct Acc {
        double W = 0.0;
        Vec cost;
        std::vector<std::map<AisValue, double>> next;
    };
    std::map<AisValue, Acc> acc;
    std::map<AisValue, std::shared_ptr<const std::vector<ReducedPrescription>>> lams;
    for (int t = 1; t <= depth; ++t) {
        const auto& nodes = en.layers[t - 1];
        for (const auto& grp : en.groups[t - 1]) {
            auto& a = acc[grp.z0];
            lams[grp.z0] = grp.lams;
            if (a.cost.empty()) {
                a.cost.assign(grp.num_lams(), 0.0);
                a.next.resize(grp.num_lams());
            }
            for (int i : grp.members) {
                a.W += nodes[i].w;
                for (size_t j = 0; j < grp.num_lams(); ++j) {
                    const auto& rs = en.stages[t - 1][i][j];
                    a.cost[j] += nodes[i].w * rs.l;
                    for (const auto& [p, z] : rs.next) a.next[j][z] += nodes[i].w * p;
                }
            }
        }
    }
    for (const auto& [z, a] : acc) {
        K.index[z] = static_cast<int>(K.values.size());
        K.values.push_back(z);
    }
    for (const auto& [z, a] : acc) {
        Vec cost;
        std::vector<std::vector<std::pair<int, double>>> nx;
        for (size_t j = 0; j < a.cost.size(); ++j) {
            cost.push_back(a.cost[j] / a.W);
            std::vector<std::pair<int, double>> row;
            for (const auto& [z2, p] : a.next[j]) {
                auto it = K.index.find(z2);
                if (it == K.index.end())
                    throw DomainError("common AIS range not closed within depth " + std::to_string(depth));
                row.push_back({it->second, p / a.W});
            }
            nx.push_back(std::move(row));
        }
        K.cost.push_back(std::move(cost));
        K.next.push_back(std::move(nx));
        K.xis.push_back(lams[z]);
    }
    for (const auto& rn : en.layers[0]) {
        K.initial.push_back(K.index.at(rn.z0));
        K.initial_prob.push_back(rn.node.prob);
    }
    return K;
}

/// [B-hat V](z) = min over xi of cost + alpha sum p(z'|z,xi) V(z').
inline Vec bellman(const AisKernel& K, const Vec& V, double alpha, std::vector<int>* argmin = nullptr) {
    Vec out(K.values.size());
    if (argmin) argmin->assign(K.values.size(), 0);
    for (size_t z = 0; z < K.values.size(); ++z) {
        double best = std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < K.cost[z].size(); ++j) {
            double q = K.cost[z][j];
            double f = 0.0;
            for (const auto& [z2, p] : K.next[z][j]) f += p * V[z2];
            q += alpha * f;
            if (q < best) {
                best = q;
                if (argmin) (*argmin)[z] = static_cast<int>(j);
            }
        }
        out[z] = best;
    }
    return out;
}

struct FixedPointResult {
    Vec V;                 // over K.values
    std::vector<int> policy;
    int iterations = 0;
    double residual = 0.0;
    double initial_value = 0.0;  // sum over initial nodes of P * V(z0_1)
};

inline double sup_norm_diff(const Vec& a, const Vec& b) {
    double r = 0.0;
    for (size_t i = 0; i < a.size(); ++i) r = std::max(r, std::abs(a[i] - b[i]));
    return r;
}

/// Iterates from 0; stops once the successive difference is <= tol (1-alpha)/alpha,
/// which bounds the distance to the fixed point by tol.
inline FixedPointResult value_iteration(const AisKernel& K, double alpha, double tol, int max_iters = 100000) {
    FixedPointResult r;
    r.V.assign(K.values.size(), 0.0);
    const double stop = tol * (1.0 - alpha) / alpha;
    double prev_res = std::numeric_limits<double>::infinity();
    int growing = 0;
    for (int i = 1; i <= max_iters; ++i) {
        Vec nv = bellman(K, r.V, alpha, &r.policy);
        r.residual = sup_norm_diff(nv, r.V);
        r.V = std::move(nv);
        r.iterations = i;
        if (!std::isfinite(r.residual)) throw NumericError("value iteration produced non-finite values");
        growing = r.residual > prev_res ? growing + 1 : 0;
        if (growing >= 10) throw NumericError("value iteration residual grew for 10 sweeps");
        prev_res = r.residual;
        if (r.residual <= stop) break;
    }
    for (size_t i = 0; i < K.initial.size(); ++i) r.initial_value += K.initial_prob[i] * r.V[K.initial[i]];
    return r;
}

inline FixedPointResult value_iteration(const ModelSpec& m, const GeneratorBundle& gen, const Vec& lambda, double tol,
                                        int max_depth = 6) {
    return value_iteration(build_kernel(m, gen, lambda, max_depth), m.discount, tol);
}

}  // namespace macp
