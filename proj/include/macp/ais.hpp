#pragma once

#include "compressed.hpp"

namespace macp {

/// Tightest (eps, delta) attributes: each is the definition's constant times
/// the largest measured deviation over positive-probability conditioning events.
struct Certification {
    double eps_p1 = 0, eps_p2 = 0, delta_p = 0;
    double eps_c1 = 0, eps_c2 = 0, delta_c = 0;
    int horizon = 0;
    /// Raw deviations per stage (before the 4/4/8 factors), for diagnostics.
    struct Stage {
        double p1 = 0, p2 = 0, p3 = 0, c1 = 0, c2 = 0, c3 = 0;
    };
    std::vector<Stage> stages;

    bool all_zero(double tol = 0.0) const {
        return eps_p1 <= tol && eps_p2 <= tol && delta_p <= tol && eps_c1 <= tol && eps_c2 <= tol && delta_c <= tol;
    }
};

struct CertifyOptions {
    std::size_t prescription_guard = 100000;
    std::size_t node_guard = 200000;
    std::size_t stage_guard = 1000000;
    /// Visit information states in reverse discovery order; used to cross-check
    /// that the maxima do not depend on traversal.
    bool reverse_order = false;
};

namespace detail {

inline double tv(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return 0.5 * s;
}

struct Predictions {
    Vec c;                 // [a]
    std::vector<Vec> d;    // [a][k]
    std::vector<Vec> obs;  // [a][joint obs]
};

inline Predictions predict(const ModelSpec& m, const std::map<int, double>& state_law) {
    const int A = m.num_joint_actions(), K = m.K();
    Predictions p;
    p.c.assign(A, 0.0);
    p.d.assign(A, Vec(K, 0.0));
    p.obs.assign(A, Vec(m.num_joint_obs(), 0.0));
    for (int a = 0; a < A; ++a)
        for (const auto& [s, q] : state_law) {
            p.c[a] += q * m.cost_c[s][a];
            for (int k = 0; k < K; ++k) p.d[a][k] += q * m.cost_d[s][a][k];
            for (const auto& oc : m.transition[s][a]) p.obs[a][m.encode_obs(oc.o)] += q * oc.p;
        }
    return p;
}

/// Private-compression deviations at one coordinator information state: each
/// joint private history is compared against its AIS group, for every joint action.
inline Certification::Stage private_deviation(const ModelSpec& m, const GeneratorBundle& gen, const CoordNode& node) {
    const auto z = private_values(gen, node);
    std::map<std::vector<int>, std::map<int, double>> by_h;
    std::map<std::vector<AisValue>, std::map<int, double>> by_z;
    std::map<std::vector<int>, std::vector<AisValue>> z_of;
    for (const auto& e : node.law.entries) {
        if (e.p <= 0.0) continue;
        by_h[e.rank][e.s] += e.p;
        auto& zk = z_of[e.rank];
        if (zk.empty())
            for (size_t n = 0; n < e.rank.size(); ++n) zk.push_back(z[n][e.rank[n]]);
        by_z[zk][e.s] += e.p;
    }
    auto normalize = [](std::map<int, double> law) {
        double tot = 0.0;
        for (auto& [s, q] : law) tot += q;
        for (auto& [s, q] : law) q /= tot;
        return law;
    };
    std::map<std::vector<AisValue>, Predictions> zpred;
    for (const auto& [zk, law] : by_z) zpred.emplace(zk, predict(m, normalize(law)));
    Certification::Stage st;
    for (const auto& [h, law] : by_h) {
        const auto ph = predict(m, normalize(law));
        const auto& pz = zpred.at(z_of.at(h));
        for (int a = 0; a < m.num_joint_actions(); ++a) {
            st.p1 = std::max(st.p1, std::abs(ph.c[a] - pz.c[a]));
            for (int k = 0; k < m.K(); ++k) st.p2 = std::max(st.p2, std::abs(ph.d[a][k] - pz.d[a][k]));
            st.p3 = std::max(st.p3, tv(ph.obs[a], pz.obs[a]));
        }
    }
    return st;
}

inline void fold(Certification::Stage& into, const Certification::Stage& s) {
    into.p1 = std::max(into.p1, s.p1);
    into.p2 = std::max(into.p2, s.p2);
    into.p3 = std::max(into.p3, s.p3);
    into.c1 = std::max(into.c1, s.c1);
    into.c2 = std::max(into.c2, s.c2);
    into.c3 = std::max(into.c3, s.c3);
}

}  // namespace detail

/// Exhaustive certification up to stage T. Private attributes are measured over
/// every information state the full-prescription coordinator can reach; common
/// attributes over the compressed coordinator's reference enumeration, with
/// reduced prescriptions ranging over each group's deterministic set.
inline Certification certify(const ModelSpec& m, const GeneratorBundle& gen, int T, CertifyOptions opt = {},
                             const Vec* lambda = nullptr) {
    if (T < 1) throw DomainError("horizon must be >= 1");
    Certification cert;
    cert.horizon = T;
    cert.stages.resize(T);
    const auto acts = detail::action_counts(m);

    // private side: distinct laws reachable under some deterministic prescription sequence
    std::vector<CoordNode> layer = initial_nodes(m);
    std::size_t total = layer.size();
    for (int t = 1; t <= T; ++t) {
        std::vector<int> order(layer.size());
        std::iota(order.begin(), order.end(), 0);
        if (opt.reverse_order) std::reverse(order.begin(), order.end());
        for (int i : order) detail::fold(cert.stages[t - 1], detail::private_deviation(m, gen, layer[i]));
        if (t == T) break;
        std::vector<CoordNode> next;
        std::set<LawKey> seen;
        for (const auto& node : layer)
            for (const auto& g : enumerate_rank_prescriptions(detail::support_sizes(node.law), acts, opt.prescription_guard))
                for (auto& ch : apply_stage(m, node, to_rows(m, g)).children) {
                    // h0 is irrelevant to the law-level deviations of history-only compressors
                    if (!seen.insert(law_key(ch.law, 0.0)).second) continue;
                    next.push_back(std::move(ch));
                    if (++total > opt.node_guard)
                        throw SizingError("certification enumeration exceeds guard at t=" + std::to_string(t + 1));
                }
        layer = std::move(next);
    }

    // common side
    const Vec lam0 = lambda ? *lambda : Vec(m.K(), 0.0);
    CompressedOptions copt{opt.prescription_guard, opt.node_guard, opt.stage_guard};
    const auto en = reference_enumeration(m, gen, lam0, T, copt);
    const int O0 = static_cast<int>(m.common_obs.size());
    for (int t = 1; t <= T; ++t) {
        const auto& nodes = en.layers[t - 1];
        auto& st = cert.stages[t - 1];
        for (const auto& grp : en.groups[t - 1]) {
            double W = 0.0;
            for (int i : grp.members) W += nodes[i].w;
            for (size_t j = 0; j < grp.num_lams(); ++j) {
                double cz = 0.0;
                Vec dz(m.K(), 0.0), oz(O0, 0.0);
                std::vector<Vec> obs(grp.members.size(), Vec(O0, 0.0));
                for (size_t mi = 0; mi < grp.members.size(); ++mi) {
                    const int i = grp.members[mi];
                    const auto& rs = en.stages[t - 1][i][j];
                    const double w = nodes[i].w / W;
                    cz += w * rs.c;
                    for (int k = 0; k < m.K(); ++k) dz[k] += w * rs.d[k];
                    for (size_t c = 0; c < rs.next.size(); ++c) obs[mi][rs.child_o0[c]] += rs.next[c].first;
                    for (int o = 0; o < O0; ++o) oz[o] += w * obs[mi][o];
                }
                std::vector<int> order(grp.members.size());
                std::iota(order.begin(), order.end(), 0);
                if (opt.reverse_order) std::reverse(order.begin(), order.end());
                for (int mi : order) {
                    const auto& rs = en.stages[t - 1][grp.members[mi]][j];
                    st.c1 = std::max(st.c1, std::abs(rs.c - cz));
                    for (int k = 0; k < m.K(); ++k) st.c2 = std::max(st.c2, std::abs(rs.d[k] - dz[k]));
                    st.c3 = std::max(st.c3, detail::tv(obs[mi], oz));
                }
            }
        }
    }
    Certification::Stage worst;
    for (const auto& s : cert.stages) detail::fold(worst, s);
    cert.eps_p1 = 4 * worst.p1;
    cert.eps_p2 = 4 * worst.p2;
    cert.delta_p = 8 * worst.p3;
    cert.eps_c1 = 4 * worst.c1;
    cert.eps_c2 = 4 * worst.c2;
    cert.delta_c = 8 * worst.c3;
    return cert;
}

/// Certifies at the largest depth <= max_depth that fits the guards.
inline Certification certify_deepest(const ModelSpec& m, const GeneratorBundle& gen, int max_depth,
                                     CertifyOptions opt = {}) {
    for (int d = max_depth; d >= 1; --d) {
        try {
            return certify(m, gen, d, opt);
        } catch (const SizingError&) {
            if (d == 1) throw;
        }
    }
    throw SizingError("no certification depth fits");
}

// ---------------------------------------------------------------------------
// Gap bounds

struct GapBounds {
    double M_c = 0, M_p = 0, N_term = 0;
    int t = 1, T = 1;  // T < 0: the infinite-horizon limits
    double alpha = 0.5;
    Vec lambda;
    double c_bar = 0, d_bar = 0;
    Vec kappa;

    double total() const { return M_c + M_p; }
};

inline double kappa_spread(const Vec& kappa) {
    if (kappa.empty()) return 0.0;
    auto [lo, hi] = std::minmax_element(kappa.begin(), kappa.end());
    return 0.5 * (*hi - *lo);
}

/// N(alpha, T); T < 0 gives the limit.
inline double n_term(double alpha, int T, const Vec& lambda, double c_bar, double d_bar, const Vec& kappa) {
    return geometric_weight(alpha, T) * (c_bar + norm1(lambda) * (d_bar + kappa_spread(kappa)));
}

inline GapBounds gap_bounds(const Certification& cert, int t, int T, double alpha, const Vec& lambda, double c_bar,
                            double d_bar, const Vec& kappa) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("discount must lie in (0,1)");
    if (T >= 0 && (t < 1 || t > T)) throw DomainError("gap bounds require 1 <= t <= T");
    GapBounds g{0, 0, 0, t, T, alpha, lambda, c_bar, d_bar, kappa};
    const double L = norm1(lambda);
    g.N_term = n_term(alpha, T, lambda, c_bar, d_bar, kappa);
    // sum_{tau=t+1}^T alpha^{T-tau}, sum_{tau=t}^T alpha^{T-tau}, and the triangular double sum
    double s_c, s_p, s_pp;
    if (T < 0) {
        s_c = 1.0 / (1.0 - alpha);
        s_p = s_c;
        s_pp = 1.0 / ((1.0 - alpha) * (1.0 - alpha));
    } else {
        const int n = T - t;
        s_c = geometric_weight(alpha, n);
        s_p = geometric_weight(alpha, n + 1);
        s_pp = 0.0;
        for (int i = 0; i <= n - 1; ++i)
            for (int j = 0; j <= n - 1 - i; ++j) s_pp += std::pow(alpha, i + j);
    }
    const double ec = cert.eps_c1 + L * cert.eps_c2, ep = cert.eps_p1 + L * cert.eps_p2;
    g.M_c = ec + alpha * s_c * (ec + g.N_term * cert.delta_c);
    g.M_p = ep * s_p + alpha * s_pp * (ep + g.N_term * cert.delta_p);
    return g;
}

inline GapBounds gap_bounds(const Certification& cert, int t, int T, const ModelSpec& m, const Vec& lambda) {
    const auto b = cost_bounds(m);
    return gap_bounds(cert, t, T, m.discount, lambda, b.c_bar, b.d_bar, m.kappa);
}

/// Limits as T -> infinity (independent of t).
inline GapBounds gap_bounds_infinite(const Certification& cert, const ModelSpec& m, const Vec& lambda) {
    return gap_bounds(cert, 1, -1, m, lambda);
}

// ---------------------------------------------------------------------------
// Checks

struct FiniteGapReport {
    double measured_gap = 0.0;  // max over initial common histories
    double min_gap = 0.0;
    double bound = 0.0;
    double realized = 0.0;       // L_T of executing the compressed policy
    double exact_objective = 0.0;
    Certification cert;
    GapBounds bounds;
    bool holds = false;
};

inline FiniteGapReport check_finite_gap(const ModelSpec& m, const GeneratorBundle& gen, const Vec& lambda, int T,
                                        DPOptions dopt = {}, CertifyOptions copt = {}) {
    FiniteGapReport r;
    const auto vt = exact_dp(m, lambda, T, dopt);
    const auto ct = compressed_dp(m, gen, lambda, T, {copt.prescription_guard, copt.node_guard, copt.stage_guard});
    r.measured_gap = -std::numeric_limits<double>::infinity();
    r.min_gap = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < vt.roots.size(); ++i) {
        const double gap = ct.V1(static_cast<int>(i)) - vt.V1(static_cast<int>(i));
        r.measured_gap = std::max(r.measured_gap, gap);
        r.min_gap = std::min(r.min_gap, gap);
    }
    r.exact_objective = vt.objective;
    r.realized = realized_value(m, ct);
    r.cert = certify(m, gen, T, copt, &lambda);
    r.bounds = gap_bounds(r.cert, 1, T, m, lambda);
    r.bound = r.bounds.total();
    r.holds = r.min_gap >= -1e-9 && r.measured_gap <= r.bound + 1e-9;
    return r;
}

struct InfiniteGapReport {
    bool feasible = true;
    std::string message;
    int proxy_horizon = 0;
    int cert_depth = 0;
    double tol = 0.0;
    Vec vhat;                       // V-hat* per initial node
    std::vector<Interval> v_interval;  // certified interval for V_1 per initial node
    GapBounds bounds;
    Certification cert;
    FixedPointResult fixed_point;
    bool holds = false;
};

/// Smallest T' with alpha^T' / (1-alpha) * max(|l_low|, |l_up|) <= target.
inline int proxy_horizon(const ModelSpec& m, const Vec& lambda, double target) {
    const auto [lo, hi] = lambda_cost_range(cost_bounds(m), lambda, m.kappa);
    const double scale = std::max(std::abs(lo), std::abs(hi)) / (1.0 - m.discount);
    int T = 1;
    while (std::pow(m.discount, T) * scale > target && T < 10000) ++T;
    return T;
}

inline InfiniteGapReport check_infinite_gap(const ModelSpec& m, const GeneratorBundle& gen, const Vec& lambda, double tol,
                                            int cert_depth = 6, DPOptions dopt = {}) {
    InfiniteGapReport r;
    r.tol = tol;
    if (dopt.memo_quantum == 0.0) dopt.memo_quantum = 1e-12;
    dopt.keep_q = false;
    const int target = proxy_horizon(m, lambda, tol / 10.0);
    ValueTables vt;
    int T = target;
    for (; T >= 1; --T) {
        try {
            vt = exact_dp(m, lambda, T, dopt);
            break;
        } catch (const SizingError&) {
        }
    }
    r.proxy_horizon = T;
    if (T < target) {
        r.feasible = false;
        r.message = "proxy horizon infeasible; largest feasible T' = " + std::to_string(T);
        return r;
    }
    const auto K = build_kernel(m, gen, lambda, cert_depth);
    r.fixed_point = value_iteration(K, m.discount, tol);
    r.cert = certify_deepest(m, gen, cert_depth);
    r.cert_depth = r.cert.horizon;
    r.bounds = gap_bounds_infinite(r.cert, m, lambda);
    const auto b = cost_bounds(m);
    r.holds = true;
    for (size_t i = 0; i < vt.roots.size(); ++i) {
        const double vh = r.fixed_point.V[K.initial[i]];
        const auto iv = finite_horizon_envelope(vt.V1(static_cast<int>(i)), 1, T, m.discount, lambda, b, m.kappa);
        r.vhat.push_back(vh);
        r.v_interval.push_back(iv);
        if (iv.lo > vh + tol) r.holds = false;
        if (vh - r.bounds.total() > iv.hi + tol) r.holds = false;
    }
    return r;
}

}  // namespace macp
