#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace macp {

using Vec = std::vector<double>;
/// Sequence of symbol indices. Common histories hold o0_1..o0_t; private
/// histories hold o^n_1, a^n_1, o^n_2, ..., o^n_t.
using History = std::vector<int>;

struct SizingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// One branch of the transition or initial law. `o` is the joint observation
/// (o0, o1, ..., oN).
struct Outcome {
    int s = 0;
    std::vector<int> o;
    double p = 0.0;
    bool operator==(const Outcome&) const = default;
};

/// Stationary open-loop profile with Slater margin zeta.
struct SlaterPair {
    std::vector<int> actions;
    double zeta = 0.0;
    bool operator==(const SlaterPair&) const = default;
};

struct ModelSpec {
    std::string name;
    int num_agents = 0;
    std::vector<std::string> states;
    std::vector<std::string> common_obs;
    std::vector<std::vector<std::string>> private_obs;
    std::vector<std::vector<std::string>> actions;
    std::vector<std::vector<std::vector<Outcome>>> transition;  // [s][joint action]
    std::vector<std::vector<double>> cost_c;                    // [s][joint action]
    std::vector<std::vector<Vec>> cost_d;                       // [s][joint action][k]
    std::vector<Outcome> initial;
    double discount = 0.5;
    Vec kappa;
    std::optional<SlaterPair> slater;

    bool operator==(const ModelSpec&) const = default;

    int K() const { return static_cast<int>(kappa.size()); }
    int num_states() const { return static_cast<int>(states.size()); }
    int num_actions(int n) const { return static_cast<int>(actions[n].size()); }
    int num_priv_obs(int n) const { return static_cast<int>(private_obs[n].size()); }

    int num_joint_actions() const {
        int m = 1;
        for (const auto& a : actions) m *= static_cast<int>(a.size());
        return m;
    }
    int num_joint_obs() const {
        int m = static_cast<int>(common_obs.size());
        for (const auto& o : private_obs) m *= static_cast<int>(o.size());
        return m;
    }

    /// Agent 0 is the most significant digit.
    int encode_action(const std::vector<int>& a) const {
        int idx = 0;
        for (int n = 0; n < num_agents; ++n) idx = idx * num_actions(n) + a[n];
        return idx;
    }
    std::vector<int> decode_action(int idx) const {
        std::vector<int> a(num_agents);
        for (int n = num_agents - 1; n >= 0; --n) {
            a[n] = idx % num_actions(n);
            idx /= num_actions(n);
        }
        return a;
    }
    int encode_obs(const std::vector<int>& o) const {
        int idx = o[0];
        for (int n = 0; n < num_agents; ++n) idx = idx * num_priv_obs(n) + o[n + 1];
        return idx;
    }
    std::vector<int> decode_obs(int idx) const {
        std::vector<int> o(num_agents + 1);
        for (int n = num_agents - 1; n >= 0; --n) {
            o[n + 1] = idx % num_priv_obs(n);
            idx /= num_priv_obs(n);
        }
        o[0] = idx;
        return o;
    }
};

// ---------------------------------------------------------------------------
// Validation

enum class Severity { Error, Warning };

struct Violation {
    Severity severity = Severity::Error;
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool ok() const {
        for (const auto& v : violations)
            if (v.severity == Severity::Error) return false;
        return true;
    }
};

namespace detail {
inline std::string fmt_num(double x) {
    std::ostringstream os;
    os.precision(12);
    os << x;
    return os.str();
}
inline std::string action_label(const ModelSpec& m, int ja) {
    auto a = m.decode_action(ja);
    std::string s = "(";
    for (int n = 0; n < m.num_agents; ++n) {
        if (n) s += ",";
        s += m.actions[n][a[n]];
    }
    return s + ")";
}
}  // namespace detail

/// Never throws; collects every violation found.
inline ValidationReport validate(const ModelSpec& m) {
    ValidationReport r;
    auto err = [&](std::string msg) { r.violations.push_back({Severity::Error, std::move(msg)}); };
    constexpr double tol = 1e-12;

    if (m.num_agents < 1) {
        err("num_agents must be >= 1");
        return r;
    }
    if (static_cast<int>(m.actions.size()) != m.num_agents ||
        static_cast<int>(m.private_obs.size()) != m.num_agents) {
        err("actions/private_obs must have one list per agent");
        return r;
    }
    if (m.states.empty()) err("state set is empty");
    if (m.common_obs.empty()) err("common observation set is empty");
    for (int n = 0; n < m.num_agents; ++n) {
        if (m.actions[n].empty()) err("agent " + std::to_string(n) + " has no actions");
        if (m.private_obs[n].empty()) err("agent " + std::to_string(n) + " has no private observations");
    }
    if (!r.ok()) return r;
    if (!(m.discount > 0.0 && m.discount < 1.0)) err("discount not in (0,1)");
    if (m.kappa.empty()) err("kappa is empty (K must be >= 1)");

    const int S = m.num_states(), A = m.num_joint_actions();
    auto check_outcome = [&](const Outcome& oc, const std::string& where) {
        bool good = oc.s >= 0 && oc.s < S && static_cast<int>(oc.o.size()) == m.num_agents + 1;
        if (good) {
            good = oc.o[0] >= 0 && oc.o[0] < static_cast<int>(m.common_obs.size());
            for (int n = 0; good && n < m.num_agents; ++n)
                good = oc.o[n + 1] >= 0 && oc.o[n + 1] < m.num_priv_obs(n);
        }
        if (!good) err(where + " has an out-of-range outcome");
        if (!(oc.p >= 0.0) || !std::isfinite(oc.p))
            err(where + " has negative probability " + detail::fmt_num(oc.p));
    };

    double init_sum = 0.0;
    for (const auto& oc : m.initial) {
        check_outcome(oc, "initial");
        init_sum += oc.p;
    }
    if (std::abs(init_sum - 1.0) > tol) err("initial sums to " + detail::fmt_num(init_sum));

    if (static_cast<int>(m.transition.size()) != S || static_cast<int>(m.cost_c.size()) != S ||
        static_cast<int>(m.cost_d.size()) != S) {
        err("transition/cost tables must have one row per state");
        return r;
    }
    for (int s = 0; s < S; ++s) {
        if (static_cast<int>(m.transition[s].size()) != A || static_cast<int>(m.cost_c[s].size()) != A ||
            static_cast<int>(m.cost_d[s].size()) != A) {
            err("tables for state " + m.states[s] + " must cover all joint actions");
            continue;
        }
        for (int a = 0; a < A; ++a) {
            const std::string where = "row (" + m.states[s] + "," + detail::action_label(m, a) + ")";
            double sum = 0.0;
            for (const auto& oc : m.transition[s][a]) {
                check_outcome(oc, where);
                sum += oc.p;
            }
            if (m.transition[s][a].empty()) err("missing transition " + where);
            else if (std::abs(sum - 1.0) > tol) err(where + " sums to " + detail::fmt_num(sum));
            if (!std::isfinite(m.cost_c[s][a])) err("missing or non-finite cost_c at " + where);
            const auto& d = m.cost_d[s][a];
            if (static_cast<int>(d.size()) != m.K())
                err("cost_d at " + where + " has length " + std::to_string(d.size()) + ", kappa has " +
                    std::to_string(m.K()));
            for (double x : d)
                if (!std::isfinite(x)) err("non-finite cost_d at " + where);
        }
    }
    if (m.slater) {
        if (static_cast<int>(m.slater->actions.size()) != m.num_agents) err("slater policy_ref has wrong arity");
        else
            for (int n = 0; n < m.num_agents; ++n)
                if (m.slater->actions[n] < 0 || m.slater->actions[n] >= m.num_actions(n))
                    err("slater policy_ref action out of range");
        if (!(m.slater->zeta > 0.0)) err("slater zeta must be > 0");
    }
    return r;
}

inline void require_valid(const ModelSpec& m) {
    auto r = validate(m);
    if (!r.ok()) throw ValidationError(r.violations.front().message);
}

// ---------------------------------------------------------------------------
// Cost bounds

struct CostBounds {
    double c_low = 0, c_up = 0;
    Vec d_low, d_up;
    double c_bar = 0;  // max(|c_low|, |c_up|)
    double d_bar = 0;  // max over k of max(|d_low_k|, |d_up_k|)
};

inline CostBounds cost_bounds(const ModelSpec& m) {
    CostBounds b;
    const int K = m.K();
    b.c_low = std::numeric_limits<double>::infinity();
    b.c_up = -b.c_low;
    b.d_low.assign(K, b.c_low);
    b.d_up.assign(K, -b.c_low);
    for (int s = 0; s < m.num_states(); ++s)
        for (int a = 0; a < m.num_joint_actions(); ++a) {
            b.c_low = std::min(b.c_low, m.cost_c[s][a]);
            b.c_up = std::max(b.c_up, m.cost_c[s][a]);
            for (int k = 0; k < K; ++k) {
                b.d_low[k] = std::min(b.d_low[k], m.cost_d[s][a][k]);
                b.d_up[k] = std::max(b.d_up[k], m.cost_d[s][a][k]);
            }
        }
    b.c_bar = std::max(std::abs(b.c_low), std::abs(b.c_up));
    for (int k = 0; k < K; ++k) b.d_bar = std::max({b.d_bar, std::abs(b.d_low[k]), std::abs(b.d_up[k])});
    return b;
}

inline double dot(const Vec& x, const Vec& y) {
    if (x.size() != y.size()) throw DomainError("dimension mismatch");
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

inline double norm1(const Vec& x) {
    double s = 0.0;
    for (double v : x) s += std::abs(v);
    return s;
}

// ---------------------------------------------------------------------------
// Policies

/// Per agent, (common history, private history) -> distribution over A^n.
/// The stage is the common history's length.
struct BehavioralPolicy {
    std::vector<std::function<Vec(const History& h0, const History& hn)>> agent;

    Vec row(int n, const History& h0, const History& hn) const { return agent[n](h0, hn); }
};

inline BehavioralPolicy uniform_policy(const ModelSpec& m) {
    BehavioralPolicy u;
    for (int n = 0; n < m.num_agents; ++n) {
        Vec row(m.num_actions(n), 1.0 / m.num_actions(n));
        u.agent.push_back([row](const History&, const History&) { return row; });
    }
    return u;
}

/// Same action distribution at every history.
inline BehavioralPolicy stationary_policy(const std::vector<Vec>& rows) {
    BehavioralPolicy u;
    for (const auto& r : rows) u.agent.push_back([r](const History&, const History&) { return r; });
    return u;
}

inline BehavioralPolicy constant_action_policy(const ModelSpec& m, const std::vector<int>& a) {
    std::vector<Vec> rows;
    for (int n = 0; n < m.num_agents; ++n) {
        Vec r(m.num_actions(n), 0.0);
        r[a[n]] = 1.0;
        rows.push_back(r);
    }
    return stationary_policy(rows);
}

/// Agent n's own past actions sit at odd positions of its private history.
inline std::vector<int> own_actions(const History& hn) {
    std::vector<int> a;
    for (size_t i = 1; i < hn.size(); i += 2) a.push_back(hn[i]);
    return a;
}

/// Prefix of a private history up to stage t (1-based).
inline History private_prefix(const History& hn, int t) { return History(hn.begin(), hn.begin() + (2 * t - 1)); }

// ---------------------------------------------------------------------------
// Exact forward enumeration

/// Joint law of hidden state, histories and joint action at one stage.
struct LawEntry {
    int s;
    History h0;
    std::vector<History> hp;
    int a;  // joint action index
    double p;
};

struct EnumerationOptions {
    std::size_t guard = 1000000;  // total (history, action) pairs across stages
};

/// Per stage t (index t-1), every positive-probability (s, h, a) with its probability.
inline std::vector<std::vector<LawEntry>> forward_law(const ModelSpec& m, const BehavioralPolicy& u, int T,
                                                      EnumerationOptions opt = {}) {
    if (T < 1) throw DomainError("horizon must be >= 1");
    using Key = std::tuple<int, History, std::vector<History>>;
    std::map<Key, double> particles;
    for (const auto& oc : m.initial) {
        if (oc.p <= 0.0) continue;
        std::vector<History> hp(m.num_agents);
        for (int n = 0; n < m.num_agents; ++n) hp[n] = {oc.o[n + 1]};
        particles[{oc.s, History{oc.o[0]}, hp}] += oc.p;
    }
    std::vector<std::vector<LawEntry>> out;
    std::size_t total = 0;
    const int A = m.num_joint_actions();
    for (int t = 1; t <= T; ++t) {
        std::vector<LawEntry> layer;
        for (const auto& [key, p] : particles) {
            const auto& [s, h0, hp] = key;
            std::vector<Vec> rows(m.num_agents);
            for (int n = 0; n < m.num_agents; ++n) rows[n] = u.row(n, h0, hp[n]);
            for (int a = 0; a < A; ++a) {
                auto av = m.decode_action(a);
                double q = p;
                for (int n = 0; n < m.num_agents && q > 0.0; ++n) q *= rows[n][av[n]];
                if (q > 0.0) layer.push_back({s, h0, hp, a, q});
            }
        }
        total += layer.size();
        if (total > opt.guard)
            throw SizingError("history enumeration exceeds guard " + std::to_string(opt.guard) + " at t=" +
                              std::to_string(t));
        if (t < T) {
            std::map<Key, double> next;
            for (const auto& e : layer) {
                auto av = m.decode_action(e.a);
                for (const auto& oc : m.transition[e.s][e.a]) {
                    if (oc.p <= 0.0) continue;
                    History h0 = e.h0;
                    h0.push_back(oc.o[0]);
                    std::vector<History> hp = e.hp;
                    for (int n = 0; n < m.num_agents; ++n) {
                        hp[n].push_back(av[n]);
                        hp[n].push_back(oc.o[n + 1]);
                    }
                    next[{oc.s, std::move(h0), std::move(hp)}] += e.p * oc.p;
                }
            }
            particles = std::move(next);
        }
        out.push_back(std::move(layer));
    }
    return out;
}

/// Occupation measure per stage: (h0, private histories, joint action) -> probability, state marginalized.
using OccupationMeasure = std::vector<std::map<std::tuple<History, std::vector<History>, int>, double>>;

inline OccupationMeasure enumerate_histories(const ModelSpec& m, const BehavioralPolicy& u, int T,
                                             EnumerationOptions opt = {}) {
    auto law = forward_law(m, u, T, opt);
    OccupationMeasure occ(T);
    for (int t = 0; t < T; ++t)
        for (const auto& e : law[t]) occ[t][{e.h0, e.hp, e.a}] += e.p;
    return occ;
}

struct Evaluation {
    double C = 0.0;
    Vec D;
};

inline Evaluation evaluate_law(const ModelSpec& m, const std::vector<std::vector<LawEntry>>& law) {
    Evaluation ev;
    ev.D.assign(m.K(), 0.0);
    double w = 1.0;
    for (const auto& layer : law) {
        for (const auto& e : layer) {
            ev.C += w * e.p * m.cost_c[e.s][e.a];
            for (int k = 0; k < m.K(); ++k) ev.D[k] += w * e.p * m.cost_d[e.s][e.a][k];
        }
        w *= m.discount;
    }
    return ev;
}

/// C_T and D_T by exact summation.
inline Evaluation exact_evaluate(const ModelSpec& m, const BehavioralPolicy& u, int T, EnumerationOptions opt = {}) {
    return evaluate_law(m, forward_law(m, u, T, opt));
}

/// Infinite-horizon (C, D) of a constant joint action; the state process is a
/// Markov chain so the values solve (I - alpha P) v = cost.
inline Evaluation constant_action_value(const ModelSpec& m, const std::vector<int>& actions) {
    const int S = m.num_states(), K = m.K();
    const int a = m.encode_action(actions);
    std::vector<Vec> M(S, Vec(S, 0.0));
    for (int s = 0; s < S; ++s) {
        M[s][s] += 1.0;
        for (const auto& oc : m.transition[s][a]) M[s][oc.s] -= m.discount * oc.p;
    }
    // Right-hand sides: column 0 is c, columns 1..K are d_k.
    std::vector<Vec> B(S, Vec(K + 1));
    for (int s = 0; s < S; ++s) {
        B[s][0] = m.cost_c[s][a];
        for (int k = 0; k < K; ++k) B[s][k + 1] = m.cost_d[s][a][k];
    }
    for (int col = 0; col < S; ++col) {
        int piv = col;
        for (int r = col + 1; r < S; ++r)
            if (std::abs(M[r][col]) > std::abs(M[piv][col])) piv = r;
        std::swap(M[col], M[piv]);
        std::swap(B[col], B[piv]);
        for (int r = 0; r < S; ++r) {
            if (r == col) continue;
            double f = M[r][col] / M[col][col];
            for (int c = col; c < S; ++c) M[r][c] -= f * M[col][c];
            for (int c = 0; c <= K; ++c) B[r][c] -= f * B[col][c];
        }
    }
    Evaluation ev;
    ev.D.assign(K, 0.0);
    for (const auto& oc : m.initial) {
        const double scale = oc.p / M[oc.s][oc.s];
        ev.C += scale * B[oc.s][0];
        for (int k = 0; k < K; ++k) ev.D[k] += scale * B[oc.s][k + 1];
    }
    return ev;
}

// ---------------------------------------------------------------------------
// Sampling

/// Uniform double in [0,1) from a 64-bit engine, independent of the standard
/// library's distribution implementations.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline int draw(const Vec& p, std::mt19937_64& rng) {
    double u = uniform01(rng), acc = 0.0;
    int last = -1;
    for (int i = 0; i < static_cast<int>(p.size()); ++i) {
        if (p[i] <= 0.0) continue;
        acc += p[i];
        last = i;
        if (u < acc) return i;
    }
    if (last < 0) throw DomainError("draw from an empty distribution");
    return last;
}

struct TrajectoryStep {
    std::vector<int> o;  // joint observation at t
    std::vector<int> a;  // joint action
    double c = 0.0;
    Vec d;
    int s = 0;  // hidden state, for debugging only
};

struct RawTrajectory {
    std::vector<TrajectoryStep> steps;
};

/// Order per stage: observe, act on (H0, Hn), incur costs, transition.
inline RawTrajectory sample_trajectory(const ModelSpec& m, const BehavioralPolicy& u, int T, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto pick = [&](const std::vector<Outcome>& law) -> const Outcome& {
        Vec p;
        for (const auto& oc : law) p.push_back(oc.p);
        return law[draw(p, rng)];
    };
    RawTrajectory tr;
    const Outcome* cur = &pick(m.initial);
    int s = cur->s;
    std::vector<int> o = cur->o;
    History h0{o[0]};
    std::vector<History> hp(m.num_agents);
    for (int n = 0; n < m.num_agents; ++n) hp[n] = {o[n + 1]};
    for (int t = 1; t <= T; ++t) {
        std::vector<int> a(m.num_agents);
        for (int n = 0; n < m.num_agents; ++n) a[n] = draw(u.row(n, h0, hp[n]), rng);
        const int ja = m.encode_action(a);
        tr.steps.push_back({o, a, m.cost_c[s][ja], m.cost_d[s][ja], s});
        if (t == T) break;
        const Outcome& nx = pick(m.transition[s][ja]);
        s = nx.s;
        o = nx.o;
        h0.push_back(o[0]);
        for (int n = 0; n < m.num_agents; ++n) {
            hp[n].push_back(a[n]);
            hp[n].push_back(o[n + 1]);
        }
    }
    return tr;
}

inline double discounted_cost(const RawTrajectory& tr, double alpha) {
    double w = 1.0, c = 0.0;
    for (const auto& st : tr.steps) {
        c += w * st.c;
        w *= alpha;
    }
    return c;
}

}  // namespace macp
