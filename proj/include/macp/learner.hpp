#pragma once

#include <bit>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <optional>

#include "duality.hpp"
#include "io.hpp"
#include "nn.hpp"

namespace macp {

struct LearnerConfig {
    int batch = 64;
    int horizon = 8;         // <= 0 means ceil(1/(1-alpha)) * 4
    double p1 = 0.6, p2 = 0.8, p3 = 1.0;
    // delta_{k,i} = s_k / i^{p_k}; s2 and s3 tuned on bind1 so the slow
    // timescales still move within a 5000-iteration budget
    double s1 = 0.05, s2 = 0.3, s3 = 300.0;
    Vec beta;                // coordinator loss weights, K+2 entries; empty means uniform
    Vec beta_s;              // supervisor loss weights, K+2 entries; empty means uniform
    double eta = 1e-8;
    double lambda_max = -1;  // <= 0: Slater cap when declared, else lambda_max_fallback
    double lambda_max_fallback = 10.0;
    Vec lambda0;             // empty means zeros
    bool clipped_lambda_gradient = false;
    int z_width = 16;        // state-net hidden width, also the per-agent pseudo-prescription width
    int pred_width = 32;
    int phi_width = 16;
    std::uint64_t seed = 1;
    int max_iters = 5000;
    int converge_window = 250;
    double converge_tol = 0.0;  // 0 disables the moving-average stop rule
    int log_every = 0;          // progress line on stderr; 0 = silent
};

namespace detail {
inline Vec uniform_weights(int K) { return Vec(K + 2, 1.0 / (K + 2)); }
}  // namespace detail

/// Fills derived defaults and checks the step-size contract: every exponent in
/// (1/2, 1] makes the sums diverge and the squares converge; p1 < p2 < p3
/// sends both step ratios to zero.
inline LearnerConfig validate_config(LearnerConfig cfg, const ModelSpec& m) {
    const int K = m.K();
    if (cfg.batch < 1) throw ValidationError("batch must be >= 1");
    if (cfg.horizon <= 0) cfg.horizon = 4 * static_cast<int>(std::ceil(1.0 / (1.0 - m.discount) - 1e-12));
    for (double p : {cfg.p1, cfg.p2, cfg.p3})
        if (!(p > 0.5 && p <= 1.0)) throw ValidationError("step-size exponents must lie in (0.5, 1]");
    if (!(cfg.p1 < cfg.p2 && cfg.p2 < cfg.p3)) throw ValidationError("step-size exponents must satisfy p1 < p2 < p3");
    for (double s : {cfg.s1, cfg.s2, cfg.s3})
        if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("step-size scales must be positive");
    if (cfg.beta.empty()) cfg.beta = detail::uniform_weights(K);
    if (cfg.beta_s.empty()) cfg.beta_s = detail::uniform_weights(K);
    for (const Vec* b : {&cfg.beta, &cfg.beta_s}) {
        if (static_cast<int>(b->size()) != K + 2) throw ValidationError("loss weights need K+2 entries");
        double s = 0.0;
        for (double x : *b) {
            if (!(x > 0.0)) throw ValidationError("loss weights must be positive");
            s += x;
        }
        if (std::abs(s - 1.0) > 1e-9) throw ValidationError("loss weights must sum to 1");
    }
    if (!(cfg.eta > 0.0)) throw ValidationError("eta must be positive");
    if (cfg.lambda_max <= 0.0) cfg.lambda_max = default_lambda_max(m, cfg.lambda_max_fallback);
    if (cfg.lambda0.empty()) cfg.lambda0.assign(K, 0.0);
    if (static_cast<int>(cfg.lambda0.size()) != K) throw ValidationError("lambda0 needs K entries");
    for (auto& l : cfg.lambda0) l = std::clamp(l, 0.0, cfg.lambda_max);
    if (cfg.z_width < 1 || cfg.pred_width < 1 || cfg.phi_width < 1) throw ValidationError("network widths must be >= 1");
    if (cfg.max_iters < 1) throw ValidationError("max_iters must be >= 1");
    if (cfg.converge_window < 1 || cfg.converge_tol < 0.0) throw ValidationError("bad convergence settings");
    return cfg;
}

/// Exponent-only check of the step-size contract.
inline bool stepsizes_admissible(double p1, double p2, double p3) {
    auto in = [](double p) { return p > 0.5 && p <= 1.0; };
    return in(p1) && in(p2) && in(p3) && p1 < p2 && p2 < p3;
}

inline double step_size(double scale, double p, int i) { return scale / std::pow(static_cast<double>(i), p); }

/// The six networks of the learner, sharing one parameter store.
struct NetworkBundle {
    nn::ParamStore store;
    int N = 0, K = 0, O0 = 0, Oj = 0, zw = 0;
    std::vector<int> On, An;
    nn::RnnCell rho0;            // (o0 one-hot, previous pseudo-prescription) -> z0
    std::vector<nn::RnnCell> rho;  // (on one-hot, previous own action one-hot) -> zn
    nn::Mlp phi0;                // z0 -> tanh -> pseudo-prescription, zw per agent
    std::vector<nn::Mlp> phi;    // (zn, pseudo-prescription n) -> action logits
    nn::Mlp psi0;                // (z0, pseudo-prescription) -> (c, d, o0 logits)
    nn::Mlp psiS;                // (z0..zN, actions one-hot) -> (c, d, joint-obs logits)

    int lam_width() const { return N * zw; }

    std::vector<int> ids(std::initializer_list<const void*> nets) const {
        std::vector<int> out;
        for (const void* p : nets) {
            if (p == &rho0) append(out, rho0.params());
            else if (p == &rho)
                for (const auto& r : rho) append(out, r.params());
            else if (p == &phi0) append(out, phi0.params());
            else if (p == &phi)
                for (const auto& f : phi) append(out, f.params());
            else if (p == &psi0) append(out, psi0.params());
            else if (p == &psiS) append(out, psiS.params());
        }
        return out;
    }
    std::vector<int> coordinator_ids() const { return ids({&rho0, &psi0}); }
    std::vector<int> supervisor_ids() const { return ids({&rho0, &rho, &psiS}); }
    std::vector<int> policy_ids() const { return ids({&phi0, &phi}); }

    /// Bit pattern hash of the policy parameters; identifies the collecting policy.
    std::uint64_t policy_fingerprint() const {
        std::uint64_t h = 1469598103934665603ull;
        for (int id : policy_ids())
            for (double x : store.value(id).data) {
                h ^= std::bit_cast<std::uint64_t>(x);
                h *= 1099511628211ull;
            }
        return h;
    }

private:
    static void append(std::vector<int>& out, const std::vector<int>& xs) { out.insert(out.end(), xs.begin(), xs.end()); }
};

inline NetworkBundle make_bundle(const ModelSpec& m, const LearnerConfig& cfg, std::uint64_t seed) {
    NetworkBundle b;
    b.N = m.num_agents;
    b.K = m.K();
    b.O0 = static_cast<int>(m.common_obs.size());
    b.Oj = m.num_joint_obs();
    b.zw = cfg.z_width;
    std::mt19937_64 rng(seed);
    for (int n = 0; n < b.N; ++n) {
        b.On.push_back(m.num_priv_obs(n));
        b.An.push_back(m.num_actions(n));
    }
    const int L = b.lam_width();
    b.rho0 = nn::RnnCell::make(b.store, "rho0", b.O0 + L, b.zw, rng);
    for (int n = 0; n < b.N; ++n)
        b.rho.push_back(nn::RnnCell::make(b.store, "rho" + std::to_string(n + 1), b.On[n] + b.An[n], b.zw, rng));
    b.phi0 = nn::Mlp::make(b.store, "phi0", b.zw, cfg.phi_width, L, rng);
    for (int n = 0; n < b.N; ++n)
        b.phi.push_back(nn::Mlp::make(b.store, "phi" + std::to_string(n + 1), 2 * b.zw, cfg.phi_width, b.An[n], rng));
    b.psi0 = nn::Mlp::make(b.store, "psi0", b.zw + L, cfg.pred_width, 1 + b.K + b.O0, rng);
    int aw = 0;
    for (int a : b.An) aw += a;
    b.psiS = nn::Mlp::make(b.store, "psiS", (b.N + 1) * b.zw + aw, cfg.pred_width, 1 + b.K + b.Oj, rng);
    return b;
}

struct LearnStep {
    std::vector<int> o;       // joint observation at t
    std::vector<int> o_next;  // joint observation at t+1 (prediction target)
    std::vector<int> a;
    double c = 0.0;
    Vec d;
    Vec z0;
    std::vector<Vec> zp;  // [n]
    Vec lam;              // pseudo-prescription tuple
    Vec lam_prev;
    std::vector<Vec> probs;  // [n] action distributions
    double c0 = 0.0, cS = 0.0;
    Vec d0, dS, P0, PS;
};

struct LearnTrajectory {
    std::vector<LearnStep> steps;
};

struct Batch {
    std::vector<LearnTrajectory> traj;
    std::uint64_t policy_fingerprint = 0;
    Vec lambda;
};

namespace detail {

inline Vec cat(std::initializer_list<const Vec*> parts) {
    Vec out;
    for (const Vec* p : parts) out.insert(out.end(), p->begin(), p->end());
    return out;
}

inline Vec tanh_all(Vec v) {
    for (auto& x : v) x = std::tanh(x);
    return v;
}

inline Vec actions_one_hot(const NetworkBundle& b, const std::vector<int>& a) {
    Vec out;
    for (int n = 0; n < b.N; ++n) {
        auto oh = nn::one_hot(a.empty() ? -1 : a[n], b.An[n]);
        out.insert(out.end(), oh.begin(), oh.end());
    }
    return out;
}

inline Vec agent_lam(const NetworkBundle& b, const Vec& lam, int n) {
    return Vec(lam.begin() + n * b.zw, lam.begin() + (n + 1) * b.zw);
}

inline const Outcome& pick(const std::vector<Outcome>& law, std::mt19937_64& rng) {
    Vec p;
    for (const auto& oc : law) p.push_back(oc.p);
    return law[draw(p, rng)];
}

}  // namespace detail

/// One rollout under the bundle's coordination policy. The tape-free forward
/// passes below use the same operation order as the tape, so probabilities
/// recomputed on a tape match bit for bit.
inline LearnTrajectory rollout(const ModelSpec& m, const NetworkBundle& b, int T, std::mt19937_64& rng) {
    using detail::cat;
    LearnTrajectory tr;
    const Outcome* cur = &detail::pick(m.initial, rng);
    int s = cur->s;
    std::vector<int> o = cur->o;
    Vec z0(b.zw, 0.0), lam_prev(b.lam_width(), 0.0);
    std::vector<Vec> zp(b.N, Vec(b.zw, 0.0));
    std::vector<int> a_prev;
    for (int t = 1; t <= T; ++t) {
        LearnStep st;
        st.o = o;
        const Vec oh0 = nn::one_hot(o[0], b.O0);
        z0 = b.rho0.apply(b.store, cat({&oh0, &lam_prev}), z0);
        for (int n = 0; n < b.N; ++n) {
            const Vec ohn = nn::one_hot(o[n + 1], b.On[n]);
            const Vec ohp = nn::one_hot(a_prev.empty() ? -1 : a_prev[n], b.An[n]);
            zp[n] = b.rho[n].apply(b.store, cat({&ohn, &ohp}), zp[n]);
        }
        const Vec lam = detail::tanh_all(b.phi0.apply(b.store, z0));
        st.a.resize(b.N);
        for (int n = 0; n < b.N; ++n) {
            const Vec ln = detail::agent_lam(b, lam, n);
            st.probs.push_back(nn::forward_softmax(b.phi[n].apply(b.store, cat({&zp[n], &ln}))));
            st.a[n] = draw(st.probs[n], rng);
        }
        const int ja = m.encode_action(st.a);
        st.c = m.cost_c[s][ja];
        st.d = m.cost_d[s][ja];
        const Vec out0 = b.psi0.apply(b.store, cat({&z0, &lam}));
        st.c0 = out0[0];
        st.d0.assign(out0.begin() + 1, out0.begin() + 1 + b.K);
        st.P0 = nn::forward_softmax(Vec(out0.begin() + 1 + b.K, out0.end()));
        Vec sin = z0;
        for (const auto& z : zp) sin.insert(sin.end(), z.begin(), z.end());
        const Vec aoh = detail::actions_one_hot(b, st.a);
        sin.insert(sin.end(), aoh.begin(), aoh.end());
        const Vec outS = b.psiS.apply(b.store, sin);
        st.cS = outS[0];
        st.dS.assign(outS.begin() + 1, outS.begin() + 1 + b.K);
        st.PS = nn::forward_softmax(Vec(outS.begin() + 1 + b.K, outS.end()));
        const Outcome& nx = detail::pick(m.transition[s][ja], rng);
        st.o_next = nx.o;
        st.z0 = z0;
        st.zp = zp;
        st.lam = lam;
        st.lam_prev = lam_prev;
        tr.steps.push_back(std::move(st));
        s = nx.s;
        o = nx.o;
        lam_prev = lam;
        a_prev = tr.steps.back().a;
    }
    return tr;
}

/// Independent 64-bit seed for stream j of `seed`.
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t j) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(j >> 32)};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

/// B rollouts; trajectory j draws from the stream (seed, j).
inline Batch collect_batch(const ModelSpec& m, const NetworkBundle& b, const Vec& lambda, int B, int T, std::uint64_t seed) {
    Batch batch;
    batch.lambda = lambda;
    batch.policy_fingerprint = b.policy_fingerprint();
    for (int j = 0; j < B; ++j) {
        std::mt19937_64 rng(stream_seed(seed, static_cast<std::uint64_t>(j)));
        batch.traj.push_back(rollout(m, b, T, rng));
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Risks

/// Per-step prediction loss: beta_0 l2(c) + sum_k beta_k l2(d_k) + beta_{K+1} nll(o).
inline double prediction_loss(double c, const Vec& d, int o, double c_hat, const Vec& d_hat, const Vec& P_hat,
                              const Vec& beta, double eta) {
    double l = beta[0] * nn::loss_smooth_l1(c_hat, c);
    for (std::size_t k = 0; k < d.size(); ++k) l += beta[k + 1] * nn::loss_smooth_l1(d_hat[k], d[k]);
    return l + beta[d.size() + 1] * nn::loss_nll(o, P_hat, eta);
}

/// Risks from the predictions recorded during collection.
inline double recorded_risk_coordinator(const Batch& batch, const Vec& beta, double eta) {
    double acc = 0.0;
    std::size_t count = 0;
    for (const auto& tr : batch.traj)
        for (const auto& st : tr.steps) {
            acc += prediction_loss(st.c, st.d, st.o_next[0], st.c0, st.d0, st.P0, beta, eta);
            ++count;
        }
    if (count == 0) throw DomainError("empty batch");
    return acc / static_cast<double>(count);
}

inline double recorded_risk_supervisor(const ModelSpec& m, const Batch& batch, const Vec& beta, double eta) {
    double acc = 0.0;
    std::size_t count = 0;
    for (const auto& tr : batch.traj)
        for (const auto& st : tr.steps) {
            acc += prediction_loss(st.c, st.d, m.encode_obs(st.o_next), st.cS, st.dS, st.PS, beta, eta);
            ++count;
        }
    if (count == 0) throw DomainError("empty batch");
    return acc / static_cast<double>(count);
}

namespace detail {

inline nn::Var step_loss(nn::Tape& tp, nn::Var out, int K, double c, const Vec& d, int o, const Vec& beta, double eta) {
    std::vector<nn::Var> terms{tp.smooth_l1(tp.pick(out, 0), c)};
    for (int k = 0; k < K; ++k) terms.push_back(tp.smooth_l1(tp.pick(out, 1 + k), d[k]));
    const int width = static_cast<int>(tp.value(out).size()) - 1 - K;
    terms.push_back(tp.nll(tp.softmax(tp.slice(out, 1 + K, width)), o, eta));
    return tp.weighted_sum(terms, beta);
}

/// z0_1..z0_T recomputed on the tape from the recorded inputs.
inline std::vector<nn::Var> coordinator_states(nn::Tape& tp, const NetworkBundle& b, const LearnTrajectory& tr) {
    std::vector<nn::Var> zs;
    nn::Var z = tp.constant(Vec(b.zw, 0.0));
    for (const auto& st : tr.steps) {
        const Vec oh = nn::one_hot(st.o[0], b.O0);
        z = b.rho0.step(tp, tp.constant(cat({&oh, &st.lam_prev})), z);
        zs.push_back(z);
    }
    return zs;
}

}  // namespace detail

/// Coordinator risk; with `accumulate`, adds its gradient (w.r.t. rho0, psi0)
/// into the store. Pseudo-prescriptions enter as recorded constants.
inline double risk_coordinator(NetworkBundle& b, const Batch& batch, const Vec& beta, double eta, bool accumulate) {
    const double norm = 1.0 / static_cast<double>(batch.traj.size() * std::max<std::size_t>(1, batch.traj[0].steps.size()));
    double total = 0.0;
    for (const auto& tr : batch.traj) {
        nn::Tape tp(&b.store);
        const auto zs = detail::coordinator_states(tp, b, tr);
        std::vector<nn::Var> losses;
        for (std::size_t t = 0; t < tr.steps.size(); ++t) {
            const auto& st = tr.steps[t];
            const auto out = b.psi0.forward(tp, tp.concat({zs[t], tp.constant(st.lam)}));
            losses.push_back(detail::step_loss(tp, out, b.K, st.c, st.d, st.o_next[0], beta, eta));
        }
        const auto risk = tp.scale(tp.sum(losses), norm);
        total += tp.scalar(risk);
        if (accumulate) tp.backward(risk);
    }
    return total;
}

/// Supervisor risk; gradient w.r.t. rho0..rhoN and psiS.
inline double risk_supervisor(const ModelSpec& m, NetworkBundle& b, const Batch& batch, const Vec& beta, double eta,
                              bool accumulate) {
    using detail::cat;
    const double norm = 1.0 / static_cast<double>(batch.traj.size() * std::max<std::size_t>(1, batch.traj[0].steps.size()));
    double total = 0.0;
    for (const auto& tr : batch.traj) {
        nn::Tape tp(&b.store);
        const auto z0s = detail::coordinator_states(tp, b, tr);
        std::vector<nn::Var> zp;
        for (int n = 0; n < b.N; ++n) zp.push_back(tp.constant(Vec(b.zw, 0.0)));
        std::vector<nn::Var> losses;
        for (std::size_t t = 0; t < tr.steps.size(); ++t) {
            const auto& st = tr.steps[t];
            std::vector<nn::Var> parts{z0s[t]};
            for (int n = 0; n < b.N; ++n) {
                const Vec ohn = nn::one_hot(st.o[n + 1], b.On[n]);
                const Vec ohp = nn::one_hot(t == 0 ? -1 : tr.steps[t - 1].a[n], b.An[n]);
                zp[n] = b.rho[n].step(tp, tp.constant(cat({&ohn, &ohp})), zp[n]);
                parts.push_back(zp[n]);
            }
            parts.push_back(tp.constant(detail::actions_one_hot(b, st.a)));
            const auto out = b.psiS.forward(tp, tp.concat(parts));
            losses.push_back(detail::step_loss(tp, out, b.K, st.c, st.d, m.encode_obs(st.o_next), beta, eta));
        }
        const auto risk = tp.scale(tp.sum(losses), norm);
        total += tp.scalar(risk);
        if (accumulate) tp.backward(risk);
    }
    return total;
}

// ---------------------------------------------------------------------------
// Policy and multiplier estimates

/// g_t = sum_{t' >= t} alpha^{t'-t} (c_{t'} + <lambda, d_{t'} - kappa>).
inline Vec cost_to_go(const LearnTrajectory& tr, const Vec& lambda, const Vec& kappa, double alpha) {
    const int T = static_cast<int>(tr.steps.size());
    Vec g(T, 0.0);
    double next = 0.0;
    for (int t = T - 1; t >= 0; --t) {
        const auto& st = tr.steps[t];
        double l = st.c;
        for (std::size_t k = 0; k < kappa.size(); ++k) l += lambda[k] * (st.d[k] - kappa[k]);
        g[t] = l + alpha * next;
        next = g[t];
    }
    return g;
}

namespace detail {
inline nn::Var log_policy(nn::Tape& tp, const NetworkBundle& b, const LearnStep& st) {
    const auto lam = tp.tanh(b.phi0.forward(tp, tp.constant(st.z0)));
    std::vector<nn::Var> terms;
    for (int n = 0; n < b.N; ++n) {
        const auto logits = b.phi[n].forward(tp, tp.concat({tp.constant(st.zp[n]), tp.slice(lam, n * b.zw, b.zw)}));
        terms.push_back(tp.log_softmax_at(logits, st.a[n]));
    }
    return tp.sum(terms);
}
}  // namespace detail

/// Score-function surrogate (1/B) sum_j sum_t g_{j,t} sum_n log phi_n(a | z, lam);
/// with `accumulate`, its gradient lands on the phi parameters only.
inline double policy_surrogate(NetworkBundle& b, const Batch& batch, const std::vector<Vec>& g, bool accumulate) {
    if (batch.policy_fingerprint != b.policy_fingerprint())
        throw nn::ContractError("policy gradient requested on a batch collected under a different policy");
    const double inv_b = 1.0 / static_cast<double>(batch.traj.size());
    double total = 0.0;
    for (std::size_t j = 0; j < batch.traj.size(); ++j) {
        const auto& tr = batch.traj[j];
        nn::Tape tp(&b.store);
        std::vector<nn::Var> terms;
        Vec w;
        for (std::size_t t = 0; t < tr.steps.size(); ++t) {
            if (g[j][t] == 0.0) continue;
            terms.push_back(detail::log_policy(tp, b, tr.steps[t]));
            w.push_back(g[j][t] * inv_b);
        }
        if (terms.empty()) continue;
        const auto s = tp.weighted_sum(terms, w);
        total += tp.scalar(s);
        if (accumulate) tp.backward(s);
    }
    return total;
}

/// Adds the REINFORCE estimate into the phi gradients and returns the surrogate value.
inline double policy_gradient_estimate(const ModelSpec& m, NetworkBundle& b, const Batch& batch, const Vec& lambda) {
    std::vector<Vec> g;
    for (const auto& tr : batch.traj) g.push_back(cost_to_go(tr, lambda, m.kappa, m.discount));
    return policy_surrogate(b, batch, g, true);
}

/// Action probabilities recomputed on a tape for the recorded steps.
inline double max_logprob_mismatch(NetworkBundle& b, const Batch& batch) {
    double worst = 0.0;
    for (const auto& tr : batch.traj)
        for (const auto& st : tr.steps) {
            nn::Tape tp(&b.store);
            const auto lam = tp.tanh(b.phi0.forward(tp, tp.constant(st.z0)));
            for (int n = 0; n < b.N; ++n) {
                const auto logits =
                    b.phi[n].forward(tp, tp.concat({tp.constant(st.zp[n]), tp.slice(lam, n * b.zw, b.zw)}));
                const auto p = tp.value(tp.softmax(logits));
                worst = std::max(worst, std::abs(p[st.a[n]] - st.probs[n][st.a[n]]));
            }
        }
    return worst;
}

struct LambdaGradient {
    Vec signed_violation;  // (1/B) sum_j sum_t alpha^{t-1} d_{j,t} - kappa
    Vec clipped;           // [signed]^+
    Vec D_mean;
};

inline LambdaGradient lambda_gradient_estimate(const Batch& batch, const Vec& kappa, double alpha) {
    LambdaGradient out;
    const int K = static_cast<int>(kappa.size());
    out.D_mean.assign(K, 0.0);
    for (const auto& tr : batch.traj) {
        double w = 1.0;
        for (const auto& st : tr.steps) {
            for (int k = 0; k < K; ++k) out.D_mean[k] += w * st.d[k];
            w *= alpha;
        }
    }
    for (auto& x : out.D_mean) x /= static_cast<double>(batch.traj.size());
    for (int k = 0; k < K; ++k) {
        out.signed_violation.push_back(out.D_mean[k] - kappa[k]);
        out.clipped.push_back(std::max(0.0, out.signed_violation[k]));
    }
    return out;
}

/// Batch mean of C_j + <lambda, D_j - kappa> (kappa charged once), the quantity
/// compared with the dual function.
inline double batch_lagrangian(const Batch& batch, const Vec& lambda, const Vec& kappa, double alpha) {
    double acc = 0.0;
    for (const auto& tr : batch.traj) {
        double w = 1.0, C = 0.0;
        Vec D(kappa.size(), 0.0);
        for (const auto& st : tr.steps) {
            C += w * st.c;
            for (std::size_t k = 0; k < kappa.size(); ++k) D[k] += w * st.d[k];
            w *= alpha;
        }
        acc += lagrangian(C, D, lambda, kappa);
    }
    return acc / static_cast<double>(batch.traj.size());
}

// ---------------------------------------------------------------------------
// Training

struct IterationMetrics {
    int iter = 0;
    double risk_coord = 0.0, risk_sup = 0.0, lagrangian_mean = 0.0;
    Vec violation, lambda, D_mean;
    double wallclock_ms = 0.0;
};

struct TrainState {
    int iteration = 0;
    Vec lambda;
    std::vector<IterationMetrics> history;
    bool converged = false;

    /// Means over the last `w` iterations.
    double recent_lagrangian(int w) const {
        return recent(w, [](const IterationMetrics& m) { return m.lagrangian_mean; });
    }
    double recent_D(int w, int k = 0) const {
        return recent(w, [k](const IterationMetrics& m) { return m.D_mean[k]; });
    }
    double recent_lambda(int w, int k = 0) const {
        return recent(w, [k](const IterationMetrics& m) { return m.lambda[k]; });
    }

private:
    template <class F>
    double recent(int w, F f) const {
        if (history.empty()) return 0.0;
        const int n = std::min<int>(w, static_cast<int>(history.size()));
        double acc = 0.0;
        for (int i = static_cast<int>(history.size()) - n; i < static_cast<int>(history.size()); ++i) acc += f(history[i]);
        return acc / n;
    }
};

struct TrainOptions {
    std::string metrics_csv;     // empty: no file
    std::string checkpoint_dir;  // empty: no checkpoints
};

inline void write_metrics_header(std::ostream& out, int K) {
    out << "iter,risk_coord,risk_sup,lagrangian_mean";
    for (int k = 0; k < K; ++k) out << ",violation_" << k;
    for (int k = 0; k < K; ++k) out << ",lambda_" << k;
    out << ",wallclock_ms\n";
}

inline void write_metrics_row(std::ostream& out, const IterationMetrics& m) {
    char buf[64];
    auto num = [&](double x) {
        std::snprintf(buf, sizeof buf, "%.17g", x);
        return std::string(buf);
    };
    out << m.iter << ',' << num(m.risk_coord) << ',' << num(m.risk_sup) << ',' << num(m.lagrangian_mean);
    for (double v : m.violation) out << ',' << num(v);
    for (double l : m.lambda) out << ',' << num(l);
    out << ',' << num(m.wallclock_ms) << '\n';
}

/// Per iteration: collect under lambda_i; rho0/psi0 step; rho/psiS step on the
/// updated rho0; phi step; projected lambda step. Deterministic given cfg.seed.
inline TrainState train(const ModelSpec& m, LearnerConfig cfg, NetworkBundle& b, const TrainOptions& opt = {}) {
    cfg = validate_config(cfg, m);
    const int K = m.K();
    TrainState state;
    state.lambda = cfg.lambda0;
    std::ofstream csv;
    if (!opt.metrics_csv.empty()) {
        csv.open(opt.metrics_csv);
        if (!csv) throw std::runtime_error("cannot write '" + opt.metrics_csv + "'");
        write_metrics_header(csv, K);
    }
    auto save = [&](const std::string& tag) {
        if (opt.checkpoint_dir.empty()) return;
        std::filesystem::create_directories(opt.checkpoint_dir);
        b.store.save_file((std::filesystem::path(opt.checkpoint_dir) / (tag + ".ckpt")).string());
    };
    const auto start = std::chrono::steady_clock::now();
    const auto coord_ids = b.coordinator_ids(), sup_ids = b.supervisor_ids(), pol_ids = b.policy_ids();
    for (int i = 1; i <= cfg.max_iters; ++i) {
        const Batch batch = collect_batch(m, b, state.lambda, cfg.batch, cfg.horizon, stream_seed(cfg.seed, 1000003ull * i));
        const double d1 = step_size(cfg.s1, cfg.p1, i), d2 = step_size(cfg.s2, cfg.p2, i), d3 = step_size(cfg.s3, cfg.p3, i);
        IterationMetrics met;
        met.iter = i;
        met.lambda = state.lambda;
        b.store.zero_grad();
        met.risk_coord = risk_coordinator(b, batch, cfg.beta, cfg.eta, true);
        b.store.sgd(coord_ids, d1);
        b.store.zero_grad();
        met.risk_sup = risk_supervisor(m, b, batch, cfg.beta_s, cfg.eta, true);
        b.store.sgd(sup_ids, d1);
        b.store.zero_grad();
        policy_gradient_estimate(m, b, batch, state.lambda);
        b.store.sgd(pol_ids, d2);
        const auto lg = lambda_gradient_estimate(batch, m.kappa, m.discount);
        met.violation = lg.signed_violation;
        met.D_mean = lg.D_mean;
        met.lagrangian_mean = batch_lagrangian(batch, state.lambda, m.kappa, m.discount);
        const Vec& step = cfg.clipped_lambda_gradient ? lg.clipped : lg.signed_violation;
        for (int k = 0; k < K; ++k) state.lambda[k] = std::clamp(state.lambda[k] + d3 * step[k], 0.0, cfg.lambda_max);
        met.wallclock_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        state.iteration = i;
        if (!b.store.finite() || !std::isfinite(met.risk_coord) || !std::isfinite(met.risk_sup)) {
            save("diagnostic");
            throw NumericError("non-finite parameter or risk at iteration " + std::to_string(i));
        }
        if (csv) write_metrics_row(csv, met);
        if (cfg.log_every > 0 && i % cfg.log_every == 0) {
            std::fprintf(stderr, "iter %d risk_c %.4f risk_s %.4f L %.4f", i, met.risk_coord, met.risk_sup, met.lagrangian_mean);
            for (int k = 0; k < K; ++k) std::fprintf(stderr, " v%d %.4f lam%d %.4f", k, met.violation[k], k, state.lambda[k]);
            std::fprintf(stderr, "\n");
        }
        state.history.push_back(std::move(met));
        const int w = cfg.converge_window;
        if (cfg.converge_tol > 0.0 && i >= 2 * w) {
            double dl = 0.0, dL = 0.0;
            const auto& h = state.history;
            for (int k = 0; k < K; ++k) {
                double a = 0.0, c = 0.0;
                for (int q = 0; q < w; ++q) {
                    a += h[h.size() - 1 - q].lambda[k];
                    c += h[h.size() - 1 - w - q].lambda[k];
                }
                dl = std::max(dl, std::abs(a - c) / w);
            }
            double a = 0.0, c = 0.0;
            for (int q = 0; q < w; ++q) {
                a += h[h.size() - 1 - q].lagrangian_mean;
                c += h[h.size() - 1 - w - q].lagrangian_mean;
            }
            dL = std::abs(a - c) / w;
            if (dl < cfg.converge_tol && dL < cfg.converge_tol) {
                state.converged = true;
                break;
            }
        }
    }
    save("final");
    return state;
}

inline LearnerConfig learner_config_from_json(const json& j) {
    LearnerConfig c;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) {
            try {
                j.at(key).get_to(field);
            } catch (const json::exception& e) {
                throw ValidationError(std::string("config field '") + key + "': " + e.what());
            }
        }
    };
    if (!j.is_object()) throw ValidationError("learner config must be a JSON object");
    get("batch", c.batch);
    get("horizon", c.horizon);
    get("p1", c.p1);
    get("p2", c.p2);
    get("p3", c.p3);
    get("s1", c.s1);
    get("s2", c.s2);
    get("s3", c.s3);
    get("beta", c.beta);
    get("beta_s", c.beta_s);
    get("eta", c.eta);
    get("lambda_max", c.lambda_max);
    get("lambda_max_fallback", c.lambda_max_fallback);
    get("lambda0", c.lambda0);
    get("clipped_lambda_gradient", c.clipped_lambda_gradient);
    get("z_width", c.z_width);
    get("pred_width", c.pred_width);
    get("phi_width", c.phi_width);
    get("seed", c.seed);
    get("max_iters", c.max_iters);
    get("converge_window", c.converge_window);
    get("converge_tol", c.converge_tol);
    get("log_every", c.log_every);
    return c;
}

}  // namespace macp
