#pragma once

#include <memory>

#include "coordinator.hpp"

namespace macp {

/// Opaque finite AIS value.
using AisValue = std::vector<std::int64_t>;

/// Reduced prescription: per agent, private AIS value -> action, sorted by value.
using ReducedPrescription = std::vector<std::vector<std::pair<AisValue, int>>>;

inline int reduced_action(const ReducedPrescription& g, int n, const AisValue& z) {
    const auto& row = g[n];
    auto it = std::lower_bound(row.begin(), row.end(), z,
                               [](const auto& e, const AisValue& v) { return e.first < v; });
    if (it == row.end() || it->first != z) throw DomainError("private AIS value outside reduced prescription");
    return it->second;
}

/// Prescription-observation record of the compressed coordinator.
struct CoordRecord {
    History o0;                              // o0_1..o0_t
    std::vector<ReducedPrescription> lams;   // lambda-hat_1..lambda-hat_{t-1}
};

enum class GeneratorKind { Identity, Constant, Window, Belief };

/// Private and common compressors with their recursive updates.
/// Private values are computed from (H0, Hn); common values from the
/// compressed coordinator record (and, for belief, the exact law at the node).
struct GeneratorBundle {
    GeneratorKind kind = GeneratorKind::Identity;
    int k = 0;
    bool time_invariant = false;

    AisValue private_map(const History& h0, const History& hn) const {
        switch (kind) {
            case GeneratorKind::Identity:
            case GeneratorKind::Belief:
                return AisValue(hn.begin(), hn.end());
            case GeneratorKind::Constant:
                return {};
            case GeneratorKind::Window: {
                // (a_{t-k}, o_{t-k+1}, ..., a_{t-1}, o_t), front-padded with -1
                AisValue z(2 * k, -1);
                const int len = static_cast<int>(hn.size());
                for (int i = 0; i < 2 * k && len - 1 - i >= 0; ++i) z[2 * k - 1 - i] = hn[len - 1 - i];
                return z;
            }
        }
        (void)h0;
        return {};
    }

    /// ASPS1 update: z_t = phi(z_{t-1}, o0_t, (o^n_t, a^n_{t-1})). `prev` is null at t = 1.
    AisValue private_update(const AisValue* prev, int o0, int on, int a_prev) const {
        (void)o0;
        switch (kind) {
            case GeneratorKind::Identity:
            case GeneratorKind::Belief: {
                if (!prev) return {on};
                AisValue z = *prev;
                z.push_back(a_prev);
                z.push_back(on);
                return z;
            }
            case GeneratorKind::Constant:
                return {};
            case GeneratorKind::Window: {
                AisValue z(2 * k, -1);
                if (prev) z.assign(prev->begin() + 2, prev->end()), z.push_back(a_prev);
                else z.resize(2 * k - 1, -1);
                z.push_back(on);
                return z;
            }
        }
        return {};
    }

    /// Value of one reduced prescription inside a common AIS token.
    static void append_prescription(AisValue& out, const ReducedPrescription& g) {
        out.push_back(static_cast<std::int64_t>(g.size()));
        for (const auto& row : g) {
            out.push_back(static_cast<std::int64_t>(row.size()));
            for (const auto& [z, a] : row) {
                out.push_back(static_cast<std::int64_t>(z.size()));
                out.insert(out.end(), z.begin(), z.end());
                out.push_back(a);
            }
        }
    }

    /// Common AIS of a record. Belief needs the exact conditional law, passed in `law`.
    AisValue common_map(const CoordRecord& rec, const InfoState* law = nullptr) const {
        const int t = static_cast<int>(rec.o0.size());
        AisValue z;
        switch (kind) {
            case GeneratorKind::Identity:
                for (int i = 0; i < t; ++i) {
                    if (i > 0) append_prescription(z, rec.lams[i - 1]);
                    z.push_back(rec.o0[i]);
                }
                return z;
            case GeneratorKind::Constant:
                return {};
            case GeneratorKind::Window:
                // (lam_{t-k}, o0_{t-k+1}, ..., lam_{t-1}, o0_t); missing prescriptions encode as -1
                for (int i = t - k; i < t; ++i) {
                    if (i >= 1) append_prescription(z, rec.lams[i - 1]);
                    else z.push_back(-1);
                    z.push_back(i >= 0 ? rec.o0[i] : -1);
                }
                return z;
            case GeneratorKind::Belief: {
                if (!law) throw DomainError("belief generator needs the conditional law");
                z.push_back(t);
                for (const auto& sup : law->support) {
                    z.push_back(static_cast<std::int64_t>(sup.size()));
                    for (const auto& h : sup) {
                        z.push_back(static_cast<std::int64_t>(h.size()));
                        z.insert(z.end(), h.begin(), h.end());
                    }
                }
                for (const auto& e : law->entries) {
                    z.push_back(e.s);
                    for (int r : e.rank) z.push_back(r);
                    z.push_back(std::bit_cast<std::int64_t>(e.p));
                }
                return z;
            }
        }
        return z;
    }

    /// ASCS1 update for the history-based kinds: z0_t = phi(z0_{t-1}, lam_{t-1}, o0_t).
    AisValue common_update(const AisValue* prev, const ReducedPrescription* lam, int o0) const {
        switch (kind) {
            case GeneratorKind::Identity: {
                AisValue z = prev ? *prev : AisValue{};
                if (prev) append_prescription(z, *lam);
                z.push_back(o0);
                return z;
            }
            case GeneratorKind::Constant:
                return {};
            case GeneratorKind::Window: {
                // split the previous token into its k (prescription, o0) blocks
                std::vector<AisValue> blocks;
                if (prev) {
                    size_t pos = 0;
                    const auto& p = *prev;
                    while (pos < p.size()) {
                        size_t start = pos;
                        if (p[pos] == -1) ++pos;
                        else pos = skip_prescription(p, pos);
                        ++pos;  // o0
                        blocks.emplace_back(p.begin() + start, p.begin() + pos);
                    }
                } else {
                    for (int i = 0; i < k - 1; ++i) blocks.push_back({-1, -1});
                }
                AisValue z;
                for (size_t i = prev ? 1 : 0; i < blocks.size(); ++i) z.insert(z.end(), blocks[i].begin(), blocks[i].end());
                if (prev) append_prescription(z, *lam);
                else z.push_back(-1);
                z.push_back(o0);
                return z;
            }
            case GeneratorKind::Belief:
                throw DomainError("belief update is the exact Bayes step; use common_map with the law");
        }
        return {};
    }

    std::string name() const {
        switch (kind) {
            case GeneratorKind::Identity: return "identity";
            case GeneratorKind::Constant: return "constant";
            case GeneratorKind::Window: return "window:" + std::to_string(k);
            case GeneratorKind::Belief: return "belief";
        }
        return "";
    }

private:
    static size_t skip_prescription(const AisValue& p, size_t pos) {
        const auto agents = p[pos++];
        for (std::int64_t n = 0; n < agents; ++n) {
            const auto rows = p[pos++];
            for (std::int64_t r = 0; r < rows; ++r) {
                const auto len = p[pos++];
                pos += static_cast<size_t>(len) + 1;
            }
        }
        return pos;
    }
};

/// identity | constant | window:k | belief
inline GeneratorBundle builtin_generator(const std::string& spec) {
    GeneratorBundle g;
    if (spec == "identity") g.kind = GeneratorKind::Identity;
    else if (spec == "constant") {
        g.kind = GeneratorKind::Constant;
        g.time_invariant = true;
    } else if (spec == "belief") g.kind = GeneratorKind::Belief;
    else if (spec.rfind("window:", 0) == 0) {
        g.kind = GeneratorKind::Window;
        g.k = std::stoi(spec.substr(7));
        if (g.k < 1) throw DomainError("window length must be >= 1");
        g.time_invariant = true;
    } else
        throw DomainError("unknown generator '" + spec + "'");
    return g;
}

inline std::vector<std::string> builtin_generator_names() { return {"identity", "constant", "window:1", "window:2", "belief"}; }

}  // namespace macp
