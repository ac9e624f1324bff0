#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "model.hpp"

namespace macp::nn {

/// Misuse of the autodiff tape: foreign variables, repeated backward passes.
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

struct ShapeError : DomainError {
    using DomainError::DomainError;
};

struct Tensor {
    std::vector<int> shape;
    Vec data;  // row-major, size = product of shape

    static Tensor zeros(std::vector<int> shape) {
        Tensor t{std::move(shape), {}};
        t.data.assign(t.numel(), 0.0);
        return t;
    }
    std::size_t numel() const {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        return n;
    }
    bool operator==(const Tensor&) const = default;
};

/// Named parameters with gradient accumulators of identical shape.
class ParamStore {
public:
    int add(const std::string& name, std::vector<int> shape) {
        if (index_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
        index_[name] = static_cast<int>(names_.size());
        names_.push_back(name);
        values_.push_back(Tensor::zeros(shape));
        grads_.push_back(Tensor::zeros(std::move(shape)));
        return static_cast<int>(names_.size()) - 1;
    }

    /// Uniform(-r, r) with r = 1/sqrt(fan_in).
    int add_uniform(const std::string& name, std::vector<int> shape, int fan_in, std::mt19937_64& rng) {
        const int id = add(name, std::move(shape));
        const double r = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& x : values_[id].data) x = (2.0 * uniform01(rng) - 1.0) * r;
        return id;
    }

    int size() const { return static_cast<int>(names_.size()); }
    int index(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
        return it->second;
    }
    const std::string& name(int id) const { return names_.at(id); }
    Tensor& value(int id) { return values_.at(id); }
    const Tensor& value(int id) const { return values_.at(id); }
    Tensor& grad(int id) { return grads_.at(id); }
    const Tensor& grad(int id) const { return grads_.at(id); }

    void zero_grad() {
        for (auto& g : grads_) std::fill(g.data.begin(), g.data.end(), 0.0);
    }
    void zero_grad(const std::vector<int>& ids) {
        for (int id : ids) std::fill(grads_[id].data.begin(), grads_[id].data.end(), 0.0);
    }
    /// Plain descent step on the listed parameters.
    void sgd(const std::vector<int>& ids, double lr) {
        for (int id : ids)
            for (std::size_t i = 0; i < values_[id].data.size(); ++i) values_[id].data[i] -= lr * grads_[id].data[i];
    }
    bool finite() const {
        for (const auto& t : values_)
            for (double x : t.data)
                if (!std::isfinite(x)) return false;
        return true;
    }

    bool operator==(const ParamStore& o) const { return names_ == o.names_ && values_ == o.values_; }

    // Checkpoint: "MACPNN1\0", u64 count, then per record
    // u32 name length, name, u32 rank, i32 dims, f64 data (host byte order).
    void save(std::ostream& out) const {
        out.write("MACPNN1", 8);
        put<std::uint64_t>(out, names_.size());
        for (int i = 0; i < size(); ++i) {
            put<std::uint32_t>(out, static_cast<std::uint32_t>(names_[i].size()));
            out.write(names_[i].data(), static_cast<std::streamsize>(names_[i].size()));
            put<std::uint32_t>(out, static_cast<std::uint32_t>(values_[i].shape.size()));
            for (int d : values_[i].shape) put<std::int32_t>(out, d);
            out.write(reinterpret_cast<const char*>(values_[i].data.data()),
                      static_cast<std::streamsize>(values_[i].data.size() * sizeof(double)));
        }
        if (!out) throw std::runtime_error("checkpoint write failed");
    }

    static ParamStore load(std::istream& in) {
        char magic[8];
        in.read(magic, 8);
        if (!in || std::memcmp(magic, "MACPNN1", 8) != 0) throw ValidationError("not a parameter checkpoint");
        ParamStore ps;
        const auto count = get<std::uint64_t>(in);
        for (std::uint64_t r = 0; r < count; ++r) {
            std::string name(get<std::uint32_t>(in), '\0');
            in.read(name.data(), static_cast<std::streamsize>(name.size()));
            std::vector<int> shape(get<std::uint32_t>(in));
            for (auto& d : shape) d = get<std::int32_t>(in);
            const int id = ps.add(name, shape);
            auto& data = ps.values_[id].data;
            in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
            if (!in) throw ValidationError("truncated checkpoint");
        }
        return ps;
    }

    void save_file(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write '" + path + "'");
        save(out);
    }
    static ParamStore load_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ValidationError("cannot open '" + path + "'");
        return load(in);
    }

private:
    template <class T>
    static void put(std::ostream& out, T v) {
        out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    template <class T>
    static T get(std::istream& in) {
        T v{};
        in.read(reinterpret_cast<char*>(&v), sizeof v);
        if (!in) throw ValidationError("truncated checkpoint");
        return v;
    }

    std::vector<std::string> names_;
    std::vector<Tensor> values_, grads_;
    std::unordered_map<std::string, int> index_;
};

class Tape;

struct Var {
    const Tape* tape = nullptr;
    int id = -1;
};

/// Vector-valued reverse-mode tape. Nodes are appended in evaluation order,
/// so the reverse sweep visits each node after all of its consumers.
class Tape {
public:
    explicit Tape(ParamStore* store = nullptr) : store_(store) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    const Vec& value(Var v) const { return nodes_[check(v)].v; }
    const Vec& grad(Var v) const { return nodes_[check(v)].g; }
    double scalar(Var v) const {
        const auto& x = value(v);
        if (x.size() != 1) throw ShapeError("expected a scalar node");
        return x[0];
    }
    std::size_t size() const { return nodes_.size(); }

    Var constant(Vec v) { return push(std::move(v), {}); }

    /// Flattened view of a stored parameter; one node per parameter per tape.
    Var param(int pid) {
        if (!store_) throw ContractError("tape has no parameter store");
        auto it = param_nodes_.find(pid);
        if (it != param_nodes_.end()) return {this, it->second};
        ParamStore* store = store_;
        Var v = push(store->value(pid).data, [store, pid](Tape& t, int self) {
            auto& g = store->grad(pid).data;
            const auto& src = t.nodes_[self].g;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
        });
        param_nodes_[pid] = v.id;
        return v;
    }

    /// W x with W stored row-major as rows x (|x|).
    Var matvec(Var W, int rows, Var x) {
        const int wi = check(W), xi = check(x);
        const auto& wv = nodes_[wi].v;
        const auto& xv = nodes_[xi].v;
        const int cols = static_cast<int>(xv.size());
        if (static_cast<std::size_t>(rows) * cols != wv.size())
            throw ShapeError("matvec: matrix of " + std::to_string(wv.size()) + " entries vs " +
                             std::to_string(rows) + "x" + std::to_string(cols));
        Vec y(rows, 0.0);
        for (int r = 0; r < rows; ++r) {
            double acc = 0.0;
            const double* row = wv.data() + static_cast<std::size_t>(r) * cols;
            for (int c = 0; c < cols; ++c) acc += row[c] * xv[c];
            y[r] = acc;
        }
        return push(std::move(y), [wi, xi, rows, cols](Tape& t, int self) {
            const auto& gy = t.nodes_[self].g;
            auto& gw = t.nodes_[wi].g;
            auto& gx = t.nodes_[xi].g;
            const auto& wv = t.nodes_[wi].v;
            const auto& xv = t.nodes_[xi].v;
            for (int r = 0; r < rows; ++r) {
                if (gy[r] == 0.0) continue;
                const std::size_t base = static_cast<std::size_t>(r) * cols;
                for (int c = 0; c < cols; ++c) {
                    gw[base + c] += gy[r] * xv[c];
                    gx[c] += gy[r] * wv[base + c];
                }
            }
        });
    }

    Var add(Var a, Var b) {
        const int ai = check(a), bi = check(b);
        if (nodes_[ai].v.size() != nodes_[bi].v.size()) throw ShapeError("add: size mismatch");
        Vec y = nodes_[ai].v;
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += nodes_[bi].v[i];
        return push(std::move(y), [ai, bi](Tape& t, int self) {
            const auto& g = t.nodes_[self].g;
            for (std::size_t i = 0; i < g.size(); ++i) {
                t.nodes_[ai].g[i] += g[i];
                t.nodes_[bi].g[i] += g[i];
            }
        });
    }

    Var scale(Var a, double k) {
        const int ai = check(a);
        Vec y = nodes_[ai].v;
        for (auto& x : y) x *= k;
        return push(std::move(y), [ai, k](Tape& t, int self) {
            const auto& g = t.nodes_[self].g;
            for (std::size_t i = 0; i < g.size(); ++i) t.nodes_[ai].g[i] += k * g[i];
        });
    }

    Var tanh(Var a) {
        const int ai = check(a);
        Vec y = nodes_[ai].v;
        for (auto& x : y) x = std::tanh(x);
        return push(std::move(y), [ai](Tape& t, int self) {
            const auto& g = t.nodes_[self].g;
            const auto& y = t.nodes_[self].v;
            for (std::size_t i = 0; i < g.size(); ++i) t.nodes_[ai].g[i] += g[i] * (1.0 - y[i] * y[i]);
        });
    }

    /// Softmax with the maximum subtracted before exponentiation.
    Var softmax(Var a) {
        const int ai = check(a);
        Vec y = softmax_values(nodes_[ai].v);
        return push(std::move(y), [ai](Tape& t, int self) {
            const auto& g = t.nodes_[self].g;
            const auto& y = t.nodes_[self].v;
            double dot = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) dot += g[i] * y[i];
            for (std::size_t i = 0; i < y.size(); ++i) t.nodes_[ai].g[i] += y[i] * (g[i] - dot);
        });
    }

    Var concat(const std::vector<Var>& parts) {
        std::vector<int> ids;
        Vec y;
        for (Var p : parts) {
            ids.push_back(check(p));
            const auto& v = nodes_[ids.back()].v;
            y.insert(y.end(), v.begin(), v.end());
        }
        return push(std::move(y), [ids](Tape& t, int self) {
            const auto& g = t.nodes_[self].g;
            std::size_t off = 0;
            for (int id : ids) {
                auto& dst = t.nodes_[id].g;
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[off + i];
                off += dst.size();
            }
        });
    }

    Var slice(Var a, int offset, int len) {
        const int ai = check(a);
        const auto& v = nodes_[ai].v;
        if (offset < 0 || len < 0 || static_cast<std::size_t>(offset + len) > v.size()) throw ShapeError("slice out of range");
        Vec y(v.begin() + offset, v.begin() + offset + len);
        return push(std::move(y), [ai, offset](Tape& t, int self) {
            const auto& g = t.nodes_[self].g;
            for (std::size_t i = 0; i < g.size(); ++i) t.nodes_[ai].g[offset + i] += g[i];
        });
    }

    Var pick(Var a, int i) { return slice(a, i, 1); }

    /// Sum of scalar nodes, each multiplied by its weight.
    Var weighted_sum(const std::vector<Var>& xs, const Vec& w) {
        if (xs.size() != w.size()) throw ShapeError("weighted_sum: weight count");
        std::vector<int> ids;
        double acc = 0.0;
        for (std::size_t k = 0; k < xs.size(); ++k) {
            ids.push_back(check(xs[k]));
            if (nodes_[ids.back()].v.size() != 1) throw ShapeError("weighted_sum expects scalars");
            acc += w[k] * nodes_[ids.back()].v[0];
        }
        return push({acc}, [ids, w](Tape& t, int self) {
            const double g = t.nodes_[self].g[0];
            for (std::size_t k = 0; k < ids.size(); ++k) t.nodes_[ids[k]].g[0] += w[k] * g;
        });
    }

    Var sum(const std::vector<Var>& xs) { return weighted_sum(xs, Vec(xs.size(), 1.0)); }

    /// 0.5 (x-y)^2 if |x-y| < 1, else |x-y| - 0.5.
    Var smooth_l1(Var pred, double target) {
        const int pi = check(pred);
        if (nodes_[pi].v.size() != 1) throw ShapeError("smooth_l1 expects a scalar prediction");
        const double r = nodes_[pi].v[0] - target;
        return push({detail_smooth_l1(r)}, [pi, r](Tape& t, int self) {
            const double slope = std::abs(r) < 1.0 ? r : (r > 0 ? 1.0 : -1.0);
            t.nodes_[pi].g[0] += t.nodes_[self].g[0] * slope;
        });
    }

    /// -log(p[o] + eta).
    Var nll(Var probs, int o, double eta) {
        const int pi = check(probs);
        const auto& p = nodes_[pi].v;
        if (o < 0 || o >= static_cast<int>(p.size())) throw ShapeError("nll: outcome index out of range");
        const double q = p[o] + eta;
        return push({-std::log(q)}, [pi, o, q](Tape& t, int self) { t.nodes_[pi].g[o] -= t.nodes_[self].g[0] / q; });
    }

    /// log softmax(logits)[i], computed without forming the probabilities' log.
    Var log_softmax_at(Var logits, int i) {
        const int li = check(logits);
        const auto& z = nodes_[li].v;
        if (i < 0 || i >= static_cast<int>(z.size())) throw ShapeError("log_softmax_at: index out of range");
        const double mx = *std::max_element(z.begin(), z.end());
        double s = 0.0;
        for (double x : z) s += std::exp(x - mx);
        const double val = z[i] - mx - std::log(s);
        return push({val}, [li, i](Tape& t, int self) {
            const double g = t.nodes_[self].g[0];
            const Vec p = softmax_values(t.nodes_[li].v);
            for (std::size_t k = 0; k < p.size(); ++k)
                t.nodes_[li].g[k] += g * ((static_cast<int>(k) == i ? 1.0 : 0.0) - p[k]);
        });
    }

    /// Seeds d out / d out = 1 and accumulates parameter gradients into the
    /// store. Each tape supports one backward pass.
    void backward(Var out) {
        const int oi = check(out);
        if (done_) throw ContractError("backward already run on this tape");
        if (nodes_[oi].v.size() != 1) throw ShapeError("backward needs a scalar output");
        done_ = true;
        for (auto& n : nodes_) n.g.assign(n.v.size(), 0.0);
        nodes_[oi].g[0] = 1.0;
        for (int i = oi; i >= 0; --i)
            if (nodes_[i].back) nodes_[i].back(*this, i);
    }

    static Vec softmax_values(const Vec& z) {
        if (z.empty()) throw ShapeError("softmax of an empty vector");
        const double mx = *std::max_element(z.begin(), z.end());
        Vec y(z.size());
        double s = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) s += (y[i] = std::exp(z[i] - mx));
        for (auto& x : y) x /= s;
        return y;
    }

    static double detail_smooth_l1(double r) {
        const double a = std::abs(r);
        return a < 1.0 ? 0.5 * r * r : a - 0.5;
    }

private:
    struct Node {
        Vec v, g;
        std::function<void(Tape&, int)> back;
    };

    int check(Var v) const {
        if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
            throw ContractError("variable does not belong to this tape");
        return v.id;
    }

    Var push(Vec v, std::function<void(Tape&, int)> back) {
        if (done_) throw ContractError("tape is closed after backward");
        nodes_.push_back({std::move(v), {}, std::move(back)});
        return {this, static_cast<int>(nodes_.size()) - 1};
    }

    ParamStore* store_;
    std::vector<Node> nodes_;
    std::unordered_map<int, int> param_nodes_;
    bool done_ = false;
};

inline double loss_smooth_l1(double prediction, double target) { return Tape::detail_smooth_l1(prediction - target); }

inline double loss_nll(int o, const Vec& probs, double eta) {
    if (o < 0 || o >= static_cast<int>(probs.size())) throw ShapeError("nll: outcome index out of range");
    return -std::log(probs[o] + eta);
}

inline Vec forward_softmax(const Vec& z) { return Tape::softmax_values(z); }

/// y = W x + b.
struct Dense {
    int W = -1, b = -1;
    int in = 0, out = 0;

    static Dense make(ParamStore& ps, const std::string& name, int in, int out, std::mt19937_64& rng) {
        Dense d;
        d.in = in;
        d.out = out;
        d.W = ps.add_uniform(name + ".W", {out, in}, in, rng);
        d.b = ps.add_uniform(name + ".b", {out}, in, rng);
        return d;
    }
    Var forward(Tape& t, Var x) const { return t.add(t.matvec(t.param(W), out, x), t.param(b)); }
    Vec apply(const ParamStore& ps, const Vec& x) const {
        if (static_cast<int>(x.size()) != in) throw ShapeError("dense: input width");
        // same association as the tape: (W x) + b
        const auto& w = ps.value(W).data;
        const auto& bias = ps.value(b).data;
        Vec y(out);
        for (int r = 0; r < out; ++r) {
            double acc = 0.0;
            for (int c = 0; c < in; ++c) acc += w[static_cast<std::size_t>(r) * in + c] * x[c];
            y[r] = acc + bias[r];
        }
        return y;
    }
    std::vector<int> params() const { return {W, b}; }
};

/// Elman cell: h' = tanh(Wx x + Wh h + b).
struct RnnCell {
    int Wx = -1, Wh = -1, b = -1;
    int in = 0, hidden = 0;

    static RnnCell make(ParamStore& ps, const std::string& name, int in, int hidden, std::mt19937_64& rng) {
        RnnCell c;
        c.in = in;
        c.hidden = hidden;
        c.Wx = ps.add_uniform(name + ".Wx", {hidden, in}, in + hidden, rng);
        c.Wh = ps.add_uniform(name + ".Wh", {hidden, hidden}, in + hidden, rng);
        c.b = ps.add_uniform(name + ".b", {hidden}, in + hidden, rng);
        return c;
    }
    Var step(Tape& t, Var x, Var h) const {
        return t.tanh(t.add(t.add(t.matvec(t.param(Wx), hidden, x), t.matvec(t.param(Wh), hidden, h)), t.param(b)));
    }
    Vec apply(const ParamStore& ps, const Vec& x, const Vec& h) const {
        if (static_cast<int>(x.size()) != in || static_cast<int>(h.size()) != hidden) throw ShapeError("rnn: input width");
        // same association as the tape: ((Wx x) + (Wh h)) + b
        const auto& wx = ps.value(Wx).data;
        const auto& wh = ps.value(Wh).data;
        const auto& bias = ps.value(b).data;
        Vec y(hidden);
        for (int r = 0; r < hidden; ++r) {
            double ax = 0.0, ah = 0.0;
            for (int c = 0; c < in; ++c) ax += wx[static_cast<std::size_t>(r) * in + c] * x[c];
            for (int c = 0; c < hidden; ++c) ah += wh[static_cast<std::size_t>(r) * hidden + c] * h[c];
            y[r] = std::tanh((ax + ah) + bias[r]);
        }
        return y;
    }
    std::vector<int> params() const { return {Wx, Wh, b}; }
};

/// Two-layer feed-forward net with a tanh hidden layer and linear output.
struct Mlp {
    Dense l1, l2;

    static Mlp make(ParamStore& ps, const std::string& name, int in, int hidden, int out, std::mt19937_64& rng) {
        return {Dense::make(ps, name + ".l1", in, hidden, rng), Dense::make(ps, name + ".l2", hidden, out, rng)};
    }
    Var forward(Tape& t, Var x) const { return l2.forward(t, t.tanh(l1.forward(t, x))); }
    Vec apply(const ParamStore& ps, const Vec& x) const {
        Vec h = l1.apply(ps, x);
        for (auto& v : h) v = std::tanh(v);
        return l2.apply(ps, h);
    }
    std::vector<int> params() const { return {l1.W, l1.b, l2.W, l2.b}; }
    int in() const { return l1.in; }
    int out() const { return l2.out; }
};

struct GradCheck {
    double max_rel_error = 0.0;
    std::string worst;  // "name[i]"
    int checked = 0;
};

/// Compares the store's gradients (produced by `grad`) against central
/// differences of `loss`. Relative error uses max(|g|, |fd|, floor) as denominator.
inline GradCheck finite_difference_check(ParamStore& ps, const std::function<double()>& loss,
                                         const std::function<void()>& grad, double h = 1e-5, double floor = 1e-3) {
    ps.zero_grad();
    grad();
    GradCheck out;
    for (int id = 0; id < ps.size(); ++id) {
        auto& data = ps.value(id).data;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double keep = data[i];
            data[i] = keep + h;
            const double up = loss();
            data[i] = keep - h;
            const double down = loss();
            data[i] = keep;
            const double fd = (up - down) / (2.0 * h);
            const double g = ps.grad(id).data[i];
            const double rel = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), floor});
            ++out.checked;
            if (rel > out.max_rel_error) {
                out.max_rel_error = rel;
                out.worst = ps.name(id) + "[" + std::to_string(i) + "]";
            }
        }
    }
    return out;
}

inline Vec one_hot(int i, int n) {
    Vec v(n, 0.0);
    if (i >= 0) v.at(i) = 1.0;
    return v;
}

}  // namespace macp::nn
