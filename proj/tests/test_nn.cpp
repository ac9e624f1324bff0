#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sstream>

#include "macp/nn.hpp"

using namespace macp;
using namespace macp::nn;

namespace {

Vec random_vec(int n, std::mt19937_64& rng) {
    Vec v(n);
    for (auto& x : v) x = 2.0 * uniform01(rng) - 1.0;
    return v;
}

}  // namespace

TEST_CASE("dense layer with identity weights and zero bias is the identity") {
    ParamStore ps;
    std::mt19937_64 rng(1);
    auto d = Dense::make(ps, "d", 3, 3, rng);
    auto& w = ps.value(d.W).data;
    std::fill(w.begin(), w.end(), 0.0);
    for (int i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
    std::fill(ps.value(d.b).data.begin(), ps.value(d.b).data.end(), 0.0);
    const Vec x{0.3, -1.2, 4.0};
    CHECK(d.apply(ps, x) == x);
    Tape t(&ps);
    CHECK(t.value(d.forward(t, t.constant(x))) == x);
}

TEST_CASE("softmax of equal logits is uniform") {
    CHECK(forward_softmax({0.0, 0.0}) == Vec{0.5, 0.5});
    const auto big = forward_softmax({1000.0, 1000.0, 1000.0});
    for (double p : big) CHECK(p == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("rnn step with zero weights returns tanh(b)") {
    ParamStore ps;
    std::mt19937_64 rng(2);
    auto c = RnnCell::make(ps, "r", 2, 3, rng);
    std::fill(ps.value(c.Wx).data.begin(), ps.value(c.Wx).data.end(), 0.0);
    std::fill(ps.value(c.Wh).data.begin(), ps.value(c.Wh).data.end(), 0.0);
    const Vec b = ps.value(c.b).data;
    const auto h = c.apply(ps, {1.0, -2.0}, {0.5, 0.5, 0.5});
    for (int i = 0; i < 3; ++i) CHECK(h[i] == std::tanh(b[i]));
}

TEST_CASE("smooth L1 branches") {
    CHECK(loss_smooth_l1(0.5, 0.0) == 0.125);
    CHECK(loss_smooth_l1(1.5, 0.0) == 1.0);
    CHECK(loss_smooth_l1(-2.0, 1.0) == 2.5);
    CHECK(loss_smooth_l1(0.7, 0.7) == 0.0);
}

TEST_CASE("negative log-likelihood") {
    CHECK(std::abs(loss_nll(0, {1.0, 0.0}, 1e-8)) <= 1e-8);
    CHECK(loss_nll(1, {1.0, 0.0}, 1e-8) == doctest::Approx(18.420680743952367));
    CHECK(loss_nll(0, {0.5, 0.5}, 0.0) == doctest::Approx(std::log(2.0)));
    CHECK_THROWS_AS(loss_nll(2, {0.5, 0.5}, 0.0), ShapeError);
}

TEST_CASE("single dense layer with smooth L1 on the quadratic branch") {
    ParamStore ps;
    std::mt19937_64 rng(3);
    auto d = Dense::make(ps, "d", 4, 1, rng);
    const Vec x{0.1, -0.2, 0.3, 0.05};
    const double pred = d.apply(ps, x)[0], target = pred - 0.4;
    Tape t(&ps);
    t.backward(t.smooth_l1(d.forward(t, t.constant(x)), target));
    for (int i = 0; i < 4; ++i) CHECK(ps.grad(d.W).data[i] == doctest::Approx((pred - target) * x[i]).epsilon(1e-14));
    CHECK(ps.grad(d.b).data[0] == doctest::Approx(pred - target).epsilon(1e-14));
}

TEST_CASE("zero-loss region has zero gradients") {
    ParamStore ps;
    std::mt19937_64 rng(4);
    auto m = Mlp::make(ps, "m", 3, 5, 1, rng);
    const Vec x{0.2, 0.1, -0.3};
    const double pred = m.apply(ps, x)[0];
    Tape t(&ps);
    t.backward(t.smooth_l1(m.forward(t, t.constant(x)), pred));
    for (int id = 0; id < ps.size(); ++id)
        for (double g : ps.grad(id).data) CHECK(g == 0.0);
}

TEST_CASE("tape-free apply is bit-identical to the tape") {
    ParamStore ps;
    std::mt19937_64 rng(5);
    auto m = Mlp::make(ps, "m", 4, 6, 3, rng);
    auto r = RnnCell::make(ps, "r", 4, 5, rng);
    const Vec x = random_vec(4, rng), h = random_vec(5, rng);
    Tape t(&ps);
    CHECK(t.value(m.forward(t, t.constant(x))) == m.apply(ps, x));
    CHECK(t.value(r.step(t, t.constant(x), t.constant(h))) == r.apply(ps, x, h));
}

TEST_CASE("finite-difference agreement for every layer and loss") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        CAPTURE(seed);
        ParamStore ps;
        std::mt19937_64 rng(seed);
        auto dense = Dense::make(ps, "d", 3, 4, rng);
        auto rnn = RnnCell::make(ps, "r", 4, 3, rng);
        auto mlp = Mlp::make(ps, "m", 3, 5, 4, rng);
        const Vec x = random_vec(3, rng);
        const int o = static_cast<int>(rng() % 4);
        auto build = [&](Tape& t) {
            auto h = t.tanh(dense.forward(t, t.constant(x)));
            auto z = rnn.step(t, h, t.constant(Vec(3, 0.1)));
            z = rnn.step(t, h, z);
            auto logits = mlp.forward(t, z);
            auto probs = t.softmax(logits);
            auto parts = t.concat({t.slice(logits, 0, 2), t.pick(probs, o)});
            return t.add(t.add(t.nll(probs, o, 1e-8), t.scale(t.smooth_l1(t.pick(parts, 0), 0.3), 0.7)),
                         t.weighted_sum({t.log_softmax_at(logits, (o + 1) % 4), t.sum({t.pick(parts, 1), t.pick(parts, 2)})},
                                         {0.5, -0.25}));
        };
        auto loss = [&] {
            Tape t(&ps);
            return t.scalar(build(t));
        };
        auto grad = [&] {
            Tape t(&ps);
            t.backward(build(t));
        };
        const auto gc = finite_difference_check(ps, loss, grad);
        CHECK(gc.checked > 0);
        CHECK(gc.max_rel_error <= 1e-4);
    }
}

TEST_CASE("checkpoint round trip is bit-exact") {
    ParamStore ps;
    std::mt19937_64 rng(9);
    Mlp::make(ps, "a", 3, 4, 2, rng);
    RnnCell::make(ps, "b", 2, 2, rng);
    std::stringstream ss;
    ps.save(ss);
    const auto back = ParamStore::load(ss);
    CHECK(back == ps);
    std::stringstream bad("NOTACKPT________");
    CHECK_THROWS(ParamStore::load(bad));
}

TEST_CASE("tape contract errors") {
    ParamStore ps;
    std::mt19937_64 rng(1);
    auto d = Dense::make(ps, "d", 2, 1, rng);
    Tape a(&ps), b(&ps);
    const auto xa = a.constant({1.0, 2.0});
    CHECK_THROWS_AS(b.add(xa, xa), ContractError);
    const auto y = d.forward(a, xa);
    a.backward(y);
    CHECK_THROWS_AS(a.backward(y), ContractError);
    CHECK_THROWS_AS(a.constant({1.0}), ContractError);
    Tape none;
    CHECK_THROWS_AS(none.param(0), ContractError);
    CHECK_THROWS_AS(ps.add("d.W", {1}), ContractError);
    Tape c(&ps);
    CHECK_THROWS_AS(c.backward(c.constant({1.0, 2.0})), ShapeError);
}

TEST_CASE("one_hot with a negative index is all zeros") {
    CHECK(one_hot(-1, 3) == Vec{0, 0, 0});
    CHECK(one_hot(2, 3) == Vec{0, 0, 1});
}
