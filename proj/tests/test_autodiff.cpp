#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <thread>
#include <vector>

#include "nreft/rng.hpp"
#include "nreft/tensor.hpp"

using namespace nreft;

namespace {

template <typename R>
Tensor<R> random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor<R> t = Tensor<R>::zeros(std::move(shape));
    for (size_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<R>(rng.gaussian() * scale);
    return t;
}

}  // namespace

TEST_CASE("matmul identity and scalar cases") {
    Tape<float> tape;
    auto eye = Tensor<float>::from_data({2, 2}, {1, 0, 0, 1});
    auto b = Tensor<float>::from_data({2, 2}, {3, 4, 5, 6});
    auto out = matmul(tape, eye, b);
    for (size_t i = 0; i < 4; ++i) CHECK(out.data()[i] == b.data()[i]);

    auto s1 = Tensor<float>::from_data({1, 1}, {2});
    auto s2 = Tensor<float>::from_data({1, 1}, {3});
    CHECK(matmul(tape, s1, s2).item() == doctest::Approx(6.0));
}

TEST_CASE("matmul shape mismatch throws") {
    Tape<float> tape;
    auto a = Tensor<float>::zeros({2, 3});
    auto b = Tensor<float>::zeros({2, 3});
    CHECK_THROWS_AS(matmul(tape, a, b), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences (3x4 by 4x2)") {
    Rng rng(1234);
    auto a = random_tensor<float>({3, 4}, rng);
    auto b = random_tensor<float>({4, 2}, rng);
    auto f = std::function([&b](Tape<float>& t, Tensor<float>& x) { return sum(t, matmul(t, x, b)); });
    CHECK(grad_check<float>(f, a, 1e-3));

    Rng rng64(99);
    auto a64 = random_tensor<double>({3, 4}, rng64);
    auto b64 = random_tensor<double>({4, 2}, rng64);
    auto f64 = std::function([&b64](Tape<double>& t, Tensor<double>& x) { return sum(t, matmul(t, x, b64)); });
    CHECK(grad_check<double>(f64, a64, 1e-3));
}

TEST_CASE("softmax cross entropy known values") {
    Tape<double> tape;
    auto uniform = Tensor<double>::from_data({4}, {0.7, 0.7, 0.7, 0.7});
    for (int target = 0; target < 4; ++target) {
        CHECK(softmax_cross_entropy(tape, uniform, target).item() == doctest::Approx(std::log(4.0)).epsilon(1e-9));
    }

    auto saturated = Tensor<double>::from_data({2}, {10.0, -10.0});
    CHECK(softmax_cross_entropy(tape, saturated, 0).item() == doctest::Approx(2.061e-9).epsilon(0.01));

    CHECK_THROWS_AS(softmax_cross_entropy(tape, uniform, 4), IndexError);
    CHECK_THROWS_AS(softmax_cross_entropy(tape, uniform, -1), IndexError);
}

TEST_CASE("softmax cross entropy gradient matches finite differences") {
    Rng rng(7);
    auto logits = random_tensor<double>({6}, rng, 2.0);
    auto f = std::function([](Tape<double>& t, Tensor<double>& x) { return softmax_cross_entropy(t, x, 2); });
    CHECK(grad_check<double>(f, logits, 1e-3));
}

TEST_CASE("backward requires a scalar connected loss") {
    Tape<float> tape;
    auto x = Tensor<float>::from_data({2}, {1, 2}, /*requires_grad=*/true);
    auto y = add(tape, x, x);
    CHECK_THROWS_AS(tape.backward(y), ContractError);

    Tape<float> t2;
    auto detached = Tensor<float>::from_data({1}, {3});
    CHECK_THROWS_AS(t2.backward(detached), ContractError);
}

TEST_CASE("backward of a sum of losses equals the sum of separate backwards") {
    Rng rng(11);
    auto make_x = [&]() {
        auto x = Tensor<double>::from_data({4}, {0.3, -0.8, 1.2, 0.5}, true);
        return x;
    };

    auto build = [](Tape<double>& t, Tensor<double>& x) {
        auto a = silu(t, x);
        auto l1 = sum(t, multiply(t, a, a));
        auto l2 = weighted_sum(t, x, std::vector<double>{1.0, 2.0, 3.0, 4.0});
        return std::pair(l1, l2);
    };

    auto x_joint = make_x();
    {
        Tape<double> t;
        auto [l1, l2] = build(t, x_joint);
        auto total = add(t, l1, l2);
        t.backward(total);
    }
    auto x_sep = make_x();
    {
        Tape<double> t;
        auto [l1, l2] = build(t, x_sep);
        t.backward(l1);
        // second pass re-runs the graph (the tape is consumed by backward)
        Tape<double> t2;
        auto [m1, m2] = build(t2, x_sep);
        (void)m1;
        t2.backward(m2);
    }
    for (size_t i = 0; i < x_joint.size(); ++i) {
        CHECK(x_joint.grad()[i] == doctest::Approx(x_sep.grad()[i]).epsilon(1e-12));
    }
    (void)rng;
}

TEST_CASE("grad_check closed form and negative control") {
    auto x = Tensor<double>::from_data({3}, {1, 2, 3});
    auto f = std::function([](Tape<double>& t, Tensor<double>& v) { return sum(t, multiply(t, v, v)); });
    // analytic gradient is [2, 4, 6]
    {
        Tape<double> t;
        auto xg = Tensor<double>::from_data({3}, {1, 2, 3}, true);
        auto loss = sum(t, multiply(t, xg, xg));
        t.backward(loss);
        CHECK(xg.grad()[0] == doctest::Approx(2.0));
        CHECK(xg.grad()[1] == doctest::Approx(4.0));
        CHECK(xg.grad()[2] == doctest::Approx(6.0));
    }
    CHECK(grad_check<double>(f, x, 1e-4));

    // deliberately corrupted backward rule: forward computes sum(x^2) but the
    // recorded rule propagates a wrong constant
    auto corrupted = std::function([](Tape<double>& t, Tensor<double>& v) {
        Tensor<double> out = Tensor<double>::zeros({1});
        double acc = 0.0;
        for (size_t i = 0; i < v.size(); ++i) acc += v.data()[i] * v.data()[i];
        out.data()[0] = acc;
        if (t.recording() && v.requires_grad()) {
            out.set_requires_grad(true);
            auto vn = v.node(), on = out.node();
            t.record([vn, on]() {
                for (size_t i = 0; i < vn->data.size(); ++i) vn->grad[i] += on->grad[0] * 0.123;
            });
        }
        return out;
    });
    CHECK_FALSE(grad_check<double>(corrupted, x, 1e-4));
}

TEST_CASE("primitive gradients match finite differences on randomized inputs") {
    // >= 20 random trials across the primitive set, 64-bit
    Rng rng(2026);
    for (int trial = 0; trial < 20; ++trial) {
        const int m = 2 + static_cast<int>(rng.below(3));
        const int k = 2 + static_cast<int>(rng.below(3));
        const int n = 2 + static_cast<int>(rng.below(3));

        auto b = random_tensor<double>({k, n}, rng);
        auto fm = std::function([&b](Tape<double>& t, Tensor<double>& x) { return sum(t, matmul(t, x, b)); });
        auto a = random_tensor<double>({m, k}, rng);
        CHECK(grad_check<double>(fm, a, 1e-5));

        auto fb = std::function([&a](Tape<double>& t, Tensor<double>& x) { return sum(t, matmul(t, a, x)); });
        auto b2 = random_tensor<double>({k, n}, rng);
        CHECK(grad_check<double>(fb, b2, 1e-5));

        auto other = random_tensor<double>({m, k}, rng);
        auto fadd = std::function([&other](Tape<double>& t, Tensor<double>& x) {
            return sum(t, multiply(t, add(t, x, other), x));
        });
        CHECK(grad_check<double>(fadd, random_tensor<double>({m, k}, rng), 1e-5));

        auto fsilu = std::function([](Tape<double>& t, Tensor<double>& x) { return sum(t, silu(t, x)); });
        CHECK(grad_check<double>(fsilu, random_tensor<double>({m, k}, rng), 1e-5));

        auto gain = random_tensor<double>({k}, rng, 0.5);
        auto fnorm = std::function([&gain](Tape<double>& t, Tensor<double>& x) {
            return sum(t, rmsnorm(t, x, gain));
        });
        CHECK(grad_check<double>(fnorm, random_tensor<double>({m, k}, rng), 1e-5));
        auto xfixed = random_tensor<double>({m, k}, rng);
        auto fgain = std::function([&xfixed](Tape<double>& t, Tensor<double>& g) {
            return sum(t, rmsnorm(t, xfixed, g));
        });
        CHECK(grad_check<double>(fgain, random_tensor<double>({k}, rng, 0.5), 1e-5));

        auto fsm = std::function([](Tape<double>& t, Tensor<double>& x) {
            auto weights = std::vector<double>(x.size(), 0.0);
            for (size_t i = 0; i < weights.size(); ++i) weights[i] = 0.1 * static_cast<double>(i + 1);
            return weighted_sum(t, causal_softmax(t, x), weights);
        });
        const int sq = 3 + static_cast<int>(rng.below(2));
        CHECK(grad_check<double>(fsm, random_tensor<double>({sq, sq}, rng), 1e-5));

        auto fexp = std::function([](Tape<double>& t, Tensor<double>& x) { return sum(t, exp(t, x)); });
        CHECK(grad_check<double>(fexp, random_tensor<double>({m}, rng, 0.3), 1e-5));

        auto ftr = std::function([](Tape<double>& t, Tensor<double>& x) {
            auto weights = std::vector<double>(x.size(), 0.25);
            return weighted_sum(t, reshape(t, transpose(t, x), {static_cast<int>(x.size())}), weights);
        });
        CHECK(grad_check<double>(ftr, random_tensor<double>({m, k}, rng), 1e-5));

        const int v = 4 + static_cast<int>(rng.below(4));
        std::vector<int> ids;
        for (int i = 0; i < 3; ++i) ids.push_back(static_cast<int>(rng.below(static_cast<uint64_t>(v))));
        auto femb = std::function([&ids](Tape<double>& t, Tensor<double>& table) {
            return sum(t, silu(t, embedding(t, table, ids)));
        });
        CHECK(grad_check<double>(femb, random_tensor<double>({v, k}, rng), 1e-5));

        std::vector<int> targets = {static_cast<int>(rng.below(static_cast<uint64_t>(v))),
                                    static_cast<int>(rng.below(static_cast<uint64_t>(v)))};
        auto fpick = std::function([&targets, v](Tape<double>& t, Tensor<double>& logits) {
            auto weights = std::vector<double>{-0.5, -0.5};
            return weighted_sum(t, log_softmax_pick(t, logits, targets, 1), weights);
        });
        CHECK(grad_check<double>(fpick, random_tensor<double>({4, v}, rng), 1e-5));

        auto fslice = std::function([&k](Tape<double>& t, Tensor<double>& x) {
            auto left = slice_cols(t, x, 0, 1);
            auto rest = slice_cols(t, x, 1, k - 1);
            return add(t, sum(t, multiply(t, left, left)), sum(t, rest));
        });
        CHECK(grad_check<double>(fslice, random_tensor<double>({m, k}, rng), 1e-5));

        auto fclamp = std::function([](Tape<double>& t, Tensor<double>& x) {
            return sum(t, clamp_max(t, exp(t, x), 1.5));
        });
        CHECK(grad_check<double>(fclamp, random_tensor<double>({m}, rng, 0.2), 1e-5));
    }
}

TEST_CASE("embedding rejects out-of-range ids") {
    Tape<double> tape;
    auto table = Tensor<double>::zeros({4, 3});
    std::vector<int> bad = {0, 4};
    CHECK_THROWS_AS(embedding(tape, table, bad), IndexError);
}

TEST_CASE("log_softmax_pick rejects out-of-vocabulary targets") {
    Tape<double> tape;
    auto logits = Tensor<double>::zeros({3, 5});
    std::vector<int> bad = {5};
    CHECK_THROWS_AS(log_softmax_pick(tape, logits, bad, 0), IndexError);
}

TEST_CASE("independent tapes run concurrently without interference") {
    // one tape per thread, no shared nodes
    auto run_graph = [](uint64_t seed) {
        Rng rng(seed);
        auto x = random_tensor<double>({4, 4}, rng);
        x.set_requires_grad(true);
        auto w = random_tensor<double>({4, 4}, rng);
        Tape<double> tape;
        auto loss = sum(tape, silu(tape, matmul(tape, x, w)));
        tape.backward(loss);
        double acc = 0.0;
        for (size_t i = 0; i < x.size(); ++i) acc += x.grad()[i];
        return acc;
    };
    std::vector<double> serial(4);
    for (uint64_t i = 0; i < 4; ++i) serial[i] = run_graph(100 + i);

    std::vector<double> parallel(4);
    std::vector<std::thread> pool;
    for (uint64_t i = 0; i < 4; ++i) {
        pool.emplace_back([&, i]() { parallel[i] = run_graph(100 + i); });
    }
    for (auto& t : pool) t.join();
    for (size_t i = 0; i < 4; ++i) CHECK(serial[i] == parallel[i]);
}

TEST_CASE("clamp_max counts and caps") {
    Tape<double> tape;
    auto x = Tensor<double>::from_data({4}, {0.5, 2.0, 10.0, 1.0});
    long count = 0;
    auto out = clamp_max(tape, x, 1.5, &count);
    CHECK(count == 2);
    CHECK(out.data()[0] == doctest::Approx(0.5));
    CHECK(out.data()[1] == doctest::Approx(1.5));
    CHECK(out.data()[2] == doctest::Approx(1.5));
}
