#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "headlab/autodiff.hpp"
#include "headlab/grad_check.hpp"
#include "headlab/rng.hpp"
#include "headlab/tensor.hpp"

using namespace headlab;

namespace {

Tensor randn_grad(Shape s, Rng& rng) {
    Tensor t = randn(std::move(s), rng);
    t.set_requires_grad(true);
    return t;
}

}  // namespace

TEST_CASE("tensor construction validates shape") {
    CHECK_THROWS_AS(Tensor::zeros({2, 0}), DimensionError);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0}), DimensionError);
    Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.at(1, 2) == 6.0);
    CHECK(t.grad.empty());
    t.set_requires_grad(true);
    CHECK(t.grad.size() == 6);
}

TEST_CASE("matmul identity and hand arithmetic") {
    Graph g;
    TensorId eye = g.leaf(Tensor::from({2, 2}, {1, 0, 0, 1}));
    TensorId a = g.leaf(Tensor::from({2, 2}, {5, 6, 7, 8}));
    TensorId c = g.matmul(eye, a);
    CHECK(g.value(c).values == std::vector<double>{5, 6, 7, 8});

    TensorId b = g.leaf(Tensor::from({2, 2}, {1, 2, 3, 4}));
    TensorId ones = g.leaf(Tensor::from({2, 1}, {1, 1}));
    TensorId d = g.matmul(b, ones);
    CHECK(g.value(d).values == std::vector<double>{3, 7});
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Graph g;
    TensorId a = g.leaf(Tensor::zeros({2, 3}));
    TensorId b = g.leaf(Tensor::zeros({2, 3}));
    try {
        g.matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient matches central finite differences") {
    Rng rng(17);
    Graph g;
    TensorId a = g.leaf(randn_grad({3, 4}, rng));
    TensorId b = g.leaf(randn_grad({4, 2}, rng));
    TensorId s = g.sum(g.matmul(a, b));
    CHECK(grad_check(g, s, 1e-6));
}

TEST_CASE("conv2d identity kernel reproduces input") {
    Rng rng(5);
    Graph g;
    TensorId x = g.leaf(randn({1, 1, 4, 4}, rng));
    Tensor k = Tensor::zeros({1, 1, 3, 3});
    k.at(0, 0, 1, 1) = 1.0;
    TensorId y = g.conv2d(x, g.leaf(k), 1);
    CHECK(g.value(y).values == g.value(x).values);
}

TEST_CASE("conv2d all-ones kernel sums 3x3 window") {
    Graph g;
    Tensor img = Tensor::zeros({1, 1, 5, 5});
    for (double& v : img.values) v = 2.5;
    Tensor k = Tensor::zeros({1, 1, 3, 3});
    for (double& v : k.values) v = 1.0;
    TensorId y = g.conv2d(g.leaf(img), g.leaf(k), 1);
    // interior pixel: 9 * c
    CHECK(g.value(y).at(0, 0, 2, 2) == Catch::Approx(9.0 * 2.5));
    // corner sees only a 2x2 window
    CHECK(g.value(y).at(0, 0, 0, 0) == Catch::Approx(4.0 * 2.5));
}

TEST_CASE("conv2d stride-2 output extents are ceil(h/2)") {
    Graph g;
    TensorId x = g.leaf(Tensor::zeros({1, 1, 5, 6}));
    TensorId k = g.leaf(Tensor::zeros({2, 1, 3, 3}));
    TensorId y = g.conv2d(x, k, 2);
    CHECK(g.value(y).shape == Shape{1, 2, 3, 3});
}

TEST_CASE("conv2d channel mismatch raises dimension error") {
    Graph g;
    TensorId x = g.leaf(Tensor::zeros({1, 2, 4, 4}));
    TensorId k = g.leaf(Tensor::zeros({1, 3, 3, 3}));
    CHECK_THROWS_AS(g.conv2d(x, k, 1), DimensionError);
}

TEST_CASE("conv2d gradient matches finite differences") {
    Rng rng(23);
    Graph g;
    TensorId x = g.leaf(randn_grad({1, 2, 5, 5}, rng));
    TensorId k = g.leaf(randn_grad({3, 2, 3, 3}, rng));
    TensorId s = g.sum(g.conv2d(x, k, 1));
    CHECK(grad_check(g, s, 1e-6));

    Graph g2;
    TensorId x2 = g2.leaf(randn_grad({2, 2, 5, 4}, rng));
    TensorId k2 = g2.leaf(randn_grad({3, 2, 3, 3}, rng));
    TensorId s2 = g2.sum(g2.conv2d(x2, k2, 2));
    CHECK(grad_check(g2, s2, 1e-6));
}

TEST_CASE("l2_normalize hand cases") {
    Graph g;
    TensorId v = g.leaf(Tensor::from({1, 2}, {3, 4}));
    TensorId n = g.l2_normalize(v, 1);
    CHECK(g.value(n).values[0] == Catch::Approx(0.6).epsilon(1e-12));
    CHECK(g.value(n).values[1] == Catch::Approx(0.8).epsilon(1e-12));

    TensorId z = g.leaf(Tensor::from({1, 2}, {0, 0}));
    TensorId nz = g.l2_normalize(z, 1);
    CHECK(g.value(nz).values == std::vector<double>{0, 0});
}

TEST_CASE("l2_normalize output has unit norm") {
    Rng rng(7);
    Graph g;
    TensorId v = g.leaf(randn({1, 10}, rng));
    TensorId n = g.l2_normalize(v, 1);
    double sq = 0.0;
    for (double x : g.value(n).values) sq += x * x;
    CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-12);
}

TEST_CASE("l2_normalize zero slice has zero gradient") {
    Graph g;
    Tensor t = Tensor::from({2, 2}, {0, 0, 3, 4});
    t.set_requires_grad(true);
    TensorId v = g.leaf(t);
    TensorId s = g.sum(g.l2_normalize(v, 1));
    g.backward(s);
    CHECK(g.value(v).grad[0] == 0.0);
    CHECK(g.value(v).grad[1] == 0.0);
    // the nonzero slice still carries the usual normalizing gradient
    CHECK(g.value(v).grad[2] != 0.0);
}

TEST_CASE("softmax_cross_entropy closed forms") {
    Graph g;
    TensorId u = g.leaf(Tensor::from({1, 4}, {0.7, 0.7, 0.7, 0.7}));
    TensorId l1 = g.softmax_cross_entropy(u, {2});
    CHECK(g.value(l1).values[0] == Catch::Approx(std::log(4.0)).epsilon(1e-12));

    TensorId two = g.leaf(Tensor::from({1, 2}, {10, -10}));
    TensorId l2 = g.softmax_cross_entropy(two, {0});
    CHECK(g.value(l2).values[0] == Catch::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-6));

    TensorId big = g.leaf(Tensor::from({1, 2}, {1000, 0}));
    TensorId l3 = g.softmax_cross_entropy(big, {0});
    CHECK(std::isfinite(g.value(l3).values[0]));
    CHECK(g.value(l3).values[0] >= 0.0);
    CHECK(g.value(l3).values[0] < 1e-12);
}

TEST_CASE("softmax_cross_entropy label out of range") {
    Graph g;
    TensorId z = g.leaf(Tensor::zeros({2, 3}));
    CHECK_THROWS_AS(g.softmax_cross_entropy(z, {0, 3}), IndexError);
    CHECK_THROWS_AS(g.softmax_cross_entropy(z, {-1, 0}), IndexError);
}

TEST_CASE("softmax rows sum to one for any finite logits") {
    Rng rng(11);
    for (int rep = 0; rep < 30; ++rep) {
        Tensor logits = randn({4, 6}, rng);
        const double spread = std::pow(10.0, rng.below(4));
        for (double& v : logits.values) v *= spread;
        Tensor p = softmax_rows(logits);
        for (std::size_t i = 0; i < 4; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < 6; ++j) row += p.at(i, j);
            CHECK(std::abs(row - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("grad_check on x squared") {
    Graph g;
    Tensor x = Tensor::from({1, 1}, {3.0});
    x.set_requires_grad(true);
    TensorId xi = g.leaf(x);
    TensorId y = g.sum(g.matmul(xi, xi));
    g.backward(y);
    CHECK(g.value(xi).grad[0] == Catch::Approx(6.0).epsilon(1e-12));
    CHECK(grad_check(g, y));
}

TEST_CASE("grad_check relu dead region") {
    Graph g;
    Tensor x = Tensor::from({1, 1}, {-1.0});
    x.set_requires_grad(true);
    TensorId xi = g.leaf(x);
    TensorId y = g.sum(g.relu(xi));
    g.backward(y);
    CHECK(g.value(xi).grad[0] == 0.0);
    CHECK(grad_check(g, y));
}

TEST_CASE("grad_check rejects non-scalar output") {
    Graph g;
    TensorId x = g.leaf(Tensor::zeros({2, 2}));
    TensorId y = g.relu(x);
    CHECK_THROWS_AS(grad_check(g, y), ContractError);
    CHECK_THROWS_AS(g.backward(y), ContractError);
}

TEST_CASE("finite differences agree for every differentiable op") {
    Rng rng(31);

    SECTION("relu") {
        Graph g;
        TensorId x = g.leaf(randn_grad({3, 4}, rng));
        CHECK(grad_check(g, g.sum(g.relu(x))));
    }
    SECTION("add_bias rank-2") {
        Graph g;
        TensorId x = g.leaf(randn_grad({3, 4}, rng));
        TensorId b = g.leaf(randn_grad({4}, rng));
        CHECK(grad_check(g, g.sum(g.relu(g.add_bias(x, b)))));
    }
    SECTION("add_bias rank-4") {
        Graph g;
        TensorId x = g.leaf(randn_grad({2, 3, 4, 4}, rng));
        TensorId b = g.leaf(randn_grad({3}, rng));
        CHECK(grad_check(g, g.sum(g.add_bias(x, b))));
    }
    SECTION("scale") {
        Graph g;
        TensorId x = g.leaf(randn_grad({2, 5}, rng));
        CHECK(grad_check(g, g.sum(g.scale(x, 20.0))));
    }
    SECTION("l2_normalize") {
        Graph g;
        TensorId x = g.leaf(randn_grad({3, 6}, rng));
        TensorId w = g.leaf(randn_grad({6, 2}, rng));
        CHECK(grad_check(g, g.sum(g.matmul(g.l2_normalize(x, 1), w))));
    }
    SECTION("global_avg_pool") {
        Graph g;
        TensorId x = g.leaf(randn_grad({2, 3, 4, 5}, rng));
        CHECK(grad_check(g, g.sum(g.global_avg_pool(x))));
    }
    SECTION("transpose and reshape") {
        Graph g;
        TensorId x = g.leaf(randn_grad({3, 4}, rng));
        TensorId w = g.leaf(randn_grad({3, 2}, rng));
        TensorId y = g.matmul(g.transpose(x), w);
        CHECK(grad_check(g, g.sum(g.reshape(y, {2, 4}))));
    }
    SECTION("softmax_cross_entropy") {
        Graph g;
        TensorId z = g.leaf(randn_grad({4, 5}, rng));
        CHECK(grad_check(g, g.softmax_cross_entropy(z, {0, 3, 4, 1})));
    }
}

TEST_CASE("backward accumulates over duplicated consumption") {
    Rng rng(41);
    Graph g;
    TensorId a = g.leaf(randn_grad({3, 3}, rng));
    // `a` feeds matmul twice; its gradient is the sum of both contributions.
    TensorId y = g.sum(g.matmul(a, a));
    CHECK(grad_check(g, y, 1e-5));
}

TEST_CASE("forward and backward are deterministic") {
    auto build = [](Graph& g) {
        Rng rng(99);
        TensorId x = g.leaf(randn_grad({4, 6}, rng));
        TensorId w = g.leaf(randn_grad({5, 6}, rng));
        TensorId logits = g.matmul(g.l2_normalize(x, 1), g.transpose(g.l2_normalize(w, 1)));
        TensorId loss = g.softmax_cross_entropy(g.scale(logits, 20.0), {0, 1, 2, 3});
        g.backward(loss);
        return std::pair{x, loss};
    };
    Graph g1, g2;
    auto [x1, l1] = build(g1);
    auto [x2, l2] = build(g2);
    CHECK(g1.value(l1).values == g2.value(l2).values);
    CHECK(g1.value(x1).grad == g2.value(x2).grad);
}

TEST_CASE("mlp with cosine head and cross entropy passes grad_check") {
    Rng rng(53);
    Graph g;
    const std::size_t n = 5, in = 4, hidden = 6, d = 3, m = 4;
    TensorId x = g.leaf(randn({n, in}, rng));
    TensorId w1 = g.leaf(randn_grad({hidden, in}, rng));
    TensorId b1 = g.leaf(randn_grad({hidden}, rng));
    TensorId w2 = g.leaf(randn_grad({d, hidden}, rng));
    TensorId b2 = g.leaf(randn_grad({d}, rng));
    TensorId w = g.leaf(randn_grad({m, d}, rng));

    TensorId h = g.relu(g.add_bias(g.matmul(x, g.transpose(w1)), b1));
    TensorId f = g.add_bias(g.matmul(h, g.transpose(w2)), b2);
    TensorId logits = g.matmul(g.l2_normalize(f, 1), g.transpose(g.l2_normalize(w, 1)));
    TensorId loss = g.softmax_cross_entropy(g.scale(logits, 8.0), {0, 1, 2, 3, 0});
    CHECK(grad_check(g, loss, 1e-5));
}

TEST_CASE("forward outputs stay finite on finite inputs") {
    Rng rng(61);
    Graph g;
    Tensor big = randn({3, 4}, rng);
    for (double& v : big.values) v *= 500.0;
    TensorId x = g.leaf(big);
    TensorId w = g.leaf(randn({5, 4}, rng));
    TensorId logits = g.matmul(x, g.transpose(w));
    TensorId loss = g.softmax_cross_entropy(logits, {0, 1, 2});
    CHECK(all_finite(g.value(logits)));
    CHECK(all_finite(g.value(loss)));
}
