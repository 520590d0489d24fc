#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "pyrabox/gradcheck.hpp"
#include "pyrabox/ops.hpp"

using namespace pyrabox;

namespace {

Tensor<double> randu(std::vector<int> shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = d(rng);
  return t;
}

}  // namespace

TEST_CASE("conv2d identity-shaped kernel scales input") {
  Tensor<double> x = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  Tensor<double> w = Tensor<double>::full({1, 1, 1, 1}, 2.0);
  Tensor<double> b = Tensor<double>::zeros({1});
  Tensor<double> y = conv2d(x, w, b);
  REQUIRE(y.shape() == std::vector<int>{1, 1, 3, 3});
  for (int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == 2.0);
}

TEST_CASE("conv2d same-padding output arithmetic") {
  std::mt19937_64 rng(1);
  Tensor<double> x = randu({1, 1, 4, 4}, rng);
  Tensor<double> w = randu({1, 1, 3, 3}, rng);
  Tensor<double> y = conv2d(x, w, Tensor<double>(), {1, 1, 1});
  CHECK(y.dim(2) == 4);
  CHECK(y.dim(3) == 4);
}

TEST_CASE("conv2d with 1x1 identity kernel and zero bias is the identity map") {
  std::mt19937_64 rng(2);
  Tensor<double> x = randu({2, 1, 5, 5}, rng);
  Tensor<double> w = Tensor<double>::full({1, 1, 1, 1}, 1.0);
  Tensor<double> b = Tensor<double>::zeros({1});
  Tensor<double> y = conv2d(x, w, b);
  for (int64_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv2d shape mismatch raises a dimension error") {
  Tensor<double> x = Tensor<double>::zeros({1, 3, 4, 4});
  Tensor<double> w = Tensor<double>::zeros({1, 2, 3, 3});
  CHECK_THROWS_AS(conv2d(x, w, Tensor<double>()), contract_error);
}

TEST_CASE("conv2d gradients match finite differences") {
  std::mt19937_64 rng(7);
  Tensor<double> x = randu({2, 3, 8, 8}, rng);
  Tensor<double> w = randu({4, 3, 3, 3}, rng, -0.5, 0.5);
  Tensor<double> b = randu({4}, rng);
  auto rep = gradcheck("conv2d", {x, w, b}, [](std::vector<Tensor<double>>& in) {
    return sum(conv2d(in[0], in[1], in[2], {1, 1, 1}));
  });
  INFO(rep.max_rel_err);
  CHECK(rep.pass);
}

TEST_CASE("backward through sum gives all-ones gradient") {
  Tensor<double> x = Tensor<double>::from({2, 2}, {1, 2, 3, 4}, true);
  Graph<double> g;
  Tensor<double> loss = sum(x);
  g.backward(loss);
  for (int64_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == 1.0);
}

TEST_CASE("relu subgradient is 0 at negative inputs") {
  Tensor<double> x = Tensor<double>::from({1, 1, 1, 2}, {-1, 2}, true);
  Graph<double> g;
  Tensor<double> loss = sum(relu(x));
  g.backward(loss);
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
}

TEST_CASE("composite conv-relu-sum matches finite differences") {
  std::mt19937_64 rng(11);
  Tensor<double> x = randu({1, 2, 6, 6}, rng);
  Tensor<double> w = randu({3, 2, 3, 3}, rng, -0.5, 0.5);
  auto rep = gradcheck("conv_relu_sum", {x, w}, [](std::vector<Tensor<double>>& in) {
    return sum(relu(conv2d(in[0], in[1], Tensor<double>(), {1, 1, 1})));
  });
  CHECK(rep.pass);
}

TEST_CASE("channel_group_max picks max and routes gradient to argmax only") {
  Tensor<double> x = Tensor<double>::from({1, 5, 1, 1}, {0.5, 0.2, 0.9, 0.4, 0.1}, true);
  Graph<double> g;
  Tensor<double> m = channel_group_max(x, 1, 3);
  CHECK(m[0] == 0.9);
  Tensor<double> loss = sum(m);
  g.backward(loss);
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 1.0);
  CHECK(x.grad()[3] == 0.0);
}

TEST_CASE("channel_group_max ties break to the lowest channel index") {
  Tensor<double> x = Tensor<double>::from({1, 3, 1, 1}, {0.7, 0.7, 0.1}, true);
  Graph<double> g;
  Tensor<double> loss = sum(channel_group_max(x, 0, 3));
  g.backward(loss);
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("channel_group_max gradient sums to exactly 1 per output position") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor<double> x = randu({1, 6, 3, 3}, rng);
    x.set_requires_grad(true);
    Graph<double> g;
    Tensor<double> loss = sum(channel_group_max(x, 1, 4));
    g.backward(loss);
    for (int p = 0; p < 9; ++p) {
      double s = 0;
      for (int c = 0; c < 6; ++c) s += x.grad()[static_cast<size_t>(c * 9 + p)];
      CHECK(s == 1.0);
    }
  }
}

TEST_CASE("channel_group_max rejects bad groups") {
  Tensor<double> x = Tensor<double>::zeros({1, 4, 2, 2});
  CHECK_THROWS_AS(channel_group_max(x, 2, 3), contract_error);
  CHECK_THROWS_AS(channel_group_max(x, 0, 0), contract_error);
}

TEST_CASE("l2_rescale normalizes a 3-4-5 channel vector") {
  Tensor<double> x = Tensor<double>::from({1, 2, 1, 1}, {3, 4});
  Tensor<double> gamma = Tensor<double>::from({2}, {1, 1});
  Tensor<double> y = l2_rescale(x, gamma, 0.0);
  CHECK(y[0] == Catch::Approx(0.6).margin(1e-12));
  CHECK(y[1] == Catch::Approx(0.8).margin(1e-12));
}

TEST_CASE("l2_rescale gradcheck") {
  std::mt19937_64 rng(5);
  Tensor<double> x = randu({1, 3, 2, 2}, rng, 0.2, 1.0);
  Tensor<double> gamma = randu({3}, rng, 0.5, 2.0);
  auto rep = gradcheck("l2_rescale", {x, gamma}, [](std::vector<Tensor<double>>& in) {
    Tensor<double> y = l2_rescale(in[0], in[1]);
    return sum(mul(y, y));
  });
  INFO(rep.max_rel_err);
  CHECK(rep.pass);
}

TEST_CASE("upsample2x nearest block-repeats") {
  Tensor<double> x = Tensor<double>::from({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor<double> y = upsample2x(x);
  std::vector<double> expected = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  for (int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == expected[static_cast<size_t>(i)]);
}

TEST_CASE("upsample2x gradchecks in both modes") {
  std::mt19937_64 rng(6);
  for (auto mode : {UpsampleMode::kNearest, UpsampleMode::kBilinear}) {
    Tensor<double> x = randu({1, 2, 3, 3}, rng);
    auto rep = gradcheck("upsample2x", {x}, [mode](std::vector<Tensor<double>>& in) {
      Tensor<double> y = upsample2x(in[0], mode);
      return sum(mul(y, y));
    });
    CHECK(rep.pass);
  }
}

TEST_CASE("maxpool2x requires even extents and gradchecks") {
  CHECK_THROWS_AS(maxpool2x(Tensor<double>::zeros({1, 1, 3, 4})), contract_error);
  std::mt19937_64 rng(8);
  Tensor<double> x = randu({1, 2, 4, 4}, rng);
  auto rep = gradcheck("maxpool2x", {x}, [](std::vector<Tensor<double>>& in) {
    return sum(mul(maxpool2x(in[0]), maxpool2x(in[0])));
  });
  CHECK(rep.pass);
}

TEST_CASE("softmax_channels sums to one and gradchecks") {
  std::mt19937_64 rng(9);
  Tensor<double> x = randu({1, 4, 2, 2}, rng);
  Tensor<double> p = softmax_channels(x, 1, 2);
  for (int pos = 0; pos < 4; ++pos)
    CHECK(p[pos] + p[4 + pos] == Catch::Approx(1.0).margin(1e-12));
  auto rep = gradcheck("softmax_channels", {x}, [](std::vector<Tensor<double>>& in) {
    Tensor<double> s = softmax_channels(in[0], 0, 4);
    return sum(mul(s, s));
  });
  CHECK(rep.pass);
}

TEST_CASE("gradcheck harness agrees on a quadratic") {
  Tensor<double> x = Tensor<double>::scalar(3.0, true);
  Graph<double> g;
  Tensor<double> loss = sum(mul(x, x));
  g.backward(loss);
  CHECK(x.grad()[0] == Catch::Approx(6.0).margin(1e-12));
  auto rep = gradcheck("square", {Tensor<double>::scalar(3.0)}, [](std::vector<Tensor<double>>& in) {
    return sum(mul(in[0], in[0]));
  });
  CHECK(rep.max_rel_err < 1e-8);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor<double> x = Tensor<double>::zeros({2, 2}, true);
  Graph<double> g;
  Tensor<double> y = relu(x);
  CHECK_THROWS_AS(g.backward(y), contract_error);
}

TEST_CASE("backward is deterministic for a fixed seed") {
  auto run = [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor<double> x = randu({1, 2, 6, 6}, rng);
    Tensor<double> w = randu({2, 2, 3, 3}, rng);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    Graph<double> g;
    Tensor<double> loss = sum(relu(conv2d(x, w, Tensor<double>(), {1, 1, 1})));
    g.backward(loss);
    return std::make_pair(x.grad(), w.grad());
  };
  auto a = run(42), b = run(42);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("slice and concat are mutually consistent under gradients") {
  std::mt19937_64 rng(10);
  Tensor<double> x = randu({1, 6, 2, 2}, rng);
  auto rep = gradcheck("slice_concat", {x}, [](std::vector<Tensor<double>>& in) {
    Tensor<double> a = slice_channels(in[0], 0, 2);
    Tensor<double> b = slice_channels(in[0], 2, 4);
    Tensor<double> y = concat_channels<double>({a, b});
    return sum(mul(y, y));
  });
  CHECK(rep.pass);
}
