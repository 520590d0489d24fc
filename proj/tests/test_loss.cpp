#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "pyrabox/gradcheck.hpp"
#include "pyrabox/loss.hpp"
#include "support/oracles.hpp"

using namespace pyrabox;

namespace {

struct LossFixture {
  AnchorGrid grid;
  PyramidLabelSet labels;
  std::vector<std::vector<float>> flat;      // per layer, 20 * h * w
  std::vector<Tensor<double>> maps;          // same values as tensors
  PyramidAnchorConfig cfg;
};

LossFixture make_fixture(std::uint64_t seed, std::vector<BoxPx> faces = {}) {
  LossFixture f;
  f.grid = build_grid({3, 2, 1, 1, 1, 1}, {3, 2, 1, 1, 1, 1});  // 17 anchors
  if (faces.empty())
    faces = {{-6, -6, 16, 16}, {0, 0, 30, 30}, {-10, -10, 60, 60}};
  f.labels = label_pyramid(f.grid, faces, f.cfg);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-2.f, 2.f);
  for (int l = 0; l < f.grid.num_layers(); ++l) {
    int64_t hw = static_cast<int64_t>(f.grid.feat_h[l]) * f.grid.feat_w[l];
    std::vector<float> v(static_cast<size_t>(kHeadChannels * hw));
    for (auto& x : v) x = d(rng);
    Tensor<double> t({1, kHeadChannels, f.grid.feat_h[l], f.grid.feat_w[l]});
    for (int64_t i = 0; i < t.size(); ++i) t[i] = v[static_cast<size_t>(i)];
    f.flat.push_back(std::move(v));
    f.maps.push_back(std::move(t));
  }
  return f;
}

}  // namespace

TEST_CASE("multi-branch loss matches the scalar-loop reference") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    LossFixture f = make_fixture(seed);
    auto lb = pyramid_loss(f.maps, f.grid, f.labels, f.cfg);
    double ref = testing::loss_reference(f.flat, f.grid.feat_h, f.grid.feat_w, f.labels, f.cfg) -
                 // reference returns the lambda_k-weighted total already
                 0.0;
    CHECK(lb.total_value() == Catch::Approx(ref).margin(1e-6));
  }
}

TEST_CASE("loss agrees with the reference without hard-negative mining") {
  LossFixture f = make_fixture(4);
  f.cfg.hard_negative_mining = false;
  f.labels = label_pyramid(f.grid, {{-6, -6, 16, 16}, {0, 0, 30, 30}, {-10, -10, 60, 60}}, f.cfg);
  auto lb = pyramid_loss(f.maps, f.grid, f.labels, f.cfg);
  double ref = testing::loss_reference(f.flat, f.grid.feat_h, f.grid.feat_w, f.labels, f.cfg);
  CHECK(lb.total_value() == Catch::Approx(ref).margin(1e-6));
}

TEST_CASE("perfect regression predictions zero the localization term") {
  LossFixture f = make_fixture(5);
  // overwrite the regression channels with the exact targets
  for (int k = 0; k <= f.cfg.K; ++k) {
    const auto& lb = f.labels.branch[static_cast<size_t>(k)];
    int64_t flat = 0;
    for (int l = 0; l < f.grid.num_layers(); ++l) {
      int64_t hw = static_cast<int64_t>(f.grid.feat_h[l]) * f.grid.feat_w[l];
      for (int64_t p = 0; p < hw; ++p, ++flat) {
        if (lb.p_star[static_cast<size_t>(flat)] != AnchorLabel::kPositive) continue;
        for (int d = 0; d < 4; ++d)
          f.maps[static_cast<size_t>(l)][(HeadLayout::reg_start(k) + d) * hw + p] =
              lb.t_star[static_cast<size_t>(flat)][static_cast<size_t>(d)];
      }
    }
  }
  auto out = pyramid_loss(f.maps, f.grid, f.labels, f.cfg);
  for (const auto& t : out.per_k) CHECK(t.reg_sum == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("uniform zero logits give log(2) per sampled anchor") {
  LossFixture f = make_fixture(6);
  for (auto& m : f.maps)
    for (int64_t i = 0; i < m.size(); ++i) m[i] = 0.0;
  auto out = pyramid_loss(f.maps, f.grid, f.labels, f.cfg);
  for (const auto& t : out.per_k)
    CHECK(t.cls_sum == Catch::Approx(std::log(2.0) * static_cast<double>(t.n_cls)).margin(1e-9));
}

TEST_CASE("doubling lambda doubles exactly the classification part") {
  LossFixture f = make_fixture(7);
  auto base = pyramid_loss(f.maps, f.grid, f.labels, f.cfg);
  PyramidAnchorConfig c2 = f.cfg;
  c2.lambda_cls = 2.0;
  auto labels2 = label_pyramid(f.grid, {{-6, -6, 16, 16}, {0, 0, 30, 30}, {-10, -10, 60, 60}}, c2);
  auto twice = pyramid_loss(f.maps, f.grid, labels2, c2);
  for (size_t k = 0; k < base.per_k.size(); ++k) {
    const auto& a = base.per_k[k];
    const auto& b = twice.per_k[k];
    double cls_a = a.cls_sum / static_cast<double>(std::max<int64_t>(a.n_cls, 1));
    double cls_b = b.cls_sum / static_cast<double>(std::max<int64_t>(b.n_cls, 1));
    CHECK(cls_b == Catch::Approx(cls_a).margin(1e-12));  // raw sums unchanged
    CHECK(b.value - 2.0 * cls_b ==
          Catch::Approx(a.value - cls_a).margin(1e-9));  // only the lambda weight moved
  }
}

TEST_CASE("zeroing the context branch weights reduces to the face branch") {
  LossFixture f = make_fixture(8);
  PyramidAnchorConfig c = f.cfg;
  c.lambda_k = {1.0, 0.0, 0.0};
  auto full = pyramid_loss(f.maps, f.grid, f.labels, c);
  CHECK(full.total_value() == Catch::Approx(full.per_k[0].value).margin(1e-9));
  PyramidAnchorConfig half = f.cfg;  // defaults 1, 0.5, 0.25
  auto d = pyramid_loss(f.maps, f.grid, f.labels, half);
  CHECK(d.total_value() ==
        Catch::Approx(d.per_k[0].value + 0.5 * d.per_k[1].value + 0.25 * d.per_k[2].value).margin(1e-9));
}

TEST_CASE("loss is invariant to the order of the ground-truth list") {
  std::vector<BoxPx> faces = {{-6, -6, 16, 16}, {0, 0, 30, 30}, {-10, -10, 60, 60}};
  LossFixture a = make_fixture(9, faces);
  std::vector<BoxPx> shuffled = {faces[2], faces[0], faces[1]};
  LossFixture b = make_fixture(9, shuffled);
  auto la = pyramid_loss(a.maps, a.grid, a.labels, a.cfg);
  auto lc = pyramid_loss(b.maps, b.grid, b.labels, b.cfg);
  CHECK(la.total_value() == Catch::Approx(lc.total_value()).margin(1e-9));
}

TEST_CASE("loss gradients match finite differences") {
  LossFixture f = make_fixture(10);
  f.cfg.hard_negative_mining = false;  // keep the anchor selection perturbation-stable
  auto rep = gradcheck("pyramid_loss", f.maps, [&](std::vector<Tensor<double>>& in) {
    return pyramid_loss(in, f.grid, f.labels, f.cfg).total;
  });
  INFO(rep.max_rel_err);
  CHECK(rep.pass);
}

TEST_CASE("loss validates head map shapes against the grid") {
  LossFixture f = make_fixture(11);
  auto bad = f.maps;
  bad[0] = Tensor<double>::zeros({1, kHeadChannels, 2, 2});  // grid expects 3x3
  CHECK_THROWS_AS(pyramid_loss(bad, f.grid, f.labels, f.cfg), contract_error);
  bad = f.maps;
  bad[1] = Tensor<double>::zeros({1, 19, 2, 2});
  CHECK_THROWS_AS(pyramid_loss(bad, f.grid, f.labels, f.cfg), contract_error);
  bad = f.maps;
  bad.pop_back();
  CHECK_THROWS_AS(pyramid_loss(bad, f.grid, f.labels, f.cfg), contract_error);
}
