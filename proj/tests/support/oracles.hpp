#ifndef PYRABOX_TESTS_ORACLES_HPP_
#define PYRABOX_TESTS_ORACLES_HPP_

// Independent reference implementations used as test oracles. Nothing here
// may call into the production code paths it checks.

#include <algorithm>
#include <cmath>
#include <vector>

#include "pyrabox/anchors.hpp"
#include "pyrabox/box.hpp"
#include "pyrabox/config.hpp"
#include "pyrabox/loss.hpp"

namespace pyrabox::testing {

// IoU by counting subgrid cells of side `step`. Exact for boxes whose
// coordinates are multiples of `step`.
inline double rasterized_iou(const BoxPx& a, const BoxPx& b, double step = 0.5) {
  double lo_x = std::min(a.x, b.x), hi_x = std::max(a.x2(), b.x2());
  double lo_y = std::min(a.y, b.y), hi_y = std::max(a.y2(), b.y2());
  auto inside = [step](const BoxPx& box, double cx, double cy) {
    return cx >= box.x && cx < box.x2() && cy >= box.y && cy < box.y2();
  };
  long inter = 0, uni = 0;
  for (double y = lo_y; y < hi_y; y += step)
    for (double x = lo_x; x < hi_x; x += step) {
      double cx = x + step / 2, cy = y + step / 2;
      bool ia = inside(a, cx, cy), ib = inside(b, cx, cy);
      inter += ia && ib;
      uni += ia || ib;
    }
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

// O(n^2) NMS with explicit pairwise suppression flags.
inline std::vector<int> brute_force_nms_keep(const std::vector<Detection>& dets, double thr) {
  std::vector<int> order(dets.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dets[a].score > dets[b].score; });
  std::vector<bool> removed(dets.size(), false);
  std::vector<int> keep;
  for (int i : order) {
    if (removed[static_cast<size_t>(i)]) continue;
    keep.push_back(i);
    for (int j : order)
      if (!removed[static_cast<size_t>(j)] && j != i && iou(dets[i].box, dets[j].box) > thr)
        removed[static_cast<size_t>(j)] = true;
  }
  return keep;
}

// Literal reading of the context labeling rule: down-sample the anchor region
// by s_pa^k, then match against the face.
inline bool label_literal(const BoxPx& anchor, const BoxPx& face, int k, double s_pa, double thr) {
  double f = std::pow(s_pa, -k);
  BoxPx down = {anchor.x * f, anchor.y * f, anchor.w * f, anchor.h * f};
  return iou(down, face) > thr;
}

// Reformulated rule: scale the face up by s_pa^k instead.
inline bool label_scaled_face(const BoxPx& anchor, const BoxPx& face, int k, double s_pa, double thr) {
  double f = std::pow(s_pa, k);
  BoxPx up = {face.x * f, face.y * f, face.w * f, face.h * f};
  return iou(anchor, up) > thr;
}

// Symbolic substitution of the per-k transform constants: expected closed
// forms for s_pa = 2 with default shift/scale parameters.
inline std::array<double, 4> context_transform_expected(const std::array<double, 4>& base, int k) {
  double tx = base[0], ty = base[1], tw = base[2], th = base[3];
  if (k == 0) return {tx, ty, tw, th};
  if (k == 1) return {tx - tw / 2, ty - th / 2, 2 * tw, 2 * th};
  return {tx - 21.0 / 16.0 * tw, ty - th / 2, 7.0 / 2.0 * tw, 2 * th};
}

// Scalar-loop reference of the full multi-branch loss, written directly
// against the flat head-map arrays without the tensor engine.
inline double loss_reference(const std::vector<std::vector<float>>& head_maps,
                             const std::vector<int>& feat_h, const std::vector<int>& feat_w,
                             const PyramidLabelSet& labels, const PyramidAnchorConfig& cfg) {
  HeadLayout hl;
  double total = 0;
  for (int k = 0; k <= cfg.K; ++k) {
    const auto& lb = labels.branch[static_cast<size_t>(k)];
    double cls = 0, reg = 0;
    long n_pos = 0;
    std::vector<std::pair<double, long>> negs;
    long flat = 0;
    for (size_t l = 0; l < head_maps.size(); ++l) {
      long hw = static_cast<long>(feat_h[l]) * feat_w[l];
      auto ch = [&](int c, long p) { return static_cast<double>(head_maps[l][static_cast<size_t>(c * hw + p)]); };
      for (long p = 0; p < hw; ++p, ++flat) {
        auto lab = lb.p_star[static_cast<size_t>(flat)];
        if (lab == AnchorLabel::kIgnore) continue;
        double zp, zn;
        if (k == 0) {
          zp = ch(hl.face_pos_start(static_cast<int>(l)), p);
          for (int c = 1; c < hl.cp(static_cast<int>(l)); ++c)
            zp = std::max(zp, ch(hl.face_pos_start(static_cast<int>(l)) + c, p));
          zn = ch(hl.face_neg_start(static_cast<int>(l)), p);
          for (int c = 1; c < hl.cn(static_cast<int>(l)); ++c)
            zn = std::max(zn, ch(hl.face_neg_start(static_cast<int>(l)) + c, p));
        } else {
          int cs = k == 1 ? HeadLayout::head_cls_start : HeadLayout::body_cls_start;
          zn = ch(cs, p);
          zp = ch(cs + 1, p);
        }
        double m = std::max(zp, zn);
        double lse = m + std::log(std::exp(zp - m) + std::exp(zn - m));
        if (lab == AnchorLabel::kPositive) {
          ++n_pos;
          cls += lse - zp;
          int rs = HeadLayout::face_reg_start + 4 * k;
          for (int d = 0; d < 4; ++d) {
            double diff = (ch(rs + d, p) - lb.t_star[static_cast<size_t>(flat)][static_cast<size_t>(d)]) /
                          cfg.variance[static_cast<size_t>(d)];
            double a = std::abs(diff);
            reg += a < 1 ? 0.5 * diff * diff : a - 0.5;
          }
        } else {
          negs.emplace_back(lse - zn, flat);
        }
      }
    }
    long n_keep = cfg.hard_negative_mining
                      ? std::min<long>(static_cast<long>(negs.size()),
                                       static_cast<long>(cfg.negative_ratio * static_cast<double>(n_pos)))
                      : static_cast<long>(negs.size());
    std::sort(negs.begin(), negs.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (long i = 0; i < n_keep; ++i) cls += negs[static_cast<size_t>(i)].first;
    long n_cls = n_pos + n_keep;
    double lk = cfg.lambda_cls / static_cast<double>(std::max<long>(n_cls, 1)) * cls +
                1.0 / static_cast<double>(std::max<long>(n_pos, 1)) * reg;
    total += cfg.lambda_k[static_cast<size_t>(k)] * lk;
  }
  return total;
}

}  // namespace pyrabox::testing

#endif  // PYRABOX_TESTS_ORACLES_HPP_
