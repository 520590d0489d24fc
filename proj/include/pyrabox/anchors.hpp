#ifndef PYRABOX_ANCHORS_HPP_
#define PYRABOX_ANCHORS_HPP_

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "pyrabox/box.hpp"
#include "pyrabox/errors.hpp"

namespace pyrabox {

struct AnchorLayerSpec {
  int layer_index = 0;  // 0..5
  int stride = 4;       // pixels at full scale: 4, 8, 16, 32, 64, 128
  int scale = 16;       // anchor side = 2^(4+i) = 4 * stride
};

// One square anchor per feature cell per layer, centered at
// ((col+0.5)*stride, (row+0.5)*stride), side = layer scale. Not clipped.
struct AnchorGrid {
  std::vector<AnchorLayerSpec> layers;
  std::vector<int> feat_h, feat_w;          // per layer
  std::vector<std::vector<BoxPx>> boxes;    // per layer, row-major

  int num_layers() const { return static_cast<int>(layers.size()); }
  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& l : boxes) n += static_cast<int64_t>(l.size());
    return n;
  }
  int64_t layer_offset(int l) const {
    int64_t n = 0;
    for (int i = 0; i < l; ++i) n += static_cast<int64_t>(boxes[i].size());
    return n;
  }
};

// Grid from explicit per-layer feature sizes (what a built network reports).
inline AnchorGrid build_grid(const std::vector<int>& feat_h, const std::vector<int>& feat_w) {
  if (feat_h.size() != feat_w.size() || feat_h.empty())
    throw contract_error("build_grid: feature size lists must be non-empty and equal length");
  AnchorGrid g;
  for (size_t i = 0; i < feat_h.size(); ++i) {
    AnchorLayerSpec spec;
    spec.layer_index = static_cast<int>(i);
    spec.stride = 4 << i;
    spec.scale = 16 << i;
    g.layers.push_back(spec);
    g.feat_h.push_back(feat_h[i]);
    g.feat_w.push_back(feat_w[i]);
    std::vector<BoxPx> layer;
    layer.reserve(static_cast<size_t>(feat_h[i]) * feat_w[i]);
    for (int r = 0; r < feat_h[i]; ++r)
      for (int c = 0; c < feat_w[i]; ++c) {
        double cx = (c + 0.5) * spec.stride, cy = (r + 0.5) * spec.stride;
        layer.push_back({cx - spec.scale / 2.0, cy - spec.scale / 2.0,
                         static_cast<double>(spec.scale), static_cast<double>(spec.scale)});
      }
    g.boxes.push_back(std::move(layer));
  }
  return g;
}

// Grid from an input size with the canonical 6 strides; requires exact
// divisibility so that feature sizes are input/stride at every layer.
inline AnchorGrid build_grid(int input_size, int num_layers = 6) {
  int largest_stride = 4 << (num_layers - 1);
  if (input_size <= 0 || input_size % largest_stride != 0)
    throw config_error("build_grid: input size " + std::to_string(input_size) +
                       " not divisible by largest stride " + std::to_string(largest_stride));
  std::vector<int> fh, fw;
  for (int i = 0; i < num_layers; ++i) {
    fh.push_back(input_size / (4 << i));
    fw.push_back(input_size / (4 << i));
  }
  return build_grid(fh, fw);
}

struct PyramidAnchorConfig {
  double s_pa = 2.0;
  int K = 2;
  double threshold = 0.35;
  double lambda_cls = 1.0;                          // cls/reg balance inside each branch
  std::vector<double> lambda_k = {1.0, 0.5, 0.25};  // branch weights
  double min_face_side = 8.0;                       // smaller faces are ignore-marked
  bool best_anchor_guarantee = true;                // k = 0 only
  std::array<double, 4> variance = {1.0, 1.0, 1.0, 1.0};
  bool hard_negative_mining = true;
  double negative_ratio = 3.0;

  void validate() const {
    if (s_pa <= 1.0) throw config_error("s_pa must exceed 1");
    if (K < 0) throw config_error("K must be non-negative");
    if (threshold <= 0 || threshold >= 1) throw config_error("threshold must lie in (0,1)");
    if (lambda_cls <= 0) throw config_error("lambda must be positive");
    if (static_cast<int>(lambda_k.size()) < K + 1) throw config_error("lambda_k needs K+1 entries");
    for (double l : lambda_k)
      if (l < 0) throw config_error("lambda_k entries must be non-negative");
  }
};

// Per-k shift/scale constants of the context-box target transform. delta_y
// may be the symbolic value t_h* of the base encoding.
struct ContextTransformParams {
  double delta_x = 0;
  double delta_y = 0;
  bool delta_y_is_th = false;  // delta_y := base t_h*
  double s_w = 1, s_h = 1;

  static ContextTransformParams defaults(int k) {
    if (k < 2) return {0, 0, false, 1, 1};
    return {0, 0, true, 7.0 / 8.0, 1};
  }
};

// Base Fast R-CNN box parameterization of `face` relative to `anchor`.
inline std::array<double, 4> encode_base(const BoxPx& anchor, const BoxPx& face) {
  if (anchor.area() <= 0) throw contract_error("encode: anchor must have positive area");
  return {(face.cx() - anchor.cx()) / anchor.w, (face.cy() - anchor.cy()) / anchor.h,
          std::log(face.w / anchor.w), std::log(face.h / anchor.h)};
}

// Context transform applied on top of the base encoding. Width/height stay in
// log space; s_pa^k and s_{w,k}/s_{h,k} multiply the log-space coordinates.
inline std::array<double, 4> encode_targets(const BoxPx& anchor, const BoxPx& face, int k,
                                            const ContextTransformParams& p, double s_pa = 2.0) {
  auto t = encode_base(anchor, face);
  double spak = std::pow(s_pa, k);
  double dy = p.delta_y_is_th ? t[3] : p.delta_y;
  return {t[0] + (1 - spak) / 2 * t[2] * p.s_w + p.delta_x,
          t[1] + (1 - spak) / 2 * t[3] * p.s_h + dy,
          spak * t[2] * p.s_w - 2 * p.delta_x,
          spak * t[3] * p.s_h - 2 * dy};
}

// Inverse of the base encoding; face-branch (k = 0) decode.
inline BoxPx decode_box(const BoxPx& anchor, const std::array<double, 4>& t) {
  if (anchor.area() <= 0) throw contract_error("decode: anchor must have positive area");
  double tw = std::clamp(t[2], -10.0, 10.0);
  double th = std::clamp(t[3], -10.0, 10.0);
  double cx = anchor.cx() + t[0] * anchor.w;
  double cy = anchor.cy() + t[1] * anchor.h;
  double w = anchor.w * std::exp(tw);
  double h = anchor.h * std::exp(th);
  return {cx - w / 2, cy - h / 2, w, h};
}

// Anchor states per branch. kIgnore anchors take part in neither the positive
// nor the negative pool.
enum class AnchorLabel : std::int8_t { kNegative = 0, kPositive = 1, kIgnore = -1 };

struct BranchLabels {
  std::vector<AnchorLabel> p_star;                  // flat, layer-major
  std::vector<std::array<double, 4>> t_star;        // valid where positive
  std::vector<int> matched_face;                    // -1 where not positive
};

struct PyramidLabelSet {
  std::vector<BranchLabels> branch;  // size K+1
  int64_t num_anchors = 0;

  int64_t positives(int k) const {
    int64_t n = 0;
    for (auto l : branch[k].p_star) n += (l == AnchorLabel::kPositive);
    return n;
  }
};

// Context labeling: anchor is positive at level k when the anchor
// region down-sampled by s_pa^k overlaps some face above threshold. The
// matched face is the max-IoU one (lower face index on ties). For k = 0 every
// non-ignored face additionally claims its single best-IoU anchor.
inline PyramidLabelSet label_pyramid(const AnchorGrid& grid, const std::vector<BoxPx>& faces,
                                     const PyramidAnchorConfig& cfg) {
  cfg.validate();
  PyramidLabelSet out;
  out.num_anchors = grid.total_count();
  out.branch.resize(static_cast<size_t>(cfg.K) + 1);

  std::vector<bool> ignored(faces.size());
  for (size_t f = 0; f < faces.size(); ++f)
    ignored[f] = faces[f].side() < cfg.min_face_side || faces[f].area() <= 0;

  for (int k = 0; k <= cfg.K; ++k) {
    BranchLabels& lb = out.branch[static_cast<size_t>(k)];
    lb.p_star.assign(static_cast<size_t>(out.num_anchors), AnchorLabel::kNegative);
    lb.t_star.assign(static_cast<size_t>(out.num_anchors), {0, 0, 0, 0});
    lb.matched_face.assign(static_cast<size_t>(out.num_anchors), -1);
    double down = 1.0 / std::pow(cfg.s_pa, k);
    auto params = ContextTransformParams::defaults(k);

    int64_t idx = 0;
    std::vector<double> best_face_iou(faces.size(), 0.0);
    std::vector<int64_t> best_face_anchor(faces.size(), -1);
    for (int l = 0; l < grid.num_layers(); ++l) {
      for (const BoxPx& anchor : grid.boxes[static_cast<size_t>(l)]) {
        BoxPx scaled = scale_box(anchor, down);
        int best = -1, best_ignored = -1;
        double best_iou = 0.0, best_ignored_iou = 0.0;
        for (size_t f = 0; f < faces.size(); ++f) {
          double v = iou(scaled, faces[f]);
          if (ignored[f]) {
            if (v > best_ignored_iou) { best_ignored_iou = v; best_ignored = static_cast<int>(f); }
            continue;
          }
          if (v > best_iou) { best_iou = v; best = static_cast<int>(f); }
          if (k == 0 && (v > best_face_iou[f] || best_face_anchor[f] < 0)) {
            best_face_iou[f] = v;
            best_face_anchor[f] = idx;
          }
        }
        if (best >= 0 && best_iou > cfg.threshold) {
          lb.p_star[static_cast<size_t>(idx)] = AnchorLabel::kPositive;
          lb.matched_face[static_cast<size_t>(idx)] = best;
          lb.t_star[static_cast<size_t>(idx)] = encode_targets(anchor, faces[static_cast<size_t>(best)], k, params, cfg.s_pa);
        } else if (best_ignored >= 0 && best_ignored_iou > cfg.threshold) {
          lb.p_star[static_cast<size_t>(idx)] = AnchorLabel::kIgnore;
        }
        ++idx;
      }
    }

    if (k == 0 && cfg.best_anchor_guarantee) {
      for (size_t f = 0; f < faces.size(); ++f) {
        if (ignored[f] || best_face_anchor[f] < 0) continue;
        bool covered = false;
        for (int64_t a = 0; a < out.num_anchors && !covered; ++a)
          covered = lb.p_star[static_cast<size_t>(a)] == AnchorLabel::kPositive &&
                    lb.matched_face[static_cast<size_t>(a)] == static_cast<int>(f);
        if (covered) continue;
        int64_t a = best_face_anchor[f];
        // recover the anchor box from its flat index
        int layer = 0;
        int64_t rem = a;
        while (rem >= static_cast<int64_t>(grid.boxes[static_cast<size_t>(layer)].size()))
          rem -= static_cast<int64_t>(grid.boxes[static_cast<size_t>(layer)].size()), ++layer;
        const BoxPx& anchor = grid.boxes[static_cast<size_t>(layer)][static_cast<size_t>(rem)];
        lb.p_star[static_cast<size_t>(a)] = AnchorLabel::kPositive;
        lb.matched_face[static_cast<size_t>(a)] = static_cast<int>(f);
        lb.t_star[static_cast<size_t>(a)] = encode_targets(anchor, faces[f], 0, params, cfg.s_pa);
      }
    }
  }
  return out;
}

}  // namespace pyrabox

#endif  // PYRABOX_ANCHORS_HPP_
