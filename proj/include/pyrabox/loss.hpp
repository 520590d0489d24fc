#ifndef PYRABOX_LOSS_HPP_
#define PYRABOX_LOSS_HPP_

#include <algorithm>
#include <cmath>
#include <vector>

#include "pyrabox/anchors.hpp"
#include "pyrabox/config.hpp"
#include "pyrabox/ops.hpp"

namespace pyrabox {

inline double smooth_l1(double d) {
  double a = std::abs(d);
  return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

inline double smooth_l1_grad(double d) { return d < -1.0 ? -1.0 : (d > 1.0 ? 1.0 : d); }

struct LossTerm {
  double cls_sum = 0;  // raw summed log loss over sampled anchors
  double reg_sum = 0;  // raw summed smooth-L1 over positives
  int64_t n_cls = 0;
  int64_t n_reg = 0;
  double value = 0;  // lambda/N_cls * cls_sum + 1/N_reg * reg_sum
};

template <class T>
struct LossBreakdown {
  std::vector<LossTerm> per_k;
  Tensor<T> total;
  double total_value() const { return static_cast<double>(total[0]); }
};

namespace detail {

// Classification + regression loss of one pyramid branch as a single taped
// op. pos/neg are per-tap (1,1,h,w) logit maps, reg per-tap (1,4,h,w).
// Forward freezes the mined anchor selection; backward writes softmax and
// smooth-L1 adjoints straight into the map grads.
template <class T>
Tensor<T> branch_loss(std::vector<Tensor<T>> pos, std::vector<Tensor<T>> neg,
                      std::vector<Tensor<T>> reg, const AnchorGrid& grid,
                      const BranchLabels& lb, const PyramidAnchorConfig& cfg, LossTerm* term) {
  struct ClsPick {
    int layer;
    int64_t p;  // spatial index within the layer map
    int y;      // 1 = positive
  };
  std::vector<ClsPick> picked;
  std::vector<std::pair<double, int64_t>> neg_pool;  // (loss, flat anchor idx)
  std::vector<ClsPick> neg_by_flat;

  auto pair_loss = [](double zp, double zn, int y) {
    double m = std::max(zp, zn);
    double lse = m + std::log(std::exp(zp - m) + std::exp(zn - m));
    return lse - (y ? zp : zn);
  };

  double cls_sum = 0, reg_sum = 0;
  int64_t n_pos = 0;
  int64_t flat = 0;
  std::vector<std::array<double, 4>> pos_tstar;
  std::vector<ClsPick> pos_picks;
  for (int l = 0; l < grid.num_layers(); ++l) {
    int64_t cells = static_cast<int64_t>(grid.feat_h[l]) * grid.feat_w[l];
    for (int64_t p = 0; p < cells; ++p, ++flat) {
      AnchorLabel lab = lb.p_star[static_cast<size_t>(flat)];
      if (lab == AnchorLabel::kIgnore) continue;
      double zp = pos[static_cast<size_t>(l)][p];
      double zn = neg[static_cast<size_t>(l)][p];
      if (lab == AnchorLabel::kPositive) {
        ++n_pos;
        cls_sum += pair_loss(zp, zn, 1);
        pos_picks.push_back({l, p, 1});
        pos_tstar.push_back(lb.t_star[static_cast<size_t>(flat)]);
      } else {
        neg_pool.emplace_back(pair_loss(zp, zn, 0), flat);
        neg_by_flat.push_back({l, p, 0});
      }
    }
  }

  // hard-negative selection at the configured ratio, highest loss first
  int64_t n_keep = cfg.hard_negative_mining
                       ? std::min<int64_t>(static_cast<int64_t>(neg_pool.size()),
                                           static_cast<int64_t>(cfg.negative_ratio * static_cast<double>(n_pos)))
                       : static_cast<int64_t>(neg_pool.size());
  std::vector<size_t> order(neg_pool.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (n_keep < static_cast<int64_t>(neg_pool.size()))
    std::partial_sort(order.begin(), order.begin() + n_keep, order.end(), [&](size_t a, size_t b) {
      if (neg_pool[a].first != neg_pool[b].first) return neg_pool[a].first > neg_pool[b].first;
      return neg_pool[a].second < neg_pool[b].second;
    });
  picked = pos_picks;
  for (int64_t i = 0; i < n_keep; ++i) {
    picked.push_back(neg_by_flat[order[static_cast<size_t>(i)]]);
    cls_sum += neg_pool[order[static_cast<size_t>(i)]].first;
  }

  for (size_t i = 0; i < pos_picks.size(); ++i) {
    const auto& pk = pos_picks[i];
    int64_t hw = static_cast<int64_t>(grid.feat_h[pk.layer]) * grid.feat_w[pk.layer];
    for (int d = 0; d < 4; ++d) {
      double pred = reg[static_cast<size_t>(pk.layer)][d * hw + pk.p];
      reg_sum += smooth_l1((pred - pos_tstar[i][d]) / cfg.variance[static_cast<size_t>(d)]);
    }
  }

  int64_t n_cls = n_pos + n_keep;
  int64_t n_reg = n_pos;
  double value = cfg.lambda_cls / static_cast<double>(std::max<int64_t>(n_cls, 1)) * cls_sum +
                 1.0 / static_cast<double>(std::max<int64_t>(n_reg, 1)) * reg_sum;
  if (term) *term = {cls_sum, reg_sum, n_cls, n_reg, value};

  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(value));
  bool need = false;
  for (const auto& t : pos) need = need || tracing(t);
  for (const auto& t : neg) need = need || tracing(t);
  for (const auto& t : reg) need = need || tracing(t);
  if (need) {
    out.set_requires_grad(true);
    auto feat_h = grid.feat_h;
    auto feat_w = grid.feat_w;
    double lam = cfg.lambda_cls;
    auto variance = cfg.variance;
    Tensor<T> oc = out;
    Graph<T>::current()->record([pos, neg, reg, picked, pos_picks, pos_tstar, feat_h, feat_w,
                                 lam, variance, n_cls, n_reg, oc]() mutable {
      double g = static_cast<double>(oc.grad()[0]);
      double cls_w = g * lam / static_cast<double>(std::max<int64_t>(n_cls, 1));
      double reg_w = g / static_cast<double>(std::max<int64_t>(n_reg, 1));
      for (const auto& pk : picked) {
        auto& pt = pos[static_cast<size_t>(pk.layer)];
        auto& nt = neg[static_cast<size_t>(pk.layer)];
        double zp = pt[pk.p], zn = nt[pk.p];
        double m = std::max(zp, zn);
        double ep = std::exp(zp - m), en = std::exp(zn - m);
        double pp = ep / (ep + en);
        if (pt.requires_grad()) pt.grad()[static_cast<size_t>(pk.p)] += static_cast<T>(cls_w * (pp - pk.y));
        if (nt.requires_grad()) nt.grad()[static_cast<size_t>(pk.p)] += static_cast<T>(cls_w * ((1 - pp) - (1 - pk.y)));
      }
      for (size_t i = 0; i < pos_picks.size(); ++i) {
        const auto& pk = pos_picks[i];
        auto& rt = reg[static_cast<size_t>(pk.layer)];
        if (!rt.requires_grad()) continue;
        int64_t hw = static_cast<int64_t>(feat_h[pk.layer]) * feat_w[pk.layer];
        for (int d = 0; d < 4; ++d) {
          double v = variance[static_cast<size_t>(d)];
          double pred = rt[d * hw + pk.p];
          rt.grad()[static_cast<size_t>(d * hw + pk.p)] +=
              static_cast<T>(reg_w * smooth_l1_grad((pred - pos_tstar[i][d]) / v) / v);
        }
      }
    });
  }
  return out;
}

}  // namespace detail

// The multi-branch detector loss over the head maps of one image (batch 1).
// Face logits go through max-in-out; head/body branches use their two raw
// channels.
template <class T>
LossBreakdown<T> pyramid_loss(const std::vector<Tensor<T>>& head_maps, const AnchorGrid& grid,
                                 const PyramidLabelSet& labels, const PyramidAnchorConfig& cfg,
                                 const HeadLayout& hl = {}) {
  if (static_cast<int>(head_maps.size()) != grid.num_layers())
    throw contract_error("loss: head map count " + std::to_string(head_maps.size()) +
                         " != grid layers " + std::to_string(grid.num_layers()));
  for (int l = 0; l < grid.num_layers(); ++l) {
    const auto& m = head_maps[static_cast<size_t>(l)];
    if (m.rank() != 4 || m.dim(0) != 1 || m.dim(1) != kHeadChannels)
      throw contract_error("loss: head map " + std::to_string(l) + " must be (1,20,h,w), got " +
                           shape_str(m.shape()));
    if (m.dim(2) != grid.feat_h[l] || m.dim(3) != grid.feat_w[l])
      throw contract_error("loss: head map " + std::to_string(l) + " extent " +
                           std::to_string(m.dim(2)) + "x" + std::to_string(m.dim(3)) +
                           " != grid " + std::to_string(grid.feat_h[l]) + "x" +
                           std::to_string(grid.feat_w[l]));
  }
  if (static_cast<int>(labels.branch.size()) != cfg.K + 1)
    throw contract_error("loss: label set has wrong K");

  LossBreakdown<T> out;
  out.per_k.resize(static_cast<size_t>(cfg.K) + 1);
  Tensor<T> total;
  for (int k = 0; k <= cfg.K; ++k) {
    std::vector<Tensor<T>> pos, neg, reg;
    for (int l = 0; l < grid.num_layers(); ++l) {
      const auto& m = head_maps[static_cast<size_t>(l)];
      if (k == 0) {
        pos.push_back(channel_group_max(m, hl.face_pos_start(l), hl.cp(l)));
        neg.push_back(channel_group_max(m, hl.face_neg_start(l), hl.cn(l)));
      } else {
        int cs = hl.cls_start(l, k);
        neg.push_back(slice_channels(m, cs, 1));      // channel 0: background
        pos.push_back(slice_channels(m, cs + 1, 1));  // channel 1: object
      }
      reg.push_back(slice_channels(m, HeadLayout::reg_start(k), 4));
    }
    Tensor<T> lk = detail::branch_loss(pos, neg, reg, grid, labels.branch[static_cast<size_t>(k)],
                                       cfg, &out.per_k[static_cast<size_t>(k)]);
    Tensor<T> weighted = scale(lk, static_cast<T>(cfg.lambda_k[static_cast<size_t>(k)]));
    total = k == 0 ? weighted : add(total, weighted);
  }
  out.total = total;
  return out;
}

}  // namespace pyrabox

#endif  // PYRABOX_LOSS_HPP_
