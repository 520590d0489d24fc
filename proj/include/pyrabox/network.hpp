#ifndef PYRABOX_NETWORK_HPP_
#define PYRABOX_NETWORK_HPP_

#include <map>
#include <random>
#include <string>
#include <vector>

#include "pyrabox/config.hpp"
#include "pyrabox/ops.hpp"
#include "pyrabox/tensor.hpp"

namespace pyrabox {

inline const std::vector<std::string>& tap_names() {
  static const std::vector<std::string> names = {"conv3_3", "conv4_3", "conv5_3",
                                                 "conv_fc7", "conv6_2", "conv7_2"};
  return names;
}

struct BackboneLayer {
  std::string name;
  bool is_pool = false;
  int out_ch = 0;
  int k = 3, stride = 1, pad = 1, dilation = 1;
  int tap = -1;  // detection tap index fed by this layer's output
};

inline std::vector<BackboneLayer> backbone_chain(const NetworkConfig& c) {
  auto conv = [](std::string n, int ch, int k = 3, int s = 1, int p = 1, int tap = -1) {
    return BackboneLayer{std::move(n), false, ch, k, s, p, 1, tap};
  };
  auto pool = [](std::string n) { return BackboneLayer{std::move(n), true}; };
  return {
      conv("conv1_1", c.stage1()), conv("conv1_2", c.stage1()), pool("pool1"),
      conv("conv2_1", c.stage2()), conv("conv2_2", c.stage2()), pool("pool2"),
      conv("conv3_1", c.stage3()), conv("conv3_2", c.stage3()), conv("conv3_3", c.stage3(), 3, 1, 1, 0), pool("pool3"),
      conv("conv4_1", c.stage4()), conv("conv4_2", c.stage4()), conv("conv4_3", c.stage4(), 3, 1, 1, 1), pool("pool4"),
      conv("conv5_1", c.stage5()), conv("conv5_2", c.stage5()), conv("conv5_3", c.stage5(), 3, 1, 1, 2), pool("pool5"),
      conv("conv_fc6", c.conv_fc()), conv("conv_fc7", c.conv_fc(), 1, 1, 0, 3),
      conv("conv6_1", c.conv6_1(), 1, 1, 0), conv("conv6_2", c.conv6_2(), 3, 2, 1, 4),
      conv("conv7_1", c.conv7_1(), 1, 1, 0), conv("conv7_2", c.conv7_2(), 3, 2, 1, 5),
  };
}

struct ReceptiveField {
  int rf_pixels = 0;
  double rf_over_input = 0;
};

// RF of one unit of the tap's prediction map: the backbone chain up to the
// tap plus the 3x3 prediction conv that sits on it.
inline ReceptiveField receptive_field(const NetworkConfig& cfg, int tap) {
  if (tap < 0 || tap >= kNumTaps) throw contract_error("receptive_field: tap out of range");
  int rf = 1, jump = 1;
  for (const auto& l : backbone_chain(cfg)) {
    int k_eff = l.is_pool ? 2 : l.dilation * (l.k - 1) + 1;
    int stride = l.is_pool ? 2 : l.stride;
    rf += (k_eff - 1) * jump;
    jump *= stride;
    if (l.tap == tap) {
      rf += 2 * jump;  // the 3x3 prediction conv at the tap's stride
      return {rf, static_cast<double>(rf) / cfg.input_size};
    }
  }
  throw contract_error("receptive_field: tap not found in chain");
}

// Tap whose RF is nearest half the input; deeper tap wins ties.
inline int select_lfpn_start(const NetworkConfig& cfg) {
  int best = 0;
  double best_d = 1e300;
  for (int t = 0; t < kNumTaps; ++t) {
    double d = std::abs(receptive_field(cfg, t).rf_over_input - 0.5);
    // deeper tap wins exact ties; tolerance absorbs float rounding of the ratio
    if (d <= best_d + 1e-12) {
      best_d = std::min(best_d, d);
      best = t;
    }
  }
  return best;
}

inline int resolved_lfpn_start(const NetworkConfig& cfg) {
  return cfg.lfpn_start >= 0 ? cfg.lfpn_start : select_lfpn_start(cfg);
}

// Spatial extent of every tap for a given input size, by running the chain
// arithmetic.
inline std::vector<int> tap_sizes(const NetworkConfig& cfg) {
  std::vector<int> sizes(kNumTaps, 0);
  int s = cfg.input_size;
  for (const auto& l : backbone_chain(cfg)) {
    if (l.is_pool) {
      if (s % 2 != 0) throw config_error("pooling over odd extent " + std::to_string(s));
      s /= 2;
    } else {
      s = conv_out_extent(s, l.k, {l.stride, l.pad, l.dilation});
    }
    if (l.tap >= 0) sizes[static_cast<size_t>(l.tap)] = s;
  }
  return sizes;
}

template <class T>
using ParamStore = std::map<std::string, Tensor<T>>;

// The full detector: scaled S3FD-style backbone, LFPN from the auto-selected
// middle tap, L2-rescaled pyramid features, CPM per tap, 20-channel heads.
template <class T>
class Model {
public:
  explicit Model(const NetworkConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    lfpn_start_ = resolved_lfpn_start(cfg_);
    std::mt19937_64 rng(cfg_.seed);
    build_params(rng);
  }

  const NetworkConfig& config() const { return cfg_; }
  int lfpn_start() const { return lfpn_start_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  Tensor<T>& param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw contract_error("unknown parameter '" + name + "'");
    return it->second;
  }
  const Tensor<T>& param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw contract_error("unknown parameter '" + name + "'");
    return it->second;
  }

  // Head maps for all six taps, each (N, 20, h_l, w_l).
  std::vector<Tensor<T>> forward(const Tensor<T>& x) const {
    std::vector<Tensor<T>> taps = backbone(x);
    std::vector<Tensor<T>> feats = lfpn(taps);
    std::vector<Tensor<T>> heads;
    heads.reserve(kNumTaps);
    for (int l = 0; l < kNumTaps; ++l) {
      Tensor<T> f = cpm(feats[static_cast<size_t>(l)], l);
      heads.push_back(conv_named(f, "head" + std::to_string(l), 1, 1));
    }
    return heads;
  }

  std::vector<Tensor<T>> backbone(const Tensor<T>& x) const {
    std::vector<Tensor<T>> taps(kNumTaps);
    Tensor<T> cur = x;
    for (const auto& l : backbone_chain(cfg_)) {
      if (l.is_pool) {
        cur = maxpool2x(cur);
      } else {
        cur = relu(conv2d(cur, param(l.name + ".w"), param(l.name + ".b"),
                          {l.stride, l.pad, l.dilation}));
      }
      if (l.tap >= 0) taps[static_cast<size_t>(l.tap)] = cur;
    }
    return taps;
  }

  // Taps at and above the start pass through; below it the running top-down
  // signal is upsampled, merged with a 1x1 lateral, and 3x3-smoothed. The
  // smoothed outputs are L2-rescaled with per-channel gammas.
  std::vector<Tensor<T>> lfpn(const std::vector<Tensor<T>>& taps) const {
    std::vector<Tensor<T>> out = taps;
    int s = lfpn_start_;
    Tensor<T> top = conv_named(taps[static_cast<size_t>(s)], "lfpn.top", 1, 0, 1);
    for (int t = s - 1; t >= 0; --t) {
      Tensor<T> up = upsample2x(top, cfg_.upsample());
      const Tensor<T>& tap = taps[static_cast<size_t>(t)];
      if (up.dim(2) != tap.dim(2) || up.dim(3) != tap.dim(3))
        throw config_error("lfpn: upsampled extent " + std::to_string(up.dim(2)) +
                           " does not match tap extent " + std::to_string(tap.dim(2)));
      Tensor<T> lat = conv_named(tap, "lfpn.lat" + std::to_string(t), 1, 0, 1);
      Tensor<T> merged = cfg_.lfpn_merge == "mul" ? mul(lat, up) : add(lat, up);
      Tensor<T> smooth = conv_named(merged, "lfpn.smooth" + std::to_string(t), 1, 1);
      out[static_cast<size_t>(t)] =
          l2_rescale(smooth, param("l2." + tap_names()[static_cast<size_t>(t)] + ".gamma"), T(1e-12));
      top = merged;
    }
    return out;
  }

  // Context-sensitive predict module: three stacked-bottleneck context
  // branches concatenated and summed with a 1x1 projection of the input.
  Tensor<T> cpm(const Tensor<T>& x, int l) const {
    std::string p = "cpm" + std::to_string(l) + ".";
    Tensor<T> proj = conv_named(x, p + "proj", 1, 0);
    Tensor<T> b1 = bottleneck(x, p + "b1");
    Tensor<T> s1 = relu(bottleneck(x, p + "b2a"));
    Tensor<T> b2 = bottleneck(s1, p + "b2b");
    Tensor<T> s2 = relu(bottleneck(x, p + "b3a"));
    Tensor<T> s3 = relu(bottleneck(s2, p + "b3b"));
    Tensor<T> b3 = bottleneck(s3, p + "b3c");
    return add(concat_channels<T>({b1, b2, b3}), proj);
  }

  // Per-anchor face logits via max-in-out: (pos, neg) maps of one channel
  // each.
  std::pair<Tensor<T>, Tensor<T>> face_scores(const Tensor<T>& head_map, int l) const {
    const HeadLayout& hl = cfg_.head;
    Tensor<T> pos = channel_group_max(head_map, hl.face_pos_start(l), hl.cp(l));
    Tensor<T> neg = channel_group_max(head_map, hl.face_neg_start(l), hl.cn(l));
    return {pos, neg};
  }

private:
  // "3x3 conv" realized as a 1x1 reduce, 3x3, 1x1 expand stack (1:4 ratio).
  Tensor<T> bottleneck(const Tensor<T>& x, const std::string& p) const {
    Tensor<T> r = relu(conv_named(x, p + ".reduce", 1, 0));
    Tensor<T> m = relu(conv_named(r, p + ".conv", 1, 1));
    return conv_named(m, p + ".expand", 1, 0);
  }

  Tensor<T> conv_named(const Tensor<T>& x, const std::string& name, int stride, int pad,
                       int dilation = 1) const {
    return conv2d(x, param(name + ".w"), param(name + ".b"), {stride, pad, dilation});
  }

  void add_conv(std::mt19937_64& rng, const std::string& name, int in_ch, int out_ch, int k) {
    params_[name + ".w"] = Tensor<T>::xavier({out_ch, in_ch, k, k}, rng);
    params_[name + ".b"] = Tensor<T>::zeros({out_ch}, true);
  }

  void add_bottleneck(std::mt19937_64& rng, const std::string& p, int in_ch, int out_ch) {
    int mid = std::max(1, out_ch / 4);
    add_conv(rng, p + ".reduce", in_ch, mid, 1);
    add_conv(rng, p + ".conv", mid, mid, 3);
    add_conv(rng, p + ".expand", mid, out_ch, 1);
  }

  void build_params(std::mt19937_64& rng) {
    int in_ch = 3;
    std::vector<int> tap_ch(kNumTaps, 0);
    for (const auto& l : backbone_chain(cfg_)) {
      if (!l.is_pool) {
        add_conv(rng, l.name, in_ch, l.out_ch, l.k);
        in_ch = l.out_ch;
      }
      if (l.tap >= 0) tap_ch[static_cast<size_t>(l.tap)] = in_ch;
    }
    int s = lfpn_start_;
    int lw = cfg_.lfpn_width();
    add_conv(rng, "lfpn.top", tap_ch[static_cast<size_t>(s)], lw, 1);
    for (int t = s - 1; t >= 0; --t) {
      add_conv(rng, "lfpn.lat" + std::to_string(t), tap_ch[static_cast<size_t>(t)], lw, 1);
      add_conv(rng, "lfpn.smooth" + std::to_string(t), lw, lw, 3);
      params_["l2." + tap_names()[static_cast<size_t>(t)] + ".gamma"] =
          Tensor<T>::full({lw}, T(20), true);
      tap_ch[static_cast<size_t>(t)] = lw;
    }
    int w = cfg_.cpm_width;
    for (int l = 0; l < kNumTaps; ++l) {
      std::string p = "cpm" + std::to_string(l) + ".";
      int cx = tap_ch[static_cast<size_t>(l)];
      add_conv(rng, p + "proj", cx, w, 1);
      add_bottleneck(rng, p + "b1", cx, w / 2);
      add_bottleneck(rng, p + "b2a", cx, w / 2);
      add_bottleneck(rng, p + "b2b", w / 2, w / 4);
      add_bottleneck(rng, p + "b3a", cx, w / 2);
      add_bottleneck(rng, p + "b3b", w / 2, w / 2);
      add_bottleneck(rng, p + "b3c", w / 2, w / 4);
      add_conv(rng, "head" + std::to_string(l), w, kHeadChannels, 3);
    }
  }

  NetworkConfig cfg_;
  int lfpn_start_ = 3;
  ParamStore<T> params_;
};

}  // namespace pyrabox

#endif  // PYRABOX_NETWORK_HPP_
