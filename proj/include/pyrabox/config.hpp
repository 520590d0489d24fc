#ifndef PYRABOX_CONFIG_HPP_
#define PYRABOX_CONFIG_HPP_

#include <array>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pyrabox/anchors.hpp"
#include "pyrabox/errors.hpp"
#include "pyrabox/ops.hpp"

namespace pyrabox {

constexpr int kNumTaps = 6;
constexpr int kHeadChannels = 20;

// Fixed head-map channel order:
//   [face-pos cp | face-neg cn | head cls 2 | body cls 2 | face reg 4 | head reg 4 | body reg 4]
struct HeadLayout {
  int cp(int l) const { return l == 0 ? 1 : 3; }
  int cn(int l) const { return 4 - cp(l); }
  int face_pos_start(int) const { return 0; }
  int face_neg_start(int l) const { return cp(l); }
  static constexpr int head_cls_start = 4;
  static constexpr int body_cls_start = 6;
  static constexpr int face_reg_start = 8;
  static constexpr int head_reg_start = 12;
  static constexpr int body_reg_start = 16;
  int cls_start(int l, int k) const {
    return k == 0 ? face_pos_start(l) : (k == 1 ? head_cls_start : body_cls_start);
  }
  static int reg_start(int k) { return face_reg_start + 4 * k; }
};

struct LrSegment {
  int64_t steps = 0;  // duration of the segment
  double lr = 0;
};

struct NetworkConfig {
  int input_size = 640;
  double width_factor = 1.0;
  int lfpn_start = -1;  // -1 = auto
  std::string lfpn_merge = "add";
  std::string upsample_mode = "nearest";
  int cpm_width = 256;
  PyramidAnchorConfig pyramid;
  std::vector<LrSegment> lr_schedule = {{80000, 1e-3}, {20000, 1e-4}, {20000, 1e-5}};
  int batch_size = 16;
  std::uint64_t seed = 1;
  HeadLayout head;

  // full-scale S3FD-style stage widths, scaled by width_factor
  int ch(int full) const {
    int c = static_cast<int>(std::lround(full * width_factor));
    return std::max(c, 1);
  }
  int stage1() const { return ch(64); }
  int stage2() const { return ch(128); }
  int stage3() const { return ch(256); }
  int stage4() const { return ch(512); }
  int stage5() const { return ch(512); }
  int conv_fc() const { return ch(1024); }
  int conv6_1() const { return ch(256); }
  int conv6_2() const { return ch(512); }
  int conv7_1() const { return ch(128); }
  int conv7_2() const { return ch(256); }
  int lfpn_width() const { return ch(256); }

  UpsampleMode upsample() const {
    return upsample_mode == "bilinear" ? UpsampleMode::kBilinear : UpsampleMode::kNearest;
  }

  void validate() const {
    // input/16 must still be even when pool5 runs, so input is a multiple of 32
    if (input_size <= 0 || input_size % 32 != 0)
      throw config_error("input_size must be a positive multiple of 32, got " + std::to_string(input_size));
    if (width_factor <= 0) throw config_error("width_factor must be positive");
    if (lfpn_start < -1 || lfpn_start >= kNumTaps)
      throw config_error("lfpn_start must be 'auto' or 0..5");
    if (lfpn_merge != "add" && lfpn_merge != "mul")
      throw config_error("lfpn_merge must be 'add' or 'mul'");
    if (upsample_mode != "nearest" && upsample_mode != "bilinear")
      throw config_error("upsample_mode must be 'nearest' or 'bilinear'");
    if (cpm_width < 16 || cpm_width % 4 != 0)
      throw config_error("cpm_width must be a multiple of 4 and at least 16");
    if (lr_schedule.empty()) throw config_error("lr_schedule must not be empty");
    for (const auto& s : lr_schedule)
      if (s.steps <= 0 || s.lr <= 0) throw config_error("lr_schedule entries must be positive");
    if (batch_size <= 0) throw config_error("batch_size must be positive");
    pyramid.validate();
  }
};

inline NetworkConfig toy_config() {
  NetworkConfig c;
  c.input_size = 160;
  c.width_factor = 0.125;
  c.cpm_width = 32;
  c.batch_size = 8;
  c.lr_schedule = {{800, 1e-3}, {200, 1e-4}, {200, 1e-5}};
  return c;
}

inline NetworkConfig parse_config(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "input_size", "width_factor", "lfpn_start",  "lfpn_merge", "upsample_mode",
      "cpm_width",  "s_pa",         "K",           "threshold",  "lambda",
      "lambda_k",   "variance",     "lr_schedule", "batch_size", "seed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw config_error("unknown config key '" + it.key() + "'");
  }
  NetworkConfig c;
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) j.at(key).get_to(dst);
  };
  get("input_size", c.input_size);
  get("width_factor", c.width_factor);
  if (j.contains("lfpn_start")) {
    const auto& v = j.at("lfpn_start");
    if (v.is_string()) {
      if (v.get<std::string>() != "auto") throw config_error("lfpn_start must be 'auto' or 0..5");
      c.lfpn_start = -1;
    } else {
      c.lfpn_start = v.get<int>();
    }
  }
  get("lfpn_merge", c.lfpn_merge);
  get("upsample_mode", c.upsample_mode);
  get("cpm_width", c.cpm_width);
  get("s_pa", c.pyramid.s_pa);
  get("K", c.pyramid.K);
  get("threshold", c.pyramid.threshold);
  get("lambda", c.pyramid.lambda_cls);
  get("lambda_k", c.pyramid.lambda_k);
  if (j.contains("variance")) {
    std::vector<double> v = j.at("variance").get<std::vector<double>>();
    if (v.size() != 4) throw config_error("variance needs 4 entries");
    std::copy(v.begin(), v.end(), c.pyramid.variance.begin());
  }
  if (j.contains("lr_schedule")) {
    c.lr_schedule.clear();
    for (const auto& seg : j.at("lr_schedule")) {
      if (!seg.is_array() || seg.size() != 2) throw config_error("lr_schedule entries are [steps, lr] pairs");
      c.lr_schedule.push_back({seg[0].get<int64_t>(), seg[1].get<double>()});
    }
  }
  get("batch_size", c.batch_size);
  get("seed", c.seed);
  c.validate();
  return c;
}

inline NetworkConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw parse_error(path + ": cannot open");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(path + ": invalid JSON: " + e.what());
  }
  try {
    return parse_config(j);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(path + ": " + e.what());
  }
}

}  // namespace pyrabox

#endif  // PYRABOX_CONFIG_HPP_
