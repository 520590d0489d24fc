#ifndef PYRABOX_EVAL_HPP_
#define PYRABOX_EVAL_HPP_

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "pyrabox/anchors.hpp"
#include "pyrabox/box.hpp"
#include "pyrabox/network.hpp"
#include "pyrabox/train.hpp"

namespace pyrabox {

// Aspect-preserving letterbox resize onto the model input square, anchored at
// the top-left and padded with the image mean.
struct Letterbox {
  Raster image;
  double scale = 1.0;
};

inline Letterbox letterbox_to(const Raster& src, int side) {
  Letterbox lb;
  lb.scale = std::min(static_cast<double>(side) / src.w, static_cast<double>(side) / src.h);
  int nw = std::max(1, static_cast<int>(std::lround(src.w * lb.scale)));
  int nh = std::max(1, static_cast<int>(std::lround(src.h * lb.scale)));
  Raster resized = resize_bilinear(src, nw, nh);
  lb.image = Raster::make(side, side, src.mean_color());
  for (int y = 0; y < nh; ++y)
    for (int x = 0; x < nw; ++x)
      for (int c = 0; c < 3; ++c) lb.image.at(x, y, c) = resized.at(x, y, c);
  return lb;
}

// Face-branch-only inference: max-in-out face probability, k = 0 decode over
// all taps, threshold, then NMS. Head/body channels are never decoded.
inline std::vector<Detection> infer(const Model<float>& model, const AnchorGrid& grid,
                                    const Raster& image, double score_threshold,
                                    double nms_threshold) {
  Letterbox lb = letterbox_to(image, model.config().input_size);
  Tensor<float> x = crop_to_tensor<float>(lb.image);
  std::vector<Tensor<float>> heads = model.forward(x);  // no graph active: inference

  const HeadLayout& hl = model.config().head;
  std::vector<Detection> dets;
  for (int l = 0; l < grid.num_layers(); ++l) {
    const auto& m = heads[static_cast<size_t>(l)];
    int fh = m.dim(2), fw = m.dim(3);
    int64_t hw = static_cast<int64_t>(fh) * fw;
    for (int64_t p = 0; p < hw; ++p) {
      double zp = -1e30, zn = -1e30;
      for (int c = 0; c < hl.cp(l); ++c) zp = std::max(zp, static_cast<double>(m[(hl.face_pos_start(l) + c) * hw + p]));
      for (int c = 0; c < hl.cn(l); ++c) zn = std::max(zn, static_cast<double>(m[(hl.face_neg_start(l) + c) * hw + p]));
      double mx = std::max(zp, zn);
      double prob = std::exp(zp - mx) / (std::exp(zp - mx) + std::exp(zn - mx));
      if (prob < score_threshold) continue;
      std::array<double, 4> t;
      for (int d = 0; d < 4; ++d) t[static_cast<size_t>(d)] = m[(HeadLayout::face_reg_start + d) * hw + p];
      BoxPx box = decode_box(grid.boxes[static_cast<size_t>(l)][static_cast<size_t>(p)], t);
      // back out of the letterbox into source pixel coordinates
      box = scale_box(box, 1.0 / lb.scale);
      box = clip_box(box, image.w, image.h);
      if (box.area() <= 0) continue;
      dets.push_back({box, prob, 0});
    }
  }
  return nms(dets, nms_threshold);
}

struct EvalReport {
  std::vector<std::pair<double, double>> pr;  // (recall, precision) per detection rank
  double ap = 0;
  double ap_small = 0, ap_medium = 0, ap_large = 0;
  int64_t num_gt = 0;
};

namespace detail {

// VOC-style continuous interpolation: area under the precision envelope.
inline double ap_from_pr(const std::vector<std::pair<double, double>>& pr) {
  if (pr.empty()) return 0.0;
  double ap = 0.0, prev_recall = 0.0;
  for (size_t i = 0; i < pr.size(); ++i) {
    double r = pr[i].first;
    if (r <= prev_recall) continue;
    double envelope = 0.0;
    for (size_t j = i; j < pr.size(); ++j)
      if (pr[j].first >= r) envelope = std::max(envelope, pr[j].second);
    ap += (r - prev_recall) * envelope;
    prev_recall = r;
  }
  return ap;
}

struct FlatDet {
  int image;
  int index;
  Detection det;
};

// Greedy matching at descending score; gt_active masks which ground truths
// count. Detections matched to inactive gts are ignored outright.
inline std::pair<std::vector<std::pair<double, double>>, double> pr_curve(
    const std::vector<std::vector<Detection>>& dets, const std::vector<std::vector<BoxPx>>& gts,
    const std::vector<std::vector<bool>>& gt_active, double iou_thr) {
  std::vector<FlatDet> flat;
  for (size_t i = 0; i < dets.size(); ++i)
    for (size_t d = 0; d < dets[i].size(); ++d)
      flat.push_back({static_cast<int>(i), static_cast<int>(d), dets[i][d]});
  std::stable_sort(flat.begin(), flat.end(),
                   [](const FlatDet& a, const FlatDet& b) { return a.det.score > b.det.score; });

  int64_t total_gt = 0;
  for (size_t i = 0; i < gts.size(); ++i)
    for (size_t g = 0; g < gts[i].size(); ++g) total_gt += gt_active[i][g];

  std::vector<std::vector<bool>> used(gts.size());
  for (size_t i = 0; i < gts.size(); ++i) used[i].assign(gts[i].size(), false);

  std::vector<std::pair<double, double>> pr;
  int64_t tp = 0, fp = 0;
  for (const auto& fd : flat) {
    const auto& g = gts[static_cast<size_t>(fd.image)];
    int best = -1;
    double best_iou = 0.0;
    for (size_t j = 0; j < g.size(); ++j) {
      if (used[static_cast<size_t>(fd.image)][j]) continue;
      double v = iou(fd.det.box, g[j]);
      if (v >= iou_thr && v > best_iou) { best_iou = v; best = static_cast<int>(j); }
    }
    if (best >= 0 && !gt_active[static_cast<size_t>(fd.image)][static_cast<size_t>(best)]) {
      used[static_cast<size_t>(fd.image)][static_cast<size_t>(best)] = true;
      continue;  // matched an out-of-bucket gt: ignored
    }
    if (best >= 0) {
      used[static_cast<size_t>(fd.image)][static_cast<size_t>(best)] = true;
      ++tp;
    } else {
      ++fp;
    }
    double recall = total_gt > 0 ? static_cast<double>(tp) / static_cast<double>(total_gt) : 0.0;
    double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    pr.emplace_back(recall, precision);
  }
  return {pr, ap_from_pr(pr)};
}

}  // namespace detail

inline EvalReport evaluate(const std::vector<std::vector<Detection>>& dets,
                           const std::vector<std::vector<BoxPx>>& gts, double iou_thr = 0.5) {
  if (dets.size() != gts.size())
    throw contract_error("evaluate: detection and ground-truth image counts differ");
  EvalReport rep;
  std::vector<std::vector<bool>> all(gts.size());
  for (size_t i = 0; i < gts.size(); ++i) {
    all[i].assign(gts[i].size(), true);
    rep.num_gt += static_cast<int64_t>(gts[i].size());
  }
  auto [pr, ap] = detail::pr_curve(dets, gts, all, iou_thr);
  rep.pr = std::move(pr);
  rep.ap = ap;

  auto bucket = [&](auto pred) {
    std::vector<std::vector<bool>> mask(gts.size());
    for (size_t i = 0; i < gts.size(); ++i) {
      mask[i].resize(gts[i].size());
      for (size_t g = 0; g < gts[i].size(); ++g) mask[i][g] = pred(gts[i][g].area());
    }
    return detail::pr_curve(dets, gts, mask, iou_thr).second;
  };
  rep.ap_small = bucket([](double a) { return a < 32.0 * 32.0; });
  rep.ap_medium = bucket([](double a) { return a >= 32.0 * 32.0 && a < 96.0 * 96.0; });
  rep.ap_large = bucket([](double a) { return a >= 96.0 * 96.0; });
  return rep;
}

inline void write_eval_csv(std::ostream& out, const EvalReport& rep) {
  out << "recall,precision\n";
  for (const auto& [r, p] : rep.pr) out << r << "," << p << "\n";
  out << "AP," << rep.ap << "\n";
}

// One line per detection: "image_path x_min y_min width height score", score
// with 6 decimals.
inline void write_detections(std::ostream& out, const std::string& path,
                             const std::vector<Detection>& dets) {
  for (const auto& d : dets)
    out << path << " " << d.box.x << " " << d.box.y << " " << d.box.w << " " << d.box.h << " "
        << std::fixed << std::setprecision(6) << d.score << std::defaultfloat << "\n";
}

struct NamedDetections {
  std::vector<std::string> paths;                 // unique, in first-seen order
  std::vector<std::vector<Detection>> per_image;  // parallel to paths
};

inline NamedDetections parse_detections(std::istream& in, const std::string& origin = "<stream>") {
  NamedDetections out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string path;
    Detection d;
    if (!(ls >> path >> d.box.x >> d.box.y >> d.box.w >> d.box.h >> d.score))
      throw parse_error(origin + ":" + std::to_string(lineno) + ": malformed detection line");
    auto it = std::find(out.paths.begin(), out.paths.end(), path);
    size_t idx;
    if (it == out.paths.end()) {
      out.paths.push_back(path);
      out.per_image.emplace_back();
      idx = out.paths.size() - 1;
    } else {
      idx = static_cast<size_t>(it - out.paths.begin());
    }
    out.per_image[idx].push_back(d);
  }
  return out;
}

}  // namespace pyrabox

#endif  // PYRABOX_EVAL_HPP_
