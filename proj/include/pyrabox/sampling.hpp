#ifndef PYRABOX_SAMPLING_HPP_
#define PYRABOX_SAMPLING_HPP_

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <vector>

#include "pyrabox/annotations.hpp"
#include "pyrabox/box.hpp"
#include "pyrabox/errors.hpp"
#include "pyrabox/image.hpp"

namespace pyrabox {

inline double anchor_scale_of(int i) { return static_cast<double>(16 << i); }

// One draw of the scale lottery: a face of size s_face is pushed toward a
// random anchor scale at or below one level above its nearest one.
struct SamplerDraw {
  int face_index = 0;
  double s_face = 0;
  int i_anchor = 0;
  int i_target = 0;
  double s_target = 0;
  double s_star = 0;  // image resize factor s_target / s_face
};

inline int nearest_anchor_index(double s_face) {
  int best = 0;
  double best_d = std::abs(anchor_scale_of(0) - s_face);
  for (int i = 1; i <= 5; ++i) {
    double d = std::abs(anchor_scale_of(i) - s_face);
    if (d < best_d) { best_d = d; best = i; }  // ties keep the smaller index
  }
  return best;
}

template <class Rng>
SamplerDraw draw_sampler(const std::vector<BoxPx>& faces, Rng& rng) {
  if (faces.empty()) throw contract_error("data_anchor_sample: record has no faces");
  SamplerDraw d;
  d.face_index = static_cast<int>(std::uniform_int_distribution<size_t>(0, faces.size() - 1)(rng));
  d.s_face = faces[static_cast<size_t>(d.face_index)].side();
  d.i_anchor = nearest_anchor_index(d.s_face);
  int hi = std::min(5, d.i_anchor + 1);
  d.i_target = std::uniform_int_distribution<int>(0, hi)(rng);
  double s = anchor_scale_of(d.i_target);
  d.s_target = std::uniform_real_distribution<double>(s / 2, s * 2)(rng);
  d.s_star = d.s_target / d.s_face;
  return d;
}

struct TrainCrop {
  Raster image;
  std::vector<BoxPx> faces;  // clipped to the crop
  SamplerDraw provenance;
  int selected_face = -1;    // index into `faces` of the sampled face
};

struct SampleInputs {
  const Raster* image;
  const std::vector<BoxPx>* faces;
};

// Resizes the whole image by s*, then crops a crop_side square containing the
// selected face, padding with the per-image mean color where the resized
// image falls short. Boxes whose center leaves the crop are dropped.
template <class Rng>
TrainCrop data_anchor_sample(const Raster& image, const std::vector<BoxPx>& faces, Rng& rng,
                             int crop_side = 640) {
  SamplerDraw d = draw_sampler(faces, rng);
  int nw = std::max(1, static_cast<int>(std::lround(image.w * d.s_star)));
  int nh = std::max(1, static_cast<int>(std::lround(image.h * d.s_star)));
  Raster resized = resize_bilinear(image, nw, nh);
  double fx = static_cast<double>(nw) / image.w, fy = static_cast<double>(nh) / image.h;

  std::vector<BoxPx> scaled;
  scaled.reserve(faces.size());
  for (const auto& b : faces) scaled.push_back({b.x * fx, b.y * fy, b.w * fx, b.h * fy});
  const BoxPx& sel = scaled[static_cast<size_t>(d.face_index)];

  // window origin range keeping the selected face fully inside
  auto range = [&](double f0, double f1, int extent) {
    int lo = static_cast<int>(std::ceil(f1)) - crop_side;
    int hi = static_cast<int>(std::floor(f0));
    if (extent >= crop_side) {
      lo = std::max(lo, 0);
      hi = std::min(hi, extent - crop_side);
    } else {
      lo = std::max(lo, extent - crop_side);
      hi = std::min(hi, 0);
    }
    if (lo > hi) lo = hi;  // face larger than the crop: pin to its near edge
    return std::pair<int, int>(lo, hi);
  };
  auto [xlo, xhi] = range(sel.x, sel.x2(), nw);
  auto [ylo, yhi] = range(sel.y, sel.y2(), nh);
  int x0 = std::uniform_int_distribution<int>(xlo, xhi)(rng);
  int y0 = std::uniform_int_distribution<int>(ylo, yhi)(rng);

  TrainCrop crop;
  crop.provenance = d;
  crop.image = crop_pad(resized, x0, y0, crop_side, resized.mean_color());
  for (size_t f = 0; f < scaled.size(); ++f) {
    BoxPx b = {scaled[f].x - x0, scaled[f].y - y0, scaled[f].w, scaled[f].h};
    bool is_sel = static_cast<int>(f) == d.face_index;
    if (!is_sel) {
      double cx = b.cx(), cy = b.cy();
      if (cx < 0 || cx >= crop_side || cy < 0 || cy >= crop_side) continue;
    }
    b = clip_box(b, crop_side, crop_side);
    if (b.area() <= 0 && !is_sel) continue;
    if (is_sel) crop.selected_face = static_cast<int>(crop.faces.size());
    crop.faces.push_back(b);
  }
  return crop;
}

// Horizontal flip, photometric jitter, and a square random crop, each fired
// with probability 0.5. Draw order is fixed so seeds replay identically.
template <class Rng>
SampleRecord baseline_augment(const Raster& image, const SampleRecord& rec, Rng& rng, Raster* out_image) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  Raster img = image;
  std::vector<BoxPx> faces = rec.faces;

  bool do_flip = coin(rng) < 0.5;
  bool do_jitter = coin(rng) < 0.5;
  double gain = std::uniform_real_distribution<double>(0.8, 1.2)(rng);
  double bias = std::uniform_real_distribution<double>(-16.0, 16.0)(rng);
  bool do_crop = coin(rng) < 0.5;
  double frac = std::uniform_real_distribution<double>(0.5, 1.0)(rng);
  double ux = coin(rng), uy = coin(rng);

  if (do_flip) {
    img = flip_horizontal(img);
    for (auto& b : faces) b.x = img.w - b.x - b.w;
  }
  if (do_jitter) img = jitter(img, gain, bias);
  if (do_crop) {
    int side = std::max(1, static_cast<int>(std::lround(frac * std::min(img.w, img.h))));
    int x0 = static_cast<int>(std::lround(ux * (img.w - side)));
    int y0 = static_cast<int>(std::lround(uy * (img.h - side)));
    img = crop_pad(img, x0, y0, side, {0, 0, 0});
    std::vector<BoxPx> kept;
    for (const auto& b : faces) {
      double cx = b.cx() - x0, cy = b.cy() - y0;
      if (cx < 0 || cx >= side || cy < 0 || cy >= side) continue;
      BoxPx nb = clip_box({b.x - x0, b.y - y0, b.w, b.h}, side, side);
      if (nb.area() > 0) kept.push_back(nb);
    }
    faces = std::move(kept);
  }

  SampleRecord out;
  out.path = rec.path;
  out.faces = std::move(faces);
  if (out_image) *out_image = std::move(img);
  return out;
}

struct SizeHistogram {
  std::vector<double> bin_edges;   // ascending; bin i covers [edge_i, edge_{i+1})
  std::vector<int64_t> pre, post;  // counts per bin
  double pre_mean = 0, post_mean = 0;

  double mass_below(double px, const std::vector<int64_t>& counts) const {
    int64_t total = 0, below = 0;
    for (size_t i = 0; i + 1 < bin_edges.size(); ++i) {
      total += counts[i];
      if (bin_edges[i + 1] <= px) below += counts[i];
    }
    return total > 0 ? static_cast<double>(below) / static_cast<double>(total) : 0.0;
  }
};

// Pre- vs post-sampling face-size histogram over a set of draws.
inline SizeHistogram sample_report(const std::vector<SamplerDraw>& draws) {
  if (draws.empty()) throw contract_error("sample_report: no draws");
  SizeHistogram h;
  for (double e = 0; e <= 1024.0 + 1e-9; e += 8.0) h.bin_edges.push_back(e);
  h.pre.assign(h.bin_edges.size() - 1, 0);
  h.post.assign(h.bin_edges.size() - 1, 0);
  auto bin_of = [&](double v) {
    size_t b = static_cast<size_t>(std::clamp(v / 8.0, 0.0, static_cast<double>(h.pre.size() - 1)));
    return b;
  };
  double pre_sum = 0, post_sum = 0;
  for (const auto& d : draws) {
    h.pre[bin_of(d.s_face)]++;
    h.post[bin_of(d.s_target)]++;
    pre_sum += d.s_face;
    post_sum += d.s_target;
  }
  h.pre_mean = pre_sum / static_cast<double>(draws.size());
  h.post_mean = post_sum / static_cast<double>(draws.size());
  return h;
}

inline void write_histogram_csv(std::ostream& out, const SizeHistogram& h) {
  out << "bin_lo,pre_count,post_count\n";
  for (size_t i = 0; i + 1 < h.bin_edges.size(); ++i)
    out << h.bin_edges[i] << "," << h.pre[i] << "," << h.post[i] << "\n";
  out << "mean," << h.pre_mean << "," << h.post_mean << "\n";
}

}  // namespace pyrabox

#endif  // PYRABOX_SAMPLING_HPP_
