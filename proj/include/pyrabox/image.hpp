#ifndef PYRABOX_IMAGE_HPP_
#define PYRABOX_IMAGE_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "pyrabox/errors.hpp"

namespace pyrabox {

// Interleaved 8-bit RGB raster, row-major.
struct Raster {
  int w = 0, h = 0;
  std::vector<std::uint8_t> px;  // h * w * 3

  static Raster make(int w, int h, std::array<std::uint8_t, 3> fill = {0, 0, 0}) {
    Raster r;
    r.w = w;
    r.h = h;
    r.px.resize(static_cast<size_t>(w) * h * 3);
    for (size_t i = 0; i < r.px.size(); i += 3) {
      r.px[i] = fill[0];
      r.px[i + 1] = fill[1];
      r.px[i + 2] = fill[2];
    }
    return r;
  }

  std::uint8_t& at(int x, int y, int c) { return px[(static_cast<size_t>(y) * w + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const { return px[(static_cast<size_t>(y) * w + x) * 3 + c]; }

  std::array<std::uint8_t, 3> mean_color() const {
    std::array<std::uint64_t, 3> acc = {0, 0, 0};
    size_t n = px.size() / 3;
    if (n == 0) return {0, 0, 0};
    for (size_t i = 0; i < px.size(); i += 3) {
      acc[0] += px[i];
      acc[1] += px[i + 1];
      acc[2] += px[i + 2];
    }
    return {static_cast<std::uint8_t>(acc[0] / n), static_cast<std::uint8_t>(acc[1] / n),
            static_cast<std::uint8_t>(acc[2] / n)};
  }
};

// Binary P6, maxval 255 only.
inline Raster load_ppm(std::istream& in, const std::string& origin = "<stream>") {
  std::string magic;
  in >> magic;
  if (magic != "P6") throw parse_error(origin + ": not a binary PPM (expected magic P6, got '" + magic + "')");
  auto next_token = [&]() {
    // skips whitespace and '#' comments
    std::string tok;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        while (in.get(c) && c != '\n') {}
        continue;
      }
      if (!std::isspace(static_cast<unsigned char>(c))) {
        tok.push_back(c);
        while (in.get(c) && !std::isspace(static_cast<unsigned char>(c))) tok.push_back(c);
        break;
      }
    }
    if (tok.empty()) throw parse_error(origin + ": truncated PPM header");
    return tok;
  };
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token());
    h = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::invalid_argument&) {
    throw parse_error(origin + ": malformed PPM header");
  }
  if (w <= 0 || h <= 0) throw parse_error(origin + ": non-positive PPM dimensions");
  if (maxval != 255) throw parse_error(origin + ": PPM maxval must be 255, got " + std::to_string(maxval));
  Raster r;
  r.w = w;
  r.h = h;
  r.px.resize(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(r.px.data()), static_cast<std::streamsize>(r.px.size()));
  if (in.gcount() != static_cast<std::streamsize>(r.px.size()))
    throw parse_error(origin + ": truncated PPM pixel data");
  return r;
}

inline Raster load_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw parse_error(path + ": cannot open");
  return load_ppm(f, path);
}

inline void save_ppm(std::ostream& out, const Raster& r) {
  out << "P6\n" << r.w << " " << r.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(r.px.data()), static_cast<std::streamsize>(r.px.size()));
}

inline void save_ppm(const std::string& path, const Raster& r) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw parse_error(path + ": cannot open for writing");
  save_ppm(f, r);
}

inline Raster resize_bilinear(const Raster& src, int nw, int nh) {
  if (nw <= 0 || nh <= 0) throw contract_error("resize: target extents must be positive");
  Raster dst;
  dst.w = nw;
  dst.h = nh;
  dst.px.resize(static_cast<size_t>(nw) * nh * 3);
  double sx = static_cast<double>(src.w) / nw, sy = static_cast<double>(src.h) / nh;
  for (int y = 0; y < nh; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y0c = std::clamp(y0, 0, src.h - 1), y1c = std::clamp(y0 + 1, 0, src.h - 1);
    for (int x = 0; x < nw; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x0c = std::clamp(x0, 0, src.w - 1), x1c = std::clamp(x0 + 1, 0, src.w - 1);
      for (int c = 0; c < 3; ++c) {
        double v = (1 - wy) * ((1 - wx) * src.at(x0c, y0c, c) + wx * src.at(x1c, y0c, c)) +
                   wy * ((1 - wx) * src.at(x0c, y1c, c) + wx * src.at(x1c, y1c, c));
        dst.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0l, 255l));
      }
    }
  }
  return dst;
}

inline Raster flip_horizontal(const Raster& src) {
  Raster dst = src;
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x)
      for (int c = 0; c < 3; ++c) dst.at(x, y, c) = src.at(src.w - 1 - x, y, c);
  return dst;
}

// Crop a window anchored at (x0, y0) in source coordinates; positions outside
// the source are filled with `fill`.
inline Raster crop_pad(const Raster& src, int x0, int y0, int side, std::array<std::uint8_t, 3> fill) {
  Raster dst = Raster::make(side, side, fill);
  for (int y = 0; y < side; ++y) {
    int sy = y0 + y;
    if (sy < 0 || sy >= src.h) continue;
    for (int x = 0; x < side; ++x) {
      int sx = x0 + x;
      if (sx < 0 || sx >= src.w) continue;
      for (int c = 0; c < 3; ++c) dst.at(x, y, c) = src.at(sx, sy, c);
    }
  }
  return dst;
}

// Multiplicative/additive photometric jitter, clamped to [0, 255].
inline Raster jitter(const Raster& src, double gain, double bias) {
  Raster dst = src;
  for (auto& v : dst.px)
    v = static_cast<std::uint8_t>(std::clamp(std::lround(gain * v + bias), 0l, 255l));
  return dst;
}

}  // namespace pyrabox

#endif  // PYRABOX_IMAGE_HPP_
