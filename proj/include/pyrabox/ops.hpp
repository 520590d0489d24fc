#ifndef PYRABOX_OPS_HPP_
#define PYRABOX_OPS_HPP_

#include <algorithm>
#include <cmath>
#include <vector>

#include <cblas.h>

#include "pyrabox/tensor.hpp"

namespace pyrabox {

inline void gemm_raw(bool trans_a, bool trans_b, int m, int n, int k,
                     float alpha, const float* a, int lda, const float* b, int ldb,
                     float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

inline void gemm_raw(bool trans_a, bool trans_b, int m, int n, int k,
                     double alpha, const double* a, int lda, const double* b, int ldb,
                     double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

struct ConvSpec {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
};

inline int conv_out_extent(int in, int k, const ConvSpec& cs) {
  return (in + 2 * cs.pad - cs.dilation * (k - 1) - 1) / cs.stride + 1;
}

namespace detail {

template <class T>
void im2col(const T* img, int channels, int h, int w, int kh, int kw,
            const ConvSpec& cs, int oh, int ow, T* col) {
  // col layout: (channels*kh*kw) x (oh*ow), row-major
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        T* dst = col + (static_cast<size_t>((c * kh + ki) * kw + kj)) * oh * ow;
        const T* src = img + static_cast<size_t>(c) * h * w;
        for (int oi = 0; oi < oh; ++oi) {
          int ii = oi * cs.stride - cs.pad + ki * cs.dilation;
          if (ii < 0 || ii >= h) {
            std::fill(dst, dst + ow, T(0));
            dst += ow;
            continue;
          }
          for (int oj = 0; oj < ow; ++oj) {
            int jj = oj * cs.stride - cs.pad + kj * cs.dilation;
            *dst++ = (jj >= 0 && jj < w) ? src[ii * w + jj] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_accum(const T* col, int channels, int h, int w, int kh, int kw,
                  const ConvSpec& cs, int oh, int ow, T* img) {
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const T* src = col + (static_cast<size_t>((c * kh + ki) * kw + kj)) * oh * ow;
        T* dst = img + static_cast<size_t>(c) * h * w;
        for (int oi = 0; oi < oh; ++oi) {
          int ii = oi * cs.stride - cs.pad + ki * cs.dilation;
          if (ii < 0 || ii >= h) {
            src += ow;
            continue;
          }
          for (int oj = 0; oj < ow; ++oj) {
            int jj = oj * cs.stride - cs.pad + kj * cs.dilation;
            if (jj >= 0 && jj < w) dst[ii * w + jj] += src[oj];
          }
          src += ow;
        }
      }
    }
  }
}

}  // namespace detail

// 2-d convolution, NCHW. w is (out_ch, in_ch, kh, kw); b is (out_ch) or an
// undefined tensor for no bias.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, ConvSpec cs = {}) {
  if (x.rank() != 4) throw contract_error("conv2d: input must be rank 4, got " + shape_str(x.shape()));
  if (w.rank() != 4) throw contract_error("conv2d: weight must be rank 4, got " + shape_str(w.shape()));
  if (x.dim(1) != w.dim(1))
    throw contract_error("conv2d: input channels " + std::to_string(x.dim(1)) +
                         " != weight in-channels " + std::to_string(w.dim(1)));
  if (cs.stride < 1 || cs.pad < 0 || cs.dilation < 1)
    throw contract_error("conv2d: invalid stride/pad/dilation");
  if (b.defined() && b.size() != w.dim(0))
    throw contract_error("conv2d: bias length " + std::to_string(b.size()) +
                         " != out channels " + std::to_string(w.dim(0)));

  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), ww = x.dim(3);
  const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int oh = conv_out_extent(h, kh, cs), ow = conv_out_extent(ww, kw, cs);
  if (oh <= 0 || ow <= 0)
    throw contract_error("conv2d: non-positive output extent for input " + shape_str(x.shape()));

  Tensor<T> out({n, co, oh, ow});
  const int ckk = ci * kh * kw;
  std::vector<T> col(static_cast<size_t>(ckk) * oh * ow);
  for (int i = 0; i < n; ++i) {
    detail::im2col(x.data() + static_cast<size_t>(i) * ci * h * ww, ci, h, ww, kh, kw, cs, oh, ow, col.data());
    gemm_raw(false, false, co, oh * ow, ckk, T(1), w.data(), ckk, col.data(), oh * ow,
             T(0), out.data() + static_cast<size_t>(i) * co * oh * ow, oh * ow);
    if (b.defined()) {
      T* o = out.data() + static_cast<size_t>(i) * co * oh * ow;
      for (int c = 0; c < co; ++c)
        for (int p = 0; p < oh * ow; ++p) o[static_cast<size_t>(c) * oh * ow + p] += b[c];
    }
  }

  bool need = tracing(x) || tracing(w) || (b.defined() && tracing(b));
  if (need) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, wc = w, bc = b, oc = out;
    Graph<T>::current()->record([xc, wc, bc, oc, cs]() mutable {
      const int n = xc.dim(0), ci = xc.dim(1), h = xc.dim(2), ww = xc.dim(3);
      const int co = wc.dim(0), kh = wc.dim(2), kw = wc.dim(3);
      const int oh = oc.dim(2), ow = oc.dim(3);
      const int ckk = ci * kh * kw;
      const std::vector<T>& go = oc.grad();
      std::vector<T> col(static_cast<size_t>(ckk) * oh * ow);
      std::vector<T> dcol(static_cast<size_t>(ckk) * oh * ow);
      for (int i = 0; i < n; ++i) {
        const T* g = go.data() + static_cast<size_t>(i) * co * oh * ow;
        if (wc.requires_grad() || xc.requires_grad())
          detail::im2col(xc.data() + static_cast<size_t>(i) * ci * h * ww, ci, h, ww, kh, kw, cs, oh, ow, col.data());
        if (wc.requires_grad())
          gemm_raw(false, true, co, ckk, oh * ow, T(1), g, oh * ow, col.data(), oh * ow, T(1), wc.grad().data(), ckk);
        if (xc.requires_grad()) {
          gemm_raw(true, false, ckk, oh * ow, co, T(1), wc.data(), ckk, g, oh * ow, T(0), dcol.data(), oh * ow);
          detail::col2im_accum(dcol.data(), ci, h, ww, kh, kw, cs, oh, ow,
                               xc.grad().data() + static_cast<size_t>(i) * ci * h * ww);
        }
        if (bc.defined() && bc.requires_grad()) {
          for (int c = 0; c < co; ++c) {
            T s = 0;
            for (int p = 0; p < oh * ow; ++p) s += g[static_cast<size_t>(c) * oh * ow + p];
            bc.grad()[c] += s;
          }
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  if (tracing(x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    Graph<T>::current()->record([xc, oc]() mutable {
      for (int64_t i = 0; i < xc.size(); ++i)
        if (xc[i] > T(0)) xc.grad()[i] += oc.grad()[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y) {
  if (x.shape() != y.shape())
    throw contract_error("add: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  bool need = tracing(x) || tracing(y);
  if (need) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, yc = y, oc = out;
    Graph<T>::current()->record([xc, yc, oc]() mutable {
      for (int64_t i = 0; i < oc.size(); ++i) {
        if (xc.requires_grad()) xc.grad()[i] += oc.grad()[i];
        if (yc.requires_grad()) yc.grad()[i] += oc.grad()[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& x, const Tensor<T>& y) {
  if (x.shape() != y.shape())
    throw contract_error("mul: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  if (tracing(x) || tracing(y)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, yc = y, oc = out;
    Graph<T>::current()->record([xc, yc, oc]() mutable {
      for (int64_t i = 0; i < oc.size(); ++i) {
        if (xc.requires_grad()) xc.grad()[i] += oc.grad()[i] * yc[i];
        if (yc.requires_grad()) yc.grad()[i] += oc.grad()[i] * xc[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) out[i] = x[i] * c;
  if (tracing(x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    Graph<T>::current()->record([xc, oc, c]() mutable {
      for (int64_t i = 0; i < xc.size(); ++i) xc.grad()[i] += oc.grad()[i] * c;
    });
  }
  return out;
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (int64_t i = 0; i < x.size(); ++i) s += x[i];
  Tensor<T> out = Tensor<T>::scalar(s);
  if (tracing(x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    Graph<T>::current()->record([xc, oc]() mutable {
      T g = oc.grad()[0];
      for (int64_t i = 0; i < xc.size(); ++i) xc.grad()[i] += g;
    });
  }
  return out;
}

enum class UpsampleMode { kNearest, kBilinear };

// Doubles H and W. Bilinear uses half-pixel centers.
template <class T>
Tensor<T> upsample2x(const Tensor<T>& x, UpsampleMode mode = UpsampleMode::kNearest) {
  if (x.rank() != 4) throw contract_error("upsample2x: input must be rank 4");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> out({n, c, 2 * h, 2 * w});
  if (mode == UpsampleMode::kNearest) {
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < 2 * h; ++y)
          for (int z = 0; z < 2 * w; ++z) out.at(i, ch, y, z) = x.at(i, ch, y / 2, z / 2);
  } else {
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < 2 * h; ++y)
          for (int z = 0; z < 2 * w; ++z) {
            double sy = (y + 0.5) / 2.0 - 0.5, sz = (z + 0.5) / 2.0 - 0.5;
            int y0 = static_cast<int>(std::floor(sy)), z0 = static_cast<int>(std::floor(sz));
            double fy = sy - y0, fz = sz - z0;
            int y0c = std::clamp(y0, 0, h - 1), y1c = std::clamp(y0 + 1, 0, h - 1);
            int z0c = std::clamp(z0, 0, w - 1), z1c = std::clamp(z0 + 1, 0, w - 1);
            out.at(i, ch, y, z) = static_cast<T>(
                (1 - fy) * ((1 - fz) * x.at(i, ch, y0c, z0c) + fz * x.at(i, ch, y0c, z1c)) +
                fy * ((1 - fz) * x.at(i, ch, y1c, z0c) + fz * x.at(i, ch, y1c, z1c)));
          }
  }
  if (tracing(x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    Graph<T>::current()->record([xc, oc, mode]() mutable {
      const int n = xc.dim(0), c = xc.dim(1), h = xc.dim(2), w = xc.dim(3);
      auto& gx = xc.grad();
      const auto& go = oc.grad();
      (void)gx;
      if (mode == UpsampleMode::kNearest) {
        for (int i = 0; i < n; ++i)
          for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < 2 * h; ++y)
              for (int z = 0; z < 2 * w; ++z) {
                size_t oi = ((static_cast<size_t>(i) * c + ch) * 2 * h + y) * 2 * w + z;
                size_t xi = ((static_cast<size_t>(i) * c + ch) * h + y / 2) * w + z / 2;
                xc.grad()[xi] += go[oi];
              }
      } else {
        for (int i = 0; i < n; ++i)
          for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < 2 * h; ++y)
              for (int z = 0; z < 2 * w; ++z) {
                double sy = (y + 0.5) / 2.0 - 0.5, sz = (z + 0.5) / 2.0 - 0.5;
                int y0 = static_cast<int>(std::floor(sy)), z0 = static_cast<int>(std::floor(sz));
                double fy = sy - y0, fz = sz - z0;
                int y0c = std::clamp(y0, 0, h - 1), y1c = std::clamp(y0 + 1, 0, h - 1);
                int z0c = std::clamp(z0, 0, w - 1), z1c = std::clamp(z0 + 1, 0, w - 1);
                size_t oi = ((static_cast<size_t>(i) * c + ch) * 2 * h + y) * 2 * w + z;
                T g = go[oi];
                auto acc = [&](int yy, int zz, double wgt) {
                  xc.grad()[((static_cast<size_t>(i) * c + ch) * h + yy) * w + zz] += static_cast<T>(wgt) * g;
                };
                acc(y0c, z0c, (1 - fy) * (1 - fz));
                acc(y0c, z1c, (1 - fy) * fz);
                acc(y1c, z0c, fy * (1 - fz));
                acc(y1c, z1c, fy * fz);
              }
      }
    });
  }
  return out;
}

// 2x2 stride-2 max pooling; input extents must be even. First-seen index wins
// ties so backward routes to a single cell.
template <class T>
Tensor<T> maxpool2x(const Tensor<T>& x) {
  if (x.rank() != 4) throw contract_error("maxpool2x: input must be rank 4");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    throw contract_error("maxpool2x: spatial extents must be even, got " + shape_str(x.shape()));
  Tensor<T> out({n, c, h / 2, w / 2});
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  int64_t o = 0;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; y += 2)
        for (int z = 0; z < w; z += 2) {
          int64_t base = ((static_cast<int64_t>(i) * c + ch) * h + y) * w + z;
          int64_t best = base;
          T bv = x[base];
          for (int dy = 0; dy < 2; ++dy)
            for (int dz = 0; dz < 2; ++dz) {
              int64_t idx = base + static_cast<int64_t>(dy) * w + dz;
              if (x[idx] > bv) { bv = x[idx]; best = idx; }
            }
          out[o] = bv;
          (*argmax)[static_cast<size_t>(o)] = best;
          ++o;
        }
  if (tracing(x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    Graph<T>::current()->record([xc, oc, argmax]() mutable {
      for (int64_t i = 0; i < oc.size(); ++i) xc.grad()[(*argmax)[static_cast<size_t>(i)]] += oc.grad()[i];
    });
  }
  return out;
}

// Per spatial position: divide the channel vector by (||v||2 + eps), then
// multiply learnable per-channel gamma.
template <class T>
Tensor<T> l2_rescale(const Tensor<T>& x, const Tensor<T>& gamma, T eps = T(1e-12)) {
  if (x.rank() != 4) throw contract_error("l2_rescale: input must be rank 4");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (gamma.size() != c)
    throw contract_error("l2_rescale: gamma length " + std::to_string(gamma.size()) +
                         " != channels " + std::to_string(c));
  Tensor<T> out(x.shape());
  auto norms = std::make_shared<std::vector<T>>(static_cast<size_t>(n) * h * w);
  for (int i = 0; i < n; ++i)
    for (int y = 0; y < h; ++y)
      for (int z = 0; z < w; ++z) {
        T ss = 0;
        for (int ch = 0; ch < c; ++ch) { T v = x.at(i, ch, y, z); ss += v * v; }
        T r = std::sqrt(ss) + eps;
        (*norms)[(static_cast<size_t>(i) * h + y) * w + z] = r;
        for (int ch = 0; ch < c; ++ch) out.at(i, ch, y, z) = gamma[ch] * x.at(i, ch, y, z) / r;
      }
  if (tracing(x) || tracing(gamma)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, gc = gamma, oc = out;
    Graph<T>::current()->record([xc, gc, oc, norms, eps]() mutable {
      const int n = xc.dim(0), c = xc.dim(1), h = xc.dim(2), w = xc.dim(3);
      for (int i = 0; i < n; ++i)
        for (int y = 0; y < h; ++y)
          for (int z = 0; z < w; ++z) {
            T r = (*norms)[(static_cast<size_t>(i) * h + y) * w + z];
            T nrm = r - eps;  // plain ||v||
            T dot = 0;
            for (int ch = 0; ch < c; ++ch) dot += oc.grad()[((static_cast<size_t>(i) * c + ch) * h + y) * w + z] * gc[ch] * xc.at(i, ch, y, z);
            for (int ch = 0; ch < c; ++ch) {
              size_t oi = ((static_cast<size_t>(i) * c + ch) * h + y) * w + z;
              T go = oc.grad()[oi];
              if (gc.requires_grad()) gc.grad()[ch] += go * xc.at(i, ch, y, z) / r;
              if (xc.requires_grad()) {
                T g = gc[ch] * go / r;
                if (nrm > T(0)) g -= dot * xc.at(i, ch, y, z) / (nrm * r * r);
                xc.grad()[oi] += g;
              }
            }
          }
    });
  }
  return out;
}

// Softmax over a channel group at every spatial position.
template <class T>
Tensor<T> softmax_channels(const Tensor<T>& x, int group_start, int group_len) {
  if (x.rank() != 4) throw contract_error("softmax_channels: input must be rank 4");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (group_len <= 0 || group_start < 0 || group_start + group_len > c)
    throw contract_error("softmax_channels: group [" + std::to_string(group_start) + "," +
                         std::to_string(group_start + group_len) + ") out of range for " +
                         std::to_string(c) + " channels");
  Tensor<T> out({n, group_len, h, w});
  for (int i = 0; i < n; ++i)
    for (int y = 0; y < h; ++y)
      for (int z = 0; z < w; ++z) {
        T m = x.at(i, group_start, y, z);
        for (int g = 1; g < group_len; ++g) m = std::max(m, x.at(i, group_start + g, y, z));
        T s = 0;
        for (int g = 0; g < group_len; ++g) {
          T e = std::exp(x.at(i, group_start + g, y, z) - m);
          out.at(i, g, y, z) = e;
          s += e;
        }
        for (int g = 0; g < group_len; ++g) out.at(i, g, y, z) /= s;
      }
  if (tracing(x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    Graph<T>::current()->record([xc, oc, group_start, group_len]() mutable {
      const int n = oc.dim(0), h = oc.dim(2), w = oc.dim(3);
      for (int i = 0; i < n; ++i)
        for (int y = 0; y < h; ++y)
          for (int z = 0; z < w; ++z) {
            T dot = 0;
            for (int g = 0; g < group_len; ++g) dot += oc.grad()[((static_cast<size_t>(i) * group_len + g) * h + y) * w + z] * oc.at(i, g, y, z);
            for (int g = 0; g < group_len; ++g) {
              T p = oc.at(i, g, y, z);
              T go = oc.grad()[((static_cast<size_t>(i) * group_len + g) * h + y) * w + z];
              xc.grad()[((static_cast<size_t>(i) * xc.dim(1) + group_start + g) * h + y) * w + z] += p * (go - dot);
            }
          }
    });
  }
  return out;
}

// Per-position max over a channel group; gradient goes only to the argmax
// channel, lowest index on ties. Output has one channel.
template <class T>
Tensor<T> channel_group_max(const Tensor<T>& x, int group_start, int group_len) {
  if (x.rank() != 4) throw contract_error("channel_group_max: input must be rank 4");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (group_len <= 0 || group_start < 0 || group_start + group_len > c)
    throw contract_error("channel_group_max: group [" + std::to_string(group_start) + "," +
                         std::to_string(group_start + group_len) + ") out of range for " +
                         std::to_string(c) + " channels");
  Tensor<T> out({n, 1, h, w});
  auto arg = std::make_shared<std::vector<int>>(static_cast<size_t>(n) * h * w);
  for (int i = 0; i < n; ++i)
    for (int y = 0; y < h; ++y)
      for (int z = 0; z < w; ++z) {
        int best = 0;
        T bv = x.at(i, group_start, y, z);
        for (int g = 1; g < group_len; ++g) {
          T v = x.at(i, group_start + g, y, z);
          if (v > bv) { bv = v; best = g; }
        }
        out.at(i, 0, y, z) = bv;
        (*arg)[(static_cast<size_t>(i) * h + y) * w + z] = best;
      }
  if (tracing(x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    Graph<T>::current()->record([xc, oc, arg, group_start]() mutable {
      const int n = oc.dim(0), h = oc.dim(2), w = oc.dim(3);
      for (int i = 0; i < n; ++i)
        for (int y = 0; y < h; ++y)
          for (int z = 0; z < w; ++z) {
            int g = (*arg)[(static_cast<size_t>(i) * h + y) * w + z];
            xc.grad()[((static_cast<size_t>(i) * xc.dim(1) + group_start + g) * h + y) * w + z] +=
                oc.grad()[((static_cast<size_t>(i) * 1) * h + y) * w + z];
          }
    });
  }
  return out;
}

// Contiguous channel slice [start, start+len).
template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, int start, int len) {
  if (x.rank() != 4) throw contract_error("slice_channels: input must be rank 4");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (len <= 0 || start < 0 || start + len > c)
    throw contract_error("slice_channels: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of range for " + std::to_string(c) + " channels");
  Tensor<T> out({n, len, h, w});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < len; ++ch)
      std::copy_n(&x.at(i, start + ch, 0, 0), static_cast<size_t>(h) * w, &out.at(i, ch, 0, 0));
  if (tracing(x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    Graph<T>::current()->record([xc, oc, start, len]() mutable {
      const int n = oc.dim(0), h = oc.dim(2), w = oc.dim(3);
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < len; ++ch) {
          size_t xo = ((static_cast<size_t>(i) * xc.dim(1) + start + ch) * h) * w;
          size_t oo = ((static_cast<size_t>(i) * len + ch) * h) * w;
          for (size_t p = 0; p < static_cast<size_t>(h) * w; ++p) xc.grad()[xo + p] += oc.grad()[oo + p];
        }
    });
  }
  return out;
}

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw contract_error("concat_channels: empty input list");
  const int n = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
  int ctot = 0;
  for (const auto& x : xs) {
    if (x.rank() != 4 || x.dim(0) != n || x.dim(2) != h || x.dim(3) != w)
      throw contract_error("concat_channels: mismatched shapes");
    ctot += x.dim(1);
  }
  Tensor<T> out({n, ctot, h, w});
  int off = 0;
  for (const auto& x : xs) {
    for (int i = 0; i < n; ++i)
      std::copy_n(&x.at(i, 0, 0, 0), static_cast<size_t>(x.dim(1)) * h * w, &out.at(i, off, 0, 0));
    off += x.dim(1);
  }
  bool need = false;
  for (const auto& x : xs) need = need || tracing(x);
  if (need) {
    out.set_requires_grad(true);
    std::vector<Tensor<T>> xc = xs;
    Tensor<T> oc = out;
    Graph<T>::current()->record([xc, oc]() mutable {
      const int n = oc.dim(0), h = oc.dim(2), w = oc.dim(3);
      int off = 0;
      for (auto& x : xc) {
        if (x.requires_grad()) {
          for (int i = 0; i < n; ++i) {
            size_t oo = ((static_cast<size_t>(i) * oc.dim(1) + off) * h) * w;
            size_t xo = (static_cast<size_t>(i) * x.dim(1) * h) * w;
            for (size_t p = 0; p < static_cast<size_t>(x.dim(1)) * h * w; ++p) x.grad()[xo + p] += oc.grad()[oo + p];
          }
        }
        off += x.dim(1);
      }
    });
  }
  return out;
}

}  // namespace pyrabox

#endif  // PYRABOX_OPS_HPP_
