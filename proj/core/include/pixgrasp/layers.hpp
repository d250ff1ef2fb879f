#pragma once

#include <Eigen/Core>
#include <cassert>

#include "pixgrasp/tensor.hpp"

// Forward/backward primitives for the policy network. Convolutions go through
// im2col + GEMM; transposed convolutions are restricted to kernel == stride
// (non-overlapping upsampling), which is all the architecture uses.

namespace pixgrasp {

struct ConvSpec {
  int in_ch = 0;
  int out_ch = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_size(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

template <typename T>
using MatMap =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
void im2col(const T* x, int ch, int h, int w, const ConvSpec& s, T* cols) {
  const int ho = s.out_size(h), wo = s.out_size(w);
  const int n = ho * wo;
  for (int c = 0; c < ch; ++c) {
    for (int kr = 0; kr < s.kernel; ++kr) {
      for (int kc = 0; kc < s.kernel; ++kc) {
        T* row = cols + (static_cast<std::size_t>(c) * s.kernel * s.kernel +
                         static_cast<std::size_t>(kr) * s.kernel + kc) *
                            n;
        for (int r = 0; r < ho; ++r) {
          const int ir = r * s.stride - s.pad + kr;
          for (int cc = 0; cc < wo; ++cc) {
            const int ic = cc * s.stride - s.pad + kc;
            row[r * wo + cc] =
                (ir >= 0 && ir < h && ic >= 0 && ic < w)
                    ? x[(static_cast<std::size_t>(c) * h + ir) * w + ic]
                    : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, int ch, int h, int w, const ConvSpec& s, T* x) {
  const int ho = s.out_size(h), wo = s.out_size(w);
  const int n = ho * wo;
  std::fill(x, x + static_cast<std::size_t>(ch) * h * w, T(0));
  for (int c = 0; c < ch; ++c) {
    for (int kr = 0; kr < s.kernel; ++kr) {
      for (int kc = 0; kc < s.kernel; ++kc) {
        const T* row = cols + (static_cast<std::size_t>(c) * s.kernel * s.kernel +
                               static_cast<std::size_t>(kr) * s.kernel + kc) *
                                  n;
        for (int r = 0; r < ho; ++r) {
          const int ir = r * s.stride - s.pad + kr;
          if (ir < 0 || ir >= h) continue;
          for (int cc = 0; cc < wo; ++cc) {
            const int ic = cc * s.stride - s.pad + kc;
            if (ic < 0 || ic >= w) continue;
            x[(static_cast<std::size_t>(c) * h + ir) * w + ic] += row[r * wo + cc];
          }
        }
      }
    }
  }
}

// y = W * im2col(x) + b. cols is scratch of size (in_ch*k*k, ho*wo); it may
// be null for 1x1 stride-1 convolutions, where im2col is the identity.
template <typename T>
void conv2d_forward(const T* x, int h, int w, const ConvSpec& s, const T* weight,
                    const T* bias, T* cols, T* y) {
  const int ho = s.out_size(h), wo = s.out_size(w);
  const int n = ho * wo, k = s.in_ch * s.kernel * s.kernel;
  const T* col_data = x;
  if (s.kernel != 1 || s.stride != 1 || s.pad != 0) {
    assert(cols != nullptr);
    im2col(x, s.in_ch, h, w, s, cols);
    col_data = cols;
  }
  ConstMatMap<T> wm(weight, s.out_ch, k);
  ConstMatMap<T> cm(col_data, k, n);
  MatMap<T> ym(y, s.out_ch, n);
  ym.noalias() = wm * cm;
  if (bias) {
    for (int oc = 0; oc < s.out_ch; ++oc) {
      ym.row(oc).array() += bias[oc];
    }
  }
}

// Gradients for conv2d. cols must hold im2col(x) from the forward pass (or be
// recomputed by the caller). Accumulates into gw/gb; overwrites gx.
template <typename T>
void conv2d_backward(const T* cols, int h, int w, const ConvSpec& s,
                     const T* weight, const T* gy, T* gcols_scratch, T* gx,
                     T* gw, T* gb) {
  const int ho = s.out_size(h), wo = s.out_size(w);
  const int n = ho * wo, k = s.in_ch * s.kernel * s.kernel;
  ConstMatMap<T> gym(gy, s.out_ch, n);
  if (gw) {
    ConstMatMap<T> cm(cols, k, n);
    MatMap<T> gwm(gw, s.out_ch, k);
    gwm.noalias() += gym * cm.transpose();
  }
  if (gb) {
    for (int oc = 0; oc < s.out_ch; ++oc) {
      gb[oc] += gym.row(oc).sum();
    }
  }
  if (gx) {
    ConstMatMap<T> wm(weight, s.out_ch, k);
    MatMap<T> gcm(gcols_scratch, k, n);
    gcm.noalias() = wm.transpose() * gym;
    col2im(gcols_scratch, s.in_ch, h, w, s, gx);
  }
}

// Transposed convolution with kernel == stride: every output pixel receives
// exactly one input pixel. Weight layout (in_ch, out_ch, k, k).
template <typename T>
void deconv2d_forward(const T* x, int h, int w, int in_ch, int out_ch, int k,
                      const T* weight, const T* bias, T* y) {
  const int ho = h * k, wo = w * k;
  for (int oc = 0; oc < out_ch; ++oc) {
    T* yc = y + static_cast<std::size_t>(oc) * ho * wo;
    const T bv = bias ? bias[oc] : T(0);
    std::fill(yc, yc + static_cast<std::size_t>(ho) * wo, bv);
  }
  for (int ic = 0; ic < in_ch; ++ic) {
    const T* xc = x + static_cast<std::size_t>(ic) * h * w;
    for (int oc = 0; oc < out_ch; ++oc) {
      const T* wk = weight + ((static_cast<std::size_t>(ic) * out_ch + oc) * k * k);
      T* yc = y + static_cast<std::size_t>(oc) * ho * wo;
      for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
          const T v = xc[r * w + c];
          for (int dr = 0; dr < k; ++dr) {
            T* yrow = yc + (static_cast<std::size_t>(r) * k + dr) * wo + c * k;
            const T* wrow = wk + dr * k;
            for (int dc = 0; dc < k; ++dc) yrow[dc] += v * wrow[dc];
          }
        }
      }
    }
  }
}

template <typename T>
void deconv2d_backward(const T* x, int h, int w, int in_ch, int out_ch, int k,
                       const T* weight, const T* gy, T* gx, T* gw, T* gb) {
  const int wo = w * k;
  if (gb) {
    for (int oc = 0; oc < out_ch; ++oc) {
      const T* gyc = gy + static_cast<std::size_t>(oc) * h * k * wo;
      T acc(0);
      for (std::size_t i = 0; i < static_cast<std::size_t>(h) * k * wo; ++i) {
        acc += gyc[i];
      }
      gb[oc] += acc;
    }
  }
  if (gx) {
    std::fill(gx, gx + static_cast<std::size_t>(in_ch) * h * w, T(0));
  }
  for (int ic = 0; ic < in_ch; ++ic) {
    for (int oc = 0; oc < out_ch; ++oc) {
      const T* wk = weight + ((static_cast<std::size_t>(ic) * out_ch + oc) * k * k);
      T* gwk = gw ? gw + ((static_cast<std::size_t>(ic) * out_ch + oc) * k * k) : nullptr;
      const T* gyc = gy + static_cast<std::size_t>(oc) * h * k * wo;
      const T* xc = x + static_cast<std::size_t>(ic) * h * w;
      T* gxc = gx ? gx + static_cast<std::size_t>(ic) * h * w : nullptr;
      for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
          const T xv = xc[r * w + c];
          T acc(0);
          for (int dr = 0; dr < k; ++dr) {
            const T* gyrow = gyc + (static_cast<std::size_t>(r) * k + dr) * wo + c * k;
            const T* wrow = wk + dr * k;
            T* gwrow = gwk ? gwk + dr * k : nullptr;
            for (int dc = 0; dc < k; ++dc) {
              acc += gyrow[dc] * wrow[dc];
              if (gwrow) gwrow[dc] += gyrow[dc] * xv;
            }
          }
          if (gxc) gxc[r * w + c] += acc;
        }
      }
    }
  }
}

template <typename T>
void relu_forward(T* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] < T(0)) x[i] = T(0);
  }
}

// Backward using the post-activation values: units at exactly 0 are dead.
template <typename T>
void relu_backward(const T* y, T* gy, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i] <= T(0)) gy[i] = T(0);
  }
}

template <typename T>
void upsample2x_forward(const T* x, int ch, int h, int w, T* y) {
  for (int c = 0; c < ch; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * h * w;
    T* yc = y + static_cast<std::size_t>(c) * h * w * 4;
    for (int r = 0; r < h; ++r) {
      for (int cc = 0; cc < w; ++cc) {
        const T v = xc[r * w + cc];
        T* base = yc + (static_cast<std::size_t>(2 * r)) * (2 * w) + 2 * cc;
        base[0] = v;
        base[1] = v;
        base[2 * w] = v;
        base[2 * w + 1] = v;
      }
    }
  }
}

template <typename T>
void upsample2x_backward(const T* gy, int ch, int h, int w, T* gx) {
  for (int c = 0; c < ch; ++c) {
    T* gxc = gx + static_cast<std::size_t>(c) * h * w;
    const T* gyc = gy + static_cast<std::size_t>(c) * h * w * 4;
    for (int r = 0; r < h; ++r) {
      for (int cc = 0; cc < w; ++cc) {
        const T* base = gyc + (static_cast<std::size_t>(2 * r)) * (2 * w) + 2 * cc;
        gxc[r * w + cc] = base[0] + base[1] + base[2 * w] + base[2 * w + 1];
      }
    }
  }
}

}  // namespace pixgrasp
