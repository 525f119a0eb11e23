#include "mcnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace mcnet {

namespace {

constexpr int64_t kStrip = 512;  // output positions per im2col strip

struct ConvDims {
  int64_t N, C, H, W, K, kh, kw, Ho, Wo, ckk, hw;
  int stride, pad;
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                   int padding) {
  if (x.ndim() != 4 || w.ndim() != 4)
    throw RuntimeFail("conv2d: expected 4-D input/weight, got " + shape_str(x.shape()) + " and " +
                      shape_str(w.shape()));
  if (x.dim(1) != w.dim(1))
    throw RuntimeFail("conv2d: channel mismatch: input " + shape_str(x.shape()) + " weight " +
                      shape_str(w.shape()));
  if (w.dim(2) % 2 == 0 || w.dim(3) % 2 == 0) throw RuntimeFail("conv2d: kernel extents must be odd");
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != w.dim(0)))
    throw RuntimeFail("conv2d: bias shape must be [K]");
  if (stride < 1 || padding < 0) throw RuntimeFail("conv2d: bad stride/padding");
  ConvDims d;
  d.N = x.dim(0); d.C = x.dim(1); d.H = x.dim(2); d.W = x.dim(3);
  d.K = w.dim(0); d.kh = w.dim(2); d.kw = w.dim(3);
  d.stride = stride; d.pad = padding;
  d.Ho = (d.H + 2 * padding - d.kh) / stride + 1;
  d.Wo = (d.W + 2 * padding - d.kw) / stride + 1;
  if (d.H + 2 * padding < d.kh || d.W + 2 * padding < d.kw || d.Ho <= 0 || d.Wo <= 0)
    throw RuntimeFail("conv2d: zero-size spatial output for input " + shape_str(x.shape()));
  d.ckk = d.C * d.kh * d.kw;
  d.hw = d.Ho * d.Wo;
  return d;
}

// Strips cover whole output rows [r0, r1), S = (r1-r0)*Wo positions.
// col[(c*kh+i)*kw+j][s] for s relative to the strip.
template <typename T>
void im2col_strip(const T* x, const ConvDims& d, int64_t r0, int64_t r1, T* col) {
  int64_t S = (r1 - r0) * d.Wo;
  for (int64_t c = 0; c < d.C; ++c) {
    const T* plane = x + c * d.H * d.W;
    for (int64_t i = 0; i < d.kh; ++i) {
      for (int64_t j = 0; j < d.kw; ++j) {
        T* row = col + ((c * d.kh + i) * d.kw + j) * S;
        if (d.stride == 1) {
          // per output row: zero margins, copy the contiguous valid span
          for (int64_t oh = r0; oh < r1; ++oh) {
            T* dst = row + (oh - r0) * d.Wo;
            int64_t ih = oh - d.pad + i;
            if (ih < 0 || ih >= d.H) {
              std::fill(dst, dst + d.Wo, T(0));
              continue;
            }
            int64_t shift = j - d.pad;  // iw = ow + shift
            int64_t lo = std::max<int64_t>(0, -shift);
            int64_t hi = std::min<int64_t>(d.Wo, d.W - shift);
            if (lo > 0) std::fill(dst, dst + lo, T(0));
            if (hi > lo)
              std::memcpy(dst + lo, plane + ih * d.W + lo + shift,
                          sizeof(T) * static_cast<size_t>(hi - lo));
            if (hi < d.Wo) std::fill(dst + std::max(lo, hi), dst + d.Wo, T(0));
          }
        } else {
          int64_t s = 0;
          for (int64_t oh = r0; oh < r1; ++oh) {
            int64_t ih = oh * d.stride - d.pad + i;
            const T* src = plane + ih * d.W;
            bool row_ok = ih >= 0 && ih < d.H;
            for (int64_t ow = 0; ow < d.Wo; ++ow, ++s) {
              int64_t iw = ow * d.stride - d.pad + j;
              row[s] = (row_ok && iw >= 0 && iw < d.W) ? src[iw] : T(0);
            }
          }
        }
      }
    }
  }
}

// Transposed layout: colT[s][c*kh*kw + ...], one contiguous patch per position.
template <typename T>
void im2col_strip_t(const T* x, const ConvDims& d, int64_t r0, int64_t r1, T* colT) {
  int64_t s = 0;
  for (int64_t oh = r0; oh < r1; ++oh) {
    for (int64_t ow = 0; ow < d.Wo; ++ow, ++s) {
      T* patch = colT + s * d.ckk;
      int64_t ih0 = oh * d.stride - d.pad;
      int64_t iw0 = ow * d.stride - d.pad;
      for (int64_t c = 0; c < d.C; ++c) {
        const T* plane = x + c * d.H * d.W;
        for (int64_t i = 0; i < d.kh; ++i) {
          int64_t ih = ih0 + i;
          T* prow = patch + (c * d.kh + i) * d.kw;
          if (ih < 0 || ih >= d.H) {
            for (int64_t j = 0; j < d.kw; ++j) prow[j] = T(0);
            continue;
          }
          const T* src = plane + ih * d.W;
          for (int64_t j = 0; j < d.kw; ++j) {
            int64_t iw = iw0 + j;
            prow[j] = (iw >= 0 && iw < d.W) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

// out[k][0..S) += W[K][CKK] x col[CKK][S] with k rows out_stride apart.
// k-rows tiled by four so each col row is read once per tile; the compiler
// vectorizes the s loops.
template <typename T>
void gemm_w_col(const T* __restrict w, const T* __restrict col, T* out, int64_t K, int64_t ckk,
                int64_t S, int64_t out_stride) {
  int64_t k = 0;
  for (; k + 4 <= K; k += 4) {
    T* __restrict o0 = out + (k + 0) * out_stride;
    T* __restrict o1 = out + (k + 1) * out_stride;
    T* __restrict o2 = out + (k + 2) * out_stride;
    T* __restrict o3 = out + (k + 3) * out_stride;
    for (int64_t c = 0; c < ckk; ++c) {
      T a0 = w[(k + 0) * ckk + c];
      T a1 = w[(k + 1) * ckk + c];
      T a2 = w[(k + 2) * ckk + c];
      T a3 = w[(k + 3) * ckk + c];
      const T* __restrict crow = col + c * S;
      for (int64_t s = 0; s < S; ++s) {
        T v = crow[s];
        o0[s] += a0 * v;
        o1[s] += a1 * v;
        o2[s] += a2 * v;
        o3[s] += a3 * v;
      }
    }
  }
  for (; k < K; ++k) {
    T* __restrict o = out + k * out_stride;
    for (int64_t c = 0; c < ckk; ++c) {
      T a = w[k * ckk + c];
      const T* __restrict crow = col + c * S;
      for (int64_t s = 0; s < S; ++s) o[s] += a * crow[s];
    }
  }
}

template <typename T>
std::vector<T>& scratch_buffer() {
  static thread_local std::vector<T> buf;
  return buf;
}

int64_t strip_rows(const ConvDims& d) {
  int64_t r = kStrip / d.Wo;
  if (r < 1) r = 1;
  if (r > d.Ho) r = d.Ho;
  return r;
}

template <typename T>
void conv_forward_im2col(const T* x, const T* w, const T* bias, T* out, const ConvDims& d) {
  int64_t rows = strip_rows(d);
  int64_t n_strips = (d.Ho + rows - 1) / rows;
  parallel_for(d.N * n_strips, [&](int64_t lo, int64_t hi) {
    auto& col = scratch_buffer<T>();
    for (int64_t task = lo; task < hi; ++task) {
      int64_t n = task / n_strips;
      int64_t r0 = (task % n_strips) * rows;
      int64_t r1 = std::min(r0 + rows, d.Ho);
      int64_t S = (r1 - r0) * d.Wo;
      col.resize(static_cast<size_t>(d.ckk * S));
      im2col_strip(x + n * d.C * d.H * d.W, d, r0, r1, col.data());
      T* ostrip = out + (n * d.K) * d.hw + r0 * d.Wo;
      for (int64_t k = 0; k < d.K; ++k) {
        T b = bias ? bias[k] : T(0);
        T* orow = ostrip + k * d.hw;
        for (int64_t s = 0; s < S; ++s) orow[s] = b;
      }
      gemm_w_col(w, col.data(), ostrip, d.K, d.ckk, S, d.hw);
    }
  });
}

template <typename T>
void conv_forward_direct(const T* x, const T* w, const T* bias, T* out, const ConvDims& d) {
  parallel_for(d.N * d.K, [&](int64_t lo, int64_t hi) {
    for (int64_t task = lo; task < hi; ++task) {
      int64_t n = task / d.K, k = task % d.K;
      const T* xs = x + n * d.C * d.H * d.W;
      const T* wk = w + k * d.ckk;
      T* orow = out + (n * d.K + k) * d.hw;
      T b = bias ? bias[k] : T(0);
      for (int64_t oh = 0; oh < d.Ho; ++oh) {
        for (int64_t ow = 0; ow < d.Wo; ++ow) {
          T acc = b;
          for (int64_t c = 0; c < d.C; ++c) {
            const T* plane = xs + c * d.H * d.W;
            const T* wc = wk + c * d.kh * d.kw;
            for (int64_t i = 0; i < d.kh; ++i) {
              int64_t ih = oh * d.stride - d.pad + i;
              if (ih < 0 || ih >= d.H) continue;
              for (int64_t j = 0; j < d.kw; ++j) {
                int64_t iw = ow * d.stride - d.pad + j;
                if (iw < 0 || iw >= d.W) continue;
                acc += wc[i * d.kw + j] * plane[ih * d.W + iw];
              }
            }
          }
          orow[oh * d.Wo + ow] = acc;
        }
      }
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 int padding, ConvAlgo algo) {
  ConvDims d = conv_dims(x, weight, bias, stride, padding);
  std::vector<std::shared_ptr<detail::Node<T>>> parents = {x.node(), weight.node()};
  if (bias.defined()) parents.push_back(bias.node());
  auto out = Tensor<T>::make_op({d.N, d.K, d.Ho, d.Wo}, std::move(parents));

  const T* bias_ptr = bias.defined() ? bias.data() : nullptr;
  if (algo == ConvAlgo::im2col)
    conv_forward_im2col(x.data(), weight.data(), bias_ptr, out.data(), d);
  else
    conv_forward_direct(x.data(), weight.data(), bias_ptr, out.data(), d);

  if (out.requires_grad()) {
    auto xn = x.node();
    auto wn = weight.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    auto on = out.node().get();
    out.set_backward([xn, wn, bn, on, d] {
      const T* g = on->grad.data();
      const T* wv = wn->value.data();
      const T* xv = xn->value.data();

      if (bn && bn->requires_grad) {
        bn->ensure_grad();
        T* bg = bn->grad.data();
        parallel_for(d.K, [&](int64_t lo, int64_t hi) {
          for (int64_t k = lo; k < hi; ++k) {
            T acc = 0;
            for (int64_t n = 0; n < d.N; ++n) {
              const T* grow = g + (n * d.K + k) * d.hw;
              for (int64_t s = 0; s < d.hw; ++s) acc += grow[s];
            }
            bg[k] += acc;
          }
        });
      }

      int64_t rows = strip_rows(d);
      int64_t n_strips = (d.Ho + rows - 1) / rows;

      if (wn->requires_grad) {
        wn->ensure_grad();
        // Per-sample partials, then an ordered reduction so the result is
        // independent of thread count.
        std::vector<T> partial(static_cast<size_t>(d.N * d.K * d.ckk), T(0));
        parallel_for(d.N, [&](int64_t lo, int64_t hi) {
          auto& colT = scratch_buffer<T>();
          for (int64_t n = lo; n < hi; ++n) {
            T* dwn = partial.data() + n * d.K * d.ckk;
            for (int64_t st = 0; st < n_strips; ++st) {
              int64_t r0 = st * rows, r1 = std::min(r0 + rows, d.Ho);
              int64_t S = (r1 - r0) * d.Wo;
              colT.resize(static_cast<size_t>(S * d.ckk));
              im2col_strip_t(xv + n * d.C * d.H * d.W, d, r0, r1, colT.data());
              const T* gstrip = g + n * d.K * d.hw + r0 * d.Wo;
              for (int64_t s = 0; s < S; ++s) {
                const T* __restrict patch = colT.data() + s * d.ckk;
                int64_t k = 0;
                for (; k + 4 <= d.K; k += 4) {
                  T a0 = gstrip[(k + 0) * d.hw + s];
                  T a1 = gstrip[(k + 1) * d.hw + s];
                  T a2 = gstrip[(k + 2) * d.hw + s];
                  T a3 = gstrip[(k + 3) * d.hw + s];
                  T* __restrict w0 = dwn + (k + 0) * d.ckk;
                  T* __restrict w1 = dwn + (k + 1) * d.ckk;
                  T* __restrict w2 = dwn + (k + 2) * d.ckk;
                  T* __restrict w3 = dwn + (k + 3) * d.ckk;
                  for (int64_t c = 0; c < d.ckk; ++c) {
                    T v = patch[c];
                    w0[c] += a0 * v;
                    w1[c] += a1 * v;
                    w2[c] += a2 * v;
                    w3[c] += a3 * v;
                  }
                }
                for (; k < d.K; ++k) {
                  T a = gstrip[k * d.hw + s];
                  T* __restrict dwk = dwn + k * d.ckk;
                  for (int64_t c = 0; c < d.ckk; ++c) dwk[c] += a * patch[c];
                }
              }
            }
          }
        });
        T* wg = wn->grad.data();
        for (int64_t n = 0; n < d.N; ++n) {
          const T* dwn = partial.data() + n * d.K * d.ckk;
          for (int64_t i = 0; i < d.K * d.ckk; ++i) wg[i] += dwn[i];
        }
      }

      if (xn->requires_grad) {
        xn->ensure_grad();
        T* xg = xn->grad.data();
        parallel_for(d.N, [&](int64_t lo, int64_t hi) {
          auto& dcol = scratch_buffer<T>();
          for (int64_t n = lo; n < hi; ++n) {
            T* xgn = xg + n * d.C * d.H * d.W;
            for (int64_t st = 0; st < n_strips; ++st) {
              int64_t r0 = st * rows, r1 = std::min(r0 + rows, d.Ho);
              int64_t S = (r1 - r0) * d.Wo;
              dcol.assign(static_cast<size_t>(d.ckk * S), T(0));
              // dcol = W^T x dY, k tiled so each dcol row is swept once per tile
              const T* gstrip = g + n * d.K * d.hw + r0 * d.Wo;
              for (int64_t c = 0; c < d.ckk; ++c) {
                T* __restrict drow = dcol.data() + c * S;
                int64_t k = 0;
                for (; k + 4 <= d.K; k += 4) {
                  T a0 = wv[(k + 0) * d.ckk + c];
                  T a1 = wv[(k + 1) * d.ckk + c];
                  T a2 = wv[(k + 2) * d.ckk + c];
                  T a3 = wv[(k + 3) * d.ckk + c];
                  const T* __restrict g0 = gstrip + (k + 0) * d.hw;
                  const T* __restrict g1 = gstrip + (k + 1) * d.hw;
                  const T* __restrict g2 = gstrip + (k + 2) * d.hw;
                  const T* __restrict g3 = gstrip + (k + 3) * d.hw;
                  for (int64_t s = 0; s < S; ++s)
                    drow[s] += a0 * g0[s] + a1 * g1[s] + a2 * g2[s] + a3 * g3[s];
                }
                for (; k < d.K; ++k) {
                  T a = wv[k * d.ckk + c];
                  const T* __restrict grow = gstrip + k * d.hw;
                  for (int64_t s = 0; s < S; ++s) drow[s] += a * grow[s];
                }
              }
              // col2im scatter, contiguous spans in the stride-1 case
              for (int64_t c = 0; c < d.C; ++c) {
                T* plane = xgn + c * d.H * d.W;
                for (int64_t i = 0; i < d.kh; ++i) {
                  for (int64_t j = 0; j < d.kw; ++j) {
                    const T* drow = dcol.data() + ((c * d.kh + i) * d.kw + j) * S;
                    if (d.stride == 1) {
                      int64_t shift = j - d.pad;
                      int64_t lo2 = std::max<int64_t>(0, -shift);
                      int64_t hi2 = std::min<int64_t>(d.Wo, d.W - shift);
                      for (int64_t oh = r0; oh < r1; ++oh) {
                        int64_t ih = oh - d.pad + i;
                        if (ih < 0 || ih >= d.H) continue;
                        const T* __restrict src = drow + (oh - r0) * d.Wo;
                        T* __restrict dst = plane + ih * d.W + shift;
                        for (int64_t ow = lo2; ow < hi2; ++ow) dst[ow] += src[ow];
                      }
                    } else {
                      int64_t s = 0;
                      for (int64_t oh = r0; oh < r1; ++oh) {
                        int64_t ih = oh * d.stride - d.pad + i;
                        bool row_ok = ih >= 0 && ih < d.H;
                        for (int64_t ow = 0; ow < d.Wo; ++ow, ++s) {
                          int64_t iw = ow * d.stride - d.pad + j;
                          if (row_ok && iw >= 0 && iw < d.W) plane[ih * d.W + iw] += drow[s];
                        }
                      }
                    }
                  }
                }
              }
            }
          }
        });
      }
    });
  }
  if (finite_checks()) out.throw_if_not_finite("conv2d");
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BnStats<T>& stats, bool train, T eps, T momentum) {
  if (x.ndim() != 4) throw RuntimeFail("batch_norm: expected 4-D input");
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gamma.numel() != C || beta.numel() != C) throw RuntimeFail("batch_norm: gamma/beta must be [C]");
  int64_t plane = H * W;
  int64_t count = N * plane;

  auto mean = std::make_shared<std::vector<T>>(static_cast<size_t>(C));
  auto invstd = std::make_shared<std::vector<T>>(static_cast<size_t>(C));

  if (train) {
    if (count < 2) throw RuntimeFail("batch_norm: train mode needs >= 2 values per channel");
    if (stats.mean.empty()) {
      stats.mean.assign(static_cast<size_t>(C), T(0));
      stats.var.assign(static_cast<size_t>(C), T(1));
    }
    const T* xd = x.data();
    parallel_for(C, [&](int64_t lo, int64_t hi) {
      for (int64_t c = lo; c < hi; ++c) {
        double sum = 0, sq = 0;
        for (int64_t n = 0; n < N; ++n) {
          const T* p = xd + (n * C + c) * plane;
          for (int64_t i = 0; i < plane; ++i) {
            double v = static_cast<double>(p[i]);
            sum += v;
            sq += v * v;
          }
        }
        double m = sum / static_cast<double>(count);
        double var = sq / static_cast<double>(count) - m * m;
        if (var < 0) var = 0;
        (*mean)[c] = static_cast<T>(m);
        (*invstd)[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        stats.mean[c] = momentum * stats.mean[c] + (T(1) - momentum) * static_cast<T>(m);
        stats.var[c] = momentum * stats.var[c] + (T(1) - momentum) * static_cast<T>(var);
      }
    });
    stats.initialized = true;
  } else {
    if (!stats.initialized)
      throw RuntimeFail("batch_norm: eval mode before any training step (running stats empty)");
    for (int64_t c = 0; c < C; ++c) {
      (*mean)[c] = stats.mean[c];
      (*invstd)[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.var[c]) +
                                                    static_cast<double>(eps)));
    }
  }

  auto out = Tensor<T>::make_op(x.shape(), {x.node(), gamma.node(), beta.node()});
  {
    const T* xd = x.data();
    const T* gd = gamma.data();
    const T* bd = beta.data();
    T* od = out.data();
    parallel_for(N * C, [&](int64_t lo, int64_t hi) {
      for (int64_t t = lo; t < hi; ++t) {
        int64_t c = t % C;
        const T* p = xd + t * plane;
        T* o = od + t * plane;
        T m = (*mean)[c], is = (*invstd)[c], gm = gd[c], bt = bd[c];
        for (int64_t i = 0; i < plane; ++i) o[i] = gm * (p[i] - m) * is + bt;
      }
    });
  }

  if (out.requires_grad()) {
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    auto on = out.node().get();
    out.set_backward([xn, gn, bn, on, mean, invstd, N, C, plane, count, train] {
      const T* g = on->grad.data();
      const T* xv = xn->value.data();
      if (xn->requires_grad) xn->ensure_grad();
      if (gn->requires_grad) gn->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      parallel_for(C, [&](int64_t lo, int64_t hi) {
        for (int64_t c = lo; c < hi; ++c) {
          T m = (*mean)[c], is = (*invstd)[c];
          double sum_g = 0, sum_gx = 0;
          for (int64_t n = 0; n < N; ++n) {
            const T* gi = g + (n * C + c) * plane;
            const T* xi = xv + (n * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) {
              sum_g += static_cast<double>(gi[i]);
              sum_gx += static_cast<double>(gi[i]) * static_cast<double>((xi[i] - m) * is);
            }
          }
          if (bn->requires_grad) bn->grad[c] += static_cast<T>(sum_g);
          if (gn->requires_grad) gn->grad[c] += static_cast<T>(sum_gx);
          if (xn->requires_grad) {
            T gm = gn->value[c];
            if (train) {
              T mg = static_cast<T>(sum_g / static_cast<double>(count));
              T mgx = static_cast<T>(sum_gx / static_cast<double>(count));
              for (int64_t n = 0; n < N; ++n) {
                const T* gi = g + (n * C + c) * plane;
                const T* xi = xv + (n * C + c) * plane;
                T* di = xn->grad.data() + (n * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                  T xhat = (xi[i] - m) * is;
                  di[i] += gm * is * (gi[i] - mg - xhat * mgx);
                }
              }
            } else {
              for (int64_t n = 0; n < N; ++n) {
                const T* gi = g + (n * C + c) * plane;
                T* di = xn->grad.data() + (n * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) di[i] += gm * is * gi[i];
              }
            }
          }
        }
      });
    });
  }
  if (finite_checks()) out.throw_if_not_finite("batch_norm");
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise activations.

namespace {

template <typename T, typename Fwd>
Tensor<T> elementwise(const Tensor<T>& x, const char* name, Fwd fwd,
                      std::function<void(const detail::Node<T>*, detail::Node<T>*)> bwd) {
  auto out = Tensor<T>::make_op(x.shape(), {x.node()});
  const T* xd = x.data();
  T* od = out.data();
  int64_t n = out.numel();
  parallel_for((n + 4095) / 4096, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo * 4096; i < std::min(hi * 4096, n); ++i) od[i] = fwd(xd[i]);
  });
  if (out.requires_grad()) {
    auto xn = x.node();
    auto on = out.node().get();
    out.set_backward([xn, on, bwd] {
      xn->ensure_grad();
      bwd(on, xn.get());
    });
  }
  if (finite_checks()) out.throw_if_not_finite(name);
  return out;
}

}  // namespace

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return elementwise<T>(
      x, "sigmoid", [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](const detail::Node<T>* on, detail::Node<T>* xn) {
        for (size_t i = 0; i < on->grad.size(); ++i) {
          T s = on->value[i];
          xn->grad[i] += on->grad[i] * s * (T(1) - s);
        }
      });
}

template <typename T>
Tensor<T> tanh_act(const Tensor<T>& x) {
  return elementwise<T>(
      x, "tanh", [](T v) { return std::tanh(v); },
      [](const detail::Node<T>* on, detail::Node<T>* xn) {
        for (size_t i = 0; i < on->grad.size(); ++i) {
          T t = on->value[i];
          xn->grad[i] += on->grad[i] * (T(1) - t * t);
        }
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return elementwise<T>(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](const detail::Node<T>* on, detail::Node<T>* xn) {
        for (size_t i = 0; i < on->grad.size(); ++i)
          if (xn->value[i] > T(0)) xn->grad[i] += on->grad[i];
      });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  return elementwise<T>(
      x, "leaky_relu", [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](const detail::Node<T>* on, detail::Node<T>* xn) {
        for (size_t i = 0; i < on->grad.size(); ++i)
          xn->grad[i] += on->grad[i] * (xn->value[i] > T(0) ? T(1) : slope);
      });
}

template <typename T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& alpha) {
  if (x.ndim() < 2) throw RuntimeFail("prelu: expected channel axis at dim 1");
  int64_t C = x.dim(1);
  if (alpha.numel() != C) throw RuntimeFail("prelu: alpha must have one entry per channel");
  int64_t N = x.dim(0);
  int64_t plane = x.numel() / (N * C);
  auto out = Tensor<T>::make_op(x.shape(), {x.node(), alpha.node()});
  const T* xd = x.data();
  const T* ad = alpha.data();
  T* od = out.data();
  parallel_for(N * C, [&](int64_t lo, int64_t hi) {
    for (int64_t t = lo; t < hi; ++t) {
      T a = ad[t % C];
      const T* xi = xd + t * plane;
      T* oi = od + t * plane;
      for (int64_t i = 0; i < plane; ++i) oi[i] = xi[i] > T(0) ? xi[i] : a * xi[i];
    }
  });
  if (out.requires_grad()) {
    auto xn = x.node();
    auto an = alpha.node();
    auto on = out.node().get();
    out.set_backward([xn, an, on, N, C, plane] {
      const T* g = on->grad.data();
      const T* xv = xn->value.data();
      if (xn->requires_grad) {
        xn->ensure_grad();
        const T* av = an->value.data();
        T* xg = xn->grad.data();
        parallel_for(N * C, [&](int64_t lo, int64_t hi) {
          for (int64_t t = lo; t < hi; ++t) {
            T a = av[t % C];
            const T* gi = g + t * plane;
            const T* xi = xv + t * plane;
            T* di = xg + t * plane;
            for (int64_t i = 0; i < plane; ++i) di[i] += gi[i] * (xi[i] > T(0) ? T(1) : a);
          }
        });
      }
      if (an->requires_grad) {
        an->ensure_grad();
        T* ag = an->grad.data();
        parallel_for(C, [&](int64_t lo, int64_t hi) {
          for (int64_t c = lo; c < hi; ++c) {
            T acc = 0;
            for (int64_t n = 0; n < N; ++n) {
              const T* gi = g + (n * C + c) * plane;
              const T* xi = xv + (n * C + c) * plane;
              for (int64_t i = 0; i < plane; ++i)
                if (xi[i] <= T(0)) acc += gi[i] * xi[i];
            }
            ag[c] += acc;
          }
        });
      }
    });
  }
  if (finite_checks()) out.throw_if_not_finite("prelu");
  return out;
}

template <typename T>
Tensor<T> abs_op(const Tensor<T>& x) {
  return elementwise<T>(
      x, "abs", [](T v) { return std::abs(v); },
      [](const detail::Node<T>* on, detail::Node<T>* xn) {
        for (size_t i = 0; i < on->grad.size(); ++i) {
          T v = xn->value[i];
          if (v > T(0))
            xn->grad[i] += on->grad[i];
          else if (v < T(0))
            xn->grad[i] -= on->grad[i];
          // subgradient 0 at exactly 0
        }
      });
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw RuntimeFail("concat_channels: no inputs");
  int64_t N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  int64_t Ctot = 0;
  std::vector<std::shared_ptr<detail::Node<T>>> parents;
  for (const auto& x : xs) {
    if (x.ndim() != 4 || x.dim(0) != N || x.dim(2) != H || x.dim(3) != W)
      throw RuntimeFail("concat_channels: spatial/batch mismatch at input " +
                        std::to_string(parents.size()));
    Ctot += x.dim(1);
    parents.push_back(x.node());
  }
  auto out = Tensor<T>::make_op({N, Ctot, H, W}, parents);
  int64_t plane = H * W;
  T* od = out.data();
  int64_t coff = 0;
  for (const auto& x : xs) {
    int64_t Ci = x.dim(1);
    const T* xd = x.data();
    parallel_for(N, [&](int64_t lo, int64_t hi) {
      for (int64_t n = lo; n < hi; ++n)
        std::memcpy(od + (n * Ctot + coff) * plane, xd + n * Ci * plane,
                    sizeof(T) * static_cast<size_t>(Ci * plane));
    });
    coff += Ci;
  }
  if (out.requires_grad()) {
    std::vector<std::shared_ptr<detail::Node<T>>> ps = parents;
    auto on = out.node().get();
    out.set_backward([ps, on, N, Ctot, plane] {
      const T* g = on->grad.data();
      int64_t off = 0;
      for (const auto& p : ps) {
        int64_t Ci = p->shape[1];
        if (p->requires_grad) {
          p->ensure_grad();
          T* pg = p->grad.data();
          parallel_for(N, [&](int64_t lo, int64_t hi) {
            for (int64_t n = lo; n < hi; ++n) {
              const T* gi = g + (n * Ctot + off) * plane;
              T* di = pg + n * Ci * plane;
              for (int64_t i = 0; i < Ci * plane; ++i) di[i] += gi[i];
            }
          });
        }
        off += Ci;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> avg_pool(const Tensor<T>& x, int window, int stride, int padding) {
  if (x.ndim() != 4) throw RuntimeFail("avg_pool: expected 4-D input");
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (window < 1 || window > H + 2 * padding || window > W + 2 * padding)
    throw RuntimeFail("avg_pool: window exceeds spatial extent");
  if (stride < 1) throw RuntimeFail("avg_pool: bad stride");
  int64_t Ho = (H + 2 * padding - window) / stride + 1;
  int64_t Wo = (W + 2 * padding - window) / stride + 1;
  auto out = Tensor<T>::make_op({N, C, Ho, Wo}, {x.node()});
  const T inv = T(1) / static_cast<T>(window * window);
  const T* xd = x.data();
  T* od = out.data();
  parallel_for(N * C, [&](int64_t lo, int64_t hi) {
    for (int64_t t = lo; t < hi; ++t) {
      const T* plane = xd + t * H * W;
      T* o = od + t * Ho * Wo;
      for (int64_t oh = 0; oh < Ho; ++oh)
        for (int64_t ow = 0; ow < Wo; ++ow) {
          T acc = 0;
          for (int64_t i = 0; i < window; ++i) {
            int64_t ih = oh * stride - padding + i;
            if (ih < 0 || ih >= H) continue;
            for (int64_t j = 0; j < window; ++j) {
              int64_t iw = ow * stride - padding + j;
              if (iw >= 0 && iw < W) acc += plane[ih * W + iw];
            }
          }
          o[oh * Wo + ow] = acc * inv;
        }
    }
  });
  if (out.requires_grad()) {
    auto xn = x.node();
    auto on = out.node().get();
    out.set_backward([xn, on, N, C, H, W, Ho, Wo, window, stride, padding, inv] {
      xn->ensure_grad();
      const T* g = on->grad.data();
      T* xg = xn->grad.data();
      parallel_for(N * C, [&](int64_t lo, int64_t hi) {
        for (int64_t t = lo; t < hi; ++t) {
          const T* go = g + t * Ho * Wo;
          T* plane = xg + t * H * W;
          for (int64_t oh = 0; oh < Ho; ++oh)
            for (int64_t ow = 0; ow < Wo; ++ow) {
              T gv = go[oh * Wo + ow] * inv;
              for (int64_t i = 0; i < window; ++i) {
                int64_t ih = oh * stride - padding + i;
                if (ih < 0 || ih >= H) continue;
                for (int64_t j = 0; j < window; ++j) {
                  int64_t iw = ow * stride - padding + j;
                  if (iw >= 0 && iw < W) plane[ih * W + iw] += gv;
                }
              }
            }
        }
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.ndim() != 4) throw RuntimeFail("global_avg_pool: expected 4-D input");
  int64_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  auto out = Tensor<T>::make_op({N, C}, {x.node()});
  const T* xd = x.data();
  T* od = out.data();
  const T inv = T(1) / static_cast<T>(plane);
  parallel_for(N * C, [&](int64_t lo, int64_t hi) {
    for (int64_t t = lo; t < hi; ++t) {
      const T* p = xd + t * plane;
      T acc = 0;
      for (int64_t i = 0; i < plane; ++i) acc += p[i];
      od[t] = acc * inv;
    }
  });
  if (out.requires_grad()) {
    auto xn = x.node();
    auto on = out.node().get();
    out.set_backward([xn, on, N, C, plane, inv] {
      xn->ensure_grad();
      const T* g = on->grad.data();
      T* xg = xn->grad.data();
      for (int64_t t = 0; t < N * C; ++t) {
        T gv = g[t] * inv;
        T* p = xg + t * plane;
        for (int64_t i = 0; i < plane; ++i) p[i] += gv;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.ndim() != 2 || weight.ndim() != 2 || x.dim(1) != weight.dim(1))
    throw RuntimeFail("fully_connected: shapes " + shape_str(x.shape()) + " x " +
                      shape_str(weight.shape()));
  int64_t N = x.dim(0), F = x.dim(1), O = weight.dim(0);
  if (bias.defined() && bias.numel() != O) throw RuntimeFail("fully_connected: bias must be [O]");
  std::vector<std::shared_ptr<detail::Node<T>>> parents = {x.node(), weight.node()};
  if (bias.defined()) parents.push_back(bias.node());
  auto out = Tensor<T>::make_op({N, O}, std::move(parents));
  const T* xd = x.data();
  const T* wd = weight.data();
  const T* bd = bias.defined() ? bias.data() : nullptr;
  T* od = out.data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < O; ++o) {
      T acc = bd ? bd[o] : T(0);
      const T* xr = xd + n * F;
      const T* wr = wd + o * F;
      for (int64_t f = 0; f < F; ++f) acc += xr[f] * wr[f];
      od[n * O + o] = acc;
    }
  if (out.requires_grad()) {
    auto xn = x.node();
    auto wn = weight.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    auto on = out.node().get();
    out.set_backward([xn, wn, bn, on, N, F, O] {
      const T* g = on->grad.data();
      if (xn->requires_grad) {
        xn->ensure_grad();
        const T* wv = wn->value.data();
        for (int64_t n = 0; n < N; ++n)
          for (int64_t o = 0; o < O; ++o) {
            T gv = g[n * O + o];
            const T* wr = wv + o * F;
            T* xr = xn->grad.data() + n * F;
            for (int64_t f = 0; f < F; ++f) xr[f] += gv * wr[f];
          }
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        const T* xv = xn->value.data();
        for (int64_t n = 0; n < N; ++n)
          for (int64_t o = 0; o < O; ++o) {
            T gv = g[n * O + o];
            const T* xr = xv + n * F;
            T* wr = wn->grad.data() + o * F;
            for (int64_t f = 0; f < F; ++f) wr[f] += gv * xr[f];
          }
      }
      if (bn && bn->requires_grad) {
        bn->ensure_grad();
        for (int64_t n = 0; n < N; ++n)
          for (int64_t o = 0; o < O; ++o) bn->grad[o] += g[n * O + o];
      }
    });
  }
  if (finite_checks()) out.throw_if_not_finite("fully_connected");
  return out;
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape())
    throw RuntimeFail("mse_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                      shape_str(target.shape()));
  int64_t n = pred.numel();
  auto out = Tensor<T>::make_op({1}, {pred.node(), target.node()});
  const T* pd = pred.data();
  const T* td = target.data();
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    double dlt = static_cast<double>(pd[i]) - static_cast<double>(td[i]);
    acc += dlt * dlt;
  }
  out.data()[0] = static_cast<T>(acc / static_cast<double>(n));
  if (out.requires_grad()) {
    auto pn = pred.node();
    auto tn = target.node();
    auto on = out.node().get();
    out.set_backward([pn, tn, on, n] {
      T g = on->grad[0];
      T scale = g * T(2) / static_cast<T>(n);
      const T* pv = pn->value.data();
      const T* tv = tn->value.data();
      if (pn->requires_grad) {
        pn->ensure_grad();
        for (int64_t i = 0; i < n; ++i) pn->grad[i] += scale * (pv[i] - tv[i]);
      }
      if (tn->requires_grad) {
        tn->ensure_grad();
        for (int64_t i = 0; i < n; ++i) tn->grad[i] -= scale * (pv[i] - tv[i]);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& probabilities, const std::vector<int>& labels) {
  int64_t n = probabilities.numel();
  if (n == 0) throw RuntimeFail("bce_loss: empty batch");
  if (static_cast<int64_t>(labels.size()) != n) throw RuntimeFail("bce_loss: labels size mismatch");
  const T eps = T(1e-7);
  auto out = Tensor<T>::make_op({1}, {probabilities.node()});
  const T* pd = probabilities.data();
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    T p = std::min(std::max(pd[i], eps), T(1) - eps);
    acc -= labels[static_cast<size_t>(i)] ? std::log(static_cast<double>(p))
                                          : std::log(1.0 - static_cast<double>(p));
  }
  out.data()[0] = static_cast<T>(acc / static_cast<double>(n));
  if (out.requires_grad()) {
    auto pn = probabilities.node();
    auto on = out.node().get();
    auto lbl = labels;
    out.set_backward([pn, on, n, eps, lbl] {
      pn->ensure_grad();
      T g = on->grad[0] / static_cast<T>(n);
      for (int64_t i = 0; i < n; ++i) {
        T p = pn->value[static_cast<size_t>(i)];
        if (p <= eps || p >= T(1) - eps) continue;  // clamped: zero slope
        T y = static_cast<T>(lbl[static_cast<size_t>(i)]);
        pn->grad[static_cast<size_t>(i)] += g * (p - y) / (p * (T(1) - p));
      }
    });
  }
  if (finite_checks()) out.throw_if_not_finite("bce_loss");
  return out;
}

// ---------------------------------------------------------------------------

#define MCNET_INSTANTIATE(T)                                                                      \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int,      \
                            ConvAlgo);                                                            \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                BnStats<T>&, bool, T, T);                                         \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                  \
  template Tensor<T> tanh_act(const Tensor<T>&);                                                 \
  template Tensor<T> relu(const Tensor<T>&);                                                     \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                            \
  template Tensor<T> prelu(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> abs_op(const Tensor<T>&);                                                   \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                             \
  template Tensor<T> avg_pool(const Tensor<T>&, int, int, int);                                  \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                          \
  template Tensor<T> fully_connected(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> mse_loss(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> bce_loss(const Tensor<T>&, const std::vector<int>&);

MCNET_INSTANTIATE(float)
MCNET_INSTANTIATE(double)

#undef MCNET_INSTANTIATE

}  // namespace mcnet
