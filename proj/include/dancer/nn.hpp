#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dancer/tensor.hpp"

namespace dancer {

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> silu(const TensorT<T>& x) {
  auto out = detail::make_out<T>(x.shape, x.requires_grad);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const T v = (*x.data)[i];
    (*out.data)[i] = v * sigmoid_scalar(v);
  }
  detail::attach(out, {x}, [](TensorT<T>& o) {
    auto& px = o.node->parents[0];
    if (!px.requires_grad) return;
    const std::size_t n2 = o.numel();
    for (std::size_t i = 0; i < n2; ++i) {
      const T v = (*px.data)[i];
      const T s = sigmoid_scalar(v);
      (*px.grad)[i] += (*o.grad)[i] * (s * (T(1) + v * (T(1) - s)));
    }
  });
  return out;
}

/// Softmax over the last axis, computed per row with max subtraction.
template <typename T>
TensorT<T> softmax_lastaxis(const TensorT<T>& x) {
  if (x.rank() < 1) throw DimensionError("softmax_lastaxis: rank-0 input");
  const int d = x.shape[static_cast<std::size_t>(x.rank() - 1)];
  if (d < 1) throw DimensionError("softmax_lastaxis: empty last axis");
  auto out = detail::make_out<T>(x.shape, x.requires_grad);
  const std::size_t rows = x.numel() / static_cast<std::size_t>(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.ptr() + r * static_cast<std::size_t>(d);
    T* dst = out.ptr() + r * static_cast<std::size_t>(d);
    T mx = src[0];
    for (int i = 1; i < d; ++i) mx = std::max(mx, src[i]);
    double sum = 0.0;
    for (int i = 0; i < d; ++i) {
      const T e = std::exp(src[i] - mx);
      dst[i] = e;
      sum += static_cast<double>(e);
    }
    const T inv = static_cast<T>(1.0 / sum);
    for (int i = 0; i < d; ++i) dst[i] *= inv;
  }
  detail::attach(out, {x}, [d, rows](TensorT<T>& o) {
    auto& px = o.node->parents[0];
    if (!px.requires_grad) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = o.data->data() + r * static_cast<std::size_t>(d);
      const T* gy = o.grad->data() + r * static_cast<std::size_t>(d);
      T* gx = px.grad->data() + r * static_cast<std::size_t>(d);
      double dot = 0.0;
      for (int i = 0; i < d; ++i) dot += static_cast<double>(gy[i]) * static_cast<double>(y[i]);
      for (int i = 0; i < d; ++i)
        gx[i] += y[i] * (gy[i] - static_cast<T>(dot));
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Bias / linear
// ---------------------------------------------------------------------------

/// x[..., c] + b[c], broadcast over all leading axes.
template <typename T>
TensorT<T> add_channel_bias(const TensorT<T>& x, const TensorT<T>& b) {
  if (b.rank() != 1)
    throw DimensionError("add_channel_bias: bias must be rank 1, got " + shape_str(b.shape));
  const int c = b.shape[0];
  if (x.rank() < 1 || x.shape[static_cast<std::size_t>(x.rank() - 1)] != c)
    throw DimensionError("add_channel_bias: last axis of " + shape_str(x.shape) +
                         " != bias size " + std::to_string(c));
  auto out = detail::make_out<T>(x.shape, x.requires_grad || b.requires_grad);
  const std::size_t rows = x.numel() / static_cast<std::size_t>(c);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.ptr() + r * static_cast<std::size_t>(c);
    T* dst = out.ptr() + r * static_cast<std::size_t>(c);
    for (int i = 0; i < c; ++i) dst[i] = src[i] + (*b.data)[static_cast<std::size_t>(i)];
  }
  detail::attach(out, {x, b}, [c, rows](TensorT<T>& o) {
    auto& px = o.node->parents[0];
    auto& pb = o.node->parents[1];
    if (px.requires_grad) {
      const std::size_t n = o.numel();
      for (std::size_t i = 0; i < n; ++i) (*px.grad)[i] += (*o.grad)[i];
    }
    if (pb.requires_grad) {
      for (std::size_t r = 0; r < rows; ++r) {
        const T* g = o.grad->data() + r * static_cast<std::size_t>(c);
        for (int i = 0; i < c; ++i) (*pb.grad)[static_cast<std::size_t>(i)] += g[i];
      }
    }
  });
  return out;
}

/// x[m,k] @ w[k,n] + b[n]. Pass an undefined bias to skip it.
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b = {}) {
  auto y = matmul2d(x, w);
  if (b.defined()) y = add_channel_bias(y, b);
  return y;
}

// ---------------------------------------------------------------------------
// Convolution (channels-last; kernel [k,k,cin,cout]; cross-correlation)
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, int stride,
                  int pad) {
  if (x.rank() != 3)
    throw DimensionError("conv2d: input must be [h,w,c], got " + shape_str(x.shape));
  if (w.rank() != 4)
    throw DimensionError("conv2d: kernel must be [k,k,cin,cout], got " + shape_str(w.shape));
  const int h = x.shape[0], wd = x.shape[1], cin = x.shape[2];
  const int kh = w.shape[0], kw = w.shape[1], wcin = w.shape[2], cout = w.shape[3];
  if (kh != kw) throw DimensionError("conv2d: kernel must be square, got " + shape_str(w.shape));
  if (wcin != cin)
    throw DimensionError("conv2d: input channel axis " + std::to_string(cin) +
                         " != kernel channel axis " + std::to_string(wcin));
  if (b.defined() && (b.rank() != 1 || b.shape[0] != cout))
    throw DimensionError("conv2d: bias shape " + shape_str(b.shape) + " != [" +
                         std::to_string(cout) + "]");
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  if (oh < 1 || ow < 1)
    throw DimensionError("conv2d: kernel " + std::to_string(kh) + " larger than padded input " +
                         shape_str(x.shape));

  const bool rg = x.requires_grad || w.requires_grad || (b.defined() && b.requires_grad);
  auto out = detail::make_out<T>({oh, ow, cout}, rg);

  const T* px = x.ptr();
  const T* pw = w.ptr();
  T* po = out.ptr();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      T* orow = po + (static_cast<std::size_t>(oy) * ow + ox) * cout;
      if (b.defined())
        for (int co = 0; co < cout; ++co) orow[co] = (*b.data)[static_cast<std::size_t>(co)];
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride + kx - pad;
          if (ix < 0 || ix >= wd) continue;
          const T* xrow = px + (static_cast<std::size_t>(iy) * wd + ix) * cin;
          const T* wblk = pw + (static_cast<std::size_t>(ky) * kw + kx) * cin * cout;
          for (int ci = 0; ci < cin; ++ci) {
            const T xv = xrow[ci];
            if (xv == T(0)) continue;
            const T* wrow = wblk + static_cast<std::size_t>(ci) * cout;
            for (int co = 0; co < cout; ++co) orow[co] += xv * wrow[co];
          }
        }
      }
    }
  }

  if (!rg || !grad_mode()) return out;
  std::vector<TensorT<T>> parents = {x, w};
  const bool has_bias = b.defined();
  if (has_bias) parents.push_back(b);
  detail::attach(out, parents,
                 [h, wd, cin, kh, kw, cout, oh, ow, stride, pad, has_bias](TensorT<T>& o) {
    auto& xp = o.node->parents[0];
    auto& wp = o.node->parents[1];
    const T* g = o.grad->data();
    const T* xd = xp.data->data();
    const T* wdta = wp.data->data();
    T* gx = xp.requires_grad ? xp.grad->data() : nullptr;
    T* gw = wp.requires_grad ? wp.grad->data() : nullptr;
    T* gb = nullptr;
    if (has_bias && o.node->parents[2].requires_grad) gb = o.node->parents[2].grad->data();

    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const T* grow = g + (static_cast<std::size_t>(oy) * ow + ox) * cout;
        if (gb)
          for (int co = 0; co < cout; ++co) gb[co] += grow[co];
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= wd) continue;
            const std::size_t xoff = (static_cast<std::size_t>(iy) * wd + ix) * cin;
            const std::size_t woff = (static_cast<std::size_t>(ky) * kw + kx) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
              const T* wrow = wdta + woff + static_cast<std::size_t>(ci) * cout;
              if (gx) {
                T acc = T(0);
                for (int co = 0; co < cout; ++co) acc += grow[co] * wrow[co];
                gx[xoff + static_cast<std::size_t>(ci)] += acc;
              }
              if (gw) {
                const T xv = xd[xoff + static_cast<std::size_t>(ci)];
                if (xv != T(0)) {
                  T* gwrow = gw + woff + static_cast<std::size_t>(ci) * cout;
                  for (int co = 0; co < cout; ++co) gwrow[co] += xv * grow[co];
                }
              }
            }
          }
        }
      }
    }
  });
  return out;
}

/// Nearest-neighbour 2x upsample of [h,w,c].
template <typename T>
TensorT<T> upsample_nearest2x(const TensorT<T>& x) {
  if (x.rank() != 3) throw DimensionError("upsample_nearest2x: input must be [h,w,c]");
  const int h = x.shape[0], w = x.shape[1], c = x.shape[2];
  auto out = detail::make_out<T>({2 * h, 2 * w, c}, x.requires_grad);
  for (int y = 0; y < 2 * h; ++y) {
    const int sy = y / 2;
    for (int xx = 0; xx < 2 * w; ++xx) {
      const int sx = xx / 2;
      const T* src = x.ptr() + (static_cast<std::size_t>(sy) * w + sx) * c;
      T* dst = out.ptr() + (static_cast<std::size_t>(y) * 2 * w + xx) * c;
      for (int ci = 0; ci < c; ++ci) dst[ci] = src[ci];
    }
  }
  detail::attach(out, {x}, [h, w, c](TensorT<T>& o) {
    auto& px = o.node->parents[0];
    if (!px.requires_grad) return;
    for (int y = 0; y < 2 * h; ++y) {
      const int sy = y / 2;
      for (int xx = 0; xx < 2 * w; ++xx) {
        const int sx = xx / 2;
        const T* g = o.grad->data() + (static_cast<std::size_t>(y) * 2 * w + xx) * c;
        T* dst = px.grad->data() + (static_cast<std::size_t>(sy) * w + sx) * c;
        for (int ci = 0; ci < c; ++ci) dst[ci] += g[ci];
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

namespace detail {

// Shared normalization backward: for one element set with saved x_hat and
// inv_std, given upstream dy and per-channel gamma:
//   dx = inv_std * (ghat - mean(ghat) - x_hat * mean(ghat * x_hat))
// where ghat = dy * gamma.

}  // namespace detail

/// Largest group count from {8,4,2,1} dividing the channel width.
inline int pick_groups(int channels) {
  for (int g : {8, 4, 2})
    if (channels % g == 0) return g;
  return 1;
}

/// Group normalization over [h,w,c] with per-channel affine, eps 1e-5.
template <typename T>
TensorT<T> group_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      int groups, T eps = T(1e-5)) {
  if (x.rank() != 3) throw DimensionError("group_norm: input must be [h,w,c]");
  const int h = x.shape[0], w = x.shape[1], c = x.shape[2];
  if (gamma.rank() != 1 || gamma.shape[0] != c || beta.rank() != 1 || beta.shape[0] != c)
    throw DimensionError("group_norm: affine params must be [" + std::to_string(c) + "]");
  if (groups < 1 || c % groups != 0)
    throw DimensionError("group_norm: channel axis " + std::to_string(c) +
                         " not divisible by groups " + std::to_string(groups));
  const int cg = c / groups;
  const std::size_t hw = static_cast<std::size_t>(h) * w;

  auto out = detail::make_out<T>(x.shape, x.requires_grad || gamma.requires_grad ||
                                              beta.requires_grad);
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(groups));

  for (int g = 0; g < groups; ++g) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t p = 0; p < hw; ++p)
      for (int j = 0; j < cg; ++j) {
        const double v = static_cast<double>((*x.data)[p * c + static_cast<std::size_t>(g * cg + j)]);
        sum += v;
        sq += v * v;
      }
    const double m = hw * static_cast<double>(cg);
    const double mean = sum / m;
    const double var = std::max(0.0, sq / m - mean * mean);
    const double istd = 1.0 / std::sqrt(var + static_cast<double>(eps));
    (*inv_std)[static_cast<std::size_t>(g)] = static_cast<T>(istd);
    for (std::size_t p = 0; p < hw; ++p)
      for (int j = 0; j < cg; ++j) {
        const std::size_t idx = p * c + static_cast<std::size_t>(g * cg + j);
        const T xh = static_cast<T>((static_cast<double>((*x.data)[idx]) - mean) * istd);
        (*xhat)[idx] = xh;
        (*out.data)[idx] =
            (*gamma.data)[static_cast<std::size_t>(g * cg + j)] * xh +
            (*beta.data)[static_cast<std::size_t>(g * cg + j)];
      }
  }

  detail::attach(out, {x, gamma, beta}, [groups, cg, c, hw, xhat, inv_std](TensorT<T>& o) {
    auto& px = o.node->parents[0];
    auto& pg = o.node->parents[1];
    auto& pb = o.node->parents[2];
    const T* gy = o.grad->data();
    if (pg.requires_grad || pb.requires_grad) {
      for (std::size_t p = 0; p < hw; ++p)
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t idx = p * c + static_cast<std::size_t>(ch);
          if (pg.requires_grad)
            (*pg.grad)[static_cast<std::size_t>(ch)] += gy[idx] * (*xhat)[idx];
          if (pb.requires_grad) (*pb.grad)[static_cast<std::size_t>(ch)] += gy[idx];
        }
    }
    if (!px.requires_grad) return;
    const double m = static_cast<double>(hw) * cg;
    for (int g = 0; g < groups; ++g) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t p = 0; p < hw; ++p)
        for (int j = 0; j < cg; ++j) {
          const std::size_t idx = p * c + static_cast<std::size_t>(g * cg + j);
          const double gh = static_cast<double>(gy[idx]) *
                            static_cast<double>((*pg.data)[static_cast<std::size_t>(g * cg + j)]);
          sum_g += gh;
          sum_gx += gh * static_cast<double>((*xhat)[idx]);
        }
      const double mean_g = sum_g / m;
      const double mean_gx = sum_gx / m;
      const double istd = static_cast<double>((*inv_std)[static_cast<std::size_t>(g)]);
      for (std::size_t p = 0; p < hw; ++p)
        for (int j = 0; j < cg; ++j) {
          const std::size_t idx = p * c + static_cast<std::size_t>(g * cg + j);
          const double gh = static_cast<double>(gy[idx]) *
                            static_cast<double>((*pg.data)[static_cast<std::size_t>(g * cg + j)]);
          (*px.grad)[idx] += static_cast<T>(
              istd * (gh - mean_g - static_cast<double>((*xhat)[idx]) * mean_gx));
        }
    }
  });
  return out;
}

/// Layer normalization over the last axis of [..., d] with affine, eps 1e-5.
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      T eps = T(1e-5)) {
  if (x.rank() < 1) throw DimensionError("layer_norm: rank-0 input");
  const int d = x.shape[static_cast<std::size_t>(x.rank() - 1)];
  if (gamma.rank() != 1 || gamma.shape[0] != d || beta.rank() != 1 || beta.shape[0] != d)
    throw DimensionError("layer_norm: affine params must be [" + std::to_string(d) + "]");
  const std::size_t rows = x.numel() / static_cast<std::size_t>(d);

  auto out = detail::make_out<T>(x.shape, x.requires_grad || gamma.requires_grad ||
                                              beta.requires_grad);
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);

  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.ptr() + r * static_cast<std::size_t>(d);
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < d; ++i) {
      const double v = static_cast<double>(src[i]);
      sum += v;
      sq += v * v;
    }
    const double mean = sum / d;
    const double var = std::max(0.0, sq / d - mean * mean);
    const double istd = 1.0 / std::sqrt(var + static_cast<double>(eps));
    (*inv_std)[r] = static_cast<T>(istd);
    for (int i = 0; i < d; ++i) {
      const std::size_t idx = r * static_cast<std::size_t>(d) + static_cast<std::size_t>(i);
      const T xh = static_cast<T>((static_cast<double>(src[i]) - mean) * istd);
      (*xhat)[idx] = xh;
      (*out.data)[idx] = (*gamma.data)[static_cast<std::size_t>(i)] * xh +
                         (*beta.data)[static_cast<std::size_t>(i)];
    }
  }

  detail::attach(out, {x, gamma, beta}, [d, rows, xhat, inv_std](TensorT<T>& o) {
    auto& px = o.node->parents[0];
    auto& pg = o.node->parents[1];
    auto& pb = o.node->parents[2];
    const T* gy = o.grad->data();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * static_cast<std::size_t>(d);
      if (pg.requires_grad || pb.requires_grad) {
        for (int i = 0; i < d; ++i) {
          if (pg.requires_grad)
            (*pg.grad)[static_cast<std::size_t>(i)] += gy[base + static_cast<std::size_t>(i)] *
                                                        (*xhat)[base + static_cast<std::size_t>(i)];
          if (pb.requires_grad)
            (*pb.grad)[static_cast<std::size_t>(i)] += gy[base + static_cast<std::size_t>(i)];
        }
      }
      if (!px.requires_grad) continue;
      double sum_g = 0.0, sum_gx = 0.0;
      for (int i = 0; i < d; ++i) {
        const double gh = static_cast<double>(gy[base + static_cast<std::size_t>(i)]) *
                          static_cast<double>((*pg.data)[static_cast<std::size_t>(i)]);
        sum_g += gh;
        sum_gx += gh * static_cast<double>((*xhat)[base + static_cast<std::size_t>(i)]);
      }
      const double mean_g = sum_g / d;
      const double mean_gx = sum_gx / d;
      const double istd = static_cast<double>((*inv_std)[r]);
      for (int i = 0; i < d; ++i) {
        const std::size_t idx = base + static_cast<std::size_t>(i);
        const double gh = static_cast<double>(gy[idx]) *
                          static_cast<double>((*pg.data)[static_cast<std::size_t>(i)]);
        (*px.grad)[idx] += static_cast<T>(
            istd * (gh - mean_g - static_cast<double>((*xhat)[idx]) * mean_gx));
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Attention (single head, tokens as rows)
// ---------------------------------------------------------------------------

/// Scaled dot-product attention: softmax(Q K^T / sqrt(d)) V for row-token
/// matrices Q[m,d], K[n,d], V[n,dv]. Every output row is a convex
/// combination of value rows. Learned projections live in the model blocks.
template <typename T>
TensorT<T> cross_attention(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
    throw DimensionError("cross_attention: token matrices must be rank 2");
  const int d = q.shape[1];
  if (k.shape[1] != d)
    throw DimensionError("cross_attention: query/key dims differ: " + shape_str(q.shape) +
                         " vs " + shape_str(k.shape));
  const int n = k.shape[0];
  if (n < 1) throw DimensionError("cross_attention: empty key set");
  if (v.shape[0] != n)
    throw DimensionError("cross_attention: key/value counts differ: " + shape_str(k.shape) +
                         " vs " + shape_str(v.shape));
  auto scores = mul_scalar(matmul_nt(q, k),  // [m, n]
                           static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
  return matmul2d(softmax_lastaxis(scores), v);  // [m, dv]
}

// ---------------------------------------------------------------------------
// Timestep embedding
// ---------------------------------------------------------------------------

/// Sinusoidal embedding of a (possibly fractional) timestep: [1, dim] with
/// interleaved sin/cos over geometrically spaced frequencies. Not on the tape.
template <typename T>
TensorT<T> sinusoidal_embed(double t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw DimensionError("sinusoidal_embed: dim must be even and >= 2");
  auto out = TensorT<T>::zeros({1, dim});
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
    (*out.data)[static_cast<std::size_t>(2 * i)] = static_cast<T>(std::sin(t * freq));
    (*out.data)[static_cast<std::size_t>(2 * i + 1)] = static_cast<T>(std::cos(t * freq));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameter store
// ---------------------------------------------------------------------------

enum class Init { kZero, kOne, kKaimingUniform };

/// Named, insertion-ordered trainable tensors. Names are dotted paths
/// ("codec.enc0.w") so whole subtrees can be frozen or saved by prefix.
template <typename T>
class ParamStoreT {
 public:
  TensorT<T> create(const std::string& name, const Shape& shape, Init init, Rng& rng,
                    int fan_in = 0) {
    if (index_.count(name)) throw std::runtime_error("param already registered: " + name);
    TensorT<T> t = TensorT<T>::zeros(shape, true);
    if (init == Init::kKaimingUniform) {
      if (fan_in <= 0) throw std::runtime_error("param " + name + ": fan_in required for init");
      const T bound = static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in)));
      for (auto& v : *t.data) v = static_cast<T>(rng.uniform(-bound, bound));
    } else if (init == Init::kOne) {
      for (auto& v : *t.data) v = static_cast<T>(1);
    }
    index_[name] = entries_.size();
    entries_.push_back({name, t});
    return t;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  TensorT<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("unknown param: " + name);
    return entries_[it->second].second;
  }

  const TensorT<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("unknown param: " + name);
    return entries_[it->second].second;
  }

  std::vector<std::pair<std::string, TensorT<T>>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, TensorT<T>>>& entries() const { return entries_; }

  std::size_t size() const { return entries_.size(); }

  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

  /// Toggles grad participation for every param whose name starts with prefix.
  void set_trainable(const std::string& prefix, bool trainable) {
    for (auto& e : entries_)
      if (e.first.rfind(prefix, 0) == 0) e.second.set_requires_grad(trainable);
  }

  std::size_t count_prefix(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.first.rfind(prefix, 0) == 0) ++n;
    return n;
  }

 private:
  std::vector<std::pair<std::string, TensorT<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

using ParamStore = ParamStoreT<float>;

}  // namespace dancer
