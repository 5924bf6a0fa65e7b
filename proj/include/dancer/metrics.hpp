#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dancer/config.hpp"
#include "dancer/errors.hpp"
#include "dancer/nn.hpp"
#include "dancer/rng.hpp"
#include "dancer/tensor.hpp"

namespace dancer {

// ---------------------------------------------------------------------------
// Evaluation suite: frame-level L1 / PSNR / SSIM / LPIPS-proxy / FID and
// clip-level Fréchet scores over consecutive 16-frame windows, plus the
// seven-column report. Pretrained perceptual networks are replaced by frozen
// seeded-random conv embedders, so scores are internally comparable (same
// embedder identifier) but never comparable to published numbers.
// ---------------------------------------------------------------------------

// --------------------------- dense double linalg ---------------------------

/// Row-major n x n product in double precision.
inline std::vector<double> mat_mul(const std::vector<double>& a, const std::vector<double>& b,
                                   int n) {
  std::vector<double> c(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      const double aik = a[static_cast<std::size_t>(i * n + k)];
      if (aik == 0.0) continue;
      for (int j = 0; j < n; ++j)
        c[static_cast<std::size_t>(i * n + j)] += aik * b[static_cast<std::size_t>(k * n + j)];
    }
  return c;
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvalues return sorted ascending; `evecs` (optional) receives the
/// matching eigenvectors as columns, row-major.
inline void sym_eig(std::vector<double> a, int n, std::vector<double>& evals,
                    std::vector<double>* evecs = nullptr) {
  if (n < 1 || a.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(n))
    throw DimensionError("sym_eig: matrix must be n*n with n >= 1");
  auto at = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i * n + j)]; };
  std::vector<double> v;
  if (evecs) {
    v.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i * n + i)] = 1.0;
  }
  double scale = 0.0;
  for (double x : a) scale += x * x;
  scale = std::sqrt(scale);
  const double tol = 1e-13 * (1.0 + scale);

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += at(p, q) * at(p, q);
    off = std::sqrt(2.0 * off);
    if (off <= tol) break;
    if (sweep == 99) throw NumericalError("sym_eig: Jacobi sweep limit reached");

    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (std::abs(apq) <= 1e-300) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
        if (evecs)
          for (int k = 0; k < n; ++k) {
            const double vkp = v[static_cast<std::size_t>(k * n + p)];
            const double vkq = v[static_cast<std::size_t>(k * n + q)];
            v[static_cast<std::size_t>(k * n + p)] = c * vkp - s * vkq;
            v[static_cast<std::size_t>(k * n + q)] = s * vkp + c * vkq;
          }
      }
  }

  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](int x, int y) { return at(x, x) < at(y, y); });
  evals.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) evals[static_cast<std::size_t>(i)] = at(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)]);
  if (evecs) {
    evecs->assign(v.size(), 0.0);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i)
        (*evecs)[static_cast<std::size_t>(i * n + j)] =
            v[static_cast<std::size_t>(i * n + order[static_cast<std::size_t>(j)])];
  }
}

/// Symmetric PSD square root via eigendecomposition; negative eigenvalues
/// (numerical noise) are clamped to zero.
inline std::vector<double> sqrt_psd(const std::vector<double>& s, int n) {
  std::vector<double> evals, vecs;
  sym_eig(s, n, evals, &vecs);
  std::vector<double> r(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0.0);
  for (int j = 0; j < n; ++j) {
    const double lam = std::sqrt(std::max(0.0, evals[static_cast<std::size_t>(j)]));
    if (lam == 0.0) continue;
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k)
        r[static_cast<std::size_t>(i * n + k)] += lam *
            vecs[static_cast<std::size_t>(i * n + j)] * vecs[static_cast<std::size_t>(k * n + j)];
  }
  return r;
}

// ----------------------------- Gaussian stats ------------------------------

/// Sample mean and (unbiased) covariance of a feature set.
struct GaussianStats {
  int dim = 0;
  int count = 0;
  std::vector<double> mean;  // d
  std::vector<double> cov;   // d*d row-major, symmetric
};

inline GaussianStats make_stats(const std::vector<std::vector<double>>& feats) {
  if (feats.size() < 2) throw DataError("stats: need at least 2 samples");
  const std::size_t d = feats[0].size();
  if (d == 0) throw DimensionError("stats: empty feature vectors");
  for (const auto& f : feats)
    if (f.size() != d) throw DimensionError("stats: inconsistent feature dimensions");
  GaussianStats g;
  g.dim = static_cast<int>(d);
  g.count = static_cast<int>(feats.size());
  g.mean.assign(d, 0.0);
  for (const auto& f : feats)
    for (std::size_t i = 0; i < d; ++i) g.mean[i] += f[i];
  for (double& m : g.mean) m /= static_cast<double>(feats.size());
  g.cov.assign(d * d, 0.0);
  for (const auto& f : feats)
    for (std::size_t i = 0; i < d; ++i) {
      const double di = f[i] - g.mean[i];
      for (std::size_t j = i; j < d; ++j) g.cov[i * d + j] += di * (f[j] - g.mean[j]);
    }
  const double denom = static_cast<double>(feats.size() - 1);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      g.cov[i * d + j] /= denom;
      g.cov[j * d + i] = g.cov[i * d + j];
    }
  return g;
}

/// Fréchet distance between Gaussians:
/// ||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2), in double.
inline double frechet(const GaussianStats& s1, const GaussianStats& s2) {
  if (s1.dim != s2.dim || s1.dim < 1)
    throw DimensionError("frechet: dimension mismatch " + std::to_string(s1.dim) + " vs " +
                         std::to_string(s2.dim));
  const int d = s1.dim;
  for (const auto* g : {&s1, &s2}) {
    for (double m : g->mean)
      if (!std::isfinite(m)) throw NumericalError("frechet: non-finite mean");
    for (double c : g->cov)
      if (!std::isfinite(c)) throw NumericalError("frechet: non-finite covariance");
  }
  auto symmetrize = [d](std::vector<double> m) {
    for (int i = 0; i < d; ++i)
      for (int j = i + 1; j < d; ++j) {
        const double v = 0.5 * (m[static_cast<std::size_t>(i * d + j)] +
                                m[static_cast<std::size_t>(j * d + i)]);
        m[static_cast<std::size_t>(i * d + j)] = v;
        m[static_cast<std::size_t>(j * d + i)] = v;
      }
    return m;
  };
  const std::vector<double> c1 = symmetrize(s1.cov);
  const std::vector<double> c2 = symmetrize(s2.cov);

  double mean2 = 0.0, tr1 = 0.0, tr2 = 0.0;
  for (int i = 0; i < d; ++i) {
    const double dm = s1.mean[static_cast<std::size_t>(i)] - s2.mean[static_cast<std::size_t>(i)];
    mean2 += dm * dm;
    tr1 += c1[static_cast<std::size_t>(i * d + i)];
    tr2 += c2[static_cast<std::size_t>(i * d + i)];
  }

  const std::vector<double> r1 = sqrt_psd(c1, d);
  std::vector<double> m = mat_mul(mat_mul(r1, c2, d), r1, d);
  m = symmetrize(std::move(m));
  std::vector<double> evals;
  sym_eig(m, d, evals);
  double tr_sqrt = 0.0;
  for (double lam : evals) tr_sqrt += std::sqrt(std::max(0.0, lam));

  double d2 = mean2 + tr1 + tr2 - 2.0 * tr_sqrt;
  if (d2 < 0.0) {
    if (d2 < -1e-8) throw NumericalError("frechet: distance " + std::to_string(d2) +
                                         " below the numerical floor");
    d2 = 0.0;
  }
  return d2;
}

// --------------------------- frame-level metrics ---------------------------

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (!(a.shape == b.shape))
    throw DimensionError(std::string(who) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
}

/// Mean absolute per-pixel difference (values expected in [0,1]).
inline double l1(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "l1");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    acc += std::abs(static_cast<double>(a.at(i)) - static_cast<double>(b.at(i)));
  return acc / static_cast<double>(a.numel());
}

inline double l1(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.empty() || a.size() != b.size()) throw DimensionError("l1: sequence length mismatch");
  double acc = 0.0;
  for (std::size_t f = 0; f < a.size(); ++f) acc += l1(a[f], b[f]);
  return acc / static_cast<double>(a.size());
}

/// Peak signal-to-noise ratio in dB with MAX = 1. Identical inputs return the
/// +infinity sentinel, which orders above every finite value.
inline double psnr(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "psnr");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a.at(i)) - static_cast<double>(b.at(i));
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

inline double psnr(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.empty() || a.size() != b.size()) throw DimensionError("psnr: sequence length mismatch");
  double mse = 0.0;
  std::size_t n = 0;
  for (std::size_t f = 0; f < a.size(); ++f) {
    check_same_shape(a[f], b[f], "psnr");
    for (std::size_t i = 0; i < a[f].numel(); ++i) {
      const double d = static_cast<double>(a[f].at(i)) - static_cast<double>(b[f].at(i));
      mse += d * d;
    }
    n += a[f].numel();
  }
  mse /= static_cast<double>(n);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

namespace detail {

/// Channel-mean grayscale image as a row-major double grid.
inline std::vector<double> to_gray(const Tensor& img) {
  if (img.rank() != 3) throw DimensionError("ssim: image must be [h,w,c]");
  const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
  std::vector<double> g(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 0.0);
  const float* p = img.ptr();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = 0; k < c; ++k)
        acc += static_cast<double>(p[(static_cast<std::size_t>(y) * w + x) * c + k]);
      g[static_cast<std::size_t>(y) * w + x] = acc / c;
    }
  return g;
}

inline std::vector<double> gaussian_taps_11() {
  std::vector<double> t(11);
  double sum = 0.0;
  for (int i = 0; i < 11; ++i) {
    const double d = i - 5;
    t[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    sum += t[static_cast<std::size_t>(i)];
  }
  for (double& x : t) x /= sum;
  return t;
}

/// Separable valid-region Gaussian filter: (h,w) -> (h-10, w-10).
inline std::vector<double> gauss_filter_valid(const std::vector<double>& img, int h, int w) {
  const std::vector<double> taps = gaussian_taps_11();
  const int wout = w - 10;
  std::vector<double> rows(static_cast<std::size_t>(h) * static_cast<std::size_t>(wout), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < wout; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 11; ++k)
        acc += taps[static_cast<std::size_t>(k)] * img[static_cast<std::size_t>(y) * w + x + k];
      rows[static_cast<std::size_t>(y) * wout + x] = acc;
    }
  const int hout = h - 10;
  std::vector<double> out(static_cast<std::size_t>(hout) * static_cast<std::size_t>(wout), 0.0);
  for (int y = 0; y < hout; ++y)
    for (int x = 0; x < wout; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 11; ++k)
        acc += taps[static_cast<std::size_t>(k)] * rows[static_cast<std::size_t>(y + k) * wout + x];
      out[static_cast<std::size_t>(y) * wout + x] = acc;
    }
  return out;
}

}  // namespace detail

/// Structural similarity on channel-mean grayscale: 11x11 Gaussian window
/// (sigma 1.5), K1=0.01, K2=0.03, L=1, averaged over the valid window grid.
inline double ssim(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "ssim");
  const int h = a.dim(0), w = a.dim(1);
  if (h < 11 || w < 11) throw DataError("ssim: image smaller than the 11x11 window");
  const std::vector<double> x = detail::to_gray(a);
  const std::vector<double> y = detail::to_gray(b);
  const std::size_t n = x.size();
  std::vector<double> xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const std::vector<double> mx = detail::gauss_filter_valid(x, h, w);
  const std::vector<double> my = detail::gauss_filter_valid(y, h, w);
  const std::vector<double> mxx = detail::gauss_filter_valid(xx, h, w);
  const std::vector<double> myy = detail::gauss_filter_valid(yy, h, w);
  const std::vector<double> mxy = detail::gauss_filter_valid(xy, h, w);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double acc = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = mxx[i] - mx[i] * mx[i];
    const double vy = myy[i] - my[i] * my[i];
    const double cxy = mxy[i] - mx[i] * my[i];
    acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
           ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return acc / static_cast<double>(mx.size());
}

inline double ssim(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.empty() || a.size() != b.size()) throw DimensionError("ssim: sequence length mismatch");
  double acc = 0.0;
  for (std::size_t f = 0; f < a.size(); ++f) acc += ssim(a[f], b[f]);
  return acc / static_cast<double>(a.size());
}

// ------------------------ frozen random embedders --------------------------

/// A frozen three-stage stride-2 conv stack with seeded random weights. The
/// per-stage activation maps feed the perceptual-distance proxy; the pooled
/// final map is the Fréchet feature vector.
class FeatureStack {
 public:
  FeatureStack(std::string id, int cin, const std::vector<int>& widths, std::uint64_t seed)
      : id_(std::move(id)) {
    if (widths.size() != 3) throw DataError("feature stack: need 3 stage widths");
    Rng rng(seed);
    int prev = cin;
    for (int wdt : widths) {
      const int fan_in = 3 * 3 * prev;
      const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
      w_.push_back(Tensor::rand_uniform({3, 3, prev, wdt}, rng, -bound, bound));
      b_.push_back(Tensor::zeros({wdt}));
      prev = wdt;
    }
    out_dim_ = prev;
  }

  const std::string& id() const { return id_; }
  int out_dim() const { return out_dim_; }
  int in_channels() const { return w_[0].dim(2); }

  /// Post-activation maps of all three stages.
  std::vector<Tensor> features(const Tensor& img) const {
    if (img.rank() != 3 || img.dim(2) != w_[0].dim(2))
      throw DimensionError("feature stack: expected [h,w," + std::to_string(w_[0].dim(2)) +
                           "], got " + shape_str(img.shape));
    NoGradGuard ng;
    std::vector<Tensor> maps;
    Tensor x = img;
    for (std::size_t l = 0; l < w_.size(); ++l) {
      x = silu(conv2d(x, w_[l], b_[l], 2, 1));
      maps.push_back(x);
    }
    return maps;
  }

  /// Mean-pooled final stage: the image feature vector.
  std::vector<double> embed(const Tensor& img) const {
    const Tensor last = features(img).back();
    const int h = last.dim(0), w = last.dim(1), c = last.dim(2);
    std::vector<double> f(static_cast<std::size_t>(c), 0.0);
    const float* p = last.ptr();
    for (int i = 0; i < h * w; ++i)
      for (int k = 0; k < c; ++k)
        f[static_cast<std::size_t>(k)] += static_cast<double>(p[static_cast<std::size_t>(i) * c + k]);
    for (double& v : f) v /= static_cast<double>(h * w);
    return f;
  }

 private:
  std::string id_;
  int out_dim_;
  std::vector<Tensor> w_, b_;
};

/// Deterministic image -> feature-vector map with a recorded identifier.
struct ImageEmbedder {
  std::string id;
  std::function<std::vector<double>(const Tensor&)> fn;
};

/// Deterministic clip-window -> feature-vector map with a recorded identifier.
struct VideoEmbedder {
  std::string id;
  std::function<std::vector<double>(const std::vector<Tensor>&)> fn;
};

inline FeatureStack make_feature_stack(const EvalConfig& cfg, const std::string& tag, int cin) {
  const std::string id = tag + "[" + std::to_string(cin) + "->16->32->" +
                         std::to_string(cfg.embed_dim) + "]@" + std::to_string(cfg.embedder_seed);
  return FeatureStack(id, cin, {16, 32, cfg.embed_dim}, mix_seed(cfg.embedder_seed, tag));
}

inline ImageEmbedder make_image_embedder(const EvalConfig& cfg) {
  auto stack = std::make_shared<FeatureStack>(make_feature_stack(cfg, "randconv", 3));
  return {stack->id(), [stack](const Tensor& img) { return stack->embed(img); }};
}

/// Clip features for the frame-feature Fréchet score: the mean of per-frame
/// image embeddings over the window.
inline VideoEmbedder make_frame_mean_embedder(const EvalConfig& cfg) {
  auto stack = std::make_shared<FeatureStack>(make_feature_stack(cfg, "randconv", 3));
  const std::string id = "frame-mean(" + stack->id() + ")";
  return {id, [stack](const std::vector<Tensor>& frames) {
            if (frames.empty()) throw DataError("frame-mean embedder: empty window");
            std::vector<double> acc(static_cast<std::size_t>(stack->out_dim()), 0.0);
            for (const Tensor& f : frames) {
              const std::vector<double> e = stack->embed(f);
              for (std::size_t i = 0; i < e.size(); ++i) acc[i] += e[i];
            }
            for (double& v : acc) v /= static_cast<double>(frames.size());
            return acc;
          }};
}

/// Clip features for the spatiotemporal Fréchet score: a seeded conv stack
/// over the channel-concatenation of the window-mean frame and the mean
/// absolute temporal difference, so static appearance and motion both enter.
inline VideoEmbedder make_motion_embedder(const EvalConfig& cfg) {
  auto stack = std::make_shared<FeatureStack>(make_feature_stack(cfg, "motionconv", 6));
  return {stack->id(), [stack](const std::vector<Tensor>& frames) {
            if (frames.empty()) throw DataError("motion embedder: empty window");
            const Tensor& f0 = frames[0];
            if (f0.rank() != 3 || f0.dim(2) != 3)
              throw DimensionError("motion embedder: frames must be [h,w,3]");
            const int h = f0.dim(0), w = f0.dim(1);
            Tensor packed = Tensor::zeros({h, w, 6});
            float* out = packed.ptr();
            const std::size_t hw = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
            for (const Tensor& f : frames) {
              if (!(f.shape == f0.shape))
                throw DimensionError("motion embedder: mixed frame shapes in a window");
              const float* p = f.ptr();
              for (std::size_t i = 0; i < hw; ++i)
                for (int k = 0; k < 3; ++k)
                  out[i * 6 + static_cast<std::size_t>(k)] += p[i * 3 + static_cast<std::size_t>(k)];
            }
            for (std::size_t i = 0; i < hw; ++i)
              for (int k = 0; k < 3; ++k)
                out[i * 6 + static_cast<std::size_t>(k)] /= static_cast<float>(frames.size());
            if (frames.size() > 1) {
              for (std::size_t t = 1; t < frames.size(); ++t) {
                const float* a = frames[t].ptr();
                const float* b = frames[t - 1].ptr();
                for (std::size_t i = 0; i < hw; ++i)
                  for (int k = 0; k < 3; ++k)
                    out[i * 6 + 3 + static_cast<std::size_t>(k)] +=
                        std::abs(a[i * 3 + static_cast<std::size_t>(k)] -
                                 b[i * 3 + static_cast<std::size_t>(k)]);
              }
              for (std::size_t i = 0; i < hw; ++i)
                for (int k = 0; k < 3; ++k)
                  out[i * 6 + 3 + static_cast<std::size_t>(k)] /=
                      static_cast<float>(frames.size() - 1);
            }
            return stack->embed(packed);
          }};
}

// ------------------------- perceptual-distance proxy -----------------------

/// Mean over stages of the L2 distance between unit-normalized activation
/// maps. Each per-stage distance is a true metric on normalized features, so
/// the triangle inequality holds stage-wise.
inline double lpips_proxy(const FeatureStack& stack, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "lpips_proxy");
  const std::vector<Tensor> fa = stack.features(a);
  const std::vector<Tensor> fb = stack.features(b);
  double acc = 0.0;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    const std::size_t n = fa[l].numel();
    double na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      na += static_cast<double>(fa[l].at(i)) * static_cast<double>(fa[l].at(i));
      nb += static_cast<double>(fb[l].at(i)) * static_cast<double>(fb[l].at(i));
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    const double sa = na > 0.0 ? 1.0 / na : 0.0;
    const double sb = nb > 0.0 ? 1.0 / nb : 0.0;
    double d2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = sa * static_cast<double>(fa[l].at(i)) -
                       sb * static_cast<double>(fb[l].at(i));
      d2 += d * d;
    }
    acc += std::sqrt(d2);
  }
  return acc / static_cast<double>(fa.size());
}

inline double lpips_proxy(const FeatureStack& stack, const std::vector<Tensor>& a,
                          const std::vector<Tensor>& b) {
  if (a.empty() || a.size() != b.size())
    throw DimensionError("lpips_proxy: sequence length mismatch");
  double acc = 0.0;
  for (std::size_t f = 0; f < a.size(); ++f) acc += lpips_proxy(stack, a[f], b[f]);
  return acc / static_cast<double>(a.size());
}

// ------------------------------ Fréchet scores -----------------------------

inline double fid(const ImageEmbedder& emb, const std::vector<Tensor>& set_a,
                  const std::vector<Tensor>& set_b) {
  if (set_a.size() < 2 || set_b.size() < 2)
    throw DataError("fid: need at least 2 images per side");
  std::vector<std::vector<double>> fa, fb;
  for (const Tensor& img : set_a) fa.push_back(emb.fn(img));
  for (const Tensor& img : set_b) fb.push_back(emb.fn(img));
  return frechet(make_stats(fa), make_stats(fb));
}

/// Every stride-1 window of `window` consecutive frames becomes one sample;
/// videos shorter than the window are skipped with a warning.
inline std::vector<std::vector<double>> embed_windows(
    const VideoEmbedder& emb, const std::vector<std::vector<Tensor>>& videos, int window,
    const char* side) {
  std::vector<std::vector<double>> feats;
  for (std::size_t v = 0; v < videos.size(); ++v) {
    if (videos[v].size() < static_cast<std::size_t>(window)) {
      std::cerr << "[metrics] warning: skipping " << side << " video " << v << " with "
                << videos[v].size() << " frames (< " << window << "-frame window)\n";
      continue;
    }
    for (std::size_t s = 0; s + static_cast<std::size_t>(window) <= videos[v].size(); ++s)
      feats.push_back(emb.fn(std::vector<Tensor>(
          videos[v].begin() + static_cast<std::ptrdiff_t>(s),
          videos[v].begin() + static_cast<std::ptrdiff_t>(s + static_cast<std::size_t>(window)))));
  }
  return feats;
}

/// Fréchet distance between clip-window feature distributions. Serves both
/// video-level columns: pass the frame-mean embedder or the motion embedder.
inline double clip_frechet(const VideoEmbedder& emb,
                           const std::vector<std::vector<Tensor>>& videos_a,
                           const std::vector<std::vector<Tensor>>& videos_b, int window = 16) {
  if (window < 1) throw DataError("clip_frechet: window must be >= 1");
  const auto fa = embed_windows(emb, videos_a, window, "side-a");
  const auto fb = embed_windows(emb, videos_b, window, "side-b");
  if (fa.size() < 2 || fb.size() < 2)
    throw DataError("clip_frechet: need at least 2 clip windows per side (got " +
                    std::to_string(fa.size()) + " and " + std::to_string(fb.size()) + ")");
  return frechet(make_stats(fa), make_stats(fb));
}

// --------------------------------- report ----------------------------------

/// The seven result columns in publication order, plus embedder provenance.
/// Missing entries (e.g. video scores when every clip is too short) render as
/// "n/a".
struct MetricReport {
  std::optional<double> fid, ssim, lpips, psnr, l1, fid_vid, fvd;
  std::string embedder_id;
  std::uint64_t embedder_seed = 0;
};

namespace detail {

inline std::string fmt_value(const std::optional<double>& v, const char* spec) {
  if (!v) return "n/a";
  if (std::isinf(*v)) return *v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, *v);
  return buf;
}

inline std::optional<double> parse_value(const std::string& s) {
  if (s == "n/a" || s.empty()) return std::nullopt;
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  return std::stod(s);
}

/// Display width in code points (the arrow glyphs are multi-byte).
inline std::size_t utf8_len(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++n;
  return n;
}

inline std::string pad_to(const std::string& s, std::size_t width) {
  std::string out = s;
  const std::size_t len = utf8_len(s);
  if (len < width) out.append(width - len, ' ');
  return out;
}

}  // namespace detail

inline const char* kProxyDisclaimer =
    "scores use frozen seeded-random embedders; LPIPS/FID/FID-VID/FVD are internal "
    "proxies and are NOT comparable to published numbers";

/// Fixed-width text table in the publication column order.
inline std::string report_text(const MetricReport& r) {
  std::ostringstream out;
  out << "embedder: " << r.embedder_id << " (seed " << r.embedder_seed << ")\n";
  out << "note: " << kProxyDisclaimer << "\n";
  const char* names[7] = {"FID (↓)", "SSIM (↑)",    "LPIPS (↓)", "PSNR (↑)",
                          "L1 (↓)",  "FID-VID (↓)", "FVD (↓)"};
  const std::optional<double> vals[7] = {r.fid, r.ssim, r.lpips, r.psnr, r.l1, r.fid_vid, r.fvd};
  std::string head, row;
  for (int i = 0; i < 7; ++i) {
    const std::string v = detail::fmt_value(vals[i], "%.6g");
    const std::size_t wdt = std::max(detail::utf8_len(names[i]), detail::utf8_len(v)) + 2;
    head += detail::pad_to(names[i], wdt);
    row += detail::pad_to(v, wdt);
  }
  out << head << "\n" << row << "\n";
  return out.str();
}

/// Machine-readable single-row CSV; parses back bit-exactly.
inline std::string report_csv(const MetricReport& r) {
  std::ostringstream out;
  out << "# " << kProxyDisclaimer << "\n";
  out << "fid,ssim,lpips,psnr,l1,fid_vid,fvd,embedder,seed\n";
  const std::optional<double> vals[7] = {r.fid, r.ssim, r.lpips, r.psnr, r.l1, r.fid_vid, r.fvd};
  for (int i = 0; i < 7; ++i) out << detail::fmt_value(vals[i], "%.17g") << ",";
  out << r.embedder_id << "," << r.embedder_seed << "\n";
  return out.str();
}

inline MetricReport parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line, data;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;  // column header
      continue;
    }
    data = line;
    break;
  }
  if (data.empty()) throw DataError("report csv: no data row");
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream row(data);
  while (std::getline(row, cell, ',')) cells.push_back(cell);
  if (cells.size() != 9) throw DataError("report csv: expected 9 columns, got " +
                                         std::to_string(cells.size()));
  MetricReport r;
  r.fid = detail::parse_value(cells[0]);
  r.ssim = detail::parse_value(cells[1]);
  r.lpips = detail::parse_value(cells[2]);
  r.psnr = detail::parse_value(cells[3]);
  r.l1 = detail::parse_value(cells[4]);
  r.fid_vid = detail::parse_value(cells[5]);
  r.fvd = detail::parse_value(cells[6]);
  r.embedder_id = cells[7];
  r.embedder_seed = std::stoull(cells[8]);
  return r;
}

}  // namespace dancer
