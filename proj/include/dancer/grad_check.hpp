#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "dancer/errors.hpp"
#include "dancer/nn.hpp"
#include "dancer/tensor.hpp"

namespace dancer {

template <typename T>
struct GradCheckOpts {
  // Central-difference step; defaults follow working precision.
  T epsilon = std::is_same_v<T, float> ? T(1e-3) : T(1e-6);
  // Coordinates sampled per parameter tensor (all coordinates if fewer).
  int coords_per_param = 32;
  // Relative error floor: err = |a-n| / max(|a|+|n|, floor). At 32-bit the
  // loss carries ~1e-7 relative rounding jitter, so the central difference
  // cannot resolve absolute gradient errors below ~1e-4; a floor of 0.1
  // turns the gate into "absolute error <= 1e-4" for small gradients, which
  // is the resolution limit. The 64-bit instantiation keeps a tight floor.
  T floor = std::is_same_v<T, float> ? T(1e-1) : T(1e-10);
  std::uint64_t seed = 0x9d5c0de5u;
};

template <typename T>
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
};

/// Compares backpropagated gradients of a scalar-valued function against
/// central finite differences on a random coordinate subset per parameter.
/// `loss_fn` must be a pure function of the parameter values.
template <typename T>
GradCheckResult<T> grad_check(ParamStoreT<T>& params,
                              const std::function<TensorT<T>()>& loss_fn,
                              GradCheckOpts<T> opts = {}) {
  params.zero_grad();
  auto loss = loss_fn();
  if (loss.numel() != 1)
    throw DimensionError("grad_check: loss must be scalar, shape " + shape_str(loss.shape));
  if (!std::isfinite(static_cast<double>(loss.value())))
    throw NumericalError("grad_check: loss is not finite");
  backward(loss);

  Rng rng(opts.seed);
  GradCheckResult<T> res;
  const double eps = static_cast<double>(opts.epsilon);

  for (auto& entry : params.entries()) {
    auto& p = entry.second;
    if (!p.requires_grad || !p.grad) continue;
    const std::size_t n = p.numel();

    std::vector<std::size_t> coords;
    if (n <= static_cast<std::size_t>(opts.coords_per_param)) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      // Sample without replacement.
      std::vector<std::size_t> pool(n);
      for (std::size_t i = 0; i < n; ++i) pool[i] = i;
      for (int i = 0; i < opts.coords_per_param; ++i) {
        const std::size_t j =
            static_cast<std::size_t>(i) + rng.uniform_index(n - static_cast<std::size_t>(i));
        std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
        coords.push_back(pool[static_cast<std::size_t>(i)]);
      }
    }

    for (std::size_t ci : coords) {
      const T saved = (*p.data)[ci];
      double fp, fm;
      {
        NoGradGuard ng;
        (*p.data)[ci] = saved + opts.epsilon;
        fp = static_cast<double>(loss_fn().value());
        (*p.data)[ci] = saved - opts.epsilon;
        fm = static_cast<double>(loss_fn().value());
      }
      (*p.data)[ci] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericalError("grad_check: loss not finite near " + entry.first);

      const double numeric = (fp - fm) / (2.0 * eps);
      const double analytic = static_cast<double>((*p.grad)[ci]);
      const double denom =
          std::max(std::abs(analytic) + std::abs(numeric), static_cast<double>(opts.floor));
      const double rel = std::abs(analytic - numeric) / denom;
      ++res.coords_checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = entry.first;
        res.worst_coord = ci;
        res.worst_analytic = analytic;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace dancer
