#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dancer/errors.hpp"
#include "dancer/nn.hpp"

namespace dancer {

/// Adam with bias correction. Moments are keyed by parameter name so they can
/// be serialized alongside the weights and restored for exact resume.
template <typename T>
class AdamT {
 public:
  explicit AdamT(T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// One update over every trainable parameter in the store. Parameters with
  /// requires_grad == false are skipped entirely (their moments go stale,
  /// which is fine: they resume cleanly if unfrozen later).
  void step(ParamStoreT<T>& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), t_);
    const double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), t_);
    for (auto& entry : params.entries()) {
      auto& p = entry.second;
      if (!p.requires_grad || !p.grad) continue;
      auto& m = m_[entry.first];
      auto& v = v_[entry.first];
      if (m.size() != p.numel()) m.assign(p.numel(), T(0));
      if (v.size() != p.numel()) v.assign(p.numel(), T(0));
      const std::size_t n = p.numel();
      for (std::size_t i = 0; i < n; ++i) {
        const T g = (*p.grad)[i];
        if (!std::isfinite(static_cast<double>(g)))
          throw NumericalError("optimizer: non-finite gradient in " + entry.first);
        m[i] = beta1_ * m[i] + (T(1) - beta1_) * g;
        v[i] = beta2_ * v[i] + (T(1) - beta2_) * g * g;
        const double mh = static_cast<double>(m[i]) / bc1;
        const double vh = static_cast<double>(v[i]) / bc2;
        (*p.data)[i] -= static_cast<T>(static_cast<double>(lr_) * mh /
                                       (std::sqrt(vh) + static_cast<double>(eps_)));
      }
    }
  }

  T lr() const { return lr_; }
  void set_lr(T lr) { lr_ = lr; }
  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }

  std::map<std::string, std::vector<T>>& moments_m() { return m_; }
  std::map<std::string, std::vector<T>>& moments_v() { return v_; }

 private:
  T lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::map<std::string, std::vector<T>> m_, v_;
};

using Adam = AdamT<float>;

}  // namespace dancer
