#pragma once

#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "dancer/config.hpp"
#include "dancer/errors.hpp"
#include "dancer/nn.hpp"
#include "dancer/optim.hpp"
#include "dancer/rng.hpp"
#include "dancer/tensor.hpp"

namespace dancer {

// ---------------------------------------------------------------------------
// Image <-> latent codec: 4 encoder conv stages (three stride-2, one stride-1
// head) for an exact x8 spatial reduction; decoder mirrors with
// nearest-upsample + conv and a sigmoid output in [0,1].
// ---------------------------------------------------------------------------

class CodecModel {
 public:
  CodecModel(ParamStore& store, const CodecConfig& cfg, int image_size)
      : cfg_(cfg), image_size_(image_size) {
    if (image_size % 8 != 0) throw DataError("codec: image size must be a multiple of 8");
    latent_size_ = image_size / 8;
    const int b = cfg.base_channels;
    half_ = std::max(4, b / 2);
    Rng rng(0xC0DEC);
    auto conv = [&](const std::string& name, int k, int cin, int cout, bool norm) {
      if (!store.has(name + ".w"))
        store.create(name + ".w", {k, k, cin, cout}, Init::kKaimingUniform, rng, k * k * cin);
      if (!store.has(name + ".b")) store.create(name + ".b", {cout}, Init::kZero, rng);
      if (norm) {
        if (!store.has(name + ".g")) store.create(name + ".g", {cout}, Init::kOne, rng);
        if (!store.has(name + ".be")) store.create(name + ".be", {cout}, Init::kZero, rng);
      }
    };
    conv("codec.enc1", 3, 3, b, true);
    conv("codec.enc2", 3, b, 2 * b, true);
    conv("codec.enc3", 3, 2 * b, 4 * b, true);
    conv("codec.enc4", 3, 4 * b, 2 * cfg.latent_channels, false);
    conv("codec.dec0", 3, cfg.latent_channels, 4 * b, true);
    conv("codec.dec1", 3, 4 * b, 2 * b, true);
    conv("codec.dec2", 3, 2 * b, b, true);
    conv("codec.dec3", 3, b, half_, true);
    conv("codec.out", 3, half_, 3, false);
  }

  int latent_size() const { return latent_size_; }
  int latent_channels() const { return cfg_.latent_channels; }
  int image_size() const { return image_size_; }

  /// Encoder trunk: returns [s/8, s/8, 2*latent] (mean then log-variance).
  Tensor encode_moments(ParamStore& ps, const Tensor& image) const {
    check_image(image);
    Tensor h = block(ps, "codec.enc1", image, 2);
    h = block(ps, "codec.enc2", h, 2);
    h = block(ps, "codec.enc3", h, 2);
    h = conv2d(h, ps.get("codec.enc4.w"), ps.get("codec.enc4.b"), 1, 1);
    return h;
  }

  Tensor posterior_mean(const Tensor& moments) const {
    return slice(moments, 2, 0, cfg_.latent_channels);
  }
  Tensor posterior_logvar(const Tensor& moments) const {
    return slice(moments, 2, cfg_.latent_channels, cfg_.latent_channels);
  }

  /// Posterior mean (deterministic).
  Tensor encode(ParamStore& ps, const Tensor& image) const {
    return posterior_mean(encode_moments(ps, image));
  }

  /// Reparameterized sample mean + exp(logvar/2) * eps.
  Tensor encode_sample(ParamStore& ps, const Tensor& image, Rng& rng) const {
    const Tensor moments = encode_moments(ps, image);
    const Tensor mean = posterior_mean(moments);
    const Tensor logvar = posterior_logvar(moments);
    Tensor eps;
    {
      NoGradGuard ng;
      eps = Tensor::randn(mean.shape, rng);
    }
    const Tensor sigma = exp_t(mul_scalar(logvar, 0.5f));
    return add(mean, mul(sigma, eps));
  }

  Tensor decode(ParamStore& ps, const Tensor& latent) const {
    if (latent.rank() != 3 || latent.dim(0) != latent_size_ || latent.dim(1) != latent_size_ ||
        latent.dim(2) != cfg_.latent_channels)
      throw DataError("codec: latent must be " + std::to_string(latent_size_) + "x" +
                      std::to_string(latent_size_) + "x" + std::to_string(cfg_.latent_channels) +
                      ", got " + shape_str(latent.shape));
    Tensor h = block(ps, "codec.dec0", latent, 1);
    h = block(ps, "codec.dec1", upsample_nearest2x(h), 1);
    h = block(ps, "codec.dec2", upsample_nearest2x(h), 1);
    h = block(ps, "codec.dec3", upsample_nearest2x(h), 1);
    h = conv2d(h, ps.get("codec.out.w"), ps.get("codec.out.b"), 1, 1);
    return sigmoid(h);
  }

  /// Per-element KL(posterior || N(0,1)); nonnegative by construction.
  static Tensor kl_term(const Tensor& mean, const Tensor& logvar) {
    // 0.5 * mean(mu^2 + exp(logvar) - 1 - logvar)
    Tensor inner = add(square(mean), exp_t(logvar));
    inner = sub(inner, add_scalar(logvar, 1.0f));
    return mul_scalar(mean_all(inner), 0.5f);
  }

  /// Reconstruction MSE + kl_weight * KL for a single image.
  Tensor loss(ParamStore& ps, const Tensor& image, Rng& rng) const {
    const Tensor moments = encode_moments(ps, image);
    const Tensor mean = posterior_mean(moments);
    const Tensor logvar = posterior_logvar(moments);
    Tensor eps;
    {
      NoGradGuard ng;
      eps = Tensor::randn(mean.shape, rng);
    }
    const Tensor z = add(mean, mul(exp_t(mul_scalar(logvar, 0.5f)), eps));
    const Tensor recon = decode(ps, z);
    const Tensor rec_loss = mse(recon, image);
    if (cfg_.kl_weight <= 0.0) return rec_loss;
    return add(rec_loss, mul_scalar(kl_term(mean, logvar), static_cast<float>(cfg_.kl_weight)));
  }

 private:
  void check_image(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != image_size_ || image.dim(1) != image_size_ ||
        image.dim(2) != 3)
      throw DataError("codec: image must be " + std::to_string(image_size_) + "x" +
                      std::to_string(image_size_) + "x3, got " + shape_str(image.shape));
  }

  Tensor block(ParamStore& ps, const std::string& name, const Tensor& x, int stride) const {
    Tensor h = conv2d(x, ps.get(name + ".w"), ps.get(name + ".b"), stride, 1);
    h = group_norm(h, ps.get(name + ".g"), ps.get(name + ".be"), pick_groups(h.dim(2)));
    return silu(h);
  }

  CodecConfig cfg_;
  int image_size_;
  int latent_size_;
  int half_;
};

struct TrainLogEntry {
  int step;
  double loss;
  double lr;
  double wall_ms;
};

/// Single-image-batch codec training; aborts with a diagnostic on non-finite
/// loss. Frame picks are seeded per step, so interrupted runs can resume
/// deterministically.
inline std::vector<TrainLogEntry> train_codec(ParamStore& ps, const CodecModel& model,
                                              const std::vector<Tensor>& frames, int steps,
                                              double lr, std::uint64_t seed, Adam& opt,
                                              int first_step = 0) {
  if (frames.empty()) throw DataError("train_codec: empty dataset");
  std::vector<TrainLogEntry> log;
  opt.set_lr(lr);
  for (int step = first_step; step < steps; ++step) {
    Rng rng(mix_seed(seed, "codec_step_" + std::to_string(step)));
    const Tensor& image = frames[rng.uniform_index(frames.size())];
    const auto t0 = std::chrono::steady_clock::now();
    ps.zero_grad();
    Tensor l = model.loss(ps, image, rng);
    const double lv = static_cast<double>(l.value());
    if (!std::isfinite(lv))
      throw NumericalError("train_codec: non-finite loss at step " + std::to_string(step));
    backward(l);
    opt.step(ps);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    log.push_back({step, lv, lr, ms});
  }
  return log;
}

}  // namespace dancer
