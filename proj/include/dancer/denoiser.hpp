#pragma once

#include <string>
#include <vector>

#include "dancer/aem.hpp"
#include "dancer/config.hpp"
#include "dancer/errors.hpp"
#include "dancer/nn.hpp"
#include "dancer/rng.hpp"
#include "dancer/tensor.hpp"

namespace dancer {

// ---------------------------------------------------------------------------
// Conditional video U-Net. Per-frame input is the channel concat of the noisy
// frame latent and the (noised) reference latent; pose grids are added right
// after the input conv. Every stage runs a residual block, cross-attention
// into the appearance tokens, then cross-attention across frames at fixed
// spatial positions. Two down stages halve the grid once; two up stages
// mirror them with skip concats.
// ---------------------------------------------------------------------------

class DenoiserModel {
 public:
  DenoiserModel(ParamStore& ps, const DenoiserConfig& cfg, int latent_channels, int app_token_dim)
      : cfg_(cfg), latent_(latent_channels), app_dim_(app_token_dim) {
    if (cfg.channel_mult.size() != 2) throw DataError("denoiser: channel_mult needs 2 stages");
    if (cfg.time_dim < 2 || cfg.time_dim % 2 != 0)
      throw DataError("denoiser: time_dim must be even and >= 2");
    if (latent_channels < 1) throw DataError("denoiser: latent channels must be positive");
    c0_ = cfg.base_channels * cfg.channel_mult[0];
    c1_ = cfg.base_channels * cfg.channel_mult[1];
    Rng rng(0xDE401);
    auto conv = [&](const std::string& name, int k, int cin, int cout) {
      if (!ps.has(name + ".w"))
        ps.create(name + ".w", {k, k, cin, cout}, Init::kKaimingUniform, rng, k * k * cin);
      if (!ps.has(name + ".b")) ps.create(name + ".b", {cout}, Init::kZero, rng);
    };
    auto norm = [&](const std::string& name, int c) {
      if (!ps.has(name + ".g")) ps.create(name + ".g", {c}, Init::kOne, rng);
      if (!ps.has(name + ".be")) ps.create(name + ".be", {c}, Init::kZero, rng);
    };
    auto resblock = [&](const std::string& p, int cin, int cout) {
      norm(p + ".n1", cin);
      conv(p + ".c1", 3, cin, cout);
      nnblocks::ensure_linear(ps, p + ".t", cfg.time_dim, cout, rng);
      norm(p + ".n2", cout);
      conv(p + ".c2", 3, cout, cout);
      if (cin != cout) conv(p + ".skip", 1, cin, cout);
    };
    auto attn = [&](const std::string& p, int c, int kv_dim) {
      norm(p + ".n", c);
      nnblocks::ensure_linear(ps, p + ".q", c, c, rng);
      nnblocks::ensure_linear(ps, p + ".k", kv_dim, c, rng);
      nnblocks::ensure_linear(ps, p + ".v", kv_dim, c, rng);
      nnblocks::ensure_linear(ps, p + ".o", c, c, rng);
    };
    auto stage = [&](const std::string& p, int cin, int cout) {
      resblock(p + ".res", cin, cout);
      attn(p + ".app", cout, app_dim_);
      attn(p + ".tmp", cout, cout);
    };
    conv("den.in", 3, 2 * latent_channels, cfg.base_channels);
    nnblocks::ensure_linear(ps, "den.time.l1", cfg.time_dim, cfg.time_dim, rng);
    nnblocks::ensure_linear(ps, "den.time.l2", cfg.time_dim, cfg.time_dim, rng);
    stage("den.d0", cfg.base_channels, c0_);
    conv("den.down", 3, c0_, c1_);
    stage("den.d1", c1_, c1_);
    stage("den.mid", c1_, c1_);
    stage("den.u1", 2 * c1_, c1_);
    conv("den.upc", 3, c1_, c0_);
    stage("den.u0", 2 * c0_, c0_);
    norm("den.out.n", c0_);
    conv("den.out.c", 3, c0_, latent_channels);
  }

  int latent_channels() const { return latent_; }
  int base_channels() const { return cfg_.base_channels; }

  /// Test hook: temporal attention becomes the identity, making frames fully
  /// independent.
  void set_bypass_temporal(bool v) { bypass_temporal_ = v; }
  bool bypass_temporal() const { return bypass_temporal_; }

  /// Total trainable scalars registered under this model's prefix.
  std::size_t count_params(const ParamStore& ps) const {
    std::size_t n = 0;
    for (const auto& e : ps.entries())
      if (e.first.rfind("den.", 0) == 0) n += e.second.numel();
    return n;
  }

  /// Predicts per-frame noise. noisy: N x [g,g,latent]; ref_latent [g,g,latent];
  /// c_app [m, app_dim]; c_pose: N x [g,g,base]; t: non-negative timestep.
  std::vector<Tensor> forward(ParamStore& ps, const std::vector<Tensor>& noisy,
                              const Tensor& ref_latent, const Tensor& c_app,
                              const std::vector<Tensor>& c_pose, int t) const {
    const std::size_t n = noisy.size();
    if (n == 0) throw DataError("denoiser: empty frame batch");
    if (c_pose.size() != n)
      throw DataError("denoiser: pose condition count " + std::to_string(c_pose.size()) +
                      " != frame count " + std::to_string(n));
    if (t < 0) throw DataError("denoiser: negative timestep");
    const Shape lat_shape = noisy[0].shape;
    if (lat_shape.size() != 3 || lat_shape[2] != latent_)
      throw DimensionError("denoiser: frame latents must be [g,g," + std::to_string(latent_) +
                           "], got " + shape_str(lat_shape));
    const int g = lat_shape[0];
    if (lat_shape[1] != g || g % 2 != 0 || g < 4)
      throw DimensionError("denoiser: latent grid must be square, even and >= 4");
    if (!(ref_latent.shape == lat_shape))
      throw DimensionError("denoiser: reference latent " + shape_str(ref_latent.shape) +
                           " != frame latent " + shape_str(lat_shape));
    if (c_app.rank() != 2 || c_app.shape[1] != app_dim_)
      throw DimensionError("denoiser: appearance tokens must be [m," + std::to_string(app_dim_) +
                           "], got " + shape_str(c_app.shape));
    const Shape pose_shape({g, g, cfg_.base_channels});
    for (const Tensor& p : c_pose)
      if (!(p.shape == pose_shape))
        throw DimensionError("denoiser: pose grid " + shape_str(p.shape) + " != " +
                             shape_str(pose_shape));
    for (const Tensor& f : noisy)
      if (!(f.shape == lat_shape))
        throw DimensionError("denoiser: inconsistent frame latent shapes");

    // Timestep embedding shared by every residual block.
    Tensor e = sinusoidal_embed<float>(static_cast<double>(t), cfg_.time_dim);
    e = nnblocks::run_linear(ps, "den.time.l1", e);
    e = silu(e);
    const Tensor temb = nnblocks::run_linear(ps, "den.time.l2", e);

    std::vector<Tensor> h(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor x = concat(std::vector<Tensor>{noisy[i], ref_latent}, 2);
      h[i] = add(conv2d(x, ps.get("den.in.w"), ps.get("den.in.b"), 1, 1), c_pose[i]);
    }

    h = stage(ps, "den.d0", h, c_app, temb);
    const std::vector<Tensor> s0 = h;
    for (auto& f : h) f = conv2d(f, ps.get("den.down.w"), ps.get("den.down.b"), 2, 1);
    h = stage(ps, "den.d1", h, c_app, temb);
    const std::vector<Tensor> s1 = h;
    h = stage(ps, "den.mid", h, c_app, temb);
    for (std::size_t i = 0; i < n; ++i) h[i] = concat(std::vector<Tensor>{h[i], s1[i]}, 2);
    h = stage(ps, "den.u1", h, c_app, temb);
    for (auto& f : h) {
      f = upsample_nearest2x(f);
      f = conv2d(f, ps.get("den.upc.w"), ps.get("den.upc.b"), 1, 1);
    }
    for (std::size_t i = 0; i < n; ++i) h[i] = concat(std::vector<Tensor>{h[i], s0[i]}, 2);
    h = stage(ps, "den.u0", h, c_app, temb);

    for (auto& f : h) {
      f = group_norm(f, ps.get("den.out.n.g"), ps.get("den.out.n.be"), pick_groups(f.shape[2]));
      f = silu(f);
      f = conv2d(f, ps.get("den.out.c.w"), ps.get("den.out.c.b"), 1, 1);
    }
    return h;
  }

 private:
  Tensor resblock(ParamStore& ps, const std::string& p, const Tensor& x,
                  const Tensor& temb) const {
    Tensor hh = group_norm(x, ps.get(p + ".n1.g"), ps.get(p + ".n1.be"),
                           pick_groups(x.shape[2]));
    hh = silu(hh);
    hh = conv2d(hh, ps.get(p + ".c1.w"), ps.get(p + ".c1.b"), 1, 1);
    const Tensor tvec = reshape(nnblocks::run_linear(ps, p + ".t", temb), {hh.shape[2]});
    hh = add_channel_bias(hh, tvec);
    hh = group_norm(hh, ps.get(p + ".n2.g"), ps.get(p + ".n2.be"), pick_groups(hh.shape[2]));
    hh = silu(hh);
    hh = conv2d(hh, ps.get(p + ".c2.w"), ps.get(p + ".c2.b"), 1, 1);
    const Tensor skip =
        ps.has(p + ".skip.w") ? conv2d(x, ps.get(p + ".skip.w"), ps.get(p + ".skip.b"), 1, 0) : x;
    return add(skip, hh);
  }

  Tensor appearance_attn(ParamStore& ps, const std::string& p, const Tensor& x,
                         const Tensor& c_app) const {
    const int hh = x.shape[0], ww = x.shape[1], c = x.shape[2];
    Tensor nx = group_norm(x, ps.get(p + ".n.g"), ps.get(p + ".n.be"), pick_groups(c));
    const Tensor q = nnblocks::run_linear(ps, p + ".q", reshape(nx, {hh * ww, c}));
    const Tensor k = nnblocks::run_linear(ps, p + ".k", c_app);
    const Tensor v = nnblocks::run_linear(ps, p + ".v", c_app);
    Tensor a = cross_attention(q, k, v);
    a = nnblocks::run_linear(ps, p + ".o", a);
    return add(x, reshape(a, {hh, ww, c}));
  }

  /// Attention across the N frames at each fixed spatial position.
  std::vector<Tensor> temporal_attn(ParamStore& ps, const std::string& p,
                                    const std::vector<Tensor>& frames) const {
    const int n = static_cast<int>(frames.size());
    const int hh = frames[0].shape[0], ww = frames[0].shape[1], c = frames[0].shape[2];
    const int pos = hh * ww;
    std::vector<Tensor> normed;
    normed.reserve(frames.size());
    for (const Tensor& f : frames)
      normed.push_back(reshape(
          group_norm(f, ps.get(p + ".n.g"), ps.get(p + ".n.be"), pick_groups(c)), {1, pos, c}));
    const Tensor stack = reshape(concat(normed, 0), {n * pos, c});
    auto by_position = [&](const std::string& name) {
      // [n*pos, c] -> [pos, n, c] so each position's frame tokens are contiguous.
      return permute(reshape(nnblocks::run_linear(ps, name, stack), {n, pos, c}),
                     {1, 0, 2});
    };
    const Tensor q = by_position(p + ".q");
    const Tensor k = by_position(p + ".k");
    const Tensor v = by_position(p + ".v");
    std::vector<Tensor> parts;
    parts.reserve(static_cast<std::size_t>(pos));
    for (int i = 0; i < pos; ++i) {
      const Tensor qp = reshape(slice(q, 0, i, 1), {n, c});
      const Tensor kp = reshape(slice(k, 0, i, 1), {n, c});
      const Tensor vp = reshape(slice(v, 0, i, 1), {n, c});
      parts.push_back(reshape(cross_attention(qp, kp, vp), {1, n, c}));
    }
    const Tensor att = reshape(permute(concat(parts, 0), {1, 0, 2}), {n * pos, c});
    const Tensor mixed = nnblocks::run_linear(ps, p + ".o", att);
    std::vector<Tensor> out;
    out.reserve(frames.size());
    for (int i = 0; i < n; ++i)
      out.push_back(add(frames[static_cast<std::size_t>(i)],
                        reshape(slice(mixed, 0, i * pos, pos), {hh, ww, c})));
    return out;
  }

  std::vector<Tensor> stage(ParamStore& ps, const std::string& p, const std::vector<Tensor>& in,
                            const Tensor& c_app, const Tensor& temb) const {
    std::vector<Tensor> h;
    h.reserve(in.size());
    for (const Tensor& f : in) {
      Tensor x = resblock(ps, p + ".res", f, temb);
      h.push_back(appearance_attn(ps, p + ".app", x, c_app));
    }
    if (bypass_temporal_) return h;
    return temporal_attn(ps, p + ".tmp", h);
  }

  DenoiserConfig cfg_;
  int latent_;
  int app_dim_;
  int c0_ = 0;
  int c1_ = 0;
  bool bypass_temporal_ = false;
};

}  // namespace dancer
