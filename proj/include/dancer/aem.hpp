#pragma once

#include <string>

#include "dancer/config.hpp"
#include "dancer/errors.hpp"
#include "dancer/nn.hpp"
#include "dancer/rng.hpp"
#include "dancer/tensor.hpp"

namespace dancer {

// ---------------------------------------------------------------------------
// Appearance encoding: a semantic encoder (coarse patches, mean-pooled global
// token) and a detail encoder (fine patches, per-patch tokens), fused per
// detail token by fully-connected layers into 65 appearance tokens.
// ---------------------------------------------------------------------------

namespace nnblocks {

/// Registers a linear layer's parameters if absent.
inline void ensure_linear(ParamStore& ps, const std::string& name, int din, int dout, Rng& rng) {
  if (!ps.has(name + ".w"))
    ps.create(name + ".w", {din, dout}, Init::kKaimingUniform, rng, din);
  if (!ps.has(name + ".b")) ps.create(name + ".b", {dout}, Init::kZero, rng);
}

inline Tensor run_linear(ParamStore& ps, const std::string& name, const Tensor& x) {
  return linear(x, ps.get(name + ".w"), ps.get(name + ".b"));
}

inline void ensure_layernorm(ParamStore& ps, const std::string& name, int dim, Rng& rng) {
  if (!ps.has(name + ".g")) ps.create(name + ".g", {dim}, Init::kOne, rng);
  if (!ps.has(name + ".b")) ps.create(name + ".b", {dim}, Init::kZero, rng);
}

inline void ensure_attn_block(ParamStore& ps, const std::string& p, int dim, Rng& rng) {
  ensure_layernorm(ps, p + ".ln1", dim, rng);
  ensure_linear(ps, p + ".q", dim, dim, rng);
  ensure_linear(ps, p + ".k", dim, dim, rng);
  ensure_linear(ps, p + ".v", dim, dim, rng);
  ensure_linear(ps, p + ".o", dim, dim, rng);
  ensure_layernorm(ps, p + ".ln2", dim, rng);
  ensure_linear(ps, p + ".f1", dim, 2 * dim, rng);
  ensure_linear(ps, p + ".f2", 2 * dim, dim, rng);
}

/// Pre-norm self-attention + feed-forward block with residuals.
/// `bypass` turns the whole block into the identity (test hook).
inline Tensor attn_block(ParamStore& ps, const std::string& p, const Tensor& x, bool bypass) {
  if (bypass) return x;
  Tensor h = layer_norm(x, ps.get(p + ".ln1.g"), ps.get(p + ".ln1.b"));
  const Tensor q = run_linear(ps, p + ".q", h);
  const Tensor k = run_linear(ps, p + ".k", h);
  const Tensor v = run_linear(ps, p + ".v", h);
  Tensor a = cross_attention(q, k, v);
  a = run_linear(ps, p + ".o", a);
  Tensor y = add(x, a);
  Tensor m = layer_norm(y, ps.get(p + ".ln2.g"), ps.get(p + ".ln2.b"));
  m = run_linear(ps, p + ".f1", m);
  m = silu(m);
  m = run_linear(ps, p + ".f2", m);
  return add(y, m);
}

}  // namespace nnblocks

class AemModel {
 public:
  AemModel(ParamStore& ps, const AppearanceConfig& cfg, int image_size)
      : cfg_(cfg), image_size_(image_size) {
    if (image_size % cfg.semantic_patch != 0 || image_size % cfg.detail_patch != 0)
      throw DataError("aem: patch sizes must divide the image size");
    sem_tokens_ = (image_size / cfg.semantic_patch) * (image_size / cfg.semantic_patch);
    det_tokens_ = (image_size / cfg.detail_patch) * (image_size / cfg.detail_patch);
    Rng rng(0xAE0);
    const int d = cfg.semantic_dim;
    const int t = cfg.token_dim;
    auto patch = [&](const std::string& name, int p) {
      if (!ps.has(name + ".w"))
        ps.create(name + ".w", {p, p, 3, d}, Init::kKaimingUniform, rng, p * p * 3);
      if (!ps.has(name + ".b")) ps.create(name + ".b", {d}, Init::kZero, rng);
    };
    patch("aem.sem.patch", cfg.semantic_patch);
    patch("aem.det.patch", cfg.detail_patch);
    for (int b = 0; b < cfg.blocks; ++b) {
      nnblocks::ensure_attn_block(ps, "aem.sem.blk" + std::to_string(b), d, rng);
      nnblocks::ensure_attn_block(ps, "aem.det.blk" + std::to_string(b), d, rng);
    }
    nnblocks::ensure_linear(ps, "aem.fuse.f1", 2 * d, t, rng);
    nnblocks::ensure_linear(ps, "aem.fuse.f2", t, t, rng);
    nnblocks::ensure_linear(ps, "aem.fuse.glob", d, t, rng);
  }

  int token_count() const { return det_tokens_ + 1; }
  int token_dim() const { return cfg_.token_dim; }

  /// Test hook: replaces every self-attention block with the identity.
  void set_bypass_attention(bool v) { bypass_attention_ = v; }
  bool bypass_attention() const { return bypass_attention_; }

  /// Ablation: zero the detail-token stream at the fusion input, leaving only
  /// the global semantic token informative (the semantic-only table row). The
  /// detail encoder is skipped entirely, so its parameters receive no updates.
  void set_semantic_only(bool v) { semantic_only_ = v; }
  bool semantic_only() const { return semantic_only_; }

  /// Pooled global token [1, semantic_dim].
  Tensor encode_semantic(ParamStore& ps, const Tensor& image) const {
    Tensor x = patch_tokens(ps, "aem.sem.patch", image, cfg_.semantic_patch, sem_tokens_);
    for (int b = 0; b < cfg_.blocks; ++b)
      x = nnblocks::attn_block(ps, "aem.sem.blk" + std::to_string(b), x, bypass_attention_);
    Tensor pooled = mean_axis0(x);  // [dim]
    return reshape(pooled, {1, cfg_.semantic_dim});
  }

  /// Row-major patch tokens [det_tokens, semantic_dim].
  Tensor encode_detail(ParamStore& ps, const Tensor& image) const {
    Tensor x = patch_tokens(ps, "aem.det.patch", image, cfg_.detail_patch, det_tokens_);
    for (int b = 0; b < cfg_.blocks; ++b)
      x = nnblocks::attn_block(ps, "aem.det.blk" + std::to_string(b), x, bypass_attention_);
    return x;
  }

  /// [1+det_tokens, token_dim]: projected global token prepended to the
  /// per-token fusion of (broadcast global || detail token) -> FC -> silu -> FC.
  Tensor fuse(ParamStore& ps, const Tensor& c_h, const Tensor& c_l) const {
    if (c_h.rank() != 2 || c_h.dim(0) != 1 || c_h.dim(1) != cfg_.semantic_dim)
      throw DataError("aem fuse: global token must be [1," + std::to_string(cfg_.semantic_dim) +
                      "], got " + shape_str(c_h.shape));
    if (c_l.rank() != 2 || c_l.dim(0) != det_tokens_ || c_l.dim(1) != cfg_.semantic_dim)
      throw DataError("aem fuse: detail tokens must be [" + std::to_string(det_tokens_) + "," +
                      std::to_string(cfg_.semantic_dim) + "], got " + shape_str(c_l.shape));
    const Tensor broad = broadcast_axis0(c_h, det_tokens_);
    Tensor fused = concat(std::vector<Tensor>{broad, c_l}, 1);  // [n, 2d]
    fused = nnblocks::run_linear(ps, "aem.fuse.f1", fused);
    fused = silu(fused);
    fused = nnblocks::run_linear(ps, "aem.fuse.f2", fused);
    const Tensor glob = nnblocks::run_linear(ps, "aem.fuse.glob", c_h);  // [1, t]
    return concat(std::vector<Tensor>{glob, fused}, 0);
  }

  /// Full appearance conditioning for one reference image.
  Tensor forward(ParamStore& ps, const Tensor& image) const {
    const Tensor c_h = encode_semantic(ps, image);
    const Tensor c_l = semantic_only_ ? Tensor::zeros({det_tokens_, cfg_.semantic_dim})
                                      : encode_detail(ps, image);
    return fuse(ps, c_h, c_l);
  }

 private:
  Tensor patch_tokens(ParamStore& ps, const std::string& name, const Tensor& image, int p,
                      int count) const {
    if (image.rank() != 3 || image.dim(0) != image_size_ || image.dim(1) != image_size_ ||
        image.dim(2) != 3)
      throw DataError("aem: image must be " + std::to_string(image_size_) + "x" +
                      std::to_string(image_size_) + "x3, got " + shape_str(image.shape));
    Tensor g = conv2d(image, ps.get(name + ".w"), ps.get(name + ".b"), p, 0);
    return reshape(g, {count, cfg_.semantic_dim});
  }

  AppearanceConfig cfg_;
  int image_size_;
  int sem_tokens_;
  int det_tokens_;
  bool bypass_attention_ = false;
  bool semantic_only_ = false;
};

}  // namespace dancer
