#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "dancer/aem.hpp"
#include "dancer/config.hpp"
#include "dancer/errors.hpp"
#include "dancer/nn.hpp"
#include "dancer/rng.hpp"
#include "dancer/synth.hpp"
#include "dancer/tensor.hpp"

namespace dancer {

// ---------------------------------------------------------------------------
// Pose conditioning: per-modality conv towers (skeleton / segmentation /
// depth / normal), cross-attention fusion of the skeleton features against
// the combined auxiliary features, and keypoint jitter smoothing with
// skeleton re-rasterization.
// ---------------------------------------------------------------------------

/// Ground-truth pose maps for one frame of a synthetic clip.
inline PoseMaps extract_pose(const ClipSample& sample, std::size_t frame) {
  if (frame >= sample.pose.size())
    throw DataError("extract_pose: frame " + std::to_string(frame) + " out of range (clip has " +
                    std::to_string(sample.pose.size()) + " frames)");
  return sample.pose[frame];
}

/// Pluggable per-frame pose map source.
class PoseExtractor {
 public:
  virtual ~PoseExtractor() = default;
  virtual PoseMaps extract(std::size_t frame) const = 0;
  virtual std::size_t frame_count() const = 0;
};

/// Adapter over an in-memory synthetic clip.
class SamplePoseExtractor final : public PoseExtractor {
 public:
  explicit SamplePoseExtractor(const ClipSample& sample) : sample_(&sample) {}
  PoseMaps extract(std::size_t frame) const override { return extract_pose(*sample_, frame); }
  std::size_t frame_count() const override { return sample_->pose.size(); }

 private:
  const ClipSample* sample_;
};

/// File-based adapter: reads pose/{ske,seg,dep,norm}/NNNN.png under a clip
/// directory (the layout the dataset writer produces). Errors name the
/// missing or malformed modality.
class FilePoseExtractor final : public PoseExtractor {
 public:
  explicit FilePoseExtractor(std::filesystem::path clip_dir) : root_(std::move(clip_dir)) {
    if (!std::filesystem::is_directory(root_ / "pose"))
      throw DataError("pose extractor: no pose/ directory under " + root_.string());
    while (std::filesystem::exists(root_ / "pose" / "ske" / frame_name(static_cast<int>(count_))))
      ++count_;
  }

  std::size_t frame_count() const override { return count_; }

  PoseMaps extract(std::size_t frame) const override {
    const std::string name = frame_name(static_cast<int>(frame));
    PoseMaps m;
    m.ske = load_map("ske", name, 3);
    m.seg = load_map("seg", name, 3);
    m.dep = load_map("dep", name, 1);
    m.norm = load_map("norm", name, 3);
    if (m.seg.shape[0] != m.ske.shape[0] || m.seg.shape[1] != m.ske.shape[1] ||
        m.dep.shape[0] != m.ske.shape[0] || m.dep.shape[1] != m.ske.shape[1] ||
        m.norm.shape[0] != m.ske.shape[0] || m.norm.shape[1] != m.ske.shape[1])
      throw DataError("pose extractor: modality sizes disagree for frame " + name);
    return m;
  }

 private:
  Tensor load_map(const std::string& modality, const std::string& name, int channels) const {
    const auto path = root_ / "pose" / modality / name;
    if (!std::filesystem::exists(path))
      throw DataError("pose extractor: missing modality '" + modality + "': " + path.string());
    Tensor t = read_png(path.string());
    if (t.shape[2] != channels)
      throw DataError("pose extractor: modality '" + modality + "' must have " +
                      std::to_string(channels) + " channel(s), got " +
                      std::to_string(t.shape[2]) + ": " + path.string());
    return t;
  }

  std::filesystem::path root_;
  std::size_t count_ = 0;
};

/// Centered moving average over trajectory rows with replicated edge padding.
/// Window must be odd; window 1 is the identity.
inline std::vector<Keypoints> smooth_keypoints(const std::vector<Keypoints>& traj, int window) {
  if (window < 1 || window % 2 == 0)
    throw DataError("smooth_keypoints: window must be odd and >= 1, got " +
                    std::to_string(window));
  if (traj.empty()) throw DataError("smooth_keypoints: empty trajectory");
  if (window == 1) return traj;
  const int rows = static_cast<int>(traj.size());
  const int half = window / 2;
  std::vector<Keypoints> out(traj.size());
  for (int r = 0; r < rows; ++r) {
    for (int kp = 0; kp < kNumKeypoints; ++kp) {
      for (int c = 0; c < 2; ++c) {
        double acc = 0.0;
        for (int o = -half; o <= half; ++o) {
          int idx = r + o;
          if (idx < 0) idx = 0;
          if (idx >= rows) idx = rows - 1;
          acc += traj[static_cast<std::size_t>(idx)][static_cast<std::size_t>(kp)]
                     [static_cast<std::size_t>(c)];
        }
        out[static_cast<std::size_t>(r)][static_cast<std::size_t>(kp)]
           [static_cast<std::size_t>(c)] = static_cast<float>(acc / window);
      }
    }
  }
  return out;
}

/// Mean L2 norm of the second difference of a keypoint trajectory (jitter
/// score; lower is smoother).
inline double trajectory_jitter(const std::vector<Keypoints>& traj) {
  if (traj.size() < 3) return 0.0;
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 1; r + 1 < traj.size(); ++r) {
    for (int kp = 0; kp < kNumKeypoints; ++kp) {
      double n2 = 0.0;
      for (int c = 0; c < 2; ++c) {
        const double d = traj[r + 1][static_cast<std::size_t>(kp)][static_cast<std::size_t>(c)] -
                         2.0 * traj[r][static_cast<std::size_t>(kp)][static_cast<std::size_t>(c)] +
                         traj[r - 1][static_cast<std::size_t>(kp)][static_cast<std::size_t>(c)];
        n2 += d * d;
      }
      acc += std::sqrt(n2);
      ++count;
    }
  }
  return acc / static_cast<double>(count);
}

/// Per-modality feature grids, each [g, g, token_dim].
struct ModalityFeatures {
  Tensor ske;
  Tensor seg;
  Tensor dep;
  Tensor norm;
};

class PrmModel {
 public:
  PrmModel(ParamStore& ps, const PoseConfig& cfg, int image_size)
      : cfg_(cfg), image_size_(image_size) {
    if (image_size % 8 != 0) throw DataError("prm: image size must be a multiple of 8");
    if (cfg.tower_channels.size() != 3)
      throw DataError("prm: tower_channels needs exactly 3 stages");
    if (cfg.tower_channels.back() != cfg.token_dim)
      throw DataError("prm: tower output width must equal token_dim");
    grid_ = image_size / 8;
    Rng rng(0x9035E);
    auto conv = [&](const std::string& name, int k, int cin, int cout, bool norm) {
      if (!ps.has(name + ".w"))
        ps.create(name + ".w", {k, k, cin, cout}, Init::kKaimingUniform, rng, k * k * cin);
      if (!ps.has(name + ".b")) ps.create(name + ".b", {cout}, Init::kZero, rng);
      if (norm) {
        if (!ps.has(name + ".g")) ps.create(name + ".g", {cout}, Init::kOne, rng);
        if (!ps.has(name + ".be")) ps.create(name + ".be", {cout}, Init::kZero, rng);
      }
    };
    const int t0 = cfg.tower_channels[0], t1 = cfg.tower_channels[1], t2 = cfg.tower_channels[2];
    const std::array<std::pair<std::string, int>, 4> towers = {
        {{"ske", 3}, {"seg", 3}, {"dep", 1}, {"norm", 3}}};
    for (const auto& [name, cin] : towers) {
      conv("prm." + name + ".c1", 3, cin, t0, true);
      conv("prm." + name + ".c2", 3, t0, t1, true);
      conv("prm." + name + ".c3", 3, t1, t2, true);
    }
    conv("prm.h1", 1, 3 * t2, t2, false);
    nnblocks::ensure_linear(ps, "prm.attn.q", t2, t2, rng);
    nnblocks::ensure_linear(ps, "prm.attn.k", t2, t2, rng);
    nnblocks::ensure_linear(ps, "prm.attn.v", t2, t2, rng);
    conv("prm.h2", 1, t2, t2, false);
  }

  int grid() const { return grid_; }
  int token_dim() const { return cfg_.token_dim; }
  int image_size() const { return image_size_; }

  /// Test hook: treat the attention value path as zero so fusion reduces to
  /// the skeleton residual.
  void set_zero_value_projection(bool v) { zero_value_ = v; }
  /// Test hook: skip the final channel-mixing conv.
  void set_identity_h2(bool v) { identity_h2_ = v; }

  /// Ablation: zero the segmentation / depth / normal maps before the towers
  /// so only the skeleton stream is informative (the skeleton-only table
  /// row). The auxiliary towers still run on zeros, keeping shapes identical.
  void set_skeleton_only(bool v) { skeleton_only_ = v; }
  bool skeleton_only() const { return skeleton_only_; }

  /// One conv tower: three stride-2 stages of conv + group norm + silu.
  Tensor encode_tower(ParamStore& ps, const Tensor& map, const std::string& which) const {
    if (map.rank() != 3 || map.shape[0] != image_size_ || map.shape[1] != image_size_)
      throw DimensionError("prm: map must be [" + std::to_string(image_size_) + "," +
                           std::to_string(image_size_) + ",c], got " + shape_str(map.shape));
    Tensor h = map;
    for (int s = 1; s <= 3; ++s) {
      const std::string p = "prm." + which + ".c" + std::to_string(s);
      h = conv2d(h, ps.get(p + ".w"), ps.get(p + ".b"), 2, 1);
      h = group_norm(h, ps.get(p + ".g"), ps.get(p + ".be"),
                     pick_groups(h.shape[2]));
      h = silu(h);
    }
    return h;
  }

  ModalityFeatures encode_modalities(ParamStore& ps, const PoseMaps& maps) const {
    ModalityFeatures f;
    f.ske = encode_tower(ps, maps.ske, "ske");
    f.seg = encode_tower(ps, maps.seg, "seg");
    f.dep = encode_tower(ps, maps.dep, "dep");
    f.norm = encode_tower(ps, maps.norm, "norm");
    return f;
  }

  /// Cross-attention fusion: queries from skeleton features, keys/values from
  /// the channel-reduced concat of the auxiliary features, residual add of
  /// the skeleton grid, then a 1x1 channel mix.
  Tensor fuse(ParamStore& ps, const Tensor& c_ske, const Tensor& c_seg, const Tensor& c_dep,
              const Tensor& c_norm) const {
    const Shape want({grid_, grid_, cfg_.token_dim});
    for (const Tensor* t : {&c_ske, &c_seg, &c_dep, &c_norm})
      if (!(t->shape == want))
        throw DimensionError("prm fuse: expected " + shape_str(want) + ", got " +
                             shape_str(t->shape));
    const Tensor aug_in = concat(std::vector<Tensor>{c_seg, c_dep, c_norm}, 2);
    const Tensor aug = conv2d(aug_in, ps.get("prm.h1.w"), ps.get("prm.h1.b"), 1, 0);
    const int tokens = grid_ * grid_;
    const Tensor ske_flat = reshape(c_ske, {tokens, cfg_.token_dim});
    Tensor fused_flat;
    if (zero_value_) {
      // A zero value projection makes every attention output row exactly 0,
      // so the residual passes the skeleton tokens through unchanged.
      fused_flat = ske_flat;
    } else {
      const Tensor aug_flat = reshape(aug, {tokens, cfg_.token_dim});
      const Tensor q = nnblocks::run_linear(ps, "prm.attn.q", ske_flat);
      const Tensor k = nnblocks::run_linear(ps, "prm.attn.k", aug_flat);
      const Tensor v = nnblocks::run_linear(ps, "prm.attn.v", aug_flat);
      fused_flat = add(ske_flat, cross_attention(q, k, v));
    }
    const Tensor grid = reshape(fused_flat, {grid_, grid_, cfg_.token_dim});
    if (identity_h2_) return grid;
    return conv2d(grid, ps.get("prm.h2.w"), ps.get("prm.h2.b"), 1, 0);
  }

  /// Full per-frame path: towers then fusion.
  Tensor encode_frame(ParamStore& ps, const PoseMaps& maps) const {
    PoseMaps m = maps;
    if (skeleton_only_) {
      m.seg = Tensor::zeros({image_size_, image_size_, 3});
      m.dep = Tensor::zeros({image_size_, image_size_, 1});
      m.norm = Tensor::zeros({image_size_, image_size_, 3});
    }
    const ModalityFeatures f = encode_modalities(ps, m);
    return fuse(ps, f.ske, f.seg, f.dep, f.norm);
  }

  /// Encodes a clip: smooths the keypoint trajectory, re-rasterizes the
  /// skeleton map from the smoothed keypoints (segmentation / depth / normal
  /// maps are taken as recorded), then encodes and fuses each frame.
  std::vector<Tensor> render_sequence(ParamStore& ps, const ClipSample& sample, int window) const {
    if (sample.frames.empty()) throw DataError("render_sequence: empty frame sequence");
    if (sample.pose.size() != sample.frames.size())
      throw DataError("render_sequence: pose bundle count " + std::to_string(sample.pose.size()) +
                      " != frame count " + std::to_string(sample.frames.size()));
    if (sample.traj.size() != sample.frames.size() + 1)
      throw DataError("render_sequence: trajectory must have one lookahead row");
    const std::vector<Keypoints> smoothed = smooth_keypoints(sample.traj, window);
    std::vector<Tensor> out;
    out.reserve(sample.frames.size());
    for (std::size_t i = 0; i < sample.frames.size(); ++i) {
      PoseMaps maps = sample.pose[i];
      maps.ske = render_skeleton_map(smoothed[i], image_size_);
      out.push_back(encode_frame(ps, maps));
    }
    return out;
  }

 private:
  PoseConfig cfg_;
  int image_size_;
  int grid_ = 0;
  bool zero_value_ = false;
  bool identity_h2_ = false;
  bool skeleton_only_ = false;
};

}  // namespace dancer
