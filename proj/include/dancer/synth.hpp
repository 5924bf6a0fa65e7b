#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dancer/errors.hpp"
#include "dancer/image_io.hpp"
#include "dancer/rng.hpp"
#include "dancer/tensor.hpp"

namespace dancer {

// ---------------------------------------------------------------------------
// Articulated 2D dancer: 13 keypoints, capsule body parts, periodic motion.
//
// Keypoint order (x,y pixel coordinates, y down):
//   0 root, 1 neck, 2 head, 3 l_shoulder, 4 l_elbow, 5 l_wrist,
//   6 r_shoulder, 7 r_elbow, 8 r_wrist, 9 l_knee, 10 l_ankle,
//   11 r_knee, 12 r_ankle
// Hips are derived anchors (offset from root along the pelvis line), so the
// full figure is reconstructible from the 13 keypoints alone.
// ---------------------------------------------------------------------------

constexpr int kNumKeypoints = 13;
constexpr int kNumAngleDofs = 10;  // spine, head, 2x(shoulder, elbow), 2x(hip, knee)
constexpr int kNumBodyParts = 10;
constexpr int kNumBones = 12;
constexpr double kMotionPeriod = 1.0;
constexpr double kFrameDt = kMotionPeriod / 16.0;  // time step between frames

using Vec2 = std::array<float, 2>;
using Keypoints = std::array<Vec2, kNumKeypoints>;
using Rgb = std::array<float, 3>;

struct DancerSpec {
  std::uint64_t seed = 0;
  float scale = 1.0f;
  // Bone lengths and radii in pixels (scale already applied).
  float spine, head_len, head_r;
  float clav, uarm, farm, arm_r, farm_r;
  float hip_w, hip_drop, thigh, shin, leg_r, shin_r;
  float torso_r;
  Rgb part_color[kNumBodyParts];
  Rgb bg_color;
  bool near_side_left = true;
};

struct JointAngles {
  std::array<float, kNumAngleDofs> a{};  // radians, relative to rest pose
  float tx = 0.0f, ty = 0.0f;           // root translation in pixels
};

enum AngleDof {
  kSpine = 0,
  kHead,
  kLShoulder,
  kLElbow,
  kRShoulder,
  kRElbow,
  kLHip,
  kLKnee,
  kRHip,
  kRKnee,
};

namespace fig {
// Rest-pose geometry and articulation limits (radians). Chosen so the figure
// always fits a 64 px canvas with margin and sweeps a healthy share of it.
constexpr float kArmRest = 0.50f;       // upper arm tilt outward from vertical
constexpr float kElbowRest = 0.45f;     // elbow bend toward the body
constexpr float kLegRest = 0.10f;       // thigh tilt outward
constexpr float kClavTilt = 0.18f;      // clavicle droop below horizontal
constexpr float kLimit[kNumAngleDofs] = {0.15f, 0.30f, 0.50f, 0.70f, 0.50f,
                                         0.70f, 0.40f, 0.55f, 0.40f, 0.55f};
constexpr float kAmpLo = 0.50f;         // amplitude as fraction of the limit
constexpr float kAmpHi = 0.95f;
constexpr float kSwayAmpX = 2.0f;       // root translation amplitude bounds
constexpr float kSwayAmpY = 1.5f;
// Max |dtheta/dt|: amp <= limit, two harmonics f=1 and f<=3 weighted 0.7/0.3.
constexpr double kMaxAngularVelocity = 0.70 * 2.0 * 3.14159265358979 * 1.6 + 1e-6;
constexpr float kSkeletonRadius = 0.9f;
constexpr float kHipFrac = 0.243f;      // derived hip offset as fraction of spine
constexpr float kHipDropFrac = 0.107f;
}  // namespace fig

inline Rgb hsv_to_rgb(float h, float s, float v) {
  h = h - std::floor(h);
  const float c = v * s;
  const float hp = h * 6.0f;
  const float x = c * (1.0f - std::abs(std::fmod(hp, 2.0f) - 1.0f));
  float r = 0, g = 0, b = 0;
  if (hp < 1) r = c, g = x;
  else if (hp < 2) r = x, g = c;
  else if (hp < 3) g = c, b = x;
  else if (hp < 4) g = x, b = c;
  else if (hp < 5) r = x, b = c;
  else r = c, b = x;
  const float m = v - c;
  return {r + m, g + m, b + m};
}

inline DancerSpec make_figure(std::uint64_t seed) {
  Rng rng(mix_seed(seed, "figure"));
  DancerSpec s;
  s.seed = seed;
  const float g = static_cast<float>(rng.uniform(0.95, 1.02));  // global scale
  auto b = [&](double base) { return static_cast<float>(base * rng.uniform(0.92, 1.08)) * g; };
  s.scale = g;
  s.spine = b(14.0);
  s.head_len = b(8.0);   // neck + head offset from the neck keypoint
  s.head_r = b(4.2);
  s.clav = b(7.0);
  s.uarm = b(9.0);
  s.farm = b(8.5);
  s.arm_r = b(2.0);
  s.farm_r = b(1.8);
  s.hip_w = b(3.4);
  s.hip_drop = b(1.5);
  s.thigh = b(10.5);
  s.shin = b(10.0);
  s.leg_r = b(2.6);
  s.shin_r = b(2.2);
  s.torso_r = b(4.6);

  const float hue = static_cast<float>(rng.uniform());
  for (int i = 0; i < kNumBodyParts; ++i) {
    const float h = hue + 0.09f * static_cast<float>(i) +
                    static_cast<float>(rng.uniform(-0.02, 0.02));
    const float sat = static_cast<float>(rng.uniform(0.55, 0.95));
    const float val = static_cast<float>(rng.uniform(0.55, 0.95));
    s.part_color[i] = hsv_to_rgb(h, sat, val);
  }
  s.bg_color = hsv_to_rgb(hue + 0.5f, static_cast<float>(rng.uniform(0.05, 0.25)),
                          static_cast<float>(rng.uniform(0.06, 0.20)));
  s.near_side_left = rng.uniform() < 0.5;
  return s;
}

// ---------------------------------------------------------------------------
// Motion: bandlimited periodic angles (two integer harmonics -> period 1.0).
// ---------------------------------------------------------------------------

struct MotionParams {
  std::array<float, kNumAngleDofs> amp{}, phase1{}, phase2{};
  std::array<int, kNumAngleDofs> f2{};
  float sway_ax = 0, sway_ay = 0, sway_px = 0, sway_py = 0;
};

inline MotionParams make_motion(std::uint64_t motion_seed) {
  Rng rng(motion_seed);
  MotionParams m;
  for (int i = 0; i < kNumAngleDofs; ++i) {
    m.amp[i] = fig::kLimit[i] * static_cast<float>(rng.uniform(fig::kAmpLo, fig::kAmpHi));
    m.phase1[i] = static_cast<float>(rng.uniform());
    m.phase2[i] = static_cast<float>(rng.uniform());
    m.f2[i] = 2 + static_cast<int>(rng.uniform_index(2));  // 2 or 3
  }
  m.sway_ax = static_cast<float>(rng.uniform(0.8, fig::kSwayAmpX));
  m.sway_ay = static_cast<float>(rng.uniform(0.5, fig::kSwayAmpY));
  m.sway_px = static_cast<float>(rng.uniform());
  m.sway_py = static_cast<float>(rng.uniform());
  return m;
}

/// Maximum vertical reach above the root over all poses (for placement).
inline float up_reach(const DancerSpec& s) { return s.spine + s.head_len + s.head_r + 1.0f; }
inline float down_reach(const DancerSpec& s) {
  return s.hip_drop + s.thigh + s.shin + s.shin_r + 1.0f;
}

/// Smooth periodic pose: C-inf in t with period kMotionPeriod, exactly
/// (time is wrapped before any trigonometry, so t and t+1 coincide bitwise).
inline JointAngles pose_at(const DancerSpec& spec, double time, std::uint64_t motion_seed,
                           int canvas = 64) {
  if (time < 0) throw DataError("pose_at: negative time");
  const MotionParams m = make_motion(motion_seed);
  const double tau = time - std::floor(time / kMotionPeriod) * kMotionPeriod;
  JointAngles ja;
  constexpr double two_pi = 2.0 * 3.14159265358979323846;
  for (int i = 0; i < kNumAngleDofs; ++i) {
    const double s1 = std::sin(two_pi * (tau + static_cast<double>(m.phase1[i])));
    const double s2 = std::sin(two_pi * (m.f2[i] * tau + static_cast<double>(m.phase2[i])));
    ja.a[static_cast<std::size_t>(i)] = m.amp[static_cast<std::size_t>(i)] *
                                        static_cast<float>(0.7 * s1 + 0.3 * s2);
  }
  const float cx = static_cast<float>(canvas) * 0.5f;
  // Root height: keep >= 2 px above the head at maximum rise and leave the
  // remaining slack below the feet.
  const float cy = 2.0f + up_reach(spec) + m.sway_ay;
  ja.tx = cx + m.sway_ax * static_cast<float>(std::sin(two_pi * (tau + m.sway_px)));
  ja.ty = cy + m.sway_ay * static_cast<float>(std::sin(two_pi * (tau + m.sway_py)));
  return ja;
}

// ---------------------------------------------------------------------------
// Forward kinematics
// ---------------------------------------------------------------------------

inline Vec2 polar(Vec2 from, float angle, float len) {
  return {from[0] + len * std::cos(angle), from[1] + len * std::sin(angle)};
}

inline Keypoints forward_kinematics(const DancerSpec& s, const JointAngles& ja) {
  constexpr float pi = 3.14159265358979f;
  Keypoints k{};
  const float spine_abs = -pi / 2 + ja.a[kSpine];
  k[0] = {ja.tx, ja.ty};
  k[1] = polar(k[0], spine_abs, s.spine);
  k[2] = polar(k[1], spine_abs + ja.a[kHead], s.head_len);

  for (int side = 0; side < 2; ++side) {
    const float sgn = side == 0 ? -1.0f : 1.0f;  // left = -x
    const int sho = side == 0 ? 3 : 6;
    const int elb = sho + 1, wri = sho + 2;
    const int knee = side == 0 ? 9 : 11;
    const int ank = knee + 1;
    const AngleDof a_sho = side == 0 ? kLShoulder : kRShoulder;
    const AngleDof a_elb = side == 0 ? kLElbow : kRElbow;
    const AngleDof a_hip = side == 0 ? kLHip : kRHip;
    const AngleDof a_knee = side == 0 ? kLKnee : kRKnee;

    const float clav_abs = spine_abs + sgn * (pi / 2 + fig::kClavTilt);
    k[static_cast<std::size_t>(sho)] = polar(k[1], clav_abs, s.clav);
    const float uarm_abs = spine_abs + pi + sgn * (fig::kArmRest + ja.a[a_sho]);
    k[static_cast<std::size_t>(elb)] = polar(k[static_cast<std::size_t>(sho)], uarm_abs, s.uarm);
    const float farm_abs = uarm_abs - sgn * (fig::kElbowRest + ja.a[a_elb]);
    k[static_cast<std::size_t>(wri)] = polar(k[static_cast<std::size_t>(elb)], farm_abs, s.farm);

    const Vec2 hip = {k[0][0] + sgn * s.hip_w * std::cos(spine_abs + pi / 2) +
                          s.hip_drop * std::cos(spine_abs + pi),
                      k[0][1] + sgn * s.hip_w * std::sin(spine_abs + pi / 2) +
                          s.hip_drop * std::sin(spine_abs + pi)};
    const float thigh_abs = spine_abs + pi + sgn * (fig::kLegRest + ja.a[a_hip]);
    k[static_cast<std::size_t>(knee)] = polar(hip, thigh_abs, s.thigh);
    const float shin_abs = thigh_abs - sgn * std::max(0.0f, fig::kLegRest * 0.5f + ja.a[a_knee]);
    k[static_cast<std::size_t>(ank)] = polar(k[static_cast<std::size_t>(knee)], shin_abs, s.shin);
  }
  return k;
}

/// Hip anchors derived from keypoints alone (used by rendering and by
/// skeleton re-rasterization for externally supplied keypoints).
inline void derived_hips(const Keypoints& k, float hip_w, float hip_drop, Vec2& hip_l,
                         Vec2& hip_r) {
  float dx = k[1][0] - k[0][0], dy = k[1][1] - k[0][1];
  const float len = std::sqrt(dx * dx + dy * dy);
  if (len < 1e-6f) {
    dx = 0;
    dy = -1;
  } else {
    dx /= len;
    dy /= len;
  }
  const float px = -dy, py = dx;  // perpendicular (pelvis line)
  hip_l = {k[0][0] - px * hip_w - dx * hip_drop, k[0][1] - py * hip_w - dy * hip_drop};
  hip_r = {k[0][0] + px * hip_w - dx * hip_drop, k[0][1] + py * hip_w - dy * hip_drop};
}

// ---------------------------------------------------------------------------
// Capsule rasterizer
// ---------------------------------------------------------------------------

struct Capsule {
  Vec2 p0, p1;
  float r;
};

struct BodyPart {
  int id;                         // index into palettes
  std::vector<Capsule> capsules;  // union
  float depth;                    // (rank+1)/kNumBodyParts, 1 = nearest
};

/// Fixed body-part segmentation palette (figure independent).
inline Rgb seg_color(int part) {
  static const Rgb palette[kNumBodyParts] = {
      {0.9f, 0.1f, 0.1f}, {0.1f, 0.9f, 0.1f}, {0.1f, 0.2f, 0.9f}, {0.9f, 0.9f, 0.1f},
      {0.9f, 0.1f, 0.9f}, {0.1f, 0.9f, 0.9f}, {0.9f, 0.5f, 0.1f}, {0.5f, 0.1f, 0.9f},
      {0.3f, 0.7f, 0.2f}, {0.8f, 0.3f, 0.5f}};
  return palette[part];
}

/// Fixed skeleton bone palette.
inline Rgb bone_color(int bone) {
  static const Rgb palette[kNumBones] = {
      {1.0f, 0.2f, 0.2f}, {0.2f, 1.0f, 0.2f}, {0.2f, 0.4f, 1.0f}, {1.0f, 1.0f, 0.2f},
      {1.0f, 0.2f, 1.0f}, {0.2f, 1.0f, 1.0f}, {1.0f, 0.6f, 0.2f}, {0.6f, 0.2f, 1.0f},
      {0.4f, 0.8f, 0.3f}, {0.9f, 0.4f, 0.6f}, {0.5f, 0.9f, 0.9f}, {0.9f, 0.8f, 0.5f}};
  return palette[bone];
}

namespace detail {

inline float dist_point_segment(float x, float y, const Capsule& c, float& ux, float& uy) {
  const float vx = c.p1[0] - c.p0[0], vy = c.p1[1] - c.p0[1];
  const float wx = x - c.p0[0], wy = y - c.p0[1];
  const float vv = vx * vx + vy * vy;
  float t = vv > 1e-12f ? (wx * vx + wy * vy) / vv : 0.0f;
  t = std::clamp(t, 0.0f, 1.0f);
  ux = x - (c.p0[0] + t * vx);
  uy = y - (c.p0[1] + t * vy);
  return std::sqrt(ux * ux + uy * uy);
}

// 4x4 supersampled coverage of a capsule union at pixel center (px, py).
inline float coverage(float px, float py, const std::vector<Capsule>& caps) {
  int inside = 0;
  for (int sy = 0; sy < 4; ++sy)
    for (int sx = 0; sx < 4; ++sx) {
      const float x = px - 0.5f + (static_cast<float>(sx) + 0.5f) / 4.0f;
      const float y = py - 0.5f + (static_cast<float>(sy) + 0.5f) / 4.0f;
      for (const auto& c : caps) {
        float ux, uy;
        if (dist_point_segment(x, y, c, ux, uy) <= c.r) {
          ++inside;
          break;
        }
      }
    }
  return static_cast<float>(inside) / 16.0f;
}

}  // namespace detail

/// Body parts for a figure at the given keypoints, ordered far-to-near
/// (painter's order). Part ids index seg_color / DancerSpec::part_color.
inline std::vector<BodyPart> body_parts(const DancerSpec& s, const Keypoints& k) {
  Vec2 hip_l, hip_r;
  derived_hips(k, s.hip_w, s.hip_drop, hip_l, hip_r);
  // Part ids: 0 torso (incl. clavicles), 1 head, 2 l_uarm, 3 l_farm,
  // 4 r_uarm, 5 r_farm, 6 l_thigh, 7 l_shin, 8 r_thigh, 9 r_shin.
  auto part = [&](int id, std::vector<Capsule> caps) {
    BodyPart p;
    p.id = id;
    p.capsules = std::move(caps);
    p.depth = 0;
    return p;
  };
  const float neck_r = s.torso_r * 0.55f;
  std::vector<BodyPart> parts;
  parts.push_back(part(0, {{k[0], k[1], s.torso_r},
                           {k[1], k[3], neck_r},
                           {k[1], k[6], neck_r}}));
  parts.push_back(part(1, {{k[2], k[2], s.head_r}}));
  parts.push_back(part(2, {{k[3], k[4], s.arm_r}}));
  parts.push_back(part(3, {{k[4], k[5], s.farm_r}}));
  parts.push_back(part(4, {{k[6], k[7], s.arm_r}}));
  parts.push_back(part(5, {{k[7], k[8], s.farm_r}}));
  parts.push_back(part(6, {{hip_l, k[9], s.leg_r}}));
  parts.push_back(part(7, {{k[9], k[10], s.shin_r}}));
  parts.push_back(part(8, {{hip_r, k[11], s.leg_r}}));
  parts.push_back(part(9, {{k[11], k[12], s.shin_r}}));

  // Painter order far -> near: far arm, far leg, torso, head, near leg,
  // near arm. Depth value (rank+1)/count with 1 nearest.
  std::vector<int> order;
  const bool left_near = s.near_side_left;
  const int far_uarm = left_near ? 4 : 2, far_farm = left_near ? 5 : 3;
  const int far_thigh = left_near ? 8 : 6, far_shin = left_near ? 9 : 7;
  const int near_uarm = left_near ? 2 : 4, near_farm = left_near ? 3 : 5;
  const int near_thigh = left_near ? 6 : 8, near_shin = left_near ? 7 : 9;
  order = {far_farm, far_uarm, far_shin, far_thigh, 0, 1,
           near_thigh, near_shin, near_uarm, near_farm};

  std::vector<BodyPart> ordered;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    BodyPart p = parts[static_cast<std::size_t>(order[rank])];
    p.depth = static_cast<float>(rank + 1) / static_cast<float>(kNumBodyParts);
    ordered.push_back(std::move(p));
  }
  return ordered;
}

struct PoseMaps {
  Tensor ske;   // [s,s,3]
  Tensor seg;   // [s,s,3]
  Tensor dep;   // [s,s,1]
  Tensor norm;  // [s,s,3]
};

struct RenderResult {
  Tensor frame;  // [s,s,3]
  PoseMaps maps;
  Keypoints keypoints;
};

/// Skeleton map alone, from keypoints (works for external trajectories too:
/// hips are derived). Per-bone fixed colors, thin anti-thresholded lines.
inline Tensor render_skeleton_map(const Keypoints& k, int size) {
  Vec2 hip_l, hip_r;
  float dx = k[1][0] - k[0][0], dy = k[1][1] - k[0][1];
  const float spine_len = std::sqrt(dx * dx + dy * dy);
  derived_hips(k, fig::kHipFrac * spine_len, fig::kHipDropFrac * spine_len, hip_l, hip_r);
  const std::array<std::pair<Vec2, Vec2>, kNumBones> bones = {{
      {k[0], k[1]},    // spine
      {k[1], k[2]},    // neck-head
      {k[1], k[3]},    // l clavicle
      {k[3], k[4]},    // l upper arm
      {k[4], k[5]},    // l forearm
      {k[1], k[6]},    // r clavicle
      {k[6], k[7]},    // r upper arm
      {k[7], k[8]},    // r forearm
      {hip_l, k[9]},   // l thigh
      {k[9], k[10]},   // l shin
      {hip_r, k[11]},  // r thigh
      {k[11], k[12]},  // r shin
  }};
  auto img = Tensor::zeros({size, size, 3});
  for (int b = 0; b < kNumBones; ++b) {
    const Capsule c{bones[static_cast<std::size_t>(b)].first,
                    bones[static_cast<std::size_t>(b)].second, fig::kSkeletonRadius};
    const Rgb col = bone_color(b);
    const int x0 = std::max(0, static_cast<int>(std::floor(
                                   std::min(c.p0[0], c.p1[0]) - c.r - 1)));
    const int x1 = std::min(size - 1, static_cast<int>(std::ceil(
                                          std::max(c.p0[0], c.p1[0]) + c.r + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(
                                   std::min(c.p0[1], c.p1[1]) - c.r - 1)));
    const int y1 = std::min(size - 1, static_cast<int>(std::ceil(
                                          std::max(c.p0[1], c.p1[1]) + c.r + 1)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const float cov = detail::coverage(static_cast<float>(x) + 0.5f,
                                           static_cast<float>(y) + 0.5f, {c});
        if (cov >= 0.5f) {
          float* px = img.ptr() + (static_cast<std::size_t>(y) * size + x) * 3;
          px[0] = col[0];
          px[1] = col[1];
          px[2] = col[2];
        }
      }
  }
  return img;
}

/// Rasterizes frame + all four pose modalities from explicit keypoints.
/// Off-canvas geometry is clipped, not an error (jittered poses may touch
/// the border).
inline RenderResult render_from_keypoints(const DancerSpec& spec, const Keypoints& k, int size) {
  RenderResult out;
  out.keypoints = k;
  out.frame = Tensor::zeros({size, size, 3});
  out.maps.seg = Tensor::zeros({size, size, 3});
  out.maps.dep = Tensor::zeros({size, size, 1});
  out.maps.norm = Tensor::zeros({size, size, 3});
  for (int i = 0; i < size * size; ++i) {
    float* px = out.frame.ptr() + static_cast<std::size_t>(i) * 3;
    px[0] = spec.bg_color[0];
    px[1] = spec.bg_color[1];
    px[2] = spec.bg_color[2];
  }

  const auto parts = body_parts(spec, k);
  for (const auto& part : parts) {
    // Bounding box of the capsule union.
    float bx0 = 1e9f, by0 = 1e9f, bx1 = -1e9f, by1 = -1e9f;
    for (const auto& c : part.capsules) {
      bx0 = std::min(bx0, std::min(c.p0[0], c.p1[0]) - c.r);
      bx1 = std::max(bx1, std::max(c.p0[0], c.p1[0]) + c.r);
      by0 = std::min(by0, std::min(c.p0[1], c.p1[1]) - c.r);
      by1 = std::max(by1, std::max(c.p0[1], c.p1[1]) + c.r);
    }
    const int x0 = std::max(0, static_cast<int>(std::floor(bx0 - 1)));
    const int x1 = std::min(size - 1, static_cast<int>(std::ceil(bx1 + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(by0 - 1)));
    const int y1 = std::min(size - 1, static_cast<int>(std::ceil(by1 + 1)));
    const Rgb fc = spec.part_color[part.id];
    const Rgb sc = seg_color(part.id);

    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const float cx = static_cast<float>(x) + 0.5f;
        const float cy = static_cast<float>(y) + 0.5f;
        const float cov = detail::coverage(cx, cy, part.capsules);
        if (cov <= 0.0f) continue;
        float* fp = out.frame.ptr() + (static_cast<std::size_t>(y) * size + x) * 3;
        for (int c = 0; c < 3; ++c) fp[c] = fp[c] * (1.0f - cov) + fc[c] * cov;
        if (cov < 0.5f) continue;  // pose maps use hard membership
        float* sp = out.maps.seg.ptr() + (static_cast<std::size_t>(y) * size + x) * 3;
        sp[0] = sc[0];
        sp[1] = sc[1];
        sp[2] = sc[2];
        out.maps.dep.at(static_cast<std::size_t>(y) * size + x) = part.depth;
        // Cylinder cross-section normal from the nearest covering capsule.
        float best = 1e9f, bux = 0, buy = 0, br = 1;
        for (const auto& c : part.capsules) {
          float ux, uy;
          const float d = detail::dist_point_segment(cx, cy, c, ux, uy);
          if (d - c.r < best - br) {  // compare signed penetration
            if (d <= c.r) {
              best = d;
              br = c.r;
              bux = ux;
              buy = uy;
            }
          }
        }
        float nx = 0, ny = 0, nz = 1;
        if (best < 1e8f && br > 1e-6f) {
          const float d = best;
          const float sfrac = std::min(1.0f, d / br);
          if (d > 1e-6f) {
            nx = (bux / d) * sfrac;
            ny = (buy / d) * sfrac;
          }
          nz = std::sqrt(std::max(0.0f, 1.0f - nx * nx - ny * ny));
        }
        float* np = out.maps.norm.ptr() + (static_cast<std::size_t>(y) * size + x) * 3;
        np[0] = (nx + 1.0f) * 0.5f;
        np[1] = (ny + 1.0f) * 0.5f;
        np[2] = (nz + 1.0f) * 0.5f;
      }
  }
  out.maps.ske = render_skeleton_map(k, size);
  return out;
}

/// Radius of the thickest capsule touching each keypoint (canvas-fit checks).
inline std::array<float, kNumKeypoints> keypoint_radii(const DancerSpec& s) {
  const float neck_r = s.torso_r * 0.55f;
  const float sho_r = std::max(neck_r, s.arm_r);
  return {s.torso_r, s.torso_r, s.head_r, sho_r,    s.arm_r, s.farm_r, sho_r,
          s.arm_r,   s.farm_r,  s.leg_r,  s.shin_r, s.leg_r, s.shin_r};
}

/// Smallest distance from any capsule extent to the canvas border (negative
/// when the figure pokes outside). Includes the derived hip anchors.
inline float fit_margin(const DancerSpec& spec, const Keypoints& k, int size) {
  const auto radii = keypoint_radii(spec);
  float margin = 1e9f;
  auto update = [&](const Vec2& p, float r) {
    margin = std::min(margin, std::min(std::min(p[0] - r, static_cast<float>(size) - p[0] - r),
                                       std::min(p[1] - r, static_cast<float>(size) - p[1] - r)));
  };
  for (int i = 0; i < kNumKeypoints; ++i)
    update(k[static_cast<std::size_t>(i)], radii[static_cast<std::size_t>(i)]);
  Vec2 hl, hr;
  derived_hips(k, spec.hip_w, spec.hip_drop, hl, hr);
  update(hl, spec.leg_r);
  update(hr, spec.leg_r);
  return margin;
}

/// Renders a posed figure; errors if any part would leave the canvas.
inline RenderResult render_frame(const DancerSpec& spec, const JointAngles& ja, int size) {
  const Keypoints k = forward_kinematics(spec, ja);
  if (fit_margin(spec, k, size) < 0.0f)
    throw DataError("render_frame: figure leaves the canvas");
  return render_from_keypoints(spec, k, size);
}

// ---------------------------------------------------------------------------
// Clips
// ---------------------------------------------------------------------------

struct ClipSample {
  Tensor ref;                      // [s,s,3]
  Keypoints ref_keypoints{};
  std::vector<Tensor> frames;      // N of [s,s,3]
  std::vector<PoseMaps> pose;      // N bundles
  std::vector<Keypoints> traj;     // N+1 rows (last = lookahead after frame N-1)
  std::uint64_t seed = 0;
  int n = 0;
  int size = 0;
  float jitter = 0.0f;
};

/// Deterministic clip synthesis. Frames are rendered at the (possibly
/// jittered) keypoints; the recorded trajectory is those same keypoints, so
/// smoothing has a measurable target. Jitter uses an RNG stream independent
/// of the motion stream: regenerating with jitter 0 yields the clean
/// trajectory of the same clip.
inline ClipSample make_clip(std::uint64_t seed, int n, int size, float jitter) {
  if (n < 1) throw DataError("make_clip: need at least one frame");
  ClipSample clip;
  clip.seed = seed;
  clip.n = n;
  clip.size = size;
  clip.jitter = jitter;

  const DancerSpec spec = make_figure(seed);
  const std::uint64_t motion_seed = mix_seed(seed, "motion");
  const std::uint64_t ref_seed = mix_seed(seed, "refpose");
  Rng jrng(mix_seed(seed, "jitter"));

  const float pad = 3.0f;
  for (int i = 0; i <= n; ++i) {
    const JointAngles ja = pose_at(spec, i * kFrameDt, motion_seed, size);
    Keypoints k = forward_kinematics(spec, ja);
    if (jitter > 0.0f) {
      for (auto& p : k) {
        p[0] = std::clamp(p[0] + jitter * static_cast<float>(jrng.normal()), pad,
                          static_cast<float>(size) - pad);
        p[1] = std::clamp(p[1] + jitter * static_cast<float>(jrng.normal()), pad,
                          static_cast<float>(size) - pad);
      }
    }
    clip.traj.push_back(k);
    if (i < n) {
      auto r = render_from_keypoints(spec, k, size);
      clip.frames.push_back(std::move(r.frame));
      clip.pose.push_back(std::move(r.maps));
    }
  }
  // Reference: same figure, independently sampled pose (never jittered).
  const JointAngles ref_ja = pose_at(spec, 0.37, ref_seed, size);
  auto ref = render_frame(spec, ref_ja, size);
  clip.ref = std::move(ref.frame);
  clip.ref_keypoints = ref.keypoints;
  return clip;
}

// ---------------------------------------------------------------------------
// Disk layout
// ---------------------------------------------------------------------------

namespace fsys = std::filesystem;

inline std::string frame_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d.png", i);
  return buf;
}

inline void write_clip(const std::string& dir, const ClipSample& clip) {
  fsys::create_directories(fsys::path(dir) / "frames");
  for (const char* m : {"ske", "seg", "dep", "norm"})
    fsys::create_directories(fsys::path(dir) / "pose" / m);
  write_png((fsys::path(dir) / "ref.png").string(), clip.ref);
  for (int i = 0; i < clip.n; ++i) {
    const auto name = frame_name(i);
    write_png((fsys::path(dir) / "frames" / name).string(), clip.frames[static_cast<std::size_t>(i)]);
    const auto& pm = clip.pose[static_cast<std::size_t>(i)];
    write_png((fsys::path(dir) / "pose" / "ske" / name).string(), pm.ske);
    write_png((fsys::path(dir) / "pose" / "seg" / name).string(), pm.seg);
    write_png((fsys::path(dir) / "pose" / "dep" / name).string(), pm.dep);
    write_png((fsys::path(dir) / "pose" / "norm" / name).string(), pm.norm);
  }
  nlohmann::json meta;
  meta["seed"] = clip.seed;
  meta["n"] = clip.n;
  meta["size"] = clip.size;
  meta["jitter"] = clip.jitter;
  nlohmann::json traj = nlohmann::json::array();
  for (const auto& k : clip.traj) {
    nlohmann::json row = nlohmann::json::array();
    for (const auto& p : k) row.push_back({p[0], p[1]});
    traj.push_back(row);
  }
  meta["trajectory"] = traj;
  nlohmann::json refk = nlohmann::json::array();
  for (const auto& p : clip.ref_keypoints) refk.push_back({p[0], p[1]});
  meta["ref_keypoints"] = refk;
  std::ofstream f(fsys::path(dir) / "meta.json");
  f << meta.dump(1) << "\n";
}

inline ClipSample read_clip(const std::string& dir) {
  const auto meta_path = fsys::path(dir) / "meta.json";
  std::ifstream f(meta_path);
  if (!f) throw DataError("read_clip: missing " + meta_path.string());
  nlohmann::json meta;
  try {
    f >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("read_clip: bad meta.json in " + dir + ": " + e.what());
  }
  ClipSample clip;
  try {
    clip.seed = meta.at("seed").get<std::uint64_t>();
    clip.n = meta.at("n").get<int>();
    clip.size = meta.at("size").get<int>();
    clip.jitter = meta.at("jitter").get<float>();
    for (const auto& row : meta.at("trajectory")) {
      Keypoints k{};
      if (row.size() != kNumKeypoints)
        throw DataError("read_clip: trajectory row has " + std::to_string(row.size()) +
                        " keypoints in " + dir);
      for (int j = 0; j < kNumKeypoints; ++j) {
        k[static_cast<std::size_t>(j)][0] = row[static_cast<std::size_t>(j)][0].get<float>();
        k[static_cast<std::size_t>(j)][1] = row[static_cast<std::size_t>(j)][1].get<float>();
      }
      clip.traj.push_back(k);
    }
    if (meta.contains("ref_keypoints")) {
      const auto& rk = meta["ref_keypoints"];
      for (int j = 0; j < kNumKeypoints && j < static_cast<int>(rk.size()); ++j) {
        clip.ref_keypoints[static_cast<std::size_t>(j)][0] = rk[static_cast<std::size_t>(j)][0].get<float>();
        clip.ref_keypoints[static_cast<std::size_t>(j)][1] = rk[static_cast<std::size_t>(j)][1].get<float>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("read_clip: bad meta.json fields in " + dir + ": " + e.what());
  }
  clip.ref = read_png((fsys::path(dir) / "ref.png").string());
  for (int i = 0; i < clip.n; ++i) {
    const auto name = frame_name(i);
    clip.frames.push_back(read_png((fsys::path(dir) / "frames" / name).string()));
    PoseMaps pm;
    pm.ske = read_png((fsys::path(dir) / "pose" / "ske" / name).string());
    pm.seg = read_png((fsys::path(dir) / "pose" / "seg" / name).string());
    pm.dep = read_png((fsys::path(dir) / "pose" / "dep" / name).string());
    pm.norm = read_png((fsys::path(dir) / "pose" / "norm" / name).string());
    if (pm.dep.dim(2) != 1)
      throw DataError("read_clip: depth map must be grayscale in " + dir);
    clip.pose.push_back(std::move(pm));
  }
  return clip;
}

struct DatasetManifest {
  std::vector<std::uint64_t> seeds;
  int n = 8;
  int size = 64;
  float jitter = 0.0f;
};

inline std::string clip_id(std::size_t index) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "clip_%04zu", index);
  return buf;
}

/// Writes clips for every seed in the manifest plus manifest.json at root.
inline void write_dataset(const std::string& root, const DatasetManifest& m) {
  fsys::create_directories(root);
  for (std::size_t i = 0; i < m.seeds.size(); ++i) {
    const auto clip = make_clip(m.seeds[i], m.n, m.size, m.jitter);
    write_clip((fsys::path(root) / clip_id(i)).string(), clip);
  }
  nlohmann::json j;
  j["seeds"] = m.seeds;
  j["n"] = m.n;
  j["size"] = m.size;
  j["jitter"] = m.jitter;
  std::ofstream f(fsys::path(root) / "manifest.json");
  if (!f) throw DataError("write_dataset: cannot write manifest under " + root);
  f << j.dump(1) << "\n";
}

inline DatasetManifest read_manifest(const std::string& root) {
  std::ifstream f(fsys::path(root) / "manifest.json");
  if (!f) throw DataError("read_manifest: missing manifest.json under " + root);
  nlohmann::json j;
  try {
    f >> j;
    DatasetManifest m;
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    m.n = j.at("n").get<int>();
    m.size = j.at("size").get<int>();
    m.jitter = j.at("jitter").get<float>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("read_manifest: bad manifest under " + root + ": " + e.what());
  }
}

/// Clip directories under a dataset root, sorted by name.
inline std::vector<std::string> list_clip_dirs(const std::string& root) {
  std::vector<std::string> dirs;
  if (!fsys::exists(root)) throw DataError("dataset root does not exist: " + root);
  for (const auto& e : fsys::directory_iterator(root))
    if (e.is_directory() && fsys::exists(e.path() / "meta.json")) dirs.push_back(e.path().string());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

}  // namespace dancer
