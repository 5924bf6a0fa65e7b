#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <vector>

#include "dancer/grad_check.hpp"
#include "dancer/image_io.hpp"
#include "dancer/prm.hpp"
#include "dancer/synth.hpp"
#include "test_util.hpp"

using namespace dancer;
namespace fsys = std::filesystem;

namespace {

bool tensors_equal(const Tensor& a, const Tensor& b) {
  if (!(a.shape == b.shape)) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a.at(i) != b.at(i)) return false;
  return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape == b.shape);
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.at(i)) - static_cast<double>(b.at(i))));
  return m;
}

double traj_rmse(const std::vector<Keypoints>& a, const std::vector<Keypoints>& b) {
  REQUIRE(a.size() == b.size());
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < a.size(); ++r)
    for (int kp = 0; kp < kNumKeypoints; ++kp)
      for (int c = 0; c < 2; ++c) {
        const double d = a[r][static_cast<std::size_t>(kp)][static_cast<std::size_t>(c)] -
                         b[r][static_cast<std::size_t>(kp)][static_cast<std::size_t>(c)];
        acc += d * d;
        ++n;
      }
  return std::sqrt(acc / static_cast<double>(n));
}

}  // namespace

TEST_CASE("pose maps pass through from a synthetic clip bitwise") {
  const ClipSample clip = make_clip(21, 4, 64, 0.0f);
  for (std::size_t i = 0; i < 4; ++i) {
    const PoseMaps m = extract_pose(clip, i);
    CHECK(tensors_equal(m.ske, clip.pose[i].ske));
    CHECK(tensors_equal(m.seg, clip.pose[i].seg));
    CHECK(tensors_equal(m.dep, clip.pose[i].dep));
    CHECK(tensors_equal(m.norm, clip.pose[i].norm));
  }
  REQUIRE_THROWS_AS(extract_pose(clip, 4), DataError);

  const SamplePoseExtractor ex(clip);
  REQUIRE(ex.frame_count() == 4);
  CHECK(tensors_equal(ex.extract(2).dep, clip.pose[2].dep));
}

TEST_CASE("file-based pose source reads the dataset layout and names broken modalities") {
  testutil::TempDir tmp("prm");
  const ClipSample clip = make_clip(8, 3, 64, 0.0f);
  write_clip(tmp.path.string(), clip);

  const FilePoseExtractor ex(tmp.path);
  REQUIRE(ex.frame_count() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const PoseMaps m = ex.extract(i);
    // PNG quantization applies equally to both sides: compare against a
    // fresh read of the same files.
    const Tensor ske = read_png((tmp.path / "pose" / "ske" / frame_name(
                                     static_cast<int>(i))).string());
    CHECK(tensors_equal(m.ske, ske));
    CHECK(m.dep.shape == Shape({64, 64, 1}));
    CHECK(m.norm.shape == Shape({64, 64, 3}));
  }

  SECTION("missing modality is named") {
    fsys::remove(tmp.path / "pose" / "dep" / "0001.png");
    REQUIRE_THROWS_WITH(ex.extract(1), Catch::Matchers::ContainsSubstring("dep"));
    CHECK_NOTHROW(ex.extract(0));
  }
  SECTION("wrong channel count is named") {
    write_png((tmp.path / "pose" / "dep" / "0001.png").string(),
              Tensor::zeros({64, 64, 3}));
    REQUIRE_THROWS_WITH(ex.extract(1), Catch::Matchers::ContainsSubstring("dep"));
  }
  SECTION("size disagreement across modalities") {
    write_png((tmp.path / "pose" / "seg" / "0002.png").string(),
              Tensor::zeros({32, 32, 3}));
    REQUIRE_THROWS_AS(ex.extract(2), DataError);
  }
  SECTION("directory without pose maps is rejected") {
    REQUIRE_THROWS_AS(FilePoseExtractor(tmp.path / "frames"), DataError);
  }
}

TEST_CASE("keypoint smoothing is a centered moving average with replicated edges") {
  // Five rows with a distinct, hand-checkable value per (row, keypoint, axis).
  std::vector<Keypoints> traj(5);
  for (int r = 0; r < 5; ++r)
    for (int kp = 0; kp < kNumKeypoints; ++kp)
      for (int c = 0; c < 2; ++c)
        traj[static_cast<std::size_t>(r)][static_cast<std::size_t>(kp)]
            [static_cast<std::size_t>(c)] =
                static_cast<float>(r * r + 3 * kp + 17 * c) * 0.25f;

  SECTION("window one is the identity") {
    const auto out = smooth_keypoints(traj, 1);
    REQUIRE(out.size() == traj.size());
    for (std::size_t r = 0; r < out.size(); ++r) CHECK(out[r] == traj[r]);
  }
  SECTION("interior and edge rows against a hand-computed average") {
    const auto out = smooth_keypoints(traj, 3);
    for (int kp = 0; kp < kNumKeypoints; ++kp)
      for (int c = 0; c < 2; ++c) {
        auto v = [&](int r) {
          return static_cast<double>(traj[static_cast<std::size_t>(r)]
                                         [static_cast<std::size_t>(kp)]
                                         [static_cast<std::size_t>(c)]);
        };
        // Row 0 replicates itself on the left; row 4 on the right.
        CHECK_THAT(out[0][static_cast<std::size_t>(kp)][static_cast<std::size_t>(c)],
                   Catch::Matchers::WithinAbs((v(0) + v(0) + v(1)) / 3.0, 1e-5));
        CHECK_THAT(out[2][static_cast<std::size_t>(kp)][static_cast<std::size_t>(c)],
                   Catch::Matchers::WithinAbs((v(1) + v(2) + v(3)) / 3.0, 1e-5));
        CHECK_THAT(out[4][static_cast<std::size_t>(kp)][static_cast<std::size_t>(c)],
                   Catch::Matchers::WithinAbs((v(3) + v(4) + v(4)) / 3.0, 1e-5));
      }
  }
  SECTION("constant trajectory is unchanged for any window") {
    std::vector<Keypoints> flat(6, traj[1]);
    for (int w : {3, 5, 7}) {
      const auto out = smooth_keypoints(flat, w);
      for (const auto& row : out)
        for (int kp = 0; kp < kNumKeypoints; ++kp)
          for (int c = 0; c < 2; ++c)
            CHECK_THAT(row[static_cast<std::size_t>(kp)][static_cast<std::size_t>(c)],
                       Catch::Matchers::WithinAbs(
                           traj[1][static_cast<std::size_t>(kp)][static_cast<std::size_t>(c)],
                           1e-5));
    }
  }
  SECTION("invalid windows and empty input are rejected") {
    REQUIRE_THROWS_AS(smooth_keypoints(traj, 2), DataError);
    REQUIRE_THROWS_AS(smooth_keypoints(traj, 4), DataError);
    REQUIRE_THROWS_AS(smooth_keypoints(traj, 0), DataError);
    REQUIRE_THROWS_AS(smooth_keypoints(traj, -3), DataError);
    REQUIRE_THROWS_AS(smooth_keypoints({}, 3), DataError);
  }
}

TEST_CASE("smoothing cuts jitter on noisy clips without drifting from the clean path") {
  for (std::uint64_t seed : {11ull, 29ull, 47ull}) {
    const ClipSample noisy = make_clip(seed, 16, 64, 2.0f);
    const ClipSample clean = make_clip(seed, 16, 64, 0.0f);

    const double jit_raw = trajectory_jitter(noisy.traj);
    const auto sm5 = smooth_keypoints(noisy.traj, 5);
    INFO("seed " << seed << " raw " << jit_raw << " w5 " << trajectory_jitter(sm5));
    CHECK(trajectory_jitter(sm5) <= 0.5 * jit_raw);
    CHECK(traj_rmse(sm5, clean.traj) <= traj_rmse(noisy.traj, clean.traj));

    double prev = std::numeric_limits<double>::infinity();
    for (int w : {1, 3, 5, 7}) {
      const double j = trajectory_jitter(smooth_keypoints(noisy.traj, w));
      CHECK(j <= prev + 1e-12);
      prev = j;
    }
  }
}

TEST_CASE("modality towers are independent and give latent-sized feature grids") {
  PoseConfig cfg;
  ParamStore ps;
  PrmModel prm(ps, cfg, 64);
  const ClipSample clip = make_clip(5, 2, 64, 0.0f);
  const PoseMaps maps = clip.pose[0];

  const ModalityFeatures f = prm.encode_modalities(ps, maps);
  const Shape want({8, 8, 64});
  CHECK(f.ske.shape == want);
  CHECK(f.seg.shape == want);
  CHECK(f.dep.shape == want);
  CHECK(f.norm.shape == want);

  const ModalityFeatures again = prm.encode_modalities(ps, maps);
  CHECK(tensors_equal(f.ske, again.ske));
  CHECK(tensors_equal(f.norm, again.norm));

  SECTION("zeroing one modality input only changes its own features") {
    PoseMaps zeroed = maps;
    zeroed.seg = Tensor::zeros({64, 64, 3});
    const ModalityFeatures g = prm.encode_modalities(ps, zeroed);
    CHECK(max_abs_diff(f.seg, g.seg) > 0.0);
    CHECK(tensors_equal(f.ske, g.ske));
    CHECK(tensors_equal(f.dep, g.dep));
    CHECK(tensors_equal(f.norm, g.norm));
  }
  SECTION("all-zero maps with freshly initialized (zero) biases give zero features") {
    PoseMaps zeros;
    zeros.ske = Tensor::zeros({64, 64, 3});
    zeros.seg = Tensor::zeros({64, 64, 3});
    zeros.dep = Tensor::zeros({64, 64, 1});
    zeros.norm = Tensor::zeros({64, 64, 3});
    const ModalityFeatures z = prm.encode_modalities(ps, zeros);
    for (const Tensor* t : {&z.ske, &z.seg, &z.dep, &z.norm})
      for (std::size_t i = 0; i < t->numel(); ++i) REQUIRE(t->at(i) == 0.0f);
  }
  SECTION("wrong map size is rejected") {
    PoseMaps bad = maps;
    bad.dep = Tensor::zeros({32, 32, 1});
    REQUIRE_THROWS_AS(prm.encode_modalities(ps, bad), DimensionError);
  }
}

TEST_CASE("fusion reduces to the skeleton tokens under the residual test hooks") {
  PoseConfig cfg;
  ParamStore ps;
  PrmModel prm(ps, cfg, 64);
  Rng rng(41);
  Tensor cs, cg, cd, cn;
  {
    NoGradGuard ng;
    cs = Tensor::rand_uniform({8, 8, 64}, rng, -1.0f, 1.0f);
    cg = Tensor::rand_uniform({8, 8, 64}, rng, -1.0f, 1.0f);
    cd = Tensor::rand_uniform({8, 8, 64}, rng, -1.0f, 1.0f);
    cn = Tensor::rand_uniform({8, 8, 64}, rng, -1.0f, 1.0f);
  }
  prm.set_zero_value_projection(true);
  prm.set_identity_h2(true);
  const Tensor out = prm.fuse(ps, cs, cg, cd, cn);
  REQUIRE(tensors_equal(out, cs));
  prm.set_zero_value_projection(false);
  prm.set_identity_h2(false);
  const Tensor full = prm.fuse(ps, cs, cg, cd, cn);
  CHECK(max_abs_diff(full, cs) > 0.0);

  Tensor small = Tensor::zeros({4, 4, 64});
  REQUIRE_THROWS_AS(prm.fuse(ps, small, cg, cd, cn), DimensionError);
}

TEST_CASE("fusion matches a scalar recomputation through the attention path") {
  PoseConfig cfg;
  ParamStore ps;
  PrmModel prm(ps, cfg, 64);
  Rng rng(99);
  Tensor cs, cg, cd, cn;
  {
    NoGradGuard ng;
    cs = Tensor::rand_uniform({8, 8, 64}, rng, -1.0f, 1.0f);
    cg = Tensor::rand_uniform({8, 8, 64}, rng, -1.0f, 1.0f);
    cd = Tensor::rand_uniform({8, 8, 64}, rng, -1.0f, 1.0f);
    cn = Tensor::rand_uniform({8, 8, 64}, rng, -1.0f, 1.0f);
  }
  const Tensor out = prm.fuse(ps, cs, cg, cd, cn);

  const int D = 64, P = 64;  // token width, token count (8x8 grid)
  auto wv = [&](const std::string& n) { return ps.get(n).ptr(); };
  const float* h1w = wv("prm.h1.w");  // [1,1,3D,D]
  const float* h1b = wv("prm.h1.b");
  const float* qw = wv("prm.attn.q.w");
  const float* qb = wv("prm.attn.q.b");
  const float* kw = wv("prm.attn.k.w");
  const float* kb = wv("prm.attn.k.b");
  const float* vw = wv("prm.attn.v.w");
  const float* vb = wv("prm.attn.v.b");
  const float* h2w = wv("prm.h2.w");  // [1,1,D,D]
  const float* h2b = wv("prm.h2.b");

  std::vector<double> aug(P * D), q(P * D), k(P * D), v(P * D), att(P * D), fused(P * D);
  for (int p = 0; p < P; ++p) {
    // 1x1 channel reduction of [seg | dep | norm] features at this pixel.
    for (int c = 0; c < D; ++c) {
      double s = h1b[c];
      for (int ci = 0; ci < D; ++ci) {
        s += static_cast<double>(cg.at(static_cast<std::size_t>(p * D + ci))) * h1w[ci * D + c];
        s += static_cast<double>(cd.at(static_cast<std::size_t>(p * D + ci))) *
             h1w[(D + ci) * D + c];
        s += static_cast<double>(cn.at(static_cast<std::size_t>(p * D + ci))) *
             h1w[(2 * D + ci) * D + c];
      }
      aug[static_cast<std::size_t>(p * D + c)] = s;
    }
    for (int c = 0; c < D; ++c) {
      double sq = qb[c], sk = kb[c], sv = vb[c];
      for (int ci = 0; ci < D; ++ci) {
        sq += static_cast<double>(cs.at(static_cast<std::size_t>(p * D + ci))) * qw[ci * D + c];
        sk += aug[static_cast<std::size_t>(p * D + ci)] * kw[ci * D + c];
        sv += aug[static_cast<std::size_t>(p * D + ci)] * vw[ci * D + c];
      }
      q[static_cast<std::size_t>(p * D + c)] = sq;
      k[static_cast<std::size_t>(p * D + c)] = sk;
      v[static_cast<std::size_t>(p * D + c)] = sv;
    }
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  for (int i = 0; i < P; ++i) {
    std::vector<double> logits(P);
    double mx = -1e300;
    for (int j = 0; j < P; ++j) {
      double s = 0.0;
      for (int c = 0; c < D; ++c)
        s += q[static_cast<std::size_t>(i * D + c)] * k[static_cast<std::size_t>(j * D + c)];
      logits[static_cast<std::size_t>(j)] = s * scale;
      mx = std::max(mx, logits[static_cast<std::size_t>(j)]);
    }
    double z = 0.0;
    for (double& l : logits) {
      l = std::exp(l - mx);
      z += l;
    }
    for (int c = 0; c < D; ++c) {
      double s = 0.0;
      for (int j = 0; j < P; ++j)
        s += (logits[static_cast<std::size_t>(j)] / z) * v[static_cast<std::size_t>(j * D + c)];
      att[static_cast<std::size_t>(i * D + c)] = s;
      fused[static_cast<std::size_t>(i * D + c)] =
          s + static_cast<double>(cs.at(static_cast<std::size_t>(i * D + c)));
    }
  }
  double worst = 0.0;
  for (int p = 0; p < P; ++p)
    for (int c = 0; c < D; ++c) {
      double s = h2b[c];
      for (int ci = 0; ci < D; ++ci) s += fused[static_cast<std::size_t>(p * D + ci)] * h2w[ci * D + c];
      worst = std::max(worst,
                       std::abs(s - static_cast<double>(out.at(static_cast<std::size_t>(p * D + c)))));
    }
  INFO("max |model - scalar oracle| = " << worst);
  CHECK(worst <= 1e-5);
}

TEST_CASE("sequence encoding is per-frame and honors the smoothing window") {
  PoseConfig cfg;
  ParamStore ps;
  PrmModel prm(ps, cfg, 64);
  const ClipSample clip = make_clip(13, 8, 64, 0.0f);

  const std::vector<Tensor> seq = prm.render_sequence(ps, clip, 1);
  REQUIRE(seq.size() == 8);
  for (const Tensor& g : seq) CHECK(g.shape == Shape({8, 8, 64}));

  SECTION("window one equals skipping the smoothing step entirely") {
    for (std::size_t i = 0; i < 8; ++i)
      CHECK(tensors_equal(seq[i], prm.encode_frame(ps, clip.pose[i])));
  }
  SECTION("permuting frames permutes the output grids identically") {
    const std::array<std::size_t, 8> order = {3, 0, 7, 5, 1, 6, 2, 4};
    ClipSample perm = clip;
    for (std::size_t i = 0; i < 8; ++i) {
      perm.frames[i] = clip.frames[order[i]];
      perm.pose[i] = clip.pose[order[i]];
      perm.traj[i] = clip.traj[order[i]];
    }
    const std::vector<Tensor> pseq = prm.render_sequence(ps, perm, 1);
    for (std::size_t i = 0; i < 8; ++i) REQUIRE(tensors_equal(pseq[i], seq[order[i]]));
  }
  SECTION("each output grid depends only on its own frame") {
    ClipSample tweaked = clip;
    tweaked.pose[3].dep = Tensor::zeros({64, 64, 1});
    const std::vector<Tensor> tseq = prm.render_sequence(ps, tweaked, 1);
    for (std::size_t i = 0; i < 8; ++i) {
      if (i == 3)
        CHECK(max_abs_diff(tseq[i], seq[i]) > 0.0);
      else
        CHECK(tensors_equal(tseq[i], seq[i]));
    }
  }
  SECTION("a wider window on a jittered clip changes the skeleton stream") {
    const ClipSample noisy = make_clip(13, 8, 64, 2.0f);
    const std::vector<Tensor> w1 = prm.render_sequence(ps, noisy, 1);
    const std::vector<Tensor> w5 = prm.render_sequence(ps, noisy, 5);
    double total = 0.0;
    for (std::size_t i = 0; i < 8; ++i) total += max_abs_diff(w1[i], w5[i]);
    CHECK(total > 0.0);
  }
  SECTION("degenerate inputs are rejected") {
    ClipSample empty;
    REQUIRE_THROWS_AS(prm.render_sequence(ps, empty, 1), DataError);
    ClipSample bad = clip;
    bad.traj.pop_back();
    REQUIRE_THROWS_AS(prm.render_sequence(ps, bad, 1), DataError);
    ClipSample mismatch = clip;
    mismatch.pose.pop_back();
    REQUIRE_THROWS_AS(prm.render_sequence(ps, mismatch, 1), DataError);
    REQUIRE_THROWS_AS(prm.render_sequence(ps, clip, 4), DataError);
  }
}

TEST_CASE("pose stack passes a gradient check on a reduced model") {
  PoseConfig cfg;
  cfg.tower_channels = {4, 8, 8};
  cfg.token_dim = 8;
  ParamStore ps;
  PrmModel prm(ps, cfg, 16);
  Rng rng(7);
  PoseMaps maps;
  {
    NoGradGuard ng;
    maps.ske = Tensor::rand_uniform({16, 16, 3}, rng, 0.0f, 1.0f);
    maps.seg = Tensor::rand_uniform({16, 16, 3}, rng, 0.0f, 1.0f);
    maps.dep = Tensor::rand_uniform({16, 16, 1}, rng, 0.0f, 1.0f);
    maps.norm = Tensor::rand_uniform({16, 16, 3}, rng, 0.0f, 1.0f);
  }

  SECTION("every branch receives gradient") {
    Tensor loss = mean_all(square(prm.encode_frame(ps, maps)));
    backward(loss);
    for (const std::string prefix :
         {"prm.ske.c1.w", "prm.seg.c1.w", "prm.dep.c1.w", "prm.norm.c1.w", "prm.h1.w",
          "prm.attn.q.w", "prm.attn.k.w", "prm.attn.v.w", "prm.h2.w"}) {
      const Tensor& p = ps.get(prefix);
      REQUIRE(p.grad != nullptr);
      double l2 = 0.0;
      for (float g : *p.grad) l2 += static_cast<double>(g) * g;
      INFO("param " << prefix);
      CHECK(l2 > 0.0);
    }
    ps.zero_grad();
  }
  SECTION("finite differences agree with the tape") {
    // The 0.1 loss scale keeps finite-difference rounding noise below the
    // checker's small-gradient floor (same reasoning as the appearance
    // encoder check).
    const auto res = grad_check<float>(
        ps, [&] { return mul_scalar(mean_all(square(prm.encode_frame(ps, maps))), 0.1f); },
        testutil::f32_opts());
    INFO("worst " << res.worst_param << "[" << res.worst_coord << "] rel " << res.max_rel_err);
    CHECK(res.max_rel_err <= 1e-3);
  }
}
