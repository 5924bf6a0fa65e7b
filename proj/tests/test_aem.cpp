#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dancer/aem.hpp"
#include "dancer/synth.hpp"
#include "test_util.hpp"

using namespace dancer;

namespace {

AppearanceConfig default_cfg() { return AppearanceConfig{}; }

Tensor ref_image(std::uint64_t seed) { return make_clip(seed, 1, 64, 0.0f).ref; }

/// Swaps two p-by-p pixel patches (given by patch grid coordinates).
Tensor swap_patches(const Tensor& img, int p, int ax, int ay, int bx, int by) {
  Tensor out = img.clone();
  const int w = img.dim(1), c = img.dim(2);
  for (int y = 0; y < p; ++y)
    for (int x = 0; x < p; ++x)
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t ia =
            ((static_cast<std::size_t>(ay * p + y)) * w + (ax * p + x)) * c + ch;
        const std::size_t ib =
            ((static_cast<std::size_t>(by * p + y)) * w + (bx * p + x)) * c + ch;
        std::swap(out.at(ia), out.at(ib));
      }
  return out;
}

}  // namespace

TEST_CASE("appearance encoder shape contracts and determinism") {
  ParamStore ps;
  AemModel aem(ps, default_cfg(), 64);
  const Tensor img = ref_image(1);

  const Tensor ch = aem.encode_semantic(ps, img);
  REQUIRE(ch.shape == Shape({1, 128}));
  const Tensor cl = aem.encode_detail(ps, img);
  REQUIRE(cl.shape == Shape({64, 128}));
  const Tensor app = aem.fuse(ps, ch, cl);
  REQUIRE(app.shape == Shape({65, 256}));
  REQUIRE(app.all_finite());

  const Tensor app2 = aem.forward(ps, img);
  REQUIRE(app2.shape == Shape({65, 256}));
  for (std::size_t i = 0; i < app.numel(); ++i) REQUIRE(app.at(i) == app2.at(i));

  REQUIRE_THROWS_AS(aem.encode_semantic(ps, Tensor::zeros({32, 32, 3})), DataError);
  REQUIRE_THROWS_AS(aem.fuse(ps, Tensor::zeros({1, 64}), cl), DataError);
  REQUIRE_THROWS_AS(aem.fuse(ps, ch, Tensor::zeros({32, 128})), DataError);
}

TEST_CASE("mean-pool head equals the patch-embedding mean when attention is bypassed") {
  ParamStore ps;
  AemModel aem(ps, default_cfg(), 64);
  aem.set_bypass_attention(true);
  const Tensor img = ref_image(2);

  const Tensor pooled = aem.encode_semantic(ps, img);

  // Independent path: run the patch conv directly and average rows.
  Tensor g = conv2d(img, ps.get("aem.sem.patch.w"), ps.get("aem.sem.patch.b"), 16, 0);
  REQUIRE(g.shape == Shape({4, 4, 128}));
  for (int d = 0; d < 128; ++d) {
    double acc = 0;
    for (int i = 0; i < 16; ++i)
      acc += g.at(static_cast<std::size_t>(i) * 128 + static_cast<std::size_t>(d));
    REQUIRE_THAT(static_cast<double>(pooled.at(static_cast<std::size_t>(d))),
                 Catch::Matchers::WithinAbs(acc / 16.0, 1e-5));
  }
}

TEST_CASE("detail tokens are local: patch swaps permute rows under the bypass hook") {
  ParamStore ps;
  AemModel aem(ps, default_cfg(), 64);
  aem.set_bypass_attention(true);
  const Tensor img = ref_image(3);

  // Swap detail patches (1,2) and (6,5): token rows 2*8+1=17 and 5*8+6=46.
  const Tensor swapped = swap_patches(img, 8, 1, 2, 6, 5);
  const Tensor ta = aem.encode_detail(ps, img);
  const Tensor tb = aem.encode_detail(ps, swapped);
  const int ra = 2 * 8 + 1, rb = 5 * 8 + 6;
  for (int r = 0; r < 64; ++r)
    for (int d = 0; d < 128; ++d) {
      const float a = ta.at(static_cast<std::size_t>(r) * 128 + static_cast<std::size_t>(d));
      int src = r;
      if (r == ra) src = rb;
      if (r == rb) src = ra;
      const float b = tb.at(static_cast<std::size_t>(src) * 128 + static_cast<std::size_t>(d));
      REQUIRE(a == b);
    }
}

TEST_CASE("constant image gives identical patch embeddings before attention") {
  ParamStore ps;
  AemModel aem(ps, default_cfg(), 64);
  aem.set_bypass_attention(true);
  const Tensor img = Tensor::full({64, 64, 3}, 0.4f);
  const Tensor t = aem.encode_detail(ps, img);
  for (int r = 1; r < 64; ++r)
    for (int d = 0; d < 128; ++d)
      REQUIRE(t.at(static_cast<std::size_t>(r) * 128 + static_cast<std::size_t>(d)) ==
              t.at(static_cast<std::size_t>(d)));
}

TEST_CASE("fusion is linear at zero: zero tokens and fresh biases give zero output") {
  ParamStore ps;
  AemModel aem(ps, default_cfg(), 64);
  const Tensor out = aem.fuse(ps, Tensor::zeros({1, 128}), Tensor::zeros({64, 128}));
  for (std::size_t i = 0; i < out.numel(); ++i) REQUIRE(out.at(i) == 0.0f);
}

TEST_CASE("fused row i+1 tracks detail token i alone") {
  ParamStore ps;
  AemModel aem(ps, default_cfg(), 64);
  Rng rng(4);
  const Tensor ch = Tensor::randn({1, 128}, rng);
  const Tensor cl = Tensor::randn({64, 128}, rng);
  Tensor cl2 = cl.clone();
  const int j = 11;
  for (int d = 0; d < 128; ++d)
    cl2.at(static_cast<std::size_t>(j) * 128 + static_cast<std::size_t>(d)) += 0.5f;

  const Tensor a = aem.fuse(ps, ch, cl);
  const Tensor b = aem.fuse(ps, ch, cl2);
  for (int r = 0; r < 65; ++r) {
    double diff = 0;
    for (int d = 0; d < 256; ++d)
      diff += std::abs(a.at(static_cast<std::size_t>(r) * 256 + static_cast<std::size_t>(d)) -
                       b.at(static_cast<std::size_t>(r) * 256 + static_cast<std::size_t>(d)));
    if (r == j + 1)
      REQUIRE(diff > 0.0);
    else
      REQUIRE(diff == 0.0);
  }
}

TEST_CASE("detail information survives fusion when the pooled token is unchanged") {
  ParamStore ps;
  AemModel aem(ps, default_cfg(), 64);
  aem.set_bypass_attention(true);
  const Tensor img = ref_image(5);
  // Swapping whole semantic patches permutes the semantic token rows (mean
  // unchanged) while reordering the detail tokens. Patches (1,1) and (2,2)
  // sit on the figure, so the images genuinely differ.
  const Tensor swapped = swap_patches(img, 16, 1, 1, 2, 2);
  double img_diff = 0;
  for (std::size_t i = 0; i < img.numel(); ++i) img_diff += std::abs(img.at(i) - swapped.at(i));
  REQUIRE(img_diff > 1.0);

  const Tensor ha = aem.encode_semantic(ps, img);
  const Tensor hb = aem.encode_semantic(ps, swapped);
  for (std::size_t i = 0; i < ha.numel(); ++i)
    REQUIRE_THAT(static_cast<double>(ha.at(i)),
                 Catch::Matchers::WithinAbs(static_cast<double>(hb.at(i)), 1e-6));

  const Tensor aa = aem.forward(ps, img);
  const Tensor ab = aem.forward(ps, swapped);
  double diff = 0;
  for (std::size_t i = 0; i < aa.numel(); ++i) diff += std::abs(aa.at(i) - ab.at(i));
  CHECK(diff > 1e-3);
}

TEST_CASE("gradients reach both encoders through the fused tokens") {
  ParamStore ps;
  AemModel aem(ps, default_cfg(), 64);
  const Tensor img = ref_image(6);
  ps.zero_grad();
  Tensor loss = sum_all(square(aem.forward(ps, img)));
  backward(loss);

  double sem = 0, det = 0;
  for (auto& [name, t] : ps.entries()) {
    if (!t.grad) continue;
    double g2 = 0;
    for (float g : *t.grad) g2 += static_cast<double>(g) * g;
    if (name.rfind("aem.sem.", 0) == 0) sem += g2;
    if (name.rfind("aem.det.", 0) == 0) det += g2;
  }
  CHECK(sem > 0.0);
  CHECK(det > 0.0);
}

TEST_CASE("appearance stack passes a gradient check on a reduced model") {
  AppearanceConfig cfg;
  cfg.semantic_dim = 16;
  cfg.token_dim = 32;
  cfg.semantic_patch = 8;
  cfg.detail_patch = 4;
  cfg.blocks = 1;
  ParamStore ps;
  AemModel aem(ps, cfg, 16);
  Rng rng(7);
  Tensor img;
  {
    NoGradGuard ng;
    img = Tensor::rand_uniform({16, 16, 3}, rng, 0.0f, 1.0f);
  }
  // The 0.1 loss scale keeps finite-difference rounding noise below the
  // checker's small-gradient floor; a genuinely wrong backward rule would
  // still show up as a proportional (much larger) mismatch.
  const auto res = grad_check<float>(
      ps, [&] { return mul_scalar(mean_all(square(aem.forward(ps, img))), 0.1f); },
      testutil::f32_opts());
  INFO("worst " << res.worst_param << "[" << res.worst_coord << "] rel " << res.max_rel_err);
  CHECK(res.max_rel_err <= 1e-3);
}
