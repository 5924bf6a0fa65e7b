#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dancer/codec.hpp"
#include "dancer/synth.hpp"
#include "test_util.hpp"

using namespace dancer;

namespace {

Config small_cfg() {
  Config c;
  return c;
}

Tensor test_image(std::uint64_t seed, int size = 64) {
  const auto clip = make_clip(seed, 1, size, 0.0f);
  return clip.frames[0];
}

}  // namespace

TEST_CASE("codec shape contracts") {
  const Config c = small_cfg();
  ParamStore ps;
  CodecModel model(ps, c.codec, 64);

  const Tensor img = test_image(1);
  const Tensor z = model.encode(ps, img);
  REQUIRE(z.shape == Shape({8, 8, 4}));

  const Tensor rec = model.decode(ps, z);
  REQUIRE(rec.shape == Shape({64, 64, 3}));
  for (std::size_t i = 0; i < rec.numel(); ++i) {
    REQUIRE(rec.at(i) >= 0.0f);
    REQUIRE(rec.at(i) <= 1.0f);
  }

  const Tensor dec0 = model.decode(ps, Tensor::zeros({8, 8, 4}));
  REQUIRE(dec0.all_finite());

  REQUIRE_THROWS_AS(model.encode(ps, Tensor::zeros({32, 32, 3})), DataError);
  REQUIRE_THROWS_AS(model.decode(ps, Tensor::zeros({8, 8, 2})), DataError);
  REQUIRE_THROWS_AS(model.decode(ps, Tensor::zeros({4, 4, 4})), DataError);
}

TEST_CASE("encode is deterministic; sampling is reparameterized around it") {
  const Config c = small_cfg();
  ParamStore ps;
  CodecModel model(ps, c.codec, 64);
  const Tensor img = test_image(2);

  const Tensor a = model.encode(ps, img);
  const Tensor b = model.encode(ps, img);
  for (std::size_t i = 0; i < a.numel(); ++i) REQUIRE(a.at(i) == b.at(i));

  Rng r1(11), r2(12);
  const Tensor s1 = model.encode_sample(ps, img, r1);
  const Tensor s2 = model.encode_sample(ps, img, r2);
  REQUIRE(s1.all_finite());
  double diff = 0;
  for (std::size_t i = 0; i < s1.numel(); ++i)
    diff += std::abs(s1.at(i) - s2.at(i));
  CHECK(diff > 0.0);
}

TEST_CASE("KL term: scalar oracle and nonnegativity") {
  // Hand oracle: KL = 0.5*mean(mu^2 + e^lv - 1 - lv).
  Tensor mean = Tensor::from({1, 4}, {0.5f, -1.0f, 0.0f, 2.0f});
  Tensor logvar = Tensor::from({1, 4}, {0.0f, 0.5f, -1.0f, 0.2f});
  double acc = 0;
  for (int i = 0; i < 4; ++i) {
    const double mu = mean.at(static_cast<std::size_t>(i));
    const double lv = logvar.at(static_cast<std::size_t>(i));
    acc += mu * mu + std::exp(lv) - 1.0 - lv;
  }
  const double expect = 0.5 * acc / 4.0;
  const Tensor kl = CodecModel::kl_term(mean, logvar);
  REQUIRE_THAT(static_cast<double>(kl.value()), Catch::Matchers::WithinRel(expect, 1e-5));

  CHECK(CodecModel::kl_term(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})).value() == 0.0f);

  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor m = Tensor::randn({4, 4}, rng);
    const Tensor lv = Tensor::randn({4, 4}, rng);
    REQUIRE(CodecModel::kl_term(m, lv).value() >= 0.0f);
  }
}

TEST_CASE("zero KL weight reduces the objective to pure reconstruction") {
  Config c = small_cfg();
  c.codec.kl_weight = 0.0;
  ParamStore ps;
  CodecModel model(ps, c.codec, 64);
  const Tensor img = test_image(3);

  Rng a(77);
  const Tensor l = model.loss(ps, img, a);

  // Replicate the stochastic pass with the same stream to isolate the MSE.
  Rng b(77);
  const Tensor moments = model.encode_moments(ps, img);
  const Tensor mean = model.posterior_mean(moments);
  const Tensor logvar = model.posterior_logvar(moments);
  Tensor eps;
  {
    NoGradGuard ng;
    eps = Tensor::randn(mean.shape, b);
  }
  const Tensor z = add(mean, mul(exp_t(mul_scalar(logvar, 0.5f)), eps));
  const Tensor manual = mse(model.decode(ps, z), img);
  REQUIRE_THAT(static_cast<double>(l.value()),
               Catch::Matchers::WithinRel(static_cast<double>(manual.value()), 1e-6));
}

TEST_CASE("combined codec loss passes a gradient check on a reduced model") {
  Config c = small_cfg();
  c.codec.base_channels = 8;
  c.codec.latent_channels = 2;
  c.codec.kl_weight = 1e-3;
  ParamStore ps;
  CodecModel model(ps, c.codec, 16);

  Rng rng(9);
  Tensor img;
  {
    NoGradGuard ng;
    img = Tensor::rand_uniform({16, 16, 3}, rng, 0.0f, 1.0f);
  }
  const auto res = grad_check<float>(
      ps, [&]() { Rng r(123); return model.loss(ps, img, r); }, testutil::f32_opts());
  INFO("worst " << res.worst_param << "[" << res.worst_coord << "] rel " << res.max_rel_err);
  CHECK(res.max_rel_err <= 1e-3);
}

TEST_CASE("short training run reduces the loss and separates figures") {
  Config c = small_cfg();
  ParamStore ps;
  CodecModel model(ps, c.codec, 64);

  std::vector<Tensor> frames;
  for (std::uint64_t s = 0; s < 2; ++s) {
    const auto clip = make_clip(s, 2, 64, 0.0f);
    for (const auto& f : clip.frames) frames.push_back(f);
  }

  Adam opt(c.codec.lr);
  const auto log = train_codec(ps, model, frames, 30, 3e-4, 0, opt);
  REQUIRE(log.size() == 30);
  const double first = log.front().loss;
  const double last = log.back().loss;
  INFO("loss " << first << " -> " << last);
  CHECK(last < first);
  for (const auto& e : log) REQUIRE(std::isfinite(e.loss));

  const Tensor za = model.encode(ps, test_image(100));
  const Tensor zb = model.encode(ps, test_image(200));
  double l2 = 0;
  for (std::size_t i = 0; i < za.numel(); ++i) {
    const double d = za.at(i) - zb.at(i);
    l2 += d * d;
  }
  CHECK(std::sqrt(l2) > 0.0);
}

TEST_CASE("non-finite loss aborts training with a diagnostic") {
  Config c = small_cfg();
  ParamStore ps;
  CodecModel model(ps, c.codec, 64);
  ps.get("codec.enc1.w").at(0) = std::numeric_limits<float>::infinity();
  std::vector<Tensor> frames = {test_image(4)};
  Adam opt(1e-4);
  REQUIRE_THROWS_AS(train_codec(ps, model, frames, 3, 1e-4, 0, opt), NumericalError);
}
