#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "dancer/config.hpp"

using namespace dancer;

TEST_CASE("empty document yields the documented defaults") {
  const Config c = config_from_json(Json::object());
  CHECK(c.seed == 0);
  CHECK(c.data.image_size == 64);
  CHECK(c.data.frames == 8);
  CHECK(c.codec.latent_channels == 4);
  CHECK(c.codec.kl_weight == 1e-6);
  CHECK(c.appearance.semantic_dim == 128);
  CHECK(c.appearance.token_dim == 256);
  CHECK(c.pose.smoothing_window == 1);
  CHECK(c.diffusion.timesteps == 1000);
  CHECK(c.diffusion.beta_start == 1e-4);
  CHECK(c.diffusion.beta_end == 0.02);
  CHECK(c.diffusion.sample_steps == 25);
  CHECK(c.diffusion.sigma_cond == 0.1);
  CHECK(c.train.lr == 1e-5);
  CHECK(c.train.stage == "codec");
}

TEST_CASE("roundtrip through JSON preserves every field") {
  Config c;
  c.seed = 42;
  c.data.jitter = 1.5f;
  c.train.stage = "diffusion";
  c.pose.tower_channels = {8, 16, 32};
  c.pose.token_dim = 32;
  c.denoiser.base_channels = 32;
  const Config back = config_from_json(config_to_json(c));
  CHECK(back.seed == 42);
  CHECK(back.data.jitter == 1.5f);
  CHECK(back.train.stage == "diffusion");
  CHECK(back.pose.tower_channels == std::vector<int>{8, 16, 32});
  CHECK(config_to_json(back) == config_to_json(c));
}

TEST_CASE("unknown keys are rejected with their path") {
  Json j;
  j["diffusion"]["betas"] = 5;
  try {
    config_from_json(j);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("/diffusion/betas") != std::string::npos);
  }

  Json top;
  top["bogus"] = 1;
  REQUIRE_THROWS_AS(config_from_json(top), DataError);
}

TEST_CASE("type and range violations carry the offending path") {
  Json j;
  j["diffusion"]["beta_start"] = "fast";
  try {
    config_from_json(j);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("/diffusion/beta_start") != std::string::npos);
  }

  Json k;
  k["data"]["image_size"] = 7;
  REQUIRE_THROWS_AS(config_from_json(k), DataError);

  Json l;
  l["train"]["lr"] = -3.0;
  REQUIRE_THROWS_AS(config_from_json(l), DataError);
}

TEST_CASE("cross-field consistency is enforced") {
  SECTION("beta ordering") {
    Json j;
    j["diffusion"]["beta_start"] = 0.5;
    j["diffusion"]["beta_end"] = 0.1;
    REQUIRE_THROWS_AS(config_from_json(j), DataError);
  }
  SECTION("sample steps vs timesteps") {
    Json j;
    j["diffusion"]["timesteps"] = 10;
    j["diffusion"]["sample_steps"] = 20;
    REQUIRE_THROWS_AS(config_from_json(j), DataError);
  }
  SECTION("token dim tied to semantic dim") {
    Json j;
    j["appearance"]["semantic_dim"] = 64;
    REQUIRE_THROWS_AS(config_from_json(j), DataError);
    j["appearance"]["token_dim"] = 128;
    const Config c = config_from_json(j);
    CHECK(c.appearance.token_dim == 128);
  }
  SECTION("smoothing window must be odd") {
    Json j;
    j["pose"]["smoothing_window"] = 4;
    REQUIRE_THROWS_AS(config_from_json(j), DataError);
  }
  SECTION("pose tower output width ties to the pose token width") {
    Json j;
    j["pose"]["tower_channels"] = {16, 32, 48};
    REQUIRE_THROWS_AS(config_from_json(j), DataError);
  }
  SECTION("pose token width ties to the denoiser base width") {
    Json j;
    j["pose"]["token_dim"] = 32;
    j["pose"]["tower_channels"] = {8, 16, 32};
    REQUIRE_THROWS_AS(config_from_json(j), DataError);
    j["denoiser"]["base_channels"] = 32;
    const Config c = config_from_json(j);
    CHECK(c.pose.token_dim == 32);
  }
  SECTION("stage must be known") {
    Json j;
    j["train"]["stage"] = "warmup";
    REQUIRE_THROWS_AS(config_from_json(j), DataError);
  }
  SECTION("batch frames bounded by clip frames") {
    Json j;
    j["data"]["frames"] = 4;
    j["train"]["batch_frames"] = 8;
    REQUIRE_THROWS_AS(config_from_json(j), DataError);
  }
  SECTION("patch sizes divide the canvas") {
    Json j;
    j["appearance"]["semantic_patch"] = 24;
    REQUIRE_THROWS_AS(config_from_json(j), DataError);
  }
}

TEST_CASE("file loading reports open and parse failures") {
  REQUIRE_THROWS_AS(load_config("/nonexistent/config.json"), DataError);

  const auto p = std::filesystem::temp_directory_path() / "dancer_bad_config.json";
  {
    std::ofstream f(p);
    f << "{ not json ";
  }
  REQUIRE_THROWS_AS(load_config(p.string()), DataError);
  std::filesystem::remove(p);

  const auto q = std::filesystem::temp_directory_path() / "dancer_good_config.json";
  {
    std::ofstream f(q);
    f << R"({"seed": 9, "train": {"steps": 50}})";
  }
  const Config c = load_config(q.string());
  CHECK(c.seed == 9);
  CHECK(c.train.steps == 50);
  std::filesystem::remove(q);
}

TEST_CASE("thread cap respects the environment variable") {
  Config c;
  c.threads = 8;
  ::setenv("DANCER_THREADS", "2", 1);
  CHECK(effective_threads(c) == 2);
  ::setenv("DANCER_THREADS", "junk", 1);
  REQUIRE_THROWS_AS(effective_threads(c), DataError);
  ::unsetenv("DANCER_THREADS");
  CHECK(effective_threads(c) == 8);
}
