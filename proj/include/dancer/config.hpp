#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dancer/errors.hpp"

namespace dancer {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Run configuration: one JSON document, validated on load. The defaults below
// are the single source of truth (README mirrors them).
// ---------------------------------------------------------------------------

struct DataConfig {
  std::string root = "data";
  int clips = 10;        // clip count written by the synth command
  int frames = 8;        // frames per clip (N)
  int image_size = 64;   // square canvas, pixels
  float jitter = 0.0f;   // keypoint noise amplitude, pixels
};

struct CodecConfig {
  int base_channels = 32;
  int latent_channels = 4;
  double kl_weight = 1e-6;
  double lr = 2e-4;
  int steps = 3000;
  int batch_frames = 8;
};

struct AppearanceConfig {
  int semantic_dim = 128;   // width of the semantic encoder tokens
  int token_dim = 256;      // fused appearance token width (2x semantic_dim)
  int semantic_patch = 16;  // patch edge for the semantic encoder
  int detail_patch = 8;     // patch edge for the detail encoder
  int blocks = 2;           // self-attention blocks per encoder
};

struct PoseConfig {
  std::vector<int> tower_channels = {16, 32, 64};  // one stride-2 stage each
  int token_dim = 64;
  int smoothing_window = 1;  // odd; 1 = no smoothing
};

struct DenoiserConfig {
  int base_channels = 64;
  std::vector<int> channel_mult = {1, 2};  // per down stage
  int time_dim = 256;
};

struct DiffusionConfig {
  int timesteps = 1000;       // T
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int sample_steps = 25;
  double sigma_cond = 0.1;    // noise on the reference latent during sampling
};

struct TrainConfig {
  std::string stage = "codec";  // "codec" | "diffusion"
  double lr = 1e-5;
  int steps = 3000;
  int batch_frames = 8;  // consecutive frames per sample (plus the reference)
  int checkpoint_every = 500;
  int log_every = 10;
};

struct EvalConfig {
  int embed_dim = 64;
  std::uint64_t embedder_seed = 17;
};

struct Config {
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = auto; the DANCER_THREADS env var caps the result
  DataConfig data;
  CodecConfig codec;
  AppearanceConfig appearance;
  PoseConfig pose;
  DenoiserConfig denoiser;
  DiffusionConfig diffusion;
  TrainConfig train;
  EvalConfig eval;
};

namespace cfgdetail {

inline void expect_object(const Json& j, const std::string& path) {
  if (!j.is_object()) throw DataError("config: expected object at " + (path.empty() ? "/" : path));
}

inline void reject_unknown(const Json& j, const std::string& path,
                           const std::vector<std::string>& known) {
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const auto& k : known)
      if (item.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw DataError("config: unknown key " + path + "/" + item.key());
  }
}

template <typename T>
T get_int(const Json& j, const std::string& key, const std::string& path, T def, T lo, T hi) {
  if (!j.contains(key)) return def;
  const Json& v = j.at(key);
  if (!v.is_number_integer() && !v.is_number_unsigned())
    throw DataError("config: expected integer at " + path + "/" + key);
  const auto x = v.get<long long>();
  if (x < static_cast<long long>(lo) || x > static_cast<long long>(hi))
    throw DataError("config: value out of range at " + path + "/" + key + " (" +
                    std::to_string(x) + " not in [" + std::to_string(lo) + ", " +
                    std::to_string(hi) + "])");
  return static_cast<T>(x);
}

inline double get_num(const Json& j, const std::string& key, const std::string& path, double def,
                      double lo, double hi) {
  if (!j.contains(key)) return def;
  const Json& v = j.at(key);
  if (!v.is_number()) throw DataError("config: expected number at " + path + "/" + key);
  const double x = v.get<double>();
  if (!(x >= lo && x <= hi))
    throw DataError("config: value out of range at " + path + "/" + key + " (" +
                    std::to_string(x) + " not in [" + std::to_string(lo) + ", " +
                    std::to_string(hi) + "])");
  return x;
}

inline std::string get_str(const Json& j, const std::string& key, const std::string& path,
                           std::string def) {
  if (!j.contains(key)) return def;
  const Json& v = j.at(key);
  if (!v.is_string()) throw DataError("config: expected string at " + path + "/" + key);
  return v.get<std::string>();
}

inline std::vector<int> get_int_list(const Json& j, const std::string& key, const std::string& path,
                                     std::vector<int> def) {
  if (!j.contains(key)) return def;
  const Json& v = j.at(key);
  if (!v.is_array()) throw DataError("config: expected array at " + path + "/" + key);
  std::vector<int> out;
  for (const auto& e : v) {
    if (!e.is_number_integer() && !e.is_number_unsigned())
      throw DataError("config: expected integer elements at " + path + "/" + key);
    const auto x = e.get<long long>();
    if (x < 1 || x > 4096)
      throw DataError("config: element out of range at " + path + "/" + key);
    out.push_back(static_cast<int>(x));
  }
  if (out.empty()) throw DataError("config: empty array at " + path + "/" + key);
  return out;
}

}  // namespace cfgdetail

/// Cross-field consistency checks (also run on hand-built configs).
inline void validate(const Config& c) {
  auto fail = [](const std::string& m) { throw DataError("config: " + m); };
  if (c.data.image_size % 8 != 0) fail("data.image_size must be a multiple of 8");
  if (c.data.image_size % c.appearance.semantic_patch != 0)
    fail("appearance.semantic_patch must divide data.image_size");
  if (c.data.image_size % c.appearance.detail_patch != 0)
    fail("appearance.detail_patch must divide data.image_size");
  if (c.appearance.token_dim != 2 * c.appearance.semantic_dim)
    fail("appearance.token_dim must equal 2*appearance.semantic_dim (concat fusion)");
  if (c.appearance.token_dim % 2 != 0) fail("appearance.token_dim must be even");
  if (c.pose.tower_channels.size() != 3)
    fail("pose.tower_channels needs exactly 3 stages (8x spatial reduction)");
  if (c.pose.tower_channels.back() != c.pose.token_dim)
    fail("pose.tower_channels must end at pose.token_dim (tower output width)");
  if (c.pose.token_dim != c.denoiser.base_channels)
    fail("pose.token_dim must equal denoiser.base_channels (pose grids add onto the input conv)");
  if (c.pose.smoothing_window % 2 == 0) fail("pose.smoothing_window must be odd");
  if (c.denoiser.channel_mult.size() != 2) fail("denoiser.channel_mult needs exactly 2 stages");
  if (c.denoiser.time_dim % 2 != 0) fail("denoiser.time_dim must be even");
  if (c.diffusion.beta_start >= c.diffusion.beta_end)
    fail("diffusion.beta_start must be below diffusion.beta_end");
  if (c.diffusion.sample_steps > c.diffusion.timesteps)
    fail("diffusion.sample_steps cannot exceed diffusion.timesteps");
  if (c.train.stage != "codec" && c.train.stage != "diffusion")
    fail("train.stage must be \"codec\" or \"diffusion\"");
  if (c.train.batch_frames > c.data.frames)
    fail("train.batch_frames cannot exceed data.frames");
  if (c.data.image_size / 8 < 4) fail("latent side below 4 is unsupported");
}

/// Parses and validates a full config document. Unknown keys are errors.
inline Config config_from_json(const Json& j) {
  using namespace cfgdetail;
  expect_object(j, "");
  reject_unknown(j, "", {"seed", "threads", "data", "codec", "appearance", "pose", "denoiser",
                         "diffusion", "train", "eval"});
  Config c;
  c.seed = static_cast<std::uint64_t>(
      get_int<long long>(j, "seed", "", 0, 0, std::numeric_limits<long long>::max()));
  c.threads = get_int<int>(j, "threads", "", 0, 0, 4096);

  if (j.contains("data")) {
    const Json& d = j.at("data");
    expect_object(d, "/data");
    reject_unknown(d, "/data", {"root", "clips", "frames", "image_size", "jitter"});
    c.data.root = get_str(d, "root", "/data", c.data.root);
    c.data.clips = get_int<int>(d, "clips", "/data", c.data.clips, 1, 100000);
    c.data.frames = get_int<int>(d, "frames", "/data", c.data.frames, 1, 4096);
    c.data.image_size = get_int<int>(d, "image_size", "/data", c.data.image_size, 16, 512);
    c.data.jitter = static_cast<float>(get_num(d, "jitter", "/data", c.data.jitter, 0.0, 16.0));
  }
  if (j.contains("codec")) {
    const Json& d = j.at("codec");
    expect_object(d, "/codec");
    reject_unknown(d, "/codec",
                   {"base_channels", "latent_channels", "kl_weight", "lr", "steps", "batch_frames"});
    c.codec.base_channels = get_int<int>(d, "base_channels", "/codec", c.codec.base_channels, 1, 1024);
    c.codec.latent_channels =
        get_int<int>(d, "latent_channels", "/codec", c.codec.latent_channels, 1, 64);
    c.codec.kl_weight = get_num(d, "kl_weight", "/codec", c.codec.kl_weight, 0.0, 1.0);
    c.codec.lr = get_num(d, "lr", "/codec", c.codec.lr, 1e-12, 1.0);
    c.codec.steps = get_int<int>(d, "steps", "/codec", c.codec.steps, 1, 100000000);
    c.codec.batch_frames = get_int<int>(d, "batch_frames", "/codec", c.codec.batch_frames, 1, 256);
  }
  if (j.contains("appearance")) {
    const Json& d = j.at("appearance");
    expect_object(d, "/appearance");
    reject_unknown(d, "/appearance",
                   {"semantic_dim", "token_dim", "semantic_patch", "detail_patch", "blocks"});
    c.appearance.semantic_dim =
        get_int<int>(d, "semantic_dim", "/appearance", c.appearance.semantic_dim, 2, 2048);
    c.appearance.token_dim =
        get_int<int>(d, "token_dim", "/appearance", c.appearance.token_dim, 2, 4096);
    c.appearance.semantic_patch =
        get_int<int>(d, "semantic_patch", "/appearance", c.appearance.semantic_patch, 1, 256);
    c.appearance.detail_patch =
        get_int<int>(d, "detail_patch", "/appearance", c.appearance.detail_patch, 1, 256);
    c.appearance.blocks = get_int<int>(d, "blocks", "/appearance", c.appearance.blocks, 1, 16);
  }
  if (j.contains("pose")) {
    const Json& d = j.at("pose");
    expect_object(d, "/pose");
    reject_unknown(d, "/pose", {"tower_channels", "token_dim", "smoothing_window"});
    c.pose.tower_channels = get_int_list(d, "tower_channels", "/pose", c.pose.tower_channels);
    c.pose.token_dim = get_int<int>(d, "token_dim", "/pose", c.pose.token_dim, 2, 2048);
    c.pose.smoothing_window =
        get_int<int>(d, "smoothing_window", "/pose", c.pose.smoothing_window, 1, 255);
  }
  if (j.contains("denoiser")) {
    const Json& d = j.at("denoiser");
    expect_object(d, "/denoiser");
    reject_unknown(d, "/denoiser", {"base_channels", "channel_mult", "time_dim"});
    c.denoiser.base_channels =
        get_int<int>(d, "base_channels", "/denoiser", c.denoiser.base_channels, 1, 2048);
    c.denoiser.channel_mult = get_int_list(d, "channel_mult", "/denoiser", c.denoiser.channel_mult);
    c.denoiser.time_dim = get_int<int>(d, "time_dim", "/denoiser", c.denoiser.time_dim, 2, 4096);
  }
  if (j.contains("diffusion")) {
    const Json& d = j.at("diffusion");
    expect_object(d, "/diffusion");
    reject_unknown(d, "/diffusion",
                   {"timesteps", "beta_start", "beta_end", "sample_steps", "sigma_cond"});
    c.diffusion.timesteps = get_int<int>(d, "timesteps", "/diffusion", c.diffusion.timesteps, 1,
                                         100000);
    c.diffusion.beta_start =
        get_num(d, "beta_start", "/diffusion", c.diffusion.beta_start, 1e-12, 0.999);
    c.diffusion.beta_end = get_num(d, "beta_end", "/diffusion", c.diffusion.beta_end, 1e-12, 0.999);
    c.diffusion.sample_steps =
        get_int<int>(d, "sample_steps", "/diffusion", c.diffusion.sample_steps, 1, 100000);
    c.diffusion.sigma_cond = get_num(d, "sigma_cond", "/diffusion", c.diffusion.sigma_cond, 0.0, 10.0);
  }
  if (j.contains("train")) {
    const Json& d = j.at("train");
    expect_object(d, "/train");
    reject_unknown(d, "/train",
                   {"stage", "lr", "steps", "batch_frames", "checkpoint_every", "log_every"});
    c.train.stage = get_str(d, "stage", "/train", c.train.stage);
    c.train.lr = get_num(d, "lr", "/train", c.train.lr, 1e-12, 1.0);
    c.train.steps = get_int<int>(d, "steps", "/train", c.train.steps, 1, 100000000);
    c.train.batch_frames = get_int<int>(d, "batch_frames", "/train", c.train.batch_frames, 1, 256);
    c.train.checkpoint_every =
        get_int<int>(d, "checkpoint_every", "/train", c.train.checkpoint_every, 1, 100000000);
    c.train.log_every = get_int<int>(d, "log_every", "/train", c.train.log_every, 1, 100000000);
  }
  if (j.contains("eval")) {
    const Json& d = j.at("eval");
    expect_object(d, "/eval");
    reject_unknown(d, "/eval", {"embed_dim", "embedder_seed"});
    c.eval.embed_dim = get_int<int>(d, "embed_dim", "/eval", c.eval.embed_dim, 2, 4096);
    c.eval.embedder_seed = static_cast<std::uint64_t>(get_int<long long>(
        d, "embedder_seed", "/eval", static_cast<long long>(c.eval.embedder_seed), 0,
        std::numeric_limits<long long>::max()));
  }
  validate(c);
  return c;
}

inline Json config_to_json(const Config& c) {
  Json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["data"] = {{"root", c.data.root},
               {"clips", c.data.clips},
               {"frames", c.data.frames},
               {"image_size", c.data.image_size},
               {"jitter", c.data.jitter}};
  j["codec"] = {{"base_channels", c.codec.base_channels},
                {"latent_channels", c.codec.latent_channels},
                {"kl_weight", c.codec.kl_weight},
                {"lr", c.codec.lr},
                {"steps", c.codec.steps},
                {"batch_frames", c.codec.batch_frames}};
  j["appearance"] = {{"semantic_dim", c.appearance.semantic_dim},
                     {"token_dim", c.appearance.token_dim},
                     {"semantic_patch", c.appearance.semantic_patch},
                     {"detail_patch", c.appearance.detail_patch},
                     {"blocks", c.appearance.blocks}};
  j["pose"] = {{"tower_channels", c.pose.tower_channels},
               {"token_dim", c.pose.token_dim},
               {"smoothing_window", c.pose.smoothing_window}};
  j["denoiser"] = {{"base_channels", c.denoiser.base_channels},
                   {"channel_mult", c.denoiser.channel_mult},
                   {"time_dim", c.denoiser.time_dim}};
  j["diffusion"] = {{"timesteps", c.diffusion.timesteps},
                    {"beta_start", c.diffusion.beta_start},
                    {"beta_end", c.diffusion.beta_end},
                    {"sample_steps", c.diffusion.sample_steps},
                    {"sigma_cond", c.diffusion.sigma_cond}};
  j["train"] = {{"stage", c.train.stage},
                {"lr", c.train.lr},
                {"steps", c.train.steps},
                {"batch_frames", c.train.batch_frames},
                {"checkpoint_every", c.train.checkpoint_every},
                {"log_every", c.train.log_every}};
  j["eval"] = {{"embed_dim", c.eval.embed_dim}, {"embedder_seed", c.eval.embedder_seed}};
  return j;
}

inline Config load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("config: cannot open " + path);
  Json j;
  try {
    f >> j;
  } catch (const Json::exception& e) {
    throw DataError("config: invalid JSON in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

/// Worker count: config value (0 = hardware), capped by DANCER_THREADS.
inline int effective_threads(const Config& c) {
  int n = c.threads > 0 ? c.threads
                        : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("DANCER_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end == env || cap < 1) throw DataError("DANCER_THREADS must be a positive integer");
    n = std::min<long>(n, cap);
  }
  return std::max(1, n);
}

}  // namespace dancer
