#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dancer/aem.hpp"
#include "dancer/checkpoint.hpp"
#include "dancer/codec.hpp"
#include "dancer/config.hpp"
#include "dancer/denoiser.hpp"
#include "dancer/diffusion.hpp"
#include "dancer/errors.hpp"
#include "dancer/image_io.hpp"
#include "dancer/metrics.hpp"
#include "dancer/optim.hpp"
#include "dancer/prm.hpp"
#include "dancer/synth.hpp"

namespace dancer {

// ---------------------------------------------------------------------------
// Command layer: dataset synthesis, two-stage training with checkpoint /
// resume, video generation, metric reports, the ablation harness, and dataset
// statistics. The CLI binary is a thin wrapper over these functions so tests
// exercise exactly the shipped code paths.
// ---------------------------------------------------------------------------

/// All four submodels over one shared parameter store, built from a config.
struct ModelBundle {
  ParamStore ps;
  CodecModel codec;
  AemModel aem;
  PrmModel prm;
  DenoiserModel denoiser;

  explicit ModelBundle(const Config& cfg)
      : codec(ps, cfg.codec, cfg.data.image_size),
        aem(ps, cfg.appearance, cfg.data.image_size),
        prm(ps, cfg.pose, cfg.data.image_size),
        denoiser(ps, cfg.denoiser, cfg.codec.latent_channels, cfg.appearance.token_dim) {}
};

/// Which conditioning streams are reduced for an ablation-table row.
struct AblationToggles {
  bool semantic_only = false;  // zero the appearance detail tokens at fusion
  bool skeleton_only = false;  // zero the seg/dep/norm pose maps
};

inline void apply_toggles(ModelBundle& b, const AblationToggles& t) {
  b.aem.set_semantic_only(t.semantic_only);
  b.prm.set_skeleton_only(t.skeleton_only);
}

// ------------------------------- checkpoints -------------------------------

/// Training provenance stored inside every checkpoint: the full config the
/// run used (verbatim), the completed stage, the step count, and any
/// conditioning ablation so generation reproduces the trained setup.
struct CheckpointMeta {
  Config config;
  std::string stage;  // "codec" | "diffusion"
  int step = 0;
  AblationToggles toggles;
};

struct LoadedCheckpoint {
  CheckpointMeta meta;
  NamedTensorList params;  // model parameters only
  bool has_optimizer = false;
  std::int64_t optimizer_steps = 0;
  std::map<std::string, std::vector<float>> opt_m, opt_v;
};

namespace pipedetail {

inline const char* kMetaKey = "__meta__";
inline const char* kOptM = "__opt_m__";
inline const char* kOptV = "__opt_v__";

inline bool has_prefix(const std::string& s, const std::string& p) {
  return s.size() >= p.size() && s.compare(0, p.size(), p) == 0;
}

inline Tensor floats_to_tensor(const std::vector<float>& v) {
  Tensor t = Tensor::zeros({static_cast<int>(v.size())});
  std::copy(v.begin(), v.end(), t.ptr());
  return t;
}

inline std::vector<float> tensor_to_floats(const Tensor& t) {
  return std::vector<float>(t.ptr(), t.ptr() + t.numel());
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write " + path);
  f << text;
  if (!f) throw DataError("short write to " + path);
}

}  // namespace pipedetail

/// Serializes the whole parameter store plus metadata (and, when given, the
/// optimizer moments for exact resume) into one atomic container write.
inline void save_bundle(const std::string& path, const ParamStore& ps, const CheckpointMeta& meta,
                        Adam* opt = nullptr) {
  Json j;
  j["config"] = config_to_json(meta.config);
  j["stage"] = meta.stage;
  j["step"] = meta.step;
  j["ablation"] = Json{{"semantic_only", meta.toggles.semantic_only},
                       {"skeleton_only", meta.toggles.skeleton_only}};
  if (opt) j["optimizer_steps"] = opt->step_count();

  NamedTensorList list;
  list.emplace_back(pipedetail::kMetaKey, string_to_tensor(j.dump()));
  for (const auto& e : ps.entries()) list.emplace_back(e.first, e.second);
  if (opt) {
    for (const auto& [name, m] : opt->moments_m())
      list.emplace_back(pipedetail::kOptM + name, pipedetail::floats_to_tensor(m));
    for (const auto& [name, v] : opt->moments_v())
      list.emplace_back(pipedetail::kOptV + name, pipedetail::floats_to_tensor(v));
  }
  save_checkpoint(path, list);
}

inline LoadedCheckpoint load_bundle(const std::string& path) {
  const NamedTensorList raw = load_checkpoint(path);
  LoadedCheckpoint lc;
  bool meta_seen = false;
  for (const auto& [name, t] : raw) {
    if (name == pipedetail::kMetaKey) {
      Json j;
      try {
        j = Json::parse(tensor_to_string(t));
        lc.meta.config = config_from_json(j.at("config"));
        lc.meta.stage = j.at("stage").get<std::string>();
        lc.meta.step = j.at("step").get<int>();
        lc.meta.toggles.semantic_only = j.at("ablation").at("semantic_only").get<bool>();
        lc.meta.toggles.skeleton_only = j.at("ablation").at("skeleton_only").get<bool>();
        if (j.contains("optimizer_steps")) {
          lc.has_optimizer = true;
          lc.optimizer_steps = j["optimizer_steps"].get<std::int64_t>();
        }
      } catch (const Json::exception& e) {
        throw DataError("checkpoint: bad metadata in " + path + ": " + e.what());
      }
      meta_seen = true;
    } else if (pipedetail::has_prefix(name, pipedetail::kOptM)) {
      lc.opt_m[name.substr(std::string(pipedetail::kOptM).size())] =
          pipedetail::tensor_to_floats(t);
    } else if (pipedetail::has_prefix(name, pipedetail::kOptV)) {
      lc.opt_v[name.substr(std::string(pipedetail::kOptV).size())] =
          pipedetail::tensor_to_floats(t);
    } else {
      lc.params.emplace_back(name, t);
    }
  }
  if (!meta_seen)
    throw DataError("checkpoint: " + path + " is not a training checkpoint (no metadata entry)");
  return lc;
}

/// Copies checkpoint parameters into the store. Coverage is checked both
/// ways so a config/checkpoint mismatch is an error, never silent drift.
inline void apply_params(ParamStore& ps, const NamedTensorList& params) {
  std::set<std::string> seen;
  for (const auto& [name, t] : params) {
    if (!ps.has(name))
      throw DataError("checkpoint: parameter '" + name +
                      "' does not exist in the configured model (config mismatch)");
    Tensor& dst = ps.get(name);
    if (!(dst.shape == t.shape))
      throw DataError("checkpoint: parameter '" + name + "' has shape " + shape_str(t.shape) +
                      " but the configured model expects " + shape_str(dst.shape));
    std::copy(t.data->begin(), t.data->end(), dst.data->begin());
    seen.insert(name);
  }
  for (const auto& e : ps.entries())
    if (!seen.count(e.first))
      throw DataError("checkpoint: model parameter '" + e.first +
                      "' is missing from the checkpoint (config mismatch)");
}

inline void restore_optimizer(Adam& opt, const LoadedCheckpoint& lc) {
  if (!lc.has_optimizer)
    throw DataError("checkpoint: no optimizer state recorded; cannot resume training exactly");
  opt.set_step_count(lc.optimizer_steps);
  opt.moments_m() = lc.opt_m;
  opt.moments_v() = lc.opt_v;
}

/// Structural (shape-determining) config fields must agree with the config a
/// checkpoint was trained under; runtime knobs (paths, lr, step counts,
/// sampling steps) may differ.
inline void check_model_compat(const Config& run, const Config& ckpt) {
  auto fail = [](const std::string& what) {
    throw DataError("config mismatch vs checkpoint: " + what +
                    " differs from the config the checkpoint was trained with");
  };
  if (run.data.image_size != ckpt.data.image_size) fail("data.image_size");
  if (run.codec.base_channels != ckpt.codec.base_channels) fail("codec.base_channels");
  if (run.codec.latent_channels != ckpt.codec.latent_channels) fail("codec.latent_channels");
  if (config_to_json(run)["appearance"] != config_to_json(ckpt)["appearance"])
    fail("appearance section");
  if (run.pose.tower_channels != ckpt.pose.tower_channels) fail("pose.tower_channels");
  if (run.pose.token_dim != ckpt.pose.token_dim) fail("pose.token_dim");
  if (config_to_json(run)["denoiser"] != config_to_json(ckpt)["denoiser"]) fail("denoiser section");
  if (run.diffusion.timesteps != ckpt.diffusion.timesteps ||
      run.diffusion.beta_start != ckpt.diffusion.beta_start ||
      run.diffusion.beta_end != ckpt.diffusion.beta_end)
    fail("diffusion schedule");
}

// ------------------------------ training logs ------------------------------

inline void append_train_log(const std::string& path, const std::vector<TrainLogEntry>& entries) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream f(path, std::ios::app);
  if (!f) throw DataError("train log: cannot open " + path);
  if (fresh) f << "step,loss,lr,wall_ms\n";
  for (const auto& e : entries) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.3f\n", e.step, e.loss, e.lr, e.wall_ms);
    f << buf;
  }
  if (!f) throw DataError("train log: short write to " + path);
}

inline std::vector<TrainLogEntry> read_train_log(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("train log: cannot open " + path);
  std::vector<TrainLogEntry> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line == "step,loss,lr,wall_ms") continue;
    TrainLogEntry e{};
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &e.step, &e.loss, &e.lr, &e.wall_ms) != 4)
      throw DataError("train log: bad row '" + line + "' in " + path);
    out.push_back(e);
  }
  return out;
}

// ------------------------------ dataset access -----------------------------

inline std::vector<ClipSample> load_dataset(const std::string& root) {
  const std::vector<std::string> dirs = list_clip_dirs(root);
  if (dirs.empty()) throw DataError("dataset: no clips under " + root);
  std::vector<ClipSample> clips;
  clips.reserve(dirs.size());
  for (const auto& d : dirs) clips.push_back(read_clip(d));
  return clips;
}

inline std::vector<Tensor> collect_frames(const std::vector<ClipSample>& clips) {
  std::vector<Tensor> frames;
  for (const auto& c : clips)
    for (const auto& f : c.frames) frames.push_back(f);
  return frames;
}

// --------------------------------- synth -----------------------------------

struct SynthResult {
  std::string root;
  DatasetManifest manifest;
};

/// Writes the synthetic dataset for a config. Clip seeds are derived from the
/// master seed, skipping the rare candidates whose reference pose does not
/// fit the canvas, and recorded in manifest.json. Re-running on a root that
/// already holds a matching manifest regenerates the same files bit-exactly;
/// a manifest with different parameters is an error.
inline SynthResult cmd_synth(const Config& cfg) {
  validate(cfg);
  const std::string root = cfg.data.root;
  if (std::filesystem::exists(std::filesystem::path(root) / "manifest.json")) {
    DatasetManifest m = read_manifest(root);
    if (m.n != cfg.data.frames || m.size != cfg.data.image_size ||
        m.jitter != cfg.data.jitter || static_cast<int>(m.seeds.size()) != cfg.data.clips)
      throw DataError("synth: " + root +
                      " already holds a dataset with different parameters; use a fresh root or "
                      "delete it first");
    write_dataset(root, m);
    return {root, m};
  }

  DatasetManifest m;
  m.n = cfg.data.frames;
  m.size = cfg.data.image_size;
  m.jitter = cfg.data.jitter;
  std::uint64_t k = 0;
  const std::uint64_t max_attempts =
      64 + 64 * static_cast<std::uint64_t>(std::max(1, cfg.data.clips));
  while (static_cast<int>(m.seeds.size()) < cfg.data.clips) {
    if (k >= max_attempts)
      throw DataError("synth: could not find " + std::to_string(cfg.data.clips) +
                      " figure seeds that fit a " + std::to_string(cfg.data.image_size) +
                      "px canvas; increase data.image_size");
    const std::uint64_t cand = mix_seed(cfg.seed, "clip-seed-" + std::to_string(k++));
    try {
      (void)make_clip(cand, 1, cfg.data.image_size, 0.0f);  // reference-pose fit probe
    } catch (const DataError&) {
      continue;
    }
    m.seeds.push_back(cand);
  }
  write_dataset(root, m);
  return {root, m};
}

// --------------------------------- train -----------------------------------

struct TrainResult {
  std::string stage;
  std::string checkpoint_path;
  std::string log_path;
  std::vector<TrainLogEntry> log;  // entries produced by this invocation
  int first_step = 0;
  int final_step = 0;
};

/// Runs one training stage with periodic atomic checkpoints. Stage "codec"
/// trains the latent codec on all dataset frames; stage "diffusion" requires
/// a codec checkpoint and trains denoiser + pose + appearance with the codec
/// frozen. Passing a same-stage checkpoint resumes it exactly (per-step
/// seeding plus serialized optimizer moments make chunked runs bitwise equal
/// to uninterrupted ones).
inline TrainResult cmd_train(const Config& cfg, const std::string& out_dir,
                             const std::string& checkpoint_path = "",
                             const AblationToggles& toggles = {}) {
  validate(cfg);
  const std::string stage = cfg.train.stage;
  if (stage != "codec" && stage != "diffusion")
    throw DataError("train: unknown stage '" + stage + "' (expected codec or diffusion)");

  ModelBundle bundle(cfg);
  apply_toggles(bundle, toggles);
  const double lr = stage == "codec" ? cfg.codec.lr : cfg.train.lr;
  const int target = stage == "codec" ? cfg.codec.steps : cfg.train.steps;
  Adam opt(static_cast<float>(lr));
  int first_step = 0;

  if (!checkpoint_path.empty()) {
    const LoadedCheckpoint lc = load_bundle(checkpoint_path);
    check_model_compat(cfg, lc.meta.config);
    apply_params(bundle.ps, lc.params);
    if (lc.meta.stage == stage) {
      if (lc.meta.toggles.semantic_only != toggles.semantic_only ||
          lc.meta.toggles.skeleton_only != toggles.skeleton_only)
        throw DataError("train: checkpoint was trained with different ablation toggles");
      restore_optimizer(opt, lc);
      first_step = lc.meta.step;
    } else if (stage == "diffusion" && lc.meta.stage == "codec") {
      // Fresh second stage on top of the finished codec weights.
    } else {
      throw DataError("train: cannot start stage '" + stage + "' from a '" + lc.meta.stage +
                      "' checkpoint");
    }
  } else if (stage == "diffusion") {
    throw DataError(
        "train: the diffusion stage requires a codec checkpoint; run train with stage codec "
        "first and pass its checkpoint");
  }

  std::filesystem::create_directories(out_dir);
  pipedetail::write_text_file((std::filesystem::path(out_dir) / "config.json").string(),
                              config_to_json(cfg).dump(1) + "\n");
  const std::string ckpt = (std::filesystem::path(out_dir) / "checkpoint.dncr").string();
  const std::string log_path = (std::filesystem::path(out_dir) / "train_log.csv").string();

  const std::vector<ClipSample> clips = load_dataset(cfg.data.root);
  const std::vector<Tensor> frames = stage == "codec" ? collect_frames(clips)
                                                      : std::vector<Tensor>{};
  const Schedule sched = stage == "diffusion" ? make_schedule(cfg.diffusion) : Schedule{};
  const ModelRefs refs{bundle.codec, bundle.aem, bundle.prm, bundle.denoiser};

  TrainResult res;
  res.stage = stage;
  res.checkpoint_path = ckpt;
  res.log_path = log_path;
  res.first_step = first_step;

  CheckpointMeta meta{cfg, stage, first_step, toggles};
  const int chunk = std::max(1, cfg.train.checkpoint_every);
  int step = first_step;
  while (step < target) {
    const int next = std::min(target, step + chunk);
    std::vector<TrainLogEntry> part;
    if (stage == "codec") {
      part = train_codec(bundle.ps, bundle.codec, frames, next, lr, cfg.seed, opt, step);
    } else {
      part = train_diffusion(bundle.ps, refs, sched, clips, next, lr, cfg.train.batch_frames,
                             cfg.diffusion.sigma_cond, cfg.pose.smoothing_window, cfg.seed, opt,
                             step);
    }
    append_train_log(log_path, part);
    meta.step = next;
    save_bundle(ckpt, bundle.ps, meta, &opt);
    if (!part.empty())
      std::cout << "[train] stage " << stage << " step " << next << "/" << target << " loss "
                << part.back().loss << "\n";
    res.log.insert(res.log.end(), part.begin(), part.end());
    step = next;
  }
  if (step == first_step) save_bundle(ckpt, bundle.ps, meta, &opt);  // nothing left to run
  res.final_step = step;
  return res;
}

// -------------------------------- generate ---------------------------------

struct GenerateResult {
  std::string out_dir;
  int frames = 0;
  std::vector<std::string> frame_files;
};

/// Generates a video: reference image -> appearance tokens + initial latent,
/// source clip -> pose token grids, then deterministic denoising and decoding
/// of every frame to PNG. The reference defaults to the source clip's own.
inline GenerateResult cmd_generate(const Config& cfg, const std::string& checkpoint_path,
                                   const std::string& source_clip_dir, const std::string& out_dir,
                                   const std::string& ref_image_path = "") {
  validate(cfg);
  const LoadedCheckpoint lc = load_bundle(checkpoint_path);
  if (lc.meta.stage != "diffusion")
    throw DataError("generate: needs a diffusion-stage checkpoint; '" + checkpoint_path +
                    "' holds stage '" + lc.meta.stage + "'");
  check_model_compat(cfg, lc.meta.config);

  ModelBundle bundle(cfg);
  apply_params(bundle.ps, lc.params);
  apply_toggles(bundle, lc.meta.toggles);

  const ClipSample clip = read_clip(source_clip_dir);
  if (clip.size != cfg.data.image_size)
    throw DataError("generate: source clip is " + std::to_string(clip.size) +
                    "px but the model expects " + std::to_string(cfg.data.image_size) + "px");
  Tensor ref = clip.ref;
  if (!ref_image_path.empty()) {
    ref = read_png(ref_image_path);
    if (ref.rank() != 3 || ref.dim(0) != cfg.data.image_size ||
        ref.dim(1) != cfg.data.image_size || ref.dim(2) != 3)
      throw DataError("generate: reference image must be " +
                      std::to_string(cfg.data.image_size) + "x" +
                      std::to_string(cfg.data.image_size) + "x3, got " + shape_str(ref.shape));
  }

  const Schedule sched = make_schedule(cfg.diffusion);
  std::vector<Tensor> frames;
  {
    NoGradGuard ng;
    const Tensor ref_latent = bundle.codec.encode(bundle.ps, ref);
    const Tensor c_app = bundle.aem.forward(bundle.ps, ref);
    const std::vector<Tensor> c_pose =
        bundle.prm.render_sequence(bundle.ps, clip, cfg.pose.smoothing_window);
    const std::vector<Tensor> latents =
        sample_video(bundle.ps, bundle.denoiser, sched, ref_latent, c_app, c_pose,
                     cfg.diffusion.sample_steps, cfg.diffusion.sigma_cond, cfg.seed);
    frames.reserve(latents.size());
    for (const Tensor& z : latents) frames.push_back(bundle.codec.decode(bundle.ps, z));
  }

  std::filesystem::create_directories(out_dir);
  GenerateResult res;
  res.out_dir = out_dir;
  res.frames = static_cast<int>(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::string path =
        (std::filesystem::path(out_dir) / frame_name(static_cast<int>(i))).string();
    write_png(path, frames[i]);
    res.frame_files.push_back(path);
  }
  pipedetail::write_text_file((std::filesystem::path(out_dir) / "config.json").string(),
                              config_to_json(cfg).dump(1) + "\n");
  Json gm;
  gm["checkpoint"] = checkpoint_path;
  gm["source_clip"] = source_clip_dir;
  gm["reference"] = ref_image_path.empty() ? "(source clip reference)" : ref_image_path;
  gm["seed"] = cfg.seed;
  gm["sample_steps"] = cfg.diffusion.sample_steps;
  gm["frames"] = res.frames;
  pipedetail::write_text_file((std::filesystem::path(out_dir) / "gen_meta.json").string(),
                              gm.dump(1) + "\n");
  return res;
}

// -------------------------------- evaluate ---------------------------------

namespace pipedetail {

/// Sorted PNG paths for one clip directory: either NNNN.png directly in the
/// directory or under its frames/ subdirectory (the dataset layout).
inline std::vector<std::string> clip_frame_files(const std::filesystem::path& dir) {
  std::filesystem::path where = dir;
  if (std::filesystem::is_directory(dir / "frames")) where = dir / "frames";
  std::vector<std::string> files;
  for (const auto& e : std::filesystem::directory_iterator(where))
    if (e.is_regular_file() && e.path().extension() == ".png" &&
        e.path().filename() != "ref.png")
      files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  return files;
}

/// Clip name -> frame files under a root. A root whose PNGs sit directly in
/// it is a single unnamed clip; otherwise every subdirectory with frames is a
/// clip keyed by its name.
inline std::map<std::string, std::vector<std::string>> find_clips(const std::string& root) {
  if (!std::filesystem::is_directory(root))
    throw DataError("evaluate: not a directory: " + root);
  std::map<std::string, std::vector<std::string>> out;
  const auto direct = clip_frame_files(root);
  if (!direct.empty()) {
    out[""] = direct;
    return out;
  }
  for (const auto& e : std::filesystem::directory_iterator(root)) {
    if (!e.is_directory()) continue;
    auto files = clip_frame_files(e.path());
    if (!files.empty()) out[e.path().filename().string()] = std::move(files);
  }
  if (out.empty()) throw DataError("evaluate: no clip frames under " + root);
  return out;
}

inline std::vector<Tensor> load_frames(const std::vector<std::string>& files) {
  std::vector<Tensor> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(read_png(f));
  return out;
}

}  // namespace pipedetail

struct EvaluateResult {
  MetricReport report;
  std::vector<std::string> notes;  // e.g. why a video score is n/a
  std::string report_txt_path;
  std::string report_csv_path;
};

/// Runs the full metric suite between two clip sets (same clip names, same
/// per-clip frame counts). Paired scores (L1 / PSNR / SSIM / perceptual
/// distance) align frames; distribution scores pool frames (FID) or 16-frame
/// windows (FID-VID / FVD). Video scores degrade to n/a with a recorded note
/// when no side has enough windows.
inline EvaluateResult cmd_evaluate(const Config& cfg, const std::string& generated_root,
                                   const std::string& reference_root,
                                   const std::string& out_dir) {
  const auto gen_set = pipedetail::find_clips(generated_root);
  const auto ref_set = pipedetail::find_clips(reference_root);

  std::string missing;
  for (const auto& [name, files] : gen_set)
    if (!ref_set.count(name)) missing += " '" + name + "' (generated only)";
  for (const auto& [name, files] : ref_set)
    if (!gen_set.count(name)) missing += " '" + name + "' (reference only)";
  if (!missing.empty())
    throw DataError("evaluate: clip sets do not match:" + missing);

  std::vector<Tensor> gen_all, ref_all;
  std::vector<std::vector<Tensor>> gen_videos, ref_videos;
  for (const auto& [name, files] : gen_set) {
    const auto& rfiles = ref_set.at(name);
    if (files.size() != rfiles.size())
      throw DataError("evaluate: clip '" + name + "' has " + std::to_string(files.size()) +
                      " generated frames vs " + std::to_string(rfiles.size()) + " reference");
    auto g = pipedetail::load_frames(files);
    auto r = pipedetail::load_frames(rfiles);
    gen_all.insert(gen_all.end(), g.begin(), g.end());
    ref_all.insert(ref_all.end(), r.begin(), r.end());
    gen_videos.push_back(std::move(g));
    ref_videos.push_back(std::move(r));
  }

  EvaluateResult res;
  MetricReport& rep = res.report;
  rep.embedder_seed = cfg.eval.embedder_seed;

  rep.l1 = l1(gen_all, ref_all);
  rep.psnr = psnr(gen_all, ref_all);
  rep.ssim = ssim(gen_all, ref_all);

  const FeatureStack stack = make_feature_stack(cfg.eval, "randconv", 3);
  rep.lpips = lpips_proxy(stack, gen_all, ref_all);

  const ImageEmbedder img_emb = make_image_embedder(cfg.eval);
  rep.embedder_id = img_emb.id;
  try {
    rep.fid = fid(img_emb, gen_all, ref_all);
  } catch (const DataError& e) {
    res.notes.push_back(std::string("FID marked n/a: ") + e.what());
  }
  try {
    rep.fid_vid = clip_frechet(make_frame_mean_embedder(cfg.eval), gen_videos, ref_videos);
  } catch (const DataError& e) {
    res.notes.push_back(std::string("FID-VID marked n/a: ") + e.what());
  }
  try {
    rep.fvd = clip_frechet(make_motion_embedder(cfg.eval), gen_videos, ref_videos);
  } catch (const DataError& e) {
    res.notes.push_back(std::string("FVD marked n/a: ") + e.what());
  }

  std::filesystem::create_directories(out_dir);
  std::string txt = report_text(rep);
  for (const auto& n : res.notes) txt += "note: " + n + "\n";
  res.report_txt_path = (std::filesystem::path(out_dir) / "report.txt").string();
  res.report_csv_path = (std::filesystem::path(out_dir) / "report.csv").string();
  pipedetail::write_text_file(res.report_txt_path, txt);
  pipedetail::write_text_file(res.report_csv_path, report_csv(rep));
  pipedetail::write_text_file((std::filesystem::path(out_dir) / "config.json").string(),
                              config_to_json(cfg).dump(1) + "\n");
  return res;
}

// --------------------------------- ablate ----------------------------------

struct AblationRun {
  std::string name;
  AblationToggles toggles;
  MetricReport report;
  std::string dir;
};

struct AblationResult {
  std::vector<AblationRun> runs;  // full, semantic-only, skeleton-only, minimal
  std::string appearance_table;
  std::string pose_table;
  std::string csv;
  std::string out_dir;
};

namespace pipedetail {

inline std::string metric_cells(const MetricReport& r) {
  std::string row;
  const std::optional<double> vals[7] = {r.fid, r.ssim, r.lpips, r.psnr, r.l1, r.fid_vid, r.fvd};
  for (const auto& v : vals) row += detail::pad_to(detail::fmt_value(v, "%.4g"), 12);
  return row;
}

inline std::string metric_header() {
  std::string head;
  for (const char* c : {"FID (↓)", "SSIM (↑)", "LPIPS (↓)", "PSNR (↑)", "L1 (↓)", "FID-VID (↓)",
                        "FVD (↓)"})
    head += detail::pad_to(c, 12);
  return head;
}

/// One checkmark-row comparison table: a fixed stream plus a toggled stream.
inline std::string ablation_table(const std::string& title, const std::string& col_a,
                                  const std::string& col_b, const AblationRun& row_without,
                                  const AblationRun& row_with) {
  const std::size_t wa = detail::utf8_len(col_a) + 2, wb = detail::utf8_len(col_b) + 2;
  std::ostringstream out;
  out << title << "\n";
  out << detail::pad_to(col_a, wa) << detail::pad_to(col_b, wb) << metric_header() << "\n";
  out << detail::pad_to("✓", wa) << detail::pad_to("−", wb) << metric_cells(row_without.report)
      << "\n";
  out << detail::pad_to("✓", wa) << detail::pad_to("✓", wb) << metric_cells(row_with.report)
      << "\n";
  return out.str();
}

}  // namespace pipedetail

/// Four matched runs over the shared dataset toggling the appearance detail
/// stream and the auxiliary pose streams, each trained (second stage only;
/// the codec is shared), generated on every clip, and scored. Emits the two
/// checkmark comparison tables plus a CSV of all four rows.
inline AblationResult cmd_ablate(const Config& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  if (!fs::exists(fs::path(cfg.data.root) / "manifest.json")) cmd_synth(cfg);

  fs::create_directories(out_dir);
  pipedetail::write_text_file((fs::path(out_dir) / "config.json").string(),
                              config_to_json(cfg).dump(1) + "\n");

  Config codec_cfg = cfg;
  codec_cfg.train.stage = "codec";
  std::cout << "[ablate] shared codec stage\n";
  const TrainResult codec_tr = cmd_train(codec_cfg, (fs::path(out_dir) / "codec").string());

  const std::vector<std::string> clip_dirs = list_clip_dirs(cfg.data.root);

  AblationResult res;
  res.out_dir = out_dir;
  const std::vector<std::pair<std::string, AblationToggles>> plan = {
      {"full", {false, false}},
      {"semantic_only", {true, false}},
      {"skeleton_only", {false, true}},
      {"minimal", {true, true}},
  };
  for (const auto& [name, tg] : plan) {
    const fs::path run_dir = fs::path(out_dir) / ("run_" + name);
    std::cout << "[ablate] run " << name << "\n";
    Config diff_cfg = cfg;
    diff_cfg.train.stage = "diffusion";
    const TrainResult tr =
        cmd_train(diff_cfg, (run_dir / "train").string(), codec_tr.checkpoint_path, tg);
    for (const auto& cd : clip_dirs)
      cmd_generate(cfg, tr.checkpoint_path, cd,
                   (run_dir / "gen" / fs::path(cd).filename()).string());
    const EvaluateResult ev =
        cmd_evaluate(cfg, (run_dir / "gen").string(), cfg.data.root, (run_dir / "eval").string());
    res.runs.push_back({name, tg, ev.report, run_dir.string()});
  }

  const AblationRun& full = res.runs[0];
  const AblationRun& sem_only = res.runs[1];
  const AblationRun& ske_only = res.runs[2];
  res.appearance_table = pipedetail::ablation_table(
      "appearance encoder ablation (pose streams fixed: skeleton+auxiliary)", "semantic",
      "detail", sem_only, full);
  res.pose_table = pipedetail::ablation_table(
      "pose stream ablation (appearance fixed: semantic+detail)", "skeleton", "auxiliary",
      ske_only, full);

  std::ostringstream csv;
  csv << "# " << kProxyDisclaimer << "\n";
  csv << "run,semantic,detail,skeleton,auxiliary,fid,ssim,lpips,psnr,l1,fid_vid,fvd\n";
  for (const auto& run : res.runs) {
    csv << run.name << ",1," << (run.toggles.semantic_only ? 0 : 1) << ",1,"
        << (run.toggles.skeleton_only ? 0 : 1);
    const std::optional<double> vals[7] = {run.report.fid,  run.report.ssim, run.report.lpips,
                                           run.report.psnr, run.report.l1,   run.report.fid_vid,
                                           run.report.fvd};
    for (const auto& v : vals) csv << "," << detail::fmt_value(v, "%.17g");
    csv << "\n";
  }
  res.csv = csv.str();

  pipedetail::write_text_file((fs::path(out_dir) / "appearance_table.txt").string(),
                              res.appearance_table);
  pipedetail::write_text_file((fs::path(out_dir) / "pose_table.txt").string(), res.pose_table);
  pipedetail::write_text_file((fs::path(out_dir) / "ablation.csv").string(), res.csv);
  return res;
}

// ---------------------------------- stats ----------------------------------

struct StatsResult {
  std::map<int, int> histogram;  // frame count -> clip count
  int clip_count = 0;
  std::string text;
  std::string csv;
};

/// Frame-count histogram over the clips of a dataset root, as text bars and
/// CSV with integer bins (contiguous from min to max count).
inline StatsResult cmd_stats(const std::string& root, const std::string& out_dir = "") {
  const std::vector<std::string> dirs = list_clip_dirs(root);
  if (dirs.empty()) throw DataError("stats: no clips under " + root);

  StatsResult res;
  for (const auto& d : dirs) {
    std::ifstream f(std::filesystem::path(d) / "meta.json");
    if (!f) throw DataError("stats: missing meta.json in " + d);
    Json j;
    try {
      f >> j;
      res.histogram[j.at("n").get<int>()] += 1;
    } catch (const Json::exception& e) {
      throw DataError("stats: bad meta.json in " + d + ": " + e.what());
    }
    ++res.clip_count;
  }

  int maxc = 0;
  for (const auto& [frames, clips] : res.histogram) maxc = std::max(maxc, clips);
  const int lo = res.histogram.begin()->first;
  const int hi = res.histogram.rbegin()->first;
  std::ostringstream txt, csv;
  txt << "frame-count histogram over " << res.clip_count << " clip(s)\n";
  csv << "frames,clips\n";
  for (int n = lo; n <= hi; ++n) {
    const int c = res.histogram.count(n) ? res.histogram.at(n) : 0;
    const int bar = c == 0 ? 0 : std::max(1, (50 * c) / maxc);
    char line[96];
    std::snprintf(line, sizeof(line), "%6d | ", n);
    txt << line << std::string(static_cast<std::size_t>(bar), '#') << " (" << c << ")\n";
    csv << n << "," << c << "\n";
  }
  res.text = txt.str();
  res.csv = csv.str();

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    pipedetail::write_text_file((std::filesystem::path(out_dir) / "stats.txt").string(), res.text);
    pipedetail::write_text_file((std::filesystem::path(out_dir) / "stats.csv").string(), res.csv);
  }
  return res;
}

}  // namespace dancer
