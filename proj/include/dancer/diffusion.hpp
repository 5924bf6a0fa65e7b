#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dancer/aem.hpp"
#include "dancer/codec.hpp"
#include "dancer/config.hpp"
#include "dancer/denoiser.hpp"
#include "dancer/errors.hpp"
#include "dancer/optim.hpp"
#include "dancer/prm.hpp"
#include "dancer/rng.hpp"
#include "dancer/synth.hpp"
#include "dancer/tensor.hpp"

namespace dancer {

// ---------------------------------------------------------------------------
// Noise schedule, forward noising, reference-latent initialization, the
// deterministic sampling loop, and the noise-prediction training objective.
// ---------------------------------------------------------------------------

struct Schedule {
  int timesteps = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bar;  // strictly decreasing cumulative products
};

inline Schedule make_schedule(const DiffusionConfig& cfg) {
  if (cfg.timesteps < 2) throw DataError("schedule: need at least 2 timesteps");
  if (!(cfg.beta_start > 0.0) || !(cfg.beta_end < 1.0) || cfg.beta_start >= cfg.beta_end)
    throw DataError("schedule: betas must satisfy 0 < beta_start < beta_end < 1");
  Schedule s;
  s.timesteps = cfg.timesteps;
  s.betas.resize(static_cast<std::size_t>(cfg.timesteps));
  s.alphas.resize(s.betas.size());
  s.alpha_bar.resize(s.betas.size());
  double prod = 1.0;
  for (int t = 0; t < cfg.timesteps; ++t) {
    const double frac = static_cast<double>(t) / static_cast<double>(cfg.timesteps - 1);
    const double beta = cfg.beta_start + (cfg.beta_end - cfg.beta_start) * frac;
    s.betas[static_cast<std::size_t>(t)] = beta;
    s.alphas[static_cast<std::size_t>(t)] = 1.0 - beta;
    prod *= 1.0 - beta;
    s.alpha_bar[static_cast<std::size_t>(t)] = prod;
  }
  return s;
}

inline void check_timestep(const Schedule& s, int t, const char* who) {
  if (t < 0 || t >= s.timesteps)
    throw DataError(std::string(who) + ": timestep " + std::to_string(t) + " outside [0, " +
                    std::to_string(s.timesteps) + ")");
}

/// Closed-form forward noising: sqrt(ab_t) * k0 + sqrt(1 - ab_t) * noise.
inline Tensor q_sample(const Schedule& s, const Tensor& k0, int t, const Tensor& noise) {
  check_timestep(s, t, "q_sample");
  if (!(k0.shape == noise.shape))
    throw DimensionError("q_sample: latent " + shape_str(k0.shape) + " vs noise " +
                         shape_str(noise.shape));
  const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
  return add(mul_scalar(k0, static_cast<float>(std::sqrt(ab))),
             mul_scalar(noise, static_cast<float>(std::sqrt(1.0 - ab))));
}

/// State entering the reverse process: pure-noise frame latents plus the
/// once-per-generation noised reference latent.
struct LatentState {
  std::vector<Tensor> frames;
  Tensor ref_noised;
  int t = 0;  // timestep of the next model call
};

inline LatentState init_latents(const Schedule& s, const Tensor& ref_latent, int n,
                                double sigma_cond, std::uint64_t seed) {
  if (n < 1) throw DataError("init_latents: need at least one frame");
  if (sigma_cond < 0.0) throw DataError("init_latents: sigma_cond must be >= 0");
  LatentState st;
  Rng rng(mix_seed(seed, "init_latents"));
  NoGradGuard ng;
  st.frames.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) st.frames.push_back(Tensor::randn(ref_latent.shape, rng));
  st.ref_noised =
      add(ref_latent, mul_scalar(Tensor::randn(ref_latent.shape, rng),
                                 static_cast<float>(sigma_cond)));
  st.t = s.timesteps - 1;
  return st;
}

/// Uniformly strided descending sub-schedule: first entry T-1, last entry 0.
inline std::vector<int> sub_schedule(int timesteps, int steps) {
  if (steps < 1 || steps > timesteps)
    throw DataError("sampler: steps must lie in [1, " + std::to_string(timesteps) + "]");
  std::vector<int> ts(static_cast<std::size_t>(steps));
  if (steps == 1) {
    ts[0] = timesteps - 1;
    return ts;
  }
  for (int k = 0; k < steps; ++k)
    ts[static_cast<std::size_t>(k)] = static_cast<int>(std::lround(
        static_cast<double>(timesteps - 1) * static_cast<double>(steps - 1 - k) /
        static_cast<double>(steps - 1)));
  return ts;
}

/// Model callback for the sampler: (frame latents, reference latent, t) ->
/// predicted per-frame noise.
using DenoiseFn =
    std::function<std::vector<Tensor>(const std::vector<Tensor>&, const Tensor&, int)>;

/// Deterministic reverse process. At each sub-step the epsilon prediction is
/// converted to a clean-latent estimate and re-noised to the next level; the
/// final step lands on the clean estimate itself. No per-step noise is drawn.
inline std::vector<Tensor> sample_loop(const Schedule& s, LatentState state,
                                       const DenoiseFn& model, int steps) {
  if (state.frames.empty()) throw DataError("sampler: empty latent state");
  const std::vector<int> ts = sub_schedule(s.timesteps, steps);
  NoGradGuard ng;
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const int t = ts[k];
    const std::vector<Tensor> eps = model(state.frames, state.ref_noised, t);
    if (eps.size() != state.frames.size())
      throw DimensionError("sampler: model returned " + std::to_string(eps.size()) +
                           " frames, expected " + std::to_string(state.frames.size()));
    const double ab_t = s.alpha_bar[static_cast<std::size_t>(t)];
    const double ab_prev = (k + 1 < ts.size())
                               ? s.alpha_bar[static_cast<std::size_t>(ts[k + 1])]
                               : 1.0;
    const float to_z0 = static_cast<float>(1.0 / std::sqrt(ab_t));
    const float noise_t = static_cast<float>(-std::sqrt(1.0 - ab_t));
    const float keep = static_cast<float>(std::sqrt(ab_prev));
    const float renoise = static_cast<float>(std::sqrt(1.0 - ab_prev));
    for (std::size_t i = 0; i < state.frames.size(); ++i) {
      const Tensor z0 =
          mul_scalar(add(state.frames[i], mul_scalar(eps[i], noise_t)), to_z0);
      Tensor next = add(mul_scalar(z0, keep), mul_scalar(eps[i], renoise));
      for (std::size_t j = 0; j < next.numel(); ++j)
        if (!std::isfinite(next.at(j)))
          throw NumericalError("sampler: non-finite latent at step " + std::to_string(k) +
                               " (t=" + std::to_string(t) + ")");
      state.frames[i] = next;
    }
    state.t = (k + 1 < ts.size()) ? ts[k + 1] : 0;
  }
  return state.frames;
}

/// Convenience wrapper running the real denoiser under fixed conditions.
inline std::vector<Tensor> sample_video(ParamStore& ps, const DenoiserModel& den,
                                        const Schedule& sched, const Tensor& ref_latent,
                                        const Tensor& c_app, const std::vector<Tensor>& c_pose,
                                        int steps, double sigma_cond, std::uint64_t seed) {
  LatentState st = init_latents(sched, ref_latent, static_cast<int>(c_pose.size()), sigma_cond,
                                seed);
  const DenoiseFn fn = [&](const std::vector<Tensor>& frames, const Tensor& ref, int t) {
    return den.forward(ps, frames, ref, c_app, c_pose, t);
  };
  return sample_loop(sched, std::move(st), fn, steps);
}

/// Mean squared error between predicted and injected noise, averaged over
/// frames, positions and channels.
inline Tensor noise_mse(const std::vector<Tensor>& pred, const std::vector<Tensor>& target) {
  if (pred.empty() || pred.size() != target.size())
    throw DimensionError("noise_mse: frame count mismatch");
  Tensor acc = mean_all(square(sub(pred[0], target[0])));
  for (std::size_t i = 1; i < pred.size(); ++i)
    acc = add(acc, mean_all(square(sub(pred[i], target[i]))));
  return mul_scalar(acc, 1.0f / static_cast<float>(pred.size()));
}

/// Model callback for training: (noisy latents, noised reference latent,
/// appearance tokens, pose grids, t) -> predicted per-frame noise.
using CondDenoiseFn = std::function<std::vector<Tensor>(
    const std::vector<Tensor>&, const Tensor&, const Tensor&, const std::vector<Tensor>&, int)>;

/// Consecutive-window view of a clip: frames/pose rows [start, start+count)
/// plus the count+1 keypoint rows the pose stream needs.
inline ClipSample clip_window(const ClipSample& clip, std::size_t start, std::size_t count) {
  if (count < 1 || start + count > clip.frames.size())
    throw DataError("clip_window: window [" + std::to_string(start) + ", " +
                    std::to_string(start + count) + ") outside clip of " +
                    std::to_string(clip.frames.size()) + " frames");
  ClipSample w;
  w.ref = clip.ref;
  w.ref_keypoints = clip.ref_keypoints;
  w.frames.assign(clip.frames.begin() + static_cast<std::ptrdiff_t>(start),
                  clip.frames.begin() + static_cast<std::ptrdiff_t>(start + count));
  w.pose.assign(clip.pose.begin() + static_cast<std::ptrdiff_t>(start),
                clip.pose.begin() + static_cast<std::ptrdiff_t>(start + count));
  w.traj.assign(clip.traj.begin() + static_cast<std::ptrdiff_t>(start),
                clip.traj.begin() + static_cast<std::ptrdiff_t>(start + count + 1));
  w.seed = clip.seed;
  w.n = static_cast<int>(count);
  w.size = clip.size;
  w.jitter = clip.jitter;
  return w;
}

/// One-sample noise-prediction loss with a pluggable predictor. Draws, in
/// order: the window start, the timestep, the reference corruption, then one
/// noise tensor per frame. Codec encodings never join the tape.
inline Tensor training_loss_with(ParamStore& ps, const CodecModel& codec, const AemModel& aem,
                                 const PrmModel& prm, const CondDenoiseFn& predict,
                                 const Schedule& sched, const ClipSample& clip, int batch_frames,
                                 double sigma_cond, int smoothing_window, Rng& rng) {
  const std::size_t avail = clip.frames.size();
  if (batch_frames < 1) throw DataError("training_loss: batch_frames must be >= 1");
  if (avail < static_cast<std::size_t>(batch_frames))
    throw DataError("training_loss: clip has " + std::to_string(avail) +
                    " frames, need " + std::to_string(batch_frames));
  const std::size_t start = rng.uniform_index(avail - static_cast<std::size_t>(batch_frames) + 1);
  const ClipSample window = clip_window(clip, start, static_cast<std::size_t>(batch_frames));
  const int t = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(sched.timesteps)));

  const Tensor c_app = aem.forward(ps, clip.ref);
  const std::vector<Tensor> c_pose = prm.render_sequence(ps, window, smoothing_window);

  Tensor ref_noised;
  std::vector<Tensor> noisy, eps;
  {
    NoGradGuard ng;
    const Tensor ref_latent = codec.encode(ps, clip.ref);
    ref_noised = add(ref_latent, mul_scalar(Tensor::randn(ref_latent.shape, rng),
                                            static_cast<float>(sigma_cond)));
    for (const Tensor& frame : window.frames) {
      const Tensor k0 = codec.encode(ps, frame);
      Tensor e = Tensor::randn(k0.shape, rng);
      noisy.push_back(q_sample(sched, k0, t, e));
      eps.push_back(std::move(e));
    }
  }
  const std::vector<Tensor> pred = predict(noisy, ref_noised, c_app, c_pose, t);
  return noise_mse(pred, eps);
}

/// The trainable submodels viewed together.
struct ModelRefs {
  const CodecModel& codec;
  const AemModel& aem;
  const PrmModel& prm;
  const DenoiserModel& den;
};

inline Tensor training_loss(ParamStore& ps, const ModelRefs& m, const Schedule& sched,
                            const ClipSample& clip, int batch_frames, double sigma_cond,
                            int smoothing_window, Rng& rng) {
  const CondDenoiseFn fn = [&ps, &m](const std::vector<Tensor>& noisy, const Tensor& ref,
                                     const Tensor& c_app, const std::vector<Tensor>& c_pose,
                                     int t) { return m.den.forward(ps, noisy, ref, c_app, c_pose, t); };
  return training_loss_with(ps, m.codec, m.aem, m.prm, fn, sched, clip, batch_frames, sigma_cond,
                            smoothing_window, rng);
}

/// Second-stage training: denoiser + pose + appearance update while the codec
/// stays frozen (bit-identical). Per-step seeding makes interrupted runs
/// resumable; the codec freeze is restored to trainable on exit.
inline std::vector<TrainLogEntry> train_diffusion(
    ParamStore& ps, const ModelRefs& m, const Schedule& sched,
    const std::vector<ClipSample>& clips, int steps, double lr, int batch_frames,
    double sigma_cond, int smoothing_window, std::uint64_t seed, Adam& opt, int first_step = 0) {
  if (clips.empty()) throw DataError("train_diffusion: empty dataset");
  ps.set_trainable("codec.", false);
  opt.set_lr(static_cast<float>(lr));
  std::vector<TrainLogEntry> log;
  for (int step = first_step; step < steps; ++step) {
    Rng rng(mix_seed(seed, "diff_step_" + std::to_string(step)));
    const ClipSample& clip = clips[rng.uniform_index(clips.size())];
    const auto t0 = std::chrono::steady_clock::now();
    ps.zero_grad();
    Tensor loss =
        training_loss(ps, m, sched, clip, batch_frames, sigma_cond, smoothing_window, rng);
    const double lv = static_cast<double>(loss.value());
    if (!std::isfinite(lv)) {
      ps.set_trainable("codec.", true);
      throw NumericalError("train_diffusion: non-finite loss at step " + std::to_string(step));
    }
    backward(loss);
    opt.step(ps);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    log.push_back({step, lv, lr, ms});
  }
  ps.set_trainable("codec.", true);
  return log;
}

}  // namespace dancer
