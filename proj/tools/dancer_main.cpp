// Command-line driver: synth | train | generate | evaluate | ablate | stats.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical divergence.
#include <CLI11.hpp>

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include "dancer/config.hpp"
#include "dancer/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

dancer::Config resolve_config(const CommonArgs& a) {
  dancer::Config cfg =
      a.config_path.empty() ? dancer::Config{} : dancer::load_config(a.config_path);
  if (a.seed_set) cfg.seed = a.seed;
  return cfg;
}

void add_common(CLI::App* sub, CommonArgs& a) {
  sub->add_option("--config", a.config_path,
                  "JSON config file; documented defaults apply when omitted");
  sub->add_option("--seed", a.seed, "master seed (overrides the config's seed)")
      ->each([&a](const std::string&) { a.seed_set = true; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pose-guided synthetic-dancer video diffusion toolkit"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string out_dir, checkpoint, stage_flag, source_clip, ref_image, generated_dir,
      reference_dir, dataset_root;

  auto* synth = app.add_subcommand("synth", "write the synthetic clip dataset plus its manifest");
  add_common(synth, common);
  synth->add_option("--out", out_dir, "dataset root (overrides the config's data.root)");
  synth->callback([&] {
    dancer::Config cfg = resolve_config(common);
    if (!out_dir.empty()) cfg.data.root = out_dir;
    const auto r = dancer::cmd_synth(cfg);
    std::cout << "wrote " << r.manifest.seeds.size() << " clip(s) of " << r.manifest.n
              << " frame(s) at " << r.manifest.size << "px under " << r.root << "\n";
  });

  auto* train = app.add_subcommand("train", "run one training stage (codec, then diffusion)");
  add_common(train, common);
  train->add_option("--out", out_dir, "run directory for checkpoint + logs")->required();
  train->add_option("--stage", stage_flag, "codec | diffusion (overrides the config's stage)");
  train->add_option("--checkpoint", checkpoint,
                    "checkpoint to resume from, or the codec checkpoint the diffusion stage "
                    "builds on");
  train->callback([&] {
    dancer::Config cfg = resolve_config(common);
    if (!stage_flag.empty()) cfg.train.stage = stage_flag;
    std::cout << "[train] threads " << dancer::effective_threads(cfg) << "\n";
    const auto r = dancer::cmd_train(cfg, out_dir, checkpoint);
    std::cout << "stage " << r.stage << " finished at step " << r.final_step << "; checkpoint "
              << r.checkpoint_path << "\n";
  });

  auto* gen = app.add_subcommand(
      "generate", "sample a video for a source clip's poses and a reference image");
  add_common(gen, common);
  gen->add_option("--checkpoint", checkpoint, "diffusion-stage checkpoint")->required();
  gen->add_option("--out", out_dir, "output frame directory")->required();
  gen->add_option("source", source_clip, "source clip directory (provides the pose stream)")
      ->required();
  gen->add_option("reference", ref_image,
                  "reference image PNG (defaults to the source clip's own)");
  gen->callback([&] {
    dancer::Config cfg;
    if (common.config_path.empty()) {
      cfg = dancer::load_bundle(checkpoint).meta.config;  // reuse the training config
      if (common.seed_set) cfg.seed = common.seed;
    } else {
      cfg = resolve_config(common);
    }
    const auto r = dancer::cmd_generate(cfg, checkpoint, source_clip, out_dir, ref_image);
    std::cout << "wrote " << r.frames << " frame(s) under " << r.out_dir << "\n";
  });

  auto* eval = app.add_subcommand("evaluate", "score generated clips against reference clips");
  add_common(eval, common);
  eval->add_option("--out", out_dir, "report directory")->required();
  eval->add_option("generated", generated_dir, "generated clip directory or set root")
      ->required();
  eval->add_option("reference", reference_dir, "reference clip directory or set root")
      ->required();
  eval->callback([&] {
    const dancer::Config cfg = resolve_config(common);
    const auto r = dancer::cmd_evaluate(cfg, generated_dir, reference_dir, out_dir);
    std::cout << dancer::report_text(r.report);
    for (const auto& n : r.notes) std::cout << "note: " << n << "\n";
    std::cout << "report written to " << r.report_txt_path << "\n";
  });

  auto* ablate = app.add_subcommand(
      "ablate", "four matched runs toggling the detail and auxiliary-pose streams");
  add_common(ablate, common);
  ablate->add_option("--out", out_dir, "ablation output directory")->required();
  ablate->callback([&] {
    const dancer::Config cfg = resolve_config(common);
    std::cout << "[ablate] threads " << dancer::effective_threads(cfg) << "\n";
    const auto r = dancer::cmd_ablate(cfg, out_dir);
    std::cout << r.appearance_table << "\n" << r.pose_table;
    std::cout << "tables and per-run reports written under " << r.out_dir << "\n";
  });

  auto* stats = app.add_subcommand("stats", "frame-count histogram over a dataset root");
  stats->add_option("root", dataset_root, "dataset root directory")->required();
  stats->add_option("--out", out_dir, "also write stats.txt / stats.csv here");
  stats->callback([&] {
    const auto r = dancer::cmd_stats(dataset_root, out_dir);
    std::cout << r.text;
  });

  try {
    app.parse(argc, argv);
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the parse problem
    return code == 0 ? 0 : 1;
  } catch (const dancer::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const dancer::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const dancer::DimensionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
