#include <CLI11.hpp>

#include <ostream>

#include "lmattack/cli/commands.hpp"

namespace lmattack::cli {

namespace {

/// Value of `--name value` / `--name=value` anywhere in the arguments.
std::optional<std::string> find_flag(const std::vector<std::string>& args, const std::string& name) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == name && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind(name + "=", 0) == 0) return args[i].substr(name.size() + 1);
  }
  return std::nullopt;
}

/// Defaults come from the preset, then the config file, then explicit flags.
RunConfig base_config(const std::vector<std::string>& args) {
  std::optional<std::string> preset = find_flag(args, "--preset");
  const std::optional<std::string> file = find_flag(args, "--config");
  if (!preset && file) {
    const RunConfig probe = load_run_config(*file, RunConfig{});
    preset = to_string(probe.preset);
  }
  RunConfig config = RunConfig::for_preset(preset ? preset_from_string(*preset) : ModelPreset::kDesk);
  if (file) config = load_run_config(*file, config);
  if (preset) config.preset = preset_from_string(*preset);
  return config;
}

void add_common(CLI::App* cmd, RunConfig& c, std::string& preset_name, std::string& config_file, bool& dry_run) {
  cmd->add_flag("--dry-run", dry_run, "print the resolved config and exit");
  cmd->add_option("--config", config_file, "JSON run config; explicit flags override it");
  cmd->add_option("--preset", preset_name, "desk or full")->check(CLI::IsMember({"desk", "full"}));
  cmd->add_option("--seed", c.seed, "root seed for every random stream");
  cmd->add_option("--out", c.out_root, "parent of the run directory");
  cmd->add_option("--run-dir", c.run_dir, "explicit run directory");
}

void add_dataset(CLI::App* cmd, RunConfig& c, std::string& source) {
  cmd->add_option("--dataset", source, "synthetic, isbi or dir")->check(CLI::IsMember({"synthetic", "isbi", "dir"}));
  cmd->add_option("--data-path", c.dataset.path, "ISBI root or saved dataset directory");
  cmd->add_option("--synth-images", c.dataset.synth_images, "images in a synthetic dataset");
  cmd->add_option("--synth-landmarks", c.dataset.synth_landmarks, "landmarks per synthetic image");
  cmd->add_option("--synth-size", c.dataset.synth_size, "side of a synthetic image in pixels");
  cmd->add_option("--train-count", c.dataset.train_count, "training images of a synthetic or dir dataset");
  cmd->add_option("--split", c.dataset.eval_split, "evaluation split")->check(CLI::IsMember({"test1", "test2", "train"}));
  cmd->add_option("--spacing-mm", c.dataset.spacing_mm, "original-frame pixel spacing");
  cmd->add_option("--width", c.preprocess.width, "network input width");
  cmd->add_option("--height", c.preprocess.height, "network input height");
  cmd->add_option("--channels", c.preprocess.channels, "network input channels");
}

void add_attack(CLI::App* cmd, RunConfig& c) {
  cmd->add_option("--checkpoint", c.checkpoint, "trained model (model.ckpt of a train run)")->check(CLI::ExistingFile);
  cmd->add_option("--epsilon", c.attack.epsilon, "L-inf budget in intensity levels");
  cmd->add_option("--eta", c.attack.eta, "step size in normalized units");
  cmd->add_option("--iterations", c.attack.iterations, "FGSM iterations");
  cmd->add_option("--level-scale", c.attack.level_scale, "normalized units per intensity level");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig c;
  try {
    c = base_config(args);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  std::string preset_name = to_string(c.preset);
  std::string source = to_string(c.dataset.source);
  std::string config_file;  // consumed by base_config
  bool dry_run = false;

  CLI::App app{"Adversarial attacks on heatmap landmark detectors"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train a detector and report held-out detection error");
  add_common(train, c, preset_name, config_file, dry_run);
  add_dataset(train, c, source);
  train->add_option("--epochs", c.train.epochs, "training epochs");
  train->add_option("--batch-size", c.train.batch_size, "images per Adam step");
  train->add_option("--lr", c.train.learning_rate, "initial Adam learning rate");
  train->add_option("--lr-decay", c.train.lr_decay, "learning-rate multiplier per decay step");
  train->add_option("--lr-decay-every", c.train.lr_decay_every, "epochs between decay steps");
  train->add_option("--alpha", c.train.alpha, "heatmap loss weight");
  train->add_option("--sigma", c.train.sigma, "heatmap Gaussian width");

  auto* detect = app.add_subcommand("detect", "predict landmarks on a split and report errors");
  add_common(detect, c, preset_name, config_file, dry_run);
  add_dataset(detect, c, source);
  detect->add_option("--checkpoint", c.checkpoint, "trained model (model.ckpt of a train run)")->check(CLI::ExistingFile);

  auto* attack = app.add_subcommand("attack", "generate one adversarial example");
  add_common(attack, c, preset_name, config_file, dry_run);
  add_dataset(attack, c, source);
  add_attack(attack, c);
  attack->add_flag("--adaptive,!--no-adaptive", c.attack.adaptive, "ATI-FGSM instead of TI-FGSM");
  attack->add_option("--image", c.image_id, "image id (default: first evaluation image)");
  attack->add_option("--targets", c.targets, "target spec JSON (default: random draw)")->check(CLI::ExistingFile);
  attack->add_option("--trace-every", c.attack.trace_every, "record a trace point every N iterations (0 = off)");
  attack->add_option("--magnification", c.magnification, "perturbation magnification in the figure");
  attack->add_option("--upscale", c.upscale, "figure upscaling factor");

  auto* bench = app.add_subcommand("benchmark", "random-target sweep over iteration and epsilon grids");
  add_common(bench, c, preset_name, config_file, dry_run);
  add_dataset(bench, c, source);
  add_attack(bench, c);
  bench->add_option("--images", c.benchmark.images, "evaluation images to attack");
  bench->add_option("--attempts", c.benchmark.attempts, "random target specs per image");
  bench->add_option("--iteration-grid", c.benchmark.iteration_grid, "comma-separated iteration counts")->delimiter(',');
  bench->add_option("--epsilon-grid", c.benchmark.epsilon_grid, "comma-separated budgets in intensity levels")->delimiter(',');
  bench->add_flag("--adaptive,!--no-adaptive", c.benchmark.adaptive, "grid variant (default ATI-FGSM)");
  bench->add_flag("--compare-variants,!--no-compare-variants", c.benchmark.compare_variants, "also run the other FGSM variant for the loss curves");
  bench->add_option("--curve-every", c.benchmark.curve_every, "loss-curve sampling interval in iterations");
  bench->add_option("--threads", c.benchmark.threads, "0 = all cores");

  auto* isolation = app.add_subcommand("isolation", "degree of isolation vs attack error");
  add_common(isolation, c, preset_name, config_file, dry_run);
  isolation->add_option("--benchmark-dir", c.benchmark_dir, "run directory of a benchmark")->required()->check(CLI::ExistingDirectory);
  isolation->add_flag("--all-attempts", c.isolation_all_attempts, "average over all attempts, not only targeted ones");

  auto* visualize = app.add_subcommand("visualize", "render the three-panel figure of an attack run");
  add_common(visualize, c, preset_name, config_file, dry_run);
  visualize->add_option("--attack-dir", c.attack_dir, "run directory of an attack")->required()->check(CLI::ExistingDirectory);
  visualize->add_option("--magnification", c.magnification, "perturbation magnification in the figure");
  visualize->add_option("--upscale", c.upscale, "figure upscaling factor");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    c.preset = preset_from_string(preset_name);
    c.train.preset = c.preset;
    c.dataset.source = dataset_source_from_string(source);
    CLI::App* chosen = app.get_subcommands().front();
    c.command = chosen->get_name();
    if (dry_run) {
      out << to_json_text(c) << '\n';
      return 0;
    }
    if (c.command == "train") {
      cmd_train(c, out);
    } else if (c.command == "detect") {
      cmd_detect(c, out);
    } else if (c.command == "attack") {
      cmd_attack(c, out);
    } else if (c.command == "benchmark") {
      cmd_benchmark(c, out);
    } else if (c.command == "isolation") {
      cmd_isolation(c, out);
    } else {
      cmd_visualize(c, out);
    }
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "failed: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace lmattack::cli
