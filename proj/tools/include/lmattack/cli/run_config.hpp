#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lmattack/attack.hpp"
#include "lmattack/data_io.hpp"
#include "lmattack/detector.hpp"

namespace lmattack::cli {

enum class DatasetSource { kSynthetic, kIsbi, kDirectory };

const char* to_string(DatasetSource source);
DatasetSource dataset_source_from_string(const std::string& name);

struct DatasetOptions {
  DatasetSource source = DatasetSource::kSynthetic;
  std::string path;             // ISBI root or saved dataset directory
  int synth_images = 250;
  int synth_landmarks = 8;
  int synth_size = 128;
  int train_count = 200;        // synthetic / directory split point
  std::string eval_split = "test1";
  double spacing_mm = 1.0;      // original-frame pixel spacing
};

struct BenchmarkOptions {
  int images = 10;
  int attempts = 2;                               // random target specs per image
  std::vector<int> iteration_grid = {20, 50, 100, 300};
  std::vector<double> epsilon_grid = {1, 2, 4, 8};
  bool adaptive = true;                           // grid variant: ATI-FGSM by default
  bool compare_variants = true;                   // also run the other FGSM variant at max epsilon
  int curve_every = 10;
  int threads = 1;                                // 0 = hardware concurrency
};

/// Everything a command needs. Serialized to config.json in every run
/// directory; re-running from that file reproduces the outputs.
struct RunConfig {
  std::string command;
  std::uint64_t seed = 0;
  std::string out_root = "runs";
  std::string run_dir;          // overrides out_root/<command>-<hash>

  ModelPreset preset = ModelPreset::kDesk;
  DatasetOptions dataset;
  PreprocessSpec preprocess = PreprocessSpec::desk();
  TrainConfig train = TrainConfig::desk();
  double codec_threshold = 0.6;
  AttackConfig attack;
  BenchmarkOptions benchmark;

  std::string checkpoint;
  std::string image_id;         // attack: image to perturb (default: first eval image)
  std::string targets;          // attack: target spec file (default: random draw)
  std::string benchmark_dir;    // isolation input
  std::string attack_dir;       // visualize input
  bool isolation_all_attempts = false;
  double magnification = 8.0;
  int upscale = 4;

  /// Preset-dependent defaults for everything but the command and seed.
  static RunConfig for_preset(ModelPreset preset);

  /// Hex digest of the reproducibility-relevant fields.
  std::string hash() const;
  std::filesystem::path resolved_run_dir() const;
  CodecConfig codec() const { return CodecConfig{train.sigma, codec_threshold}; }
};

std::string to_json_text(const RunConfig& config);
/// Overlays the keys present in `json_text` onto `config`.
void apply_json(RunConfig& config, const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base);
void save_run_config(const RunConfig& config, const std::filesystem::path& path);

}  // namespace lmattack::cli
