#include "lmattack/cli/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lmattack/metrics.hpp"
#include "lmattack/rng.hpp"

namespace lmattack::cli {

using nlohmann::json;

const char* to_string(DatasetSource source) {
  switch (source) {
    case DatasetSource::kSynthetic: return "synthetic";
    case DatasetSource::kIsbi: return "isbi";
    case DatasetSource::kDirectory: return "dir";
  }
  return "?";
}

DatasetSource dataset_source_from_string(const std::string& name) {
  if (name == "synthetic") return DatasetSource::kSynthetic;
  if (name == "isbi") return DatasetSource::kIsbi;
  if (name == "dir") return DatasetSource::kDirectory;
  throw InvalidInput("unknown dataset source '" + name + "' (expected synthetic, isbi or dir)");
}

RunConfig RunConfig::for_preset(ModelPreset preset) {
  RunConfig c;
  c.preset = preset;
  if (preset == ModelPreset::kFull) {
    c.train = TrainConfig::full();
    c.preprocess = PreprocessSpec::isbi();
    c.dataset.source = DatasetSource::kIsbi;
    c.dataset.spacing_mm = kIsbiSpacingMm;
    c.dataset.synth_landmarks = 19;
  } else {
    c.train = TrainConfig::desk();
    c.preprocess = PreprocessSpec::desk();
  }
  return c;
}

namespace {

json to_json(const RunConfig& c) {
  const auto& t = c.train;
  const auto& a = c.attack;
  const auto& d = c.dataset;
  const auto& b = c.benchmark;
  return json{
      {"command", c.command},
      {"seed", c.seed},
      {"out_root", c.out_root},
      {"run_dir", c.run_dir},
      {"preset", to_string(c.preset)},
      {"dataset",
       {{"source", to_string(d.source)},
        {"path", d.path},
        {"synth_images", d.synth_images},
        {"synth_landmarks", d.synth_landmarks},
        {"synth_size", d.synth_size},
        {"train_count", d.train_count},
        {"eval_split", d.eval_split},
        {"spacing_mm", d.spacing_mm}}},
      {"preprocess",
       {{"width", c.preprocess.width},
        {"height", c.preprocess.height},
        {"channels", c.preprocess.channels},
        {"interpolation", "bilinear"}}},
      {"train",
       {{"alpha", t.alpha},
        {"learning_rate", t.learning_rate},
        {"lr_decay", t.lr_decay},
        {"lr_decay_every", t.lr_decay_every},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"sigma", t.sigma}}},
      {"codec_threshold", c.codec_threshold},
      {"attack",
       {{"epsilon", a.epsilon},
        {"eta", a.eta},
        {"iterations", a.iterations},
        {"adaptive", a.adaptive},
        {"trace_every", a.trace_every},
        {"level_scale", a.level_scale}}},
      {"benchmark",
       {{"images", b.images},
        {"attempts", b.attempts},
        {"iteration_grid", b.iteration_grid},
        {"epsilon_grid", b.epsilon_grid},
        {"adaptive", b.adaptive},
        {"compare_variants", b.compare_variants},
        {"curve_every", b.curve_every},
        {"threads", b.threads}}},
      {"checkpoint", c.checkpoint},
      {"image_id", c.image_id},
      {"targets", c.targets},
      {"benchmark_dir", c.benchmark_dir},
      {"attack_dir", c.attack_dir},
      {"isolation_all_attempts", c.isolation_all_attempts},
      {"magnification", c.magnification},
      {"upscale", c.upscale}};
}

template <typename T>
void take(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace

std::string to_json_text(const RunConfig& config) { return to_json(config).dump(2); }

void apply_json(RunConfig& c, const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("config is not valid JSON: ") + e.what());
  }
  try {
    take(j, "command", c.command);
    take(j, "seed", c.seed);
    take(j, "out_root", c.out_root);
    take(j, "run_dir", c.run_dir);
    if (j.contains("preset")) c.preset = preset_from_string(j.at("preset").get<std::string>());
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      if (d.contains("source")) c.dataset.source = dataset_source_from_string(d.at("source").get<std::string>());
      take(d, "path", c.dataset.path);
      take(d, "synth_images", c.dataset.synth_images);
      take(d, "synth_landmarks", c.dataset.synth_landmarks);
      take(d, "synth_size", c.dataset.synth_size);
      take(d, "train_count", c.dataset.train_count);
      take(d, "eval_split", c.dataset.eval_split);
      take(d, "spacing_mm", c.dataset.spacing_mm);
    }
    if (j.contains("preprocess")) {
      const json& p = j.at("preprocess");
      take(p, "width", c.preprocess.width);
      take(p, "height", c.preprocess.height);
      take(p, "channels", c.preprocess.channels);
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      take(t, "alpha", c.train.alpha);
      take(t, "learning_rate", c.train.learning_rate);
      take(t, "lr_decay", c.train.lr_decay);
      take(t, "lr_decay_every", c.train.lr_decay_every);
      take(t, "epochs", c.train.epochs);
      take(t, "batch_size", c.train.batch_size);
      take(t, "sigma", c.train.sigma);
    }
    take(j, "codec_threshold", c.codec_threshold);
    if (j.contains("attack")) {
      const json& a = j.at("attack");
      take(a, "epsilon", c.attack.epsilon);
      take(a, "eta", c.attack.eta);
      take(a, "iterations", c.attack.iterations);
      take(a, "adaptive", c.attack.adaptive);
      take(a, "trace_every", c.attack.trace_every);
      take(a, "level_scale", c.attack.level_scale);
    }
    if (j.contains("benchmark")) {
      const json& b = j.at("benchmark");
      take(b, "images", c.benchmark.images);
      take(b, "attempts", c.benchmark.attempts);
      take(b, "iteration_grid", c.benchmark.iteration_grid);
      take(b, "epsilon_grid", c.benchmark.epsilon_grid);
      take(b, "adaptive", c.benchmark.adaptive);
      take(b, "compare_variants", c.benchmark.compare_variants);
      take(b, "curve_every", c.benchmark.curve_every);
      take(b, "threads", c.benchmark.threads);
    }
    take(j, "checkpoint", c.checkpoint);
    take(j, "image_id", c.image_id);
    take(j, "targets", c.targets);
    take(j, "benchmark_dir", c.benchmark_dir);
    take(j, "attack_dir", c.attack_dir);
    take(j, "isolation_all_attempts", c.isolation_all_attempts);
    take(j, "magnification", c.magnification);
    take(j, "upscale", c.upscale);
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("malformed config: ") + e.what());
  }
  c.train.preset = c.preset;
}

std::string RunConfig::hash() const {
  json j = to_json(*this);
  j.erase("out_root");
  j.erase("run_dir");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(derive_seed(0, j.dump())));
  return buf;
}

std::filesystem::path RunConfig::resolved_run_dir() const {
  if (!run_dir.empty()) return run_dir;
  return std::filesystem::path(out_root) / (command + "-" + hash().substr(0, 12));
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  apply_json(base, buffer.str());
  return base;
}

void save_run_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << to_json_text(config) << '\n';
}

}  // namespace lmattack::cli
