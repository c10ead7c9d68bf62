#include <algorithm>
#include <fstream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "command_support.hpp"
#include "lmattack/cli/commands.hpp"
#include "lmattack/rng.hpp"

namespace lmattack::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// Data ------------------------------------------------------------------------------

std::vector<DatasetRecord> load_records(const RunConfig& config) {
  const DatasetOptions& d = config.dataset;
  std::vector<DatasetRecord> records;
  switch (d.source) {
    case DatasetSource::kSynthetic: {
      SynthConfig synth;
      synth.images = d.synth_images;
      synth.landmarks = d.synth_landmarks;
      synth.size = d.synth_size;
      auto rng = make_stream(config.seed, "dataset");
      records = synth_dataset(rng, synth);
      assign_splits(records, static_cast<std::size_t>(std::max(0, d.train_count)));
      break;
    }
    case DatasetSource::kIsbi:
      if (d.path.empty()) throw InvalidInput("the isbi dataset needs --data-path");
      records = load_isbi(d.path);
      break;
    case DatasetSource::kDirectory:
      if (d.path.empty()) throw InvalidInput("the dir dataset needs --data-path");
      records = load_dataset(d.path);
      break;
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const DatasetRecord& a, const DatasetRecord& b) { return a.image_id < b.image_id; });
  return records;
}

PreparedData prepare_data(const RunConfig& config) {
  const Split eval_split = split_from_string(config.dataset.eval_split);
  PreparedData out;
  for (const DatasetRecord& r : load_records(config)) {
    if (r.split == Split::kTrain) {
      out.train.push_back(preprocess(r, config.preprocess));
    } else if (r.split == eval_split) {
      out.eval.push_back(preprocess(r, config.preprocess));
    }
  }
  return out;
}

EvalReport evaluate_detection(const DetectorModel& model, const std::vector<PreprocessedSample>& samples,
                              double spacing_mm, std::uint64_t seed) {
  EvalReport report;
  report.meta.seed = seed;
  report.meta.label = "detection";
  for (const PreprocessedSample& s : samples) {
    const LandmarkSet pred = predict_landmarks(model, s.image);
    const auto errors = radial_error(pred, s.landmarks, spacing_mm, s.scale);
    for (std::size_t k = 0; k < errors.size(); ++k) {
      report.rows.push_back({s.image_id, 0, static_cast<int>(k) + 1, Cohort::kDetection, errors[k]});
    }
  }
  return report;
}

// Shared helpers ----------------------------------------------------------------------

fs::path prepare_run_dir(const RunConfig& config, std::ostream& log) {
  const fs::path dir = config.resolved_run_dir();
  fs::create_directories(dir);
  save_run_config(config, dir / "config.json");
  log << config.command << ": writing to " << dir.string() << '\n';
  return dir;
}

DetectorModel load_model(const RunConfig& config) {
  if (config.checkpoint.empty()) throw InvalidInput(config.command + " needs --checkpoint");
  return load_checkpoint(config.checkpoint);
}

void check_model_matches(const DetectorModel& model, const PreprocessedSample& sample) {
  if (model.arch().landmarks != static_cast<int>(sample.landmarks.size())) {
    throw InvalidInput("checkpoint predicts " + std::to_string(model.arch().landmarks) + " landmarks but the dataset has " +
                       std::to_string(sample.landmarks.size()));
  }
  if (model.arch().in_channels != sample.image.channels) {
    throw InvalidInput("checkpoint expects " + std::to_string(model.arch().in_channels) + " input channels");
  }
}

json points_json(const LandmarkSet& set) {
  json arr = json::array();
  for (const Point& p : set.points) arr.push_back({p.x, p.y});
  return arr;
}

LandmarkSet points_from_json(const json& arr, Frame frame, int width, int height) {
  LandmarkSet set;
  set.frame = frame;
  set.width = width;
  set.height = height;
  for (const json& p : arr) set.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return set;
}

json aggregate_json(const Aggregate& a) {
  json sdr;
  for (std::size_t r = 0; r < kSdrRadiiMm.size(); ++r) sdr[radius_key(kSdrRadiiMm[r])] = a.sdr[r];
  return json{{"count", a.count}, {"mre_mm", a.mre}, {"medre_mm", a.medre}, {"sdr_percent", sdr}};
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidInput("malformed " + path.string() + ": " + e.what());
  }
}

// train -------------------------------------------------------------------------------

TrainOutcome cmd_train(const RunConfig& config, std::ostream& log) {
  TrainConfig train_config = config.train;
  train_config.preset = config.preset;
  train_config.seed = derive_seed(config.seed, "training");
  train_config.validate();

  const PreparedData data = prepare_data(config);
  if (data.train.empty()) throw InvalidInput("the training split is empty");
  TrainOutcome out;
  out.run_dir = prepare_run_dir(config, log);
  if (config.dataset.source == DatasetSource::kSynthetic) save_dataset(load_records(config), out.run_dir / "dataset");

  std::vector<TrainingSample> samples;
  samples.reserve(data.train.size());
  for (const PreprocessedSample& s : data.train) samples.push_back({s.image, s.landmarks});
  const ArchSpec arch =
      arch_for_preset(config.preset, static_cast<int>(samples.front().landmarks.size()), config.preprocess.channels);
  log << "training " << samples.size() << " images, " << train_config.epochs << " epochs\n";
  DetectorModel model = train(samples, train_config, arch, [&](const EpochStats& e) {
    out.epochs.push_back(e);
    log << "  epoch " << e.epoch + 1 << '/' << train_config.epochs << "  loss " << e.mean_loss << "  lr "
        << e.learning_rate << '\n';
  });
  model.set_train_config(train_config);
  out.checkpoint = out.run_dir / "model.ckpt";
  save_checkpoint(model, out.checkpoint);

  json history = json::array();
  for (const EpochStats& e : out.epochs) {
    history.push_back({{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"learning_rate", e.learning_rate}});
  }
  write_json(history, out.run_dir / "training_log.json");

  out.report = evaluate_detection(model, data.eval, config.dataset.spacing_mm, config.seed);
  out.report.write_csv(out.run_dir / "detection_errors.csv");
  out.report.write_summary_json(out.run_dir / "detection_summary.json");
  if (const auto s = out.report.summary(Cohort::kDetection)) {
    log << "held-out " << config.dataset.eval_split << ": MRE " << s->mre << " mm, MedRE " << s->medre
        << " mm, SDR@4mm " << s->sdr_at(4.0) << "%\n";
  }
  return out;
}

// detect ------------------------------------------------------------------------------

DetectOutcome cmd_detect(const RunConfig& config, std::ostream& log) {
  const DetectorModel model = load_model(config);
  const PreparedData data = prepare_data(config);
  if (data.eval.empty()) throw InvalidInput("split '" + config.dataset.eval_split + "' is empty");
  check_model_matches(model, data.eval.front());
  DetectOutcome out;
  out.run_dir = prepare_run_dir(config, log);

  json predictions = json::array();
  for (const PreprocessedSample& s : data.eval) {
    const LandmarkSet pred = to_original_frame(predict_landmarks(model, s.image), s.scale,
                                               static_cast<int>(std::lround(s.image.width * s.scale.sx)),
                                               static_cast<int>(std::lround(s.image.height * s.scale.sy)));
    predictions.push_back({{"image_id", s.image_id}, {"landmarks", points_json(pred)}});
  }
  write_json(predictions, out.run_dir / "predictions.json");
  out.report = evaluate_detection(model, data.eval, config.dataset.spacing_mm, config.seed);
  out.report.write_csv(out.run_dir / "detection_errors.csv");
  out.report.write_summary_json(out.run_dir / "detection_summary.json");
  if (const auto s = out.report.summary(Cohort::kDetection)) {
    log << config.dataset.eval_split << ": MRE " << s->mre << " mm, MedRE " << s->medre << " mm\n";
  }
  return out;
}

// attack ------------------------------------------------------------------------------

AttackOutcome cmd_attack(const RunConfig& config, std::ostream& log) {
  const DetectorModel model = load_model(config);
  AttackConfig attack = config.attack;
  attack.alpha = model.train_config().alpha;
  attack.validate();

  std::optional<TargetSpec> file_spec;
  std::string image_id = config.image_id;
  if (!config.targets.empty()) {
    file_spec = load_target_spec(config.targets, model.arch().landmarks);
    if (image_id.empty()) image_id = file_spec->image_id;
  }

  const PreparedData data = prepare_data(config);
  std::vector<PreprocessedSample> pool = data.eval;
  pool.insert(pool.end(), data.train.begin(), data.train.end());
  if (pool.empty()) throw InvalidInput("the dataset is empty");
  const auto it = image_id.empty() ? pool.begin()
                                   : std::find_if(pool.begin(), pool.end(),
                                                  [&](const PreprocessedSample& s) { return s.image_id == image_id; });
  if (it == pool.end()) throw InvalidInput("no image '" + image_id + "' in the dataset");
  const PreprocessedSample& sample = *it;
  check_model_matches(model, sample);

  AttackOutcome out;
  if (file_spec) {
    out.spec = *file_spec;
  } else {
    auto rng = make_stream(config.seed, "targets/" + sample.image_id);
    out.spec = random_target_spec(rng, model.arch().landmarks,
                                  TargetRect::scaled_to(sample.image.width, sample.image.height),
                                  predict_landmarks(model, sample.image));
  }
  out.spec.image_id = sample.image_id;
  out.spec.validate(model.arch().landmarks, sample.image.width, sample.image.height);
  out.run_dir = prepare_run_dir(config, log);

  log << (attack.adaptive ? "ATI-FGSM" : "TI-FGSM") << " on " << sample.image_id << ": " << out.spec.targeted.size()
      << " targeted, " << out.spec.stationary.size() << " stationary, eps " << attack.epsilon << ", "
      << attack.iterations << " iterations\n";
  out.result = run_attack(model, sample.image, out.spec, attack, model.codec());
  out.check = check_constraints(out.result.adversarial, sample.image, attack.epsilon_normalized());
  if (!out.check.ok()) {
    throw RuntimeFailure("adversarial image violates the constraints (" + std::to_string(out.check.budget_violations) +
                         " budget, " + std::to_string(out.check.range_violations) + " range)");
  }

  write_float_tiff(sample.image, out.run_dir / "input.tiff");
  write_float_tiff(out.result.adversarial, out.run_dir / "adversarial.tiff");
  write_png(to_gray8(sample.image), out.run_dir / "input.png");
  write_png(to_gray8(out.result.adversarial), out.run_dir / "adversarial.png");
  save_target_spec(out.spec, out.run_dir / "targets.json");
  write_attack_trace(out.result, out.spec, attack, out.run_dir / "trace.json");
  export_visualization(sample.image, out.result.adversarial, out.result.clean_prediction, out.result.final_prediction,
                       out.spec, out.run_dir / "visualization.png", config.magnification, config.upscale);

  const AttackErrors errors = attack_errors(out.result.final_prediction, out.spec, sample, config.dataset.spacing_mm);
  json summary{{"image_id", sample.image_id},
               {"method", attack.adaptive ? "ATI-FGSM" : "TI-FGSM"},
               {"iterations_run", out.result.iterations_run},
               {"initial_loss", out.result.initial_loss},
               {"final_loss", out.result.final_loss},
               {"max_abs_perturbation", out.result.max_abs_perturbation},
               {"epsilon_normalized", attack.epsilon_normalized()},
               {"targeted_error_mm", errors.targeted},
               {"stationary_error_mm", errors.stationary},
               {"aborted", out.result.aborted ? json(*out.result.aborted) : json(nullptr)}};
  write_json(summary, out.run_dir / "summary.json");
  if (out.result.aborted) throw RuntimeFailure("attack aborted: " + *out.result.aborted);
  log << "loss " << out.result.initial_loss << " -> " << out.result.final_loss << ", max |delta| "
      << out.result.max_abs_perturbation << '\n';
  return out;
}

AttackErrors attack_errors(const LandmarkSet& prediction, const TargetSpec& spec, const PreprocessedSample& sample,
                           double spacing_mm) {
  LandmarkSet desired = sample.landmarks;
  for (const auto& t : spec.targeted) desired.points[t.index] = t.position;
  const auto to_target = radial_error(prediction, desired, spacing_mm, sample.scale);
  const auto to_truth = radial_error(prediction, sample.landmarks, spacing_mm, sample.scale);
  AttackErrors out;
  for (const auto& t : spec.targeted) out.targeted.push_back(to_target[t.index]);
  for (int s : spec.stationary) out.stationary.push_back(to_truth[s]);
  return out;
}

// visualize ---------------------------------------------------------------------------

fs::path cmd_visualize(const RunConfig& config, std::ostream& log) {
  if (config.attack_dir.empty()) throw InvalidInput("visualize needs --attack-dir");
  const fs::path src = config.attack_dir;
  const Image original = read_float_tiff(src / "input.tiff");
  const Image adversarial = read_float_tiff(src / "adversarial.tiff");
  const json trace = read_json(src / "trace.json");
  const TargetSpec spec = parse_target_spec(trace.at("target_spec").dump(), static_cast<int>(trace.at("clean_prediction").size()));
  const LandmarkSet before =
      points_from_json(trace.at("clean_prediction"), Frame::kResized, original.width, original.height);
  const LandmarkSet after =
      points_from_json(trace.at("final_prediction"), Frame::kResized, original.width, original.height);
  const fs::path dir = prepare_run_dir(config, log);
  const fs::path path = dir / "visualization.png";
  export_visualization(original, adversarial, before, after, spec, path, config.magnification, config.upscale);
  log << "wrote " << path.string() << '\n';
  return path;
}

}  // namespace lmattack::cli
