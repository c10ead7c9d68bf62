#include "lmattack/attack.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace lmattack {
namespace {

using nlohmann::json;

double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

// TargetSpec -----------------------------------------------------------------

TargetSpec TargetSpec::from_targets(std::string image_id, std::vector<Target> targets, int landmarks) {
  TargetSpec spec;
  spec.image_id = std::move(image_id);
  std::sort(targets.begin(), targets.end(), [](const Target& a, const Target& b) { return a.index < b.index; });
  std::vector<bool> taken(std::max(landmarks, 0), false);
  for (const Target& t : targets) {
    if (t.index < 0 || t.index >= landmarks) {
      throw InvalidInput("target references unknown landmark " + std::to_string(t.index + 1) + " (K = " +
                         std::to_string(landmarks) + ")");
    }
    if (taken[t.index]) throw InvalidInput("landmark " + std::to_string(t.index + 1) + " targeted twice");
    taken[t.index] = true;
  }
  spec.targeted = std::move(targets);
  for (int i = 0; i < landmarks; ++i) {
    if (!taken[i]) spec.stationary.push_back(i);
  }
  return spec;
}

void TargetSpec::validate(int landmarks, int width, int height) const {
  std::vector<int> seen(std::max(landmarks, 0), 0);
  for (const Target& t : targeted) {
    if (t.index < 0 || t.index >= landmarks) {
      throw InvalidInput("target references unknown landmark " + std::to_string(t.index + 1));
    }
    ++seen[t.index];
    const Point& p = t.position;
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || p.x < 0 || p.y < 0 || p.x >= width || p.y >= height) {
      throw InvalidInput("desired position of landmark " + std::to_string(t.index + 1) + " is outside the " +
                         std::to_string(width) + "x" + std::to_string(height) + " image");
    }
  }
  for (int s : stationary) {
    if (s < 0 || s >= landmarks) throw InvalidInput("stationary index out of range");
    ++seen[s];
  }
  for (int i = 0; i < landmarks; ++i) {
    if (seen[i] != 1) {
      throw InvalidInput("landmark " + std::to_string(i + 1) + " must be exactly one of targeted/stationary");
    }
  }
}

TargetSpec parse_target_spec(const std::string& json_text, int landmarks) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("target spec is not valid JSON: ") + e.what());
  }
  try {
    std::vector<TargetSpec::Target> targets;
    for (const json& t : j.at("targets")) {
      targets.push_back({t.at("index").get<int>() - 1, {t.at("x").get<double>(), t.at("y").get<double>()}});
    }
    std::string id = j.contains("image_id") ? j.at("image_id").get<std::string>() : std::string{};
    return TargetSpec::from_targets(std::move(id), std::move(targets), landmarks);
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("malformed target spec: ") + e.what());
  }
}

TargetSpec load_target_spec(const std::filesystem::path& path, int landmarks) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open target spec " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_target_spec(buffer.str(), landmarks);
}

std::string target_spec_to_json(const TargetSpec& spec) {
  json targets = json::array();
  for (const auto& t : spec.targeted) {
    targets.push_back({{"index", t.index + 1}, {"x", t.position.x}, {"y", t.position.y}});
  }
  return json{{"image_id", spec.image_id}, {"targets", targets}}.dump(2);
}

void save_target_spec(const TargetSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << target_spec_to_json(spec) << '\n';
}

// AttackConfig ---------------------------------------------------------------

bool AttackConfig::traces(int iteration) const {
  if (iteration == 0 || iteration == iterations) return true;
  if (trace_every > 0 && iteration % trace_every == 0) return true;
  return std::find(trace_at.begin(), trace_at.end(), iteration) != trace_at.end();
}

void AttackConfig::validate() const {
  if (!(epsilon > 0.0)) throw InvalidInput("attack: epsilon must be positive");
  if (!(eta > 0.0)) throw InvalidInput("attack: eta must be positive");
  if (iterations < 0) throw InvalidInput("attack: iterations must be non-negative");
  if (!(level_scale > 0.0)) throw InvalidInput("attack: level scale must be positive");
  if (!(alpha > 0.0)) throw InvalidInput("attack: alpha must be positive");
}

// Core operations --------------------------------------------------------------

AdversarialTargets build_adversarial_targets(const DetectorModel& model, const Image& image,
                                             const TargetSpec& spec, const CodecConfig& codec) {
  const int k = model.arch().landmarks;
  spec.validate(k, image.width, image.height);
  AdversarialTargets out;
  out.clean_prediction = forward(model, image);
  out.maps = out.clean_prediction;
  out.roles.assign(k, LandmarkRole::kStationary);
  for (const auto& t : spec.targeted) {
    encode_landmark(t.position, t.index, codec, out.maps);
    out.roles[t.index] = LandmarkRole::kTargeted;
  }
  return out;
}

Image fgsm_step(const Image& current, const Image& gradient, const Image& original, const AttackConfig& config) {
  if (!current.same_shape(gradient) || !current.same_shape(original)) {
    throw InvalidInput("fgsm_step: shape mismatch");
  }
  const double eps = config.epsilon_normalized();
  Image next = current;
  for (std::size_t i = 0; i < next.data.size(); ++i) {
    const float g = gradient.data[i];
    const double sign = (g > 0.0f) - (g < 0.0f);
    const double x0 = original.data[i];
    double v = current.data[i] - config.eta * sign;
    v = std::clamp(v, x0 - eps, x0 + eps);
    v = std::clamp(v, -1.0, 1.0);
    next.data[i] = static_cast<float>(v);
  }
  return next;
}

std::vector<double> adaptive_weights(std::span<const double> losses) {
  if (losses.empty()) return {};
  double sum = 0.0;
  for (double l : losses) {
    if (!(l >= 0.0)) throw InvalidInput("adaptive_weights: losses must be non-negative");
    sum += l;
  }
  std::vector<double> weights(losses.size(), 1.0);
  if (sum == 0.0) return weights;
  const double mean = sum / static_cast<double>(losses.size());
  for (std::size_t j = 0; j < losses.size(); ++j) weights[j] = losses[j] / mean;
  return weights;
}

ConstraintCheck check_constraints(const Image& adversarial, const Image& original, double epsilon_normalized) {
  if (!adversarial.same_shape(original)) throw InvalidInput("check_constraints: shape mismatch");
  ConstraintCheck check;
  const double bound = epsilon_normalized + std::numeric_limits<float>::epsilon();
  for (std::size_t i = 0; i < adversarial.data.size(); ++i) {
    const double a = adversarial.data[i];
    const double d = std::abs(a - static_cast<double>(original.data[i]));
    check.max_abs_perturbation = std::max(check.max_abs_perturbation, d);
    if (!(d <= bound)) ++check.budget_violations;
    if (!(a >= -1.0 && a <= 1.0)) ++check.range_violations;
  }
  return check;
}

AttackResult run_attack(const DetectorModel& model, const Image& image, const TargetSpec& spec,
                        const AttackConfig& config, const CodecConfig& codec) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  const int k = model.arch().landmarks;
  const AdversarialTargets targets = build_adversarial_targets(model, image, spec, codec);

  AttackResult result;
  result.clean_prediction = decode(targets.clean_prediction, codec);
  Image x = image;
  const std::vector<double> unit(k, 1.0);

  for (int it = 0;; ++it) {
    const ForwardPass<float> pass = forward_pass(model, x);
    const LossBreakdown l = pass_loss(pass, targets.maps, config.alpha);
    if (!std::isfinite(l.total)) {
      result.aborted = "non-finite attack loss at iteration " + std::to_string(it);
      break;
    }
    if (it == 0) result.initial_loss = l.total;
    const bool last = it == config.iterations;
    if (config.traces(it) || last) {
      TracePoint tp;
      tp.iteration = it;
      tp.loss = l.total;
      tp.prediction = decode(pass.maps, codec);
      for (const auto& t : spec.targeted) {
        tp.targeted_error.push_back(distance(tp.prediction.points[t.index], t.position));
      }
      for (int s : spec.stationary) {
        tp.stationary_drift.push_back(distance(tp.prediction.points[s], result.clean_prediction.points[s]));
      }
      if (last) result.final_prediction = tp.prediction;
      result.trace.push_back(std::move(tp));
    }
    if (last) {
      result.final_loss = l.total;
      break;
    }

    std::vector<double> weights = unit;
    if (config.adaptive) {
      weights = adaptive_weights(l.per_landmark);
      result.weight_means.push_back(std::accumulate(weights.begin(), weights.end(), 0.0) / k);
    }
    const Image gradient = pass_input_gradient(model, pass, targets.maps, weights, config.alpha);
    x = fgsm_step(x, gradient, image, config);
    result.iterations_run = it + 1;
  }

  if (result.aborted && !result.trace.empty()) result.final_prediction = result.trace.back().prediction;
  result.adversarial = std::move(x);
  result.perturbation = result.adversarial;
  for (std::size_t i = 0; i < image.data.size(); ++i) result.perturbation.data[i] -= image.data[i];
  result.max_abs_perturbation = check_constraints(result.adversarial, image, config.epsilon_normalized()).max_abs_perturbation;
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

// Random protocol --------------------------------------------------------------

TargetRect TargetRect::scaled_to(int width, int height) {
  const double sx = width / 640.0;
  const double sy = height / 800.0;
  TargetRect r;
  return {r.x_min * sx, r.x_max * sx, r.y_min * sy, r.y_max * sy};
}

void TargetRect::validate(int width, int height) const {
  if (!(x_min <= x_max && y_min <= y_max) || x_min < 0 || y_min < 0 || x_max >= width || y_max >= height) {
    throw InvalidInput("target rectangle must lie inside the " + std::to_string(width) + "x" +
                       std::to_string(height) + " frame");
  }
}

TargetSpec random_target_spec(std::mt19937_64& rng, int landmarks, const TargetRect& rect,
                              const LandmarkSet& clean_landmarks) {
  if (landmarks <= 0) throw InvalidInput("random_target_spec: need at least one landmark");
  if (clean_landmarks.size() != static_cast<std::size_t>(landmarks)) {
    throw InvalidInput("random_target_spec: landmark count mismatch");
  }
  rect.validate(clean_landmarks.width, clean_landmarks.height);

  std::uniform_int_distribution<int> count_dist(1, landmarks);
  const int n = count_dist(rng);
  std::vector<int> indices(landmarks);
  std::iota(indices.begin(), indices.end(), 0);
  for (int i = 0; i < n; ++i) {  // partial Fisher-Yates
    std::uniform_int_distribution<int> pick(i, landmarks - 1);
    std::swap(indices[i], indices[pick(rng)]);
  }
  std::uniform_real_distribution<double> xs(rect.x_min, rect.x_max);
  std::uniform_real_distribution<double> ys(rect.y_min, rect.y_max);
  std::vector<TargetSpec::Target> targets;
  for (int i = 0; i < n; ++i) {
    const double x = xs(rng);
    const double y = ys(rng);
    targets.push_back({indices[i], {x, y}});
  }
  return TargetSpec::from_targets({}, std::move(targets), landmarks);
}

void write_attack_trace(const AttackResult& result, const TargetSpec& spec, const AttackConfig& config,
                        const std::filesystem::path& path) {
  auto points = [](const LandmarkSet& set) {
    json arr = json::array();
    for (const Point& p : set.points) arr.push_back({p.x, p.y});
    return arr;
  };
  json trace = json::array();
  for (const TracePoint& tp : result.trace) {
    trace.push_back({{"iteration", tp.iteration},
                     {"loss", tp.loss},
                     {"prediction", points(tp.prediction)},
                     {"targeted_error_px", tp.targeted_error},
                     {"stationary_drift_px", tp.stationary_drift}});
  }
  json j;
  j["image_id"] = spec.image_id;
  j["target_spec"] = json::parse(target_spec_to_json(spec));
  j["config"] = {{"epsilon_levels", config.epsilon},      {"epsilon_normalized", config.epsilon_normalized()},
                 {"eta", config.eta},                     {"iterations", config.iterations},
                 {"adaptive", config.adaptive},           {"method", config.adaptive ? "ATI-FGSM" : "TI-FGSM"},
                 {"alpha", config.alpha},                 {"level_scale", config.level_scale}};
  j["clean_prediction"] = points(result.clean_prediction);
  j["final_prediction"] = points(result.final_prediction);
  j["initial_loss"] = result.initial_loss;
  j["final_loss"] = result.final_loss;
  j["max_abs_perturbation"] = result.max_abs_perturbation;
  j["iterations_run"] = result.iterations_run;
  j["wall_seconds"] = result.wall_seconds;
  j["weight_means"] = result.weight_means;
  j["aborted"] = result.aborted ? json(*result.aborted) : json(nullptr);
  j["trace"] = trace;
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace lmattack
