#pragma once

#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lmattack/common.hpp"
#include "lmattack/detector.hpp"
#include "lmattack/landmark_codec.hpp"

namespace lmattack {

/// Partition of the landmark indices into targeted (with desired resized-frame
/// coordinates) and stationary. Indices are 0-based in memory and 1-based in
/// the JSON file format.
struct TargetSpec {
  struct Target {
    int index = 0;
    Point position;
    friend bool operator==(const Target&, const Target&) = default;
  };

  std::string image_id;
  std::vector<Target> targeted;
  std::vector<int> stationary;

  /// Builds a spec from the targeted entries; the stationary list is the
  /// complement in [0, landmarks).
  static TargetSpec from_targets(std::string image_id, std::vector<Target> targets, int landmarks);

  /// Throws InvalidInput unless targeted and stationary partition [0, K) and
  /// every desired position lies inside width x height.
  void validate(int landmarks, int width, int height) const;

  friend bool operator==(const TargetSpec&, const TargetSpec&) = default;
};

TargetSpec parse_target_spec(const std::string& json_text, int landmarks);
TargetSpec load_target_spec(const std::filesystem::path& path, int landmarks);
std::string target_spec_to_json(const TargetSpec& spec);
void save_target_spec(const TargetSpec& spec, const std::filesystem::path& path);

struct AttackConfig {
  double epsilon = 8.0;            // L-inf budget in 8-bit intensity levels
  double eta = 0.05;               // step, normalized-input units
  int iterations = 300;
  bool adaptive = false;           // ATI-FGSM when true, TI-FGSM otherwise
  int trace_every = 10;
  std::vector<int> trace_at;       // extra iterations to record
  double alpha = 1.0;              // heatmap weight of the attack loss
  double level_scale = 2.0 / 255.0;  // intensity level -> normalized units

  double epsilon_normalized() const { return epsilon * level_scale; }
  bool traces(int iteration) const;
  void validate() const;
};

enum class LandmarkRole { kTargeted, kStationary };

struct AdversarialTargets {
  MapStack maps;
  std::vector<LandmarkRole> roles;  // provenance of each landmark's channels
  MapStack clean_prediction;
};

/// Targeted channels are encodings of the desired positions; stationary
/// channels are the clean-image prediction, captured once.
AdversarialTargets build_adversarial_targets(const DetectorModel& model, const Image& image,
                                             const TargetSpec& spec, const CodecConfig& codec);

/// One projected sign step: clamp_valid(project_eps(current - eta*sign(g))).
Image fgsm_step(const Image& current, const Image& gradient, const Image& original,
                const AttackConfig& config);

/// alpha_j = L_j / mean(L). All-zero losses give unit weights.
std::vector<double> adaptive_weights(std::span<const double> per_landmark_losses);

struct TracePoint {
  int iteration = 0;
  double loss = 0.0;           // unweighted sum of per-landmark losses
  LandmarkSet prediction;
  std::vector<double> targeted_error;    // px to the desired positions
  std::vector<double> stationary_drift;  // px to the clean prediction
};

struct AttackResult {
  Image adversarial;
  Image perturbation;
  LandmarkSet clean_prediction;
  LandmarkSet final_prediction;
  std::vector<TracePoint> trace;
  std::vector<double> weight_means;  // one per adaptive iteration
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double max_abs_perturbation = 0.0;
  int iterations_run = 0;
  double wall_seconds = 0.0;
  std::optional<std::string> aborted;  // set when the loss went non-finite
};

AttackResult run_attack(const DetectorModel& model, const Image& image, const TargetSpec& spec,
                        const AttackConfig& config, const CodecConfig& codec);

struct ConstraintCheck {
  double max_abs_perturbation = 0.0;
  std::size_t budget_violations = 0;
  std::size_t range_violations = 0;
  bool ok() const { return budget_violations == 0 && range_violations == 0; }
};

/// Re-checks |adv - original| <= eps (+1 float ulp at 1.0) and adv in [-1, 1].
ConstraintCheck check_constraints(const Image& adversarial, const Image& original, double epsilon_normalized);

/// Axis-aligned region random targets are drawn from (resized-frame pixels).
struct TargetRect {
  double x_min = 100.0;
  double x_max = 600.0;
  double y_min = 250.0;
  double y_max = 750.0;

  /// The 640x800 rectangle rescaled to a width x height frame.
  static TargetRect scaled_to(int width, int height);
  void validate(int width, int height) const;
};

/// Random protocol: N ~ U{1..K}, indices without replacement, coordinates
/// uniform in `rect`.
TargetSpec random_target_spec(std::mt19937_64& rng, int landmarks, const TargetRect& rect,
                              const LandmarkSet& clean_landmarks);

void write_attack_trace(const AttackResult& result, const TargetSpec& spec, const AttackConfig& config,
                        const std::filesystem::path& path);

}  // namespace lmattack
