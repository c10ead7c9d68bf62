#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lmattack/attack.hpp"
#include "lmattack/cli/run_config.hpp"
#include "lmattack/data_io.hpp"
#include "lmattack/detector.hpp"
#include "lmattack/metrics.hpp"

namespace lmattack::cli {

/// Records of the configured dataset with split tags.
std::vector<DatasetRecord> load_records(const RunConfig& config);

struct PreparedData {
  std::vector<PreprocessedSample> train;
  std::vector<PreprocessedSample> eval;
};

/// Preprocessed training split and evaluation split, each ordered by image id.
PreparedData prepare_data(const RunConfig& config);

/// Per-landmark detection errors of `model` on `samples` against their
/// ground truth (original-frame millimetres).
EvalReport evaluate_detection(const DetectorModel& model, const std::vector<PreprocessedSample>& samples,
                              double spacing_mm, std::uint64_t seed);

struct TrainOutcome {
  std::filesystem::path run_dir;
  std::filesystem::path checkpoint;
  std::vector<EpochStats> epochs;
  EvalReport report;
};

struct DetectOutcome {
  std::filesystem::path run_dir;
  EvalReport report;
};

struct AttackOutcome {
  std::filesystem::path run_dir;
  TargetSpec spec;
  AttackResult result;
  ConstraintCheck check;
};

/// Aggregates at one (variant, epsilon, iterations) point of the sweep.
struct GridPoint {
  bool adaptive = true;
  double epsilon = 0.0;
  int iterations = 0;
  Aggregate targeted;
  std::optional<Aggregate> stationary;  // empty when every attempt targets all landmarks
};

struct CurvePoint {
  int iteration = 0;
  double ati_mean = 0.0;  // mean targeted radial error (mm)
  double ti_mean = 0.0;
};

struct BenchmarkOutcome {
  std::filesystem::path run_dir;
  int attempts = 0;
  Aggregate clean;                      // detection error of the attacked images
  std::vector<GridPoint> grid;
  std::vector<CurvePoint> curves;       // empty unless both variants ran
  std::size_t constraint_violations = 0;
  int runs = 0;
  int loss_decreased = 0;               // runs whose final loss is below the initial loss
  double max_weight_mean_deviation = 0.0;
  int aborted = 0;
};

struct IsolationOutcome {
  std::filesystem::path run_dir;
  IsolationAnalysis analysis;
};

TrainOutcome cmd_train(const RunConfig& config, std::ostream& log);
DetectOutcome cmd_detect(const RunConfig& config, std::ostream& log);
AttackOutcome cmd_attack(const RunConfig& config, std::ostream& log);
BenchmarkOutcome cmd_benchmark(const RunConfig& config, std::ostream& log);
IsolationOutcome cmd_isolation(const RunConfig& config, std::ostream& log);
std::filesystem::path cmd_visualize(const RunConfig& config, std::ostream& log);

/// Parses argv-style arguments and dispatches. Returns the process exit
/// code: 0 success, 1 usage or input error, 2 runtime failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lmattack::cli
