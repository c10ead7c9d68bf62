#pragma once

#include <filesystem>
#include <iosfwd>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lmattack/cli/commands.hpp"

namespace lmattack::cli {

/// Creates the run directory and persists the config into it.
std::filesystem::path prepare_run_dir(const RunConfig& config, std::ostream& log);
DetectorModel load_model(const RunConfig& config);
void check_model_matches(const DetectorModel& model, const PreprocessedSample& sample);

struct AttackErrors {
  std::vector<double> targeted;    // mm to the desired positions, in spec order
  std::vector<double> stationary;  // mm to the ground truth, in spec order
};

AttackErrors attack_errors(const LandmarkSet& prediction, const TargetSpec& spec, const PreprocessedSample& sample,
                           double spacing_mm);

inline std::string radius_key(double radius_mm) {
  std::ostringstream s;
  s << radius_mm << "mm";
  return s.str();
}

nlohmann::json points_json(const LandmarkSet& set);
LandmarkSet points_from_json(const nlohmann::json& arr, Frame frame, int width, int height);
nlohmann::json aggregate_json(const Aggregate& a);
void write_json(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace lmattack::cli
