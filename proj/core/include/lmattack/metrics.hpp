#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lmattack/common.hpp"

namespace lmattack {

/// SDR radii in millimeters.
inline constexpr std::array<double, 4> kSdrRadiiMm = {2.0, 2.5, 3.0, 4.0};

/// ISBI radiographs are 1935x2400 resized to 640x800.
inline constexpr FrameScale kIsbiFrameScale{1935.0 / 640.0, 2400.0 / 800.0};
inline constexpr double kIsbiSpacingMm = 0.1;

/// Euclidean distance per landmark in millimeters. Resized-frame inputs are
/// mapped to original pixels through `scale` first.
std::vector<double> radial_error(const LandmarkSet& pred, const LandmarkSet& ref, double spacing_mm,
                                 const FrameScale& scale);

struct Aggregate {
  std::size_t count = 0;
  double mre = 0.0;
  double medre = 0.0;
  std::array<double, 4> sdr{};  // percent within kSdrRadiiMm, inclusive

  double sdr_at(double radius_mm) const;
};

/// Mean, median (mean of the middle pair for even counts) and SDR.
Aggregate aggregate(std::span<const double> errors_mm);

/// Per landmark, mean over images of the mean distance to its five nearest
/// other landmarks.
std::vector<double> isolation_degree(std::span<const LandmarkSet> ground_truth);

struct IsolationRow {
  int landmark = 0;  // 1-based
  double isolation = 0.0;
  double mre = 0.0;
};

struct IsolationAnalysis {
  std::optional<double> pearson;  // empty when either series has zero variance
  std::vector<IsolationRow> rows;
};

IsolationAnalysis isolation_vs_error(std::span<const double> isolation, std::span<const double> per_landmark_mre);

/// Pearson correlation; empty when either input has zero variance.
std::optional<double> pearson(std::span<const double> a, std::span<const double> b);

enum class Cohort { kDetection, kTargeted, kStationary };
const char* to_string(Cohort cohort);

struct ErrorRow {
  std::string image_id;
  int attempt = 0;
  int landmark = 0;  // 1-based
  Cohort cohort = Cohort::kDetection;
  double error_mm = 0.0;
};

struct EvalMetadata {
  double epsilon = 0.0;
  int iterations = 0;
  bool adaptive = false;
  std::uint64_t seed = 0;
  std::string label;
};

/// Per-landmark radial errors split into cohorts, with aggregates.
struct EvalReport {
  EvalMetadata meta;
  std::vector<ErrorRow> rows;

  std::vector<double> errors(Cohort cohort) const;
  std::optional<Aggregate> summary(Cohort cohort) const;

  void write_csv(const std::filesystem::path& path) const;
  /// JSON summary: metadata plus MRE/MedRE/SDR per non-empty cohort.
  std::string summary_json() const;
  void write_summary_json(const std::filesystem::path& path) const;
};

}  // namespace lmattack
