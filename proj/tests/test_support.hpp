#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>

#include "lmattack/detector.hpp"

namespace lmattack::testing {

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("lmattack_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

struct GradientCheck {
  int checked = 0;
  double max_relative_error = 0.0;
};

/// Compares the analytic input gradient with central differences of
/// sum_j w_j L_j at `samples` random pixels.
inline GradientCheck finite_difference_check(const BasicDetector<double>& model,
                                             const Tensor3<double>& image,
                                             const BasicMapStack<double>& target,
                                             std::span<const double> weights, double alpha,
                                             int samples, std::uint64_t seed) {
  const auto objective = [&](const Tensor3<double>& x) {
    const LossBreakdown l = pass_loss(forward_pass(model, x), target, alpha);
    double sum = 0.0;
    for (std::size_t j = 0; j < weights.size(); ++j) sum += weights[j] * l.per_landmark[j];
    return sum;
  };
  const Tensor3<double> analytic = input_gradient(model, image, target, weights, alpha);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, image.data.size() - 1);
  constexpr double kStep = 1e-6;
  GradientCheck out;
  for (int s = 0; s < samples; ++s) {
    const std::size_t i = pick(rng);
    Tensor3<double> plus = image, minus = image;
    plus.data[i] += kStep;
    minus.data[i] -= kStep;
    const double numeric = (objective(plus) - objective(minus)) / (2.0 * kStep);
    const double a = analytic.data[i];
    const double scale = std::max({std::abs(a), std::abs(numeric), 1e-7});
    out.max_relative_error = std::max(out.max_relative_error, std::abs(a - numeric) / scale);
    ++out.checked;
  }
  return out;
}

}  // namespace lmattack::testing
