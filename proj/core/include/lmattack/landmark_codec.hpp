#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "lmattack/common.hpp"

namespace lmattack {

struct CodecConfig {
  double sigma = 40.0;
  double threshold = 0.6;

  /// Radius of the disk where the Gaussian stays at or above the threshold.
  double mask_radius() const { return sigma * std::sqrt(-2.0 * std::log(threshold)); }
  void validate() const;

  friend bool operator==(const CodecConfig&, const CodecConfig&) = default;
};

/// Heatmap channels plus x/y offset channels (offsets divided by sigma) for
/// K landmarks. Each group is stored channel-major, K x H x W.
template <typename T>
struct BasicMapStack {
  int landmarks = 0;
  int height = 0;
  int width = 0;
  std::vector<T> heat;
  std::vector<T> offset_x;
  std::vector<T> offset_y;

  BasicMapStack() = default;
  BasicMapStack(int k, int h, int w)
      : landmarks(k), height(h), width(w),
        heat(static_cast<std::size_t>(k) * h * w, T(0)),
        offset_x(heat.size(), T(0)),
        offset_y(heat.size(), T(0)) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  std::span<T> heat_channel(int i) { return {heat.data() + i * plane(), plane()}; }
  std::span<const T> heat_channel(int i) const { return {heat.data() + i * plane(), plane()}; }
  std::span<T> offset_x_channel(int i) { return {offset_x.data() + i * plane(), plane()}; }
  std::span<const T> offset_x_channel(int i) const { return {offset_x.data() + i * plane(), plane()}; }
  std::span<T> offset_y_channel(int i) { return {offset_y.data() + i * plane(), plane()}; }
  std::span<const T> offset_y_channel(int i) const { return {offset_y.data() + i * plane(), plane()}; }

  bool same_shape(const BasicMapStack& o) const {
    return landmarks == o.landmarks && height == o.height && width == o.width;
  }

  /// Copies every channel of landmark `i` from `src`.
  void copy_landmark(const BasicMapStack& src, int i) {
    auto copy = [&](const std::vector<T>& from, std::vector<T>& to) {
      std::copy_n(from.begin() + i * plane(), plane(), to.begin() + i * plane());
    };
    copy(src.heat, heat);
    copy(src.offset_x, offset_x);
    copy(src.offset_y, offset_y);
  }

  template <typename U>
  BasicMapStack<U> cast() const {
    BasicMapStack<U> out;
    out.landmarks = landmarks;
    out.height = height;
    out.width = width;
    out.heat.assign(heat.begin(), heat.end());
    out.offset_x.assign(offset_x.begin(), offset_x.end());
    out.offset_y.assign(offset_y.begin(), offset_y.end());
    return out;
  }

  friend bool operator==(const BasicMapStack&, const BasicMapStack&) = default;
};

using MapStack = BasicMapStack<float>;

/// Truncated Gaussian heatmap + offset encoding of `landmarks` on an
/// height x width grid. Pixels where the Gaussian falls below the threshold
/// are zero in all three channels.
MapStack encode(const LandmarkSet& landmarks, int height, int width, const CodecConfig& config);

/// Writes the encoding of a single landmark at `p` into channel `index`.
void encode_landmark(const Point& p, int index, const CodecConfig& config, MapStack& maps);

/// Majority-vote decoding. Each pixel with heat >= threshold votes for the
/// rounded position it points to via its offsets. Ties go to the larger summed
/// heat among voters, then to row-major order. A channel without candidates
/// falls back to its heat argmax. The result is in the Resized frame.
template <typename T>
LandmarkSet decode(const BasicMapStack<T>& maps, const CodecConfig& config);

/// Rounds half away from zero.
inline long round_half_away(double v) { return std::lround(v); }

}  // namespace lmattack
