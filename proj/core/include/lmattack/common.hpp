#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lmattack {

/// Raised when caller-supplied data violates an operation's preconditions.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation cannot complete (divergence, I/O failure).
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Point {
  double x = 0.0;  // column
  double y = 0.0;  // row

  friend bool operator==(const Point&, const Point&) = default;
};

enum class Frame { kOriginal, kResized };

const char* to_string(Frame frame);

/// K landmarks in one coordinate frame of size width x height.
struct LandmarkSet {
  std::vector<Point> points;
  Frame frame = Frame::kOriginal;
  int width = 0;
  int height = 0;

  std::size_t size() const { return points.size(); }
  bool contains(const Point& p) const {
    return p.x >= 0.0 && p.x < width && p.y >= 0.0 && p.y < height;
  }
  /// Throws InvalidInput unless every point is finite and inside the frame.
  void validate() const;

  friend bool operator==(const LandmarkSet&, const LandmarkSet&) = default;
};

/// Per-axis factors mapping resized-frame pixels to original-frame pixels.
struct FrameScale {
  double sx = 1.0;
  double sy = 1.0;
};

/// Channel-major C x H x W array. As a network input its values are
/// normalized to [-1, 1].
template <typename T>
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Tensor3() = default;
  Tensor3(int c, int h, int w, T fill = T(0))
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const { return data.size(); }
  T& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  T at(int c, int y, int x) const { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  T* channel(int c) { return data.data() + c * plane(); }
  const T* channel(int c) const { return data.data() + c * plane(); }
  bool same_shape(const Tensor3& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  template <typename U>
  Tensor3<U> cast() const {
    Tensor3<U> out;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;
};

using Image = Tensor3<float>;

/// 8-bit single-channel raster as stored on disk.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  std::uint8_t at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

}  // namespace lmattack
