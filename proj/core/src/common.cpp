#include "lmattack/common.hpp"

#include <cmath>

namespace lmattack {

const char* to_string(Frame frame) { return frame == Frame::kOriginal ? "original" : "resized"; }

void LandmarkSet::validate() const {
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Point& p = points[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !contains(p)) {
      throw InvalidInput("landmark " + std::to_string(i + 1) + " at (" + std::to_string(p.x) + ", " +
                         std::to_string(p.y) + ") lies outside the " + std::to_string(width) + "x" +
                         std::to_string(height) + " " + to_string(frame) + " frame");
    }
  }
}

}  // namespace lmattack
