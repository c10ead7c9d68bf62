#include "lmattack/landmark_codec.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lmattack {

void CodecConfig::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw InvalidInput("codec sigma must be positive");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw InvalidInput("codec threshold must lie in (0, 1)");
  }
}

void encode_landmark(const Point& p, int index, const CodecConfig& config, MapStack& maps) {
  const double inv_two_var = 1.0 / (2.0 * config.sigma * config.sigma);
  const int reach = static_cast<int>(std::ceil(config.mask_radius())) + 1;
  const int x0 = std::max(0, static_cast<int>(std::floor(p.x)) - reach);
  const int x1 = std::min(maps.width - 1, static_cast<int>(std::ceil(p.x)) + reach);
  const int y0 = std::max(0, static_cast<int>(std::floor(p.y)) - reach);
  const int y1 = std::min(maps.height - 1, static_cast<int>(std::ceil(p.y)) + reach);

  auto heat = maps.heat_channel(index);
  auto ox = maps.offset_x_channel(index);
  auto oy = maps.offset_y_channel(index);
  std::fill(heat.begin(), heat.end(), 0.0f);
  std::fill(ox.begin(), ox.end(), 0.0f);
  std::fill(oy.begin(), oy.end(), 0.0f);

  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - p.x;
      const double dy = y - p.y;
      const double g = std::exp(-(dx * dx + dy * dy) * inv_two_var);
      if (g < config.threshold) continue;
      const std::size_t at = static_cast<std::size_t>(y) * maps.width + x;
      heat[at] = static_cast<float>(g);
      ox[at] = static_cast<float>(dx / config.sigma);
      oy[at] = static_cast<float>(dy / config.sigma);
    }
  }
}

MapStack encode(const LandmarkSet& landmarks, int height, int width, const CodecConfig& config) {
  config.validate();
  if (height <= 0 || width <= 0) throw InvalidInput("encode: empty grid");
  for (const Point& p : landmarks.points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || p.x < 0.0 || p.y < 0.0 || p.x >= width ||
        p.y >= height) {
      throw InvalidInput("encode: landmark (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                         ") outside " + std::to_string(width) + "x" + std::to_string(height));
    }
  }
  MapStack maps(static_cast<int>(landmarks.size()), height, width);
  for (std::size_t i = 0; i < landmarks.size(); ++i) {
    encode_landmark(landmarks.points[i], static_cast<int>(i), config, maps);
  }
  return maps;
}

template <typename T>
LandmarkSet decode(const BasicMapStack<T>& maps, const CodecConfig& config) {
  const int w = maps.width;
  const int h = maps.height;
  const std::size_t plane = maps.plane();
  LandmarkSet out;
  out.frame = Frame::kResized;
  out.width = w;
  out.height = h;
  out.points.reserve(maps.landmarks);

  std::vector<int> votes(plane);
  std::vector<double> weight(plane);
  std::vector<std::size_t> touched;

  for (int i = 0; i < maps.landmarks; ++i) {
    auto heat = maps.heat_channel(i);
    auto ox = maps.offset_x_channel(i);
    auto oy = maps.offset_y_channel(i);
    touched.clear();

    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t at = static_cast<std::size_t>(y) * w + x;
        const double v = heat[at];
        if (!(v >= config.threshold)) continue;
        const long vx = round_half_away(x - config.sigma * static_cast<double>(ox[at]));
        const long vy = round_half_away(y - config.sigma * static_cast<double>(oy[at]));
        if (vx < 0 || vy < 0 || vx >= w || vy >= h) continue;
        const std::size_t cell = static_cast<std::size_t>(vy) * w + vx;
        if (votes[cell] == 0) touched.push_back(cell);
        ++votes[cell];
        weight[cell] += v;
      }
    }

    std::size_t best = 0;
    if (!touched.empty()) {
      std::sort(touched.begin(), touched.end());
      best = touched.front();
      for (std::size_t cell : touched) {
        if (votes[cell] > votes[best] ||
            (votes[cell] == votes[best] && weight[cell] > weight[best])) {
          best = cell;
        }
      }
      for (std::size_t cell : touched) {
        votes[cell] = 0;
        weight[cell] = 0.0;
      }
    } else {
      // No candidates, or every vote landed outside the image.
      double best_heat = -std::numeric_limits<double>::infinity();
      for (std::size_t at = 0; at < plane; ++at) {
        if (heat[at] > best_heat) {
          best_heat = heat[at];
          best = at;
        }
      }
    }
    out.points.push_back({static_cast<double>(best % w), static_cast<double>(best / w)});
  }
  return out;
}

template LandmarkSet decode<float>(const BasicMapStack<float>&, const CodecConfig&);
template LandmarkSet decode<double>(const BasicMapStack<double>&, const CodecConfig&);

}  // namespace lmattack
