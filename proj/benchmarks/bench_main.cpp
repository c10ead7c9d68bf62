#include <benchmark/benchmark.h>

#include <random>

#include "lmattack/attack.hpp"
#include "lmattack/detector.hpp"
#include "lmattack/landmark_codec.hpp"

namespace {

using namespace lmattack;

LandmarkSet random_landmarks(int k, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(8.0, size - 8.0);
  LandmarkSet s;
  s.frame = Frame::kResized;
  s.width = s.height = size;
  for (int i = 0; i < k; ++i) s.points.push_back({u(rng), u(rng)});
  return s;
}

Image random_image(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Image img(1, size, size);
  for (float& v : img.data) v = u(rng);
  return img;
}

DetectorModel desk_model() {
  return DetectorModel(arch_for_preset(ModelPreset::kDesk, 8), CodecConfig{8.0, 0.6}, 1);
}

void BM_Encode(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const CodecConfig codec{size / 16.0, 0.6};
  const LandmarkSet pts = random_landmarks(19, size, 1);
  for (auto _ : state) benchmark::DoNotOptimize(encode(pts, size, size, codec));
}
BENCHMARK(BM_Encode)->Arg(128)->Arg(640)->Unit(benchmark::kMicrosecond);

void BM_Decode(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const CodecConfig codec{size / 16.0, 0.6};
  const MapStack maps = encode(random_landmarks(19, size, 2), size, size, codec);
  for (auto _ : state) benchmark::DoNotOptimize(decode(maps, codec));
}
BENCHMARK(BM_Decode)->Arg(128)->Arg(640)->Unit(benchmark::kMicrosecond);

void BM_DeskForward(benchmark::State& state) {
  const DetectorModel model = desk_model();
  const Image img = random_image(128, 3);
  for (auto _ : state) benchmark::DoNotOptimize(forward(model, img));
}
BENCHMARK(BM_DeskForward)->Unit(benchmark::kMillisecond);

void BM_DeskInputGradient(benchmark::State& state) {
  const DetectorModel model = desk_model();
  const Image img = random_image(128, 4);
  const MapStack target = encode(random_landmarks(8, 128, 5), 128, 128, model.codec());
  const std::vector<double> weights(8, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(input_gradient(model, img, target, weights, 1.0));
}
BENCHMARK(BM_DeskInputGradient)->Unit(benchmark::kMillisecond);

void BM_FgsmStep(benchmark::State& state) {
  const Image x = random_image(128, 6);
  const Image g = random_image(128, 7);
  const AttackConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(fgsm_step(x, g, x, cfg));
}
BENCHMARK(BM_FgsmStep)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
