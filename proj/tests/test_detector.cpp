#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "lmattack/detector.hpp"
#include "test_support.hpp"

using namespace lmattack;

namespace {

ArchSpec tiny_arch(int landmarks = 2) { return ArchSpec{1, landmarks, 2, 1}; }

template <typename T>
Tensor3<T> random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor3<T> img(1, h, w);
  for (T& v : img.data) v = static_cast<T>(u(rng));
  return img;
}

}  // namespace

TEST_CASE("untrained forward is well formed") {
  const DetectorModel model(tiny_arch(3), CodecConfig{2.0, 0.6}, 1);
  const MapStack m = forward(model, random_image<float>(16, 24, 2));
  CHECK(m.landmarks == 3);
  CHECK(m.height == 16);
  CHECK(m.width == 24);
  for (float h : m.heat) {
    CHECK(h > 0.0f);
    CHECK(h < 1.0f);
  }
}

TEST_CASE("forward is bitwise deterministic, also across threads") {
  const DetectorModel model(ArchSpec{1, 2, 4, 2}, CodecConfig{2.0, 0.6}, 9);
  const Image img = random_image<float>(32, 32, 4);
  const MapStack first = forward(model, img);
  CHECK(forward(model, img) == first);
  MapStack a, b;
  std::thread ta([&] { a = forward(model, img); });
  std::thread tb([&] { b = forward(model, img); });
  ta.join();
  tb.join();
  CHECK(a == first);
  CHECK(b == first);
  CHECK(predict_landmarks(model, img) == decode(first, model.codec()));
}

TEST_CASE("forward rejects mismatched inputs") {
  const DetectorModel model(ArchSpec{1, 2, 2, 2}, CodecConfig{2.0, 0.6}, 1);
  CHECK_THROWS_AS(forward(model, Image(3, 16, 16)), InvalidInput);
  CHECK_THROWS_AS(forward(model, Image(1, 18, 16)), InvalidInput);
}

TEST_CASE("single-pixel loss matches the hand computation") {
  BasicMapStack<double> pred(1, 1, 1), target(1, 1, 1);
  target.heat[0] = 1.0;
  target.offset_x[0] = 0.2;
  target.offset_y[0] = -0.1;
  pred.heat[0] = 0.5;
  const LossBreakdown l = loss(pred, target, 1.0);
  // -ln(0.5) + 0.2 + 0.1
  CHECK(l.total == doctest::Approx(0.9931471805599453).epsilon(1e-12));
  CHECK(l.heatmap[0] == doctest::Approx(std::log(2.0)));
  CHECK(l.offset[0] == doctest::Approx(0.3));
}

TEST_CASE("loss at the target is the target entropy with zero offset term") {
  const CodecConfig cfg{3.0, 0.6};
  LandmarkSet pts;
  pts.points = {{5.5, 6.0}, {12.0, 3.0}};
  pts.frame = Frame::kResized;
  pts.width = pts.height = 16;
  const MapStack target = encode(pts, 16, 16, cfg);
  const LossBreakdown l = loss(target, target, 1.0);
  for (int i = 0; i < 2; ++i) {
    double entropy = 0.0;
    for (float y : target.heat_channel(i)) {
      const double t = y;
      if (t > 0.0 && t < 1.0) entropy -= t * std::log(t) + (1 - t) * std::log(1 - t);
    }
    entropy /= 256.0;
    CHECK(l.offset[i] == 0.0);
    CHECK(l.heatmap[i] == doctest::Approx(entropy).epsilon(1e-5));
  }
}

TEST_CASE("empty target heat masks out the offset term") {
  MapStack pred(1, 4, 4), target(1, 4, 4);
  for (float& v : pred.offset_x) v = 3.0f;
  for (float& v : pred.heat) v = 0.3f;
  CHECK(loss(pred, target, 1.0).offset[0] == 0.0);
}

TEST_CASE("loss totals decompose and match the logit path") {
  const BasicDetector<double> model(tiny_arch(3), CodecConfig{2.0, 0.6}, 5);
  const auto img = random_image<double>(16, 16, 6);
  LandmarkSet pts;
  pts.points = {{3, 4}, {10.5, 9}, {14, 2}};
  pts.frame = Frame::kResized;
  pts.width = pts.height = 16;
  const auto target = encode(pts, 16, 16, model.codec()).cast<double>();
  const auto pass = forward_pass(model, img);
  const LossBreakdown a = pass_loss(pass, target, 0.7);
  const LossBreakdown b = loss(forward(model, img), target, 0.7);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.per_landmark.size(); ++i) {
    sum += a.per_landmark[i];
    CHECK(a.per_landmark[i] == doctest::Approx(0.7 * a.heatmap[i] + a.offset[i]));
    CHECK(a.per_landmark[i] == doctest::Approx(b.per_landmark[i]).epsilon(1e-10));
    CHECK(a.heatmap[i] >= 0.0);
    CHECK(a.offset[i] >= 0.0);
  }
  CHECK(a.total == doctest::Approx(sum).epsilon(1e-12));
}

TEST_CASE("loss rejects shape mismatches") {
  CHECK_THROWS_AS(loss(MapStack(1, 4, 4), MapStack(2, 4, 4), 1.0), InvalidInput);
}

TEST_CASE("input gradient agrees with central finite differences") {
  const BasicDetector<double> model(ArchSpec{1, 2, 3, 2}, CodecConfig{2.0, 0.6}, 21);
  const auto img = random_image<double>(16, 16, 22);
  LandmarkSet pts;
  pts.points = {{4.2, 5.0}, {11.0, 12.5}};
  pts.frame = Frame::kResized;
  pts.width = pts.height = 16;
  const auto target = encode(pts, 16, 16, model.codec()).cast<double>();
  const std::vector<double> weights = {0.8, 1.3};
  const auto report = testing::finite_difference_check(model, img, target, weights, 1.0, 120, 23);
  CHECK(report.checked >= 100);
  CHECK(report.max_relative_error <= 1e-3);
}

TEST_CASE("parameter gradient agrees with central finite differences") {
  BasicDetector<double> model(ArchSpec{1, 2, 3, 2}, CodecConfig{2.0, 0.6}, 41);
  const auto img = random_image<double>(16, 16, 42);
  LandmarkSet pts;
  pts.points = {{4.2, 5.0}, {11.0, 12.5}};
  pts.frame = Frame::kResized;
  pts.width = pts.height = 16;
  const auto target = encode(pts, 16, 16, model.codec()).cast<double>();
  const std::vector<double> weights = {1.1, 0.6};
  const auto objective = [&] {
    const LossBreakdown l = pass_loss(forward_pass(model, img), target, 1.0);
    return weights[0] * l.per_landmark[0] + weights[1] * l.per_landmark[1];
  };
  const auto grads = pass_parameter_gradient(model, forward_pass(model, img), target, weights, 1.0);
  auto& layers = model.network().layers();
  REQUIRE(grads.size() == layers.size());
  std::mt19937_64 rng(43);
  double worst = 0.0;
  int checked = 0;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    for (int s = 0; s < 10; ++s) {
      const bool bias = s % 5 == 4;
      auto& params = bias ? layers[li].bias : layers[li].weight;
      const auto& analytic = bias ? grads[li].bias : grads[li].weight;
      const std::size_t i = std::uniform_int_distribution<std::size_t>(0, params.size() - 1)(rng);
      const double saved = params[i];
      constexpr double kStep = 1e-6;
      params[i] = saved + kStep;
      const double up = objective();
      params[i] = saved - kStep;
      const double down = objective();
      params[i] = saved;
      const double numeric = (up - down) / (2.0 * kStep);
      const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-7});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
      ++checked;
    }
  }
  CHECK(checked >= 100);
  CHECK(worst <= 1e-3);
}

TEST_CASE("input gradient is linear in the landmark weights") {
  const DetectorModel model(tiny_arch(2), CodecConfig{2.0, 0.6}, 3);
  const Image img = random_image<float>(8, 8, 4);
  LandmarkSet pts;
  pts.points = {{2, 2}, {6, 5}};
  pts.frame = Frame::kResized;
  pts.width = pts.height = 8;
  const MapStack target = encode(pts, 8, 8, model.codec());
  const std::vector<double> zero = {0.0, 0.0};
  for (float g : input_gradient(model, img, target, zero, 1.0).data) CHECK(g == 0.0f);
  const std::vector<double> w = {0.3, 1.7};
  const std::vector<double> w2 = {0.6, 3.4};
  const Image g1 = input_gradient(model, img, target, w, 1.0);
  const Image g2 = input_gradient(model, img, target, w2, 1.0);
  for (std::size_t i = 0; i < g1.data.size(); ++i) CHECK(g2.data[i] == 2.0f * g1.data[i]);
  const std::vector<double> short_weights = {1.0};
  CHECK_THROWS_AS(input_gradient(model, img, target, short_weights, 1.0), InvalidInput);
}

TEST_CASE("full preset carries the published hyperparameters") {
  const TrainConfig full = TrainConfig::full();
  CHECK(full.batch_size == 8);
  CHECK(full.epochs == 230);
  CHECK(full.learning_rate == 1e-3);
  CHECK(full.lr_decay == 0.1);
  CHECK(full.lr_decay_every == 100);
  CHECK(full.alpha == 1.0);
  CHECK(full.sigma == 40.0);
  CHECK(full.learning_rate_at(99) == 1e-3);
  CHECK(full.learning_rate_at(100) == doctest::Approx(1e-4));
  CHECK(full.learning_rate_at(229) == doctest::Approx(1e-5));
  const TrainConfig desk = TrainConfig::desk();
  CHECK(desk.sigma == 8.0);
  CHECK(desk.alpha == 20.0);
  CHECK(desk.preset == ModelPreset::kDesk);
}

TEST_CASE("zero-epoch training returns the initial model") {
  const DetectorModel initial(tiny_arch(1), CodecConfig{2.0, 0.6}, 8);
  TrainConfig cfg = TrainConfig::desk();
  cfg.epochs = 0;
  CHECK(train({}, cfg, initial) == initial);
}

TEST_CASE("training lowers the loss on a small problem") {
  std::vector<TrainingSample> data;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(4.0, 11.0);
  for (int i = 0; i < 32; ++i) {
    TrainingSample s;
    s.image = Image(1, 16, 16, -0.5f);
    s.landmarks.frame = Frame::kResized;
    s.landmarks.width = s.landmarks.height = 16;
    const Point p{std::round(u(rng)), std::round(u(rng))};
    s.landmarks.points = {p};
    s.image.at(0, static_cast<int>(p.y), static_cast<int>(p.x)) = 1.0f;
    data.push_back(s);
  }
  TrainConfig cfg = TrainConfig::desk();
  cfg.sigma = 2.0;
  cfg.epochs = 30;
  cfg.batch_size = 4;
  cfg.learning_rate = 3e-3;
  std::vector<double> losses;
  const DetectorModel model = train(data, cfg, ArchSpec{1, 1, 8, 2},
                                    [&](const EpochStats& s) { losses.push_back(s.mean_loss); });
  REQUIRE(losses.size() == 30);
  CHECK(losses.back() < 0.5 * losses.front());
  CHECK(model.codec().sigma == 2.0);
  CHECK(model.train_config() == cfg);
}

TEST_CASE("training aborts on a non-finite loss") {
  TrainingSample s;
  s.image = Image(1, 8, 8, NAN);
  s.landmarks.frame = Frame::kResized;
  s.landmarks.width = s.landmarks.height = 8;
  s.landmarks.points = {{3, 3}};
  TrainConfig cfg = TrainConfig::desk();
  cfg.sigma = 2.0;
  cfg.epochs = 1;
  CHECK_THROWS_AS(train({s}, cfg, tiny_arch(1)), RuntimeFailure);
  CHECK_THROWS_AS(train({}, cfg, tiny_arch(1)), InvalidInput);
}

TEST_CASE("checkpoints round-trip and reject corrupt files") {
  const auto dir = testing::scratch_dir("checkpoint");
  DetectorModel model(ArchSpec{1, 4, 3, 2}, CodecConfig{8.0, 0.6}, 12);
  TrainConfig cfg = TrainConfig::desk();
  cfg.seed = 99;
  model.set_train_config(cfg);
  save_checkpoint(model, dir / "model.ckpt");
  const DetectorModel loaded = load_checkpoint(dir / "model.ckpt");
  CHECK(loaded == model);

  {
    std::ofstream bad(dir / "bad.ckpt", std::ios::binary);
    bad << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), InvalidInput);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), InvalidInput);

  std::filesystem::resize_file(dir / "model.ckpt", std::filesystem::file_size(dir / "model.ckpt") - 4);
  CHECK_THROWS_AS(load_checkpoint(dir / "model.ckpt"), InvalidInput);
}

TEST_CASE("encoder weights can be loaded from outside") {
  DetectorModel model(ArchSpec{1, 2, 2, 1}, CodecConfig{2.0, 0.6}, 1);
  const DetectorModel donor(ArchSpec{1, 2, 2, 1}, CodecConfig{2.0, 0.6}, 2);
  std::vector<ConvLayer<float>> encoder(donor.network().layers().begin(), donor.network().layers().begin() + 4);
  load_encoder_weights(model, encoder);
  for (int i = 0; i < 4; ++i) CHECK(model.network().layers()[i] == donor.network().layers()[i]);
  CHECK_FALSE(model.network().layers()[4] == donor.network().layers()[4]);
  encoder[0].weight.pop_back();
  CHECK_THROWS_AS(load_encoder_weights(model, encoder), InvalidInput);
}
