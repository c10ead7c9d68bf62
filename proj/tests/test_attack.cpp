#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "lmattack/attack.hpp"
#include "lmattack/rng.hpp"
#include "test_support.hpp"

using namespace lmattack;

namespace {

const CodecConfig kCodec{2.0, 0.6};

DetectorModel small_model(int landmarks = 3) {
  return DetectorModel(ArchSpec{1, landmarks, 4, 2}, kCodec, 31);
}

Image random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-0.9f, 0.9f);
  Image img(1, h, w);
  for (float& v : img.data) v = u(rng);
  return img;
}

LandmarkSet frame_landmarks(int k, int w, int h) {
  LandmarkSet s;
  s.frame = Frame::kResized;
  s.width = w;
  s.height = h;
  for (int i = 0; i < k; ++i) s.points.push_back({1.0 + i, 1.0 + i});
  return s;
}

}  // namespace

TEST_CASE("fgsm step follows the hand-computed sequence") {
  AttackConfig cfg;
  cfg.epsilon = 8.0;
  cfg.eta = 0.05;
  const Image original(1, 1, 1, 0.5f);
  const Image grad(1, 1, 1, 1.0f);
  const Image step1 = fgsm_step(original, grad, original, cfg);
  CHECK(step1.data[0] == doctest::Approx(0.45).epsilon(1e-7));
  const Image step2 = fgsm_step(step1, grad, original, cfg);
  CHECK(step2.data[0] == doctest::Approx(0.4372549019607843).epsilon(1e-7));
  const Image step3 = fgsm_step(step2, grad, original, cfg);
  CHECK(step3.data[0] == step2.data[0]);
}

TEST_CASE("fgsm step leaves zero-gradient pixels and respects the valid range") {
  AttackConfig cfg;
  cfg.epsilon = 255.0;
  cfg.eta = 0.5;
  Image cur(1, 1, 3);
  cur.data = {0.2f, -0.9f, 0.8f};
  Image grad(1, 1, 3);
  grad.data = {0.0f, 1.0f, -1.0f};
  const Image next = fgsm_step(cur, grad, cur, cfg);
  CHECK(next.data[0] == 0.2f);
  CHECK(next.data[1] == -1.0f);
  CHECK(next.data[2] == 1.0f);
  CHECK_THROWS_AS(fgsm_step(cur, Image(1, 1, 2), cur, cfg), InvalidInput);
}

TEST_CASE("adaptive weights") {
  const std::vector<double> losses = {2.0, 4.0, 6.0};
  const auto w = adaptive_weights(losses);
  REQUIRE(w.size() == 3);
  CHECK(w[0] == 0.5);
  CHECK(w[1] == 1.0);
  CHECK(w[2] == 1.5);
  const std::vector<double> equal = {0.3, 0.3, 0.3, 0.3};
  for (double v : adaptive_weights(equal)) CHECK(v == doctest::Approx(1.0));
  const std::vector<double> zeros = {0.0, 0.0};
  for (double v : adaptive_weights(zeros)) CHECK(v == 1.0);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> l(19);
    for (double& v : l) v = u(rng);
    const auto a = adaptive_weights(l);
    double mean = 0.0;
    for (double v : a) mean += v;
    CHECK(mean / 19.0 == doctest::Approx(1.0).epsilon(1e-12));
  }
  const std::vector<double> negative = {1.0, -1.0};
  CHECK_THROWS_AS(adaptive_weights(negative), InvalidInput);
}

TEST_CASE("adversarial targets take channels from the right source") {
  const DetectorModel model = small_model(3);
  const Image img = random_image(16, 16, 1);
  const MapStack clean = forward(model, img);

  const TargetSpec none = TargetSpec::from_targets("a", {}, 3);
  const AdversarialTargets t0 = build_adversarial_targets(model, img, none, kCodec);
  CHECK(t0.maps == clean);
  CHECK(t0.clean_prediction == clean);

  const TargetSpec all = TargetSpec::from_targets("a", {{0, {3, 3}}, {1, {8, 9}}, {2, {12, 4}}}, 3);
  const AdversarialTargets t1 = build_adversarial_targets(model, img, all, kCodec);
  for (LandmarkRole r : t1.roles) CHECK(r == LandmarkRole::kTargeted);
  CHECK(all.stationary.empty());

  const TargetSpec one = TargetSpec::from_targets("a", {{1, {8, 9}}}, 3);
  const AdversarialTargets t2 = build_adversarial_targets(model, img, one, kCodec);
  CHECK(t2.roles[0] == LandmarkRole::kStationary);
  CHECK(t2.roles[1] == LandmarkRole::kTargeted);
  CHECK(t2.maps.heat_channel(1)[9 * 16 + 8] == 1.0f);
  for (int c : {0, 2}) {
    const auto got = t2.maps.heat_channel(c);
    const auto want = clean.heat_channel(c);
    CHECK(std::equal(got.begin(), got.end(), want.begin()));
  }

  const TargetSpec outside = TargetSpec::from_targets("a", {{0, {40, 3}}}, 3);
  CHECK_THROWS_AS(build_adversarial_targets(model, img, outside, kCodec), InvalidInput);
}

TEST_CASE("target specs reject unknown and duplicate indices") {
  CHECK_THROWS_AS(TargetSpec::from_targets("a", {{3, {1, 1}}}, 3), InvalidInput);
  CHECK_THROWS_AS(TargetSpec::from_targets("a", {{-1, {1, 1}}}, 3), InvalidInput);
  CHECK_THROWS_AS(TargetSpec::from_targets("a", {{1, {1, 1}}, {1, {2, 2}}}, 3), InvalidInput);
  const TargetSpec s = TargetSpec::from_targets("a", {{2, {1, 1}}, {0, {2, 2}}}, 4);
  CHECK(s.targeted[0].index == 0);
  CHECK(s.stationary == std::vector<int>{1, 3});
}

TEST_CASE("target spec JSON uses 1-based indices and round-trips") {
  const std::string text = R"({"image_id": "001", "targets": [{"index": 1, "x": 10.5, "y": 20}, {"index": 19, "x": 3, "y": 4}]})";
  const TargetSpec s = parse_target_spec(text, 19);
  CHECK(s.image_id == "001");
  REQUIRE(s.targeted.size() == 2);
  CHECK(s.targeted[0].index == 0);
  CHECK(s.targeted[0].position == Point{10.5, 20.0});
  CHECK(s.targeted[1].index == 18);
  CHECK(s.stationary.size() == 17);
  CHECK(parse_target_spec(target_spec_to_json(s), 19) == s);

  const auto dir = testing::scratch_dir("target_spec");
  save_target_spec(s, dir / "spec.json");
  CHECK(load_target_spec(dir / "spec.json", 19) == s);

  CHECK_THROWS_AS(parse_target_spec(R"({"targets": [{"index": 20, "x": 1, "y": 1}]})", 19), InvalidInput);
  CHECK_THROWS_AS(parse_target_spec(R"({"targets": [{"index": 0, "x": 1, "y": 1}]})", 19), InvalidInput);
  CHECK_THROWS_AS(parse_target_spec(R"({"targets": [{"x": 1}]})", 19), InvalidInput);
  CHECK_THROWS_AS(parse_target_spec("not json", 19), InvalidInput);
  CHECK_THROWS_AS(load_target_spec(dir / "missing.json", 19), InvalidInput);
}

TEST_CASE("zero iterations leave the image and predictions unchanged") {
  const DetectorModel model = small_model();
  const Image img = random_image(16, 16, 2);
  AttackConfig cfg;
  cfg.iterations = 0;
  const TargetSpec spec = TargetSpec::from_targets("a", {{0, {8, 8}}}, 3);
  const AttackResult r = run_attack(model, img, spec, cfg, kCodec);
  CHECK(r.adversarial == img);
  CHECK(r.final_prediction == r.clean_prediction);
  CHECK(r.iterations_run == 0);
  CHECK(r.max_abs_perturbation == 0.0);
}

TEST_CASE("attacks stay in the budget, leave the model untouched and are deterministic") {
  const DetectorModel model = small_model();
  const DetectorModel before = model;
  const Image img = random_image(16, 16, 3);
  const TargetSpec spec = TargetSpec::from_targets("a", {{0, {12, 3}}, {2, {2, 13}}}, 3);
  for (bool adaptive : {false, true}) {
    AttackConfig cfg;
    cfg.epsilon = 4.0;
    cfg.iterations = 25;
    cfg.adaptive = adaptive;
    cfg.trace_every = 5;
    const AttackResult r = run_attack(model, img, spec, cfg, kCodec);
    CHECK(r.iterations_run == 25);
    CHECK_FALSE(r.aborted.has_value());
    CHECK(check_constraints(r.adversarial, img, cfg.epsilon_normalized()).ok());
    CHECK(r.max_abs_perturbation <= cfg.epsilon_normalized() + 1e-6);
    CHECK(r.max_abs_perturbation > 0.0);
    CHECK(r.trace.front().iteration == 0);
    CHECK(r.trace.back().iteration == 25);
    CHECK(r.trace.size() == 6);
    if (adaptive) {
      CHECK(r.weight_means.size() == 25);
      for (double m : r.weight_means) CHECK(m == doctest::Approx(1.0).epsilon(1e-12));
    } else {
      CHECK(r.weight_means.empty());
    }
    const AttackResult again = run_attack(model, img, spec, cfg, kCodec);
    CHECK(again.adversarial == r.adversarial);
  }
  CHECK(model == before);
}

TEST_CASE("non-finite loss aborts with a partial result") {
  const DetectorModel model = small_model();
  Image img = random_image(16, 16, 4);
  img.data[17] = NAN;
  AttackConfig cfg;
  cfg.iterations = 5;
  const TargetSpec spec = TargetSpec::from_targets("a", {{0, {8, 8}}}, 3);
  const AttackResult r = run_attack(model, img, spec, cfg, kCodec);
  CHECK(r.aborted.has_value());
  CHECK(r.iterations_run < 5);
}

TEST_CASE("constraint checker flags violations") {
  const Image orig(1, 1, 2, 0.0f);
  Image adv = orig;
  adv.data = {0.1f, 0.0f};
  CHECK(check_constraints(adv, orig, 0.1).ok());
  adv.data = {0.2f, 0.0f};
  CHECK(check_constraints(adv, orig, 0.1).budget_violations == 1);
  Image wild(1, 1, 2, 1.5f);
  CHECK(check_constraints(wild, Image(1, 1, 2, 1.5f), 0.1).range_violations == 2);
}

TEST_CASE("target rectangle scales with the frame") {
  const TargetRect r = TargetRect::scaled_to(640, 800);
  CHECK(r.x_min == 100.0);
  CHECK(r.x_max == 600.0);
  CHECK(r.y_min == 250.0);
  CHECK(r.y_max == 750.0);
  const TargetRect d = TargetRect::scaled_to(128, 128);
  CHECK(d.x_min == 20.0);
  CHECK(d.x_max == 120.0);
  CHECK(d.y_min == 40.0);
  CHECK(d.y_max == 120.0);
}

TEST_CASE("random target specs are reproducible and well formed") {
  const LandmarkSet clean = frame_landmarks(19, 640, 800);
  const TargetRect rect;
  auto a = make_stream(7, "targets");
  auto b = make_stream(7, "targets");
  CHECK(random_target_spec(a, 19, rect, clean) == random_target_spec(b, 19, rect, clean));

  std::set<int> sizes;
  auto rng = make_stream(8, "targets");
  for (int i = 0; i < 2000; ++i) {
    const TargetSpec s = random_target_spec(rng, 19, rect, clean);
    s.validate(19, 640, 800);
    sizes.insert(static_cast<int>(s.targeted.size()));
    if (s.targeted.size() == 19) CHECK(s.stationary.empty());
  }
  CHECK(*sizes.begin() == 1);
  CHECK(*sizes.rbegin() == 19);
  CHECK(sizes.size() == 19);
}

TEST_CASE("random target coordinates are uniform over the rectangle") {
  const LandmarkSet clean = frame_landmarks(19, 640, 800);
  const TargetRect rect;
  auto rng = make_stream(11, "chi-square");
  constexpr int kDraws = 10000;
  constexpr int kBins = 10;
  std::vector<int> hx(kBins), hy(kBins);
  for (int i = 0; i < kDraws; ++i) {
    const Point p = random_target_spec(rng, 19, rect, clean).targeted.front().position;
    REQUIRE(p.x >= 100.0);
    REQUIRE(p.x <= 600.0);
    REQUIRE(p.y >= 250.0);
    REQUIRE(p.y <= 750.0);
    hx[std::min(kBins - 1, static_cast<int>((p.x - 100.0) / 50.0))]++;
    hy[std::min(kBins - 1, static_cast<int>((p.y - 250.0) / 50.0))]++;
  }
  auto chi2 = [](const std::vector<int>& h) {
    const double expected = static_cast<double>(kDraws) / kBins;
    double s = 0.0;
    for (int c : h) s += (c - expected) * (c - expected) / expected;
    return s;
  };
  // 99.9th percentile of chi-square with 9 degrees of freedom.
  CHECK(chi2(hx) < 27.877);
  CHECK(chi2(hy) < 27.877);
}
