#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "lmattack/metrics.hpp"
#include "test_support.hpp"

using namespace lmattack;

namespace {

LandmarkSet make_set(std::vector<Point> pts, Frame frame = Frame::kOriginal, int w = 1935, int h = 2400) {
  LandmarkSet s;
  s.points = std::move(pts);
  s.frame = frame;
  s.width = w;
  s.height = h;
  return s;
}

}  // namespace

TEST_CASE("radial error in millimetres") {
  const LandmarkSet pred = make_set({{13, 14}, {5, 5}});
  const LandmarkSet ref = make_set({{10, 10}, {5, 5}});
  const auto e = radial_error(pred, ref, kIsbiSpacingMm, {1.0, 1.0});
  CHECK(e[0] == doctest::Approx(0.5));
  CHECK(e[1] == 0.0);
  CHECK(radial_error(ref, pred, kIsbiSpacingMm, {1.0, 1.0}) == e);
}

TEST_CASE("resized-frame errors are measured in the original frame") {
  const LandmarkSet pred = make_set({{100, 200}}, Frame::kResized, 640, 800);
  const LandmarkSet ref = make_set({{103, 196}}, Frame::kResized, 640, 800);
  const double dx = 3.0 * 1935.0 / 640.0;
  const double dy = 4.0 * 2400.0 / 800.0;
  const auto e = radial_error(pred, ref, kIsbiSpacingMm, kIsbiFrameScale);
  CHECK(e[0] == doctest::Approx(std::hypot(dx, dy) * 0.1));
}

TEST_CASE("radial error rejects mismatched inputs") {
  const LandmarkSet a = make_set({{1, 1}});
  const LandmarkSet b = make_set({{1, 1}}, Frame::kResized, 640, 800);
  CHECK_THROWS_AS(radial_error(a, b, 0.1, {1, 1}), InvalidInput);
  CHECK_THROWS_AS(radial_error(a, make_set({{1, 1}, {2, 2}}), 0.1, {1, 1}), InvalidInput);
}

TEST_CASE("aggregate statistics") {
  const std::vector<double> three = {1.0, 2.0, 3.0};
  const Aggregate a = aggregate(three);
  CHECK(a.mre == 2.0);
  CHECK(a.medre == 2.0);
  CHECK(a.count == 3);

  const std::vector<double> four = {1.0, 2.5, 3.9, 5.0};
  const Aggregate b = aggregate(four);
  CHECK(b.sdr_at(4.0) == 75.0);
  CHECK(b.sdr_at(2.0) == 25.0);
  CHECK(b.sdr_at(2.5) == 50.0);  // inclusive boundary
  CHECK(b.sdr_at(3.0) == 50.0);
  CHECK(b.medre == doctest::Approx(3.2));

  const std::vector<double> none;
  CHECK_THROWS_AS(aggregate(none), InvalidInput);
}

TEST_CASE("aggregate is permutation invariant and SDR is monotone") {
  std::mt19937_64 rng(3);
  std::exponential_distribution<double> d(0.4);
  std::vector<double> e(101);
  for (double& v : e) v = d(rng);
  const Aggregate a = aggregate(e);
  std::shuffle(e.begin(), e.end(), rng);
  const Aggregate b = aggregate(e);
  CHECK(a.mre == doctest::Approx(b.mre).epsilon(1e-14));
  CHECK(a.medre == b.medre);
  CHECK(a.sdr == b.sdr);
  for (std::size_t i = 1; i < a.sdr.size(); ++i) CHECK(a.sdr[i - 1] <= a.sdr[i]);
  for (double s : a.sdr) {
    CHECK(s >= 0.0);
    CHECK(s <= 100.0);
  }
}

TEST_CASE("isolation degree") {
  std::vector<Point> line;
  for (int i = 0; i < 6; ++i) line.push_back({static_cast<double>(i), 0.0});
  const std::vector<LandmarkSet> sets = {make_set(line)};
  const auto iso = isolation_degree(sets);
  CHECK(iso[0] == doctest::Approx(3.0));
  CHECK(iso[5] == doctest::Approx(3.0));
  CHECK(iso[2] == doctest::Approx((1 + 1 + 2 + 2 + 3) / 5.0));

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 500.0);
  std::vector<LandmarkSet> random_sets, shifted, scaled;
  for (int n = 0; n < 3; ++n) {
    std::vector<Point> p(19), q(19), r(19);
    for (int i = 0; i < 19; ++i) {
      p[i] = {u(rng), u(rng)};
      q[i] = {p[i].x + 37.0, p[i].y - 12.0};
      r[i] = {p[i].x * 2.5, p[i].y * 2.5};
    }
    random_sets.push_back(make_set(p, Frame::kOriginal, 5000, 5000));
    shifted.push_back(make_set(q, Frame::kOriginal, 5000, 5000));
    scaled.push_back(make_set(r, Frame::kOriginal, 5000, 5000));
  }
  const auto base = isolation_degree(random_sets);
  const auto moved = isolation_degree(shifted);
  const auto grown = isolation_degree(scaled);
  for (int i = 0; i < 19; ++i) {
    CHECK(moved[i] == doctest::Approx(base[i]).epsilon(1e-10));
    CHECK(grown[i] == doctest::Approx(2.5 * base[i]).epsilon(1e-10));
  }

  const std::vector<LandmarkSet> small = {make_set({{0, 0}, {1, 1}, {2, 2}, {3, 3}, {4, 4}})};
  CHECK_THROWS_AS(isolation_degree(small), InvalidInput);
}

TEST_CASE("pearson correlation and the isolation table") {
  const std::vector<double> iso = {1.0, 2.0, 3.0, 4.0};
  const std::vector<double> mre = {8.0, 6.0, 4.0, 2.0};
  const IsolationAnalysis a = isolation_vs_error(iso, mre);
  REQUIRE(a.pearson.has_value());
  CHECK(*a.pearson == doctest::Approx(-1.0));
  REQUIRE(a.rows.size() == 4);
  CHECK(a.rows[0].landmark == 1);
  CHECK(a.rows[3].isolation == 4.0);
  CHECK(a.rows[3].mre == 2.0);
  const std::vector<double> flat = {2.0, 2.0, 2.0, 2.0};
  CHECK_FALSE(isolation_vs_error(flat, mre).pearson.has_value());
  const std::vector<double> short_mre = {1.0};
  CHECK_THROWS_AS(isolation_vs_error(iso, short_mre), InvalidInput);
}

TEST_CASE("evaluation reports split cohorts and serialize") {
  EvalReport report;
  report.meta = {8.0, 300, true, 7, "unit"};
  report.rows = {{"a", 0, 1, Cohort::kTargeted, 0.5},
                 {"a", 0, 2, Cohort::kStationary, 1.5},
                 {"a", 0, 3, Cohort::kStationary, 2.5}};
  CHECK(report.errors(Cohort::kStationary) == std::vector<double>{1.5, 2.5});
  CHECK_FALSE(report.summary(Cohort::kDetection).has_value());
  CHECK(report.summary(Cohort::kStationary)->mre == 2.0);

  const auto dir = testing::scratch_dir("report");
  report.write_csv(dir / "errors.csv");
  report.write_summary_json(dir / "summary.json");
  std::ifstream csv(dir / "errors.csv");
  std::string line;
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 4);
  std::ifstream js(dir / "summary.json");
  const auto j = nlohmann::json::parse(js);
  CHECK(j.at("meta").at("iterations") == 300);
  CHECK(j.at("meta").at("adaptive") == true);
  CHECK(j.contains("targeted"));
  CHECK_FALSE(j.contains("detection"));
  CHECK(j.at("stationary").at("mre_mm") == 2.0);
  for (const char* key : {"2mm", "2.5mm", "3mm", "4mm"}) {
    CHECK(j.at("stationary").at("sdr_percent").contains(key));
  }
}
