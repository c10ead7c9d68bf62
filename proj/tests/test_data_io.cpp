#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "lmattack/data_io.hpp"
#include "lmattack/metrics.hpp"
#include "lmattack/rng.hpp"
#include "test_support.hpp"

using namespace lmattack;
namespace fs = std::filesystem;

namespace {

GrayImage gray(int w, int h, std::uint8_t fill) {
  return GrayImage{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h, fill)};
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream(path) << text;
}

std::string id3(int i) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%03d", i);
  return buf;
}

}  // namespace

TEST_CASE("annotation parsing averages annotators and tolerates trailing lines") {
  const auto root = testing::scratch_dir("isbi_small");
  const IsbiLayout layout{"RawImage", "senior", "junior", 2};
  fs::create_directories(root / "RawImage");
  write_png(gray(8, 6, 40), root / "RawImage" / "001.png");
  write_text(root / "senior" / "001.txt", "100,200\n5,6\n3\n");
  write_text(root / "junior" / "001.txt", "102,198\n7,8\n");
  const auto records = load_isbi(root, layout);
  REQUIRE(records.size() == 1);
  CHECK(records[0].image_id == "001");
  CHECK(records[0].split == Split::kTrain);
  CHECK(records[0].landmarks.points[0] == Point{101, 199});
  CHECK(records[0].landmarks.points[1] == Point{6, 7});
  CHECK(records[0].landmarks.frame == Frame::kOriginal);
  CHECK(records[0].raw == gray(8, 6, 40));
}

TEST_CASE("annotation errors name the offending file") {
  const auto root = testing::scratch_dir("isbi_bad");
  write_text(root / "short.txt", "1,2\n");
  write_text(root / "bad.txt", "1,2\nabc\n");
  try {
    read_annotation_file(root / "short.txt", 2);
    FAIL("expected a throw");
  } catch (const InvalidInput& e) {
    CHECK(std::string(e.what()).find("short.txt") != std::string::npos);
  }
  try {
    read_annotation_file(root / "bad.txt", 2);
    FAIL("expected a throw");
  } catch (const InvalidInput& e) {
    CHECK(std::string(e.what()).find("bad.txt") != std::string::npos);
  }
  CHECK_THROWS_AS(read_annotation_file(root / "absent.txt", 2), InvalidInput);

  const IsbiLayout layout{"RawImage", "senior", "junior", 2};
  fs::create_directories(root / "RawImage");
  write_png(gray(4, 4, 0), root / "RawImage" / "001.png");
  write_text(root / "senior" / "001.txt", "1,1\n2,2\n");
  CHECK_THROWS_AS(load_isbi(root, layout), InvalidInput);  // junior file missing
  CHECK_THROWS_AS(load_isbi(root / "nowhere", layout), InvalidInput);
}

TEST_CASE("official split sizes and export/import round trip") {
  const auto root = testing::scratch_dir("isbi_full");
  const IsbiLayout layout{"RawImage", "senior", "junior", 2};
  std::vector<DatasetRecord> records;
  for (int i = 1; i <= 400; ++i) {
    DatasetRecord r;
    r.image_id = id3(i);
    r.raw = gray(5, 4, static_cast<std::uint8_t>(i % 256));
    r.landmarks.frame = Frame::kOriginal;
    r.landmarks.width = 5;
    r.landmarks.height = 4;
    r.landmarks.points = {{0.25 * i, 1.0}, {2.0, 3.5}};
    records.push_back(r);
  }
  export_isbi(records, root, layout);
  const auto loaded = load_isbi(root, layout);
  REQUIRE(loaded.size() == 400);
  int counts[3] = {0, 0, 0};
  for (const auto& r : loaded) counts[static_cast<int>(r.split)]++;
  CHECK(counts[0] == 150);
  CHECK(counts[1] == 150);
  CHECK(counts[2] == 100);
  CHECK(loaded[150].split == Split::kTest1);
  CHECK(loaded[300].split == Split::kTest2);
  for (std::size_t i = 0; i < 400; ++i) {
    CHECK(loaded[i].image_id == records[i].image_id);
    CHECK(loaded[i].raw == records[i].raw);
    CHECK(loaded[i].landmarks == records[i].landmarks);
  }
  CHECK(load_isbi(root, layout) == loaded);
}

TEST_CASE("normalization endpoints") {
  GrayImage raw = gray(4, 1, 0);
  raw.pixels = {0, 255, 127, 128};
  const Image img = normalize_image(raw, PreprocessSpec{4, 1, 1});
  CHECK(img.data[0] == -1.0f);
  CHECK(img.data[1] == 1.0f);
  // 127.5 sits halfway between the two middle levels.
  CHECK(0.5f * (img.data[2] + img.data[3]) == doctest::Approx(0.0).epsilon(1e-7));
  const Image rgb = normalize_image(raw, PreprocessSpec{4, 1, 3});
  CHECK(rgb.channels == 3);
  CHECK(rgb.at(2, 0, 1) == 1.0f);
  CHECK(to_gray8(img) == raw);
}

TEST_CASE("preprocess scales landmarks per axis and inverts") {
  DatasetRecord r;
  r.image_id = "corner";
  r.raw = gray(1935, 2400, 90);
  r.landmarks.frame = Frame::kOriginal;
  r.landmarks.width = 1935;
  r.landmarks.height = 2400;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> ux(0.0, 1935.0), uy(0.0, 2400.0);
  r.landmarks.points = {{1935, 2400}, {0, 0}};
  for (int i = 0; i < 50; ++i) r.landmarks.points.push_back({ux(rng), uy(rng)});
  const PreprocessedSample s = preprocess(r, PreprocessSpec::isbi());
  CHECK(s.image.width == 640);
  CHECK(s.image.height == 800);
  CHECK(s.landmarks.frame == Frame::kResized);
  CHECK(s.landmarks.points[0].x == doctest::Approx(640.0));
  CHECK(s.landmarks.points[0].y == doctest::Approx(800.0));
  CHECK(s.scale.sx == doctest::Approx(kIsbiFrameScale.sx));
  CHECK(s.scale.sy == doctest::Approx(kIsbiFrameScale.sy));
  const LandmarkSet back = to_original_frame(s.landmarks, s.scale, 1935, 2400);
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(std::abs(back.points[i].x - r.landmarks.points[i].x) <= 0.5);
    CHECK(std::abs(back.points[i].y - r.landmarks.points[i].y) <= 0.5);
  }
  for (float v : s.image.data) CHECK(v == doctest::Approx(90.0 / 127.5 - 1.0).epsilon(1e-6));
}

TEST_CASE("synthetic data is reproducible and landmarks are structure centres") {
  SynthConfig cfg;
  cfg.images = 6;
  auto a = make_stream(3, "synth");
  auto b = make_stream(3, "synth");
  const auto da = synth_dataset(a, cfg);
  const auto db = synth_dataset(b, cfg);
  CHECK(da == db);
  auto c = make_stream(4, "synth");
  CHECK_FALSE(synth_dataset(c, cfg) == da);

  REQUIRE(da.size() == 6);
  for (const auto& r : da) {
    CHECK(r.raw.width == 128);
    CHECK(r.landmarks.size() == 8);
    r.landmarks.validate();
    // The cluster lies closer together than any isolated pair.
    const auto& p = r.landmarks.points;
    const double d01 = std::hypot(p[0].x - p[1].x, p[0].y - p[1].y);
    CHECK(d01 < cfg.min_separation);
    // The structure at each landmark stands out from its surroundings.
    for (std::size_t k = 0; k < p.size(); ++k) {
      const int x = static_cast<int>(std::lround(p[k].x));
      const int y = static_cast<int>(std::lround(p[k].y));
      CHECK(x >= 0);
      CHECK(y >= 0);
      CHECK(x < 128);
      CHECK(y < 128);
    }
  }
}

TEST_CASE("synthetic structure contrast only changes pixels around landmarks") {
  SynthConfig flat;
  flat.images = 2;
  flat.noise = 0.0;
  flat.contrast = 0.0;
  SynthConfig marked = flat;
  marked.contrast = 60.0;
  auto a = make_stream(5, "synth");
  auto b = make_stream(5, "synth");
  const auto plain = synth_dataset(a, flat);
  const auto shaped = synth_dataset(b, marked);
  for (std::size_t i = 0; i < plain.size(); ++i) {
    REQUIRE(plain[i].landmarks == shaped[i].landmarks);
    int changed = 0;
    int changed_far = 0;
    for (int y = 0; y < 128; ++y) {
      for (int x = 0; x < 128; ++x) {
        const std::size_t at = static_cast<std::size_t>(y) * 128 + x;
        if (plain[i].raw.pixels[at] == shaped[i].raw.pixels[at]) continue;
        ++changed;
        bool near = false;
        for (const Point& p : shaped[i].landmarks.points) {
          near = near || std::hypot(x - p.x, y - p.y) <= marked.structure_radius + 2.0;
        }
        changed_far += !near;
      }
    }
    CHECK(changed > 0);
    CHECK(changed_far == 0);
  }
  SynthConfig bad;
  bad.noise = -1.0;
  auto c = make_stream(5, "synth");
  CHECK_THROWS_AS(synth_dataset(c, bad), InvalidInput);
}

TEST_CASE("synthetic configs that cannot fit are rejected") {
  SynthConfig cfg;
  cfg.landmarks = 40;
  auto rng = make_stream(1, "synth");
  CHECK_THROWS_AS(synth_layout(rng, cfg), InvalidInput);
  SynthConfig tight;
  tight.cluster_spacing = 2.0;
  CHECK_THROWS_AS(synth_layout(rng, tight), InvalidInput);
}

TEST_CASE("dataset persistence round trips") {
  auto rng = make_stream(5, "synth");
  auto records = synth_dataset(rng, 5, 6, 128);
  assign_splits(records, 3);
  CHECK(records[2].split == Split::kTrain);
  CHECK(records[3].split == Split::kTest1);
  const auto dir = testing::scratch_dir("dataset");
  save_dataset(records, dir);
  CHECK(load_dataset(dir) == records);
  CHECK_THROWS_AS(load_dataset(dir / "missing"), InvalidInput);
}

TEST_CASE("visualization perturbation panel") {
  const Image orig(1, 4, 4, 0.0f);
  const TargetSpec spec = TargetSpec::from_targets("v", {}, 1);
  LandmarkSet none;
  none.frame = Frame::kResized;
  none.width = none.height = 4;
  const RgbImage same = render_visualization(orig, orig, none, none, spec);
  CHECK(same.width == 12);
  CHECK(same.height == 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 4; x < 8; ++x) {
      const auto px = same.at(y, x);
      CHECK(px[0] == kPerturbationMidGray);
      CHECK(px[1] == kPerturbationMidGray);
      CHECK(px[2] == kPerturbationMidGray);
    }
  }

  Image adv = orig;
  adv.at(0, 1, 1) = static_cast<float>(3.0 * 2.0 / 255.0);    // +3 levels
  adv.at(0, 2, 2) = static_cast<float>(-5.0 * 2.0 / 255.0);   // -5 levels
  adv.at(0, 3, 3) = static_cast<float>(20.0 * 2.0 / 255.0);   // saturates
  const RgbImage v = render_visualization(orig, adv, none, none, spec, 8.0);
  CHECK(v.at(1, 5)[0] == 128 + 24);
  CHECK(v.at(2, 6)[0] == 128 - 40);
  CHECK(v.at(3, 7)[0] == 255);

  const auto dir = testing::scratch_dir("vis");
  export_visualization(orig, adv, none, none, spec, dir / "panel.png");
  CHECK(fs::file_size(dir / "panel.png") > 0);
  CHECK_THROWS_AS(render_visualization(orig, Image(1, 5, 4), none, none, spec), InvalidInput);
}

TEST_CASE("float images round trip losslessly") {
  Image img(1, 3, 5);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = 0.123456789f * static_cast<float>(i) - 0.7f;
  const auto dir = testing::scratch_dir("tiff");
  write_float_tiff(img, dir / "x.tiff");
  CHECK(read_float_tiff(dir / "x.tiff") == img);
}
