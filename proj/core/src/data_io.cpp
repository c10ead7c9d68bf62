#include "lmattack/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace lmattack {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

cv::Mat as_mat(const GrayImage& image) {
  return cv::Mat(image.height, image.width, CV_8UC1, const_cast<std::uint8_t*>(image.pixels.data()));
}

GrayImage from_mat(const cv::Mat& mat) {
  GrayImage out;
  out.width = mat.cols;
  out.height = mat.rows;
  out.pixels.resize(static_cast<std::size_t>(mat.rows) * mat.cols);
  for (int y = 0; y < mat.rows; ++y) {
    std::copy_n(mat.ptr<std::uint8_t>(y), mat.cols, out.pixels.begin() + static_cast<std::size_t>(y) * mat.cols);
  }
  return out;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

bool parse_double(const std::string& text, double& value) {
  const std::string t = trim(text);
  if (t.empty()) return false;
  const char* begin = t.data();
  const char* end = t.data() + t.size();
  if (*begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  return ec == std::errc() && ptr == end && std::isfinite(value);
}

bool numeric_stem(const fs::path& p, int& id) {
  const std::string stem = p.stem().string();
  if (stem.empty() || !std::all_of(stem.begin(), stem.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    return false;
  }
  id = std::stoi(stem);
  return true;
}

Split isbi_split(int id) {
  if (id <= 150) return Split::kTrain;
  if (id <= 300) return Split::kTest1;
  return Split::kTest2;
}

}  // namespace

const char* to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kTest1: return "test1";
    case Split::kTest2: return "test2";
  }
  return "?";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "test1" || name == "test") return Split::kTest1;
  if (name == "test2") return Split::kTest2;
  throw InvalidInput("unknown split '" + name + "'");
}

// Image files -----------------------------------------------------------------

GrayImage read_gray(const fs::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (mat.empty()) throw InvalidInput("cannot read image " + path.string());
  return from_mat(mat);
}

void write_png(const GrayImage& image, const fs::path& path) {
  if (!cv::imwrite(path.string(), as_mat(image))) throw RuntimeFailure("cannot write " + path.string());
}

void write_png(const RgbImage& image, const fs::path& path) {
  cv::Mat rgb(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.pixels.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) throw RuntimeFailure("cannot write " + path.string());
}

void write_float_tiff(const Image& image, const fs::path& path) {
  cv::Mat mat(image.height, image.width, CV_32FC1, const_cast<float*>(image.channel(0)));
  if (!cv::imwrite(path.string(), mat)) throw RuntimeFailure("cannot write " + path.string());
}

Image read_float_tiff(const fs::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (mat.empty() || mat.type() != CV_32FC1) throw InvalidInput("not a float32 image: " + path.string());
  Image out(1, mat.rows, mat.cols);
  for (int y = 0; y < mat.rows; ++y) std::copy_n(mat.ptr<float>(y), mat.cols, out.channel(0) + y * mat.cols);
  return out;
}

// ISBI ---------------------------------------------------------------------------

std::vector<Point> read_annotation_file(const fs::path& path, int landmarks) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("missing annotation file " + path.string());
  std::vector<Point> points;
  std::string line;
  int line_no = 0;
  while (static_cast<int>(points.size()) < landmarks && std::getline(in, line)) {
    ++line_no;
    const auto comma = line.find(',');
    Point p;
    if (comma == std::string::npos || !parse_double(line.substr(0, comma), p.x) ||
        !parse_double(line.substr(comma + 1), p.y)) {
      throw InvalidInput("malformed landmark line " + std::to_string(line_no) + " in " + path.string());
    }
    points.push_back(p);
  }
  if (static_cast<int>(points.size()) != landmarks) {
    throw InvalidInput("expected " + std::to_string(landmarks) + " landmarks, found " + std::to_string(points.size()) +
                       " in " + path.string());
  }
  return points;
}

std::vector<DatasetRecord> load_isbi(const fs::path& root, const IsbiLayout& layout) {
  const fs::path image_root = root / layout.image_dir;
  if (!fs::is_directory(image_root)) throw InvalidInput("missing image directory " + image_root.string());
  std::map<int, fs::path> images;
  for (const auto& entry : fs::recursive_directory_iterator(image_root)) {
    int id = 0;
    if (entry.is_regular_file() && numeric_stem(entry.path(), id)) images[id] = entry.path();
  }
  if (images.empty()) throw InvalidInput("no numbered images under " + image_root.string());

  std::vector<DatasetRecord> records;
  records.reserve(images.size());
  for (const auto& [id, image_path] : images) {
    const std::string stem = image_path.stem().string();
    const auto senior = read_annotation_file(root / layout.senior_dir / (stem + ".txt"), layout.landmarks);
    const auto junior = read_annotation_file(root / layout.junior_dir / (stem + ".txt"), layout.landmarks);
    DatasetRecord r;
    r.image_id = stem;
    r.raw = read_gray(image_path);
    r.split = isbi_split(id);
    r.landmarks.frame = Frame::kOriginal;
    r.landmarks.width = r.raw.width;
    r.landmarks.height = r.raw.height;
    for (int i = 0; i < layout.landmarks; ++i) {
      r.landmarks.points.push_back({0.5 * (senior[i].x + junior[i].x), 0.5 * (senior[i].y + junior[i].y)});
    }
    records.push_back(std::move(r));
  }
  return records;
}

void export_isbi(const std::vector<DatasetRecord>& records, const fs::path& root, const IsbiLayout& layout) {
  const fs::path image_root = root / layout.image_dir;
  fs::create_directories(image_root);
  fs::create_directories(root / layout.senior_dir);
  fs::create_directories(root / layout.junior_dir);
  for (const DatasetRecord& r : records) {
    write_png(r.raw, image_root / (r.image_id + ".bmp"));
    for (const auto& dir : {layout.senior_dir, layout.junior_dir}) {
      std::ofstream out(root / dir / (r.image_id + ".txt"));
      if (!out) throw RuntimeFailure("cannot write annotations for " + r.image_id);
      out << std::setprecision(17);
      for (const Point& p : r.landmarks.points) out << p.x << ',' << p.y << '\n';
    }
  }
}

// Preprocessing ---------------------------------------------------------------------

Image normalize_image(const GrayImage& raw, const PreprocessSpec& spec) {
  if (spec.width <= 0 || spec.height <= 0 || spec.channels <= 0) throw InvalidInput("invalid preprocess spec");
  cv::Mat source;
  as_mat(raw).convertTo(source, CV_32F);
  cv::Mat resized;
  if (raw.width == spec.width && raw.height == spec.height) {
    resized = source;
  } else {
    cv::resize(source, resized, cv::Size(spec.width, spec.height), 0.0, 0.0, cv::INTER_LINEAR);
  }
  Image out(spec.channels, spec.height, spec.width);
  for (int y = 0; y < spec.height; ++y) {
    const float* row = resized.ptr<float>(y);
    for (int x = 0; x < spec.width; ++x) {
      const float v = row[x] / 127.5f - 1.0f;
      for (int c = 0; c < spec.channels; ++c) out.at(c, y, x) = v;
    }
  }
  return out;
}

PreprocessedSample preprocess(const DatasetRecord& record, const PreprocessSpec& spec) {
  PreprocessedSample out;
  out.image_id = record.image_id;
  out.image = normalize_image(record.raw, spec);
  const double fx = static_cast<double>(spec.width) / record.raw.width;
  const double fy = static_cast<double>(spec.height) / record.raw.height;
  out.scale = {1.0 / fx, 1.0 / fy};
  out.landmarks.frame = Frame::kResized;
  out.landmarks.width = spec.width;
  out.landmarks.height = spec.height;
  for (const Point& p : record.landmarks.points) out.landmarks.points.push_back({p.x * fx, p.y * fy});
  return out;
}

GrayImage to_gray8(const Image& image) {
  GrayImage out;
  out.width = image.width;
  out.height = image.height;
  out.pixels.resize(image.plane());
  const float* src = image.channel(0);
  for (std::size_t i = 0; i < image.plane(); ++i) {
    const double level = (static_cast<double>(src[i]) + 1.0) * 127.5;
    out.pixels[i] = static_cast<std::uint8_t>(std::clamp<long>(std::lround(level), 0, 255));
  }
  return out;
}

LandmarkSet to_original_frame(const LandmarkSet& resized, const FrameScale& scale, int width, int height) {
  LandmarkSet out;
  out.frame = Frame::kOriginal;
  out.width = width;
  out.height = height;
  for (const Point& p : resized.points) out.points.push_back({p.x * scale.sx, p.y * scale.sy});
  return out;
}

// Synthetic data --------------------------------------------------------------------

namespace {

/// Whether offset (dx, dy) from a center falls inside structure `shape`.
bool inside_shape(int shape, double dx, double dy, double r) {
  const double ax = std::abs(dx);
  const double ay = std::abs(dy);
  const double d = std::hypot(dx, dy);
  switch (shape % 8) {
    case 0: return d <= r;                                        // disk
    case 1: return d <= r && d >= 0.55 * r;                       // ring
    case 2: return ax <= 0.85 * r && ay <= 0.85 * r;              // square
    case 3: return (ax <= 0.3 * r && ay <= r) || (ay <= 0.3 * r && ax <= r);  // plus
    case 4: return ax + ay <= r;                                  // diamond
    case 5: return std::abs(ax - ay) <= 0.42 * r && d <= r;       // x
    case 6: return dy <= 0.6 * r && dy >= -r && ax <= 0.5 * (dy + r);  // triangle
    default: return (ax <= 0.9 * r && ay <= 0.9 * r) && (ax >= 0.45 * r || ay >= 0.45 * r);  // frame
  }
}

double min_pairwise(const std::vector<Point>& pts) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      best = std::min(best, std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y));
    }
  }
  return best;
}

}  // namespace

std::vector<Point> synth_layout(std::mt19937_64& rng, const SynthConfig& c) {
  if (c.landmarks <= 0 || c.size <= 0 || c.structure_radius <= 0.0 || c.cluster_size < 0) {
    throw InvalidInput("synthetic config: invalid sizes");
  }
  const double clearance = 2.0 * c.structure_radius + 2.0 * std::sqrt(2.0) * c.jitter;
  const int cluster = std::min(c.cluster_size, c.landmarks);
  if (cluster > 1 && c.cluster_spacing <= clearance) {
    throw InvalidInput("synthetic config: cluster spacing lets structures overlap");
  }
  if (c.min_separation <= clearance) throw InvalidInput("synthetic config: separation lets structures overlap");
  const double lo = c.margin + c.shift + c.jitter;
  const double hi = c.size - 1 - lo;
  if (hi <= lo) throw InvalidInput("synthetic config: image too small for the margins");

  std::uniform_real_distribution<double> coord(lo, hi);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * 3.14159265358979323846);
  for (int attempt = 0; attempt < 2000; ++attempt) {
    std::vector<Point> pts;
    if (cluster > 0) {
      const double radius = cluster > 1 ? c.cluster_spacing / (2.0 * std::sin(3.14159265358979323846 / cluster)) : 0.0;
      const Point center{coord(rng), coord(rng)};
      const double phase = angle(rng);
      bool fits = true;
      for (int i = 0; i < cluster; ++i) {
        const double a = phase + 2.0 * 3.14159265358979323846 * i / cluster;
        const Point p{center.x + radius * std::cos(a), center.y + radius * std::sin(a)};
        if (p.x < lo || p.x > hi || p.y < lo || p.y > hi) fits = false;
        pts.push_back(p);
      }
      if (!fits) continue;
    }
    int tries = 0;
    while (static_cast<int>(pts.size()) < c.landmarks && tries < 5000) {
      ++tries;
      const Point p{coord(rng), coord(rng)};
      const bool clear = std::all_of(pts.begin(), pts.end(), [&](const Point& q) {
        return std::hypot(p.x - q.x, p.y - q.y) >= c.min_separation;
      });
      if (clear) pts.push_back(p);
    }
    if (static_cast<int>(pts.size()) == c.landmarks && min_pairwise(pts) > clearance) return pts;
  }
  throw InvalidInput("synthetic config: " + std::to_string(c.landmarks) + " structures do not fit in " +
                     std::to_string(c.size) + "x" + std::to_string(c.size) + " without overlap");
}

std::vector<DatasetRecord> synth_dataset(std::mt19937_64& rng, const SynthConfig& c) {
  if (c.images < 0) throw InvalidInput("synthetic config: negative image count");
  if (!(c.noise >= 0.0)) throw InvalidInput("synthetic config: negative noise level");
  const std::vector<Point> layout = synth_layout(rng, c);
  const int n = c.size;
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, c.noise);
  constexpr int kSub = 4;

  std::vector<DatasetRecord> records;
  records.reserve(c.images);
  for (int img = 0; img < c.images; ++img) {
    DatasetRecord r;
    std::ostringstream id;
    id << "synth_" << std::setw(4) << std::setfill('0') << img;
    r.image_id = id.str();
    r.landmarks.frame = Frame::kOriginal;
    r.landmarks.width = n;
    r.landmarks.height = n;
    const Point shift{c.shift * unit(rng), c.shift * unit(rng)};
    for (const Point& p : layout) {
      r.landmarks.points.push_back({p.x + shift.x + c.jitter * unit(rng), p.y + shift.y + c.jitter * unit(rng)});
    }

    // Background: base level, linear ramp, a few soft blobs.
    const double base = 90.0 + 20.0 * unit(rng);
    const double ramp_x = 20.0 * unit(rng);
    const double ramp_y = 20.0 * unit(rng);
    struct Blob { double x, y, s, a; };
    std::vector<Blob> blobs;
    for (int b = 0; b < 3; ++b) {
      blobs.push_back({n * (0.5 + 0.5 * unit(rng)), n * (0.5 + 0.5 * unit(rng)), n * (0.2 + 0.1 * unit(rng)),
                       15.0 * unit(rng)});
    }
    std::vector<double> canvas(static_cast<std::size_t>(n) * n);
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        double v = base + ramp_x * x / n + ramp_y * y / n;
        for (const Blob& b : blobs) {
          v += b.a * std::exp(-((x - b.x) * (x - b.x) + (y - b.y) * (y - b.y)) / (2.0 * b.s * b.s));
        }
        canvas[static_cast<std::size_t>(y) * n + x] = v;
      }
    }

    // Structures, anti-aliased by supersampling.
    const double r_s = c.structure_radius;
    for (int k = 0; k < c.landmarks; ++k) {
      const Point& p = r.landmarks.points[k];
      const double amplitude = (k / 8) % 2 == 0 ? c.contrast : -0.7 * c.contrast;
      const int x0 = std::max(0, static_cast<int>(std::floor(p.x - r_s - 1)));
      const int x1 = std::min(n - 1, static_cast<int>(std::ceil(p.x + r_s + 1)));
      const int y0 = std::max(0, static_cast<int>(std::floor(p.y - r_s - 1)));
      const int y1 = std::min(n - 1, static_cast<int>(std::ceil(p.y + r_s + 1)));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          int hits = 0;
          for (int sy = 0; sy < kSub; ++sy) {
            for (int sx = 0; sx < kSub; ++sx) {
              const double dx = x + (sx + 0.5) / kSub - 0.5 - p.x;
              const double dy = y + (sy + 0.5) / kSub - 0.5 - p.y;
              hits += inside_shape(k, dx, dy, r_s);
            }
          }
          canvas[static_cast<std::size_t>(y) * n + x] += amplitude * hits / (kSub * kSub);
        }
      }
    }

    r.raw.width = n;
    r.raw.height = n;
    r.raw.pixels.resize(canvas.size());
    for (std::size_t i = 0; i < canvas.size(); ++i) {
      r.raw.pixels[i] = static_cast<std::uint8_t>(std::clamp<long>(std::lround(canvas[i] + noise(rng)), 0, 255));
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<DatasetRecord> synth_dataset(std::mt19937_64& rng, int n_images, int landmarks, int size) {
  SynthConfig c;
  c.images = n_images;
  c.landmarks = landmarks;
  c.size = size;
  return synth_dataset(rng, c);
}

void assign_splits(std::vector<DatasetRecord>& records, std::size_t train) {
  for (std::size_t i = 0; i < records.size(); ++i) records[i].split = i < train ? Split::kTrain : Split::kTest1;
}

void save_dataset(const std::vector<DatasetRecord>& records, const fs::path& dir) {
  fs::create_directories(dir / "images");
  json index;
  index["format"] = "lmattack-dataset";
  index["version"] = 1;
  json entries = json::array();
  for (const DatasetRecord& r : records) {
    const std::string file = "images/" + r.image_id + ".png";
    write_png(r.raw, dir / file);
    json pts = json::array();
    for (const Point& p : r.landmarks.points) pts.push_back({p.x, p.y});
    entries.push_back({{"image_id", r.image_id},
                       {"file", file},
                       {"split", to_string(r.split)},
                       {"width", r.raw.width},
                       {"height", r.raw.height},
                       {"landmarks", pts}});
  }
  index["records"] = entries;
  std::ofstream out(dir / "landmarks.json");
  if (!out) throw RuntimeFailure("cannot write " + (dir / "landmarks.json").string());
  out << index.dump(1) << '\n';
}

std::vector<DatasetRecord> load_dataset(const fs::path& dir) {
  std::ifstream in(dir / "landmarks.json");
  if (!in) throw InvalidInput("missing " + (dir / "landmarks.json").string());
  json index;
  try {
    index = json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidInput("malformed " + (dir / "landmarks.json").string() + ": " + e.what());
  }
  std::vector<DatasetRecord> records;
  for (const json& e : index.at("records")) {
    DatasetRecord r;
    r.image_id = e.at("image_id").get<std::string>();
    r.split = split_from_string(e.at("split").get<std::string>());
    r.raw = read_gray(dir / e.at("file").get<std::string>());
    r.landmarks.frame = Frame::kOriginal;
    r.landmarks.width = r.raw.width;
    r.landmarks.height = r.raw.height;
    for (const json& p : e.at("landmarks")) r.landmarks.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    records.push_back(std::move(r));
  }
  return records;
}

// Visualization ----------------------------------------------------------------------

namespace {

const cv::Scalar kRed(0, 0, 255);  // BGR
const cv::Scalar kGreen(0, 200, 0);
const cv::Scalar kBlue(255, 64, 0);

cv::Mat gray_panel(const Image& image, int upscale) {
  const GrayImage g = to_gray8(image);
  cv::Mat bgr;
  cv::cvtColor(as_mat(g), bgr, cv::COLOR_GRAY2BGR);
  if (upscale > 1) cv::resize(bgr, bgr, cv::Size(), upscale, upscale, cv::INTER_NEAREST);
  return bgr;
}

void mark(cv::Mat& panel, const Point& p, int upscale, const cv::Scalar& color) {
  const cv::Point c(static_cast<int>(std::lround((p.x + 0.5) * upscale - 0.5)),
                    static_cast<int>(std::lround((p.y + 0.5) * upscale - 0.5)));
  cv::circle(panel, c, std::max(2, upscale + 1), color, cv::FILLED, cv::LINE_AA);
}

void cross(cv::Mat& panel, const Point& p, int upscale, const cv::Scalar& color) {
  const int s = std::max(3, 2 * upscale);
  const cv::Point c(static_cast<int>(std::lround((p.x + 0.5) * upscale - 0.5)),
                    static_cast<int>(std::lround((p.y + 0.5) * upscale - 0.5)));
  cv::line(panel, c - cv::Point(s, s), c + cv::Point(s, s), color, 1, cv::LINE_AA);
  cv::line(panel, c - cv::Point(s, -s), c + cv::Point(s, -s), color, 1, cv::LINE_AA);
}

}  // namespace

RgbImage render_visualization(const Image& original, const Image& adversarial, const LandmarkSet& before,
                              const LandmarkSet& after, const TargetSpec& spec, double magnification,
                              int upscale) {
  if (!original.same_shape(adversarial)) throw InvalidInput("visualization: image shapes differ");
  if (before.size() != after.size()) throw InvalidInput("visualization: landmark counts differ");
  upscale = std::max(1, upscale);
  const int w = original.width;
  const int h = original.height;

  cv::Mat left = gray_panel(original, upscale);
  for (const Point& p : before.points) mark(left, p, upscale, kRed);

  cv::Mat delta(h, w, CV_8UC1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double levels = (static_cast<double>(adversarial.at(0, y, x)) - original.at(0, y, x)) * 127.5;
      delta.at<std::uint8_t>(y, x) =
          static_cast<std::uint8_t>(std::clamp<long>(std::lround(kPerturbationMidGray + magnification * levels), 0, 255));
    }
  }
  cv::Mat middle;
  cv::cvtColor(delta, middle, cv::COLOR_GRAY2BGR);
  if (upscale > 1) cv::resize(middle, middle, cv::Size(), upscale, upscale, cv::INTER_NEAREST);

  cv::Mat right = gray_panel(adversarial, upscale);
  std::vector<bool> targeted(after.size(), false);
  for (const auto& t : spec.targeted) {
    if (t.index >= 0 && static_cast<std::size_t>(t.index) < after.size()) {
      targeted[t.index] = true;
      mark(right, before.points[t.index], upscale, kRed);
      cross(right, t.position, upscale, kGreen);
    }
  }
  for (std::size_t i = 0; i < after.size(); ++i) mark(right, after.points[i], upscale, targeted[i] ? kGreen : kBlue);

  cv::Mat panel;
  cv::hconcat(std::vector<cv::Mat>{left, middle, right}, panel);
  cv::Mat rgb;
  cv::cvtColor(panel, rgb, cv::COLOR_BGR2RGB);
  RgbImage out;
  out.width = rgb.cols;
  out.height = rgb.rows;
  out.pixels.resize(static_cast<std::size_t>(rgb.rows) * rgb.cols * 3);
  for (int y = 0; y < rgb.rows; ++y) {
    std::copy_n(rgb.ptr<std::uint8_t>(y), rgb.cols * 3, out.pixels.begin() + static_cast<std::size_t>(y) * rgb.cols * 3);
  }
  return out;
}

void export_visualization(const Image& original, const Image& adversarial, const LandmarkSet& before,
                          const LandmarkSet& after, const TargetSpec& spec, const fs::path& path,
                          double magnification, int upscale) {
  write_png(render_visualization(original, adversarial, before, after, spec, magnification, upscale), path);
}

void write_line_plot(const std::vector<PlotSeries>& series, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const fs::path& path) {
  constexpr int kWidth = 720;
  constexpr int kHeight = 480;
  constexpr int kLeft = 70, kRight = 20, kTop = 40, kBottom = 60;
  cv::Mat canvas(kHeight, kWidth, CV_8UC3, cv::Scalar(255, 255, 255));
  double x_min = std::numeric_limits<double>::infinity(), x_max = -x_min;
  double y_min = 0.0, y_max = -std::numeric_limits<double>::infinity();
  for (const auto& s : series) {
    for (double v : s.x) x_min = std::min(x_min, v), x_max = std::max(x_max, v);
    for (double v : s.y) y_min = std::min(y_min, v), y_max = std::max(y_max, v);
  }
  if (!std::isfinite(x_min)) x_min = 0.0, x_max = 1.0;
  if (!std::isfinite(y_max) || y_max <= y_min) y_max = y_min + 1.0;
  if (x_max <= x_min) x_max = x_min + 1.0;
  auto to_px = [&](double x, double y) {
    return cv::Point(kLeft + static_cast<int>((x - x_min) / (x_max - x_min) * (kWidth - kLeft - kRight)),
                     kHeight - kBottom - static_cast<int>((y - y_min) / (y_max - y_min) * (kHeight - kTop - kBottom)));
  };
  const cv::Scalar axis(0, 0, 0);
  cv::line(canvas, to_px(x_min, y_min), to_px(x_max, y_min), axis, 1);
  cv::line(canvas, to_px(x_min, y_min), to_px(x_min, y_max), axis, 1);
  auto text = [&](const std::string& s, cv::Point at, double scale = 0.45) {
    cv::putText(canvas, s, at, cv::FONT_HERSHEY_SIMPLEX, scale, axis, 1, cv::LINE_AA);
  };
  for (int t = 0; t <= 4; ++t) {
    const double yv = y_min + (y_max - y_min) * t / 4.0;
    const double xv = x_min + (x_max - x_min) * t / 4.0;
    std::ostringstream ys, xs;
    ys << std::setprecision(3) << yv;
    xs << std::setprecision(4) << xv;
    text(ys.str(), to_px(x_min, yv) + cv::Point(-60, 5));
    text(xs.str(), to_px(xv, y_min) + cv::Point(-10, 20));
  }
  text(title, cv::Point(kLeft, 25), 0.6);
  text(x_label, cv::Point(kWidth / 2 - 40, kHeight - 15));
  text(y_label, cv::Point(5, kTop - 10));
  int legend_y = kTop + 10;
  for (const auto& s : series) {
    const cv::Scalar color(s.color[2], s.color[1], s.color[0]);
    for (std::size_t i = 1; i < std::min(s.x.size(), s.y.size()); ++i) {
      cv::line(canvas, to_px(s.x[i - 1], s.y[i - 1]), to_px(s.x[i], s.y[i]), color, 2, cv::LINE_AA);
    }
    cv::line(canvas, cv::Point(kWidth - 170, legend_y), cv::Point(kWidth - 145, legend_y), color, 2);
    cv::putText(canvas, s.name, cv::Point(kWidth - 140, legend_y + 5), cv::FONT_HERSHEY_SIMPLEX, 0.45, color, 1,
                cv::LINE_AA);
    legend_y += 20;
  }
  if (!cv::imwrite(path.string(), canvas)) throw RuntimeFailure("cannot write " + path.string());
}

}  // namespace lmattack
