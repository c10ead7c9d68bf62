#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "lmattack/attack.hpp"
#include "lmattack/common.hpp"

namespace lmattack {

enum class Split { kTrain, kTest1, kTest2 };

const char* to_string(Split split);
Split split_from_string(const std::string& name);

struct DatasetRecord {
  std::string image_id;
  GrayImage raw;
  LandmarkSet landmarks;  // original frame
  Split split = Split::kTrain;

  friend bool operator==(const DatasetRecord&, const DatasetRecord&) = default;
};

/// Directory names inside an ISBI 2015 root. Images are found recursively
/// under `image_dir` by numeric stem (001.bmp ... 400.bmp); each annotator
/// directory holds <stem>.txt with one "x,y" line per landmark.
struct IsbiLayout {
  std::string image_dir = "RawImage";
  std::string senior_dir = "AnnotationsByMD/400_senior";
  std::string junior_dir = "AnnotationsByMD/400_junior";
  int landmarks = 19;
};

/// Records sorted by id with the two annotators averaged. Ids 1-150 are
/// train, 151-300 test1, 301-400 test2. Errors name the offending path.
std::vector<DatasetRecord> load_isbi(const std::filesystem::path& root, const IsbiLayout& layout = {});

/// Writes records in the ISBI layout (both annotators get the ground truth).
void export_isbi(const std::vector<DatasetRecord>& records, const std::filesystem::path& root,
                 const IsbiLayout& layout = {});

/// Parses the first `landmarks` "x,y" lines of an annotation file.
std::vector<Point> read_annotation_file(const std::filesystem::path& path, int landmarks);

struct PreprocessSpec {
  int width = 640;
  int height = 800;
  int channels = 1;  // grayscale is replicated to this many channels

  static PreprocessSpec isbi() { return {}; }
  static PreprocessSpec desk() { return {128, 128, 1}; }
};

struct PreprocessedSample {
  std::string image_id;
  Image image;
  LandmarkSet landmarks;  // resized frame
  FrameScale scale;       // resized -> original
};

/// Bilinear resize, v -> v / 127.5 - 1, landmarks scaled per axis.
PreprocessedSample preprocess(const DatasetRecord& record, const PreprocessSpec& spec);

Image normalize_image(const GrayImage& raw, const PreprocessSpec& spec);

/// Inverse of the normalization for channel 0, rounded to 8 bits.
GrayImage to_gray8(const Image& image);

LandmarkSet to_original_frame(const LandmarkSet& resized, const FrameScale& scale, int width, int height);

struct SynthConfig {
  int images = 250;
  int landmarks = 8;
  int size = 128;
  double structure_radius = 3.5;
  int cluster_size = 3;         // landmarks 1..cluster_size form a tight group
  double cluster_spacing = 13.0;
  double min_separation = 26.0; // between isolated landmarks
  double jitter = 1.5;          // per-landmark, per-axis
  double shift = 6.0;           // whole-layout, per-axis
  double margin = 14.0;
  double contrast = 100.0;      // structure amplitude in gray levels (every other group of 8 is dark, at -0.7x)
  double noise = 4.0;           // per-pixel Gaussian noise, gray levels
};

/// Mean layout used by synth_dataset.
std::vector<Point> synth_layout(std::mt19937_64& rng, const SynthConfig& config);

/// Images with K distinctive structures (one shape per landmark index) on a
/// textured background. Landmarks are the structure centers. All records
/// are tagged Train; see assign_splits.
std::vector<DatasetRecord> synth_dataset(std::mt19937_64& rng, const SynthConfig& config);
std::vector<DatasetRecord> synth_dataset(std::mt19937_64& rng, int n_images, int landmarks, int size);

/// First `train` records Train, the rest Test1.
void assign_splits(std::vector<DatasetRecord>& records, std::size_t train);

/// PNG images plus landmarks.json.
void save_dataset(const std::vector<DatasetRecord>& records, const std::filesystem::path& dir);
std::vector<DatasetRecord> load_dataset(const std::filesystem::path& dir);

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  std::array<std::uint8_t, 3> at(int y, int x) const {
    const std::size_t i = 3 * (static_cast<std::size_t>(y) * width + x);
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
  }
};

inline constexpr int kPerturbationMidGray = 128;

/// Side-by-side panel: original with clean predictions (red), the
/// perturbation magnified around mid-gray, and the adversarial image with
/// hacked targets (green) and stationary landmarks (blue). Each panel is
/// `upscale` times the image size.
RgbImage render_visualization(const Image& original, const Image& adversarial, const LandmarkSet& before,
                              const LandmarkSet& after, const TargetSpec& spec, double magnification = 8.0,
                              int upscale = 1);

void export_visualization(const Image& original, const Image& adversarial, const LandmarkSet& before,
                          const LandmarkSet& after, const TargetSpec& spec, const std::filesystem::path& path,
                          double magnification = 8.0, int upscale = 1);

void write_png(const GrayImage& image, const std::filesystem::path& path);
void write_png(const RgbImage& image, const std::filesystem::path& path);
GrayImage read_gray(const std::filesystem::path& path);

/// Lossless float32 copy of channel 0 (TIFF).
void write_float_tiff(const Image& image, const std::filesystem::path& path);
Image read_float_tiff(const std::filesystem::path& path);

struct PlotSeries {
  std::string name;
  std::array<std::uint8_t, 3> color{0, 0, 0};
  std::vector<double> x;
  std::vector<double> y;
};

/// Static line chart written as PNG.
void write_line_plot(const std::vector<PlotSeries>& series, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::filesystem::path& path);

}  // namespace lmattack
