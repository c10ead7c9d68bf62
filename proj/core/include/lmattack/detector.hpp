#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lmattack/common.hpp"
#include "lmattack/landmark_codec.hpp"
#include "lmattack/network.hpp"

namespace lmattack {

enum class ModelPreset { kFull, kDesk };

const char* to_string(ModelPreset preset);
ModelPreset preset_from_string(const std::string& name);

struct TrainConfig {
  double alpha = 1.0;            // heatmap loss weight
  double learning_rate = 1e-3;   // Adam, default moments
  double lr_decay = 0.1;
  int lr_decay_every = 100;      // epochs
  int epochs = 230;
  int batch_size = 8;
  double sigma = 40.0;           // forwarded to the codec
  ModelPreset preset = ModelPreset::kFull;
  std::uint64_t seed = 0;

  /// 800x640 inputs, sigma 40, 230 epochs of batch 8.
  static TrainConfig full();
  /// 128x128 inputs, sigma 8, heatmap weight 20, CPU-sized schedule.
  static TrainConfig desk();

  double learning_rate_at(int epoch) const;
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Architecture that goes with a preset for K landmarks.
ArchSpec arch_for_preset(ModelPreset preset, int landmarks, int in_channels = 1);

struct LossBreakdown {
  double total = 0.0;
  std::vector<double> per_landmark;  // alpha * heatmap + offset
  std::vector<double> heatmap;       // mean BCE over pixels
  std::vector<double> offset;        // masked L1 (x + y), mean over mask pixels
};

template <typename T>
class BasicDetector {
 public:
  BasicDetector() = default;
  BasicDetector(const ArchSpec& arch, const CodecConfig& codec, std::uint64_t init_seed)
      : network_(arch), codec_(codec) {
    codec_.validate();
    network_.initialize(init_seed);
  }
  BasicDetector(UNet<T> network, const CodecConfig& codec, const TrainConfig& train)
      : network_(std::move(network)), codec_(codec), train_config_(train) {}

  const ArchSpec& arch() const { return network_.spec(); }
  const CodecConfig& codec() const { return codec_; }
  const TrainConfig& train_config() const { return train_config_; }
  void set_train_config(const TrainConfig& config) { train_config_ = config; }
  UNet<T>& network() { return network_; }
  const UNet<T>& network() const { return network_; }

  template <typename U>
  BasicDetector<U> cast() const {
    return BasicDetector<U>(network_.template cast<U>(), codec_, train_config_);
  }

  friend bool operator==(const BasicDetector&, const BasicDetector&) = default;

 private:
  UNet<T> network_;
  CodecConfig codec_;
  TrainConfig train_config_;
};

using DetectorModel = BasicDetector<float>;

/// One inference pass with the activations retained for back-propagation.
template <typename T>
struct ForwardPass {
  typename UNet<T>::Cache cache;
  Tensor3<T> logits;
  BasicMapStack<T> maps;  // heat after sigmoid, offsets linear
};

/// Heatmaps in (0, 1) and raw offsets for a normalized image.
template <typename T>
BasicMapStack<T> forward(const BasicDetector<T>& model, const Tensor3<T>& image);

template <typename T>
ForwardPass<T> forward_pass(const BasicDetector<T>& model, const Tensor3<T>& image);

/// Multi-task loss on probability-space predictions.
template <typename T>
LossBreakdown loss(const BasicMapStack<T>& pred, const BasicMapStack<T>& target, double alpha);

/// Same loss evaluated from the logits of a pass (numerically stable form).
template <typename T>
LossBreakdown pass_loss(const ForwardPass<T>& pass, const BasicMapStack<T>& target, double alpha);

/// Gradient of sum_j weights[j] * L_j with respect to the pass input.
template <typename T>
Tensor3<T> pass_input_gradient(const BasicDetector<T>& model, const ForwardPass<T>& pass,
                               const BasicMapStack<T>& target, std::span<const double> weights,
                               double alpha);

/// Gradient of sum_j weights[j] * L_j with respect to every network
/// parameter, laid out like the network's layers.
template <typename T>
std::vector<ConvLayer<T>> pass_parameter_gradient(const BasicDetector<T>& model, const ForwardPass<T>& pass,
                                                  const BasicMapStack<T>& target, std::span<const double> weights,
                                                  double alpha);

/// forward + pass_input_gradient.
template <typename T>
Tensor3<T> input_gradient(const BasicDetector<T>& model, const Tensor3<T>& image,
                          const BasicMapStack<T>& target, std::span<const double> weights,
                          double alpha);

/// decode(forward(model, image)).
LandmarkSet predict_landmarks(const DetectorModel& model, const Image& image);

struct TrainingSample {
  Image image;
  LandmarkSet landmarks;  // resized frame
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double learning_rate = 0.0;
};

using TrainProgress = std::function<void(const EpochStats&)>;

/// Adam training of `initial` on `data` with targets encoded on the fly.
/// Throws RuntimeFailure if the loss becomes non-finite.
DetectorModel train(const std::vector<TrainingSample>& data, const TrainConfig& config,
                    DetectorModel initial, const TrainProgress& progress = {});

/// Fresh model for `arch` initialized from config.seed, then trained.
DetectorModel train(const std::vector<TrainingSample>& data, const TrainConfig& config,
                    const ArchSpec& arch, const TrainProgress& progress = {});

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Checkpoint: magic, version, JSON header (architecture, train config,
/// codec, tensor table), then little-endian float32 parameters.
void save_checkpoint(const DetectorModel& model, const std::filesystem::path& path);
DetectorModel load_checkpoint(const std::filesystem::path& path);

/// Replaces encoder weights with externally supplied ones. Layers are
/// matched by order and must agree in shape.
void load_encoder_weights(DetectorModel& model, const std::vector<ConvLayer<float>>& encoder);

}  // namespace lmattack
