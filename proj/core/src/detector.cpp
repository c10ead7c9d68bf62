#include "lmattack/detector.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lmattack/rng.hpp"

namespace lmattack {
namespace {

using nlohmann::json;

template <typename T>
T sigmoid(T z) {
  return z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

template <typename T>
int sign_of(T v) {
  return (v > T(0)) - (v < T(0));
}

template <typename T>
void check_loss_shapes(int landmarks, int height, int width, const BasicMapStack<T>& target) {
  if (target.landmarks != landmarks || target.height != height || target.width != width) {
    throw InvalidInput("loss: prediction and target shapes differ");
  }
}

template <typename T>
BasicMapStack<T> maps_from_logits(const Tensor3<T>& logits, int landmarks) {
  BasicMapStack<T> maps(landmarks, logits.height, logits.width);
  const std::size_t n = maps.heat.size();
  for (std::size_t i = 0; i < n; ++i) maps.heat[i] = sigmoid(logits.data[i]);
  std::copy_n(logits.data.begin() + n, n, maps.offset_x.begin());
  std::copy_n(logits.data.begin() + 2 * n, n, maps.offset_y.begin());
  return maps;
}

template <typename T>
double masked_offset_l1(const BasicMapStack<T>& pred, const BasicMapStack<T>& target, int i) {
  auto mask = target.heat_channel(i);
  auto tx = target.offset_x_channel(i);
  auto ty = target.offset_y_channel(i);
  auto px = pred.offset_x_channel(i);
  auto py = pred.offset_y_channel(i);
  double sum_x = 0.0;
  double sum_y = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (sign_of(mask[p]) == 0) continue;
    ++count;
    sum_x += std::abs(static_cast<double>(tx[p]) - static_cast<double>(px[p]));
    sum_y += std::abs(static_cast<double>(ty[p]) - static_cast<double>(py[p]));
  }
  return count == 0 ? 0.0 : (sum_x + sum_y) / static_cast<double>(count);
}

LossBreakdown finish_breakdown(std::vector<double> heat, std::vector<double> offset, double alpha) {
  LossBreakdown out;
  out.per_landmark.resize(heat.size());
  for (std::size_t i = 0; i < heat.size(); ++i) {
    out.per_landmark[i] = alpha * heat[i] + offset[i];
    out.total += out.per_landmark[i];
  }
  out.heatmap = std::move(heat);
  out.offset = std::move(offset);
  return out;
}

/// d(sum_j w_j L_j)/d logits.
template <typename T>
Tensor3<T> logits_gradient(const ForwardPass<T>& pass, const BasicMapStack<T>& target,
                           std::span<const double> weights, double alpha) {
  const int k = target.landmarks;
  const std::size_t plane = target.plane();
  Tensor3<T> grad(3 * k, target.height, target.width);
  for (int i = 0; i < k; ++i) {
    const double w = weights[i];
    if (w == 0.0) continue;
    const double heat_scale = w * alpha / static_cast<double>(plane);
    auto pred_heat = pass.maps.heat_channel(i);
    auto y = target.heat_channel(i);
    T* gh = grad.channel(i);
    for (std::size_t p = 0; p < plane; ++p) {
      gh[p] = static_cast<T>(heat_scale * (static_cast<double>(pred_heat[p]) - static_cast<double>(y[p])));
    }
    std::size_t count = 0;
    for (std::size_t p = 0; p < plane; ++p) count += sign_of(y[p]) != 0;
    if (count == 0) continue;
    const double off_scale = w / static_cast<double>(count);
    auto tx = target.offset_x_channel(i);
    auto ty = target.offset_y_channel(i);
    auto px = pass.maps.offset_x_channel(i);
    auto py = pass.maps.offset_y_channel(i);
    T* gx = grad.channel(k + i);
    T* gy = grad.channel(2 * k + i);
    for (std::size_t p = 0; p < plane; ++p) {
      if (sign_of(y[p]) == 0) continue;
      gx[p] = static_cast<T>(off_scale * sign_of(px[p] - tx[p]));
      gy[p] = static_cast<T>(off_scale * sign_of(py[p] - ty[p]));
    }
  }
  return grad;
}

}  // namespace

const char* to_string(ModelPreset preset) { return preset == ModelPreset::kFull ? "full" : "desk"; }

ModelPreset preset_from_string(const std::string& name) {
  if (name == "full") return ModelPreset::kFull;
  if (name == "desk") return ModelPreset::kDesk;
  throw InvalidInput("unknown preset '" + name + "' (expected full or desk)");
}

TrainConfig TrainConfig::full() { return TrainConfig{}; }

TrainConfig TrainConfig::desk() {
  TrainConfig config;
  config.preset = ModelPreset::kDesk;
  config.sigma = 8.0;
  // At 128x128 the per-pixel heatmap term is averaged over 64x more pixels
  // than the offset term's mask; weight it up so peaks are learned at all.
  config.alpha = 20.0;
  config.epochs = 40;
  config.lr_decay_every = 30;
  config.batch_size = 8;
  return config;
}

double TrainConfig::learning_rate_at(int epoch) const {
  return learning_rate * std::pow(lr_decay, lr_decay_every > 0 ? epoch / lr_decay_every : 0);
}

void TrainConfig::validate() const {
  if (!(alpha > 0.0)) throw InvalidInput("train: alpha must be positive");
  if (epochs < 0) throw InvalidInput("train: epochs must be non-negative");
  if (batch_size <= 0) throw InvalidInput("train: batch size must be positive");
  if (!(learning_rate > 0.0)) throw InvalidInput("train: learning rate must be positive");
  if (!(sigma > 0.0)) throw InvalidInput("train: sigma must be positive");
}

ArchSpec arch_for_preset(ModelPreset preset, int landmarks, int in_channels) {
  ArchSpec arch;
  arch.in_channels = in_channels;
  arch.landmarks = landmarks;
  if (preset == ModelPreset::kFull) {
    arch.base_width = 32;
    arch.depth = 4;
  } else {
    arch.base_width = 8;
    arch.depth = 3;
  }
  return arch;
}

template <typename T>
ForwardPass<T> forward_pass(const BasicDetector<T>& model, const Tensor3<T>& image) {
  ForwardPass<T> pass;
  pass.logits = model.network().forward(image, &pass.cache);
  pass.maps = maps_from_logits(pass.logits, model.arch().landmarks);
  return pass;
}

template <typename T>
BasicMapStack<T> forward(const BasicDetector<T>& model, const Tensor3<T>& image) {
  return maps_from_logits(model.network().forward(image, nullptr), model.arch().landmarks);
}

template <typename T>
LossBreakdown loss(const BasicMapStack<T>& pred, const BasicMapStack<T>& target, double alpha) {
  check_loss_shapes(pred.landmarks, pred.height, pred.width, target);
  constexpr double kEps = 1e-12;
  const int k = pred.landmarks;
  std::vector<double> heat(k, 0.0);
  std::vector<double> offset(k, 0.0);
  for (int i = 0; i < k; ++i) {
    auto p = pred.heat_channel(i);
    auto y = target.heat_channel(i);
    double sum = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double q = std::clamp(static_cast<double>(p[j]), kEps, 1.0 - kEps);
      const double t = y[j];
      sum -= t * std::log(q) + (1.0 - t) * std::log(1.0 - q);
    }
    heat[i] = sum / static_cast<double>(p.size());
    offset[i] = masked_offset_l1(pred, target, i);
  }
  return finish_breakdown(std::move(heat), std::move(offset), alpha);
}

template <typename T>
LossBreakdown pass_loss(const ForwardPass<T>& pass, const BasicMapStack<T>& target, double alpha) {
  const int k = pass.maps.landmarks;
  check_loss_shapes(k, pass.maps.height, pass.maps.width, target);
  std::vector<double> heat(k, 0.0);
  std::vector<double> offset(k, 0.0);
  const std::size_t plane = target.plane();
  for (int i = 0; i < k; ++i) {
    const T* z = pass.logits.channel(i);
    auto y = target.heat_channel(i);
    double sum = 0.0;
    for (std::size_t p = 0; p < plane; ++p) {
      const double zi = z[p];
      sum += softplus(zi) - static_cast<double>(y[p]) * zi;
    }
    heat[i] = sum / static_cast<double>(plane);
    offset[i] = masked_offset_l1(pass.maps, target, i);
  }
  return finish_breakdown(std::move(heat), std::move(offset), alpha);
}

template <typename T>
Tensor3<T> pass_input_gradient(const BasicDetector<T>& model, const ForwardPass<T>& pass,
                               const BasicMapStack<T>& target, std::span<const double> weights,
                               double alpha) {
  check_loss_shapes(pass.maps.landmarks, pass.maps.height, pass.maps.width, target);
  if (weights.size() != static_cast<std::size_t>(target.landmarks)) {
    throw InvalidInput("input_gradient: expected one weight per landmark");
  }
  return model.network().backward(pass.cache, logits_gradient(pass, target, weights, alpha), nullptr);
}

template <typename T>
std::vector<ConvLayer<T>> pass_parameter_gradient(const BasicDetector<T>& model, const ForwardPass<T>& pass,
                                                  const BasicMapStack<T>& target, std::span<const double> weights,
                                                  double alpha) {
  if (weights.size() != static_cast<std::size_t>(target.landmarks)) {
    throw InvalidInput("parameter_gradient: expected one weight per landmark");
  }
  std::vector<ConvLayer<T>> grads = model.network().zero_like();
  model.network().backward(pass.cache, logits_gradient(pass, target, weights, alpha), &grads);
  return grads;
}

template <typename T>
Tensor3<T> input_gradient(const BasicDetector<T>& model, const Tensor3<T>& image,
                          const BasicMapStack<T>& target, std::span<const double> weights,
                          double alpha) {
  return pass_input_gradient(model, forward_pass(model, image), target, weights, alpha);
}

LandmarkSet predict_landmarks(const DetectorModel& model, const Image& image) {
  return decode(forward(model, image), model.codec());
}

DetectorModel train(const std::vector<TrainingSample>& data, const TrainConfig& config,
                    DetectorModel model, const TrainProgress& progress) {
  config.validate();
  if (config.epochs == 0) return model;
  if (data.empty()) throw InvalidInput("train: empty dataset");

  CodecConfig codec = model.codec();
  codec.sigma = config.sigma;
  codec.validate();
  model = DetectorModel(model.network(), codec, config);

  UNet<float>& net = model.network();
  auto& layers = net.layers();
  std::vector<ConvLayer<float>> grads = net.zero_like();
  std::vector<ConvLayer<float>> first_moment = net.zero_like();
  std::vector<ConvLayer<float>> second_moment = net.zero_like();
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kAdamEps = 1e-8;
  long step = 0;

  const std::vector<double> unit_weights(model.arch().landmarks, 1.0);
  std::mt19937_64 rng(derive_seed(config.seed, "train-shuffle"));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = config.learning_rate_at(epoch);
    double epoch_loss = 0.0;

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const double batch_scale = 1.0 / static_cast<double>(stop - start);
      for (auto& g : grads) {
        std::fill(g.weight.begin(), g.weight.end(), 0.0f);
        std::fill(g.bias.begin(), g.bias.end(), 0.0f);
      }
      for (std::size_t b = start; b < stop; ++b) {
        const TrainingSample& sample = data[order[b]];
        const MapStack target = encode(sample.landmarks, sample.image.height, sample.image.width, codec);
        const ForwardPass<float> pass = forward_pass(model, sample.image);
        const LossBreakdown l = pass_loss(pass, target, config.alpha);
        if (!std::isfinite(l.total)) {
          std::ostringstream msg;
          msg << "training diverged: non-finite loss at epoch " << epoch << ", sample " << order[b];
          throw RuntimeFailure(msg.str());
        }
        epoch_loss += l.total;
        Tensor3<float> grad_logits = logits_gradient(pass, target, unit_weights, config.alpha);
        for (float& v : grad_logits.data) v = static_cast<float>(v * batch_scale);
        net.backward(pass.cache, grad_logits, &grads);
      }

      ++step;
      const double correction1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double correction2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      auto update = [&](std::vector<float>& param, const std::vector<float>& g, std::vector<float>& m,
                        std::vector<float>& v) {
        for (std::size_t i = 0; i < param.size(); ++i) {
          m[i] = static_cast<float>(kBeta1 * m[i] + (1.0 - kBeta1) * g[i]);
          v[i] = static_cast<float>(kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i]);
          const double m_hat = m[i] / correction1;
          const double v_hat = v[i] / correction2;
          param[i] = static_cast<float>(param[i] - lr * m_hat / (std::sqrt(v_hat) + kAdamEps));
        }
      };
      for (std::size_t li = 0; li < layers.size(); ++li) {
        update(layers[li].weight, grads[li].weight, first_moment[li].weight, second_moment[li].weight);
        update(layers[li].bias, grads[li].bias, first_moment[li].bias, second_moment[li].bias);
      }
    }

    if (progress) progress({epoch, epoch_loss / static_cast<double>(data.size()), lr});
  }
  return model;
}

DetectorModel train(const std::vector<TrainingSample>& data, const TrainConfig& config,
                    const ArchSpec& arch, const TrainProgress& progress) {
  CodecConfig codec;
  codec.sigma = config.sigma;
  DetectorModel initial(arch, codec, derive_seed(config.seed, "train-init"));
  initial.set_train_config(config);
  return train(data, config, std::move(initial), progress);
}

// Checkpoint container -------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'L', 'M', 'K', 'C', 'K', 'P', 'T', '\0'};
static_assert(std::endian::native == std::endian::little, "checkpoints are written little-endian");

json arch_to_json(const ArchSpec& a) {
  return {{"in_channels", a.in_channels}, {"landmarks", a.landmarks},
          {"base_width", a.base_width}, {"depth", a.depth}, {"layout", "unet-2conv-nearest-up"}};
}

json train_to_json(const TrainConfig& c) {
  return {{"alpha", c.alpha},         {"learning_rate", c.learning_rate},
          {"lr_decay", c.lr_decay},   {"lr_decay_every", c.lr_decay_every},
          {"epochs", c.epochs},       {"batch_size", c.batch_size},
          {"sigma", c.sigma},         {"preset", to_string(c.preset)},
          {"seed", c.seed}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig c;
  c.alpha = j.at("alpha").get<double>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.lr_decay = j.at("lr_decay").get<double>();
  c.lr_decay_every = j.at("lr_decay_every").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.sigma = j.at("sigma").get<double>();
  c.preset = preset_from_string(j.at("preset").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void save_checkpoint(const DetectorModel& model, const std::filesystem::path& path) {
  json header;
  header["format"] = "lmattack-checkpoint";
  header["version"] = kCheckpointVersion;
  header["architecture"] = arch_to_json(model.arch());
  header["codec"] = {{"sigma", model.codec().sigma}, {"threshold", model.codec().threshold}};
  header["train"] = train_to_json(model.train_config());
  json tensors = json::array();
  std::size_t offset = 0;
  const auto& layers = model.network().layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    tensors.push_back({{"name", "conv" + std::to_string(i) + ".weight"},
                       {"shape", {l.out_channels, l.in_channels, l.kernel, l.kernel}},
                       {"offset", offset}});
    offset += l.weight.size();
    tensors.push_back({{"name", "conv" + std::to_string(i) + ".bias"},
                       {"shape", {l.out_channels}},
                       {"offset", offset}});
    offset += l.bias.size();
  }
  header["tensors"] = tensors;
  header["parameter_count"] = offset;

  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write checkpoint " + path.string());
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t length = text.size();
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&length), sizeof(length));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& l : layers) {
    out.write(reinterpret_cast<const char*>(l.weight.data()), static_cast<std::streamsize>(l.weight.size() * sizeof(float)));
    out.write(reinterpret_cast<const char*>(l.bias.data()), static_cast<std::streamsize>(l.bias.size() * sizeof(float)));
  }
  if (!out) throw RuntimeFailure("failed writing checkpoint " + path.string());
}

DetectorModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw InvalidInput(path.string() + " is not a checkpoint");
  }
  if (version != kCheckpointVersion) {
    throw InvalidInput("unsupported checkpoint version " + std::to_string(version));
  }
  if (length > (1u << 26)) throw InvalidInput("corrupt checkpoint header in " + path.string());
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidInput("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }

  ArchSpec arch;
  const json& a = header.at("architecture");
  arch.in_channels = a.at("in_channels").get<int>();
  arch.landmarks = a.at("landmarks").get<int>();
  arch.base_width = a.at("base_width").get<int>();
  arch.depth = a.at("depth").get<int>();
  CodecConfig codec;
  codec.sigma = header.at("codec").at("sigma").get<double>();
  codec.threshold = header.at("codec").at("threshold").get<double>();
  const TrainConfig train_config = train_from_json(header.at("train"));

  UNet<float> net(arch);
  if (net.parameter_count() != header.at("parameter_count").get<std::size_t>()) {
    throw InvalidInput("checkpoint parameter count does not match its architecture");
  }
  for (auto& l : net.layers()) {
    in.read(reinterpret_cast<char*>(l.weight.data()), static_cast<std::streamsize>(l.weight.size() * sizeof(float)));
    in.read(reinterpret_cast<char*>(l.bias.data()), static_cast<std::streamsize>(l.bias.size() * sizeof(float)));
  }
  if (!in) throw InvalidInput("truncated checkpoint " + path.string());
  return DetectorModel(std::move(net), codec, train_config);
}

void load_encoder_weights(DetectorModel& model, const std::vector<ConvLayer<float>>& encoder) {
  auto& layers = model.network().layers();
  const std::size_t encoder_layers = 2 * static_cast<std::size_t>(model.arch().depth + 1);
  if (encoder.size() > encoder_layers) throw InvalidInput("more encoder layers supplied than the model has");
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    const auto& src = encoder[i];
    auto& dst = layers[i];
    if (src.in_channels != dst.in_channels || src.out_channels != dst.out_channels ||
        src.kernel != dst.kernel || src.weight.size() != dst.weight.size() || src.bias.size() != dst.bias.size()) {
      throw InvalidInput("encoder layer " + std::to_string(i) + " shape mismatch");
    }
    dst = src;
  }
}

#define LMATTACK_INSTANTIATE(T)                                                                     \
  template ForwardPass<T> forward_pass(const BasicDetector<T>&, const Tensor3<T>&);                 \
  template BasicMapStack<T> forward(const BasicDetector<T>&, const Tensor3<T>&);                    \
  template LossBreakdown loss(const BasicMapStack<T>&, const BasicMapStack<T>&, double);            \
  template LossBreakdown pass_loss(const ForwardPass<T>&, const BasicMapStack<T>&, double);         \
  template Tensor3<T> pass_input_gradient(const BasicDetector<T>&, const ForwardPass<T>&,           \
                                          const BasicMapStack<T>&, std::span<const double>, double); \
  template std::vector<ConvLayer<T>> pass_parameter_gradient(const BasicDetector<T>&, const ForwardPass<T>&,  \
                                                             const BasicMapStack<T>&, std::span<const double>, \
                                                             double);                                          \
  template Tensor3<T> input_gradient(const BasicDetector<T>&, const Tensor3<T>&,                    \
                                     const BasicMapStack<T>&, std::span<const double>, double);

LMATTACK_INSTANTIATE(float)
LMATTACK_INSTANTIATE(double)

#undef LMATTACK_INSTANTIATE

}  // namespace lmattack
