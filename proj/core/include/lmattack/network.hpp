#pragma once

#include <cstdint>
#include <vector>

#include "lmattack/common.hpp"

namespace lmattack {

/// Encoder-decoder layout. Level l of the encoder has base_width * 2^l
/// channels; `depth` max-pool stages lead to the bottleneck. Every level runs
/// two 3x3 conv + ReLU blocks, the decoder upsamples (nearest) and
/// concatenates the matching skip connection, and a 1x1 head emits
/// 3 * landmarks channels: heat logits, x offsets, y offsets.
struct ArchSpec {
  int in_channels = 1;
  int landmarks = 19;
  int base_width = 8;
  int depth = 3;

  int output_channels() const { return 3 * landmarks; }
  int width_at(int level) const { return base_width << level; }
  int stride() const { return 1 << depth; }
  void validate() const;

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

template <typename T>
struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  std::vector<T> weight;  // out x (in * kernel * kernel)
  std::vector<T> bias;    // out

  std::size_t parameter_count() const { return weight.size() + bias.size(); }
  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

template <typename T>
class UNet {
 public:
  /// Per-call activations needed by backward(). Owned by the caller so the
  /// network itself stays immutable during inference.
  struct Cache {
    std::vector<Tensor3<T>> conv_inputs;
    std::vector<Tensor3<T>> conv_outputs;
    std::vector<std::vector<std::uint32_t>> pool_argmax;
  };

  UNet() = default;
  explicit UNet(const ArchSpec& spec);

  /// He-normal weights, zero biases; heat logits start at a low prior.
  void initialize(std::uint64_t seed);

  const ArchSpec& spec() const { return spec_; }
  std::vector<ConvLayer<T>>& layers() { return layers_; }
  const std::vector<ConvLayer<T>>& layers() const { return layers_; }
  std::size_t parameter_count() const;

  /// Layer list with the same shapes and zero values.
  std::vector<ConvLayer<T>> zero_like() const;

  /// Raw output logits (3K x H x W). `cache` may be null for inference.
  Tensor3<T> forward(const Tensor3<T>& input, Cache* cache) const;

  /// Back-propagates `grad_logits` through the cached pass and returns the
  /// gradient with respect to the input. Parameter gradients are accumulated
  /// into `param_grads` when it is non-null.
  Tensor3<T> backward(const Cache& cache, const Tensor3<T>& grad_logits,
                      std::vector<ConvLayer<T>>* param_grads) const;

  template <typename U>
  UNet<U> cast() const {
    UNet<U> out(spec_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      out.layers()[i].weight.assign(layers_[i].weight.begin(), layers_[i].weight.end());
      out.layers()[i].bias.assign(layers_[i].bias.begin(), layers_[i].bias.end());
    }
    return out;
  }

  friend bool operator==(const UNet&, const UNet&) = default;

 private:
  ArchSpec spec_;
  std::vector<ConvLayer<T>> layers_;
};

}  // namespace lmattack
