#include "lmattack/network.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#if defined(__SSE2__)
#include <xmmintrin.h>
#endif

namespace lmattack {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// Attack gradients far from the target are tiny, and float denormals make
// the backward pass an order of magnitude slower on x86. Flush them to zero
// for the duration of a pass and restore the caller's mode afterwards.
class FlushDenormals {
 public:
#if defined(__SSE2__)
  FlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }  // FTZ | DAZ
  ~FlushDenormals() { _mm_setcsr(saved_); }

 private:
  unsigned saved_;
#endif
};

template <typename T>
void im2col(const Tensor3<T>& in, int k, std::vector<T>& cols) {
  const int pad = k / 2;
  const int h = in.height;
  const int w = in.width;
  cols.resize(static_cast<std::size_t>(in.channels) * k * k * h * w);
  T* dst = cols.data();
  for (int c = 0; c < in.channels; ++c) {
    const T* src = in.channel(c);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int dx = kx - pad;
        const int x_lo = std::clamp(-dx, 0, w);
        const int x_hi = std::clamp(w - dx, x_lo, w);
        for (int y = 0; y < h; ++y, dst += w) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, T(0));
            continue;
          }
          std::fill(dst, dst + x_lo, T(0));
          std::copy(src + sy * w + x_lo + dx, src + sy * w + x_hi + dx, dst + x_lo);
          std::fill(dst + x_hi, dst + w, T(0));
        }
      }
    }
  }
}

template <typename T>
Tensor3<T> conv_forward(const ConvLayer<T>& layer, const Tensor3<T>& in, std::vector<T>& scratch) {
  const Eigen::Index hw = static_cast<Eigen::Index>(in.plane());
  const Eigen::Index patch = static_cast<Eigen::Index>(layer.in_channels) * layer.kernel * layer.kernel;
  Tensor3<T> out(layer.out_channels, in.height, in.width);
  ConstMatrixMap<T> weight(layer.weight.data(), layer.out_channels, patch);
  MatrixMap<T> result(out.data.data(), layer.out_channels, hw);
  if (layer.kernel == 1) {
    result.noalias() = weight * ConstMatrixMap<T>(in.data.data(), patch, hw);
  } else {
    im2col(in, layer.kernel, scratch);
    result.noalias() = weight * ConstMatrixMap<T>(scratch.data(), patch, hw);
  }
  for (int o = 0; o < layer.out_channels; ++o) {
    result.row(o).array() += layer.bias[o];
  }
  return out;
}

template <typename T>
Tensor3<T> conv_backward(const ConvLayer<T>& layer, const Tensor3<T>& in, const Tensor3<T>& grad_out,
                         ConvLayer<T>* grads, std::vector<T>& scratch) {
  const Eigen::Index hw = static_cast<Eigen::Index>(in.plane());
  const Eigen::Index patch = static_cast<Eigen::Index>(layer.in_channels) * layer.kernel * layer.kernel;
  ConstMatrixMap<T> weight(layer.weight.data(), layer.out_channels, patch);
  ConstMatrixMap<T> gout(grad_out.data.data(), layer.out_channels, hw);
  Tensor3<T> grad_in(in.channels, in.height, in.width);

  if (layer.kernel == 1) {
    if (grads != nullptr) {
      MatrixMap<T>(grads->weight.data(), layer.out_channels, patch).noalias() +=
          gout * ConstMatrixMap<T>(in.data.data(), patch, hw).transpose();
    }
    MatrixMap<T>(grad_in.data.data(), patch, hw).noalias() = weight.transpose() * gout;
  } else {
    if (grads != nullptr) {
      im2col(in, layer.kernel, scratch);
      MatrixMap<T>(grads->weight.data(), layer.out_channels, patch).noalias() +=
          gout * ConstMatrixMap<T>(scratch.data(), patch, hw).transpose();
    }
    // Data gradient as a correlation of grad_out with the flipped kernel,
    // which keeps the im2col buffer at out_channels * k * k rows.
    const int k = layer.kernel;
    const int kk = k * k;
    RowMatrix<T> flipped(layer.in_channels, static_cast<Eigen::Index>(layer.out_channels) * kk);
    for (int o = 0; o < layer.out_channels; ++o) {
      for (int c = 0; c < layer.in_channels; ++c) {
        const T* src = layer.weight.data() + (static_cast<std::size_t>(o) * layer.in_channels + c) * kk;
        for (int t = 0; t < kk; ++t) flipped(c, o * kk + t) = src[kk - 1 - t];
      }
    }
    im2col(grad_out, k, scratch);
    MatrixMap<T>(grad_in.data.data(), layer.in_channels, hw).noalias() =
        flipped * ConstMatrixMap<T>(scratch.data(), static_cast<Eigen::Index>(layer.out_channels) * kk, hw);
  }
  if (grads != nullptr) {
    // Plain sequential sum: Eigen's vectorized reduction peels by address
    // alignment, which would make the result depend on heap placement.
    for (int o = 0; o < layer.out_channels; ++o) {
      const T* row = grad_out.channel(o);
      grads->bias[o] += std::accumulate(row, row + hw, T(0));
    }
  }
  return grad_in;
}

template <typename T>
void relu_inplace(Tensor3<T>& t) {
  for (T& v : t.data) v = v < T(0) ? T(0) : v;  // NaN propagates so divergence stays visible
}

template <typename T>
void relu_backward_inplace(const Tensor3<T>& activated, Tensor3<T>& grad) {
  for (std::size_t i = 0; i < grad.data.size(); ++i) {
    if (!(activated.data[i] > T(0))) grad.data[i] = T(0);
  }
}

template <typename T>
Tensor3<T> max_pool(const Tensor3<T>& in, std::vector<std::uint32_t>* argmax) {
  Tensor3<T> out(in.channels, in.height / 2, in.width / 2);
  if (argmax != nullptr) argmax->resize(out.size());
  std::size_t o = 0;
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x, ++o) {
        std::uint32_t best = static_cast<std::uint32_t>(c * in.plane() + (2 * y) * in.width + 2 * x);
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const auto at = static_cast<std::uint32_t>(c * in.plane() + (2 * y + dy) * in.width + 2 * x + dx);
            if (in.data[at] > in.data[best]) best = at;
          }
        }
        out.data[o] = in.data[best];
        if (argmax != nullptr) (*argmax)[o] = best;
      }
    }
  }
  return out;
}

template <typename T>
Tensor3<T> upsample_concat(const Tensor3<T>& low, const Tensor3<T>& skip) {
  Tensor3<T> out(low.channels + skip.channels, skip.height, skip.width);
  for (int c = 0; c < low.channels; ++c) {
    const T* src = low.channel(c);
    T* dst = out.channel(c);
    for (int y = 0; y < skip.height; ++y) {
      for (int x = 0; x < skip.width; ++x) dst[y * skip.width + x] = src[(y / 2) * low.width + x / 2];
    }
  }
  std::copy(skip.data.begin(), skip.data.end(), out.data.begin() + low.channels * out.plane());
  return out;
}

}  // namespace

void ArchSpec::validate() const {
  if (in_channels <= 0 || landmarks <= 0 || base_width <= 0 || depth < 0 || depth > 8) {
    throw InvalidInput("invalid architecture descriptor");
  }
}

template <typename T>
UNet<T>::UNet(const ArchSpec& spec) : spec_(spec) {
  spec_.validate();
  auto add = [this](int in, int out, int k) {
    ConvLayer<T> layer;
    layer.in_channels = in;
    layer.out_channels = out;
    layer.kernel = k;
    layer.weight.assign(static_cast<std::size_t>(out) * in * k * k, T(0));
    layer.bias.assign(out, T(0));
    layers_.push_back(std::move(layer));
  };
  int channels = spec_.in_channels;
  for (int level = 0; level <= spec_.depth; ++level) {
    add(channels, spec_.width_at(level), 3);
    add(spec_.width_at(level), spec_.width_at(level), 3);
    channels = spec_.width_at(level);
  }
  for (int level = spec_.depth - 1; level >= 0; --level) {
    add(channels + spec_.width_at(level), spec_.width_at(level), 3);
    add(spec_.width_at(level), spec_.width_at(level), 3);
    channels = spec_.width_at(level);
  }
  add(channels, spec_.output_channels(), 1);
}

template <typename T>
void UNet<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    ConvLayer<T>& layer = layers_[i];
    const double fan_in = static_cast<double>(layer.in_channels) * layer.kernel * layer.kernel;
    const bool head = i + 1 == layers_.size();
    std::normal_distribution<double> normal(0.0, head ? std::sqrt(1.0 / fan_in) : std::sqrt(2.0 / fan_in));
    for (T& w : layer.weight) w = static_cast<T>(normal(rng));
    std::fill(layer.bias.begin(), layer.bias.end(), T(0));
    if (head) {
      // Heat logits start near a 1% prior, matching the sparse targets.
      for (int k = 0; k < spec_.landmarks; ++k) layer.bias[k] = static_cast<T>(-4.6);
    }
  }
}

template <typename T>
std::size_t UNet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.parameter_count();
  return n;
}

template <typename T>
std::vector<ConvLayer<T>> UNet<T>::zero_like() const {
  std::vector<ConvLayer<T>> out = layers_;
  for (auto& layer : out) {
    std::fill(layer.weight.begin(), layer.weight.end(), T(0));
    std::fill(layer.bias.begin(), layer.bias.end(), T(0));
  }
  return out;
}

template <typename T>
Tensor3<T> UNet<T>::forward(const Tensor3<T>& input, Cache* cache) const {
  const FlushDenormals flush;
  if (input.channels != spec_.in_channels || input.height <= 0 || input.width <= 0 ||
      input.height % spec_.stride() != 0 || input.width % spec_.stride() != 0) {
    throw InvalidInput("network input must have " + std::to_string(spec_.in_channels) +
                       " channels and sides divisible by " + std::to_string(spec_.stride()));
  }
  const std::size_t n_layers = layers_.size();
  if (cache != nullptr) {
    cache->conv_inputs.assign(n_layers, {});
    cache->conv_outputs.assign(n_layers, {});
    cache->pool_argmax.assign(spec_.depth, {});
  }
  thread_local std::vector<T> scratch;
  std::vector<Tensor3<T>> skips(spec_.depth + 1);
  std::size_t li = 0;

  auto conv_relu = [&](const Tensor3<T>& x) {
    Tensor3<T> y = conv_forward(layers_[li], x, scratch);
    relu_inplace(y);
    if (cache != nullptr) {
      cache->conv_inputs[li] = x;
      cache->conv_outputs[li] = y;
    }
    ++li;
    return y;
  };

  Tensor3<T> x = input;
  for (int level = 0; level <= spec_.depth; ++level) {
    if (level > 0) {
      x = max_pool(skips[level - 1], cache != nullptr ? &cache->pool_argmax[level - 1] : nullptr);
    }
    x = conv_relu(x);
    skips[level] = conv_relu(x);
  }
  x = std::move(skips[spec_.depth]);
  for (int level = spec_.depth - 1; level >= 0; --level) {
    x = conv_relu(upsample_concat(x, skips[level]));
    x = conv_relu(x);
  }
  Tensor3<T> logits = conv_forward(layers_[li], x, scratch);
  if (cache != nullptr) cache->conv_inputs[li] = std::move(x);
  return logits;
}

template <typename T>
Tensor3<T> UNet<T>::backward(const Cache& cache, const Tensor3<T>& grad_logits,
                             std::vector<ConvLayer<T>>* param_grads) const {
  const FlushDenormals flush;
  thread_local std::vector<T> scratch;
  std::size_t li = layers_.size() - 1;
  auto grads_at = [&](std::size_t i) { return param_grads != nullptr ? &(*param_grads)[i] : nullptr; };

  Tensor3<T> g = conv_backward(layers_[li], cache.conv_inputs[li], grad_logits, grads_at(li), scratch);

  auto conv_relu_back = [&](Tensor3<T> grad) {
    --li;
    relu_backward_inplace(cache.conv_outputs[li], grad);
    return conv_backward(layers_[li], cache.conv_inputs[li], grad, grads_at(li), scratch);
  };

  std::vector<Tensor3<T>> skip_grads(spec_.depth);
  for (int level = 0; level < spec_.depth; ++level) {
    g = conv_relu_back(std::move(g));
    g = conv_relu_back(std::move(g));
    // Split the concat gradient: upsampled channels first, then the skip.
    const int low_channels = spec_.width_at(level + 1);
    const int h = g.height;
    const int w = g.width;
    Tensor3<T> low(low_channels, h / 2, w / 2);
    for (int c = 0; c < low_channels; ++c) {
      const T* src = g.channel(c);
      T* dst = low.channel(c);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) dst[(y / 2) * low.width + x / 2] += src[y * w + x];
      }
    }
    Tensor3<T>& skip = skip_grads[level];
    skip = Tensor3<T>(g.channels - low_channels, h, w);
    std::copy(g.data.begin() + low_channels * g.plane(), g.data.end(), skip.data.begin());
    g = std::move(low);
  }

  for (int level = spec_.depth; level >= 0; --level) {
    if (level < spec_.depth) {
      for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += skip_grads[level].data[i];
    }
    g = conv_relu_back(std::move(g));
    g = conv_relu_back(std::move(g));
    if (level > 0) {
      const Tensor3<T>& pre_pool = cache.conv_outputs[li - 1];
      Tensor3<T> unpooled(pre_pool.channels, pre_pool.height, pre_pool.width);
      const auto& argmax = cache.pool_argmax[level - 1];
      for (std::size_t i = 0; i < argmax.size(); ++i) unpooled.data[argmax[i]] += g.data[i];
      g = std::move(unpooled);
    }
  }
  return g;
}

template class UNet<float>;
template class UNet<double>;

}  // namespace lmattack
