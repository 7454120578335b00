#pragma once

#include <string>
#include <vector>

#include "sfcl/freq.hpp"
#include "sfcl/nn.hpp"

// Local frequency branch: spectral band convolutions (depth-only 3D kernels
// along the 64 zigzag bands) followed by a separable-convolution CNN over the
// flattened 192-channel block grid.

namespace sfcl::local {

inline constexpr std::size_t kSbcmDepthOut = 3;
inline constexpr std::size_t kSbcmChannelsOut = 64;
inline constexpr std::size_t kFlatChannels = kSbcmDepthOut * kSbcmChannelsOut;  // 192

struct SbcmConfig {
  std::vector<std::size_t> kernels{7, 5, 3};
  std::vector<std::size_t> strides{3, 2, 2};
  std::vector<std::size_t> widths{16, 32, 64};  // output channels per layer; input is 3
  bool batchnorm = true;

  /// Throws ConfigError unless the depth chain takes 64 bands to exactly 3
  /// and the final width is 64.
  void validate() const {
    if (kernels.empty() || kernels.size() != strides.size() || kernels.size() != widths.size())
      throw ConfigError("sbcm: kernels, strides and widths must be non-empty and equally long");
    std::size_t depth = freq::kBands;
    for (std::size_t i = 0; i < kernels.size(); ++i) {
      if (kernels[i] == 0 || strides[i] == 0 || widths[i] == 0) throw ConfigError("sbcm: zero kernel, stride or width");
      if (kernels[i] > depth)
        throw ConfigError("sbcm: layer " + std::to_string(i) + " kernel " + std::to_string(kernels[i]) +
                          " exceeds depth " + std::to_string(depth));
      depth = (depth - kernels[i]) / strides[i] + 1;
    }
    if (depth != kSbcmDepthOut)
      throw ConfigError("sbcm: depth chain from 64 ends at " + std::to_string(depth) + ", must end at 3");
    if (widths.back() != kSbcmChannelsOut)
      throw ConfigError("sbcm: final width must be 64, got " + std::to_string(widths.back()));
  }

  /// Depth after each layer, starting from 64.
  std::vector<std::size_t> depth_chain() const {
    std::vector<std::size_t> chain{freq::kBands};
    for (std::size_t i = 0; i < kernels.size(); ++i) chain.push_back((chain.back() - kernels[i]) / strides[i] + 1);
    return chain;
  }
};

template <Scalar T>
class Sbcm {
 public:
  Sbcm(const SbcmConfig& cfg, nn::ParamStore<T>& store, Rng& rng, const std::string& prefix = "sbcm") : cfg_(cfg) {
    cfg_.validate();
    std::size_t in = freq::kChannels;
    for (std::size_t i = 0; i < cfg_.kernels.size(); ++i) {
      const std::string p = prefix + "." + std::to_string(i);
      Layer l;
      l.weight = store.add(p + ".conv.weight",
                           nn::he_uniform<T>({cfg_.widths[i], in, cfg_.kernels[i], 1, 1}, in * cfg_.kernels[i], rng));
      l.bias = store.add(p + ".conv.bias", Tensor<T>({cfg_.widths[i]}, T{0}));
      if (cfg_.batchnorm) l.bn = nn::BatchNorm<T>(store, p + ".bn", cfg_.widths[i]);
      layers_.push_back(std::move(l));
      in = cfg_.widths[i];
    }
  }

  /// [N×3×64×Hb×Wb] (or unbatched [3×64×Hb×Wb]) -> [N×64×3×Hb×Wb].
  Var<T> forward(const Var<T>& spectra, Mode mode) const {
    auto [x, added] = nn::ensure_batched(spectra, 4);
    const Shape& d = x.dims();
    if (d.size() != 5 || d[1] != freq::kChannels || d[2] != freq::kBands)
      throw ShapeError("sbcm: expected [N x 3 x 64 x Hb x Wb], got " + shape_str(spectra.dims()));
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = conv3d(x, layers_[i].weight, std::optional<Var<T>>(layers_[i].bias), cfg_.strides[i]);
      if (cfg_.batchnorm) x = layers_[i].bn(x, mode);
      x = relu(x);
    }
    return added ? nn::drop_batch(x) : x;
  }

  const SbcmConfig& config() const { return cfg_; }

 private:
  struct Layer {
    Var<T> weight, bias;
    nn::BatchNorm<T> bn;
  };
  SbcmConfig cfg_;
  std::vector<Layer> layers_;
};

/// [N×64×3×Hb×Wb] -> [N×192×Hb×Wb]; flat channel = 3·c + d. Also accepts
/// the unbatched rank-4 form.
template <Scalar T>
Var<T> flatten_bands(const Var<T>& x) {
  const Shape& d = x.dims();
  const bool batched = d.size() == 5;
  const std::size_t off = batched ? 1 : 0;
  if ((d.size() != 4 && d.size() != 5) || d[off] != kSbcmChannelsOut || d[off + 1] != kSbcmDepthOut)
    throw ShapeError("flatten_bands: expected [64 x 3 x Hb x Wb] (optionally batched), got " + shape_str(d));
  Shape out;
  if (batched) out.push_back(d[0]);
  out.insert(out.end(), {kFlatChannels, d[off + 2], d[off + 3]});
  return reshape(x, out);
}

struct SeparableBlockConfig {
  std::size_t out = 0;
  std::size_t stride = 1;
};

struct CnnfConfig {
  std::size_t in_width = kFlatChannels;
  std::vector<SeparableBlockConfig> blocks{{256, 2}, {728, 2}, {2048, 1}};
  std::size_t depthwise_kernel = 3;

  void validate() const {
    if (in_width != kFlatChannels) throw ConfigError("cnnf: input width must be 192, got " + std::to_string(in_width));
    if (blocks.empty()) throw ConfigError("cnnf: at least one separable block required");
    for (const auto& b : blocks)
      if (b.out == 0 || b.stride == 0) throw ConfigError("cnnf: zero width or stride");
    if (depthwise_kernel % 2 == 0) throw ConfigError("cnnf: depthwise kernel must be odd");
  }
  std::size_t output_dim() const { return blocks.back().out; }
};

/// Reduced separable-convolution CNN: per block depthwise k×k, pointwise
/// 1×1, BN, ReLU; then global average pooling.
template <Scalar T>
class Cnnf {
 public:
  Cnnf(const CnnfConfig& cfg, nn::ParamStore<T>& store, Rng& rng, const std::string& prefix = "cnnf") : cfg_(cfg) {
    cfg_.validate();
    std::size_t in = cfg_.in_width;
    const std::size_t k = cfg_.depthwise_kernel;
    for (std::size_t i = 0; i < cfg_.blocks.size(); ++i) {
      const auto& b = cfg_.blocks[i];
      const std::string p = prefix + "." + std::to_string(i);
      Block blk;
      blk.depthwise = nn::Conv2d<T>(store, p + ".dw", in, in, k, Conv2dOptions{b.stride, b.stride, k / 2, k / 2, in}, rng);
      blk.pointwise = nn::Conv2d<T>(store, p + ".pw", in, b.out, 1, Conv2dOptions{}, rng);
      blk.bn = nn::BatchNorm<T>(store, p + ".bn", b.out);
      blocks_.push_back(std::move(blk));
      in = b.out;
    }
  }

  /// [N×192×Hb×Wb] (or unbatched) -> [N×out] (or [out]).
  Var<T> forward(const Var<T>& input, Mode mode) const {
    auto [x, added] = nn::ensure_batched(input, 3);
    if (x.dims().size() != 4 || x.dims()[1] != cfg_.in_width)
      throw ShapeError("cnnf: expected [N x 192 x Hb x Wb], got " + shape_str(input.dims()));
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::size_t s = cfg_.blocks[i].stride;
      if (x.dims()[2] < s || x.dims()[3] < s)
        throw ConfigError("cnnf: block " + std::to_string(i) + " (stride " + std::to_string(s) + ") receives spatial " +
                          std::to_string(x.dims()[2]) + "x" + std::to_string(x.dims()[3]) + "; grid collapses");
      x = blocks_[i].depthwise(x);
      x = blocks_[i].pointwise(x);
      x = blocks_[i].bn(x, mode);
      x = relu(x);
    }
    x = mean(x, {2, 3});
    return added ? nn::drop_batch(x) : x;
  }

  const CnnfConfig& config() const { return cfg_; }

 private:
  struct Block {
    nn::Conv2d<T> depthwise, pointwise;
    nn::BatchNorm<T> bn;
  };
  CnnfConfig cfg_;
  std::vector<Block> blocks_;
};

}  // namespace sfcl::local
