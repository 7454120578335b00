#pragma once

#include <string>
#include <vector>

#include "sfcl/nn.hpp"

namespace sfcl::spatial {

struct StageConfig {
  std::size_t out = 0;
  std::size_t stride = 2;
};

/// Small convolutional stand-in for a pretrained spatial backbone. The stem
/// ends at stride 8 so the shallow features line up with the 8×8 block grid.
struct BackboneConfig {
  std::vector<StageConfig> stem{{32, 2}, {48, 2}, {64, 2}};
  std::vector<StageConfig> deep{{128, 2}, {256, 2}};
  std::size_t kernel = 3;
  std::size_t deep_kernel = 3;
  std::size_t head_dim = 1792;

  void validate() const {
    if (stem.empty()) throw ConfigError("backbone: stem must have at least one stage");
    std::size_t total = 1;
    for (const auto& s : stem) {
      if (s.out == 0 || s.stride == 0) throw ConfigError("backbone: zero width or stride in stem");
      total *= s.stride;
    }
    if (total != 8) throw ConfigError("backbone: stem strides must multiply to 8, got " + std::to_string(total));
    for (const auto& s : deep)
      if (s.out == 0 || s.stride == 0) throw ConfigError("backbone: zero width or stride in deep stages");
    if (kernel % 2 == 0 || deep_kernel % 2 == 0) throw ConfigError("backbone: kernels must be odd");
    if (head_dim == 0) throw ConfigError("backbone: head_dim must be positive");
  }
  std::size_t shallow_width() const { return stem.back().out; }
};

template <Scalar T>
class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, nn::ParamStore<T>& store, Rng& rng, const std::string& prefix = "backbone")
      : cfg_(cfg) {
    cfg_.validate();
    std::size_t in = 3;
    for (std::size_t i = 0; i < cfg_.stem.size(); ++i) {
      const auto& s = cfg_.stem[i];
      stem_.push_back(make_stage(store, prefix + ".stem." + std::to_string(i), in, s, cfg_.kernel, rng));
      in = s.out;
    }
    for (std::size_t i = 0; i < cfg_.deep.size(); ++i) {
      const auto& s = cfg_.deep[i];
      deep_.push_back(make_stage(store, prefix + ".deep." + std::to_string(i), in, s, cfg_.deep_kernel, rng));
      in = s.out;
    }
    head_ = nn::Linear<T>(store, prefix + ".head", in, cfg_.head_dim, rng);
  }

  /// [N×3×H×W] pixels in [0,1] -> shallow features [N×C×H/8×W/8].
  Var<T> stem_forward(const Var<T>& image, Mode mode) const {
    auto [x, added] = nn::ensure_batched(image, 3);
    const Shape& d = x.dims();
    if (d.size() != 4 || d[1] != 3) throw ShapeError("backbone: expected [N x 3 x H x W], got " + shape_str(image.dims()));
    if (d[2] % 8 != 0 || d[3] % 8 != 0)
      throw InputError("backbone: image " + std::to_string(d[2]) + "x" + std::to_string(d[3]) +
                       " is not divisible by 8; grid-crop first");
    for (const auto& s : stem_) x = run_stage(s, x, mode);
    return added ? nn::drop_batch(x) : x;
  }

  /// Shallow (or enhanced) features -> deep vector [N×head_dim].
  Var<T> deep_forward(const Var<T>& features, Mode mode) const {
    auto [x, added] = nn::ensure_batched(features, 3);
    if (x.dims().size() != 4 || x.dims()[1] != cfg_.shallow_width())
      throw ShapeError("backbone: deep input must have " + std::to_string(cfg_.shallow_width()) + " channels, got " +
                       shape_str(features.dims()));
    for (std::size_t i = 0; i < deep_.size(); ++i) {
      const std::size_t s = cfg_.deep[i].stride;
      if (x.dims()[2] < s || x.dims()[3] < s)
        throw ConfigError("backbone: deep stage " + std::to_string(i) + " receives spatial " + std::to_string(x.dims()[2]) +
                          "x" + std::to_string(x.dims()[3]) + "; grid collapses");
      x = run_stage(deep_[i], x, mode);
    }
    x = head_(mean(x, {2, 3}));
    return added ? nn::drop_batch(x) : x;
  }

  const BackboneConfig& config() const { return cfg_; }

 private:
  struct Stage {
    nn::Conv2d<T> conv;
    nn::BatchNorm<T> bn;
  };

  static Stage make_stage(nn::ParamStore<T>& store, const std::string& p, std::size_t in, const StageConfig& s,
                          std::size_t k, Rng& rng) {
    Stage st;
    st.conv = nn::Conv2d<T>(store, p + ".conv", in, s.out, k, Conv2dOptions{s.stride, s.stride, k / 2, k / 2, 1}, rng,
                            true);
    st.bn = nn::BatchNorm<T>(store, p + ".bn", s.out);
    return st;
  }

  static Var<T> run_stage(const Stage& s, const Var<T>& x, Mode mode) { return relu(s.bn(s.conv(x), mode)); }

  BackboneConfig cfg_;
  std::vector<Stage> stem_, deep_;
  nn::Linear<T> head_;
};

}  // namespace sfcl::spatial
