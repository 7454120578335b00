#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "sfcl/backbone.hpp"
#include "sfcl/fusion.hpp"
#include "sfcl/local_branch.hpp"

namespace sfcl {

/// Switches for removing components the way the ablations do.
struct AblationConfig {
  bool use_sbcm = true;   // false: flattened spectra go straight into CNN-F
  bool use_hcmf = true;   // false: no FAAE, classifier on S ‖ F ‖ D
  bool use_sida_gate = true;
};

struct ModelConfig {
  local::SbcmConfig sbcm;
  local::CnnfConfig cnnf;
  spatial::BackboneConfig backbone;
  fusion::FaaeConfig faae;
  fusion::HcmaConfig hcma;
  AblationConfig ablation;
  /// Multiplier applied to DCT coefficients before the local branch.
  double spectra_scale = 1.0 / 128.0;

  /// Keeps the cross-module widths consistent with each other.
  void link() {
    faae.freq_channels = local::kFlatChannels;
    faae.spatial_channels = backbone.shallow_width();
    hcma.spatial_dim = backbone.head_dim;
    hcma.freq_dim = cnnf.output_dim();
    hcma.use_gate = ablation.use_sida_gate;
  }

  /// Reduced widths used for desk-scale training runs and tests.
  static ModelConfig desk() {
    ModelConfig c;
    c.backbone.stem = {{16, 2}, {32, 2}, {64, 2}};
    c.backbone.deep = {{96, 2}, {128, 2}};
    c.backbone.head_dim = 256;
    c.cnnf.blocks = {{128, 2}, {128, 2}, {256, 1}};
    c.faae.attn_dim = 32;
    c.hcma.embed_dim = 256;
    c.hcma.tokens = 8;
    c.hcma.heads = 8;
    c.link();
    return c;
  }

  /// Smallest widths that still exercise every path; for gradient checks.
  static ModelConfig tiny() {
    ModelConfig c;
    c.sbcm.widths = {4, 8, 64};
    c.backbone.stem = {{4, 2}, {8, 2}, {64, 2}};
    c.backbone.deep = {{8, 1}};
    c.backbone.head_dim = 12;
    c.cnnf.blocks = {{8, 1}, {16, 1}};
    c.faae.attn_dim = 4;
    c.hcma.embed_dim = 16;
    c.hcma.tokens = 4;
    c.hcma.heads = 2;
    c.link();
    return c;
  }
};

/// One batch of model inputs. All tensors share the leading batch axis.
template <Scalar T>
struct ModelInput {
  Tensor<T> images;       // [N × 3 × H × W], pixels in [0,1]
  Tensor<T> spectra;      // [N × 3 × 64 × H/8 × W/8], raw coefficients
  Tensor<T> descriptors;  // [N × 2304], raw SIDA values
};

template <Scalar T>
struct ModelOutput {
  Var<T> logits;  // [N]
  Var<T> shallow;
  Var<T> enhanced;
  Var<T> alpha;
};

/// Full two-pipeline detector: spatial backbone with shallow FAAE
/// enhancement, local frequency branch, SIDA gate and deep HCMA fusion.
template <Scalar T>
class SfclModel {
 public:
  SfclModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.link();
    Rng rng(seed);
    backbone_.emplace(cfg_.backbone, store_, rng);
    if (cfg_.ablation.use_sbcm) sbcm_.emplace(cfg_.sbcm, store_, rng);
    cnnf_.emplace(cfg_.cnnf, store_, rng);
    if (cfg_.ablation.use_hcmf) {
      faae_.emplace(cfg_.faae, store_, rng);
      hcma_.emplace(cfg_.hcma, store_, rng);
      classifier_ = fusion::Classifier<T>(cfg_.hcma.embed_dim, store_, rng);
    } else {
      classifier_ = fusion::Classifier<T>(cfg_.backbone.head_dim + cfg_.cnnf.output_dim() + sida::kDescriptorLength,
                                          store_, rng);
    }
    norm_mean_ = store_.add("sida_norm.mean", Tensor<T>({sida::kDescriptorLength}, T{0}), false);
    norm_scale_ = store_.add("sida_norm.scale", Tensor<T>({sida::kDescriptorLength}, T{1}), false);
  }

  SfclModel(const SfclModel&) = delete;
  SfclModel& operator=(const SfclModel&) = delete;

  ModelOutput<T> forward(const ModelInput<T>& in, Mode mode) const {
    const std::size_t n = in.images.dim(0);
    if (in.spectra.dim(0) != n || in.descriptors.dim(0) != n)
      throw ShapeError("model: batch sizes disagree across inputs");
    ModelOutput<T> out;
    const Var<T> image = Var<T>::leaf(in.images);
    out.shallow = backbone_->stem_forward(image, mode);

    Tensor<T> scaled = in.spectra;
    for (auto& v : scaled.values()) v *= static_cast<T>(cfg_.spectra_scale);
    const Var<T> spectra = Var<T>::leaf(std::move(scaled));
    Var<T> x_freq;
    if (sbcm_) {
      x_freq = local::flatten_bands(sbcm_->forward(spectra, mode));
    } else {
      const Shape& d = spectra.dims();
      x_freq = reshape(spectra, {d[0], local::kFlatChannels, d[3], d[4]});
    }

    const Var<T> descriptor = Var<T>::leaf(normalize_descriptors(in.descriptors));
    if (cfg_.ablation.use_hcmf) {
      auto faae = faae_->forward(x_freq, out.shallow, mode);
      out.enhanced = faae.enhanced;
      out.alpha = faae.attention;
      const Var<T> s = backbone_->deep_forward(out.enhanced, mode);
      const Var<T> f = cnnf_->forward(x_freq, mode);
      out.logits = classifier_.logits(hcma_->forward(s, f, descriptor, mode).fused);
    } else {
      out.enhanced = out.shallow;
      const Var<T> s = backbone_->deep_forward(out.shallow, mode);
      const Var<T> f = cnnf_->forward(x_freq, mode);
      out.logits = classifier_.logits(concat<T>({s, f, descriptor}, 1));
    }
    return out;
  }

  /// Fits the per-feature standardization applied to descriptors before the
  /// gate (or the concatenation head). Not trainable.
  void fit_descriptor_normalizer(const Tensor<T>& descriptors) {
    const std::size_t n = descriptors.dim(0), len = sida::kDescriptorLength;
    Tensor<T>& mu = norm_mean_.mutable_value();
    Tensor<T>& sc = norm_scale_.mutable_value();
    for (std::size_t j = 0; j < len; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += descriptors[i * len + j];
      const double m = s / static_cast<double>(n);
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = descriptors[i * len + j] - m;
        v += d * d;
      }
      const double sd = std::sqrt(v / static_cast<double>(n));
      mu[j] = static_cast<T>(m);
      sc[j] = static_cast<T>(sd > 1e-6 ? 1.0 / sd : 1.0);
    }
  }

  Tensor<T> normalize_descriptors(const Tensor<T>& raw) const {
    if (raw.rank() != 2 || raw.dim(1) != sida::kDescriptorLength)
      throw ShapeError("model: descriptors must be [N x 2304], got " + shape_str(raw.dims()));
    Tensor<T> out = raw;
    const Tensor<T>& mu = norm_mean_.value();
    const Tensor<T>& sc = norm_scale_.value();
    const std::size_t len = sida::kDescriptorLength;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - mu[i % len]) * sc[i % len];
    return out;
  }

  nn::ParamStore<T>& params() { return store_; }
  const nn::ParamStore<T>& params() const { return store_; }
  const ModelConfig& config() const { return cfg_; }
  fusion::Faae<T>* faae() { return faae_ ? &*faae_ : nullptr; }

 private:
  ModelConfig cfg_;
  nn::ParamStore<T> store_;
  std::optional<spatial::Backbone<T>> backbone_;
  std::optional<local::Sbcm<T>> sbcm_;
  std::optional<local::Cnnf<T>> cnnf_;
  std::optional<fusion::Faae<T>> faae_;
  std::optional<fusion::Hcma<T>> hcma_;
  fusion::Classifier<T> classifier_;
  Var<T> norm_mean_, norm_scale_;
};

}  // namespace sfcl
