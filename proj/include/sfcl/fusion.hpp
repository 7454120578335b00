#pragma once

#include <cmath>
#include <string>
#include <utility>

#include "sfcl/nn.hpp"
#include "sfcl/sida.hpp"

// Cross-modal fusion.
//
// Shallow stage: tokens are block-grid positions. Queries and keys concatenate
// a frequency projection and a spatial projection of every position; the
// resulting attention map mixes projected frequency values across positions
// and the result is added back onto the spatial features through a sigmoid
// gate and BN.
//
// Deep stage: the spatial and frequency vectors are projected to a shared
// width, cut into tokens, and combined by multi-head attention (spatial
// queries, frequency keys/values). A residual projection of the spatial
// vector is added and the sum is modulated by a gate computed from the SIDA
// descriptor.

namespace sfcl::fusion {

struct FaaeConfig {
  std::size_t attn_dim = 64;
  std::size_t freq_channels = 192;
  std::size_t spatial_channels = 64;
  double gamma_init = 0.0;
  /// Zero-initialize the output 1×1 conv so the block starts as an identity.
  bool zero_init_out = false;

  void validate() const {
    if (attn_dim == 0 || freq_channels == 0 || spatial_channels == 0) throw ConfigError("faae: widths must be positive");
  }
};

template <Scalar T>
struct FaaeOutput {
  Var<T> enhanced;   // Y_S, same dims as the spatial input
  Var<T> attention;  // α, [N × P × P]
};

template <Scalar T>
class Faae {
 public:
  Faae(const FaaeConfig& cfg, nn::ParamStore<T>& store, Rng& rng, const std::string& prefix = "faae") : cfg_(cfg) {
    cfg_.validate();
    const std::size_t a = cfg_.attn_dim, cf = cfg_.freq_channels, cs = cfg_.spatial_channels;
    q_freq_ = nn::Conv2d<T>(store, prefix + ".q_freq", cf, a, 1, {}, rng);
    q_spatial_ = nn::Conv2d<T>(store, prefix + ".q_spatial", cs, a, 1, {}, rng);
    k_freq_ = nn::Conv2d<T>(store, prefix + ".k_freq", cf, a, 1, {}, rng);
    k_spatial_ = nn::Conv2d<T>(store, prefix + ".k_spatial", cs, a, 1, {}, rng);
    v_freq_ = nn::Conv2d<T>(store, prefix + ".v_freq", cf, cs, 1, {}, rng);
    out_ = nn::Conv2d<T>(store, prefix + ".out", cs, cs, 1, {}, rng);
    if (cfg_.zero_init_out) out_.weight.mutable_value().fill(T{0});
    gamma_ = store.add(prefix + ".gamma", Tensor<T>::scalar(static_cast<T>(cfg_.gamma_init)));
    bn_ = nn::BatchNorm<T>(store, prefix + ".bn", cs);
  }

  /// α = softmax(M_query · M_keyᵀ / sqrt(2·attn_dim)), rows over positions.
  Var<T> attention(const Var<T>& x_freq, const Var<T>& x_spatial) const {
    check_pair(x_freq, x_spatial);
    auto [xf, added] = nn::ensure_batched(x_freq, 3);
    auto xs = added ? nn::ensure_batched(x_spatial, 3).first : x_spatial;
    const Var<T> mq = concat<T>({tokens(q_freq_(xf)), tokens(q_spatial_(xs))}, 2);
    const Var<T> mk = concat<T>({tokens(k_freq_(xf)), tokens(k_spatial_(xs))}, 2);
    const T inv = T{1} / std::sqrt(static_cast<T>(2 * cfg_.attn_dim));
    Var<T> alpha = softmax_rows(scale(bmm(mq, mk, true), inv));
    return added ? nn::drop_batch(alpha) : alpha;
  }

  /// Y_S = X_S + BN(out(α · v_freq(X_f) · σ(γ))).
  Var<T> enhance(const Var<T>& x_spatial, const Var<T>& x_freq, const Var<T>& alpha, Mode mode) const {
    check_pair(x_freq, x_spatial);
    auto [xs, added] = nn::ensure_batched(x_spatial, 3);
    auto xf = added ? nn::ensure_batched(x_freq, 3).first : x_freq;
    auto al = added ? nn::ensure_batched(alpha, 2).first : alpha;
    const std::size_t n = xs.dims()[0], c = xs.dims()[1], h = xs.dims()[2], w = xs.dims()[3];
    if (al.dims() != Shape{n, h * w, h * w})
      throw ShapeError("faae: attention " + shape_str(alpha.dims()) + " does not match " + std::to_string(h * w) + " positions");
    Var<T> context = bmm(al, tokens(v_freq_(xf)));              // [N × P × C]
    context = mul(context, sigmoid(gamma_));
    context = reshape(permute(context, {0, 2, 1}), {n, c, h, w});
    Var<T> y = add(xs, bn_(out_(context), mode));
    return added ? nn::drop_batch(y) : y;
  }

  FaaeOutput<T> forward(const Var<T>& x_freq, const Var<T>& x_spatial, Mode mode) const {
    Var<T> alpha = attention(x_freq, x_spatial);
    return {enhance(x_spatial, x_freq, alpha, mode), alpha};
  }

  Var<T>& gamma() { return gamma_; }
  const FaaeConfig& config() const { return cfg_; }

 private:
  /// [N×C×H×W] -> [N×(H·W)×C]
  static Var<T> tokens(const Var<T>& x) {
    const Shape& d = x.dims();
    return permute(reshape(x, {d[0], d[1], d[2] * d[3]}), {0, 2, 1});
  }

  void check_pair(const Var<T>& xf, const Var<T>& xs) const {
    const Shape& a = xf.dims();
    const Shape& b = xs.dims();
    if (a.size() != b.size() || a.size() < 3 || a.size() > 4)
      throw ShapeError("faae: frequency " + shape_str(a) + " and spatial " + shape_str(b) + " ranks disagree");
    const std::size_t off = a.size() == 4 ? 1 : 0;
    if (a[off] != cfg_.freq_channels || b[off] != cfg_.spatial_channels)
      throw ShapeError("faae: channel widths " + shape_str(a) + " / " + shape_str(b) + " do not match config");
    if (a[off + 1] != b[off + 1] || a[off + 2] != b[off + 2] || (off && a[0] != b[0]))
      throw ShapeError("faae: spatial grids differ, frequency " + shape_str(a) + " vs spatial " + shape_str(b));
  }

  FaaeConfig cfg_;
  nn::Conv2d<T> q_freq_, q_spatial_, k_freq_, k_spatial_, v_freq_, out_;
  Var<T> gamma_;
  nn::BatchNorm<T> bn_;
};

struct HcmaConfig {
  std::size_t spatial_dim = 1792;
  std::size_t freq_dim = 2048;
  std::size_t embed_dim = 1024;
  std::size_t heads = 8;
  std::size_t tokens = 16;
  bool use_gate = true;

  std::size_t token_dim() const { return embed_dim / tokens; }
  void validate() const {
    if (spatial_dim == 0 || freq_dim == 0 || embed_dim == 0 || heads == 0 || tokens == 0)
      throw ConfigError("hcma: dimensions must be positive");
    if (embed_dim % heads != 0) throw ConfigError("hcma: embed_dim must be divisible by heads");
    if (embed_dim % tokens != 0) throw ConfigError("hcma: embed_dim must equal tokens x token_dim");
    if (token_dim() % heads != 0) throw ConfigError("hcma: token_dim must be divisible by heads");
  }
};

template <Scalar T>
struct HcmaOutput {
  Var<T> fused;      // [N × d_e]
  Var<T> attended;   // A, [N × d_e]
  Var<T> values;     // V before attention, [N × d_e]
  Var<T> gate;       // g, [N × d_e]; invalid when the gate is disabled
};

template <Scalar T>
class Hcma {
 public:
  Hcma(const HcmaConfig& cfg, nn::ParamStore<T>& store, Rng& rng, const std::string& prefix = "hcma") : cfg_(cfg) {
    cfg_.validate();
    const std::size_t e = cfg_.embed_dim, dt = cfg_.token_dim();
    proj_spatial_ = nn::Linear<T>(store, prefix + ".proj_spatial", cfg_.spatial_dim, e, rng);
    proj_freq_ = nn::Linear<T>(store, prefix + ".proj_freq", cfg_.freq_dim, e, rng);
    wq_ = store.add(prefix + ".w_q", nn::lecun_uniform<T>({dt, dt}, dt, rng));
    wk_ = store.add(prefix + ".w_k", nn::lecun_uniform<T>({dt, dt}, dt, rng));
    wv_ = store.add(prefix + ".w_v", nn::lecun_uniform<T>({dt, dt}, dt, rng));
    residual_ = nn::Linear<T>(store, prefix + ".residual", e, e, rng);
    bn_ = nn::BatchNorm<T>(store, prefix + ".bn", e);
    if (cfg_.use_gate) gate_ = nn::Linear<T>(store, prefix + ".gate", sida::kDescriptorLength, e, rng);
  }

  /// spatial [N×spatial_dim], freq [N×freq_dim], descriptor [N×2304].
  HcmaOutput<T> forward(const Var<T>& spatial, const Var<T>& freq, const Var<T>& descriptor, Mode mode) const {
    if (spatial.dims().size() != 2 || spatial.dims()[1] != cfg_.spatial_dim)
      throw ShapeError("hcma: spatial input must be [N x " + std::to_string(cfg_.spatial_dim) + "], got " + shape_str(spatial.dims()));
    if (freq.dims().size() != 2 || freq.dims()[1] != cfg_.freq_dim || freq.dims()[0] != spatial.dims()[0])
      throw ShapeError("hcma: frequency input must be [N x " + std::to_string(cfg_.freq_dim) + "], got " + shape_str(freq.dims()));
    if (cfg_.use_gate && (descriptor.dims().size() != 2 || descriptor.dims()[1] != sida::kDescriptorLength ||
                          descriptor.dims()[0] != spatial.dims()[0]))
      throw ShapeError("hcma: descriptor must be [N x 2304], got " + shape_str(descriptor.dims()));

    const std::size_t n = spatial.dims()[0], e = cfg_.embed_dim, t = cfg_.tokens, dt = cfg_.token_dim();
    const std::size_t h = cfg_.heads, dh = dt / h;
    const Var<T> s_proj = proj_spatial_(spatial);
    const Var<T> f_proj = proj_freq_(freq);

    auto project = [&](const Var<T>& v, const Var<T>& w) { return matmul(reshape(v, {n * t, dt}), w); };
    auto split_heads = [&](const Var<T>& v) {
      return reshape(permute(reshape(v, {n, t, h, dh}), {0, 2, 1, 3}), {n * h, t, dh});
    };
    const Var<T> q = project(s_proj, wq_);
    const Var<T> k = project(f_proj, wk_);
    const Var<T> v = project(f_proj, wv_);

    const T inv = T{1} / std::sqrt(static_cast<T>(e) / static_cast<T>(h));
    const Var<T> att = softmax_rows(scale(bmm(split_heads(q), split_heads(k), true), inv));
    const Var<T> heads_out = bmm(att, split_heads(v));  // [N·h × T × dh]
    const Var<T> attended = reshape(permute(reshape(heads_out, {n, h, t, dh}), {0, 2, 1, 3}), {n, e});

    const Var<T> a_res = add(attended, bn_(residual_(s_proj), mode));
    HcmaOutput<T> out{a_res, attended, reshape(v, {n, e}), Var<T>()};
    if (cfg_.use_gate) {
      out.gate = sigmoid(gate_(descriptor));
      out.fused = mul(a_res, out.gate);
    } else {
      out.fused = a_res;
    }
    return out;
  }

  const nn::Linear<T>& gate_layer() const { return gate_; }
  const HcmaConfig& config() const { return cfg_; }

 private:
  HcmaConfig cfg_;
  nn::Linear<T> proj_spatial_, proj_freq_, residual_, gate_;
  Var<T> wq_, wk_, wv_;
  nn::BatchNorm<T> bn_;
};

/// Linear head producing one logit per sample.
template <Scalar T>
class Classifier {
 public:
  Classifier() = default;
  Classifier(std::size_t in, nn::ParamStore<T>& store, Rng& rng, const std::string& prefix = "classifier")
      : head_(store, prefix, in, 1, rng) {}

  /// [N×in] -> logits [N]
  Var<T> logits(const Var<T>& x) const {
    Var<T> z = head_(x);
    return reshape(z, {z.dims()[0]});
  }

  nn::Linear<T>& layer() { return head_; }

 private:
  nn::Linear<T> head_;
};

template <Scalar T>
T probability(T logit) {
  return sigmoid_scalar(logit);
}

}  // namespace sfcl::fusion
