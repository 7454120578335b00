#pragma once

#include <array>
#include <string>
#include <vector>

#include "sfcl/gradcheck.hpp"
#include "sfcl/model.hpp"

// Finite-difference gradient checks of each trainable module at the tiny
// configuration, in double precision and batch-norm train mode.

namespace sfcl::checks {

inline constexpr std::array<const char*, 8> kModules = {"sbcm", "cnnf", "backbone", "faae", "hcma", "gate", "classifier", "model"};

inline constexpr double kGradTolerance = 1e-4;

namespace detail {

inline Tensor<double> random_tensor(Shape dims, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(dims));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Scalar loss sum(y ⊙ W) with fixed random W, so every output coordinate
/// contributes with its own weight.
inline Var<double> contract(const Var<double>& y, const Tensor<double>& w) {
  return sum_all(mul(y, Var<double>::leaf(w)));
}

}  // namespace detail

struct CheckResult {
  double max_rel_err = 0.0;
  std::size_t coords = 0;
};

/// Runs the check for one module name from kModules. `max_coords` caps the
/// number of probed coordinates (0 = all).
inline CheckResult module_gradcheck(const std::string& module, std::uint64_t seed, std::size_t max_coords = 600) {
  using detail::random_tensor;
  Rng rng(seed);
  nn::ParamStore<double> store;
  ModelConfig cfg = ModelConfig::tiny();
  const std::size_t n = 3;
  std::function<Var<double>()> loss;
  std::vector<Var<double>> inputs;

  // Modules are held by shared_ptr so the loss closure owns them.
  if (module == "sbcm") {
    auto m = std::make_shared<local::Sbcm<double>>(cfg.sbcm, store, rng);
    auto x = Var<double>::leaf(random_tensor({n, 3, 64, 2, 2}, rng), true);
    auto w = random_tensor({n, 64, 3, 2, 2}, rng);
    inputs = {x};
    loss = [=] { return detail::contract(m->forward(x, Mode::train), w); };
  } else if (module == "cnnf") {
    auto m = std::make_shared<local::Cnnf<double>>(cfg.cnnf, store, rng);
    auto x = Var<double>::leaf(random_tensor({n, 192, 3, 3}, rng), true);
    auto w = random_tensor({n, cfg.cnnf.output_dim()}, rng);
    inputs = {x};
    loss = [=] { return detail::contract(m->forward(x, Mode::train), w); };
  } else if (module == "backbone") {
    auto m = std::make_shared<spatial::Backbone<double>>(cfg.backbone, store, rng);
    auto x = Var<double>::leaf(random_tensor({n, 3, 16, 16}, rng, 0.0, 1.0), true);
    auto w = random_tensor({n, cfg.backbone.head_dim}, rng);
    inputs = {x};
    loss = [=] { return detail::contract(m->deep_forward(m->stem_forward(x, Mode::train), Mode::train), w); };
  } else if (module == "faae") {
    cfg.faae.gamma_init = rng.uniform(-1.0, 1.0);
    auto m = std::make_shared<fusion::Faae<double>>(cfg.faae, store, rng);
    auto xf = Var<double>::leaf(random_tensor({n, 192, 2, 2}, rng), true);
    auto xs = Var<double>::leaf(random_tensor({n, cfg.faae.spatial_channels, 2, 2}, rng), true);
    auto w = random_tensor({n, cfg.faae.spatial_channels, 2, 2}, rng);
    inputs = {xf, xs};
    loss = [=] { return detail::contract(m->forward(xf, xs, Mode::train).enhanced, w); };
  } else if (module == "hcma" || module == "gate") {
    auto m = std::make_shared<fusion::Hcma<double>>(cfg.hcma, store, rng);
    auto s = Var<double>::leaf(random_tensor({n, cfg.hcma.spatial_dim}, rng), true);
    auto f = Var<double>::leaf(random_tensor({n, cfg.hcma.freq_dim}, rng), true);
    auto d = Var<double>::leaf(random_tensor({n, sida::kDescriptorLength}, rng), true);
    auto w = random_tensor({n, cfg.hcma.embed_dim}, rng);
    inputs = {s, f, d};
    if (module == "hcma") {
      loss = [=] { return detail::contract(m->forward(s, f, d, Mode::train).fused, w); };
    } else {
      inputs = {d};
      loss = [=] { return detail::contract(m->forward(s, f, d, Mode::train).gate, w); };
    }
  } else if (module == "classifier") {
    auto m = std::make_shared<fusion::Classifier<double>>(cfg.hcma.embed_dim, store, rng);
    auto x = Var<double>::leaf(random_tensor({n, cfg.hcma.embed_dim}, rng), true);
    auto w = random_tensor({n}, rng);
    inputs = {x};
    loss = [=] { return detail::contract(m->logits(x), w); };
  } else if (module == "model") {
    auto m = std::make_shared<SfclModel<double>>(cfg, seed);
    ModelInput<double> in{random_tensor({n, 3, 16, 16}, rng, 0.0, 1.0), random_tensor({n, 3, 64, 2, 2}, rng, -200, 200),
                          random_tensor({n, sida::kDescriptorLength}, rng, 0.0, 5.0)};
    m->fit_descriptor_normalizer(in.descriptors);
    std::vector<double> labels{1.0, 0.0, 1.0};
    auto params = m->params().trainable();
    const double err = grad_check_params(
        [=] { return bce_with_logits(m->forward(in, Mode::train).logits, labels); }, params, 1e-5, max_coords, seed);
    return {err, max_coords};
  } else {
    throw UsageError("gradcheck: unknown module '" + module + "'");
  }

  std::vector<Var<double>> params = store.trainable();
  params.insert(params.end(), inputs.begin(), inputs.end());
  std::size_t total = 0;
  for (const auto& p : params) total += p.size();
  const double err = grad_check_params(loss, params, 1e-5, max_coords, seed);
  return {err, max_coords == 0 ? total : std::min(total, max_coords)};
}

}  // namespace sfcl::checks
