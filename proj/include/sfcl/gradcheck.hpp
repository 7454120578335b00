#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "sfcl/ops.hpp"
#include "sfcl/rng.hpp"

namespace sfcl {

/// |analytic − numeric| / max(1, |analytic|, |numeric|)
inline double grad_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

/// Checks reverse-mode gradients of `loss` with respect to `params` against
/// central differences. `loss` must rebuild the graph from the current
/// parameter values on every call and return a scalar. When `max_coords` is
/// nonzero, only that many randomly chosen coordinates (across all params)
/// are probed. Returns the max relative error.
inline double grad_check_params(const std::function<Var<double>()>& loss, std::vector<Var<double>> params,
                                double h = 1e-5, std::size_t max_coords = 0, std::uint64_t seed = 0) {
  for (auto& p : params) p.zero_grad();
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Var<double> l = loss();
    tape.backward(l);
  }
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t pi = 0; pi < params.size(); ++pi)
    for (std::size_t i = 0; i < params[pi].size(); ++i) coords.emplace_back(pi, i);
  if (max_coords != 0 && coords.size() > max_coords) {
    Rng rng(seed);
    rng.shuffle(coords);
    coords.resize(max_coords);
  }
  double worst = 0.0;
  for (auto [pi, i] : coords) {
    Var<double>& p = params[pi];
    const double analytic = p.has_grad() ? p.grad()[i] : 0.0;
    double& slot = p.mutable_value()[i];
    const double saved = slot;
    slot = saved + h;
    const double up = loss().value()[0];
    slot = saved - h;
    const double down = loss().value()[0];
    slot = saved;
    worst = std::max(worst, grad_relative_error(analytic, (up - down) / (2.0 * h)));
  }
  return worst;
}

/// Single-input form: f maps x to any tensor; the check contracts the
/// output with fixed random weights to get a scalar.
template <Scalar T>
double grad_check(const std::function<Var<T>(const Var<T>&)>& f, const Tensor<T>& x, double h = 1e-5,
                  std::uint64_t seed = 1) {
  if constexpr (!std::is_same_v<T, double>) {
    throw UsageError("grad_check requires double precision input");
  } else {
    auto xv = Var<double>::leaf(x, true);
    Tensor<double> weights;
    auto loss = [&]() {
      Var<double> y = f(xv);
      if (weights.empty()) {
        Rng rng(seed);
        weights = Tensor<double>(y.dims());
        for (auto& w : weights.values()) w = rng.uniform(-1.0, 1.0);
      }
      return sum_all(mul(y, Var<double>::leaf(weights)));
    };
    return grad_check_params(loss, {xv}, h);
  }
}

}  // namespace sfcl
