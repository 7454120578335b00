#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sfcl/ops.hpp"
#include "sfcl/rng.hpp"

namespace sfcl::nn {

/// Named, ordered collection of model tensors. Trainable entries are leaves
/// with requires_grad; buffers (running statistics, fitted normalizers) are
/// stored alongside so a model file captures everything inference needs.
template <Scalar T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var<T> var;
    bool trainable;
  };

  Var<T> add(const std::string& name, Tensor<T> value, bool trainable = true) {
    for (const auto& e : entries_)
      if (e.name == name) throw ConfigError("duplicate parameter name " + name);
    entries_.push_back(Entry{name, Var<T>::leaf(std::move(value), trainable), trainable});
    return entries_.back().var;
  }

  const std::vector<Entry>& entries() const noexcept { return entries_; }

  std::vector<Var<T>> trainable() const {
    std::vector<Var<T>> out;
    for (const auto& e : entries_)
      if (e.trainable) out.push_back(e.var);
    return out;
  }

  const Entry* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }
  Entry* find(const std::string& name) { return const_cast<Entry*>(std::as_const(*this).find(name)); }

  void zero_grad() {
    for (auto& e : entries_) e.var.zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.var.size();
    return n;
  }

 private:
  std::vector<Entry> entries_;
};

/// Uniform(-bound, bound) with bound = sqrt(6 / fan_in) (He/Kaiming uniform).
template <Scalar T>
Tensor<T> he_uniform(Shape dims, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(dims));
  const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual linear-layer default.
template <Scalar T>
Tensor<T> lecun_uniform(Shape dims, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(dims));
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <Scalar T>
struct BatchNorm {
  Var<T> gamma, beta, running_mean, running_var;

  BatchNorm() = default;
  BatchNorm(ParamStore<T>& store, const std::string& prefix, std::size_t channels) {
    gamma = store.add(prefix + ".weight", Tensor<T>({channels}, T{1}));
    beta = store.add(prefix + ".bias", Tensor<T>({channels}, T{0}));
    running_mean = store.add(prefix + ".running_mean", Tensor<T>({channels}, T{0}), false);
    running_var = store.add(prefix + ".running_var", Tensor<T>({channels}, T{1}), false);
  }

  Var<T> operator()(const Var<T>& x, Mode mode) const {
    return batchnorm(x, gamma, beta, running_mean.node()->value, running_var.node()->value, mode);
  }
};

template <Scalar T>
struct Linear {
  Var<T> weight;  // [in × out]
  std::optional<Var<T>> bias;

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
         bool with_bias = true) {
    weight = store.add(prefix + ".weight", lecun_uniform<T>({in, out}, in, rng));
    if (with_bias) bias = store.add(prefix + ".bias", Tensor<T>({out}, T{0}));
  }

  Var<T> operator()(const Var<T>& x) const { return linear(x, weight, bias); }
};

template <Scalar T>
struct Conv2d {
  Var<T> weight;  // [out × in/groups × k × k]
  std::optional<Var<T>> bias;
  Conv2dOptions opt;

  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out, std::size_t kernel,
         Conv2dOptions options, Rng& rng, bool with_bias = false)
      : opt(options) {
    const std::size_t in_g = in / std::max<std::size_t>(options.groups, 1);
    weight = store.add(prefix + ".weight", he_uniform<T>({out, in_g, kernel, kernel}, in_g * kernel * kernel, rng));
    if (with_bias) bias = store.add(prefix + ".bias", Tensor<T>({out}, T{0}));
  }

  Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, bias, opt); }
};

/// Adds a leading batch axis of 1 when `x` has rank `unbatched_rank`.
template <Scalar T>
std::pair<Var<T>, bool> ensure_batched(const Var<T>& x, std::size_t unbatched_rank) {
  if (x.dims().size() != unbatched_rank) return {x, false};
  Shape d = x.dims();
  d.insert(d.begin(), 1);
  return {reshape(x, d), true};
}

template <Scalar T>
Var<T> drop_batch(const Var<T>& x) {
  Shape d(x.dims().begin() + 1, x.dims().end());
  if (d.empty()) d.push_back(1);
  return reshape(x, d);
}

}  // namespace sfcl::nn
