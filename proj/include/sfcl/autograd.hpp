#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "sfcl/tensor.hpp"

namespace sfcl {

template <Scalar T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  bool requires_grad = false;

  void accumulate(const Tensor<T>& g) {
    if (grad.empty()) {
      grad = g;
      return;
    }
    T* dst = grad.data();
    const T* src = g.data();
    for (std::size_t i = 0, n = grad.size(); i < n; ++i) dst[i] += src[i];
  }
  /// Gradient buffer, zero-allocated on first use.
  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.dims());
    return grad;
  }
};

/// Handle to a graph value. Copies share the node.
template <Scalar T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var leaf(Tensor<T> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  bool valid() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad = Tensor<T>(); }
  bool requires_grad() const { return node_->requires_grad; }
  const Shape& dims() const { return node_->value.dims(); }
  std::size_t size() const { return node_->value.size(); }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Ordered record of differentiable operations for one forward pass.
///
/// Records are appended in execution order, so reverse iteration is a valid
/// topological order. A tape may be consumed by exactly one backward().
template <Scalar T>
class Tape {
 public:
  using Rule = std::function<void(const Tensor<T>& grad_out)>;

  struct Record {
    std::shared_ptr<Node<T>> output;
    std::vector<std::shared_ptr<Node<T>>> inputs;
    Rule rule;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::shared_ptr<Node<T>> out, std::vector<std::shared_ptr<Node<T>>> inputs, Rule rule) {
    if (consumed_) throw UsageError("tape already consumed by backward; start a new forward pass");
    records_.push_back(Record{std::move(out), std::move(inputs), std::move(rule)});
  }

  std::size_t size() const noexcept { return records_.size(); }
  bool consumed() const noexcept { return consumed_; }

  void backward(const Var<T>& loss) {
    if (consumed_) throw UsageError("backward called twice on the same tape");
    if (loss.size() != 1) throw UsageError("backward requires a scalar loss, got dims " + shape_str(loss.dims()));
    bool found = false;
    for (const auto& r : records_)
      if (r.output.get() == loss.node()) found = true;
    if (!found) throw UsageError("loss was not produced on this tape");
    consumed_ = true;

    loss.node()->accumulate(Tensor<T>(loss.dims(), T{1}));
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (it->output->grad.empty()) continue;
      it->rule(it->output->grad);
    }
  }

  void clear() {
    records_.clear();
    consumed_ = false;
  }

 private:
  std::vector<Record> records_;
  bool consumed_ = false;
};

namespace detail {
template <Scalar T>
Tape<T>*& active_tape() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}
}  // namespace detail

/// Makes `tape` the recording target for operations on this thread.
template <Scalar T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(detail::active_tape<T>()) { detail::active_tape<T>() = &tape; }
  ~TapeScope() { detail::active_tape<T>() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

template <Scalar T>
Tape<T>* active_tape() {
  return detail::active_tape<T>();
}

/// Wraps `value` as an op result. When a tape is active and any input needs
/// gradients, the op is recorded with `rule`, which must push gradients into
/// the inputs (via Node::accumulate / grad_buffer) given the output gradient.
template <Scalar T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, typename Tape<T>::Rule rule) {
  auto out = std::make_shared<Node<T>>();
  out->value = std::move(value);
  Tape<T>* tape = active_tape<T>();
  bool needs = false;
  for (const auto& v : inputs) needs = needs || v.requires_grad();
  if (tape != nullptr && needs) {
    out->requires_grad = true;
    std::vector<std::shared_ptr<Node<T>>> nodes;
    nodes.reserve(inputs.size());
    for (auto& v : inputs) nodes.push_back(v.shared());
    tape->record(out, std::move(nodes), std::move(rule));
  }
  return Var<T>(std::move(out));
}

}  // namespace sfcl
