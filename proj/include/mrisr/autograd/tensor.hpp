#pragma once

// Dense N-d tensors with reverse-mode differentiation.
//
// Every op that produces a tensor from inputs requiring gradients records a
// Node holding its inputs and a backward closure. Backward closures are
// written in terms of the same recorded ops, so running a backward pass with
// recording enabled (create_graph) yields gradients that are themselves
// differentiable. Ops whose backward is computed numerically set
// `differentiable_backward = false` and refuse create_graph passes.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "mrisr/errors.hpp"

namespace mrisr::ag {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// ---- recording mode --------------------------------------------------------

bool grad_enabled();
void set_grad_enabled(bool on);

/// Sets the recording flag for the guard's lifetime.
class GradModeGuard {
 public:
  explicit GradModeGuard(bool on) : previous_(grad_enabled()) { set_grad_enabled(on); }
  ~GradModeGuard() { set_grad_enabled(previous_); }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

class NoGradGuard : public GradModeGuard {
 public:
  NoGradGuard() : GradModeGuard(false) {}
};

// ---- live tensor accounting (used to measure checkpointing savings) -------

std::int64_t live_tensor_count();
std::int64_t peak_tensor_count();
void reset_peak_tensor_count();

namespace detail {
void on_tensor_created();
void on_tensor_destroyed();

// Test hook: when set, sign-sensitive ops (leaky_relu, abs) append one byte
// per element describing which branch was taken.
std::vector<std::uint8_t>*& branch_recorder();
}  // namespace detail

template <typename T>
class Tensor;

template <typename T>
using BackwardFn = std::function<std::vector<Tensor<T>>(const Tensor<T>& grad_out, const std::vector<bool>& needs)>;

template <typename T>
struct Node {
  std::string op;
  std::vector<Tensor<T>> inputs;
  BackwardFn<T> backward;
  bool differentiable_backward = true;
};

template <typename T>
struct TensorImpl {
  using Array = Eigen::Array<T, Eigen::Dynamic, 1>;

  Shape shape;
  Array values;
  std::unique_ptr<Array> grad;
  bool requires_grad = false;
  bool retains_grad = false;
  std::shared_ptr<Node<T>> node;

  TensorImpl() { detail::on_tensor_created(); }
  ~TensorImpl() { detail::on_tensor_destroyed(); }
  TensorImpl(const TensorImpl&) = delete;
  TensorImpl& operator=(const TensorImpl&) = delete;
};

/// Shared handle to a TensorImpl. Copies alias the same storage; use clone()
/// for an independent copy.
template <typename T>
class Tensor {
 public:
  using Scalar = T;
  using Array = Eigen::Array<T, Eigen::Dynamic, 1>;

  Tensor() = default;
  Tensor(Shape shape, Array values, bool requires_grad = false) : impl_(std::make_shared<TensorImpl<T>>()) {
    if (ag::numel(shape) != values.size())
      throw ValidationError("tensor shape " + ag::to_string(shape) + " does not match " +
                            std::to_string(values.size()) + " values");
    for (int d : shape)
      if (d <= 0) throw ValidationError("tensor extents must be positive, got " + ag::to_string(shape));
    impl_->shape = std::move(shape);
    impl_->values = std::move(values);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = ag::numel(shape);
    return Tensor(std::move(shape), Array::Zero(n), requires_grad);
  }
  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = ag::numel(shape);
    return Tensor(std::move(shape), Array::Constant(n, value), requires_grad);
  }
  static Tensor ones(Shape shape, bool requires_grad = false) { return full(std::move(shape), T(1), requires_grad); }
  static Tensor from(Shape shape, std::initializer_list<T> v, bool requires_grad = false) {
    Array a(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (T x : v) a[i++] = x;
    return Tensor(std::move(shape), std::move(a), requires_grad);
  }
  static Tensor scalar(T v, bool requires_grad = false) { return full({1}, v, requires_grad); }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  int dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::int64_t numel() const { return impl_->values.size(); }

  const Array& values() const { return impl_->values; }
  /// In-place access for leaf updates (optimizers). Does not invalidate
  /// recorded graphs that captured this tensor.
  Array& mutable_values() { return impl_->values; }
  const T* data() const { return impl_->values.data(); }
  T item() const {
    if (numel() != 1) throw ValidationError("item() on tensor of shape " + ag::to_string(shape()));
    return impl_->values[0];
  }
  T operator[](std::int64_t i) const { return impl_->values[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return !impl_->node; }
  void retain_grad() { impl_->retains_grad = true; }

  bool has_grad() const { return static_cast<bool>(impl_->grad); }
  const Array& grad() const {
    if (!impl_->grad) throw ValidationError("tensor has no accumulated gradient");
    return *impl_->grad;
  }
  Tensor grad_tensor() const { return Tensor(shape(), grad()); }
  void zero_grad() { impl_->grad.reset(); }
  void accumulate_grad(const Array& g) {
    if (impl_->grad)
      *impl_->grad += g;
    else
      impl_->grad = std::make_unique<Array>(g);
  }

  /// Same values, no history, requires_grad off.
  Tensor detach() const { return Tensor(shape(), values()); }
  Tensor clone() const {
    Tensor t(shape(), values(), requires_grad());
    return t;
  }

  const std::shared_ptr<Node<T>>& node() const { return impl_->node; }
  TensorImpl<T>* impl() const { return impl_.get(); }
  bool same(const Tensor& o) const { return impl_ == o.impl_; }

  /// Creates an op output; records a node if recording is on and any input
  /// requires gradients.
  static Tensor make_result(Shape shape, Array values, std::string op, std::vector<Tensor> inputs,
                            BackwardFn<T> backward, bool differentiable_backward = true) {
    Tensor out(std::move(shape), std::move(values));
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
    if (!any) return out;
    auto node = std::make_shared<Node<T>>();
    node->op = std::move(op);
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    node->differentiable_backward = differentiable_backward;
    out.impl_->node = std::move(node);
    out.impl_->requires_grad = true;
    return out;
  }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

/// Nodes reachable from `roots` through inputs that require gradients,
/// ordered so that every tensor appears after all of its inputs.
template <typename T>
std::vector<Tensor<T>> topological_order(const std::vector<Tensor<T>>& roots) {
  std::vector<Tensor<T>> order;
  std::unordered_set<const TensorImpl<T>*> visited;
  struct Frame {
    Tensor<T> t;
    std::size_t next = 0;
  };
  std::vector<Frame> stack;
  for (const auto& r : roots) {
    if (!r.defined() || !r.requires_grad() || visited.count(r.impl())) continue;
    visited.insert(r.impl());
    stack.push_back({r, 0});
    while (!stack.empty()) {
      Frame& f = stack.back();
      const auto& node = f.t.node();
      if (node && f.next < node->inputs.size()) {
        const Tensor<T> in = node->inputs[f.next++];
        if (in.defined() && in.requires_grad() && !visited.count(in.impl())) {
          visited.insert(in.impl());
          stack.push_back({in, 0});
        }
        continue;
      }
      order.push_back(f.t);
      stack.pop_back();
    }
  }
  return order;
}

struct BackwardOptions {
  bool create_graph = false;
  bool accumulate_into_leaves = true;
};

/// Core engine: propagates root_grads from roots in reverse topological
/// order. Returns the gradients for `wrt` (zeros where unreachable). With
/// accumulate_into_leaves, leaf tensors (and those marked retain_grad)
/// additionally accumulate into their .grad buffers.
template <typename T>
std::vector<Tensor<T>> run_backward(const std::vector<Tensor<T>>& roots, const std::vector<Tensor<T>>& root_grads,
                                    const std::vector<Tensor<T>>& wrt, const BackwardOptions& opts) {
  if (roots.size() != root_grads.size()) throw ValidationError("one seed gradient per root is required");
  auto order = topological_order(roots);
  std::unordered_map<const TensorImpl<T>*, Tensor<T>> pending;
  std::unordered_set<const TensorImpl<T>*> wanted;
  for (const auto& w : wrt) wanted.insert(w.impl());

  GradModeGuard mode(opts.create_graph);
  auto accumulate = [&](const Tensor<T>& target, const Tensor<T>& g) {
    if (g.shape() != target.shape())
      throw ValidationError("gradient shape " + to_string(g.shape()) + " does not match tensor shape " +
                            to_string(target.shape()));
    auto it = pending.find(target.impl());
    if (it == pending.end())
      pending.emplace(target.impl(), g);
    else
      it->second = add(it->second, g);
  };
  for (std::size_t i = 0; i < roots.size(); ++i)
    if (roots[i].defined() && roots[i].requires_grad()) accumulate(roots[i], root_grads[i]);

  std::unordered_map<const TensorImpl<T>*, Tensor<T>> results;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor<T>& t = *it;
    auto found = pending.find(t.impl());
    if (found == pending.end()) continue;
    const Tensor<T> g = found->second;
    pending.erase(found);

    if (wanted.count(t.impl())) results.emplace(t.impl(), g);
    if (opts.accumulate_into_leaves && (t.is_leaf() || t.impl()->retains_grad))
      t.accumulate_grad(g.values());

    const auto& node = t.node();
    if (!node) continue;
    if (opts.create_graph && !node->differentiable_backward) throw NoDoubleBackwardError(node->op);
    std::vector<bool> needs(node->inputs.size());
    for (std::size_t i = 0; i < needs.size(); ++i)
      needs[i] = node->inputs[i].defined() && node->inputs[i].requires_grad();
    const auto input_grads = node->backward(g, needs);
    for (std::size_t i = 0; i < node->inputs.size(); ++i)
      if (needs[i] && i < input_grads.size() && input_grads[i].defined()) accumulate(node->inputs[i], input_grads[i]);
  }

  std::vector<Tensor<T>> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto r = results.find(w.impl());
    out.push_back(r != results.end() ? r->second : Tensor<T>::zeros(w.shape()));
  }
  return out;
}

/// Accumulates d(loss)/d(leaf) into every leaf's .grad. Repeated calls add.
template <typename T>
void backward(const Tensor<T>& loss, bool create_graph = false) {
  if (loss.numel() != 1)
    throw ValidationError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  if (!loss.requires_grad()) return;
  run_backward<T>({loss}, {Tensor<T>::ones(loss.shape())}, {}, {create_graph, true});
}

/// Gradients of sum_i <outputs[i], grad_outputs[i]> with respect to inputs,
/// without touching .grad buffers. grad_outputs defaults to ones.
template <typename T>
std::vector<Tensor<T>> grad(const std::vector<Tensor<T>>& outputs, const std::vector<Tensor<T>>& inputs,
                            std::vector<Tensor<T>> grad_outputs = {}, bool create_graph = false) {
  if (grad_outputs.empty())
    for (const auto& o : outputs) grad_outputs.push_back(Tensor<T>::ones(o.shape()));
  return run_backward<T>(outputs, grad_outputs, inputs, {create_graph, false});
}

}  // namespace mrisr::ag
