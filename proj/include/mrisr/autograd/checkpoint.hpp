#pragma once

#include <cstring>
#include <functional>
#include <memory>
#include <vector>

#include "mrisr/autograd/tensor.hpp"

namespace mrisr::ag {

template <typename T>
using SegmentFn = std::function<Tensor<T>(const std::vector<Tensor<T>>&)>;

/// Runs `f` without recording its interior; the backward pass recomputes the
/// interior from the saved inputs and differentiates it locally. Inputs must
/// include every tensor `f` reads that needs a gradient (activations and
/// parameters alike). With `verify`, the recomputed output is compared
/// bitwise against the forward one and NondeterminismError is thrown on
/// mismatch. Does not support create_graph backward.
template <typename T>
Tensor<T> checkpoint(SegmentFn<T> f, const std::vector<Tensor<T>>& inputs, bool verify = false) {
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!grad_enabled() || !any) return f(inputs);

  Tensor<T> out;
  {
    NoGradGuard no_grad;
    out = f(inputs);
  }
  std::shared_ptr<const Eigen::Array<T, Eigen::Dynamic, 1>> reference;
  if (verify) reference = std::make_shared<const Eigen::Array<T, Eigen::Dynamic, 1>>(out.values());

  auto fn = std::make_shared<SegmentFn<T>>(std::move(f));
  auto backward = [fn, inputs, reference](const Tensor<T>& g, const std::vector<bool>& needs) {
    std::vector<Tensor<T>> local;
    local.reserve(inputs.size());
    for (const auto& in : inputs) local.push_back(in.detach().set_requires_grad(in.requires_grad()));
    Tensor<T> recomputed;
    {
      GradModeGuard record(true);
      recomputed = (*fn)(local);
    }
    if (reference && (recomputed.numel() != reference->size() ||
                      std::memcmp(recomputed.data(), reference->data(), sizeof(T) * reference->size()) != 0))
      throw NondeterminismError("checkpointed segment produced a different output on recomputation");
    std::vector<Tensor<T>> targets;
    std::vector<std::size_t> slots;
    for (std::size_t i = 0; i < local.size(); ++i)
      if (needs[i]) {
        targets.push_back(local[i]);
        slots.push_back(i);
      }
    const auto grads = grad<T>({recomputed}, targets, {g}, false);
    std::vector<Tensor<T>> result(inputs.size());
    for (std::size_t j = 0; j < slots.size(); ++j) result[slots[j]] = grads[j];
    return result;
  };
  return Tensor<T>::make_result(out.shape(), out.values(), "checkpoint", inputs, backward, false);
}

}  // namespace mrisr::ag
