#pragma once

#include <functional>
#include <vector>

#include "mrisr/autograd/checkpoint.hpp"
#include "mrisr/autograd/ops.hpp"
#include "mrisr/autograd/paramset.hpp"
#include "mrisr/autograd/tensor.hpp"

namespace mrisr::ag {

template <typename T>
struct GradNorm {
  Tensor<T> norm;        // ||dD/dx||_2, recorded so it can be differentiated again
  Tensor<T> input_grad;  // dD/dx, recorded
  std::vector<Tensor<T>> param_grads;  // d norm / d params
};

/// Differentiates a scalar function of x, takes the Euclidean norm of that
/// gradient, and differentiates the norm with respect to `params` in a
/// second backward pass. A constant function has norm 0 and zero parameter
/// gradients.
template <typename T>
GradNorm<T> grad_of_grad_norm(const std::function<Tensor<T>(const Tensor<T>&)>& d_apply, const Tensor<T>& x,
                              const std::vector<Tensor<T>>& params) {
  Tensor<T> probe = x.detach();
  probe.set_requires_grad(true);
  GradNorm<T> out;
  {
    GradModeGuard record(true);
    const Tensor<T> value = d_apply(probe);
    if (value.numel() != 1) throw ValidationError("grad_of_grad_norm: function must return a scalar");
    out.input_grad = grad<T>({value}, {probe}, {}, true)[0];
    out.norm = sqrt(sum_all(mul(out.input_grad, out.input_grad)));
  }
  if (!params.empty()) out.param_grads = grad<T>({out.norm}, params);
  return out;
}

}  // namespace mrisr::ag
