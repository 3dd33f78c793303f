#pragma once

// Differentiable ops. Conventions:
//   * network activations are 5-rank N x C x D x H x W, W fastest;
//   * binary elementwise ops need identical shapes; broadcasting is explicit
//     through broadcast_to / sum_to;
//   * every reduction runs sequentially in storage order, so results are
//     bitwise reproducible.
//
// Ops supporting create_graph backward (closed set): identity, add, sub, mul,
// scale, add_scalar, leaky_relu, abs, pow, sqrt, reshape, sum_to,
// broadcast_to, sum_all, mean_all, concat_channels, narrow_channels,
// embed_channels, conv3d (and its two adjoint ops), normalize,
// global_mean_pool. cross_entropy and checkpoint do not.

#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "mrisr/autograd/tensor.hpp"

namespace mrisr::ag {

template <typename T>
using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;

namespace detail {

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw ValidationError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

template <typename T>
Arr<T> sum_to_kernel(const Arr<T>& x, const Shape& from, const Shape& to) {
  std::array<int, 5> f{1, 1, 1, 1, 1}, t{1, 1, 1, 1, 1};
  const std::size_t off = 5 - from.size();
  for (std::size_t i = 0; i < from.size(); ++i) {
    f[off + i] = from[i];
    t[off + i] = to[i];
  }
  std::array<std::int64_t, 5> ts{};
  std::int64_t s = 1;
  for (int i = 4; i >= 0; --i) {
    ts[i] = t[i] == 1 ? 0 : s;
    s *= t[i];
  }
  Arr<T> out = Arr<T>::Zero(s);
  std::int64_t i = 0;
  for (int a0 = 0; a0 < f[0]; ++a0)
    for (int a1 = 0; a1 < f[1]; ++a1)
      for (int a2 = 0; a2 < f[2]; ++a2)
        for (int a3 = 0; a3 < f[3]; ++a3) {
          const std::int64_t base = a0 * ts[0] + a1 * ts[1] + a2 * ts[2] + a3 * ts[3];
          for (int a4 = 0; a4 < f[4]; ++a4) out[base + a4 * ts[4]] += x[i++];
        }
  return out;
}

template <typename T>
Arr<T> broadcast_kernel(const Arr<T>& x, const Shape& from, const Shape& to) {
  std::array<int, 5> f{1, 1, 1, 1, 1}, t{1, 1, 1, 1, 1};
  const std::size_t off = 5 - from.size();
  for (std::size_t i = 0; i < from.size(); ++i) {
    f[off + i] = from[i];
    t[off + i] = to[i];
  }
  std::array<std::int64_t, 5> fs{};
  std::int64_t s = 1;
  for (int i = 4; i >= 0; --i) {
    fs[i] = f[i] == 1 ? 0 : s;
    s *= f[i];
  }
  Arr<T> out(numel(to));
  std::int64_t i = 0;
  for (int a0 = 0; a0 < t[0]; ++a0)
    for (int a1 = 0; a1 < t[1]; ++a1)
      for (int a2 = 0; a2 < t[2]; ++a2)
        for (int a3 = 0; a3 < t[3]; ++a3) {
          const std::int64_t base = a0 * fs[0] + a1 * fs[1] + a2 * fs[2] + a3 * fs[3];
          for (int a4 = 0; a4 < t[4]; ++a4) out[i++] = x[base + a4 * fs[4]];
        }
  return out;
}

inline void check_reducible(const Shape& from, const Shape& to, const char* op) {
  if (from.size() != to.size() || from.size() > 5)
    throw ValidationError(std::string(op) + ": rank mismatch " + to_string(from) + " vs " + to_string(to));
  for (std::size_t i = 0; i < from.size(); ++i)
    if (to[i] != from[i] && to[i] != 1)
      throw ValidationError(std::string(op) + ": cannot reduce " + to_string(from) + " to " + to_string(to));
}

template <typename T>
void record_branches(const Arr<T>& x) {
  auto* rec = branch_recorder();
  if (!rec) return;
  for (Eigen::Index i = 0; i < x.size(); ++i) rec->push_back(x[i] > T(0) ? 2 : (x[i] < T(0) ? 0 : 1));
}

}  // namespace detail

// ---- elementwise ------------------------------------------------------------

template <typename T>
Tensor<T> identity(const Tensor<T>& x) {
  return Tensor<T>::make_result(x.shape(), x.values(), "identity", {x},
                                [](const Tensor<T>& g, const std::vector<bool>&) { return std::vector<Tensor<T>>{g}; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  return Tensor<T>::make_result(a.shape(), a.values() + b.values(), "add", {a, b},
                                [](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{g, g};
                                });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  return Tensor<T>::make_result(a.shape(), a.values() - b.values(), "sub", {a, b},
                                [](const Tensor<T>& g, const std::vector<bool>& needs) {
                                  return std::vector<Tensor<T>>{g, needs[1] ? scale(g, T(-1)) : Tensor<T>()};
                                });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  return Tensor<T>::make_result(a.shape(), a.values() * b.values(), "mul", {a, b},
                                [a, b](const Tensor<T>& g, const std::vector<bool>& needs) {
                                  return std::vector<Tensor<T>>{needs[0] ? mul(g, b) : Tensor<T>(),
                                                                needs[1] ? mul(g, a) : Tensor<T>()};
                                });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return Tensor<T>::make_result(a.shape(), a.values() * s, "scale", {a},
                                [s](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{scale(g, s)};
                                });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return Tensor<T>::make_result(a.shape(), a.values() + s, "add_scalar", {a},
                                [](const Tensor<T>& g, const std::vector<bool>&) { return std::vector<Tensor<T>>{g}; });
}

/// Multiplies by a constant (non-differentiable) factor array.
template <typename T>
Tensor<T> mul_const(const Tensor<T>& a, std::shared_ptr<const Arr<T>> factor, const char* op = "mul_const") {
  if (factor->size() != a.numel()) throw ValidationError("mul_const: factor length mismatch");
  return Tensor<T>::make_result(a.shape(), a.values() * (*factor), op, {a},
                                [factor](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{mul_const(g, factor)};
                                });
}

/// x for x >= 0, slope * x otherwise. The derivative at 0 is taken as 1.
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.2)) {
  if (!(slope >= T(0) && slope < T(1))) throw ValidationError("leaky_relu slope must lie in [0, 1)");
  detail::record_branches(x.values());
  auto factor = std::make_shared<const Arr<T>>((x.values() >= T(0)).select(Arr<T>::Ones(x.numel()), slope));
  return mul_const(x, factor, "leaky_relu");
}

/// |x|, with derivative sign(x) (0 at 0).
template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  detail::record_branches(x.values());
  auto sign = std::make_shared<const Arr<T>>(
      (x.values() > T(0)).select(Arr<T>::Ones(x.numel()), (x.values() < T(0)).select(-Arr<T>::Ones(x.numel()), T(0))));
  return Tensor<T>::make_result(x.shape(), x.values().abs(), "abs", {x},
                                [sign](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{mul_const(g, sign)};
                                });
}

/// x^p elementwise. For p < 0 the value at x == 0 is defined as 0, which makes
/// the derivative of sqrt (and of the Euclidean norm) vanish at the origin.
template <typename T>
Tensor<T> pow(const Tensor<T>& x, T p) {
  Arr<T> v(x.numel());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const T xi = x.values()[i];
    v[i] = (p < T(0) && xi == T(0)) ? T(0) : std::pow(xi, p);
  }
  return Tensor<T>::make_result(x.shape(), std::move(v), "pow", {x},
                                [x, p](const Tensor<T>& g, const std::vector<bool>&) {
                                  if (p == T(1)) return std::vector<Tensor<T>>{g};
                                  return std::vector<Tensor<T>>{mul(g, scale(pow(x, p - T(1)), p))};
                                });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return pow(x, T(0.5));
}

// ---- shape ------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw ValidationError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape) + " changes element count");
  const Shape from = x.shape();
  return Tensor<T>::make_result(std::move(shape), x.values(), "reshape", {x},
                                [from](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{reshape(g, from)};
                                });
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape);

/// Sums over every axis where `target` has extent 1 (same rank as x).
template <typename T>
Tensor<T> sum_to(const Tensor<T>& x, const Shape& target) {
  detail::check_reducible(x.shape(), target, "sum_to");
  if (x.shape() == target) return x;
  const Shape from = x.shape();
  return Tensor<T>::make_result(target, detail::sum_to_kernel(x.values(), from, target), "sum_to", {x},
                                [from](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{broadcast_to(g, from)};
                                });
}

/// Repeats x along every axis where x has extent 1 (same rank as shape).
template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape) {
  detail::check_reducible(shape, x.shape(), "broadcast_to");
  if (x.shape() == shape) return x;
  const Shape from = x.shape();
  return Tensor<T>::make_result(shape, detail::broadcast_kernel(x.values(), from, shape), "broadcast_to", {x},
                                [from](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{sum_to(g, from)};
                                });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  const Tensor<T> flat = reshape(x, {static_cast<int>(x.numel())});
  return sum_to(flat, Shape{1});
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> narrow_channels(const Tensor<T>& x, int start, int len);
template <typename T>
Tensor<T> embed_channels(const Tensor<T>& x, int total, int start);

/// Concatenates along axis 1.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw ValidationError("concat_channels: no inputs");
  Shape shape = xs[0].shape();
  if (shape.size() < 2) throw ValidationError("concat_channels: rank must be >= 2");
  int total = 0;
  std::vector<int> widths;
  for (const auto& x : xs) {
    Shape s = x.shape();
    if (s.size() != shape.size()) throw ValidationError("concat_channels: rank mismatch");
    widths.push_back(s[1]);
    total += s[1];
    s[1] = shape[1];
    if (s != shape) throw ValidationError("concat_channels: non-channel extents differ");
  }
  const int n = shape[0];
  std::int64_t inner = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) inner *= shape[i];
  shape[1] = total;
  Arr<T> v(numel(shape));
  for (int b = 0; b < n; ++b) {
    std::int64_t dst = static_cast<std::int64_t>(b) * total * inner;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const std::int64_t len = widths[k] * inner;
      v.segment(dst, len) = xs[k].values().segment(b * len, len);
      dst += len;
    }
  }
  return Tensor<T>::make_result(shape, std::move(v), "concat_channels", xs,
                                [widths](const Tensor<T>& g, const std::vector<bool>& needs) {
                                  std::vector<Tensor<T>> out;
                                  int start = 0;
                                  for (std::size_t k = 0; k < widths.size(); ++k) {
                                    out.push_back(needs[k] ? narrow_channels(g, start, widths[k]) : Tensor<T>());
                                    start += widths[k];
                                  }
                                  return out;
                                });
}

/// Channels [start, start + len) of x.
template <typename T>
Tensor<T> narrow_channels(const Tensor<T>& x, int start, int len) {
  Shape shape = x.shape();
  const int total = shape.at(1);
  if (start < 0 || len <= 0 || start + len > total) throw ValidationError("narrow_channels: range out of bounds");
  std::int64_t inner = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) inner *= shape[i];
  shape[1] = len;
  Arr<T> v(numel(shape));
  for (int b = 0; b < shape[0]; ++b)
    v.segment(static_cast<std::int64_t>(b) * len * inner, len * inner) =
        x.values().segment((static_cast<std::int64_t>(b) * total + start) * inner, len * inner);
  return Tensor<T>::make_result(shape, std::move(v), "narrow_channels", {x},
                                [total, start](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{embed_channels(g, total, start)};
                                });
}

/// Places x at channel offset `start` inside a zero tensor with `total` channels.
template <typename T>
Tensor<T> embed_channels(const Tensor<T>& x, int total, int start) {
  Shape shape = x.shape();
  const int len = shape.at(1);
  if (start < 0 || start + len > total) throw ValidationError("embed_channels: range out of bounds");
  std::int64_t inner = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) inner *= shape[i];
  shape[1] = total;
  Arr<T> v = Arr<T>::Zero(numel(shape));
  for (int b = 0; b < shape[0]; ++b)
    v.segment((static_cast<std::int64_t>(b) * total + start) * inner, len * inner) =
        x.values().segment(static_cast<std::int64_t>(b) * len * inner, len * inner);
  return Tensor<T>::make_result(shape, std::move(v), "embed_channels", {x},
                                [start, len](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{narrow_channels(g, start, len)};
                                });
}

// ---- convolution ------------------------------------------------------------

struct ConvGeom {
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> pad{0, 0, 0};
  std::array<int, 3> dilation{1, 1, 1};

  static ConvGeom same(int kernel, int dilation = 1) {
    const int p = dilation * (kernel - 1) / 2;
    return {{1, 1, 1}, {p, p, p}, {dilation, dilation, dilation}};
  }
  static ConvGeom strided(int kernel, int stride) {
    const int p = (kernel - 1) / 2;
    return {{stride, stride, stride}, {p, p, p}, {1, 1, 1}};
  }
};

/// Output shape of a cross-correlation; throws ValidationError listing both
/// shapes on mismatch.
Shape conv_output_shape(const Shape& input, const Shape& weight, const ConvGeom& geom);

namespace detail {
template <typename T>
Arr<T> conv_forward(const Arr<T>& x, const Shape& xs, const Arr<T>& w, const Shape& ws, const ConvGeom& g);
template <typename T>
Arr<T> conv_backward_input(const Arr<T>& gy, const Shape& ys, const Arr<T>& w, const Shape& ws, const Shape& xs,
                           const ConvGeom& g);
template <typename T>
Arr<T> conv_backward_weight(const Arr<T>& x, const Shape& xs, const Arr<T>& gy, const Shape& ys, const Shape& ws,
                            const ConvGeom& g);
}  // namespace detail

template <typename T>
Tensor<T> conv3d_input_grad(const Tensor<T>& gy, const Tensor<T>& w, const Shape& input_shape, const ConvGeom& geom);
template <typename T>
Tensor<T> conv3d_weight_grad(const Tensor<T>& x, const Tensor<T>& gy, const Shape& weight_shape, const ConvGeom& geom);

/// Bias-free cross-correlation, input N x Ci x D x H x W, weight Co x Ci x kd x kh x kw.
template <typename T>
Tensor<T> conv3d_nobias(const Tensor<T>& x, const Tensor<T>& w, const ConvGeom& geom) {
  const Shape ys = conv_output_shape(x.shape(), w.shape(), geom);
  return Tensor<T>::make_result(ys, detail::conv_forward(x.values(), x.shape(), w.values(), w.shape(), geom), "conv3d",
                                {x, w}, [x, w, geom](const Tensor<T>& g, const std::vector<bool>& needs) {
                                  return std::vector<Tensor<T>>{
                                      needs[0] ? conv3d_input_grad(g, w, x.shape(), geom) : Tensor<T>(),
                                      needs[1] ? conv3d_weight_grad(x, g, w.shape(), geom) : Tensor<T>()};
                                });
}

/// Adjoint of conv3d_nobias with respect to its input.
template <typename T>
Tensor<T> conv3d_input_grad(const Tensor<T>& gy, const Tensor<T>& w, const Shape& input_shape, const ConvGeom& geom) {
  return Tensor<T>::make_result(
      input_shape, detail::conv_backward_input(gy.values(), gy.shape(), w.values(), w.shape(), input_shape, geom),
      "conv3d_input_grad", {gy, w}, [gy, w, geom](const Tensor<T>& G, const std::vector<bool>& needs) {
        return std::vector<Tensor<T>>{needs[0] ? conv3d_nobias(G, w, geom) : Tensor<T>(),
                                      needs[1] ? conv3d_weight_grad(G, gy, w.shape(), geom) : Tensor<T>()};
      });
}

/// Adjoint of conv3d_nobias with respect to its weight.
template <typename T>
Tensor<T> conv3d_weight_grad(const Tensor<T>& x, const Tensor<T>& gy, const Shape& weight_shape,
                             const ConvGeom& geom) {
  return Tensor<T>::make_result(
      weight_shape, detail::conv_backward_weight(x.values(), x.shape(), gy.values(), gy.shape(), weight_shape, geom),
      "conv3d_weight_grad", {x, gy}, [x, gy, geom](const Tensor<T>& G, const std::vector<bool>& needs) {
        return std::vector<Tensor<T>>{needs[0] ? conv3d_input_grad(gy, G, x.shape(), geom) : Tensor<T>(),
                                      needs[1] ? conv3d_nobias(x, G, geom) : Tensor<T>()};
      });
}

/// Adds a per-channel bias [C] to an N x C x ... tensor.
template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& y, const Tensor<T>& bias) {
  if (bias.rank() != 1 || y.rank() < 2 || bias.dim(0) != y.dim(1))
    throw ValidationError("bias shape " + to_string(bias.shape()) + " does not match activations " +
                          to_string(y.shape()));
  Shape bs(y.rank(), 1);
  bs[1] = bias.dim(0);
  return add(y, broadcast_to(reshape(bias, bs), y.shape()));
}

/// Cross-correlation with zero padding; bias may be an undefined tensor.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, const ConvGeom& geom = {}) {
  Tensor<T> y = conv3d_nobias(x, w, geom);
  if (bias.defined()) y = add_channel_bias(y, bias);
  return y;
}

// ---- normalization and pooling ---------------------------------------------

enum class NormMode { batch, instance, layer };

/// Shape of the statistics tensor for a mode: batch -> [1,C,1,1,1],
/// instance -> [N,C,1,1,1], layer -> [N,1,1,1,1].
inline Shape norm_stat_shape(const Shape& x, NormMode mode) {
  Shape s(x.size(), 1);
  if (mode != NormMode::layer) s[1] = x[1];
  if (mode != NormMode::batch) s[0] = x[0];
  return s;
}

template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& scale_c, const Tensor<T>& shift_c) {
  Shape cs(x.rank(), 1);
  cs[1] = x.dim(1);
  if (scale_c.numel() != x.dim(1) || shift_c.numel() != x.dim(1))
    throw ValidationError("normalization affine parameters must have one entry per channel");
  Tensor<T> y = mul(x, broadcast_to(reshape(scale_c, cs), x.shape()));
  return add(y, broadcast_to(reshape(shift_c, cs), x.shape()));
}

/// (x - mean) / sqrt(var + eps) * scale + shift with population statistics
/// over the mode's reduction set; differentiable through the statistics.
template <typename T>
Tensor<T> normalize(const Tensor<T>& x, NormMode mode, const Tensor<T>& scale_c, const Tensor<T>& shift_c, T eps) {
  if (x.rank() < 3) throw ValidationError("normalize expects N x C x spatial activations");
  const Shape ss = norm_stat_shape(x.shape(), mode);
  const T count = static_cast<T>(x.numel() / numel(ss));
  if (count == T(1) && eps == T(0))
    throw ValidationError("normalize: reduction set of size 1 with eps = 0 divides by zero");
  const Tensor<T> mean = scale(sum_to(x, ss), T(1) / count);
  const Tensor<T> centered = sub(x, broadcast_to(mean, x.shape()));
  const Tensor<T> var = scale(sum_to(mul(centered, centered), ss), T(1) / count);
  const Tensor<T> inv_std = pow(add_scalar(var, eps), T(-0.5));
  return channel_affine(mul(centered, broadcast_to(inv_std, x.shape())), scale_c, shift_c);
}

/// Population mean and variance per channel over N, D, H, W (batch-norm statistics).
template <typename T>
std::pair<Arr<T>, Arr<T>> channel_moments(const Tensor<T>& x) {
  const Shape ss = norm_stat_shape(x.shape(), NormMode::batch);
  const T count = static_cast<T>(x.numel() / numel(ss));
  const Arr<T> mean = detail::sum_to_kernel<T>(x.values(), x.shape(), ss) / count;
  const Arr<T> centered = x.values() - detail::broadcast_kernel<T>(mean, ss, x.shape());
  const Arr<T> var = detail::sum_to_kernel<T>(centered * centered, x.shape(), ss) / count;
  return {mean, var};
}

/// Normalization with fixed (running) per-channel statistics.
template <typename T>
Tensor<T> normalize_fixed(const Tensor<T>& x, const Arr<T>& mean, const Arr<T>& var, const Tensor<T>& scale_c,
                          const Tensor<T>& shift_c, T eps) {
  Shape cs(x.rank(), 1);
  cs[1] = x.dim(1);
  const Tensor<T> m(cs, mean);
  const Tensor<T> inv(cs, (var + eps).rsqrt());
  const Tensor<T> centered = sub(x, broadcast_to(m, x.shape()));
  return channel_affine(mul(centered, broadcast_to(inv, x.shape())), scale_c, shift_c);
}

/// N x C x D x H x W -> N x C, mean over the spatial axes.
template <typename T>
Tensor<T> global_mean_pool(const Tensor<T>& x) {
  if (x.rank() != 5) throw ValidationError("global_mean_pool expects a 5-rank tensor");
  const Shape ss{x.dim(0), x.dim(1), 1, 1, 1};
  const T count = static_cast<T>(x.numel() / numel(ss));
  return reshape(scale(sum_to(x, ss), T(1) / count), {x.dim(0), x.dim(1)});
}

/// Mean voxelwise softmax cross-entropy. logits N x C x D x H x W, labels in
/// (n, d, h, w) order. Backward is computed numerically (no create_graph).
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 5) throw ValidationError("cross_entropy expects 5-rank logits");
  const int n = logits.dim(0), c = logits.dim(1);
  const std::int64_t inner = logits.numel() / (static_cast<std::int64_t>(n) * c);
  if (static_cast<std::int64_t>(labels.size()) != n * inner)
    throw ValidationError("cross_entropy: label count does not match logits");
  auto prob = std::make_shared<Arr<T>>(logits.numel());
  const auto& v = logits.values();
  T total = 0;
  for (int b = 0; b < n; ++b)
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = static_cast<std::int64_t>(b) * c * inner + i;
      T mx = v[base];
      for (int k = 1; k < c; ++k) mx = std::max(mx, v[base + k * inner]);
      T z = 0;
      for (int k = 0; k < c; ++k) z += std::exp(v[base + k * inner] - mx);
      const int label = labels[static_cast<std::size_t>(b * inner + i)];
      if (label < 0 || label >= c) throw ValidationError("cross_entropy: label out of range");
      total += std::log(z) + mx - v[base + label * inner];
      for (int k = 0; k < c; ++k) (*prob)[base + k * inner] = std::exp(v[base + k * inner] - mx) / z;
      (*prob)[base + label * inner] -= T(1);
    }
  const T count = static_cast<T>(n * inner);
  return Tensor<T>::make_result(
      {1}, Arr<T>::Constant(1, total / count), "cross_entropy", {logits},
      [prob, count, shape = logits.shape()](const Tensor<T>& g, const std::vector<bool>&) {
        return std::vector<Tensor<T>>{Tensor<T>(shape, (*prob) * (g.item() / count))};
      },
      false);
}

}  // namespace mrisr::ag
