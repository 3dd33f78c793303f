#include <algorithm>
#include <cstring>

#include "mrisr/autograd/ops.hpp"

namespace mrisr::ag {

namespace {
thread_local bool g_grad_enabled = true;
thread_local std::int64_t g_live = 0;
thread_local std::int64_t g_peak = 0;
thread_local std::vector<std::uint8_t>* g_branch_recorder = nullptr;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

std::int64_t live_tensor_count() { return g_live; }
std::int64_t peak_tensor_count() { return g_peak; }
void reset_peak_tensor_count() { g_peak = g_live; }

namespace detail {
void on_tensor_created() {
  ++g_live;
  g_peak = std::max(g_peak, g_live);
}
void on_tensor_destroyed() { --g_live; }
std::vector<std::uint8_t>*& branch_recorder() { return g_branch_recorder; }
}  // namespace detail

Shape conv_output_shape(const Shape& x, const Shape& w, const ConvGeom& g) {
  auto mismatch = [&](const std::string& why) {
    return ValidationError("conv3d: " + why + " (input " + to_string(x) + ", weight " + to_string(w) + ")");
  };
  if (x.size() != 5 || w.size() != 5) throw mismatch("expected 5-rank input and weight");
  if (x[1] != w[1]) throw mismatch("input channels do not match weight");
  Shape out{x[0], w[0], 0, 0, 0};
  for (int a = 0; a < 3; ++a) {
    if (g.stride[a] < 1 || g.dilation[a] < 1 || g.pad[a] < 0) throw mismatch("invalid stride, dilation or padding");
    const int span = g.dilation[a] * (w[2 + a] - 1) + 1;
    const int num = x[2 + a] + 2 * g.pad[a] - span;
    if (num < 0) throw mismatch("kernel larger than padded input");
    out[2 + a] = num / g.stride[a] + 1;
  }
  return out;
}

namespace detail {
namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

struct ConvDims {
  int n, ci, d, h, w;    // input
  int co, kd, kh, kw;    // weight
  int od, oh, ow;        // output
  std::int64_t in_spatial, out_spatial, k;
  bool pointwise;        // 1x1x1, stride 1, no padding: columns are the input itself
};

ConvDims dims_of(const Shape& xs, const Shape& ws, const Shape& ys, const ConvGeom& g) {
  ConvDims c{};
  c.n = xs[0];
  c.ci = xs[1];
  c.d = xs[2];
  c.h = xs[3];
  c.w = xs[4];
  c.co = ws[0];
  c.kd = ws[2];
  c.kh = ws[3];
  c.kw = ws[4];
  c.od = ys[2];
  c.oh = ys[3];
  c.ow = ys[4];
  c.in_spatial = static_cast<std::int64_t>(c.d) * c.h * c.w;
  c.out_spatial = static_cast<std::int64_t>(c.od) * c.oh * c.ow;
  c.k = static_cast<std::int64_t>(c.ci) * c.kd * c.kh * c.kw;
  c.pointwise = c.kd == 1 && c.kh == 1 && c.kw == 1 && g.stride == std::array<int, 3>{1, 1, 1} &&
                g.pad == std::array<int, 3>{0, 0, 0};
  return c;
}

// Unfolds one sample into a column-major (out_spatial x k) matrix whose
// column index matches the weight layout (ci, a, b, c).
template <typename T>
void im2col(const T* x, const ConvDims& c, const ConvGeom& g, T* cols) {
  std::int64_t col = 0;
  for (int ci = 0; ci < c.ci; ++ci)
    for (int a = 0; a < c.kd; ++a)
      for (int b = 0; b < c.kh; ++b)
        for (int e = 0; e < c.kw; ++e, ++col) {
          T* dst = cols + col * c.out_spatial;
          for (int od = 0; od < c.od; ++od) {
            const int id = od * g.stride[0] - g.pad[0] + a * g.dilation[0];
            for (int oh = 0; oh < c.oh; ++oh) {
              T* row = dst + (static_cast<std::int64_t>(od) * c.oh + oh) * c.ow;
              const int ih = oh * g.stride[1] - g.pad[1] + b * g.dilation[1];
              if (id < 0 || id >= c.d || ih < 0 || ih >= c.h) {
                std::fill(row, row + c.ow, T(0));
                continue;
              }
              const T* src = x + ((static_cast<std::int64_t>(ci) * c.d + id) * c.h + ih) * c.w;
              const int off = -g.pad[2] + e * g.dilation[2];
              for (int ow = 0; ow < c.ow; ++ow) {
                const int iw = ow * g.stride[2] + off;
                row[ow] = (iw >= 0 && iw < c.w) ? src[iw] : T(0);
              }
            }
          }
        }
}

// Scatter-adds columns back onto one sample's input gradient.
template <typename T>
void col2im(const T* cols, const ConvDims& c, const ConvGeom& g, T* gx) {
  std::int64_t col = 0;
  for (int ci = 0; ci < c.ci; ++ci)
    for (int a = 0; a < c.kd; ++a)
      for (int b = 0; b < c.kh; ++b)
        for (int e = 0; e < c.kw; ++e, ++col) {
          const T* src = cols + col * c.out_spatial;
          for (int od = 0; od < c.od; ++od) {
            const int id = od * g.stride[0] - g.pad[0] + a * g.dilation[0];
            if (id < 0 || id >= c.d) continue;
            for (int oh = 0; oh < c.oh; ++oh) {
              const int ih = oh * g.stride[1] - g.pad[1] + b * g.dilation[1];
              if (ih < 0 || ih >= c.h) continue;
              const T* row = src + (static_cast<std::int64_t>(od) * c.oh + oh) * c.ow;
              T* dst = gx + ((static_cast<std::int64_t>(ci) * c.d + id) * c.h + ih) * c.w;
              const int off = -g.pad[2] + e * g.dilation[2];
              for (int ow = 0; ow < c.ow; ++ow) {
                const int iw = ow * g.stride[2] + off;
                if (iw >= 0 && iw < c.w) dst[iw] += row[ow];
              }
            }
          }
        }
}

// Stride-1 convolutions run as one small GEMM per kernel tap: the sample is
// zero padded into a flat (padded voxels x channels) buffer, and each tap
// reads a shifted view of it. Output positions live on the padded grid
// ("flat" layout); positions that wrap across a row or slice are garbage in
// the forward pass and are kept at zero for the gradient passes.
struct FlatGeom {
  int dp, hp, wp;
  std::int64_t padded;  // dp * hp * wp
  std::int64_t span;    // flat index of the last valid output + 1
  std::vector<std::int64_t> taps;
};

FlatGeom flat_of(const ConvDims& c, const ConvGeom& g) {
  FlatGeom f{};
  f.dp = c.d + 2 * g.pad[0];
  f.hp = c.h + 2 * g.pad[1];
  f.wp = c.w + 2 * g.pad[2];
  f.padded = static_cast<std::int64_t>(f.dp) * f.hp * f.wp;
  const std::int64_t plane = static_cast<std::int64_t>(f.hp) * f.wp;
  f.span = (c.od - 1) * plane + static_cast<std::int64_t>(c.oh - 1) * f.wp + c.ow;
  for (int a = 0; a < c.kd; ++a)
    for (int b = 0; b < c.kh; ++b)
      for (int e = 0; e < c.kw; ++e)
        f.taps.push_back(a * g.dilation[0] * plane + static_cast<std::int64_t>(b) * g.dilation[1] * f.wp +
                         e * g.dilation[2]);
  return f;
}

template <typename T>
void pad_sample(const T* x, const ConvDims& c, const ConvGeom& g, const FlatGeom& f, T* xpad) {
  std::fill(xpad, xpad + f.padded * c.ci, T(0));
  for (int ci = 0; ci < c.ci; ++ci)
    for (int d = 0; d < c.d; ++d)
      for (int h = 0; h < c.h; ++h) {
        const T* src = x + ((static_cast<std::int64_t>(ci) * c.d + d) * c.h + h) * c.w;
        T* dst = xpad + ci * f.padded + ((static_cast<std::int64_t>(d) + g.pad[0]) * f.hp + h + g.pad[1]) * f.wp + g.pad[2];
        std::copy(src, src + c.w, dst);
      }
}

template <typename T>
std::int64_t flat_index(const ConvDims& c, const FlatGeom& f, int od, int oh, int ow) {
  (void)c;
  return (static_cast<std::int64_t>(od) * f.hp + oh) * f.wp + ow;
}

/// Per-tap (ci x co) weight slices.
template <typename T>
std::vector<Mat<T>> tap_weights(const Arr<T>& w, const ConvDims& c) {
  const std::int64_t taps = static_cast<std::int64_t>(c.kd) * c.kh * c.kw;
  std::vector<Mat<T>> out(static_cast<std::size_t>(taps), Mat<T>(c.ci, c.co));
  for (int co = 0; co < c.co; ++co)
    for (int ci = 0; ci < c.ci; ++ci)
      for (std::int64_t t = 0; t < taps; ++t)
        out[static_cast<std::size_t>(t)](ci, co) = w[(static_cast<std::int64_t>(co) * c.ci + ci) * taps + t];
  return out;
}

template <typename T>
using ShiftedMap = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using MutShiftedMap = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;

/// Scatters one sample's N x C output-grid gradient into flat layout (zeros elsewhere).
template <typename T>
void to_flat(const T* gy, const ConvDims& c, const FlatGeom& f, Mat<T>& flat) {
  flat.setZero(f.span, c.co);
  for (int co = 0; co < c.co; ++co)
    for (int od = 0; od < c.od; ++od)
      for (int oh = 0; oh < c.oh; ++oh) {
        const T* src = gy + ((static_cast<std::int64_t>(co) * c.od + od) * c.oh + oh) * c.ow;
        std::copy(src, src + c.ow, flat.data() + co * f.span + flat_index<T>(c, f, od, oh, 0));
      }
}

}  // namespace

template <typename T>
Arr<T> conv_forward(const Arr<T>& x, const Shape& xs, const Arr<T>& w, const Shape& ws, const ConvGeom& g) {
  const Shape ys = conv_output_shape(xs, ws, g);
  const ConvDims c = dims_of(xs, ws, ys, g);
  Arr<T> y(numel(ys));
  const Eigen::Map<const Mat<T>> wm(w.data(), c.k, c.co);
  if (c.pointwise) {
    for (int n = 0; n < c.n; ++n) {
      Eigen::Map<Mat<T>> yn(y.data() + n * c.co * c.out_spatial, c.out_spatial, c.co);
      yn.noalias() = Eigen::Map<const Mat<T>>(x.data() + n * c.ci * c.in_spatial, c.in_spatial, c.ci) * wm;
    }
  } else if (g.stride == std::array<int, 3>{1, 1, 1}) {
    const FlatGeom f = flat_of(c, g);
    const auto wt = tap_weights(w, c);
    std::vector<T> xpad(static_cast<std::size_t>(f.padded * c.ci));
    Mat<T> yf(f.span, c.co);
    for (int n = 0; n < c.n; ++n) {
      pad_sample(x.data() + n * c.ci * c.in_spatial, c, g, f, xpad.data());
      yf.setZero();
      for (std::size_t t = 0; t < wt.size(); ++t)
        yf.noalias() += ShiftedMap<T>(xpad.data() + f.taps[t], f.span, c.ci, Eigen::OuterStride<>(f.padded)) * wt[t];
      T* yn = y.data() + n * c.co * c.out_spatial;
      for (int co = 0; co < c.co; ++co)
        for (int od = 0; od < c.od; ++od)
          for (int oh = 0; oh < c.oh; ++oh) {
            const T* src = yf.data() + co * f.span + flat_index<T>(c, f, od, oh, 0);
            std::copy(src, src + c.ow, yn + ((static_cast<std::int64_t>(co) * c.od + od) * c.oh + oh) * c.ow);
          }
    }
  } else {
    Mat<T> cols(c.out_spatial, c.k);
    for (int n = 0; n < c.n; ++n) {
      Eigen::Map<Mat<T>> yn(y.data() + n * c.co * c.out_spatial, c.out_spatial, c.co);
      im2col(x.data() + n * c.ci * c.in_spatial, c, g, cols.data());
      yn.noalias() = cols * wm;
    }
  }
  return y;
}

template <typename T>
Arr<T> conv_backward_input(const Arr<T>& gy, const Shape& ys, const Arr<T>& w, const Shape& ws, const Shape& xs,
                           const ConvGeom& g) {
  if (conv_output_shape(xs, ws, g) != ys) throw ValidationError("conv3d_input_grad: gradient shape mismatch");
  const ConvDims c = dims_of(xs, ws, ys, g);
  Arr<T> gx = Arr<T>::Zero(numel(xs));
  const Eigen::Map<const Mat<T>> wm(w.data(), c.k, c.co);
  if (c.pointwise) {
    for (int n = 0; n < c.n; ++n) {
      const Eigen::Map<const Mat<T>> gyn(gy.data() + n * c.co * c.out_spatial, c.out_spatial, c.co);
      Eigen::Map<Mat<T>>(gx.data() + n * c.ci * c.in_spatial, c.in_spatial, c.ci).noalias() = gyn * wm.transpose();
    }
  } else if (g.stride == std::array<int, 3>{1, 1, 1}) {
    const FlatGeom f = flat_of(c, g);
    const auto wt = tap_weights(w, c);
    std::vector<T> gpad(static_cast<std::size_t>(f.padded * c.ci));
    Mat<T> gyf;
    for (int n = 0; n < c.n; ++n) {
      to_flat(gy.data() + n * c.co * c.out_spatial, c, f, gyf);
      std::fill(gpad.begin(), gpad.end(), T(0));
      for (std::size_t t = 0; t < wt.size(); ++t)
        MutShiftedMap<T>(gpad.data() + f.taps[t], f.span, c.ci, Eigen::OuterStride<>(f.padded)).noalias() +=
            gyf * wt[t].transpose();
      T* gxn = gx.data() + n * c.ci * c.in_spatial;
      for (int ci = 0; ci < c.ci; ++ci)
        for (int d = 0; d < c.d; ++d)
          for (int h = 0; h < c.h; ++h) {
            const T* src = gpad.data() + ci * f.padded +
                           ((static_cast<std::int64_t>(d) + g.pad[0]) * f.hp + h + g.pad[1]) * f.wp + g.pad[2];
            std::copy(src, src + c.w, gxn + ((static_cast<std::int64_t>(ci) * c.d + d) * c.h + h) * c.w);
          }
    }
  } else {
    Mat<T> cols(c.out_spatial, c.k);
    for (int n = 0; n < c.n; ++n) {
      const Eigen::Map<const Mat<T>> gyn(gy.data() + n * c.co * c.out_spatial, c.out_spatial, c.co);
      cols.noalias() = gyn * wm.transpose();
      col2im(cols.data(), c, g, gx.data() + n * c.ci * c.in_spatial);
    }
  }
  return gx;
}

template <typename T>
Arr<T> conv_backward_weight(const Arr<T>& x, const Shape& xs, const Arr<T>& gy, const Shape& ys, const Shape& ws,
                            const ConvGeom& g) {
  if (conv_output_shape(xs, ws, g) != ys) throw ValidationError("conv3d_weight_grad: gradient shape mismatch");
  const ConvDims c = dims_of(xs, ws, ys, g);
  Arr<T> gw = Arr<T>::Zero(numel(ws));
  Eigen::Map<Mat<T>> gwm(gw.data(), c.k, c.co);
  if (c.pointwise) {
    for (int n = 0; n < c.n; ++n) {
      const Eigen::Map<const Mat<T>> gyn(gy.data() + n * c.co * c.out_spatial, c.out_spatial, c.co);
      gwm.noalias() += Eigen::Map<const Mat<T>>(x.data() + n * c.ci * c.in_spatial, c.in_spatial, c.ci).transpose() * gyn;
    }
  } else if (g.stride == std::array<int, 3>{1, 1, 1}) {
    const FlatGeom f = flat_of(c, g);
    const std::size_t taps = f.taps.size();
    std::vector<Mat<T>> gt(taps, Mat<T>::Zero(c.ci, c.co));
    std::vector<T> xpad(static_cast<std::size_t>(f.padded * c.ci));
    Mat<T> gyf;
    for (int n = 0; n < c.n; ++n) {
      pad_sample(x.data() + n * c.ci * c.in_spatial, c, g, f, xpad.data());
      to_flat(gy.data() + n * c.co * c.out_spatial, c, f, gyf);
      for (std::size_t t = 0; t < taps; ++t)
        gt[t].noalias() +=
            ShiftedMap<T>(xpad.data() + f.taps[t], f.span, c.ci, Eigen::OuterStride<>(f.padded)).transpose() * gyf;
    }
    for (int co = 0; co < c.co; ++co)
      for (int ci = 0; ci < c.ci; ++ci)
        for (std::size_t t = 0; t < taps; ++t)
          gw[(static_cast<std::int64_t>(co) * c.ci + ci) * static_cast<std::int64_t>(taps) + static_cast<std::int64_t>(t)] =
              gt[t](ci, co);
  } else {
    Mat<T> cols(c.out_spatial, c.k);
    for (int n = 0; n < c.n; ++n) {
      const Eigen::Map<const Mat<T>> gyn(gy.data() + n * c.co * c.out_spatial, c.out_spatial, c.co);
      im2col(x.data() + n * c.ci * c.in_spatial, c, g, cols.data());
      gwm.noalias() += cols.transpose() * gyn;
    }
  }
  return gw;
}

#define MRISR_INSTANTIATE_CONV(T)                                                                               \
  template Arr<T> conv_forward<T>(const Arr<T>&, const Shape&, const Arr<T>&, const Shape&, const ConvGeom&);   \
  template Arr<T> conv_backward_input<T>(const Arr<T>&, const Shape&, const Arr<T>&, const Shape&, const Shape&, \
                                         const ConvGeom&);                                                      \
  template Arr<T> conv_backward_weight<T>(const Arr<T>&, const Shape&, const Arr<T>&, const Shape&, const Shape&, \
                                          const ConvGeom&);

MRISR_INSTANTIATE_CONV(float)
MRISR_INSTANTIATE_CONV(double)
#undef MRISR_INSTANTIATE_CONV

}  // namespace detail
}  // namespace mrisr::ag
