#pragma once

// Shared test helpers: finite-difference gradient checking and brute-force
// reference implementations that deliberately share no code with the library.

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "mrisr/autograd.hpp"
#include "mrisr/rng.hpp"
#include "mrisr/volume.hpp"

namespace testsupport {

using mrisr::ag::Shape;
using mrisr::ag::Tensor;
using TD = Tensor<double>;

inline TD random_tensor(mrisr::Rng& rng, const Shape& s, double scale = 1.0, bool requires_grad = true) {
  Eigen::ArrayXd v(mrisr::ag::numel(s));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = scale * rng.uniform(-1.0, 1.0);
  return TD(s, std::move(v), requires_grad);
}

struct GradCheck {
  double max_rel_error = 0.0;  // ||a - n||_inf / max(||a||_inf, ||n||_inf, floor) over all inputs
  int skipped = 0;              // coordinates whose perturbation crosses a kink
  int checked = 0;
  std::string worst;
};

/// Central-difference check of the gradient with respect to every input,
/// taken together as one vector (norm-wise relative error). `f` maps the inputs
/// to any tensor; the checked scalar is sum(f(x) * r) for a fixed random r.
inline GradCheck grad_check(const std::function<TD(const std::vector<TD>&)>& f, const std::vector<TD>& inputs,
                            std::uint64_t seed, double h = 1e-3, double floor = 1e-8) {
  using namespace mrisr::ag;
  mrisr::Rng rng(seed);
  std::vector<std::uint8_t> base_branches;
  detail::branch_recorder() = &base_branches;
  const TD out = f(inputs);
  detail::branch_recorder() = nullptr;
  const TD r = random_tensor(rng, out.shape(), 1.0, false);
  const TD loss = sum_all(mul(out, r));
  std::vector<TD> wrt;
  for (const auto& x : inputs)
    if (x.requires_grad()) wrt.push_back(x);
  const auto analytic = grad<double>({loss}, wrt);

  GradCheck res;
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    const TD& x = wrt[k];
    auto& vals = const_cast<TD&>(x).mutable_values();
    for (Eigen::Index i = 0; i < x.numel(); ++i) {
      const double orig = vals[i];
      double fp, fm;
      std::vector<std::uint8_t> bp, bm;
      {
        NoGradGuard ng;
        vals[i] = orig + h;
        detail::branch_recorder() = &bp;
        fp = (f(inputs).values() * r.values()).sum();
        vals[i] = orig - h;
        detail::branch_recorder() = &bm;
        fm = (f(inputs).values() * r.values()).sum();
        detail::branch_recorder() = nullptr;
        vals[i] = orig;
      }
      if (bp != base_branches || bm != base_branches) {
        ++res.skipped;
        continue;
      }
      const double numeric = (fp - fm) / (2 * h);
      const double a = analytic[k].values()[i];
      if (std::abs(a - numeric) > diff) {
        diff = std::abs(a - numeric);
        res.worst = "input " + std::to_string(k) + " element " + std::to_string(i);
      }
      na = std::max(na, std::abs(a));
      nn = std::max(nn, std::abs(numeric));
      ++res.checked;
    }
  }
  res.max_rel_error = diff / std::max({na, nn, floor});
  return res;
}

/// Straightforward 7-loop cross-correlation with zero padding.
template <typename T>
Eigen::Array<T, Eigen::Dynamic, 1> naive_conv3d(const Eigen::Array<T, Eigen::Dynamic, 1>& x, const Shape& xs,
                                                const Eigen::Array<T, Eigen::Dynamic, 1>& w, const Shape& ws,
                                                std::array<int, 3> stride, std::array<int, 3> pad,
                                                std::array<int, 3> dil, Shape* out_shape = nullptr) {
  const int n = xs[0], ci = xs[1], co = ws[0];
  int o[3];
  for (int a = 0; a < 3; ++a) o[a] = (xs[2 + a] + 2 * pad[a] - dil[a] * (ws[2 + a] - 1) - 1) / stride[a] + 1;
  Eigen::Array<T, Eigen::Dynamic, 1> y = Eigen::Array<T, Eigen::Dynamic, 1>::Zero(n * co * o[0] * o[1] * o[2]);
  for (int b = 0; b < n; ++b)
    for (int c = 0; c < co; ++c)
      for (int z = 0; z < o[0]; ++z)
        for (int yy = 0; yy < o[1]; ++yy)
          for (int xx = 0; xx < o[2]; ++xx) {
            T acc = 0;
            for (int k = 0; k < ci; ++k)
              for (int p = 0; p < ws[2]; ++p)
                for (int q = 0; q < ws[3]; ++q)
                  for (int s = 0; s < ws[4]; ++s) {
                    const int iz = z * stride[0] - pad[0] + p * dil[0];
                    const int iy = yy * stride[1] - pad[1] + q * dil[1];
                    const int ix = xx * stride[2] - pad[2] + s * dil[2];
                    if (iz < 0 || iz >= xs[2] || iy < 0 || iy >= xs[3] || ix < 0 || ix >= xs[4]) continue;
                    acc += w[(((c * ci + k) * ws[2] + p) * ws[3] + q) * ws[4] + s] *
                           x[(((b * ci + k) * xs[2] + iz) * xs[3] + iy) * xs[4] + ix];
                  }
            y[(((b * co + c) * o[0] + z) * o[1] + yy) * o[2] + xx] = acc;
          }
  if (out_shape) *out_shape = {n, co, o[0], o[1], o[2]};
  return y;
}

/// Direct (non-fast) 3D DFT, unitary, computed axis by axis with explicit sums.
inline std::vector<std::complex<double>> direct_dft3(const mrisr::Volume& v) {
  const auto [nd, nh, nw] = v.shape;
  std::vector<std::complex<double>> a(static_cast<std::size_t>(v.size()));
  for (std::int64_t i = 0; i < v.size(); ++i) a[static_cast<std::size_t>(i)] = v.data[i];
  auto pass = [&](int n, auto idx) {
    std::vector<std::complex<double>> line(static_cast<std::size_t>(n)), out(line);
    const int other = static_cast<int>(v.size() / n);
    for (int o = 0; o < other; ++o) {
      for (int j = 0; j < n; ++j) line[static_cast<std::size_t>(j)] = a[idx(o, j)];
      for (int k = 0; k < n; ++k) {
        std::complex<double> s = 0;
        for (int j = 0; j < n; ++j)
          s += line[static_cast<std::size_t>(j)] *
               std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(j) * k / n);
        out[static_cast<std::size_t>(k)] = s / std::sqrt(static_cast<double>(n));
      }
      for (int k = 0; k < n; ++k) a[idx(o, k)] = out[static_cast<std::size_t>(k)];
    }
  };
  pass(nw, [&](int o, int j) { return static_cast<std::size_t>(o) * nw + j; });
  pass(nh, [&](int o, int j) {
    const int d = o / nw, w = o % nw;
    return (static_cast<std::size_t>(d) * nh + j) * nw + w;
  });
  pass(nd, [&](int o, int j) { return static_cast<std::size_t>(j) * nh * nw + o; });
  return a;
}

/// SSIM by explicit 3D window sums at every valid position.
inline double brute_ssim(const mrisr::Volume& a, const mrisr::Volume& b, int window, double sigma, double k1,
                         double k2, double range) {
  const int r = window / 2;
  std::vector<double> g1(static_cast<std::size_t>(window));
  double s = 0;
  for (int i = 0; i < window; ++i) s += g1[static_cast<std::size_t>(i)] = std::exp(-(i - r) * (i - r) / (2 * sigma * sigma));
  const double c1 = (k1 * range) * (k1 * range), c2 = (k2 * range) * (k2 * range);
  double total = 0;
  int count = 0;
  for (int z = 0; z + window <= a.shape[0]; ++z)
    for (int y = 0; y + window <= a.shape[1]; ++y)
      for (int x = 0; x + window <= a.shape[2]; ++x) {
        double ma = 0, mb = 0, wsum = 0;
        for (int p = 0; p < window; ++p)
          for (int q = 0; q < window; ++q)
            for (int t = 0; t < window; ++t) {
              const double w = g1[static_cast<std::size_t>(p)] * g1[static_cast<std::size_t>(q)] * g1[static_cast<std::size_t>(t)];
              wsum += w;
              ma += w * a(z + p, y + q, x + t);
              mb += w * b(z + p, y + q, x + t);
            }
        ma /= wsum;
        mb /= wsum;
        double va = 0, vb = 0, cov = 0;
        for (int p = 0; p < window; ++p)
          for (int q = 0; q < window; ++q)
            for (int t = 0; t < window; ++t) {
              const double w = g1[static_cast<std::size_t>(p)] * g1[static_cast<std::size_t>(q)] * g1[static_cast<std::size_t>(t)] / wsum;
              const double da = a(z + p, y + q, x + t) - ma, db = b(z + p, y + q, x + t) - mb;
              va += w * da * da;
              vb += w * db * db;
              cov += w * da * db;
            }
        total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  return total / count;
}

inline mrisr::Volume random_volume(mrisr::Rng& rng, const mrisr::Extent3& s, double lo = 0.0, double hi = 1.0) {
  mrisr::Volume v(s);
  for (std::int64_t i = 0; i < v.size(); ++i) v.data[i] = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

}  // namespace testsupport
