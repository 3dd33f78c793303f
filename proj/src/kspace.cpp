#include "mrisr/kspace.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <unsupported/Eigen/FFT>

namespace mrisr {

namespace {

using cd = std::complex<double>;

// Applies a unitary 1D transform along `axis` to every line of the grid.
void transform_axis(std::vector<cd>& data, const Extent3& shape, int axis, bool inverse) {
  const int n = shape[axis];
  if (n == 1) return;  // identity; Eigen's kissfft backend faults on length 1
  const std::int64_t stride = axis == 2 ? 1 : (axis == 1 ? shape[2] : static_cast<std::int64_t>(shape[1]) * shape[2]);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::Unscaled);
  std::vector<cd> line(static_cast<std::size_t>(n)), out(static_cast<std::size_t>(n));

  const int outer_a = axis == 0 ? shape[1] : shape[0];
  const int outer_b = axis == 2 ? shape[1] : shape[2];
  for (int a = 0; a < outer_a; ++a)
    for (int b = 0; b < outer_b; ++b) {
      std::int64_t base = 0;
      if (axis == 0) base = static_cast<std::int64_t>(a) * shape[2] + b;
      if (axis == 1) base = static_cast<std::int64_t>(a) * shape[1] * shape[2] + b;
      if (axis == 2) base = (static_cast<std::int64_t>(a) * shape[1] + b) * shape[2];
      for (int i = 0; i < n; ++i) line[i] = data[base + i * stride];
      if (inverse)
        fft.inv(out.data(), line.data(), n);
      else
        fft.fwd(out.data(), line.data(), n);
      for (int i = 0; i < n; ++i) data[base + i * stride] = out[i] * scale;
    }
}

// Keep predicate for one axis. Integer form of -n/(2f) <= k < n/(2f).
bool in_band(int k, int n, int factor) { return -n <= 2 * factor * k && 2 * factor * k < n; }

std::vector<std::uint8_t> build_mask(const Extent3& shape, const DegradeSpec& spec, bool hermitian) {
  spec.validate(shape);
  std::array<std::vector<std::uint8_t>, 3> keep;
  for (int a = 0; a < 3; ++a) {
    keep[a].assign(static_cast<std::size_t>(shape[a]), 1);
    const bool selected = std::find(spec.axes.begin(), spec.axes.end(), a) != spec.axes.end();
    if (!selected || spec.factor == 1) continue;
    for (int j = 0; j < shape[a]; ++j) {
      const int k = centered_frequency(j, shape[a]);
      bool kept = in_band(k, shape[a], spec.factor);
      if (hermitian) kept = kept && in_band(-k, shape[a], spec.factor);
      keep[a][j] = kept ? 1 : 0;
    }
  }
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(voxel_count(shape)));
  std::size_t i = 0;
  for (int d = 0; d < shape[0]; ++d)
    for (int h = 0; h < shape[1]; ++h)
      for (int w = 0; w < shape[2]; ++w) mask[i++] = keep[0][d] & keep[1][h] & keep[2][w];
  return mask;
}

}  // namespace

void DegradeSpec::validate(const Extent3& shape) const {
  if (factor < 1) throw ValidationError("degrade factor must be >= 1");
  if (axes.empty() || axes.size() > 3) throw ValidationError("degrade needs 1 to 3 axes");
  std::set<int> seen;
  for (int a : axes) {
    if (a < 0 || a > 2) throw ValidationError("degrade axis out of range: " + std::to_string(a));
    if (!seen.insert(a).second) throw ValidationError("duplicate degrade axis");
    if (shape[a] < 2 * factor)
      throw ValidationError("axis " + std::to_string(a) + " of length " + std::to_string(shape[a]) +
                            " is too short for factor " + std::to_string(factor));
  }
}

int centered_frequency(int j, int n) { return j < n - n / 2 ? j : j - n; }

Spectrum fft3d(const Volume& vol) {
  Spectrum s;
  s.shape = vol.shape;
  s.coeffs.resize(static_cast<std::size_t>(vol.size()));
  for (std::int64_t i = 0; i < vol.size(); ++i) s.coeffs[i] = cd(vol.data[i], 0.0);
  for (int axis = 2; axis >= 0; --axis) transform_axis(s.coeffs, s.shape, axis, false);
  return s;
}

Volume ifft3d_real(const Spectrum& s, double* max_imag) {
  std::vector<cd> data = s.coeffs;
  for (int axis = 2; axis >= 0; --axis) transform_axis(data, s.shape, axis, true);
  Volume out(s.shape);
  double worst = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.data[static_cast<Eigen::Index>(i)] = static_cast<float>(data[i].real());
    worst = std::max(worst, std::abs(data[i].imag()));
  }
  if (max_imag) *max_imag = worst;
  return out;
}

std::vector<std::uint8_t> spectrum_mask(const Extent3& shape, const DegradeSpec& spec) {
  return build_mask(shape, spec, false);
}

std::vector<std::uint8_t> degrade_mask(const Extent3& shape, const DegradeSpec& spec) {
  return build_mask(shape, spec, true);
}

Volume degrade(const Volume& vol, const DegradeSpec& spec, DegradeDiagnostics* diag) {
  if (!vol.all_finite()) throw ValidationError("degrade input contains non-finite values");
  const auto mask = degrade_mask(vol.shape, spec);
  Spectrum s = fft3d(vol);
  double energy = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i])
      energy += std::norm(s.coeffs[i]);
    else
      s.coeffs[i] = 0.0;
  }
  double imag = 0.0;
  Volume out = ifft3d_real(s, &imag);
  out.spacing = vol.spacing;
  if (diag) {
    diag->max_imag_residue = imag;
    diag->retained_energy = energy;
  }
  return out;
}

}  // namespace mrisr
