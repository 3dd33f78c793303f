#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "mrisr/volume.hpp"

namespace mrisr {

/// Which axes (0 = D, 1 = H, 2 = W) lose bandwidth, and by how much.
struct DegradeSpec {
  std::vector<int> axes{1, 2};
  int factor = 2;

  /// Axes must be distinct, in [0, 3), 1 to 3 of them; each selected
  /// extent must be >= 2 * factor.
  void validate(const Extent3& shape) const;
};

/// Complex coefficients in FFT storage order (index 0 is DC, W fastest).
struct Spectrum {
  Extent3 shape{0, 0, 0};
  std::vector<std::complex<double>> coeffs;
};

/// Centered frequency of storage index j on an axis of length n:
/// j for j < n - n/2, otherwise j - n.
int centered_frequency(int j, int n);

/// Unitary 3D DFT (1/sqrt(N) per axis in both directions).
Spectrum fft3d(const Volume& vol);
/// Inverse unitary DFT. Returns the real part; if max_imag is given, the
/// largest discarded imaginary magnitude is stored there.
Volume ifft3d_real(const Spectrum& s, double* max_imag = nullptr);

/// Retained-coefficient mask in storage order. Along each selected axis of
/// length n the centered indices k with -n/(2f) <= k < n/(2f) are kept.
/// factor == 1 keeps everything.
std::vector<std::uint8_t> spectrum_mask(const Extent3& shape, const DegradeSpec& spec);

/// Hermitian closure of spectrum_mask: a coefficient survives only if both
/// it and its conjugate partner are retained, i.e. |k| < n/(2f) on every
/// selected axis. This is the mask degrade() applies; it differs from
/// spectrum_mask only at the unpaired -n/(2f) bin of even-length bands.
std::vector<std::uint8_t> degrade_mask(const Extent3& shape, const DegradeSpec& spec);

struct DegradeDiagnostics {
  double max_imag_residue = 0.0;
  double retained_energy = 0.0;  // sum |X_k|^2 over surviving coefficients
};

/// Zero-filled k-space truncation on the same grid.
Volume degrade(const Volume& vol, const DegradeSpec& spec, DegradeDiagnostics* diag = nullptr);

}  // namespace mrisr
