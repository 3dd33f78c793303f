#include "mrisr/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "mrisr/rng.hpp"

namespace mrisr {

namespace {

constexpr int kOctaves = 4;
constexpr double kGain = 0.5;
constexpr double kBasePeriod = 16.0;

// The 12 edge midpoints of the unit cube.
constexpr std::array<std::array<double, 3>, 12> kGradients{{
    {1, 1, 0}, {-1, 1, 0}, {1, -1, 0}, {-1, -1, 0},
    {1, 0, 1}, {-1, 0, 1}, {1, 0, -1}, {-1, 0, -1},
    {0, 1, 1}, {0, -1, 1}, {0, 1, -1}, {0, -1, -1},
}};

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }
double lerp(double a, double b, double t) { return a + t * (b - a); }

const std::array<double, 3>& corner_gradient(std::uint64_t seed, int octave, std::int64_t i, std::int64_t j,
                                             std::int64_t k) {
  std::uint64_t h = mix64(seed ^ static_cast<std::uint64_t>(octave) * 0x632BE59BD9B4E019ull);
  h = mix64(h ^ static_cast<std::uint64_t>(i) * 0x9E3779B97F4A7C15ull);
  h = mix64(h ^ static_cast<std::uint64_t>(j) * 0xC2B2AE3D27D4EB4Full);
  h = mix64(h ^ static_cast<std::uint64_t>(k) * 0x165667B19E3779F9ull);
  return kGradients[h % 12];
}

double gradient_noise(std::uint64_t seed, int octave, double x, double y, double z) {
  const double fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy),
             iz = static_cast<std::int64_t>(fz);
  const double rx = x - fx, ry = y - fy, rz = z - fz;

  double corner[2][2][2];
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c) {
        const auto& g = corner_gradient(seed, octave, ix + a, iy + b, iz + c);
        corner[a][b][c] = g[0] * (rx - a) + g[1] * (ry - b) + g[2] * (rz - c);
      }
  const double u = fade(rx), v = fade(ry), w = fade(rz);
  const double x00 = lerp(corner[0][0][0], corner[1][0][0], u);
  const double x10 = lerp(corner[0][1][0], corner[1][1][0], u);
  const double x01 = lerp(corner[0][0][1], corner[1][0][1], u);
  const double x11 = lerp(corner[0][1][1], corner[1][1][1], u);
  return lerp(lerp(x00, x10, v), lerp(x01, x11, v), w);
}

// Uniformly distributed rotation from a normalized quaternion; avoids libm
// transcendentals so the layout is reproducible across platforms.
Eigen::Matrix3d random_rotation(Rng& rng) {
  double q[4];
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (double& c : q) {
      c = rng.uniform(-1.0, 1.0);
      n2 += c * c;
    }
  } while (n2 > 1.0 || n2 < 1e-4);
  const double n = std::sqrt(n2);
  const double w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
       2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
       2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y);
  return r;
}

}  // namespace

void PhantomSpec::validate() const {
  if (n_tissues < 2) throw ValidationError("phantom needs n_tissues >= 2");
  if (n_blobs < 1) throw ValidationError("phantom needs n_blobs >= 1");
  if (!(texture_amplitude >= 0.0 && texture_amplitude <= 0.5))
    throw ValidationError("texture_amplitude must lie in [0, 0.5]");
  if (n_tissues > 65535) throw ValidationError("too many tissue classes for 16-bit labels");
  for (int s : shape)
    if (s < 16) throw ValidationError("phantom extents must be >= 16");
}

bool Ellipsoid::contains(const Eigen::Vector3d& p) const {
  const Eigen::Vector3d q = rotation.transpose() * (p - center);
  double acc = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double t = q[i] / radii[i];
    acc += t * t;
  }
  return acc <= 1.0;
}

double tissue_level(int tissue, int n_tissues) {
  return 0.1 + 0.8 * static_cast<double>(tissue) / static_cast<double>(n_tissues - 1);
}

std::vector<Ellipsoid> phantom_layout(const PhantomSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "phantom-layout"));
  std::vector<Ellipsoid> blobs;
  blobs.reserve(static_cast<std::size_t>(spec.n_blobs));
  for (int i = 0; i < spec.n_blobs; ++i) {
    Ellipsoid e;
    for (int a = 0; a < 3; ++a) {
      e.center[a] = rng.uniform(0.25, 0.75) * spec.shape[a];
      e.radii[a] = rng.uniform(0.12, 0.32) * spec.shape[a];
    }
    e.rotation = random_rotation(rng);
    e.tissue = 1 + i % (spec.n_tissues - 1);
    blobs.push_back(e);
  }
  return blobs;
}

double texture_noise(std::uint64_t seed, double d, double h, double w) {
  double sum = 0.0, amp = 1.0, norm = 0.0, freq = 1.0 / kBasePeriod;
  for (int o = 0; o < kOctaves; ++o) {
    sum += amp * gradient_noise(seed, o, d * freq, h * freq, w * freq);
    norm += amp;
    amp *= kGain;
    freq *= 2.0;
  }
  return sum / norm;
}

std::pair<Volume, LabelVolume> gen_phantom(const PhantomSpec& spec) {
  spec.validate();
  const auto blobs = phantom_layout(spec);
  const std::uint64_t noise_seed = derive_seed(spec.seed, "phantom-texture");

  Volume vol(spec.shape);
  LabelVolume labels(spec.shape, spec.n_tissues);
  for (int d = 0; d < spec.shape[0]; ++d)
    for (int h = 0; h < spec.shape[1]; ++h)
      for (int w = 0; w < spec.shape[2]; ++w) {
        const Eigen::Vector3d p(d, h, w);
        int tissue = 0;
        for (const auto& b : blobs)
          if (b.contains(p)) tissue = b.tissue;
        double value = tissue_level(tissue, spec.n_tissues);
        if (spec.texture_amplitude > 0.0) value += spec.texture_amplitude * texture_noise(noise_seed, d, h, w);
        vol(d, h, w) = static_cast<float>(std::clamp(value, 0.0, 1.0));
        labels(d, h, w) = static_cast<std::uint16_t>(tissue);
      }
  return {std::move(vol), std::move(labels)};
}

}  // namespace mrisr
