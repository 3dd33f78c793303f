#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "mrisr/errors.hpp"

namespace mrisr {

/// (D, H, W) extents. W varies fastest in memory.
using Extent3 = std::array<int, 3>;

inline std::int64_t voxel_count(const Extent3& e) {
  return static_cast<std::int64_t>(e[0]) * e[1] * e[2];
}

/// 3D scalar intensity grid, float32, W-fastest then H then D.
struct Volume {
  Extent3 shape{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  Eigen::ArrayXf data;

  Volume() = default;
  explicit Volume(const Extent3& s, const std::array<double, 3>& sp = {1.0, 1.0, 1.0})
      : shape(s), spacing(sp), data(Eigen::ArrayXf::Zero(voxel_count(s))) {
    for (int v : s)
      if (v <= 0) throw ValidationError("volume extents must be positive");
  }

  std::int64_t size() const { return voxel_count(shape); }
  std::int64_t index(int d, int h, int w) const {
    return (static_cast<std::int64_t>(d) * shape[1] + h) * shape[2] + w;
  }
  float& operator()(int d, int h, int w) { return data[index(d, h, w)]; }
  float operator()(int d, int h, int w) const { return data[index(d, h, w)]; }

  bool all_finite() const { return data.allFinite(); }
};

/// Integer tissue label grid aligned with a Volume.
struct LabelVolume {
  Extent3 shape{0, 0, 0};
  std::vector<std::uint16_t> labels;
  int n_classes = 2;

  LabelVolume() = default;
  LabelVolume(const Extent3& s, int classes)
      : shape(s), labels(static_cast<std::size_t>(voxel_count(s)), 0), n_classes(classes) {}

  std::int64_t size() const { return voxel_count(shape); }
  std::int64_t index(int d, int h, int w) const {
    return (static_cast<std::int64_t>(d) * shape[1] + h) * shape[2] + w;
  }
  std::uint16_t& operator()(int d, int h, int w) { return labels[index(d, h, w)]; }
  std::uint16_t operator()(int d, int h, int w) const { return labels[index(d, h, w)]; }

  /// Throws ValidationError if any label is >= n_classes.
  void validate() const;
};

/// Min-max rescale to [0, 1]. Constant volumes map to zeros.
Volume normalize_minmax(const Volume& v);

/// Bitwise equality of shape and payload (spacing compared exactly too).
bool bitwise_equal(const Volume& a, const Volume& b);

}  // namespace mrisr
