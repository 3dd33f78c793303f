#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mrisr/volume.hpp"

namespace mrisr {

/// Parameters of a synthetic head-like phantom.
struct PhantomSpec {
  std::uint64_t seed = 0;
  Extent3 shape{32, 32, 32};
  int n_tissues = 4;               // includes background class 0
  double texture_amplitude = 0.05;  // in [0, 0.5]
  int n_blobs = 6;

  void validate() const;
};

/// One painted ellipsoid. Blobs are painted in order, later ones overwrite.
struct Ellipsoid {
  Eigen::Vector3d center;   // voxel coordinates (d, h, w)
  Eigen::Vector3d radii;    // semi-axes in voxels, in the rotated frame
  Eigen::Matrix3d rotation;  // columns are the ellipsoid axes
  int tissue = 1;

  bool contains(const Eigen::Vector3d& p) const;
};

/// Base intensity of a tissue class before texture is added.
double tissue_level(int tissue, int n_tissues);

/// The blob layout drawn from spec.seed.
std::vector<Ellipsoid> phantom_layout(const PhantomSpec& spec);

/// Multi-octave lattice gradient noise in roughly [-1, 1]. Four octaves,
/// gain 0.5, lacunarity 2, base period 16 voxels. Corner gradients are
/// chosen from the 12 cube-edge directions by a splitmix64 hash of
/// (lattice corner, octave, seed); interpolation uses the quintic fade.
double texture_noise(std::uint64_t seed, double d, double h, double w);

/// Deterministic phantom volume and its tissue labels.
std::pair<Volume, LabelVolume> gen_phantom(const PhantomSpec& spec);

}  // namespace mrisr
