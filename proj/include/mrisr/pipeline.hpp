#pragma once

#include <vector>

#include "mrisr/autograd/paramset.hpp"
#include "mrisr/volume.hpp"

namespace mrisr::pipeline {

struct PatchOrigin {
  Extent3 input;   // in the padded volume
  Extent3 output;  // in the original volume
};

/// Tiling of a volume into overlapping input patches whose centre crops
/// (patch - 2*crop per axis) cover the volume. The volume is reflection
/// padded by `crop` on every face first.
struct PatchPlan {
  Extent3 volume_shape{0, 0, 0};
  Extent3 patch_shape{0, 0, 0};
  int crop = 0;
  Extent3 pad{0, 0, 0};
  Extent3 tiles_per_axis{0, 0, 0};
  std::vector<PatchOrigin> grid;  // z-major: D outermost, W innermost

  Extent3 tile_shape() const {
    return {patch_shape[0] - 2 * crop, patch_shape[1] - 2 * crop, patch_shape[2] - 2 * crop};
  }
};

/// Per axis the tile origins are 0, t, 2t, ...; the last one is moved back to
/// n - t so it ends flush with the volume.
PatchPlan plan_patches(const Extent3& volume_shape, const Extent3& patch_shape, int crop);

/// Mirror padding without edge repetition (index -1 maps to 1). Requires pad < extent.
Volume reflect_pad(const Volume& vol, const Extent3& pad);

/// Input patches in plan order.
std::vector<Volume> extract(const Volume& vol, const PatchPlan& plan);

/// Centre crop of one patch (crop voxels removed on every face).
Volume crop_center(const Volume& patch, int crop);

/// Writes output tiles in plan order; later tiles overwrite earlier ones.
Volume stitch(const std::vector<Volume>& tiles, const PatchPlan& plan,
              const std::array<double, 3>& spacing = {1.0, 1.0, 1.0});

/// How many tiles write each voxel.
std::vector<int> coverage(const PatchPlan& plan);

struct SrConfig {
  Extent3 patch{64, 40, 64};
  int crop = 3;
};

/// plan -> extract -> generator per patch -> crop -> stitch.
Volume super_resolve(const Volume& vol, const ag::ParamSet<float>& generator, const SrConfig& cfg);

}  // namespace mrisr::pipeline
