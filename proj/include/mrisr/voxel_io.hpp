#pragma once

#include <filesystem>
#include <string>

#include "mrisr/volume.hpp"

namespace mrisr {

// On-disk layout for a volume stored at base path P:
//   P.meta        text sidecar, one key=value per line:
//                   version=1
//                   shape=D,H,W
//                   spacing=sd,sh,sw
//                   dtype=f32le
//   P.raw         D*H*W little-endian float32, W fastest
//   P.labels.raw  optional, D*H*W little-endian uint16 (shape from P.meta)

inline constexpr const char* kVolumeFormatVersion = "1";
inline constexpr const char* kVolumeDtype = "f32le";

struct VolumeHeader {
  Extent3 shape{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
};

/// Strips a trailing ".meta", ".raw" or ".labels.raw" so CLI users may pass any of them.
std::filesystem::path volume_base_path(const std::filesystem::path& p);

void write_volume(const Volume& vol, const std::filesystem::path& base);
Volume read_volume(const std::filesystem::path& base);
VolumeHeader read_volume_header(const std::filesystem::path& base);

void write_labels(const LabelVolume& labels, const std::filesystem::path& base);
/// Reads P.labels.raw, taking the grid shape from P.meta.
LabelVolume read_labels(const std::filesystem::path& base, int n_classes);

}  // namespace mrisr
