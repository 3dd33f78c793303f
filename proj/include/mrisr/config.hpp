#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mrisr/kspace.hpp"
#include "mrisr/nets.hpp"
#include "mrisr/training.hpp"

namespace mrisr {

/// Everything a training run reads from its key=value config file.
struct RunConfig {
  train::TrainConfig train;
  nets::RRDGConfig generator;
  nets::DiscConfig discriminator;
  nets::ParcelConfig parcel;
  train::ParcelTrainConfig parcel_train;
  DegradeSpec degrade;  // used when a training volume has no stored low-resolution partner
};

/// Line-oriented key=value text; '#' starts a comment. Unknown or repeated
/// keys are validation errors. Recognized keys:
///   training:      lambda_D lambda_g n_critic gp_form gamma_per lr beta1 beta2 eps
///                  disc_lr batch_size steps seed patch checkpointing bn_momentum
///   generator:     n_c n_f k beta layers_per_dense_block norm leaky_slope
///   discriminator: disc_base_channels disc_n_plain_blocks disc_norm disc_leaky_slope
///   parcellation:  parcel_classes parcel_channels parcel_steps parcel_lr
///                  parcel_batch_size parcel_patch parcel_seed
///   degradation:   degrade_axes degrade_factor
RunConfig parse_config(const std::string& text, const std::string& source = "config");
RunConfig load_config(const std::filesystem::path& path);

/// "D,H,W" -> extents.
Extent3 parse_extent(const std::string& s);
/// "h,w" or "1,2" -> axis indices (d/h/w = 0/1/2).
std::vector<int> parse_axes(const std::string& s);

}  // namespace mrisr
