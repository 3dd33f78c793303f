#pragma once

#include <array>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mrisr/autograd/paramset.hpp"
#include "mrisr/volume.hpp"

namespace mrisr::metrics {

/// Returned by psnr() for bit-identical inputs.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10 log10(range^2 / MSE).
double psnr(const Volume& a, const Volume& b, double data_range = 1.0);

struct SsimOptions {
  int window = 7;  // odd, Gaussian support per axis
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

/// Normalized 1D Gaussian weights of the SSIM window (separable in 3D).
std::vector<double> ssim_window(const SsimOptions& o);

/// Mean local SSIM over window positions that fit entirely inside the volume.
double ssim3d(const Volume& a, const Volume& b, const SsimOptions& o = {});

/// RMSE(a, reference) / (max(reference) - min(reference)).
double nrmse(const Volume& a, const Volume& reference);

inline constexpr int kFidelityTaps = 6;
using TapDistances = std::array<double, kFidelityTaps>;

struct FidelityWeights {
  TapDistances w{1, 1, 1, 1, 1, 1};

  void write(const std::filesystem::path& path) const;
  static FidelityWeights read(const std::filesystem::path& path);
};

inline constexpr double kFidelityFloor = 1e-8;

/// Mean absolute difference of each parcellation tap between sr and hr.
TapDistances tap_distances(const Volume& sr, const Volume& hr, const ag::ParamSet<float>& parcel);

/// w_f = 1 / max(mean_pairs d_f, floor). Taps hitting the floor are named in `warnings`.
FidelityWeights weights_from_distances(const std::vector<TapDistances>& distances,
                                       std::vector<std::string>* warnings = nullptr);

FidelityWeights calibrate_fidelity_weights(const ag::ParamSet<float>& parcel,
                                           const std::vector<std::pair<Volume, Volume>>& pairs,
                                           std::vector<std::string>* warnings = nullptr);

/// sum_f w_f * d_f
double weighted_fidelity(const TapDistances& d, const FidelityWeights& w);

/// Weighted L1 distance between parcellation features of sr and hr. Both
/// volumes are expected in [0, 1]; no normalization happens here.
double anatomical_fidelity(const Volume& sr, const Volume& hr, const ag::ParamSet<float>& parcel,
                           const FidelityWeights& weights);

struct DiceResult {
  std::vector<double> per_class;
  std::vector<bool> absent;  // class in neither volume; scored 1
  double mean = 0.0;
};

DiceResult dice(const LabelVolume& pred, const LabelVolume& truth, int n_classes);

struct MetricsReport {
  double ssim = 0.0;
  double psnr = 0.0;
  double nrmse = 0.0;
  double m_h = 0.0;
  std::vector<double> dice_per_class;  // parcellation of sr vs parcellation of hr
  std::vector<bool> dice_absent;
  double dice_mean = 0.0;
  std::optional<DiceResult> dice_truth;  // parcellation of sr vs supplied labels
};

MetricsReport evaluate_pair(const Volume& sr, const Volume& hr, const LabelVolume* hr_labels,
                            const ag::ParamSet<float>& parcel, const FidelityWeights& weights);

/// Header: name,ssim,psnr,nrmse,m_h,dice_mean,dice_truth_mean,dice_per_class
/// (per-class values joined by ';'). Rows named "mean" and "std" (sample
/// standard deviation) follow the per-pair rows.
void write_report_csv(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, MetricsReport>>& rows);

}  // namespace mrisr::metrics
