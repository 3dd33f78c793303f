#include "mrisr/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mrisr/nets.hpp"
#include "mrisr/training.hpp"

namespace mrisr::metrics {
namespace fs = std::filesystem;

namespace {

void require_same_shape(const Volume& a, const Volume& b, const char* op) {
  if (a.shape != b.shape)
    throw ValidationError(std::string(op) + ": shapes differ (" + std::to_string(a.shape[0]) + "," +
                          std::to_string(a.shape[1]) + "," + std::to_string(a.shape[2]) + " vs " +
                          std::to_string(b.shape[0]) + "," + std::to_string(b.shape[1]) + "," +
                          std::to_string(b.shape[2]) + ")");
}

double mean_squared_error(const Volume& a, const Volume& b) {
  double s = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

/// Valid-mode separable filtering of a D x H x W field with a 1D kernel.
std::vector<double> filter_valid(const std::vector<double>& in, const Extent3& s, const std::vector<double>& k) {
  const int w = static_cast<int>(k.size());
  const int od = s[0] - w + 1, oh = s[1] - w + 1, ow = s[2] - w + 1;
  // W pass: D x H x ow
  std::vector<double> t1(static_cast<std::size_t>(s[0]) * s[1] * ow);
  for (int d = 0; d < s[0]; ++d)
    for (int h = 0; h < s[1]; ++h)
      for (int x = 0; x < ow; ++x) {
        double acc = 0.0;
        const std::size_t base = (static_cast<std::size_t>(d) * s[1] + h) * s[2] + x;
        for (int j = 0; j < w; ++j) acc += k[j] * in[base + j];
        t1[(static_cast<std::size_t>(d) * s[1] + h) * ow + x] = acc;
      }
  // H pass: D x oh x ow
  std::vector<double> t2(static_cast<std::size_t>(s[0]) * oh * ow);
  for (int d = 0; d < s[0]; ++d)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (int j = 0; j < w; ++j) acc += k[j] * t1[(static_cast<std::size_t>(d) * s[1] + y + j) * ow + x];
        t2[(static_cast<std::size_t>(d) * oh + y) * ow + x] = acc;
      }
  // D pass: od x oh x ow
  std::vector<double> out(static_cast<std::size_t>(od) * oh * ow);
  for (int z = 0; z < od; ++z)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (int j = 0; j < w; ++j) acc += k[j] * t2[(static_cast<std::size_t>(z + j) * oh + y) * ow + x];
        out[(static_cast<std::size_t>(z) * oh + y) * ow + x] = acc;
      }
  return out;
}

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

double psnr(const Volume& a, const Volume& b, double data_range) {
  require_same_shape(a, b, "psnr");
  if (!(data_range > 0.0)) throw ValidationError("psnr: data_range must be positive");
  const double mse = mean_squared_error(a, b);
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(data_range * data_range / mse);
}

std::vector<double> ssim_window(const SsimOptions& o) {
  if (o.window < 1 || o.window % 2 == 0) throw ValidationError("ssim window must be a positive odd integer");
  if (!(o.sigma > 0.0)) throw ValidationError("ssim sigma must be positive");
  std::vector<double> k(static_cast<std::size_t>(o.window));
  const int r = o.window / 2;
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (o.sigma * o.sigma));
  for (auto& v : k) v /= sum;
  return k;
}

double ssim3d(const Volume& a, const Volume& b, const SsimOptions& o) {
  require_same_shape(a, b, "ssim3d");
  for (int e : a.shape)
    if (o.window > e) throw ValidationError("ssim window larger than the volume");
  const auto k = ssim_window(o);
  const std::size_t n = static_cast<std::size_t>(a.size());
  std::vector<double> va(n), vb(n), aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    va[i] = a.data[static_cast<Eigen::Index>(i)];
    vb[i] = b.data[static_cast<Eigen::Index>(i)];
    aa[i] = va[i] * va[i];
    bb[i] = vb[i] * vb[i];
    ab[i] = va[i] * vb[i];
  }
  const auto mu_a = filter_valid(va, a.shape, k), mu_b = filter_valid(vb, a.shape, k);
  const auto e_aa = filter_valid(aa, a.shape, k), e_bb = filter_valid(bb, a.shape, k);
  const auto e_ab = filter_valid(ab, a.shape, k);
  const double c1 = (o.k1 * o.data_range) * (o.k1 * o.data_range);
  const double c2 = (o.k2 * o.data_range) * (o.k2 * o.data_range);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double sa = e_aa[i] - ma * ma, sb = e_bb[i] - mb * mb, sab = e_ab[i] - ma * mb;
    total += ((2.0 * ma * mb + c1) * (2.0 * sab + c2)) / ((ma * ma + mb * mb + c1) * (sa + sb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

double nrmse(const Volume& a, const Volume& reference) {
  require_same_shape(a, reference, "nrmse");
  const double range = static_cast<double>(reference.data.maxCoeff()) - static_cast<double>(reference.data.minCoeff());
  if (range == 0.0) throw ValidationError("nrmse: reference volume is constant");
  return std::sqrt(mean_squared_error(a, reference)) / range;
}

// ---- anatomical fidelity --------------------------------------------------------

void FidelityWeights::write(const fs::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "fidelity-weights 1\n";
  for (double v : w) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g\n", v);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path.string());
}

FidelityWeights FidelityWeights::read(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "fidelity-weights 1")
    throw FormatError(path.string() + ": not a fidelity weights file");
  FidelityWeights fw;
  for (auto& v : fw.w) {
    if (!std::getline(in, line)) throw FormatError(path.string() + ": expected 6 weights");
    try {
      std::size_t used = 0;
      v = std::stod(line, &used);
      if (used != line.size()) throw std::invalid_argument(line);
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ": bad weight '" + line + "'");
    }
    if (!(v >= 0.0) || !std::isfinite(v)) throw FormatError(path.string() + ": weights must be finite and >= 0");
  }
  while (std::getline(in, line))
    if (!line.empty()) throw FormatError(path.string() + ": expected exactly 6 weights");
  return fw;
}

TapDistances tap_distances(const Volume& sr, const Volume& hr, const ag::ParamSet<float>& parcel) {
  require_same_shape(sr, hr, "anatomical_fidelity");
  const nets::ParcelConfig pcfg = nets::parcel_config_from_meta(parcel.meta);
  ag::NoGradGuard no_grad;
  ag::ParamSet<float> view = parcel;
  const auto [d, h, w] = sr.shape;
  const auto fs_ = nets::parcellation_forward(ag::Tensor<float>({1, 1, d, h, w}, sr.data), view, pcfg).features;
  const auto fh = nets::parcellation_forward(ag::Tensor<float>({1, 1, d, h, w}, hr.data), view, pcfg).features;
  TapDistances out{};
  for (int f = 0; f < kFidelityTaps; ++f) {
    const auto& a = fs_[static_cast<std::size_t>(f)].values();
    const auto& b = fh[static_cast<std::size_t>(f)].values();
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    out[static_cast<std::size_t>(f)] = s / static_cast<double>(a.size());
  }
  return out;
}

FidelityWeights weights_from_distances(const std::vector<TapDistances>& distances, std::vector<std::string>* warnings) {
  if (distances.empty()) throw ValidationError("fidelity calibration needs at least one pair");
  FidelityWeights fw;
  for (int f = 0; f < kFidelityTaps; ++f) {
    double mean = 0.0;
    for (const auto& d : distances) mean += d[static_cast<std::size_t>(f)];
    mean /= static_cast<double>(distances.size());
    if (mean < kFidelityFloor) {
      if (warnings)
        warnings->push_back("tap " + std::to_string(f) + " has zero mean distance on the calibration set; floor applied");
      mean = kFidelityFloor;
    }
    fw.w[static_cast<std::size_t>(f)] = 1.0 / mean;
  }
  return fw;
}

FidelityWeights calibrate_fidelity_weights(const ag::ParamSet<float>& parcel,
                                           const std::vector<std::pair<Volume, Volume>>& pairs,
                                           std::vector<std::string>* warnings) {
  std::vector<TapDistances> d;
  d.reserve(pairs.size());
  for (const auto& [sr, hr] : pairs) d.push_back(tap_distances(sr, hr, parcel));
  return weights_from_distances(d, warnings);
}

double weighted_fidelity(const TapDistances& d, const FidelityWeights& w) {
  double s = 0.0;
  for (int f = 0; f < kFidelityTaps; ++f) s += w.w[static_cast<std::size_t>(f)] * d[static_cast<std::size_t>(f)];
  return s;
}

double anatomical_fidelity(const Volume& sr, const Volume& hr, const ag::ParamSet<float>& parcel,
                           const FidelityWeights& weights) {
  return weighted_fidelity(tap_distances(sr, hr, parcel), weights);
}

// ---- dice -------------------------------------------------------------------------

DiceResult dice(const LabelVolume& pred, const LabelVolume& truth, int n_classes) {
  if (pred.shape != truth.shape) throw ValidationError("dice: label grids differ in shape");
  if (n_classes < 1) throw ValidationError("dice: n_classes must be positive");
  std::vector<std::int64_t> inter(static_cast<std::size_t>(n_classes)), np(inter), nt(inter);
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const int p = pred.labels[i], t = truth.labels[i];
    if (p >= n_classes || t >= n_classes) throw ValidationError("dice: label out of range");
    ++np[static_cast<std::size_t>(p)];
    ++nt[static_cast<std::size_t>(t)];
    if (p == t) ++inter[static_cast<std::size_t>(p)];
  }
  DiceResult r;
  double sum = 0.0;
  for (int c = 0; c < n_classes; ++c) {
    const auto i = static_cast<std::size_t>(c);
    const std::int64_t denom = np[i] + nt[i];
    const bool absent = denom == 0;
    const double v = absent ? 1.0 : 2.0 * static_cast<double>(inter[i]) / static_cast<double>(denom);
    r.per_class.push_back(v);
    r.absent.push_back(absent);
    sum += v;
  }
  r.mean = sum / n_classes;
  return r;
}

// ---- report -----------------------------------------------------------------------

MetricsReport evaluate_pair(const Volume& sr, const Volume& hr, const LabelVolume* hr_labels,
                            const ag::ParamSet<float>& parcel, const FidelityWeights& weights) {
  require_same_shape(sr, hr, "evaluate_pair");
  const int n_classes = nets::parcel_config_from_meta(parcel.meta).n_classes;
  MetricsReport r;
  r.ssim = ssim3d(sr, hr);
  r.psnr = psnr(sr, hr);
  r.nrmse = nrmse(sr, hr);
  r.m_h = anatomical_fidelity(sr, hr, parcel, weights);
  const LabelVolume seg_sr = train::segment(sr, parcel);
  const DiceResult d = dice(seg_sr, train::segment(hr, parcel), n_classes);
  r.dice_per_class = d.per_class;
  r.dice_absent = d.absent;
  r.dice_mean = d.mean;
  if (hr_labels) {
    if (hr_labels->shape != hr.shape) throw ValidationError("evaluate_pair: labels do not match the volume grid");
    r.dice_truth = dice(seg_sr, *hr_labels, n_classes);
  }
  return r;
}

void write_report_csv(const fs::path& path, const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "name,ssim,psnr,nrmse,m_h,dice_mean,dice_truth_mean,dice_per_class\n";
  auto row = [&](const std::string& name, const std::vector<double>& v, const std::string& truth,
                 const std::vector<double>& per_class) {
    out << name;
    for (double x : v) out << ',' << num(x);
    out << ',' << truth << ',';
    for (std::size_t i = 0; i < per_class.size(); ++i) out << (i ? ";" : "") << num(per_class[i]);
    out << '\n';
  };
  const std::size_t n = rows.size();
  std::vector<double> mean(5, 0.0), sq(5, 0.0);
  std::size_t classes = rows.empty() ? 0 : rows.front().second.dice_per_class.size();
  std::vector<double> cmean(classes, 0.0);
  bool all_truth = !rows.empty();
  double tmean = 0.0;
  for (const auto& [name, r] : rows) {
    const std::vector<double> v{r.ssim, r.psnr, r.nrmse, r.m_h, r.dice_mean};
    row(name, v, r.dice_truth ? num(r.dice_truth->mean) : "", r.dice_per_class);
    for (int i = 0; i < 5; ++i) mean[static_cast<std::size_t>(i)] += v[static_cast<std::size_t>(i)] / static_cast<double>(n);
    if (r.dice_per_class.size() != classes) classes = 0;
    for (std::size_t c = 0; c < std::min(classes, r.dice_per_class.size()); ++c)
      cmean[c] += r.dice_per_class[c] / static_cast<double>(n);
    all_truth = all_truth && r.dice_truth.has_value();
    if (r.dice_truth) tmean += r.dice_truth->mean / static_cast<double>(n);
  }
  if (n == 0) return;
  cmean.resize(classes);
  double tsq = 0.0;
  for (const auto& [name, r] : rows) {
    const std::vector<double> v{r.ssim, r.psnr, r.nrmse, r.m_h, r.dice_mean};
    for (int i = 0; i < 5; ++i) {
      const double d = v[static_cast<std::size_t>(i)] - mean[static_cast<std::size_t>(i)];
      sq[static_cast<std::size_t>(i)] += std::isfinite(d) ? d * d : 0.0;
    }
    if (r.dice_truth) tsq += (r.dice_truth->mean - tmean) * (r.dice_truth->mean - tmean);
  }
  std::vector<double> sd(5, 0.0);
  for (int i = 0; i < 5; ++i)
    sd[static_cast<std::size_t>(i)] = n > 1 ? std::sqrt(sq[static_cast<std::size_t>(i)] / static_cast<double>(n - 1)) : 0.0;
  row("mean", mean, all_truth ? num(tmean) : "", cmean);
  row("std", sd, all_truth ? num(n > 1 ? std::sqrt(tsq / static_cast<double>(n - 1)) : 0.0) : "", {});
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace mrisr::metrics
