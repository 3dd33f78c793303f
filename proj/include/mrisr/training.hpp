#pragma once

// Two-stage generator training (L1, then WGAN-GP fine-tuning), Adam, and
// parameter-space blending of the two resulting generators.

#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mrisr/autograd.hpp"
#include "mrisr/nets.hpp"
#include "mrisr/rng.hpp"
#include "mrisr/volume.hpp"

namespace mrisr::train {

using ag::ParamSet;
using ag::Tensor;

// ---- losses -----------------------------------------------------------------

/// mean |sr - hr|
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& sr, const Tensor<T>& hr) {
  if (sr.shape() != hr.shape())
    throw ValidationError("l1_loss: shape " + ag::to_string(sr.shape()) + " vs " + ag::to_string(hr.shape()));
  return ag::mean_all(ag::abs(ag::sub(sr, hr)));
}

/// L1(sr, hr) + lambda_D * mean(D(sr)). With lambda_D == 0 the adversarial
/// term is left out of the graph entirely.
template <typename T>
Tensor<T> generator_loss(const Tensor<T>& sr, const Tensor<T>& hr, const Tensor<T>& d_sr, double lambda_D) {
  const Tensor<T> l1 = l1_loss(sr, hr);
  if (lambda_D == 0.0) return l1;
  return ag::add(l1, ag::scale(ag::mean_all(d_sr), static_cast<T>(lambda_D)));
}

enum class GpForm { paper_norm, two_sided };
enum class GammaPer { sample, batch };

GpForm parse_gp_form(const std::string& s);
GammaPer parse_gamma_per(const std::string& s);
std::string to_string(GpForm f);
std::string to_string(GammaPer g);

/// Penalty on the critic's input gradient at x = gamma*sr + (1-gamma)*hr,
/// one gamma per sample. paper_norm: mean_n ||dD/dx_n||; two_sided:
/// mean_n (||dD/dx_n|| - 1)^2. The result stays differentiable with
/// respect to the critic's parameters. `d` must treat samples independently.
template <typename T>
Tensor<T> gradient_penalty(const std::function<Tensor<T>(const Tensor<T>&)>& d, const Tensor<T>& sr,
                           const Tensor<T>& hr, const std::vector<double>& gamma, GpForm form) {
  if (sr.shape() != hr.shape())
    throw ValidationError("gradient_penalty: shape " + ag::to_string(sr.shape()) + " vs " +
                          ag::to_string(hr.shape()));
  const int n = sr.dim(0);
  if (static_cast<int>(gamma.size()) != n) throw ValidationError("gradient_penalty: need one gamma per sample");
  ag::Shape per_sample(sr.rank(), 1);
  per_sample[0] = n;

  typename Tensor<T>::Array g(n), one_minus(n);
  for (int i = 0; i < n; ++i) {
    g[i] = static_cast<T>(gamma[i]);
    one_minus[i] = static_cast<T>(1.0 - gamma[i]);
  }
  Tensor<T> x_hat;
  {
    ag::NoGradGuard no_grad;
    const Tensor<T> gs = ag::broadcast_to(Tensor<T>(per_sample, g), sr.shape());
    const Tensor<T> gh = ag::broadcast_to(Tensor<T>(per_sample, one_minus), sr.shape());
    x_hat = ag::add(ag::mul(gs, sr.detach()), ag::mul(gh, hr.detach()));
  }
  x_hat.set_requires_grad(true);

  ag::GradModeGuard record(true);
  const Tensor<T> score = ag::sum_all(d(x_hat));
  const Tensor<T> grad_x = ag::grad<T>({score}, {x_hat}, {}, true)[0];
  const Tensor<T> norms = ag::reshape(ag::sqrt(ag::sum_to(ag::mul(grad_x, grad_x), per_sample)), {n});
  if (form == GpForm::paper_norm) return ag::mean_all(norms);
  const Tensor<T> dev = ag::add_scalar(norms, T(-1));
  return ag::mean_all(ag::mul(dev, dev));
}

/// mean(D(hr)) - mean(D(sr)) + lambda_g * gp
template <typename T>
Tensor<T> discriminator_loss(const Tensor<T>& d_hr, const Tensor<T>& d_sr, const Tensor<T>& gp, double lambda_g) {
  return ag::add(ag::sub(ag::mean_all(d_hr), ag::mean_all(d_sr)), ag::scale(gp, static_cast<T>(lambda_g)));
}

// ---- optimizer ----------------------------------------------------------------

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double eps = 1e-8;

  void validate() const;
};

template <typename T>
struct AdamState {
  std::int64_t t = 0;
  std::map<std::string, Eigen::Array<T, Eigen::Dynamic, 1>> m, v;
};

/// One bias-corrected Adam update of every trainable entry, reading the
/// gradient accumulated in each tensor's .grad (absent = zero).
template <typename T>
void adam_step(ParamSet<T>& params, AdamState<T>& state, const AdamHyper& h, std::int64_t step_for_errors = -1) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  for (const auto& e : params.entries())
    if (e.trainable && e.tensor.has_grad() && !e.tensor.grad().allFinite())
      throw DivergenceError(step_for_errors < 0 ? state.t : step_for_errors,
                            "non-finite gradient for parameter '" + e.name + "'");
  state.t += 1;
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(h.beta1, static_cast<double>(state.t)));
  const T c2 = static_cast<T>(1.0 - std::pow(h.beta2, static_cast<double>(state.t)));
  const T lr = static_cast<T>(h.lr), eps = static_cast<T>(h.eps);
  for (auto& e : params.entries()) {
    if (!e.trainable) continue;
    const Eigen::Index n = e.tensor.numel();
    auto [mi, fresh_m] = state.m.try_emplace(e.name, Arr::Zero(n));
    auto [vi, fresh_v] = state.v.try_emplace(e.name, Arr::Zero(n));
    (void)fresh_m;
    (void)fresh_v;
    Arr& m = mi->second;
    Arr& v = vi->second;
    if (m.size() != n || v.size() != n) throw ValidationError("optimizer state does not match '" + e.name + "'");
    const Arr g = e.tensor.has_grad() ? e.tensor.grad() : Arr::Zero(n);
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g * g;
    e.tensor.mutable_values() -= lr * (m / c1) / ((v / c2).sqrt() + eps);
  }
}

// ---- blending ---------------------------------------------------------------

/// alpha * psnr + (1 - alpha) * gan per entry; alpha 1 and 0 return exact copies.
template <typename T>
ParamSet<T> blend_params(const ParamSet<T>& psnr, const ParamSet<T>& gan, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0, 1]");
  if (psnr.size() != gan.size())
    throw ValidationError("cannot blend parameter sets of different sizes (" + std::to_string(psnr.size()) + " vs " +
                          std::to_string(gan.size()) + ")");
  for (std::size_t i = 0; i < psnr.size(); ++i) {
    const auto& a = psnr.entries()[i];
    const auto& b = gan.entries()[i];
    if (a.name != b.name || a.tensor.shape() != b.tensor.shape() || a.trainable != b.trainable)
      throw ValidationError("parameter sets differ at entry " + std::to_string(i) + " ('" + a.name + "' " +
                            ag::to_string(a.tensor.shape()) + " vs '" + b.name + "' " +
                            ag::to_string(b.tensor.shape()) + ")");
  }
  if (alpha == 1.0) return psnr.clone();
  if (alpha == 0.0) return gan.clone();
  const T wa = static_cast<T>(alpha), wb = static_cast<T>(1.0 - alpha);
  ParamSet<T> out;
  out.meta = psnr.meta;
  for (std::size_t i = 0; i < psnr.size(); ++i) {
    const auto& a = psnr.entries()[i];
    const auto& b = gan.entries()[i];
    out.add(a.name, Tensor<T>(a.tensor.shape(), wa * a.tensor.values() + wb * b.tensor.values()), a.trainable);
  }
  return out;
}

// ---- training loops -----------------------------------------------------------

struct TrainConfig {
  double lambda_D = 1e-3;
  double lambda_g = 10.0;
  int n_critic = 5;
  GpForm gp_form = GpForm::paper_norm;
  GammaPer gamma_per = GammaPer::sample;
  AdamHyper adam;       // generator
  AdamHyper disc_adam;  // critic
  int batch_size = 4;
  int steps = 1000;  // generator updates
  std::uint64_t seed = 1;
  Extent3 patch{16, 16, 16};
  bool checkpointing = false;
  double bn_momentum = 0.1;

  void validate() const;
};

/// Paired training volumes; patches are sampled from them at random.
/// lr and hr must match in shape pairwise.
struct TrainData {
  std::vector<Volume> lr, hr;

  void validate(const Extent3& patch) const;
};

enum class Phase { critic, generator };

struct TrainRecord {
  std::int64_t step = 0;  // record index, strictly increasing
  Phase phase = Phase::generator;
  double l1 = 0.0;       // L1 on the batch of this record
  double adv = 0.0;      // mean critic score of the generated batch
  double d_loss = 0.0;   // critic records only
  double gp = 0.0;       // critic records only
  double g_total = 0.0;  // generator records: l1 + lambda_D * adv
  double seconds = 0.0;  // wall time since the start of the run
};

struct TrainHistory {
  std::vector<TrainRecord> records;

  /// Columns step,l1,adv,d_loss,gp,seconds.
  void write_csv(const std::filesystem::path& path) const;
  static TrainHistory read_csv(const std::filesystem::path& path);
};

using RecordObserver = std::function<void(const TrainRecord&)>;

struct PsnrResult {
  ParamSet<float> generator;
  AdamState<float> adam;
  TrainHistory history;
};

struct GanResult {
  ParamSet<float> generator;
  ParamSet<float> discriminator;
  AdamState<float> adam;
  AdamState<float> disc_adam;
  TrainHistory history;
};

/// Batch sampler used by both loops; exposed for tests.
class PatchSampler {
 public:
  PatchSampler(const TrainData& data, Extent3 patch, std::uint64_t seed);
  /// N x 1 x pd x ph x pw tensors (lr, hr).
  std::pair<Tensor<float>, Tensor<float>> next(int batch);
  Rng& rng() { return rng_; }

 private:
  const TrainData* data_;
  Extent3 patch_;
  Rng rng_;
};

/// Minimizes L1 with Adam. Starts from `init` when given (the config is then
/// read from its metadata), otherwise from build_rrdg(gcfg, cfg.seed).
PsnrResult train_psnr(const TrainData& data, const TrainConfig& cfg, const nets::RRDGConfig& gcfg,
                      const std::optional<ParamSet<float>>& init = std::nullopt, const RecordObserver& observer = {});

/// WGAN-GP fine-tuning from a PSNR generator. Each generator update is
/// preceded by n_critic critic updates. Generator batches are drawn from
/// the same stream as train_psnr, so lambda_D = 0 reproduces a pure L1
/// continuation exactly.
GanResult train_gan(const ParamSet<float>& psnr_params, const TrainData& data, const TrainConfig& cfg,
                    const nets::DiscConfig& dcfg, const std::optional<ParamSet<float>>& disc_init = std::nullopt,
                    const RecordObserver& observer = {});

/// Generator output for a batch, in inference mode (running statistics).
Tensor<float> generate(const ParamSet<float>& params, const Tensor<float>& lr);

// ---- parcellation -------------------------------------------------------------

struct ParcelTrainConfig {
  int steps = 400;
  int batch_size = 2;
  Extent3 patch{16, 16, 16};
  double lr = 1e-2;
  std::uint64_t seed = 7;

  void validate() const;
};

ParamSet<float> train_parcellation(const std::vector<Volume>& volumes, const std::vector<LabelVolume>& labels,
                                   const nets::ParcelConfig& pcfg, const ParcelTrainConfig& cfg,
                                   const RecordObserver& observer = {});

/// Voxelwise argmax of the parcellation logits over a whole volume.
LabelVolume segment(const Volume& vol, const ParamSet<float>& parcel);

// ---- checkpoints --------------------------------------------------------------

// A checkpoint at path P is the parameter container P plus the optimizer
// container P.adam (first and second moments as "m.<name>" / "v.<name>",
// with meta adam_t and step).

void save_checkpoint(const std::filesystem::path& path, const ParamSet<float>& params, const AdamState<float>& adam,
                     std::int64_t step);

struct Checkpoint {
  ParamSet<float> params;
  AdamState<float> adam;
  std::int64_t step = 0;
};

/// Loads P and, if present, P.adam.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mrisr::train
