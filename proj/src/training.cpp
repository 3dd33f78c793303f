#include "mrisr/training.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mrisr::train {
namespace fs = std::filesystem;

GpForm parse_gp_form(const std::string& s) {
  if (s == "paper-norm" || s == "paper_norm") return GpForm::paper_norm;
  if (s == "two-sided" || s == "two_sided") return GpForm::two_sided;
  throw ValidationError("unknown gp_form '" + s + "' (expected paper-norm or two-sided)");
}

GammaPer parse_gamma_per(const std::string& s) {
  if (s == "sample") return GammaPer::sample;
  if (s == "batch") return GammaPer::batch;
  throw ValidationError("unknown gamma_per '" + s + "' (expected sample or batch)");
}

std::string to_string(GpForm f) { return f == GpForm::paper_norm ? "paper-norm" : "two-sided"; }
std::string to_string(GammaPer g) { return g == GammaPer::sample ? "sample" : "batch"; }

void AdamHyper::validate() const {
  if (!(lr > 0.0)) throw ValidationError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ValidationError("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ValidationError("Adam eps must be positive");
}

void TrainConfig::validate() const {
  if (!(lambda_D >= 0.0)) throw ValidationError("lambda_D must be >= 0");
  if (!(lambda_g >= 0.0)) throw ValidationError("lambda_g must be >= 0");
  if (n_critic < 1) throw ValidationError("n_critic must be >= 1");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (steps < 0) throw ValidationError("steps must be >= 0");
  for (int p : patch)
    if (p < 4) throw ValidationError("training patch extents must be >= 4");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ValidationError("bn_momentum must lie in (0, 1]");
  adam.validate();
  disc_adam.validate();
}

void TrainData::validate(const Extent3& patch) const {
  if (hr.empty()) throw ValidationError("training data is empty");
  if (lr.size() != hr.size()) throw ValidationError("training data needs one low-resolution volume per target");
  for (std::size_t i = 0; i < hr.size(); ++i) {
    if (lr[i].shape != hr[i].shape) throw ValidationError("training pair " + std::to_string(i) + " shapes differ");
    for (int a = 0; a < 3; ++a)
      if (hr[i].shape[a] < patch[a])
        throw ValidationError("training volume " + std::to_string(i) + " is smaller than the patch");
    if (!lr[i].all_finite() || !hr[i].all_finite())
      throw ValidationError("training pair " + std::to_string(i) + " is not finite");
  }
}

void ParcelTrainConfig::validate() const {
  if (steps < 0 || batch_size < 1) throw ValidationError("invalid parcellation training schedule");
  if (!(lr > 0.0)) throw ValidationError("learning rate must be positive");
  for (int p : patch)
    if (p < 1) throw ValidationError("patch extents must be positive");
}

// ---- history ------------------------------------------------------------------

namespace {
std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

void TrainHistory::write_csv(const fs::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "step,l1,adv,d_loss,gp,seconds\n";
  for (const auto& r : records)
    out << r.step << ',' << num(r.l1) << ',' << num(r.adv) << ',' << num(r.d_loss) << ',' << num(r.gp) << ','
        << num(r.seconds) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

TrainHistory TrainHistory::read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "step,l1,adv,d_loss,gp,seconds")
    throw FormatError(path.string() + ": unexpected history header");
  TrainHistory h;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string f[6];
    for (auto& s : f)
      if (!std::getline(ls, s, ',')) throw FormatError(path.string() + ": short history row");
    TrainRecord r;
    try {
      r.step = std::stoll(f[0]);
      r.l1 = std::stod(f[1]);
      r.adv = std::stod(f[2]);
      r.d_loss = std::stod(f[3]);
      r.gp = std::stod(f[4]);
      r.seconds = std::stod(f[5]);
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ": unparsable history row");
    }
    h.records.push_back(r);
  }
  return h;
}

// ---- sampling -----------------------------------------------------------------

PatchSampler::PatchSampler(const TrainData& data, Extent3 patch, std::uint64_t seed)
    : data_(&data), patch_(patch), rng_(seed) {
  data.validate(patch);
}

std::pair<Tensor<float>, Tensor<float>> PatchSampler::next(int batch) {
  const auto [pd, ph, pw] = patch_;
  const std::int64_t per = voxel_count(patch_);
  Eigen::ArrayXf lr(batch * per), hr(batch * per);
  for (int b = 0; b < batch; ++b) {
    const std::size_t idx = static_cast<std::size_t>(rng_.index(static_cast<std::int64_t>(data_->hr.size())));
    const Volume& vl = data_->lr[idx];
    const Volume& vh = data_->hr[idx];
    const int d0 = static_cast<int>(rng_.index(vh.shape[0] - pd + 1));
    const int h0 = static_cast<int>(rng_.index(vh.shape[1] - ph + 1));
    const int w0 = static_cast<int>(rng_.index(vh.shape[2] - pw + 1));
    std::int64_t o = b * per;
    for (int d = 0; d < pd; ++d)
      for (int h = 0; h < ph; ++h)
        for (int w = 0; w < pw; ++w, ++o) {
          lr[o] = vl(d0 + d, h0 + h, w0 + w);
          hr[o] = vh(d0 + d, h0 + h, w0 + w);
        }
  }
  const ag::Shape s{batch, 1, pd, ph, pw};
  return {Tensor<float>(s, std::move(lr)), Tensor<float>(s, std::move(hr))};
}

// ---- loops --------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void require_finite(double v, std::int64_t step, const char* what) {
  if (!std::isfinite(v)) throw DivergenceError(step, std::string(what) + " is not finite");
}

nets::ForwardOptions generator_options(const TrainConfig& cfg, bool update_stats) {
  nets::ForwardOptions o;
  o.training = true;
  o.update_running_stats = update_stats;
  o.checkpoint = cfg.checkpointing;
  o.bn_momentum = cfg.bn_momentum;
  return o;
}

std::vector<double> draw_gamma(Rng& rng, int n, GammaPer per) {
  std::vector<double> g(static_cast<std::size_t>(n));
  if (per == GammaPer::batch) {
    const double v = rng.uniform();
    for (auto& x : g) x = v;
  } else {
    for (auto& x : g) x = rng.uniform();
  }
  return g;
}

struct GeneratorStep {
  double l1 = 0, adv = 0, total = 0;
};

GeneratorStep generator_step(ParamSet<float>& gen, const nets::RRDGConfig& gcfg, ParamSet<float>* disc,
                             const nets::DiscConfig* dcfg, const Tensor<float>& lr, const Tensor<float>& hr,
                             const TrainConfig& cfg, AdamState<float>& adam, std::int64_t step) {
  gen.zero_grad();
  const Tensor<float> sr = nets::rrdg_forward(lr, gen, gcfg, generator_options(cfg, true));
  const Tensor<float> l1 = l1_loss(sr, hr);
  GeneratorStep out;
  Tensor<float> loss = l1;
  if (disc) {
    if (cfg.lambda_D != 0.0) {
      const Tensor<float> d_sr = nets::discriminator_forward(sr, *disc, *dcfg);
      loss = generator_loss(sr, hr, d_sr, cfg.lambda_D);
      out.adv = ag::mean_all(d_sr).item();
    } else {
      ag::NoGradGuard no_grad;
      out.adv = ag::mean_all(nets::discriminator_forward(sr.detach(), *disc, *dcfg)).item();
    }
  }
  out.l1 = l1.item();
  out.total = loss.item();
  require_finite(out.total, step, "generator loss");
  ag::backward(loss);
  adam_step(gen, adam, cfg.adam, step);
  return out;
}

}  // namespace

PsnrResult train_psnr(const TrainData& data, const TrainConfig& cfg, const nets::RRDGConfig& gcfg_in,
                      const std::optional<ParamSet<float>>& init, const RecordObserver& observer) {
  cfg.validate();
  PsnrResult res;
  nets::RRDGConfig gcfg = gcfg_in;
  if (init) {
    gcfg = nets::rrdg_config_from_meta(init->meta);
    res.generator = init->clone();
  } else {
    res.generator = nets::build_rrdg(gcfg, cfg.seed);
  }
  PatchSampler sampler(data, cfg.patch, derive_seed(cfg.seed, "generator-batches"));
  const auto t0 = Clock::now();
  for (int s = 0; s < cfg.steps; ++s) {
    auto [lr, hr] = sampler.next(cfg.batch_size);
    const GeneratorStep g = generator_step(res.generator, gcfg, nullptr, nullptr, lr, hr, cfg, res.adam, s);
    TrainRecord r;
    r.step = s;
    r.phase = Phase::generator;
    r.l1 = g.l1;
    r.g_total = g.total;
    r.seconds = elapsed(t0);
    res.history.records.push_back(r);
    if (observer) observer(r);
  }
  res.generator.zero_grad();
  return res;
}

GanResult train_gan(const ParamSet<float>& psnr_params, const TrainData& data, const TrainConfig& cfg,
                    const nets::DiscConfig& dcfg_in, const std::optional<ParamSet<float>>& disc_init,
                    const RecordObserver& observer) {
  cfg.validate();
  GanResult res;
  const nets::RRDGConfig gcfg = nets::rrdg_config_from_meta(psnr_params.meta);
  nets::DiscConfig dcfg = dcfg_in;
  res.generator = psnr_params.clone();
  if (disc_init) {
    dcfg = nets::disc_config_from_meta(disc_init->meta);
    res.discriminator = disc_init->clone();
  } else {
    res.discriminator = nets::build_discriminator(dcfg, cfg.seed);
  }
  for (int a = 0; a < 3; ++a)
    if (dcfg.receptive_field() >= cfg.patch[a])
      throw ValidationError("critic receptive field (" + std::to_string(dcfg.receptive_field()) +
                            ") must be smaller than the training patch");

  PatchSampler gen_sampler(data, cfg.patch, derive_seed(cfg.seed, "generator-batches"));
  PatchSampler critic_sampler(data, cfg.patch, derive_seed(cfg.seed, "critic-batches"));
  Rng gamma_rng(derive_seed(cfg.seed, "gamma"));
  auto critic = [&](const Tensor<float>& x) { return nets::discriminator_forward(x, res.discriminator, dcfg); };
  const std::function<Tensor<float>(const Tensor<float>&)> critic_fn = critic;

  const auto t0 = Clock::now();
  std::int64_t index = 0;
  for (int s = 0; s < cfg.steps; ++s) {
    for (int c = 0; c < cfg.n_critic; ++c) {
      auto [lr, hr] = critic_sampler.next(cfg.batch_size);
      Tensor<float> sr;
      {
        ag::NoGradGuard no_grad;
        sr = nets::rrdg_forward(lr, res.generator, gcfg, generator_options(cfg, false));
      }
      res.discriminator.zero_grad();
      const Tensor<float> d_hr = critic(hr);
      const Tensor<float> d_sr = critic(sr);
      const Tensor<float> gp =
          gradient_penalty(critic_fn, sr, hr, draw_gamma(gamma_rng, cfg.batch_size, cfg.gamma_per), cfg.gp_form);
      const Tensor<float> loss = discriminator_loss(d_hr, d_sr, gp, cfg.lambda_g);
      TrainRecord r;
      r.step = index++;
      r.phase = Phase::critic;
      r.d_loss = loss.item();
      r.gp = gp.item();
      r.adv = ag::mean_all(d_sr).item();
      r.l1 = l1_loss(sr, hr).item();
      require_finite(r.d_loss, s, "critic loss");
      ag::backward(loss);
      adam_step(res.discriminator, res.disc_adam, cfg.disc_adam, s);
      r.seconds = elapsed(t0);
      res.history.records.push_back(r);
      if (observer) observer(r);
    }
    auto [lr, hr] = gen_sampler.next(cfg.batch_size);
    const GeneratorStep g =
        generator_step(res.generator, gcfg, &res.discriminator, &dcfg, lr, hr, cfg, res.adam, s);
    TrainRecord r;
    r.step = index++;
    r.phase = Phase::generator;
    r.l1 = g.l1;
    r.adv = g.adv;
    r.g_total = g.total;
    r.seconds = elapsed(t0);
    res.history.records.push_back(r);
    if (observer) observer(r);
  }
  res.generator.zero_grad();
  res.discriminator.zero_grad();
  return res;
}

Tensor<float> generate(const ParamSet<float>& params, const Tensor<float>& lr) {
  ag::NoGradGuard no_grad;
  ParamSet<float> view = params;
  return nets::rrdg_forward(lr, view, nets::rrdg_config_from_meta(params.meta));
}

// ---- parcellation -------------------------------------------------------------

ParamSet<float> train_parcellation(const std::vector<Volume>& volumes, const std::vector<LabelVolume>& labels,
                                   const nets::ParcelConfig& pcfg, const ParcelTrainConfig& cfg,
                                   const RecordObserver& observer) {
  pcfg.validate();
  cfg.validate();
  if (volumes.empty() || volumes.size() != labels.size())
    throw ValidationError("parcellation training needs one label volume per intensity volume");
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    if (volumes[i].shape != labels[i].shape) throw ValidationError("label grid does not match its volume");
    for (int a = 0; a < 3; ++a)
      if (volumes[i].shape[a] < cfg.patch[a]) throw ValidationError("volume smaller than the parcellation patch");
    for (auto l : labels[i].labels)
      if (l >= pcfg.n_classes) throw ValidationError("label exceeds the parcellation class count");
  }
  ParamSet<float> params = nets::build_parcellation_net(pcfg, cfg.seed);
  AdamState<float> adam;
  AdamHyper hyper;
  hyper.lr = cfg.lr;
  hyper.beta1 = 0.9;
  hyper.beta2 = 0.999;
  Rng rng(derive_seed(cfg.seed, "parcellation-batches"));
  const auto [pd, ph, pw] = cfg.patch;
  const std::int64_t per = voxel_count(cfg.patch);
  const auto t0 = Clock::now();
  for (int s = 0; s < cfg.steps; ++s) {
    Eigen::ArrayXf x(cfg.batch_size * per);
    std::vector<int> y(static_cast<std::size_t>(cfg.batch_size * per));
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::size_t idx = static_cast<std::size_t>(rng.index(static_cast<std::int64_t>(volumes.size())));
      const Volume& v = volumes[idx];
      const LabelVolume& l = labels[idx];
      const int d0 = static_cast<int>(rng.index(v.shape[0] - pd + 1));
      const int h0 = static_cast<int>(rng.index(v.shape[1] - ph + 1));
      const int w0 = static_cast<int>(rng.index(v.shape[2] - pw + 1));
      std::int64_t o = b * per;
      for (int d = 0; d < pd; ++d)
        for (int h = 0; h < ph; ++h)
          for (int w = 0; w < pw; ++w, ++o) {
            x[o] = v(d0 + d, h0 + h, w0 + w);
            y[static_cast<std::size_t>(o)] = l(d0 + d, h0 + h, w0 + w);
          }
    }
    params.zero_grad();
    const auto out = nets::parcellation_forward(Tensor<float>({cfg.batch_size, 1, pd, ph, pw}, std::move(x)), params,
                                                pcfg);
    const Tensor<float> loss = ag::cross_entropy(out.logits, y);
    require_finite(loss.item(), s, "parcellation loss");
    ag::backward(loss);
    adam_step(params, adam, hyper, s);
    if (observer) {
      TrainRecord r;
      r.step = s;
      r.l1 = loss.item();
      r.seconds = elapsed(t0);
      observer(r);
    }
  }
  params.zero_grad();
  return params;
}

LabelVolume segment(const Volume& vol, const ParamSet<float>& parcel) {
  const nets::ParcelConfig pcfg = nets::parcel_config_from_meta(parcel.meta);
  ag::NoGradGuard no_grad;
  ParamSet<float> view = parcel;
  const auto [d, h, w] = vol.shape;
  const auto out = nets::parcellation_forward(Tensor<float>({1, 1, d, h, w}, vol.data), view, pcfg);
  const std::int64_t n = vol.size();
  LabelVolume labels(vol.shape, pcfg.n_classes);
  const auto& v = out.logits.values();
  for (std::int64_t i = 0; i < n; ++i) {
    int best = 0;
    for (int c = 1; c < pcfg.n_classes; ++c)
      if (v[c * n + i] > v[best * n + i]) best = c;
    labels.labels[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(best);
  }
  return labels;
}

// ---- checkpoints --------------------------------------------------------------

namespace {
fs::path adam_path(const fs::path& p) { return fs::path(p.string() + ".adam"); }
}  // namespace

void save_checkpoint(const fs::path& path, const ParamSet<float>& params, const AdamState<float>& adam,
                     std::int64_t step) {
  ag::save_paramset(params, path);
  ParamSet<float> opt;
  opt.meta["adam_t"] = std::to_string(adam.t);
  opt.meta["step"] = std::to_string(step);
  for (const auto& [name, m] : adam.m) opt.add("m." + name, Tensor<float>({static_cast<int>(m.size())}, m), false);
  for (const auto& [name, v] : adam.v) opt.add("v." + name, Tensor<float>({static_cast<int>(v.size())}, v), false);
  ag::save_paramset(opt, adam_path(path));
}

Checkpoint load_checkpoint(const fs::path& path) {
  Checkpoint ck;
  ck.params = ag::load_paramset(path);
  if (!fs::exists(adam_path(path))) return ck;
  const ParamSet<float> opt = ag::load_paramset(adam_path(path));
  try {
    ck.adam.t = std::stoll(opt.meta.at("adam_t"));
    ck.step = std::stoll(opt.meta.at("step"));
  } catch (const std::exception&) {
    throw FormatError(adam_path(path).string() + ": missing optimizer counters");
  }
  for (const auto& e : opt.entries()) {
    if (e.name.rfind("m.", 0) == 0)
      ck.adam.m[e.name.substr(2)] = e.tensor.values();
    else if (e.name.rfind("v.", 0) == 0)
      ck.adam.v[e.name.substr(2)] = e.tensor.values();
    else
      throw FormatError(adam_path(path).string() + ": unexpected entry '" + e.name + "'");
  }
  return ck;
}

}  // namespace mrisr::train
