// Command-line front end. Exit codes: 0 success, 1 validation error,
// 2 I/O error, 3 numerical divergence, 4 anything else.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>

#include "mrisr/config.hpp"
#include "mrisr/kspace.hpp"
#include "mrisr/metrics.hpp"
#include "mrisr/phantom.hpp"
#include "mrisr/pipeline.hpp"
#include "mrisr/training.hpp"
#include "mrisr/voxel_io.hpp"

namespace fs = std::filesystem;
using namespace mrisr;

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Base paths of every volume in `dir`, sorted by name.
std::vector<fs::path> volumes_in(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".meta") out.push_back(volume_base_path(e.path()));
  std::sort(out.begin(), out.end());
  return out;
}

/// HR volumes are the files without an "_lr" suffix; NAME_lr, when present,
/// is the low-resolution partner of NAME, otherwise it is synthesized.
train::TrainData load_training_data(const fs::path& dir, const DegradeSpec& degrade_spec) {
  train::TrainData d;
  for (const auto& base : volumes_in(dir)) {
    if (ends_with(base.filename().string(), "_lr")) continue;
    Volume hr = read_volume(base);
    const fs::path lr_base = base.string() + "_lr";
    d.lr.push_back(fs::exists(lr_base.string() + ".meta") ? read_volume(lr_base) : degrade(hr, degrade_spec));
    d.hr.push_back(std::move(hr));
  }
  if (d.hr.empty()) throw ValidationError("no training volumes in " + dir.string());
  return d;
}

void print_progress(const train::TrainRecord& r, std::int64_t every) {
  if (r.phase == train::Phase::generator && (r.step + 1) % every == 0)
    std::cerr << "record " << r.step << ": l1 " << r.l1 << " adv " << r.adv << " d_loss " << r.d_loss << " gp "
              << r.gp << " (" << r.seconds << " s)\n";
}

int run(int argc, char** argv) {
  CLI::App app{"3D MRI super-resolution toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Write synthetic phantoms with tissue labels");
  std::uint64_t seed = 0;
  std::string shape_text = "32,32,32", out;
  int tissues = 4, count = 1;
  double texture = 0.05;
  synth->add_option("--seed", seed, "Seed of the first phantom")->required();
  synth->add_option("--shape", shape_text, "D,H,W");
  synth->add_option("--tissues", tissues, "Tissue classes including background");
  synth->add_option("--texture", texture, "Texture amplitude");
  synth->add_option("--count", count, "Number of phantoms")->check(CLI::PositiveNumber);
  synth->add_option("--out", out, "Output directory")->required();

  // degrade
  auto* deg = app.add_subcommand("degrade", "Truncate k-space along the given axes");
  std::string in, axes_text = "h,w";
  int factor = 2;
  deg->add_option("--in", in, "Input volume")->required();
  deg->add_option("--axes", axes_text, "Axes among d,h,w");
  deg->add_option("--factor", factor, "Resolution reduction factor");
  deg->add_option("--out", out, "Output volume")->required();

  // train-psnr / train-gan / train-parcel
  std::string config_path, data, init, disc_init, history;
  auto* tpsnr = app.add_subcommand("train-psnr", "Train the generator with the L1 loss");
  tpsnr->add_option("--config", config_path, "key=value config file")->required();
  tpsnr->add_option("--data", data, "Directory of training volumes")->required();
  tpsnr->add_option("--out", out, "Output checkpoint")->required();
  tpsnr->add_option("--init", init, "Continue from this checkpoint");
  tpsnr->add_option("--history", history, "History CSV (default: <out>.history.csv)");

  auto* tgan = app.add_subcommand("train-gan", "Adversarial fine-tuning of a trained generator");
  tgan->add_option("--config", config_path, "key=value config file")->required();
  tgan->add_option("--init", init, "Generator checkpoint from train-psnr")->required();
  tgan->add_option("--disc-init", disc_init, "Critic checkpoint to resume from");
  tgan->add_option("--data", data, "Directory of training volumes")->required();
  tgan->add_option("--out", out, "Output generator checkpoint (critic goes to <out>.critic)")->required();
  tgan->add_option("--history", history, "History CSV (default: <out>.history.csv)");

  auto* tparcel = app.add_subcommand("train-parcel", "Train the parcellation net on labelled volumes");
  tparcel->add_option("--config", config_path, "key=value config file")->required();
  tparcel->add_option("--data", data, "Directory of volumes with .labels.raw files")->required();
  tparcel->add_option("--out", out, "Output parameter file")->required();

  // blend
  auto* blend = app.add_subcommand("blend", "alpha * psnr + (1 - alpha) * gan, per parameter");
  std::string psnr_ckpt, gan_ckpt;
  double alpha = 0.5;
  blend->add_option("--psnr", psnr_ckpt, "PSNR-stage checkpoint")->required();
  blend->add_option("--gan", gan_ckpt, "GAN-stage checkpoint")->required();
  blend->add_option("--alpha", alpha, "Weight of the PSNR model")->required()->check(CLI::Range(0.0, 1.0));
  blend->add_option("--out", out, "Output parameter file")->required();

  // sr
  auto* sr = app.add_subcommand("sr", "Super-resolve a volume patch by patch");
  std::string model, patch_text = "64,40,64";
  int crop = 3;
  sr->add_option("--model", model, "Generator checkpoint")->required();
  sr->add_option("--in", in, "Input volume")->required();
  sr->add_option("--out", out, "Output volume")->required();
  sr->add_option("--patch", patch_text, "Input patch pd,ph,pw");
  sr->add_option("--crop", crop, "Voxels cropped per output face");

  // eval
  auto* ev = app.add_subcommand("eval", "SSIM, PSNR, NRMSE, M_h and Dice for one pair");
  std::string sr_path, hr_path, labels_path, parcel_path, weights_path;
  ev->add_option("--sr", sr_path, "Super-resolved volume")->required();
  ev->add_option("--hr", hr_path, "Reference volume")->required();
  ev->add_option("--labels", labels_path, "Volume whose .labels.raw holds ground-truth labels");
  ev->add_option("--parcel", parcel_path, "Parcellation parameters")->required();
  ev->add_option("--weights", weights_path, "Fidelity weights file")->required();
  ev->add_option("--out", out, "Report CSV")->required();

  // calibrate-mh
  auto* cal = app.add_subcommand("calibrate-mh", "Fidelity weights from NAME_sr / NAME_hr pairs");
  std::string pairs_dir;
  cal->add_option("--parcel", parcel_path, "Parcellation parameters")->required();
  cal->add_option("--pairs", pairs_dir, "Directory with NAME_sr and NAME_hr volumes")->required();
  cal->add_option("--out", out, "Weights file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (!out.empty() && !*synth && fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());

  if (*synth) {
    fs::create_directories(out);
    PhantomSpec spec;
    spec.shape = parse_extent(shape_text);
    spec.n_tissues = tissues;
    spec.texture_amplitude = texture;
    for (int i = 0; i < count; ++i) {
      spec.seed = seed + static_cast<std::uint64_t>(i);
      const auto [vol, labels] = gen_phantom(spec);
      char name[32];
      std::snprintf(name, sizeof name, "phantom_%04d", i);
      write_volume(vol, fs::path(out) / name);
      write_labels(labels, fs::path(out) / name);
    }
    return 0;
  }
  if (*deg) {
    DegradeSpec spec;
    spec.axes = parse_axes(axes_text);
    spec.factor = factor;
    DegradeDiagnostics diag;
    write_volume(degrade(read_volume(volume_base_path(in)), spec, &diag), volume_base_path(out));
    std::cerr << "max imaginary residue " << diag.max_imag_residue << '\n';
    return 0;
  }
  if (*tpsnr) {
    const RunConfig cfg = load_config(config_path);
    const auto d = load_training_data(data, cfg.degrade);
    std::optional<ag::ParamSet<float>> start;
    if (!init.empty()) start = train::load_checkpoint(init).params;
    const auto every = std::max<std::int64_t>(1, cfg.train.steps / 20);
    const auto res = train::train_psnr(d, cfg.train, cfg.generator, start,
                                       [&](const train::TrainRecord& r) { print_progress(r, every); });
    train::save_checkpoint(out, res.generator, res.adam, cfg.train.steps);
    res.history.write_csv(history.empty() ? out + ".history.csv" : history);
    return 0;
  }
  if (*tgan) {
    const RunConfig cfg = load_config(config_path);
    const auto d = load_training_data(data, cfg.degrade);
    std::optional<ag::ParamSet<float>> critic;
    if (!disc_init.empty()) critic = train::load_checkpoint(disc_init).params;
    const auto every = std::max<std::int64_t>(1, cfg.train.steps * (cfg.train.n_critic + 1) / 20);
    const auto res = train::train_gan(train::load_checkpoint(init).params, d, cfg.train, cfg.discriminator, critic,
                                      [&](const train::TrainRecord& r) { print_progress(r, every); });
    train::save_checkpoint(out, res.generator, res.adam, cfg.train.steps);
    train::save_checkpoint(out + ".critic", res.discriminator, res.disc_adam, cfg.train.steps);
    res.history.write_csv(history.empty() ? out + ".history.csv" : history);
    return 0;
  }
  if (*tparcel) {
    const RunConfig cfg = load_config(config_path);
    std::vector<Volume> vols;
    std::vector<LabelVolume> labels;
    for (const auto& base : volumes_in(data)) {
      if (!fs::exists(base.string() + ".labels.raw")) continue;
      vols.push_back(read_volume(base));
      labels.push_back(read_labels(base, cfg.parcel.n_classes));
    }
    if (vols.empty()) throw ValidationError("no labelled volumes in " + data);
    ag::save_paramset(train::train_parcellation(vols, labels, cfg.parcel, cfg.parcel_train), out);
    return 0;
  }
  if (*blend) {
    const auto a = train::load_checkpoint(psnr_ckpt).params;
    const auto b = train::load_checkpoint(gan_ckpt).params;
    ag::save_paramset(train::blend_params(a, b, alpha), out);
    return 0;
  }
  if (*sr) {
    const auto gen = train::load_checkpoint(model).params;
    const Volume vol = read_volume(volume_base_path(in));
    write_volume(pipeline::super_resolve(vol, gen, {parse_extent(patch_text), crop}), volume_base_path(out));
    return 0;
  }
  if (*ev) {
    const auto parcel = ag::load_paramset(parcel_path);
    const Volume a = read_volume(volume_base_path(sr_path));
    const Volume b = read_volume(volume_base_path(hr_path));
    std::optional<LabelVolume> labels;
    if (!labels_path.empty())
      labels = read_labels(volume_base_path(labels_path), nets::parcel_config_from_meta(parcel.meta).n_classes);
    const auto report = metrics::evaluate_pair(a, b, labels ? &*labels : nullptr, parcel,
                                               metrics::FidelityWeights::read(weights_path));
    metrics::write_report_csv(out, {{volume_base_path(sr_path).filename().string(), report}});
    return 0;
  }
  if (*cal) {
    const auto parcel = ag::load_paramset(parcel_path);
    std::vector<std::pair<Volume, Volume>> pairs;
    for (const auto& base : volumes_in(pairs_dir)) {
      const std::string name = base.string();
      if (!ends_with(name, "_hr")) continue;
      const fs::path partner = name.substr(0, name.size() - 3) + "_sr";
      if (!fs::exists(partner.string() + ".meta")) throw IoError("missing " + partner.string() + ".meta");
      pairs.emplace_back(read_volume(partner), read_volume(base));
    }
    if (pairs.empty()) throw ValidationError("no NAME_hr / NAME_sr pairs in " + pairs_dir);
    std::vector<std::string> warnings;
    const auto w = metrics::calibrate_fidelity_weights(parcel, pairs, &warnings);
    for (const auto& msg : warnings) std::cerr << "warning: " << msg << '\n';
    w.write(out);
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 4;
  }
}
