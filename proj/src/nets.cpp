#include "mrisr/nets.hpp"

#include <cstdio>

#include "mrisr/rng.hpp"

namespace mrisr::nets {

NormKind parse_norm(const std::string& s) {
  if (s == "none") return NormKind::none;
  if (s == "batch") return NormKind::batch;
  if (s == "instance") return NormKind::instance;
  if (s == "layer") return NormKind::layer;
  throw ValidationError("unknown norm '" + s + "' (expected none, batch, instance or layer)");
}

std::string to_string(NormKind k) {
  switch (k) {
    case NormKind::none: return "none";
    case NormKind::batch: return "batch";
    case NormKind::instance: return "instance";
    case NormKind::layer: return "layer";
  }
  return "none";
}

void RRDGConfig::validate() const {
  if (n_c < 1) throw ValidationError("n_c must be >= 1");
  if (k < 1 || n_f < k) throw ValidationError("need n_f >= k >= 1");
  if (!(beta > 0.0 && beta <= 1.0)) throw ValidationError("beta must lie in (0, 1]");
  if (layers_per_dense_block < 1) throw ValidationError("layers_per_dense_block must be >= 1");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ValidationError("leaky_slope must lie in [0, 1)");
}

void DiscConfig::validate() const {
  if (base_channels < 1) throw ValidationError("base_channels must be >= 1");
  if (n_plain_blocks < 0) throw ValidationError("n_plain_blocks must be >= 0");
  if (norm == NormKind::batch) throw ValidationError("discriminator norm must be layer, instance or none");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ValidationError("leaky_slope must lie in [0, 1)");
}

int DiscConfig::receptive_field() const {
  // (kernel, stride) per layer; rf grows by (k-1)*jump, jump multiplies by stride.
  std::vector<std::pair<int, int>> layers{{3, 1}};
  for (int i = 0; i < n_strided_blocks; ++i) layers.emplace_back(3, 2);
  for (int i = 0; i < n_plain_blocks; ++i) layers.emplace_back(3, 1);
  layers.emplace_back(1, 1);
  int rf = 1, jump = 1;
  for (const auto& [k, s] : layers) {
    rf += (k - 1) * jump;
    jump *= s;
  }
  return rf;
}

void ParcelConfig::validate() const {
  if (n_classes < 2) throw ValidationError("n_classes must be >= 2");
  if (channels < 1) throw ValidationError("channels must be >= 1");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ValidationError("leaky_slope must lie in [0, 1)");
}

namespace {

using Arr = Eigen::ArrayXf;

class Builder {
 public:
  Builder(std::uint64_t seed, std::string_view stream) : rng_(derive_seed(seed, stream)) {}

  void conv(const std::string& name, int co, int ci, int k, double gain = 1.0) {
    Arr w(static_cast<Eigen::Index>(co) * ci * k * k * k);
    for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = static_cast<float>(gain * rng_.truncated_normal(0.02));
    out.add(name + ".weight", Tensor<float>({co, ci, k, k, k}, std::move(w)));
    out.add(name + ".bias", Tensor<float>::zeros({co}));
  }

  void norm(const std::string& name, int c, NormKind kind) {
    if (kind == NormKind::none) return;
    out.add(name + ".scale", Tensor<float>::ones({c}));
    out.add(name + ".shift", Tensor<float>::zeros({c}));
    if (kind == NormKind::batch) {
      out.add(name + ".running_mean", Tensor<float>::zeros({c}), false);
      out.add(name + ".running_var", Tensor<float>::ones({c}), false);
    }
  }

  ParamSet<float> out;

 private:
  Rng rng_;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const std::string& need(const std::map<std::string, std::string>& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) throw ValidationError("parameter file lacks network key '" + key + "'");
  return it->second;
}

int need_int(const std::map<std::string, std::string>& m, const std::string& key) {
  try {
    return std::stoi(need(m, key));
  } catch (const std::logic_error&) {
    throw ValidationError("network key '" + key + "' is not an integer");
  }
}

double need_double(const std::map<std::string, std::string>& m, const std::string& key) {
  try {
    return std::stod(need(m, key));
  } catch (const std::logic_error&) {
    throw ValidationError("network key '" + key + "' is not a number");
  }
}

void expect_net(const std::map<std::string, std::string>& m, const std::string& net) {
  if (need(m, "net") != net)
    throw ValidationError("parameter file holds a '" + need(m, "net") + "' network, expected '" + net + "'");
}

}  // namespace

namespace detail {

std::vector<std::string> dense_block_param_names(const std::string& prefix, const RRDGConfig& cfg) {
  std::vector<std::string> names;
  for (int l = 0; l < cfg.layers_per_dense_block; ++l) {
    const std::string layer = prefix + ".layer" + std::to_string(l);
    names.push_back(layer + ".weight");
    names.push_back(layer + ".bias");
    if (cfg.norm != NormKind::none) {
      names.push_back(layer + ".norm.scale");
      names.push_back(layer + ".norm.shift");
    }
    if (cfg.norm == NormKind::batch) {
      names.push_back(layer + ".norm.running_mean");
      names.push_back(layer + ".norm.running_var");
    }
  }
  names.push_back(prefix + ".fusion.weight");
  names.push_back(prefix + ".fusion.bias");
  return names;
}

}  // namespace detail

ParamSet<float> build_rrdg(const RRDGConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Builder b(seed, "rrdg");
  b.conv("head", cfg.n_f, 1, 3);
  for (int i = 0; i < cfg.n_c; ++i)
    for (int j = 0; j < 3; ++j) {
      const std::string db = "rrdb" + std::to_string(i) + ".db" + std::to_string(j);
      for (int l = 0; l < cfg.layers_per_dense_block; ++l) {
        const std::string layer = db + ".layer" + std::to_string(l);
        b.conv(layer, cfg.k, cfg.n_f + l * cfg.k, 3);
        b.norm(layer + ".norm", cfg.k, cfg.norm);
      }
      b.conv(db + ".fusion", cfg.n_f, cfg.n_f + cfg.layers_per_dense_block * cfg.k, 3, 0.1);
    }
  b.conv("tail", 1, cfg.n_f, 3, 0.1);
  b.out.meta = to_meta(cfg);
  return std::move(b.out);
}

std::int64_t rrdg_parameter_count(const RRDGConfig& cfg) {
  cfg.validate();
  auto conv = [](std::int64_t co, std::int64_t ci) { return co * ci * 27 + co; };
  const std::int64_t norm = cfg.norm == NormKind::none ? 0 : 2;
  std::int64_t db = conv(cfg.n_f, cfg.n_f + std::int64_t{cfg.layers_per_dense_block} * cfg.k);
  for (int l = 0; l < cfg.layers_per_dense_block; ++l) db += conv(cfg.k, cfg.n_f + l * cfg.k) + norm * cfg.k;
  return conv(cfg.n_f, 1) + std::int64_t{cfg.n_c} * 3 * db + conv(1, cfg.n_f);
}

ParamSet<float> build_discriminator(const DiscConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Builder b(seed, "discriminator");
  int c = cfg.base_channels;
  b.conv("d.init", c, 1, 3);
  for (int i = 0; i < DiscConfig::n_strided_blocks; ++i) {
    const std::string name = "d.down" + std::to_string(i);
    b.conv(name, 2 * c, c, 3);
    c *= 2;
    b.norm(name + ".norm", c, cfg.norm);
  }
  for (int i = 0; i < cfg.n_plain_blocks; ++i) {
    const std::string name = "d.plain" + std::to_string(i);
    b.conv(name, c, c, 3);
    b.norm(name + ".norm", c, cfg.norm);
  }
  b.conv("d.final", 1, c, 1);
  b.out.meta = to_meta(cfg);
  return std::move(b.out);
}

ParamSet<float> build_parcellation_net(const ParcelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Builder b(seed, "parcellation");
  const int c = cfg.channels;
  // He-like scale keeps the residual stack trainable from a cold start.
  const double gain3 = std::sqrt(2.0 / (27.0 * c)) / 0.02;
  b.conv("p.primary", c, 1, 3, std::sqrt(2.0 / 27.0) / 0.02);
  for (int i = 0; i < 3; ++i) {
    const std::string name = "p.res" + std::to_string(i);
    b.conv(name + ".conv0", c, c, 3, gain3);
    b.conv(name + ".conv1", c, c, 3, 0.1 * gain3);
  }
  b.conv("p.final0", c, c, 1, std::sqrt(2.0 / c) / 0.02);
  b.conv("p.final1", cfg.n_classes, c, 1, std::sqrt(1.0 / c) / 0.02);
  b.out.meta = to_meta(cfg);
  return std::move(b.out);
}

std::map<std::string, std::string> to_meta(const RRDGConfig& cfg) {
  return {{"net", "rrdg"},
          {"n_c", std::to_string(cfg.n_c)},
          {"n_f", std::to_string(cfg.n_f)},
          {"k", std::to_string(cfg.k)},
          {"beta", fmt(cfg.beta)},
          {"layers_per_dense_block", std::to_string(cfg.layers_per_dense_block)},
          {"norm", to_string(cfg.norm)},
          {"leaky_slope", fmt(cfg.leaky_slope)}};
}

std::map<std::string, std::string> to_meta(const DiscConfig& cfg) {
  return {{"net", "discriminator"},
          {"base_channels", std::to_string(cfg.base_channels)},
          {"n_plain_blocks", std::to_string(cfg.n_plain_blocks)},
          {"norm", to_string(cfg.norm)},
          {"leaky_slope", fmt(cfg.leaky_slope)}};
}

std::map<std::string, std::string> to_meta(const ParcelConfig& cfg) {
  return {{"net", "parcellation"},
          {"n_classes", std::to_string(cfg.n_classes)},
          {"channels", std::to_string(cfg.channels)},
          {"leaky_slope", fmt(cfg.leaky_slope)}};
}

RRDGConfig rrdg_config_from_meta(const std::map<std::string, std::string>& m) {
  expect_net(m, "rrdg");
  RRDGConfig c;
  c.n_c = need_int(m, "n_c");
  c.n_f = need_int(m, "n_f");
  c.k = need_int(m, "k");
  c.beta = need_double(m, "beta");
  c.layers_per_dense_block = need_int(m, "layers_per_dense_block");
  c.norm = parse_norm(need(m, "norm"));
  c.leaky_slope = need_double(m, "leaky_slope");
  c.validate();
  return c;
}

DiscConfig disc_config_from_meta(const std::map<std::string, std::string>& m) {
  expect_net(m, "discriminator");
  DiscConfig c;
  c.base_channels = need_int(m, "base_channels");
  c.n_plain_blocks = need_int(m, "n_plain_blocks");
  c.norm = parse_norm(need(m, "norm"));
  c.leaky_slope = need_double(m, "leaky_slope");
  c.validate();
  return c;
}

ParcelConfig parcel_config_from_meta(const std::map<std::string, std::string>& m) {
  expect_net(m, "parcellation");
  ParcelConfig c;
  c.n_classes = need_int(m, "n_classes");
  c.channels = need_int(m, "channels");
  c.leaky_slope = need_double(m, "leaky_slope");
  c.validate();
  return c;
}

}  // namespace mrisr::nets
