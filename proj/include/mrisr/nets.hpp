#pragma once

// Generator (RRDG), patch critic and toy parcellation network. Builders
// produce float ParamSets; forwards are templated so the same code runs in
// 64-bit for gradient verification (see ag::cast).

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mrisr/autograd.hpp"

namespace mrisr::nets {

using ag::ParamSet;
using ag::Shape;
using ag::Tensor;

enum class NormKind { none, batch, instance, layer };

NormKind parse_norm(const std::string& s);
std::string to_string(NormKind k);

struct RRDGConfig {
  int n_c = 4;                     // RRDB blocks
  int n_f = 48;                    // residual feature width
  int k = 12;                      // dense growth rate
  double beta = 0.2;               // residual scaling
  int layers_per_dense_block = 4;  // plus one fusion conv
  NormKind norm = NormKind::batch;
  double leaky_slope = 0.2;

  void validate() const;
};

struct DiscConfig {
  int base_channels = 16;
  int n_plain_blocks = 2;
  NormKind norm = NormKind::layer;
  double leaky_slope = 0.2;

  static constexpr int n_strided_blocks = 2;

  void validate() const;
  /// Receptive field (voxels per axis) of one pre-pool output.
  int receptive_field() const;
};

struct ParcelConfig {
  int n_classes = 4;
  int channels = 8;
  double leaky_slope = 0.2;

  static constexpr int n_taps = 6;

  void validate() const;
};

/// Per-forward behaviour switches.
struct ForwardOptions {
  bool training = false;              // batch norm: batch statistics instead of running ones
  bool update_running_stats = false;  // batch norm: fold batch statistics into the buffers
  bool checkpoint = false;            // recompute each dense block during backward
  bool verify_checkpoint = false;
  double bn_momentum = 0.1;
  /// Called with (location, activation shape) at every RRDB boundary.
  std::function<void(const std::string&, const Shape&)> probe;
};

inline constexpr double kNormEps = 1e-5;

// ---- builders -----------------------------------------------------------------

ParamSet<float> build_rrdg(const RRDGConfig& cfg, std::uint64_t seed);
ParamSet<float> build_discriminator(const DiscConfig& cfg, std::uint64_t seed);
ParamSet<float> build_parcellation_net(const ParcelConfig& cfg, std::uint64_t seed);

/// Closed-form parameter count of build_rrdg(cfg), trainable only.
std::int64_t rrdg_parameter_count(const RRDGConfig& cfg);

std::map<std::string, std::string> to_meta(const RRDGConfig& cfg);
std::map<std::string, std::string> to_meta(const DiscConfig& cfg);
std::map<std::string, std::string> to_meta(const ParcelConfig& cfg);
RRDGConfig rrdg_config_from_meta(const std::map<std::string, std::string>& meta);
DiscConfig disc_config_from_meta(const std::map<std::string, std::string>& meta);
ParcelConfig parcel_config_from_meta(const std::map<std::string, std::string>& meta);

// ---- forwards -----------------------------------------------------------------

namespace detail {

template <typename T>
Tensor<T> conv(const Tensor<T>& x, const ParamSet<T>& p, const std::string& name, const ag::ConvGeom& geom) {
  return ag::conv3d(x, p[name + ".weight"], p[name + ".bias"], geom);
}

template <typename T>
Tensor<T> norm_layer(const Tensor<T>& x, ParamSet<T>& p, const std::string& name, NormKind kind,
                     const ForwardOptions& o) {
  const T eps = static_cast<T>(kNormEps);
  switch (kind) {
    case NormKind::none:
      return x;
    case NormKind::instance:
      return ag::normalize(x, ag::NormMode::instance, p[name + ".scale"], p[name + ".shift"], eps);
    case NormKind::layer:
      return ag::normalize(x, ag::NormMode::layer, p[name + ".scale"], p[name + ".shift"], eps);
    case NormKind::batch:
      break;
  }
  if (!o.training)
    return ag::normalize_fixed(x, p[name + ".running_mean"].values(), p[name + ".running_var"].values(),
                               p[name + ".scale"], p[name + ".shift"], eps);
  if (o.update_running_stats) {
    const auto [mean, var] = ag::channel_moments(x);
    const T m = static_cast<T>(o.bn_momentum);
    auto& rm = p.at(name + ".running_mean").mutable_values();
    auto& rv = p.at(name + ".running_var").mutable_values();
    rm = (T(1) - m) * rm + m * mean;
    rv = (T(1) - m) * rv + m * var;
  }
  return ag::normalize(x, ag::NormMode::batch, p[name + ".scale"], p[name + ".shift"], eps);
}

/// Names of the tensors one dense block reads, in a fixed order.
std::vector<std::string> dense_block_param_names(const std::string& prefix, const RRDGConfig& cfg);

template <typename T>
Tensor<T> dense_block_body(const Tensor<T>& x_in, ParamSet<T>& p, const std::string& prefix, const RRDGConfig& cfg,
                           const ForwardOptions& o) {
  const T slope = static_cast<T>(cfg.leaky_slope);
  const Tensor<T> x = ag::identity(x_in);
  std::vector<Tensor<T>> feats{x};
  for (int l = 0; l < cfg.layers_per_dense_block; ++l) {
    const std::string name = prefix + ".layer" + std::to_string(l);
    const Tensor<T> in = feats.size() == 1 ? x : ag::concat_channels(feats);
    Tensor<T> y = conv(in, p, name, ag::ConvGeom::same(3));
    y = norm_layer(y, p, name + ".norm", cfg.norm, o);
    feats.push_back(ag::leaky_relu(y, slope));
  }
  return conv(ag::concat_channels(feats), p, prefix + ".fusion", ag::ConvGeom::same(3));
}

}  // namespace detail

/// One dense block: layers_per_dense_block conv-norm-leaky_relu layers with
/// input concatenation (growth k) and a fusion conv back to n_f channels.
template <typename T>
Tensor<T> dense_block_forward(const Tensor<T>& x, ParamSet<T>& p, const std::string& prefix, const RRDGConfig& cfg,
                              const ForwardOptions& o) {
  if (!o.checkpoint) return detail::dense_block_body(x, p, prefix, cfg, o);

  const auto names = detail::dense_block_param_names(prefix, cfg);
  std::vector<Tensor<T>> inputs{x};
  std::vector<bool> trainable;
  for (const auto& n : names) {
    inputs.push_back(p[n]);
    trainable.push_back(p[n].requires_grad());
  }
  auto first_call = std::make_shared<bool>(true);
  ag::SegmentFn<T> segment = [names, trainable, prefix, cfg, o, first_call](const std::vector<Tensor<T>>& in) {
    ParamSet<T> local;
    for (std::size_t i = 0; i < names.size(); ++i) local.add(names[i], in[i + 1], trainable[i]);
    ForwardOptions inner = o;
    inner.checkpoint = false;
    inner.update_running_stats = o.update_running_stats && *first_call;
    *first_call = false;
    return detail::dense_block_body(in[0], local, prefix, cfg, inner);
  };
  return ag::checkpoint<T>(segment, inputs, o.verify_checkpoint);
}

/// Residual-in-residual dense block:
///   t0 = x;  t_i = t_{i-1} + beta * DB_i(t_{i-1}), i = 1..3;  out = x + beta * t3.
template <typename T>
Tensor<T> rrdb_forward(const Tensor<T>& x, ParamSet<T>& p, const std::string& prefix, const RRDGConfig& cfg,
                       const ForwardOptions& o = {}) {
  if (x.rank() != 5 || x.dim(1) != cfg.n_f)
    throw ValidationError("rrdb expects " + std::to_string(cfg.n_f) + " channels, got shape " +
                          ag::to_string(x.shape()));
  const T beta = static_cast<T>(cfg.beta);
  Tensor<T> t = x;
  for (int i = 0; i < 3; ++i)
    t = ag::add(t, ag::scale(dense_block_forward(t, p, prefix + ".db" + std::to_string(i), cfg, o), beta));
  return ag::add(x, ag::scale(t, beta));
}

/// x + tail(RRDB_n(...RRDB_1(head(x)))), same grid in and out.
template <typename T>
Tensor<T> rrdg_forward(const Tensor<T>& x, ParamSet<T>& p, const RRDGConfig& cfg, const ForwardOptions& o = {}) {
  if (x.rank() != 5 || x.dim(1) != 1)
    throw ValidationError("generator expects N x 1 x D x H x W input, got " + ag::to_string(x.shape()));
  Tensor<T> f = detail::conv(x, p, "head", ag::ConvGeom::same(3));
  if (o.probe) o.probe("head", f.shape());
  for (int i = 0; i < cfg.n_c; ++i) {
    f = rrdb_forward(f, p, "rrdb" + std::to_string(i), cfg, o);
    if (o.probe) o.probe("rrdb" + std::to_string(i), f.shape());
  }
  return ag::add(x, detail::conv(f, p, "tail", ag::ConvGeom::same(3)));
}

/// Final one-channel critic map before pooling, N x 1 x d x h x w.
template <typename T>
Tensor<T> discriminator_map(const Tensor<T>& x, ParamSet<T>& p, const DiscConfig& cfg) {
  if (x.rank() != 5 || x.dim(1) != 1)
    throw ValidationError("discriminator expects N x 1 x D x H x W input, got " + ag::to_string(x.shape()));
  for (int a = 2; a < 5; ++a)
    if (x.dim(a) < 4) throw ValidationError("discriminator input must be at least 4 voxels per axis");
  const T slope = static_cast<T>(cfg.leaky_slope);
  const ForwardOptions o{};
  Tensor<T> h = ag::leaky_relu(detail::conv(x, p, "d.init", ag::ConvGeom::same(3)), slope);
  for (int i = 0; i < DiscConfig::n_strided_blocks; ++i) {
    const std::string name = "d.down" + std::to_string(i);
    h = detail::conv(h, p, name, ag::ConvGeom::strided(3, 2));
    h = ag::leaky_relu(detail::norm_layer(h, p, name + ".norm", cfg.norm, o), slope);
  }
  for (int i = 0; i < cfg.n_plain_blocks; ++i) {
    const std::string name = "d.plain" + std::to_string(i);
    h = detail::conv(h, p, name, ag::ConvGeom::same(3));
    h = ag::leaky_relu(detail::norm_layer(h, p, name + ".norm", cfg.norm, o), slope);
  }
  return detail::conv(h, p, "d.final", ag::ConvGeom{});
}

/// One critic score per sample (global mean of the final map), shape [N].
template <typename T>
Tensor<T> discriminator_forward(const Tensor<T>& x, ParamSet<T>& p, const DiscConfig& cfg) {
  const Tensor<T> m = discriminator_map(x, p, cfg);
  return ag::reshape(ag::global_mean_pool(m), {m.dim(0)});
}

template <typename T>
struct ParcelOutput {
  Tensor<T> logits;                 // N x n_classes x D x H x W
  std::vector<Tensor<T>> features;  // primary, res1, res2, res3, final1, final2
};

/// Primary conv, three dilated residual blocks (dilation 1, 2, 4), two 1x1x1 convs.
template <typename T>
ParcelOutput<T> parcellation_forward(const Tensor<T>& x, ParamSet<T>& p, const ParcelConfig& cfg) {
  if (x.rank() != 5 || x.dim(1) != 1)
    throw ValidationError("parcellation net expects N x 1 x D x H x W input, got " + ag::to_string(x.shape()));
  const T slope = static_cast<T>(cfg.leaky_slope);
  ParcelOutput<T> out;
  Tensor<T> h = ag::leaky_relu(detail::conv(x, p, "p.primary", ag::ConvGeom::same(3)), slope);
  out.features.push_back(h);
  for (int i = 0; i < 3; ++i) {
    const std::string name = "p.res" + std::to_string(i);
    const auto geom = ag::ConvGeom::same(3, 1 << i);
    Tensor<T> r = ag::leaky_relu(detail::conv(h, p, name + ".conv0", geom), slope);
    r = detail::conv(r, p, name + ".conv1", geom);
    h = ag::leaky_relu(ag::add(h, r), slope);
    out.features.push_back(h);
  }
  h = ag::leaky_relu(detail::conv(h, p, "p.final0", ag::ConvGeom{}), slope);
  out.features.push_back(h);
  out.logits = detail::conv(h, p, "p.final1", ag::ConvGeom{});
  out.features.push_back(out.logits);
  return out;
}

}  // namespace mrisr::nets
