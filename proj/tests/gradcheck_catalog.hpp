#pragma once

// Randomized finite-difference cases for every differentiable op and every
// composite network. Shared by the unit suite and the acceptance binary.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mrisr/nets.hpp"
#include "support.hpp"

namespace testsupport {

using Fn = std::function<TD(const std::vector<TD>&)>;

struct GradInstance {
  std::vector<TD> inputs;
  Fn f;
};

struct GradCase {
  std::string name;
  std::function<GradInstance(mrisr::Rng&)> make;
};

namespace detail {

inline int pick(mrisr::Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.index(hi - lo + 1)); }

inline Shape small5(mrisr::Rng& rng, int c = -1) {
  return {pick(rng, 1, 2), c > 0 ? c : pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
}

/// Values bounded away from zero in magnitude, for ops with a kink or a pole at 0.
inline TD away_from_zero(mrisr::Rng& rng, const Shape& s, double lo, double hi, bool allow_negative) {
  Eigen::ArrayXd v(mrisr::ag::numel(s));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    v[i] = rng.uniform(lo, hi);
    if (allow_negative && rng.uniform() < 0.5) v[i] = -v[i];
  }
  return TD(s, std::move(v), true);
}

inline mrisr::ag::ConvGeom random_geom(mrisr::Rng& rng, Shape& ws, int ci, int co) {
  mrisr::ag::ConvGeom g;
  switch (rng.index(5)) {
    case 0:  // 3^3 same padding, stride 1 (shifted-GEMM path)
      ws = {co, ci, 3, 3, 3};
      g = mrisr::ag::ConvGeom::same(3);
      break;
    case 1:  // strided (im2col path)
      ws = {co, ci, 3, 3, 3};
      g = mrisr::ag::ConvGeom::strided(3, 2);
      break;
    case 2:  // pointwise
      ws = {co, ci, 1, 1, 1};
      break;
    case 3:  // dilated
      ws = {co, ci, 3, 3, 3};
      g = mrisr::ag::ConvGeom::same(3, 2);
      break;
    default:  // anisotropic kernel, mixed stride and padding
      ws = {co, ci, 2, 3, 1};
      g.stride = {1, 2, 1};
      g.pad = {1, 0, 1};
      break;
  }
  return g;
}

template <typename Net>
GradInstance net_instance(mrisr::Rng& rng, mrisr::ag::ParamSet<double> params, const Shape& xs, Net net) {
  // Rescale the small builder init so every layer carries signal.
  for (auto& e : params.entries()) {
    if (!e.trainable) continue;
    auto& v = e.tensor.mutable_values();
    const bool affine_scale = e.name.size() > 6 && e.name.compare(e.name.size() - 6, 6, ".scale") == 0;
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = affine_scale ? rng.uniform(0.5, 1.5) : rng.uniform(-0.4, 0.4);
  }
  GradInstance inst;
  inst.inputs.push_back(random_tensor(rng, xs));
  std::vector<std::string> names;
  std::vector<bool> trainable;
  for (const auto& e : params.entries()) {
    names.push_back(e.name);
    trainable.push_back(e.trainable);
    inst.inputs.push_back(e.tensor);
  }
  auto meta = params.meta;
  inst.f = [names, trainable, meta, net](const std::vector<TD>& in) {
    mrisr::ag::ParamSet<double> p;
    p.meta = meta;
    for (std::size_t i = 0; i < names.size(); ++i) p.add(names[i], in[i + 1], trainable[i]);
    return net(in[0], p);
  };
  return inst;
}

}  // namespace detail

inline std::vector<GradCase> op_cases() {
  namespace ag = mrisr::ag;
  using detail::pick;
  using detail::small5;
  std::vector<GradCase> cases;
  auto unary = [&](std::string name, std::function<TD(const TD&)> op, std::function<TD(mrisr::Rng&, const Shape&)> gen) {
    cases.push_back({std::move(name), [op, gen](mrisr::Rng& rng) {
                       const Shape s = small5(rng);
                       return GradInstance{{gen(rng, s)}, [op](const std::vector<TD>& in) { return op(in[0]); }};
                     }});
  };
  auto plain = [](mrisr::Rng& rng, const Shape& s) { return random_tensor(rng, s); };

  cases.push_back({"add", [](mrisr::Rng& rng) {
                     const Shape s = small5(rng);
                     return GradInstance{{random_tensor(rng, s), random_tensor(rng, s)},
                                         [](const std::vector<TD>& in) { return ag::add(in[0], in[1]); }};
                   }});
  cases.push_back({"sub", [](mrisr::Rng& rng) {
                     const Shape s = small5(rng);
                     return GradInstance{{random_tensor(rng, s), random_tensor(rng, s)},
                                         [](const std::vector<TD>& in) { return ag::sub(in[0], in[1]); }};
                   }});
  cases.push_back({"mul", [](mrisr::Rng& rng) {
                     const Shape s = small5(rng);
                     return GradInstance{{random_tensor(rng, s), random_tensor(rng, s)},
                                         [](const std::vector<TD>& in) { return ag::mul(in[0], in[1]); }};
                   }});
  unary("identity", [](const TD& x) { return ag::identity(x); }, plain);
  unary("scale", [](const TD& x) { return ag::scale(x, -1.7); }, plain);
  unary("add_scalar", [](const TD& x) { return ag::add_scalar(x, 0.3); }, plain);
  cases.push_back({"mul_const", [](mrisr::Rng& rng) {
                     const Shape s = small5(rng);
                     auto c = std::make_shared<const Eigen::ArrayXd>(random_tensor(rng, s, 2.0, false).values());
                     return GradInstance{{random_tensor(rng, s)},
                                         [c](const std::vector<TD>& in) { return ag::mul_const(in[0], c); }};
                   }});
  unary("leaky_relu", [](const TD& x) { return ag::leaky_relu(x, 0.2); }, plain);
  unary("abs", [](const TD& x) { return ag::abs(x); }, plain);
  unary("pow", [](const TD& x) { return ag::pow(x, 2.5); },
        [](mrisr::Rng& rng, const Shape& s) { return detail::away_from_zero(rng, s, 0.5, 1.5, false); });
  unary("pow_negative", [](const TD& x) { return ag::pow(x, -0.5); },
        [](mrisr::Rng& rng, const Shape& s) { return detail::away_from_zero(rng, s, 0.5, 1.5, false); });
  unary("sqrt", [](const TD& x) { return ag::sqrt(x); },
        [](mrisr::Rng& rng, const Shape& s) { return detail::away_from_zero(rng, s, 0.5, 2.0, false); });
  unary("reshape", [](const TD& x) { return ag::reshape(x, {static_cast<int>(x.numel())}); }, plain);
  unary("sum_all", [](const TD& x) { return ag::sum_all(x); }, plain);
  unary("mean_all", [](const TD& x) { return ag::mean_all(x); }, plain);
  cases.push_back({"sum_to", [](mrisr::Rng& rng) {
                     const Shape s = small5(rng);
                     Shape t = s;
                     for (auto& d : t)
                       if (rng.uniform() < 0.5) d = 1;
                     return GradInstance{{random_tensor(rng, s)},
                                         [t](const std::vector<TD>& in) { return ag::sum_to(in[0], t); }};
                   }});
  cases.push_back({"broadcast_to", [](mrisr::Rng& rng) {
                     const Shape s = small5(rng);
                     Shape t = s;
                     for (auto& d : t)
                       if (rng.uniform() < 0.5) d = 1;
                     return GradInstance{{random_tensor(rng, t)},
                                         [s](const std::vector<TD>& in) { return ag::broadcast_to(in[0], s); }};
                   }});
  cases.push_back({"concat_channels", [](mrisr::Rng& rng) {
                     Shape a = small5(rng), b = a;
                     b[1] = pick(rng, 1, 3);
                     return GradInstance{{random_tensor(rng, a), random_tensor(rng, b)}, [](const std::vector<TD>& in) {
                                           return ag::concat_channels<double>({in[0], in[1], in[0]});
                                         }};
                   }});
  cases.push_back({"narrow_channels", [](mrisr::Rng& rng) {
                     const Shape s = small5(rng, pick(rng, 2, 4));
                     const int start = pick(rng, 0, s[1] - 1), len = pick(rng, 1, s[1] - start);
                     return GradInstance{{random_tensor(rng, s)}, [start, len](const std::vector<TD>& in) {
                                           return ag::narrow_channels(in[0], start, len);
                                         }};
                   }});
  cases.push_back({"embed_channels", [](mrisr::Rng& rng) {
                     const Shape s = small5(rng);
                     const int total = s[1] + pick(rng, 0, 2), start = pick(rng, 0, total - s[1]);
                     return GradInstance{{random_tensor(rng, s)}, [total, start](const std::vector<TD>& in) {
                                           return ag::embed_channels(in[0], total, start);
                                         }};
                   }});
  cases.push_back({"conv3d", [](mrisr::Rng& rng) {
                     const int ci = pick(rng, 1, 3), co = pick(rng, 1, 3);
                     Shape ws;
                     const auto g = detail::random_geom(rng, ws, ci, co);
                     const Shape xs{pick(rng, 1, 2), ci, pick(rng, 3, 5), pick(rng, 3, 5), pick(rng, 3, 5)};
                     return GradInstance{{random_tensor(rng, xs), random_tensor(rng, ws), random_tensor(rng, {co})},
                                         [g](const std::vector<TD>& in) { return ag::conv3d(in[0], in[1], in[2], g); }};
                   }});
  cases.push_back({"conv3d_input_grad", [](mrisr::Rng& rng) {
                     const int ci = pick(rng, 1, 3), co = pick(rng, 1, 3);
                     Shape ws;
                     const auto g = detail::random_geom(rng, ws, ci, co);
                     const Shape xs{pick(rng, 1, 2), ci, pick(rng, 3, 5), pick(rng, 3, 5), pick(rng, 3, 5)};
                     const Shape ys = ag::conv_output_shape(xs, ws, g);
                     return GradInstance{{random_tensor(rng, ys), random_tensor(rng, ws)},
                                         [g, xs](const std::vector<TD>& in) {
                                           return ag::conv3d_input_grad(in[0], in[1], xs, g);
                                         }};
                   }});
  cases.push_back({"conv3d_weight_grad", [](mrisr::Rng& rng) {
                     const int ci = pick(rng, 1, 3), co = pick(rng, 1, 3);
                     Shape ws;
                     const auto g = detail::random_geom(rng, ws, ci, co);
                     const Shape xs{pick(rng, 1, 2), ci, pick(rng, 3, 5), pick(rng, 3, 5), pick(rng, 3, 5)};
                     const Shape ys = ag::conv_output_shape(xs, ws, g);
                     return GradInstance{{random_tensor(rng, xs), random_tensor(rng, ys)},
                                         [g, ws](const std::vector<TD>& in) {
                                           return ag::conv3d_weight_grad(in[0], in[1], ws, g);
                                         }};
                   }});
  cases.push_back({"channel_affine", [](mrisr::Rng& rng) {
                     const Shape s = small5(rng);
                     return GradInstance{
                         {random_tensor(rng, s), random_tensor(rng, {s[1]}), random_tensor(rng, {s[1]})},
                         [](const std::vector<TD>& in) { return ag::channel_affine(in[0], in[1], in[2]); }};
                   }});
  for (auto mode : {ag::NormMode::batch, ag::NormMode::instance, ag::NormMode::layer}) {
    const std::string name = mode == ag::NormMode::batch      ? "normalize_batch"
                             : mode == ag::NormMode::instance ? "normalize_instance"
                                                              : "normalize_layer";
    cases.push_back({name, [mode](mrisr::Rng& rng) {
                       const Shape s{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, 3), pick(rng, 2, 3), pick(rng, 2, 3)};
                       Eigen::ArrayXd scale(s[1]);
                       for (auto& v : scale) v = rng.uniform(0.5, 1.5);
                       return GradInstance{{random_tensor(rng, s), TD({s[1]}, scale, true), random_tensor(rng, {s[1]})},
                                           [mode](const std::vector<TD>& in) {
                                             return ag::normalize(in[0], mode, in[1], in[2], 1e-5);
                                           }};
                     }});
  }
  cases.push_back({"normalize_fixed", [](mrisr::Rng& rng) {
                     const Shape s = small5(rng);
                     Eigen::ArrayXd mean(s[1]), var(s[1]);
                     for (int c = 0; c < s[1]; ++c) {
                       mean[c] = rng.uniform(-0.5, 0.5);
                       var[c] = rng.uniform(0.2, 2.0);
                     }
                     return GradInstance{
                         {random_tensor(rng, s), random_tensor(rng, {s[1]}), random_tensor(rng, {s[1]})},
                         [mean, var](const std::vector<TD>& in) {
                           return ag::normalize_fixed<double>(in[0], mean, var, in[1], in[2], 1e-5);
                         }};
                   }});
  unary("global_mean_pool", [](const TD& x) { return ag::global_mean_pool(x); }, plain);
  cases.push_back({"cross_entropy", [](mrisr::Rng& rng) {
                     const Shape s = small5(rng, pick(rng, 2, 4));
                     std::vector<int> labels(static_cast<std::size_t>(s[0] * s[2] * s[3] * s[4]));
                     for (auto& l : labels) l = static_cast<int>(rng.index(s[1]));
                     return GradInstance{{random_tensor(rng, s, 2.0)}, [labels](const std::vector<TD>& in) {
                                           return ag::cross_entropy(in[0], labels);
                                         }};
                   }});
  cases.push_back({"checkpoint", [](mrisr::Rng& rng) {
                     const int ci = pick(rng, 1, 2);
                     const Shape xs{1, ci, 3, 3, 3};
                     return GradInstance{{random_tensor(rng, xs), random_tensor(rng, {2, ci, 3, 3, 3}),
                                          random_tensor(rng, {2})},
                                         [](const std::vector<TD>& in) {
                                           ag::SegmentFn<double> seg = [](const std::vector<TD>& s) {
                                             return ag::leaky_relu(
                                                 ag::conv3d(s[0], s[1], s[2], ag::ConvGeom::same(3)), 0.2);
                                           };
                                           return ag::checkpoint<double>(seg, in);
                                         }};
                   }});
  // Second order: the input gradient of a small critic, itself differentiated.
  cases.push_back({"double_backward", [](mrisr::Rng& rng) {
                     const Shape xs{pick(rng, 1, 2), 1, 4, 4, 4};
                     return GradInstance{
                         {random_tensor(rng, xs), random_tensor(rng, {2, 1, 3, 3, 3}), random_tensor(rng, {2}),
                          random_tensor(rng, {2}, 0.5), random_tensor(rng, {1, 2, 1, 1, 1})},
                         [](const std::vector<TD>& in) {
                           ag::GradModeGuard record(true);
                           TD h = ag::conv3d(in[0], in[1], in[2], ag::ConvGeom::strided(3, 2));
                           h = ag::normalize(h, ag::NormMode::layer, ag::add_scalar(in[3], 1.0), in[2], 1e-5);
                           h = ag::leaky_relu(h, 0.2);
                           h = ag::conv3d_nobias(h, in[4], ag::ConvGeom{});
                           const TD d = ag::sum_all(ag::global_mean_pool(h));
                           return ag::grad<double>({d}, {in[0]}, {}, true)[0];
                         }};
                   }});
  return cases;
}

inline std::vector<GradCase> net_cases() {
  namespace nets = mrisr::nets;
  std::vector<GradCase> cases;
  cases.push_back({"rrdb", [](mrisr::Rng& rng) {
                     nets::RRDGConfig cfg;
                     cfg.n_c = 1;
                     cfg.n_f = 2;
                     cfg.k = 1;
                     cfg.layers_per_dense_block = 2;
                     cfg.norm = nets::NormKind::instance;
                     auto p = mrisr::ag::cast<double>(nets::build_rrdg(cfg, rng.next_u64()).subset("rrdb0"));
                     return detail::net_instance(rng, p, {1, 2, 3, 3, 3}, [cfg](const TD& x, mrisr::ag::ParamSet<double>& ps) {
                       return nets::rrdb_forward(x, ps, "rrdb0", cfg);
                     });
                   }});
  cases.push_back({"rrdg", [](mrisr::Rng& rng) {
                     nets::RRDGConfig cfg;
                     cfg.n_c = 1;
                     cfg.n_f = 2;
                     cfg.k = 1;
                     cfg.layers_per_dense_block = 2;
                     cfg.norm = nets::NormKind::batch;
                     auto p = mrisr::ag::cast<double>(nets::build_rrdg(cfg, rng.next_u64()));
                     return detail::net_instance(rng, p, {2, 1, 3, 3, 3}, [cfg](const TD& x, mrisr::ag::ParamSet<double>& ps) {
                       nets::ForwardOptions o;
                       o.training = true;
                       return nets::rrdg_forward(x, ps, cfg, o);
                     });
                   }});
  cases.push_back({"rrdg_checkpointed", [](mrisr::Rng& rng) {
                     nets::RRDGConfig cfg;
                     cfg.n_c = 1;
                     cfg.n_f = 2;
                     cfg.k = 1;
                     cfg.layers_per_dense_block = 1;
                     cfg.norm = nets::NormKind::none;
                     auto p = mrisr::ag::cast<double>(nets::build_rrdg(cfg, rng.next_u64()));
                     return detail::net_instance(rng, p, {1, 1, 3, 3, 3}, [cfg](const TD& x, mrisr::ag::ParamSet<double>& ps) {
                       nets::ForwardOptions o;
                       o.checkpoint = true;
                       return nets::rrdg_forward(x, ps, cfg, o);
                     });
                   }});
  cases.push_back({"discriminator", [](mrisr::Rng& rng) {
                     nets::DiscConfig cfg;
                     cfg.base_channels = 1;
                     cfg.n_plain_blocks = 1;
                     cfg.norm = nets::NormKind::layer;
                     auto p = mrisr::ag::cast<double>(nets::build_discriminator(cfg, rng.next_u64()));
                     return detail::net_instance(rng, p, {2, 1, 6, 6, 6}, [cfg](const TD& x, mrisr::ag::ParamSet<double>& ps) {
                       return nets::discriminator_forward(x, ps, cfg);
                     });
                   }});
  cases.push_back({"parcellation", [](mrisr::Rng& rng) {
                     nets::ParcelConfig cfg;
                     cfg.n_classes = 3;
                     cfg.channels = 2;
                     auto p = mrisr::ag::cast<double>(nets::build_parcellation_net(cfg, rng.next_u64()));
                     return detail::net_instance(rng, p, {1, 1, 3, 3, 3}, [cfg](const TD& x, mrisr::ag::ParamSet<double>& ps) {
                       const auto out = nets::parcellation_forward(x, ps, cfg);
                       return mrisr::ag::concat_channels(out.features);
                     });
                   }});
  return cases;
}

struct CaseResult {
  std::string name;
  double worst_rel_error = 0.0;
  int skipped = 0;
  int checked = 0;
};

/// Runs `instances` random instances of a case; returns the worst error seen.
inline CaseResult run_case(const GradCase& c, int instances, std::uint64_t seed) {
  mrisr::Rng rng(mrisr::derive_seed(seed, c.name));
  CaseResult r{c.name};
  for (int i = 0; i < instances; ++i) {
    GradInstance inst = c.make(rng);
    const GradCheck g = grad_check(inst.f, inst.inputs, rng.next_u64());
    r.worst_rel_error = std::max(r.worst_rel_error, g.max_rel_error);
    r.skipped += g.skipped;
    r.checked += g.checked;
  }
  return r;
}

}  // namespace testsupport
