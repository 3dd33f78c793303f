#include "mrisr/pipeline.hpp"

#include <string>

#include "mrisr/training.hpp"

namespace mrisr::pipeline {

namespace {

std::string extent(const Extent3& e) {
  return std::to_string(e[0]) + "x" + std::to_string(e[1]) + "x" + std::to_string(e[2]);
}

std::vector<int> axis_origins(int n, int t) {
  std::vector<int> out;
  for (int o = 0;; o += t) {
    if (o + t >= n) {
      out.push_back(n - t);
      break;
    }
    out.push_back(o);
  }
  return out;
}

int reflect(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

}  // namespace

PatchPlan plan_patches(const Extent3& volume_shape, const Extent3& patch_shape, int crop) {
  if (crop < 0) throw ValidationError("crop must be >= 0");
  PatchPlan plan;
  plan.volume_shape = volume_shape;
  plan.patch_shape = patch_shape;
  plan.crop = crop;
  plan.pad = {crop, crop, crop};
  for (int a = 0; a < 3; ++a) {
    if (volume_shape[a] < 1) throw ValidationError("volume extents must be positive");
    if (patch_shape[a] <= 2 * crop)
      throw ValidationError("patch " + extent(patch_shape) + " must exceed twice the crop (" + std::to_string(crop) +
                            ") on every axis");
    if (patch_shape[a] > volume_shape[a] + 2 * crop)
      throw ValidationError("patch " + extent(patch_shape) + " is larger than the padded volume");
    if (crop >= volume_shape[a] && crop > 0)
      throw ValidationError("crop must be smaller than every volume extent for reflection padding");
  }
  const Extent3 t = plan.tile_shape();
  const auto od = axis_origins(volume_shape[0], t[0]);
  const auto oh = axis_origins(volume_shape[1], t[1]);
  const auto ow = axis_origins(volume_shape[2], t[2]);
  plan.tiles_per_axis = {static_cast<int>(od.size()), static_cast<int>(oh.size()), static_cast<int>(ow.size())};
  for (int d : od)
    for (int h : oh)
      for (int w : ow) plan.grid.push_back({{d, h, w}, {d, h, w}});
  return plan;
}

Volume reflect_pad(const Volume& vol, const Extent3& pad) {
  for (int a = 0; a < 3; ++a)
    if (pad[a] < 0 || (pad[a] > 0 && pad[a] >= vol.shape[a]))
      throw ValidationError("reflection padding must be smaller than the volume extent");
  Volume out({vol.shape[0] + 2 * pad[0], vol.shape[1] + 2 * pad[1], vol.shape[2] + 2 * pad[2]}, vol.spacing);
  for (int d = 0; d < out.shape[0]; ++d) {
    const int sd = reflect(d - pad[0], vol.shape[0]);
    for (int h = 0; h < out.shape[1]; ++h) {
      const int sh = reflect(h - pad[1], vol.shape[1]);
      for (int w = 0; w < out.shape[2]; ++w) out(d, h, w) = vol(sd, sh, reflect(w - pad[2], vol.shape[2]));
    }
  }
  return out;
}

std::vector<Volume> extract(const Volume& vol, const PatchPlan& plan) {
  if (vol.shape != plan.volume_shape)
    throw ValidationError("volume " + extent(vol.shape) + " does not match the plan (" + extent(plan.volume_shape) + ")");
  const Volume padded = reflect_pad(vol, plan.pad);
  const auto [pd, ph, pw] = plan.patch_shape;
  std::vector<Volume> out;
  out.reserve(plan.grid.size());
  for (const auto& g : plan.grid) {
    Volume p(plan.patch_shape, vol.spacing);
    for (int d = 0; d < pd; ++d)
      for (int h = 0; h < ph; ++h)
        for (int w = 0; w < pw; ++w) p(d, h, w) = padded(g.input[0] + d, g.input[1] + h, g.input[2] + w);
    out.push_back(std::move(p));
  }
  return out;
}

Volume crop_center(const Volume& patch, int crop) {
  Extent3 s{};
  for (int a = 0; a < 3; ++a) {
    s[a] = patch.shape[a] - 2 * crop;
    if (s[a] < 1) throw ValidationError("crop removes the whole patch");
  }
  Volume out(s, patch.spacing);
  for (int d = 0; d < s[0]; ++d)
    for (int h = 0; h < s[1]; ++h)
      for (int w = 0; w < s[2]; ++w) out(d, h, w) = patch(d + crop, h + crop, w + crop);
  return out;
}

Volume stitch(const std::vector<Volume>& tiles, const PatchPlan& plan, const std::array<double, 3>& spacing) {
  if (tiles.size() != plan.grid.size())
    throw ValidationError("stitch: expected " + std::to_string(plan.grid.size()) + " tiles, got " +
                          std::to_string(tiles.size()));
  const Extent3 t = plan.tile_shape();
  Volume out(plan.volume_shape, spacing);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    if (tiles[i].shape != t)
      throw ValidationError("stitch: tile " + std::to_string(i) + " is " + extent(tiles[i].shape) + ", expected " +
                            extent(t));
    const Extent3& o = plan.grid[i].output;
    for (int d = 0; d < t[0]; ++d)
      for (int h = 0; h < t[1]; ++h)
        for (int w = 0; w < t[2]; ++w) out(o[0] + d, o[1] + h, o[2] + w) = tiles[i](d, h, w);
  }
  return out;
}

std::vector<int> coverage(const PatchPlan& plan) {
  Volume probe(plan.volume_shape);
  std::vector<int> count(static_cast<std::size_t>(probe.size()), 0);
  const Extent3 t = plan.tile_shape();
  for (const auto& g : plan.grid)
    for (int d = 0; d < t[0]; ++d)
      for (int h = 0; h < t[1]; ++h)
        for (int w = 0; w < t[2]; ++w)
          ++count[static_cast<std::size_t>(probe.index(g.output[0] + d, g.output[1] + h, g.output[2] + w))];
  return count;
}

Volume super_resolve(const Volume& vol, const ag::ParamSet<float>& generator, const SrConfig& cfg) {
  if (!vol.all_finite()) throw ValidationError("super_resolve: input volume is not finite");
  const PatchPlan plan = plan_patches(vol.shape, cfg.patch, cfg.crop);
  const auto patches = extract(vol, plan);
  std::vector<Volume> tiles;
  tiles.reserve(patches.size());
  const auto [pd, ph, pw] = cfg.patch;
  for (const auto& p : patches) {
    const ag::Tensor<float> y = train::generate(generator, ag::Tensor<float>({1, 1, pd, ph, pw}, p.data));
    Volume out(cfg.patch, vol.spacing);
    out.data = y.values();
    tiles.push_back(crop_center(out, cfg.crop));
  }
  return stitch(tiles, plan, vol.spacing);
}

}  // namespace mrisr::pipeline
