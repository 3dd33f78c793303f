#include <doctest.h>

#include <set>

#include "mrisr/kspace.hpp"
#include "mrisr/nets.hpp"
#include "mrisr/phantom.hpp"
#include "mrisr/pipeline.hpp"
#include "mrisr/training.hpp"
#include "support.hpp"

using namespace mrisr;
using namespace mrisr::pipeline;

namespace {

int reflect(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

ag::ParamSet<float> identity_generator(std::uint64_t seed, nets::NormKind norm = nets::NormKind::batch) {
  nets::RRDGConfig g;
  g.n_c = 1;
  g.n_f = 2;
  g.k = 1;
  g.layers_per_dense_block = 2;
  g.norm = norm;
  auto p = nets::build_rrdg(g, seed);
  p.at("tail.weight").mutable_values().setZero();
  p.at("tail.bias").mutable_values().setZero();
  return p;
}

struct RandomLayout {
  Extent3 shape, patch;
  int crop;
};

RandomLayout random_layout(Rng& rng) {
  RandomLayout l;
  l.crop = static_cast<int>(rng.index(4));
  for (int a = 0; a < 3; ++a) {
    l.shape[a] = l.crop + 1 + static_cast<int>(rng.index(24));
    const int lo = 2 * l.crop + 1, hi = l.shape[a] + 2 * l.crop;
    l.patch[a] = lo + static_cast<int>(rng.index(hi - lo + 1));
  }
  return l;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("documented tilings") {
    const auto p = plan_patches({116, 64, 116}, {64, 40, 64}, 3);
    CHECK(p.tile_shape() == Extent3{58, 34, 58});
    CHECK(p.tiles_per_axis == Extent3{2, 2, 2});
    CHECK(p.grid.size() == 8);
    CHECK(p.grid[1].output == Extent3{0, 0, 58});
    CHECK(p.grid[2].output == Extent3{0, 30, 0});  // flush-shifted: 64 - 34
    CHECK(p.grid[7].input == Extent3{58, 30, 58});

    const auto single = plan_patches({58, 58, 58}, {64, 64, 64}, 3);
    CHECK(single.grid.size() == 1);
    CHECK(single.pad == Extent3{3, 3, 3});
  }

  TEST_CASE("plan validation") {
    CHECK_THROWS_AS(plan_patches({16, 16, 16}, {6, 6, 6}, 3), ValidationError);
    CHECK_THROWS_AS(plan_patches({16, 16, 16}, {23, 8, 8}, 3), ValidationError);
    CHECK_THROWS_AS(plan_patches({3, 16, 16}, {8, 8, 8}, 3), ValidationError);
    CHECK_THROWS_AS(plan_patches({16, 16, 16}, {8, 8, 8}, -1), ValidationError);
  }

  TEST_CASE("reflection padding matches index arithmetic") {
    Rng rng(1);
    const Volume v = testsupport::random_volume(rng, {5, 4, 6});
    const Volume p = reflect_pad(v, {2, 3, 1});
    REQUIRE(p.shape == Extent3{9, 10, 8});
    for (int d = 0; d < 9; ++d)
      for (int h = 0; h < 10; ++h)
        for (int w = 0; w < 8; ++w) CHECK(p(d, h, w) == v(reflect(d - 2, 5), reflect(h - 3, 4), reflect(w - 1, 6)));
    CHECK_THROWS_AS(reflect_pad(v, {0, 4, 0}), ValidationError);
  }

  TEST_CASE("extracted patches equal a direct copy from the padded volume") {
    Rng rng(2);
    for (int trial = 0; trial < 10; ++trial) {
      const auto l = random_layout(rng);
      const Volume v = testsupport::random_volume(rng, l.shape);
      const auto plan = plan_patches(l.shape, l.patch, l.crop);
      const auto patches = extract(v, plan);
      REQUIRE(patches.size() == plan.grid.size());
      CHECK(static_cast<int>(patches.size()) == plan.tiles_per_axis[0] * plan.tiles_per_axis[1] * plan.tiles_per_axis[2]);
      for (std::size_t i = 0; i < patches.size(); ++i) {
        const auto o = plan.grid[i].input;
        bool same = patches[i].shape == l.patch;
        for (int d = 0; d < l.patch[0] && same; ++d)
          for (int h = 0; h < l.patch[1]; ++h)
            for (int w = 0; w < l.patch[2]; ++w)
              same = same && patches[i](d, h, w) == v(reflect(o[0] + d - l.crop, l.shape[0]),
                                                      reflect(o[1] + h - l.crop, l.shape[1]),
                                                      reflect(o[2] + w - l.crop, l.shape[2]));
        CHECK(same);
      }
    }
  }

  TEST_CASE("single-tile plan extracts the padded volume") {
    Rng rng(3);
    const Volume v = testsupport::random_volume(rng, {7, 8, 9});
    const auto plan = plan_patches(v.shape, {9, 10, 11}, 1);
    const auto patches = extract(v, plan);
    REQUIRE(patches.size() == 1);
    CHECK(bitwise_equal(patches[0], reflect_pad(v, {1, 1, 1})));
  }

  TEST_CASE("coverage and round trip over 50 random layouts") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
      const auto l = random_layout(rng);
      const Volume v = testsupport::random_volume(rng, l.shape);
      const auto plan = plan_patches(l.shape, l.patch, l.crop);
      const auto cov = coverage(plan);
      CHECK(*std::min_element(cov.begin(), cov.end()) >= 1);

      // Coverage by an independent count over the output origins.
      std::vector<int> count(static_cast<std::size_t>(voxel_count(l.shape)), 0);
      const auto t = plan.tile_shape();
      for (const auto& g : plan.grid)
        for (int d = 0; d < t[0]; ++d)
          for (int h = 0; h < t[1]; ++h)
            for (int w = 0; w < t[2]; ++w) ++count[static_cast<std::size_t>(v.index(g.output[0] + d, g.output[1] + h, g.output[2] + w))];
      CHECK(count == cov);

      std::vector<Volume> tiles;
      for (const auto& p : extract(v, plan)) tiles.push_back(crop_center(p, l.crop));
      CHECK(bitwise_equal(stitch(tiles, plan, v.spacing), v));
    }
  }

  TEST_CASE("interior voxels away from shifted seams are written once") {
    const auto plan = plan_patches({40, 20, 20}, {16, 16, 16}, 3);  // tile 10: 4 x 2 x 2, no shift
    const auto cov = coverage(plan);
    CHECK(std::all_of(cov.begin(), cov.end(), [](int c) { return c == 1; }));
  }

  TEST_CASE("stitch of constant tiles and its errors") {
    const auto plan = plan_patches({13, 11, 9}, {8, 8, 8}, 1);
    std::vector<Volume> tiles(plan.grid.size(), Volume(plan.tile_shape()));
    for (auto& t : tiles) t.data.setConstant(0.375f);
    const Volume out = stitch(tiles, plan);
    CHECK(out.shape == Extent3{13, 11, 9});
    CHECK((out.data == 0.375f).all());
    tiles.pop_back();
    CHECK_THROWS_AS(stitch(tiles, plan), ValidationError);
    tiles.push_back(Volume({6, 6, 5}));
    CHECK_THROWS_AS(stitch(tiles, plan), ValidationError);
  }

  TEST_CASE("zero-tail generator makes super_resolve the identity") {
    Rng rng(5);
    for (int trial = 0; trial < 5; ++trial) {
      const auto l = random_layout(rng);
      Volume v = testsupport::random_volume(rng, l.shape);
      v.spacing = {0.7, 1.0, 1.25};
      const auto gen = identity_generator(100 + static_cast<std::uint64_t>(trial),
                                          trial % 2 ? nets::NormKind::instance : nets::NormKind::batch);
      const Volume out = super_resolve(v, gen, {l.patch, l.crop});
      CHECK(bitwise_equal(out, v));
    }
  }

  TEST_CASE("super_resolve is deterministic and shape preserving") {
    nets::RRDGConfig g;
    g.n_c = 1;
    g.n_f = 4;
    g.k = 2;
    g.layers_per_dense_block = 2;
    const auto gen = nets::build_rrdg(g, 9);
    Rng rng(6);
    const Volume v = testsupport::random_volume(rng, {21, 17, 19});
    const Volume a = super_resolve(v, gen, {{12, 10, 12}, 2});
    const Volume b = super_resolve(v, gen, {{12, 10, 12}, 2});
    CHECK(a.shape == v.shape);
    CHECK(bitwise_equal(a, b));
    CHECK(!bitwise_equal(a, v));
  }

  TEST_CASE("trained toy model leaves no seam artifacts") {
    train::TrainData data;
    for (std::uint64_t s = 0; s < 4; ++s) {
      PhantomSpec ps;
      ps.seed = 700 + s;
      const Volume hr = gen_phantom(ps).first;
      data.lr.push_back(degrade(hr, {}));
      data.hr.push_back(hr);
    }
    train::TrainConfig c;
    c.steps = 80;
    c.batch_size = 2;
    c.patch = {16, 16, 16};
    c.adam.lr = 1e-3;
    nets::RRDGConfig g;
    g.n_c = 1;
    g.n_f = 4;
    g.k = 2;
    g.layers_per_dense_block = 2;
    const auto gen = train::train_psnr(data, c, g).generator;

    PhantomSpec ps;
    ps.seed = 799;
    const Volume lr = degrade(gen_phantom(ps).first, {});
    const SrConfig sc{{16, 16, 16}, 3};
    const Volume sr = super_resolve(lr, gen, sc);
    const auto plan = plan_patches(lr.shape, sc.patch, sc.crop);

    std::array<std::set<int>, 3> seams;
    for (const auto& t : plan.grid)
      for (int a = 0; a < 3; ++a)
        if (t.output[a] > 0) seams[static_cast<std::size_t>(a)].insert(t.output[a]);
    double seam_sum = 0, interior_sum = 0;
    long seam_n = 0, interior_n = 0;
    for (int d = 0; d < 32; ++d)
      for (int h = 0; h < 32; ++h)
        for (int w = 0; w < 32; ++w) {
          const std::array<int, 3> pos{d, h, w};
          for (int a = 0; a < 3; ++a) {
            if (pos[static_cast<std::size_t>(a)] == 0) continue;
            std::array<int, 3> prev = pos;
            --prev[static_cast<std::size_t>(a)];
            const double diff = std::abs(sr(d, h, w) - sr(prev[0], prev[1], prev[2]));
            if (seams[static_cast<std::size_t>(a)].count(pos[static_cast<std::size_t>(a)])) {
              seam_sum += diff;
              ++seam_n;
            } else {
              interior_sum += diff;
              ++interior_n;
            }
          }
        }
    const double ratio = (seam_sum / static_cast<double>(seam_n)) / (interior_sum / static_cast<double>(interior_n));
    MESSAGE("seam / interior mean absolute difference: ", ratio);
    CHECK(ratio <= 3.0);
  }
}
