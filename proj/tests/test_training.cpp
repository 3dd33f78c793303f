#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mrisr/kspace.hpp"
#include "mrisr/phantom.hpp"
#include "mrisr/training.hpp"
#include "support.hpp"

using namespace mrisr;
using namespace mrisr::train;
using ag::Tensor;
using TD = Tensor<double>;

namespace {

nets::RRDGConfig toy_generator() {
  nets::RRDGConfig g;
  g.n_c = 1;
  g.n_f = 4;
  g.k = 2;
  g.layers_per_dense_block = 2;
  return g;
}

TrainData phantom_data(int n, Extent3 shape = {16, 16, 16}) {
  TrainData d;
  for (int i = 0; i < n; ++i) {
    PhantomSpec s;
    s.seed = 100 + static_cast<std::uint64_t>(i);
    s.shape = shape;
    Volume hr = gen_phantom(s).first;
    d.lr.push_back(degrade(hr, {}));
    d.hr.push_back(std::move(hr));
  }
  return d;
}

TrainConfig quick_config(int steps) {
  TrainConfig c;
  c.steps = steps;
  c.batch_size = 2;
  c.patch = {12, 12, 12};
  c.adam.lr = 1e-3;
  return c;
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("l1 loss examples") {
    const auto a = TD::from({2}, {0, 1});
    CHECK(l1_loss(a, a).item() == 0.0);
    CHECK(l1_loss(add_scalar(a, 0.5), a).item() == 0.5);
    CHECK(l1_loss(a, TD::from({2}, {1, 3})).item() == 1.5);
    CHECK_THROWS_AS(l1_loss(a, TD::zeros({3})), ValidationError);
  }

  TEST_CASE("generator loss examples") {
    const auto sr = TD::from({2}, {0, 1}), hr = TD::from({2}, {1, 3});
    const auto d = TD::from({2}, {-2, -2});
    CHECK(generator_loss(sr, hr, d, 0.0).item() == l1_loss(sr, hr).item());
    CHECK(generator_loss(hr, hr, TD::from({1}, {4.0}), 1e-3).item() == doctest::Approx(4e-3).epsilon(1e-14));
    CHECK(generator_loss(sr, hr, d, 1e-3).item() == doctest::Approx(1.498).epsilon(1e-14));
  }

  TEST_CASE("discriminator loss examples") {
    const auto one = TD::from({1}, {1.0}), three = TD::from({1}, {3.0});
    CHECK(discriminator_loss(one, one, TD::from({1}, {0.0}), 10.0).item() == 0.0);
    CHECK(discriminator_loss(one, three, TD::from({1}, {5.0}), 10.0).item() == 48.0);
    CHECK(discriminator_loss(one, three, TD::from({1}, {5.0}), 0.0).item() == -2.0);
  }

  TEST_CASE("gradient penalty: gamma 1 evaluates the critic at sr") {
    Rng rng(1);
    const TD sr = testsupport::random_tensor(rng, {2, 1, 2, 2, 2}, 1.0, false);
    const TD hr = testsupport::random_tensor(rng, {2, 1, 2, 2, 2}, 1.0, false);
    TD seen;
    const std::function<TD(const TD&)> d = [&](const TD& x) {
      seen = x;
      return ag::reshape(ag::global_mean_pool(ag::mul(x, x)), {2});
    };
    gradient_penalty(d, sr, hr, {1.0, 1.0}, GpForm::paper_norm);
    CHECK((seen.values() == sr.values()).all());
  }

  TEST_CASE("linear critic: penalty is ||w|| for any inputs, and its w-gradient is w / ||w||") {
    Rng rng(2);
    // w = (3, 4, 0, ...) rearranged at random positions of a 2x2x2 volume.
    for (int trial = 0; trial < 5; ++trial) {
      Eigen::ArrayXd wv = Eigen::ArrayXd::Zero(8);
      const auto i = rng.index(8);
      auto j = rng.index(7);
      if (j >= i) ++j;
      wv[i] = 3.0;
      wv[j] = -4.0;
      const TD w({1, 1, 2, 2, 2}, wv, true);
      const std::function<TD(const TD&)> d = [&](const TD& x) {
        const int n = x.dim(0);
        return ag::reshape(ag::sum_to(ag::mul(x, ag::broadcast_to(w, x.shape())), {n, 1, 1, 1, 1}), {n});
      };
      const TD sr = testsupport::random_tensor(rng, {3, 1, 2, 2, 2}, 5.0, false);
      const TD hr = testsupport::random_tensor(rng, {3, 1, 2, 2, 2}, 5.0, false);
      const TD gp = gradient_penalty(d, sr, hr, {rng.uniform(), rng.uniform(), rng.uniform()}, GpForm::paper_norm);
      CHECK(std::abs(gp.item() - 5.0) < 1e-12);
      const TD gw = ag::grad<double>({gp}, {w})[0];
      CHECK(std::abs(gw.values()[i] - 0.6) < 1e-12);
      CHECK(std::abs(gw.values()[j] + 0.8) < 1e-12);
    }
  }

  TEST_CASE("two-sided penalty vanishes for a unit-gradient critic") {
    const std::function<TD(const TD&)> d = [](const TD& x) {
      // Each sample's score is its first voxel, so the input gradient norm is 1.
      const int n = x.dim(0);
      Eigen::ArrayXd mask = Eigen::ArrayXd::Zero(x.numel());
      for (int s = 0; s < n; ++s) mask[s * (x.numel() / n)] = 1.0;
      return ag::reshape(ag::sum_to(ag::mul_const(x, std::make_shared<const Eigen::ArrayXd>(mask)), {n, 1, 1, 1, 1}),
                         {n});
    };
    Rng rng(5);
    const TD sr = testsupport::random_tensor(rng, {2, 1, 2, 2, 2}, 1.0, false);
    const TD hr = testsupport::random_tensor(rng, {2, 1, 2, 2, 2}, 1.0, false);
    CHECK(gradient_penalty(d, sr, hr, {0.3, 0.8}, GpForm::two_sided).item() == 0.0);
    CHECK(gradient_penalty(d, sr, hr, {0.3, 0.8}, GpForm::paper_norm).item() == 1.0);
  }

  TEST_CASE("adam examples") {
    ag::ParamSet<double> p;
    p.add("x", TD::from({1}, {0.0}));
    AdamHyper h;
    h.lr = 0.1;
    AdamState<double> st;
    p.at("x").accumulate_grad(Eigen::ArrayXd::Constant(1, 1.0));
    adam_step(p, st, h);
    // m_hat = 1, v_hat = 1: step = 0.1 * 1 / (1 + 1e-8).
    CHECK(p["x"].values()[0] == doctest::Approx(-0.1).epsilon(1e-7));

    ag::ParamSet<double> q;
    q.add("y", TD::from({2}, {1.5, -2.0}));
    AdamState<double> sq;
    q.zero_grad();
    adam_step(q, sq, h);
    CHECK(q["y"].values()[0] == 1.5);
    CHECK(q["y"].values()[1] == -2.0);
  }

  TEST_CASE("adam is bitwise reproducible and rejects non-finite gradients by name") {
    auto run = [] {
      ag::ParamSet<float> p;
      p.add("a", Tensor<float>::from({3}, {1, 2, 3}));
      AdamState<float> st;
      for (int i = 0; i < 2; ++i) {
        p.zero_grad();
        p.at("a").accumulate_grad(Eigen::ArrayXf::Constant(3, 0.25f));
        adam_step(p, st, AdamHyper{});
      }
      return p;
    };
    CHECK(ag::bitwise_equal(run(), run()));

    ag::ParamSet<float> p;
    p.add("bad.weight", Tensor<float>::zeros({2}));
    p.at("bad.weight").accumulate_grad(Eigen::ArrayXf::Constant(2, std::numeric_limits<float>::quiet_NaN()));
    AdamState<float> st;
    try {
      adam_step(p, st, AdamHyper{});
      FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
      CHECK(std::string(e.what()).find("bad.weight") != std::string::npos);
    }
  }

  TEST_CASE("blending endpoints are exact copies and the midpoint is the mean") {
    ag::ParamSet<float> a, b;
    a.add("w", Tensor<float>::from({3}, {2.0f, 1.0f, -7.5f}));
    b.add("w", Tensor<float>::from({3}, {4.0f, 0.1f, 3.25f}));
    CHECK(ag::bitwise_equal(blend_params(a, b, 1.0), a));
    CHECK(ag::bitwise_equal(blend_params(a, b, 0.0), b));
    const auto mid = blend_params(a, b, 0.5);
    CHECK(mid["w"].values()[0] == 3.0f);
    CHECK(mid["w"].values()[1] == doctest::Approx(0.55f));
    // Endpoints do not alias their sources.
    auto copy = blend_params(a, b, 1.0);
    copy.at("w").mutable_values()[0] = 100.0f;
    CHECK(a["w"].values()[0] == 2.0f);
  }

  TEST_CASE("blending is linear in alpha") {
    Rng rng(8);
    ag::ParamSet<float> a, b;
    Eigen::ArrayXf va(50), vb(50);
    for (int i = 0; i < 50; ++i) {
      va[i] = static_cast<float>(rng.uniform(-1, 1));
      vb[i] = static_cast<float>(rng.uniform(-1, 1));
    }
    a.add("w", Tensor<float>({50}, va));
    b.add("w", Tensor<float>({50}, vb));
    for (int trial = 0; trial < 20; ++trial) {
      const double x = rng.uniform(), y = rng.uniform();
      const Eigen::ArrayXf lhs = blend_params(a, b, x)["w"].values() + blend_params(a, b, y)["w"].values();
      const Eigen::ArrayXf rhs = 2.0f * blend_params(a, b, (x + y) / 2)["w"].values();
      const float scale = std::max(va.abs().maxCoeff(), vb.abs().maxCoeff());
      CHECK((lhs - rhs).abs().maxCoeff() <= 8 * std::numeric_limits<float>::epsilon() * scale);
    }
  }

  TEST_CASE("blending rejects mismatched structures by entry") {
    ag::ParamSet<float> a, b;
    a.add("x", Tensor<float>::zeros({2}));
    a.add("y", Tensor<float>::zeros({2}));
    b.add("x", Tensor<float>::zeros({2}));
    b.add("z", Tensor<float>::zeros({2}));
    try {
      blend_params(a, b, 0.5);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("'y'") != std::string::npos);
    }
    CHECK_THROWS_AS(blend_params(a, a, 1.5), ValidationError);
  }

  TEST_CASE("identity task is learned to L1 below 1e-3 within 200 steps") {
    TrainData d = phantom_data(3);
    d.lr = d.hr;
    TrainConfig c = quick_config(200);
    // A fresh generator starts close to the identity; inflate the tail so
    // the run has something to learn.
    auto init = nets::build_rrdg(toy_generator(), 3);
    init.at("tail.weight").mutable_values() *= 30.0f;
    const auto res = train_psnr(d, c, toy_generator(), init);
    CHECK(res.history.records.front().l1 > 1e-2);
    double tail = 0;
    for (int i = 190; i < 200; ++i) tail += res.history.records[static_cast<std::size_t>(i)].l1;
    MESSAGE("identity task: first L1 ", res.history.records.front().l1, ", last-10 mean ", tail / 10);
    CHECK(tail / 10 < 1e-3);
  }

  TEST_CASE("phantom training lowers L1 and is bitwise reproducible") {
    const TrainData d = phantom_data(4);
    const TrainConfig c = quick_config(60);
    const auto a = train_psnr(d, c, toy_generator());
    const auto b = train_psnr(d, c, toy_generator());
    CHECK(ag::bitwise_equal(a.generator, b.generator));
    double head = 0, tail = 0;
    for (int i = 0; i < 10; ++i) {
      head += a.history.records[static_cast<std::size_t>(i)].l1;
      tail += a.history.records[static_cast<std::size_t>(50 + i)].l1;
    }
    MESSAGE("first-10 L1 ", head / 10, ", last-10 L1 ", tail / 10);
    CHECK(tail < head);
  }

  TEST_CASE("lambda_D = 0 GAN training equals a pure L1 continuation") {
    const TrainData d = phantom_data(3);
    TrainConfig c = quick_config(20);
    const auto psnr = train_psnr(d, c, toy_generator());
    c.steps = 8;
    c.lambda_D = 0.0;
    c.n_critic = 2;
    nets::DiscConfig dc;
    dc.base_channels = 2;
    dc.n_plain_blocks = 0;
    const auto gan = train_gan(psnr.generator, d, c, dc);
    const auto cont = train_psnr(d, c, toy_generator(), psnr.generator);
    CHECK(ag::bitwise_equal(gan.generator, cont.generator));
  }

  TEST_CASE("GAN schedule, finiteness and loss recomposition") {
    const TrainData d = phantom_data(3);
    TrainConfig c = quick_config(6);
    c.n_critic = 3;
    const auto psnr = train_psnr(d, c, toy_generator());
    nets::DiscConfig dc;
    dc.base_channels = 2;
    dc.n_plain_blocks = 0;
    const auto gan = train_gan(psnr.generator, d, c, dc);
    const auto& recs = gan.history.records;
    REQUIRE(recs.size() == static_cast<std::size_t>(6 * 4));
    for (std::size_t i = 0; i < recs.size(); ++i) {
      CHECK(recs[i].step == static_cast<std::int64_t>(i));
      CHECK(recs[i].phase == ((i % 4 == 3) ? Phase::generator : Phase::critic));
      CHECK(std::isfinite(recs[i].l1));
      CHECK(std::isfinite(recs[i].d_loss));
      CHECK(std::isfinite(recs[i].gp));
      if (recs[i].phase == Phase::generator)
        CHECK(std::abs(recs[i].g_total - (recs[i].l1 + c.lambda_D * recs[i].adv)) < 1e-6);
    }
  }

  TEST_CASE("critic receptive field must fit in the patch") {
    const TrainData d = phantom_data(2);
    TrainConfig c = quick_config(1);
    const auto psnr = train_psnr(d, c, toy_generator());
    nets::DiscConfig dc;  // receptive field 25 > 12
    CHECK_THROWS_AS(train_gan(psnr.generator, d, c, dc), ValidationError);
  }

  TEST_CASE("history CSV and checkpoints round-trip") {
    const auto dir = std::filesystem::temp_directory_path() / "mrisr_training_io";
    std::filesystem::create_directories(dir);
    TrainHistory h;
    for (int i = 0; i < 3; ++i) {
      TrainRecord r;
      r.step = i;
      r.l1 = 0.1 / (i + 1);
      r.adv = -1.0 / 3.0;
      r.d_loss = 1e-300;
      r.gp = 5.0;
      r.seconds = 0.25 * i;
      h.records.push_back(r);
    }
    h.write_csv(dir / "h.csv");
    const auto back = TrainHistory::read_csv(dir / "h.csv");
    REQUIRE(back.records.size() == 3);
    for (int i = 0; i < 3; ++i) {
      CHECK(back.records[static_cast<std::size_t>(i)].l1 == h.records[static_cast<std::size_t>(i)].l1);
      CHECK(back.records[static_cast<std::size_t>(i)].adv == h.records[static_cast<std::size_t>(i)].adv);
      CHECK(back.records[static_cast<std::size_t>(i)].d_loss == 1e-300);
    }
    std::ifstream in(dir / "h.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "step,l1,adv,d_loss,gp,seconds");

    const TrainData d = phantom_data(2);
    const auto res = train_psnr(d, quick_config(3), toy_generator());
    save_checkpoint(dir / "g.ckpt", res.generator, res.adam, 3);
    const auto ck = load_checkpoint(dir / "g.ckpt");
    CHECK(ag::bitwise_equal(ck.params, res.generator));
    CHECK(ck.step == 3);
    CHECK(ck.adam.t == res.adam.t);
    REQUIRE(ck.adam.m.size() == res.adam.m.size());
    for (const auto& [name, m] : res.adam.m) CHECK((ck.adam.m.at(name) == m).all());
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("training config validation") {
    TrainConfig c;
    c.lambda_g = -1;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = {};
    c.n_critic = 0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    CHECK_THROWS_AS(parse_gp_form("one-sided"), ValidationError);
    CHECK(parse_gamma_per("batch") == GammaPer::batch);
  }
}
