#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "streetgen/trainer.hpp"
#include "support.hpp"

using namespace streetgen;
using namespace streetgen::train;
using streetgen::testing::random_sample;

namespace {

Gan<double> tiny_gan(int level, int size, std::uint64_t seed) {
  auto ds = nn::DiscriminatorSpec::standard(4, size);
  Gan<double> gan{nn::Generator<double>(nn::GeneratorSpec::standard(level, 4)), nn::Discriminator<double>(ds), {}, {}};
  gan.g.init_params(gan.gp, seed);
  gan.d.init_params(gan.dp, seed + 1);
  return gan;
}

std::vector<double> all_values(const ParamSet<double>& p) {
  std::vector<double> out;
  for (const auto& prm : p.all()) out.insert(out.end(), prm.value.begin(), prm.value.end());
  return out;
}

bool all_zero_grads(const ParamSet<double>& p) {
  for (const auto& prm : p.all())
    for (double g : prm.grad)
      if (g != 0.0) return false;
  return true;
}

}  // namespace

TEST_CASE("mse examples") {
  std::vector<double> gen{1.0, 1.0, 0.5, 0.5}, gt{0.5, 0.5, 0.0, 0.0}, ones(4, 1.0), zeros(4, 0.0);
  CHECK(mse_loss<double>(gen, gt, ones) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(mse_loss<double>(gen, gt, ones, MseNormalization::unnormalized) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(mse_loss<double>(gen, gen, ones) == 0.0);
  CHECK(mse_loss<double>(gen, gt, zeros) == 0.0);
  CHECK_THROWS_AS(mse_loss<double>(gen, std::vector<double>(3), ones), Error);

  FloatGrid a(2, 2, 0.5f), b(2, 2, 0.0f);
  sampling::Mask m{ByteGrid(2, 2, 1)};
  CHECK(mse_loss(a, b, m) == doctest::Approx(0.25));
  CHECK_THROWS_AS(mse_loss(a, FloatGrid(3, 2), m), Error);
}

TEST_CASE("mse ignores context pixels") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto mask = sampling::generate_mask(32, rng.next());
    std::vector<double> gen(1024), gt(1024), m(1024);
    for (std::size_t i = 0; i < 1024; ++i) {
      gen[i] = rng.uniform();
      gt[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
      m[i] = mask.grid.data()[i] ? 1.0 : 0.0;
    }
    const double before = mse_loss<double>(gen, gt, m);
    for (std::size_t i = 0; i < 1024; ++i) {
      if (m[i] != 0.0) continue;
      gen[i] = rng.uniform(-5, 5);
      gt[i] = rng.uniform(-5, 5);
    }
    CHECK(mse_loss<double>(gen, gt, m) == before);
  }
}

TEST_CASE("adversarial terms") {
  const auto t = adversarial_terms(0.5, 0.5);
  CHECK(std::abs(t.d_loss - 2.0 * std::log(2.0)) < 1e-12);
  CHECK(std::abs(t.g_loss - std::log(2.0)) < 1e-12);
  CHECK(adversarial_terms(0.5, 0.5, true).g_loss == doctest::Approx(-std::log(2.0)));
  CHECK(adversarial_terms(1.0, 0.0).d_loss < 1e-6);
  CHECK(std::isfinite(adversarial_terms(0.0, 1.0).d_loss));
  CHECK(std::isfinite(adversarial_terms(0.5, 0.0).g_loss));
}

TEST_CASE("combined objective") {
  CHECK(combined_objective(0.04, 0.6931, 0.01) == doctest::Approx(0.046931).epsilon(1e-12));
  CHECK(combined_objective(0.123, 7.0, 0.0) == 0.123);
  const double one = combined_objective(0.1, 0.7, 0.01) - 0.1, two = combined_objective(0.1, 0.7, 0.02) - 0.1;
  CHECK(two == doctest::Approx(2 * one));
  LossConfig c;
  c.alpha = -1;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("adam") {
  AdamConfig cfg;
  cfg.lr = 0.001;
  SUBCASE("first step is about -lr") {
    std::vector<double> w{0.0}, g{1.0}, m{0.0}, v{0.0};
    adam_update<double>(w, g, m, v, 1, cfg);
    CHECK(std::abs(w[0] - (-0.001 / (1.0 + 1e-8))) < 1e-12);
  }
  SUBCASE("zero gradient changes nothing") {
    std::vector<double> w{0.7}, g{0.0}, m{0.0}, v{0.0};
    for (std::uint64_t t = 1; t <= 5; ++t) adam_update<double>(w, g, m, v, t, cfg);
    CHECK(w[0] == 0.7);
    CHECK(v[0] == 0.0);
  }
  SUBCASE("reference recurrence on w^2") {
    std::vector<double> w{1.0}, g{0.0}, m{0.0}, v{0.0};
    double rm = 0, rv = 0, rw = 1.0, prev = 1.0;
    for (std::uint64_t t = 1; t <= 100; ++t) {
      g[0] = 2 * w[0];
      adam_update<double>(w, g, m, v, t, cfg);
      const double gr = 2 * rw;
      rm = 0.9 * rm + 0.1 * gr;
      rv = 0.999 * rv + 0.001 * gr * gr;
      rw -= 0.001 * (rm / (1 - std::pow(0.9, t))) / (std::sqrt(rv / (1 - std::pow(0.999, t))) + 1e-8);
      CHECK(std::abs(w[0] - rw) < 1e-12);
      CHECK(std::abs(w[0]) < prev);
      prev = std::abs(w[0]);
    }
  }
  SUBCASE("adam_step increments t before correction") {
    ParamSet<double> p;
    p.add("a", {2});
    p.add("state", {3}, false);
    p.at("a").grad = {1.0, -1.0};
    AdamState<double> st;
    adam_step(p, st, cfg);
    CHECK(st.t == 1);
    CHECK(std::abs(p.at("a").value[0] + 0.001 / (1 + 1e-8)) < 1e-12);
    CHECK(std::abs(p.at("a").value[1] - 0.001 / (1 + 1e-8)) < 1e-12);
    CHECK(p.at("state").value == std::vector<double>(3, 0.0));
  }
  SUBCASE("lr 0 is the identity") {
    Rng rng(2);
    ParamSet<double> p;
    for (int i = 0; i < 3; ++i) {
      auto& prm = p.add("p" + std::to_string(i), {5});
      for (auto& x : prm.value) x = rng.normal();
    }
    const auto before = all_values(p);
    AdamConfig zero;
    zero.lr = 0.0;
    AdamState<double> st;
    for (int k = 0; k < 10; ++k) {
      for (auto& prm : p.all())
        for (auto& g : prm.grad) g = rng.normal();
      adam_step(p, st, zero);
    }
    CHECK(all_values(p) == before);
  }
  SUBCASE("non-finite gradient names the parameter and changes nothing") {
    ParamSet<double> p;
    p.add("first", {2}).grad = {1.0, 1.0};
    p.add("second.w", {2}).grad = {1.0, std::nan("")};
    AdamState<double> st;
    CHECK_THROWS_WITH_AS(adam_step(p, st, cfg), doctest::Contains("second.w"), Error);
    CHECK(p.at("first").value == std::vector<double>{0.0, 0.0});
  }
}

TEST_CASE("iterations per epoch") {
  CHECK(iterations_per_epoch(46856, 8) == 5857);
  CHECK(iterations_per_epoch(7, 8) == 0);
}

TEST_CASE("discriminator and generator updates touch only their own parameters") {
  Rng rng(3);
  for (int level : {1, 2, 3}) {
    auto gan = tiny_gan(level, 16, 10 + level);
    std::vector<sampling::PatchSample> data;
    for (int i = 0; i < 2; ++i) data.push_back(random_sample(16, level, rng));
    const sampling::PatchSample* ptrs[] = {&data[0], &data[1]};
    const auto b = make_batch<double>(ptrs, level);
    LossConfig cfg;
    cfg.alpha = 0.5;
    AdamState<double> gs, ds;
    for (int step = 0; step < 3; ++step) {
      gan.gp.zero_grad();
      gan.dp.zero_grad();
      nn::Generator<double>::Cache cache;
      const auto gen = gan.g.forward(gan.gp, b.input, &cache);
      const auto g_before = all_values(gan.gp);
      discriminator_objective(gan, b, gen, cfg, true);
      CHECK(all_zero_grads(gan.gp));
      CHECK(all_values(gan.gp) == g_before);
      adam_step(gan.dp, ds, AdamConfig{});
      CHECK(gan.gp.hash() == ParamSet<double>(gan.gp).hash());
      CHECK(all_values(gan.gp) == g_before);

      gan.dp.zero_grad();
      const auto d_before = all_values(gan.dp);
      const auto d_hash = gan.dp.hash();
      generator_objective(gan, b, gen, cache, cfg);
      CHECK(all_zero_grads(gan.dp));
      CHECK(all_values(gan.dp) == d_before);
      adam_step(gan.gp, gs, AdamConfig{});
      CHECK(gan.dp.hash() == d_hash);
      CHECK(all_values(gan.gp) != g_before);
    }
  }
}

TEST_CASE("batch with the wrong model level is rejected") {
  Rng rng(4);
  const auto s = random_sample(16, 2, rng);
  const sampling::PatchSample* ptrs[] = {&s};
  CHECK_THROWS_WITH_AS(make_batch<float>(ptrs, 1), doctest::Contains("level 2"), Error);
}

TEST_CASE("trainer rejects channel mismatch before the first iteration") {
  Rng rng(5);
  std::vector<sampling::PatchSample> data;
  for (int i = 0; i < 8; ++i) data.push_back(random_sample(16, 2, rng));
  auto ck = nn::Checkpoint::fresh(nn::GeneratorSpec::standard(1, 4), nn::DiscriminatorSpec::standard(4, 16), 1);
  RunConfig rc;
  rc.batch_size = 4;
  int calls = 0;
  rc.on_iteration = [&](const LossRecord&) { ++calls; };
  Trainer t(ck, rc);
  CHECK_THROWS_WITH_AS(t.run(data), doctest::Contains("network expects 5"), Error);
  CHECK(calls == 0);
  CHECK(t.history().empty());

  auto wrong_size = nn::Checkpoint::fresh(nn::GeneratorSpec::standard(2, 4), nn::DiscriminatorSpec::standard(4, 32), 1);
  Trainer t2(wrong_size, rc);
  CHECK_THROWS_AS(t2.run(data), Error);
  CHECK(t2.history().empty());
}

TEST_CASE("learning-rate decay") {
  Rng rng(12);
  std::vector<sampling::PatchSample> data;
  for (int i = 0; i < 16; ++i) data.push_back(random_sample(16, 1, rng));
  auto run = [&](double final_fraction, std::uint64_t iterations) {
    auto ck = nn::Checkpoint::fresh(nn::GeneratorSpec::standard(1, 4), nn::DiscriminatorSpec::standard(4, 16), 2);
    RunConfig rc;
    rc.batch_size = 4;
    rc.max_iterations = 4;
    rc.seed = 1;
    rc.lr_final_fraction = final_fraction;
    Trainer t(ck, rc);
    std::vector<const sampling::PatchSample*> ptrs;
    for (auto& s : data) ptrs.push_back(&s);
    for (std::uint64_t k = 0; k < iterations; ++k) t.step(std::span(ptrs).subspan(4 * k, 4));
    return t.gan().gp.at("g.enc0.w").value;
  };
  CHECK(run(0.1, 1) == run(1.0, 1));
  CHECK(run(0.1, 3) != run(1.0, 3));
  CHECK(run(1.0, 3) == run(1.0, 3));

  RunConfig bad;
  bad.lr_final_fraction = 1.5;
  CHECK_THROWS_WITH_AS(Trainer(nn::Checkpoint::fresh(nn::GeneratorSpec::standard(1, 4), nn::DiscriminatorSpec::standard(4, 16), 2), bad),
                       doctest::Contains("fraction"), Error);
}

TEST_CASE("training is deterministic and persists its history") {
  Rng rng(6);
  std::vector<sampling::PatchSample> data;
  for (int i = 0; i < 12; ++i) data.push_back(random_sample(16, 2, rng));
  const auto dir = std::filesystem::temp_directory_path() / "streetgen_test_trainer";
  std::filesystem::remove_all(dir);
  auto run = [&](const std::filesystem::path& out) {
    auto ck = nn::Checkpoint::fresh(nn::GeneratorSpec::standard(2, 4), nn::DiscriminatorSpec::standard(4, 16), 9);
    RunConfig rc;
    rc.batch_size = 4;
    rc.epochs = 2;
    rc.seed = 21;
    rc.checkpoint_every = 4;
    rc.out_dir = out;
    Trainer t(ck, rc);
    t.run(data);
    return std::pair{t.history(), t.checkpoint()};
  };
  const auto [h1, c1] = run(dir / "a");
  const auto [h2, c2] = run(dir / "b");
  REQUIRE(h1.size() == 6);
  for (std::size_t i = 0; i < h1.size(); ++i) {
    CHECK(h1[i].iteration == i + 1);
    CHECK(h1[i].mse == h2[i].mse);
    CHECK(h1[i].g_adv == h2[i].g_adv);
    CHECK(h1[i].d_loss == h2[i].d_loss);
  }
  CHECK(c1.g_params.hash() == c2.g_params.hash());
  CHECK(c1.iteration == 6);
  CHECK(c1.epoch == 2);

  const auto back = read_loss_csv(dir / "a" / "loss_history.csv");
  REQUIRE(back.size() == h1.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].iteration == h1[i].iteration);
    CHECK(back[i].mse == h1[i].mse);
    CHECK(back[i].d_loss == h1[i].d_loss);
  }
  for (const char* f : {"ckpt_00000004.bin", "epoch_0001.bin", "epoch_0002.bin", "final.bin", "lineage.json"})
    CHECK_MESSAGE(std::filesystem::exists(dir / "a" / f), f);
  const auto final_ck = nn::Checkpoint::load(dir / "a" / "final.bin");
  CHECK(final_ck.g_params.hash() == c1.g_params.hash());

  SUBCASE("resume continues the iteration count") {
    RunConfig rc;
    rc.batch_size = 4;
    rc.max_iterations = 2;
    Trainer t(final_ck, rc);
    t.run(data);
    CHECK(t.history().back().iteration == 8);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("loss csv rejects malformed files") {
  const auto path = std::filesystem::temp_directory_path() / "streetgen_bad_loss.csv";
  std::vector<LossRecord> h{{1, 0.5, 0.7, 1.3}};
  write_loss_csv(path, h);
  CHECK(read_loss_csv(path).size() == 1);
  { std::ofstream(path) << "a,b\n"; }
  CHECK_THROWS_AS(read_loss_csv(path), Error);
  { std::ofstream(path) << "iteration,mse,g_adv,d_loss\n1,x,2,3\n"; }
  CHECK_THROWS_AS(read_loss_csv(path), Error);
  std::filesystem::remove(path);
}

TEST_CASE("reconstruction-only training overfits identical patches") {
  Rng rng(7);
  const auto s = random_sample(16, 1, rng);
  std::vector<sampling::PatchSample> data(8, s);
  auto ck = nn::Checkpoint::fresh(nn::GeneratorSpec::standard(1, 16), nn::DiscriminatorSpec::standard(4, 16), 3);
  RunConfig rc;
  rc.batch_size = 4;
  rc.epochs = 250;
  rc.max_iterations = 500;
  rc.loss.alpha = 0.0;
  rc.g_adam.lr = 2e-3;
  Trainer t(ck, rc);
  const auto h = t.run(data);
  REQUIRE(h.size() == 500);
  CHECK(h.back().mse < 0.1 * h.front().mse);
}
