#include <doctest.h>

#include <cmath>
#include <fstream>
#include <iterator>

#include "gradcheck.hpp"
#include "psal/checkpoint.hpp"
#include "psal/data.hpp"
#include "psal/error.hpp"
#include "psal/model.hpp"
#include "psal/training.hpp"
#include "temp_dir.hpp"

using namespace psal;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

NetConfig tiny_net() {
  auto cfg = NetConfig::for_size(32);
  cfg.base_channels = 2;
  cfg.bottleneck_channels = 4;
  cfg.disc_base_channels = 2;
  cfg.label_channels = 2;
  return cfg;
}

TrainConfig smoke_train(std::size_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.seed = 11;
  return t;
}

DatasetManifest smoke_dataset(const fs::path& root) {
  return split(synth_dataset(20, 32, 5, root), 0.2, 5);
}

}  // namespace

TEST_CASE("discriminator loss closed forms") {
  const double clip = 1e-7;
  CHECK(std::fabs(discriminator_loss(0.5, 0.5, clip) - 1.386294) < 1e-6);
  CHECK(discriminator_loss(0.5, 0.5, clip) == doctest::Approx(2 * std::log(2.0)).epsilon(1e-15));
  CHECK(discriminator_loss(0.9, 0.1, clip) == doctest::Approx(0.210721).epsilon(1e-6));
  const double perfect = discriminator_loss(1 - clip, clip, clip);
  CHECK(perfect >= 0.0);
  CHECK(perfect <= 2 * clip * std::log(1 / clip));
  CHECK_THROWS_AS(discriminator_loss(0.0, 0.5, clip), UsageError);
  CHECK_THROWS_AS(discriminator_loss(0.5, 1.0, clip), UsageError);
}

TEST_CASE("generator loss closed forms") {
  const double clip = 1e-7;
  const Tensor out({1, 1, 4, 4}, 0.0), gt({1, 1, 4, 4}, 1.0);
  CHECK(generator_loss(0.5, out, gt, 0.01, clip) == doctest::Approx(0.703147).epsilon(1e-6));
  CHECK(generator_loss(0.3, out, gt, 0.0, clip) == -std::log(0.3));
  CHECK(generator_loss(1 - clip, gt, gt, 0.01, clip) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK_THROWS_AS(generator_loss(0.5, out, Tensor({1, 1, 4, 2}), 0.01, clip), DimensionError);
}

TEST_CASE("tensor losses stay finite at saturated probabilities") {
  const double clip = 1e-7;
  const Tensor zeros({2}, 0.0), ones({2}, 1.0);
  const Tensor out({2, 1, 4, 4}, 0.5), gt({2, 1, 4, 4}, -0.5);
  for (const auto& real : {zeros, ones})
    for (const auto& fake : {zeros, ones}) {
      CHECK(std::isfinite(discriminator_loss(real, fake, clip).item()));
      CHECK(std::isfinite(generator_loss(fake, out, gt, 0.01, clip).item()));
    }
  const Tensor half({2}, 0.5);
  CHECK(discriminator_loss(half, half, clip).item() == doctest::Approx(discriminator_loss(0.5, 0.5, clip)));
}

TEST_CASE("rmsprop hand step and zero gradient") {
  ParamSet p;
  auto& w = p.add("w", {1});
  auto state = OptimizerState::for_params(p, false);
  TrainConfig cfg;
  w.grad()[0] = 1.0;
  rmsprop_step(p, state, cfg);
  CHECK(state.mean_square[0].tensor.values()[0] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(w.values()[0] == doctest::Approx(-0.00316227).epsilon(1e-6));
  CHECK(w.values()[0] == doctest::Approx(-0.001 / (std::sqrt(0.1) + 1e-6)).epsilon(1e-14));

  const double theta = w.values()[0];
  const double s = state.mean_square[0].tensor.values()[0];
  w.grad()[0] = 0.0;
  rmsprop_step(p, state, cfg);
  CHECK(w.values()[0] == theta);
  CHECK(state.mean_square[0].tensor.values()[0] == doctest::Approx(0.9 * s).epsilon(1e-15));
}

TEST_CASE("rmsprop step size converges to the learning rate") {
  for (double g : {3.0, 0.01, -0.5}) {
    CAPTURE(g);
    ParamSet p;
    auto& w = p.add("w", {1});
    auto state = OptimizerState::for_params(p, false);
    TrainConfig cfg;
    double last = 0.0;
    for (int i = 0; i < 200; ++i) {
      const double before = w.values()[0];
      w.grad()[0] = g;
      rmsprop_step(p, state, cfg);
      last = std::fabs(w.values()[0] - before);
      REQUIRE(state.mean_square[0].tensor.values()[0] >= 0.0);
    }
    CHECK(std::fabs(last - cfg.learning_rate) < 0.01 * cfg.learning_rate);
  }
}

TEST_CASE("rmsprop rejects non-finite gradients by name") {
  ParamSet p;
  p.add("enc0.conv.weight", {2});
  auto state = OptimizerState::for_params(p, false);
  p.get("enc0.conv.weight").grad()[1] = std::nan("");
  try {
    rmsprop_step(p, state, TrainConfig{});
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("enc0.conv.weight") != std::string::npos);
  }
}

TEST_CASE("init weights range, mean and determinism") {
  auto make = [](std::uint64_t seed) {
    ParamSet p;
    p.add("big.conv.weight", {100000});
    p.add("x.bn.gamma", {3});
    p.add("x.bn.beta", {3});
    p.add("x.bn.running_mean", {3}, false);
    p.add("x.bn.running_var", {3}, false);
    Rng rng(seed);
    init_weights(p, rng, 0.05);
    return p;
  };
  const auto p = make(4);
  double sum = 0.0;
  for (double v : p.get("big.conv.weight").values()) {
    REQUIRE(v >= -0.05);
    REQUIRE(v <= 0.05);
    sum += v;
  }
  CHECK(std::fabs(sum / 1e5) <= 0.001);
  for (double v : p.get("x.bn.gamma").values()) CHECK(v == 1.0);
  for (double v : p.get("x.bn.beta").values()) CHECK(v == 0.0);
  for (double v : p.get("x.bn.running_mean").values()) CHECK(v == 0.0);
  for (double v : p.get("x.bn.running_var").values()) CHECK(v == 1.0);
  CHECK(p.same_values(make(4)));
  CHECK_FALSE(p.same_values(make(5)));
}

TEST_CASE("train config validation") {
  TrainConfig ok;
  CHECK_NOTHROW(ok.validate());
  auto bad = ok;
  bad.rms_decay = 1.0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = ok;
  bad.prob_clip = 0.5;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = ok;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = ok;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("end-to-end generator loss gradient") {
  const auto net = tiny_net();
  Generator gen(net);
  Discriminator disc(net);
  Rng rng(77);
  init_weights(gen.params(), rng, 0.05);
  init_weights(disc.params(), rng, 0.05);
  // Four samples: with two, batch norm at the 1x1 bottleneck is nearly a sign
  // function and central differences at h = 1e-5 stop resolving it.
  const auto x = psal::test::random_tensor({4, 3, 32, 32}, rng);
  const auto gt = psal::test::random_tensor({4, 1, 32, 32}, rng);
  const ObserverLabel labels[4] = {ObserverLabel(0), ObserverLabel(1), ObserverLabel(1), ObserverLabel(0)};

  auto loss = [&] {
    Rng drop(123);
    const auto fake = gen.forward(x, labels, Mode::Train, drop, nullptr, false);
    const auto d = disc.forward(x, labels, fake, Mode::Train, nullptr, false);
    return generator_loss(d, fake, gt, 1.0, 1e-7);
  };

  // 20 trainable generator scalars spread over all layers.
  std::vector<std::pair<Tensor, std::size_t>> picks;
  std::vector<Tensor> trainable;
  for (auto& e : gen.params().entries())
    if (e.trainable) trainable.push_back(e.tensor);
  Rng pick(5);
  while (picks.size() < 20) {
    auto& t = trainable[pick.below(trainable.size())];
    picks.emplace_back(t, pick.below(t.numel()));
  }

  gen.params().zero_grad();
  disc.params().zero_grad();
  backward(loss());
  double worst = 0.0;
  const double h = 1e-5;
  for (auto& [t, i] : picks) {
    const double analytic = t.grad()[i];
    const double saved = t.data()[i];
    t.data()[i] = saved + h;
    const double up = loss().item();
    t.data()[i] = saved - h;
    const double down = loss().item();
    t.data()[i] = saved;
    const double numeric = (up - down) / (2 * h);
    worst = std::max(worst, std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), 1e-6}));
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("smoke training run with alternation checks") {
  psal::test::TempDir dir;
  const auto m = smoke_dataset(dir.path() / "data");
  const auto train_set = load_samples(m, "train");
  const auto test_set = load_samples(m, "test");
  std::vector<EncodedSample> enc;
  for (const auto& s : train_set) enc.push_back(encode_sample(s));

  Trainer t(tiny_net(), smoke_train(2));
  t.set_check_alternation(true);
  for (int e = 0; e < 2; ++e) {
    const auto rec = t.run_epoch(enc, test_set);
    CHECK(rec.epoch == static_cast<std::size_t>(e + 1));
    CHECK(std::isfinite(rec.loss_d));
    CHECK(std::isfinite(rec.loss_g));
    for (int g = 0; g < 2; ++g) {
      CHECK(std::isfinite(rec.kl[g]));
      CHECK(std::isfinite(rec.ssim[g]));
    }
  }
  const auto ck = t.checkpoint();
  for (const auto* opt : {&ck.opt_g, &ck.opt_d})
    for (const auto& e : opt->mean_square)
      for (double v : e.tensor.values()) REQUIRE(v >= 0.0);

  const auto path = dir.path() / "smoke.ckpt";
  save_checkpoint(t.checkpoint(), path);
  const auto loaded = load_checkpoint(path);
  CHECK(loaded == t.checkpoint());
  CHECK(loaded.epoch == 2);
}

TEST_CASE("each update step leaves the other network untouched") {
  psal::test::TempDir dir;
  const auto m = smoke_dataset(dir.path() / "data");
  const auto samples = load_samples(m, "train");
  const auto a = encode_sample(samples[0]);
  const auto b = encode_sample(samples[1]);
  const EncodedSample* batch[2] = {&a, &b};

  Trainer t(tiny_net(), smoke_train(1));
  const auto g0 = t.generator().params().clone();
  const auto d0 = t.discriminator().params().clone();
  t.set_check_alternation(true);
  CHECK_NOTHROW(t.train_batch(batch));
  // Both networks did move over the full batch.
  CHECK_FALSE(t.generator().params().same_values(g0));
  CHECK_FALSE(t.discriminator().params().same_values(d0));
}

TEST_CASE("checkpoint round trip and corruption handling") {
  psal::test::TempDir dir;
  TrainConfig tc = smoke_train(1);
  tc.momentum = 0.5;
  Trainer t(tiny_net(), tc);
  const auto ck = t.checkpoint();
  const auto path = dir.path() / "a.ckpt";
  save_checkpoint(ck, path);
  CHECK(load_checkpoint(path) == ck);
  CHECK_FALSE(load_checkpoint(path).opt_g.velocity.empty());

  const auto bytes = slurp(path);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  spit(dir.path() / "magic.ckpt", bad_magic);
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "magic.ckpt"), CompatibilityError);

  auto bad_version = bytes;
  bad_version[4] = 9;
  spit(dir.path() / "version.ckpt", bad_version);
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "version.ckpt"), CompatibilityError);

  spit(dir.path() / "short.ckpt", bytes.substr(0, bytes.size() - 8));
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "short.ckpt"), CorruptionError);
  spit(dir.path() / "header.ckpt", bytes.substr(0, 30));
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "header.ckpt"), CorruptionError);

  CHECK_THROWS_AS(load_checkpoint(dir.path() / "missing.ckpt"), IoError);
}

TEST_CASE("seeded runs are bitwise identical and resume replays the next epoch") {
  psal::test::TempDir dir;
  const auto m = smoke_dataset(dir.path() / "data");
  const auto net = tiny_net();

  std::vector<EpochRecord> full;
  TrainOptions o1;
  o1.checkpoint_path = dir.path() / "run1.ckpt";
  o1.on_epoch = [&](const EpochRecord& r) { full.push_back(r); };
  train(m, net, smoke_train(2), o1);

  TrainOptions o2;
  o2.checkpoint_path = dir.path() / "run2.ckpt";
  train(m, net, smoke_train(2), o2);
  CHECK(slurp(o1.checkpoint_path) == slurp(o2.checkpoint_path));
  CHECK(slurp(o1.checkpoint_path.string() + ".metrics.csv") == slurp(o2.checkpoint_path.string() + ".metrics.csv"));

  TrainOptions o3;
  o3.checkpoint_path = dir.path() / "half.ckpt";
  train(m, net, smoke_train(1), o3);
  std::vector<EpochRecord> resumed;
  TrainOptions o4;
  o4.checkpoint_path = dir.path() / "resumed.ckpt";
  o4.resume_from = o3.checkpoint_path;
  o4.on_epoch = [&](const EpochRecord& r) { resumed.push_back(r); };
  train(m, net, smoke_train(2), o4);

  REQUIRE(full.size() == 2);
  REQUIRE(resumed.size() == 1);
  CHECK(resumed[0].epoch == 2);
  CHECK(std::fabs(resumed[0].loss_d - full[1].loss_d) <= 1e-9);
  CHECK(std::fabs(resumed[0].loss_g - full[1].loss_g) <= 1e-9);
  CHECK(slurp(o4.checkpoint_path) == slurp(o1.checkpoint_path));

  auto other = smoke_train(2);
  other.lambda_l1 = 1.0;
  CHECK_THROWS_AS(train(m, net, other, o4), CompatibilityError);
}
