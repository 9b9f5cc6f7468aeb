#include <cmath>

#include "doctest.h"
#include "s3ta/classifier.hpp"
#include "s3ta/dataset.hpp"
#include "s3ta/errors.hpp"
#include "s3ta/training.hpp"
#include "support.hpp"

using namespace s3ta;

namespace {

TrainConfig tiny_train_config() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 64;
  cfg.lr_per_256 = 0.2;
  cfg.warmup_epochs = 0.5;
  cfg.decay_epochs = {1.5};
  cfg.inner_attack = attack_presets::training();
  cfg.inner_attack.num_steps = 3;
  cfg.monitor_images = 32;
  cfg.monitor_attack = attack_presets::evaluation(3);
  cfg.rng_seed = 17;
  return cfg;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("learning-rate schedule examples") {
  const auto cfg = train_presets::paper_scale(16);
  CHECK(cfg.batch_size == 1024);
  CHECK(cfg.base_lr() == doctest::Approx(0.2));
  const double base = cfg.base_lr();
  CHECK(lr_at(0.0, cfg) == 0.0);
  CHECK(lr_at(2.5, cfg) == doctest::Approx(0.5 * base));
  CHECK(lr_at(5.0, cfg) == doctest::Approx(base));
  CHECK(lr_at(34.9, cfg) == doctest::Approx(base));
  CHECK(lr_at(36.0, cfg) == doctest::Approx(0.1 * base));
  CHECK(lr_at(71.0, cfg) == doctest::Approx(0.01 * base));
  CHECK(lr_at(96.0, cfg) == doctest::Approx(0.001 * base));
}

TEST_CASE("staged readout follows the epoch thresholds") {
  const auto cfg = train_presets::paper_scale(16);
  CHECK(staged_readout_at(0, cfg) == 4);
  CHECK(staged_readout_at(34, cfg) == 4);
  CHECK(staged_readout_at(35, cfg) == 8);
  CHECK(staged_readout_at(70, cfg) == 16);
  CHECK(staged_readout_at(119, cfg) == 16);
  CHECK(staged_readout_at(3, train_presets::desk_scale(2)) == 2);
  auto bad = cfg;
  bad.staged_readout = {{0, 17}};
  CHECK_THROWS_AS(bad.validate(16), InvalidArgument);
}

TEST_CASE("desk preset inner attack") {
  const auto cfg = train_presets::desk_scale(2);
  CHECK(cfg.epochs == 30);
  CHECK(cfg.inner_attack.num_steps == 7);
  CHECK(cfg.inner_attack.epsilon == doctest::Approx(8.0 / 255));
  CHECK(cfg.inner_attack.mode == AttackMode::kTargetedRandom);
  CHECK(cfg.label_smoothing == 0.1);
}

TEST_CASE("weight decay contracts parameters when the gradient is zero") {
  const S3taNetwork<float> net(presets::tiny());
  auto state = TrainState::fresh(net.init_parameters(1));
  TrainConfig cfg;
  cfg.weight_decay = 1e-2;
  ParameterSet<float> zero(net.layout());
  const double lr = 0.5;
  const auto before = state.params;
  for (int step = 0; step < 3; ++step) apply_update(state, zero, lr, cfg);
  const double factor = std::pow(1.0 - lr * cfg.weight_decay, 3);
  for (std::size_t i = 0; i < before.flat().size(); ++i)
    CHECK(state.params.flat()[i] == doctest::Approx(before.flat()[i] * factor).epsilon(1e-6));
  CHECK(state.step == 3);
}

TEST_CASE("the update uses the adversarial batch only") {
  const S3taNetwork<float> net(presets::tiny());
  auto cfg = tiny_train_config();
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  cfg.inner_attack.random_init_prob = 1.0;
  const auto batch = test::random_batch(8, 8, 3, 16, 3, 5);
  auto state = TrainState::fresh(net.init_parameters(2));
  const double epoch = 1.0;
  const auto adv = inner_attack_batch(net, state, batch, cfg, epoch);
  CHECK(adv.adversarial.pixels != batch.pixels);

  LossSpec spec;
  spec.smoothing = cfg.label_smoothing;
  spec.readout_step = staged_readout_at(1, cfg);
  ParameterSet<float> g_adv, g_clean;
  const double adv_loss = parameter_gradient(net, state.params, adv.adversarial, batch.labels, spec, g_adv);
  parameter_gradient(net, state.params, batch, batch.labels, spec, g_clean);

  const auto before = state.params;
  const auto m = adversarial_train_step(net, state, batch, cfg, epoch);
  CHECK(m.loss == adv_loss);
  const float lr = static_cast<float>(m.lr);
  double off_adv = 0.0, off_clean = 0.0;
  for (std::size_t i = 0; i < before.flat().size(); ++i) {
    const double delta = state.params.flat()[i] - before.flat()[i];
    off_adv = std::max(off_adv, std::abs(delta + lr * g_adv.flat()[i]));
    off_clean = std::max(off_clean, std::abs(delta + lr * g_clean.flat()[i]));
  }
  CHECK(off_adv <= 1e-7);
  CHECK(off_clean > 1e-5);
}

TEST_CASE("small steps on a fixed adversarial batch decrease its loss") {
  const S3taNetwork<float> net(presets::desk_scale());
  auto cfg = train_presets::desk_scale(2);
  const auto batch = make_synthetic(16, 3);
  auto state = TrainState::fresh(net.init_parameters(4));
  const auto adv = inner_attack_batch(net, state, batch, cfg, 10.0);
  LossSpec spec;
  spec.smoothing = cfg.label_smoothing;
  ParameterSet<float> grad;
  double previous = parameter_gradient(net, state.params, adv.adversarial, batch.labels, spec, grad);
  for (int replay = 0; replay < 5; ++replay) {
    apply_update(state, grad, 1e-4, cfg);
    const double now = parameter_gradient(net, state.params, adv.adversarial, batch.labels, spec, grad);
    CHECK(now < previous);
    previous = now;
  }
}

TEST_CASE("training is reproducible from the seed") {
  const S3taNetwork<float> net(presets::tiny());
  const auto data = make_synthetic(512, 8, 8, 8, 3, 3);
  const auto monitor = make_synthetic(64, 9, 8, 8, 3, 3);
  const auto cfg = tiny_train_config();
  auto a = TrainState::fresh(net.init_parameters(6));
  auto b = TrainState::fresh(net.init_parameters(6));
  int steps = 0;
  TrainCallbacks cb;
  cb.on_step = [&](const StepMetrics& m, const TrainState&) {
    ++steps;
    CHECK(std::isfinite(m.loss));
  };
  train(net, a, data, &monitor, cfg, cb);
  train(net, b, data, &monitor, cfg);
  CHECK(steps == 16);
  CHECK(a.params.flat().size() == b.params.flat().size());
  CHECK(std::equal(a.params.flat().begin(), a.params.flat().end(), b.params.flat().begin()));
  REQUIRE(a.history.size() == 2);
  CHECK(a.history[1].epoch == 2);
  CHECK(a.history[1].adv_loss == b.history[1].adv_loss);
  CHECK(a.epoch == 2);
  CHECK(a.step == 16);
}

TEST_CASE("resuming from an epoch boundary with fresh momentum replays the schedule") {
  const S3taNetwork<float> net(presets::tiny());
  const auto data = make_synthetic(128, 8, 8, 8, 3, 3);
  auto cfg = tiny_train_config();
  cfg.monitor_images = 0;
  auto whole = TrainState::fresh(net.init_parameters(6));
  train(net, whole, data, nullptr, cfg);
  auto part = TrainState::fresh(net.init_parameters(6));
  auto one = cfg;
  one.epochs = 1;
  train(net, part, data, nullptr, one);
  CHECK(part.epoch == 1);
  train(net, part, data, nullptr, cfg);
  CHECK(part.epoch == 2);
  CHECK(part.step == whole.step);
  CHECK(part.history.size() == 2);
}

TEST_CASE("a diverging run reports a numerical failure") {
  const S3taNetwork<float> net(presets::tiny());
  const auto data = make_synthetic(64, 8, 8, 8, 3, 3);
  auto cfg = tiny_train_config();
  cfg.lr_per_256 = 1e30;
  cfg.batch_size = 16;
  cfg.warmup_epochs = 0.0;
  cfg.monitor_images = 0;
  auto state = TrainState::fresh(net.init_parameters(1));
  CHECK_THROWS_AS(train(net, state, data, nullptr, cfg), NumericalFailure);
}

}
