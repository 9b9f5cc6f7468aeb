#include <atomic>
#include <cmath>
#include <mutex>

#include "doctest.h"
#include "s3ta/attacks.hpp"
#include "s3ta/errors.hpp"
#include "s3ta/parallel.hpp"
#include "support.hpp"

using namespace s3ta;

namespace {

struct LinearWeights {
  std::vector<double> w, b;
};

LinearWeights random_weights(int classes, int d, std::uint64_t seed, double scale = 4.0) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  LinearWeights lw{std::vector<double>(static_cast<std::size_t>(classes) * d), std::vector<double>(classes)};
  for (auto& v : lw.w) v = n(rng);
  for (auto& v : lw.b) v = n(rng) * 0.1;
  return lw;
}

test::LinearClassifier random_linear(int classes, int d, std::uint64_t seed, double scale = 4.0) {
  auto lw = random_weights(classes, d, seed, scale);
  return {lw.w, lw.b};
}

// Records the worst violation of the ball and box constraints over every iterate.
struct FeasibilityProbe {
  const ImageBatch* clean = nullptr;
  double epsilon = 0.0;
  std::mutex mu;
  double worst = 0.0;
  std::atomic<long> calls{0};
  IterateObserver observer() {
    return [this](std::size_t i, int, std::span<const float> x) {
      const auto x0 = clean->image(i);
      double w = 0.0;
      for (std::size_t j = 0; j < x.size(); ++j) {
        w = std::max(w, std::abs(static_cast<double>(x[j]) - x0[j]) - epsilon);
        w = std::max(w, -static_cast<double>(x[j]));
        w = std::max(w, static_cast<double>(x[j]) - 1.0);
      }
      ++calls;
      std::lock_guard lock(mu);
      worst = std::max(worst, w);
    };
  }
};

}  // namespace

TEST_SUITE("attacks") {

TEST_CASE("projection examples") {
  const std::vector<float> x0(5, 0.5f);
  std::vector<float> inside{0.5f, 0.51f, 0.49f, 0.55f, 0.45f};
  CHECK(project_linf(inside, x0, 16.0 / 255) == inside);
  const std::vector<float> far(5, 1.5f);
  const auto p = project_linf(far, x0, 16.0 / 255);
  for (float v : p) {
    CHECK(static_cast<double>(v) <= 0.5 + 16.0 / 255);
    CHECK(v == doctest::Approx(0.5 + 16.0 / 255).epsilon(1e-7));
  }
  CHECK(project_linf(p, x0, 16.0 / 255) == p);
  const std::vector<float> edge{0.99f}, edge0{0.98f};
  CHECK(project_linf(std::vector<float>{1.7f}, edge0, 0.1)[0] == 1.0f);
  CHECK(project_linf(std::vector<float>{-0.3f}, std::vector<float>{0.01f}, 0.1)[0] == 0.0f);
  CHECK_THROWS_AS(project_linf(edge, std::vector<float>{0.1f, 0.2f}, 0.1), InvalidArgument);
}

TEST_CASE("projection bounds hold in real arithmetic") {
  Rng rng(3);
  std::uniform_real_distribution<float> u(-0.5f, 1.5f);
  for (int t = 0; t < 2000; ++t) {
    const std::vector<float> x0{std::clamp(u(rng), 0.0f, 1.0f)};
    const double eps = std::uniform_real_distribution<double>(1e-4, 0.3)(rng);
    const auto p = project_linf(std::vector<float>{u(rng)}, x0, eps);
    CHECK(std::abs(static_cast<double>(p[0]) - x0[0]) <= eps);
  }
}

TEST_CASE("one signed step on a linear model is the analytic step") {
  const int d = 12, classes = 4;
  const auto lw = random_weights(classes, d, 21);
  const test::LinearClassifier model(lw.w, lw.b);
  ImageBatch batch(1, d, 1, 6);
  Rng rng(22);
  for (auto& p : batch.pixels) p = static_cast<float>(64 + rng() % 128) / 256.0f;
  for (std::size_t i = 0; i < batch.size(); ++i) batch.labels[i] = static_cast<int>(i % classes);

  for (AttackMode mode : {AttackMode::kUntargeted, AttackMode::kTargetedFixed, AttackMode::kTargetedRandom}) {
    AttackConfig cfg;
    cfg.num_steps = 1;
    cfg.step_size = 1.0 / 256;
    cfg.random_init_prob = 0.0;
    cfg.mode = mode;
    cfg.target_class = 2;
    cfg.rng_seed = 5;
    const auto r = pgd_attack(model, batch, cfg);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto x0 = batch.image(i);
      const int y = batch.labels[i];
      const int t = r.outcomes[i].target;
      if (mode == AttackMode::kUntargeted) CHECK(t == -1);
      if (mode == AttackMode::kTargetedFixed) CHECK(t == 2);
      if (mode == AttackMode::kTargetedRandom) CHECK((t >= 0 && t != y));
      // d CE(c) / dx = W^T (softmax - e_c)
      const auto z = model.logits(x0);
      double mx = *std::max_element(z.begin(), z.end()), sum = 0.0;
      for (double v : z) sum += std::exp(v - mx);
      const int c = mode == AttackMode::kUntargeted ? y : t;
      const double dir = mode == AttackMode::kUntargeted ? 1.0 : -1.0;
      for (int j = 0; j < d; ++j) {
        double g = 0.0;
        for (int k = 0; k < classes; ++k) g += (std::exp(z[k] - mx) / sum - (k == c)) * lw.w[k * d + j];
        const double s = dir * g > 0 ? 1.0 : (dir * g < 0 ? -1.0 : 0.0);
        CHECK(r.adversarial.image(i)[j] == static_cast<float>(x0[j] + s / 256));
      }
    }
  }
}

TEST_CASE("every iterate of every attack is feasible") {
  Rng rng(77);
  for (int trial = 0; trial < 60; ++trial) {
    const int d = 3 + trial % 7, classes = 2 + trial % 4;
    const auto model = random_linear(classes, d, 1000 + trial);
    ImageBatch batch(1, d, 1, 3);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& p : batch.pixels) p = trial % 5 == 0 ? std::round(u(rng)) : u(rng);
    for (auto& l : batch.labels) l = static_cast<int>(rng() % classes);
    FeasibilityProbe probe;
    probe.clean = &batch;
    probe.epsilon = std::uniform_real_distribution<double>(0.001, 0.5)(rng);
    const auto obs = probe.observer();
    AttackContext ctx;
    ctx.observer = &obs;
    const int kind = trial % 3;
    const int steps = 1 + static_cast<int>(rng() % 12);
    AttackResult r;
    if (kind < 2) {
      AttackConfig cfg;
      cfg.epsilon = probe.epsilon;
      cfg.step_size = probe.epsilon * 0.7;
      cfg.num_steps = steps;
      cfg.random_init_prob = 0.5;
      cfg.mode = static_cast<AttackMode>(rng() % 3);
      cfg.target_class = 0;
      cfg.rng_seed = trial;
      if (kind == 1) {
        cfg.optimizer = AttackOptimizer::kAdam;
        cfg.lr_schedule = {{0, 0.5}, {4, 0.05}};
      }
      r = run_attack(model, batch, cfg, ctx);
    } else {
      SpsaConfig cfg;
      cfg.epsilon = probe.epsilon;
      cfg.step_size = probe.epsilon * 0.5;
      cfg.num_iterations = steps;
      cfg.num_samples = 8;
      cfg.random_init_prob = 0.5;
      cfg.rng_seed = trial;
      r = spsa_attack(model, batch, cfg, AttackMode::kUntargeted, -1, ctx);
    }
    CHECK(probe.worst <= 1e-9);
    CHECK(probe.calls == static_cast<long>(batch.size()) * (steps + 1));
    for (const auto& o : r.outcomes) CHECK(o.loss_trace.size() == static_cast<std::size_t>(steps + 1));
  }
}

TEST_CASE("random targets avoid the label and do not depend on the restart") {
  std::vector<int> counts(10, 0);
  for (std::size_t i = 0; i < 9000; ++i) {
    const int t = draw_random_target(1, i, 3, 10);
    CHECK(t != 3);
    ++counts[t];
  }
  for (int c = 0; c < 10; ++c)
    if (c != 3) CHECK(std::abs(counts[c] - 1000) < 150);

  const auto model = random_linear(5, 6, 2);
  const auto batch = test::random_batch(1, 6, 1, 4, 5, 3);
  AttackConfig cfg;
  cfg.num_steps = 2;
  AttackContext c0, c1;
  c1.restart = 1;
  const auto a = pgd_attack(model, batch, cfg, c0), b = pgd_attack(model, batch, cfg, c1);
  for (std::size_t i = 0; i < batch.size(); ++i) CHECK(a.outcomes[i].target == b.outcomes[i].target);
}

TEST_CASE("attacks are deterministic and independent of thread count") {
  const auto model = random_linear(4, 10, 8);
  const auto batch = test::random_batch(1, 10, 1, 12, 4, 9);
  AttackConfig cfg = attack_presets::evaluation(10);
  cfg.rng_seed = 42;
  set_max_threads(1);
  const auto a = pgd_attack(model, batch, cfg);
  set_max_threads(4);
  const auto b = pgd_attack(model, batch, cfg);
  set_max_threads(1);
  CHECK(a.adversarial.pixels == b.adversarial.pixels);
}

TEST_CASE("SPSA of a constant function is zero") {
  SpsaConfig cfg;
  cfg.num_samples = 64;
  Rng rng(1);
  int calls = 0;
  const std::vector<float> x(9, 0.5f);
  const auto g = spsa_gradient([&](std::span<const float>) { ++calls; return 3.25; }, x, cfg, rng);
  CHECK(calls == 128);
  for (double v : g) CHECK(v == 0.0);
}

TEST_CASE("SPSA is unbiased on a linear function") {
  const int d = 16;
  std::vector<double> w(d);
  for (int j = 0; j < d; ++j) w[j] = (j % 3 == 0 ? -1.0 : 1.0) * (0.5 + 0.1 * j);
  const std::vector<float> x(d, 0.25f);
  auto f = [&](std::span<const float> z) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += w[j] * z[j];
    return s;
  };
  SpsaConfig cfg;
  cfg.num_samples = 20000;
  cfg.perturbation = 1.0 / 64;
  Rng rng(11);
  const auto g = spsa_gradient(f, x, cfg, rng);
  double total = 0.0;
  for (double v : w) total += v * v;
  for (int j = 0; j < d; ++j) {
    // Each sample is w_j + sum_{k != j} w_k v_k v_j.
    const double sd = std::sqrt((total - w[j] * w[j]) / cfg.num_samples);
    CHECK(std::abs(g[j] - w[j]) <= 4.5 * sd);
  }
  cfg.num_samples = 7;
  CHECK_THROWS_AS(spsa_gradient(f, x, cfg, rng), InvalidArgument);
}

TEST_CASE("an SPSA step points the same way as the true gradient step") {
  const int d = 16;
  std::vector<double> w(2 * d);
  for (int j = 0; j < d; ++j) {
    w[j] = (j % 2 ? 1.0 : -1.0);
    w[d + j] = -w[j];
  }
  const test::LinearClassifier model(w, {0.0, 0.0});
  ImageBatch batch(1, d, 1, 1);
  std::fill(batch.pixels.begin(), batch.pixels.end(), 0.5f);
  batch.labels[0] = 0;
  SpsaConfig cfg;
  cfg.num_samples = 2048;
  cfg.num_iterations = 1;
  cfg.step_size = 1.0 / 256;
  const auto r = spsa_attack(model, batch, cfg, AttackMode::kUntargeted);
  AttackConfig pgd;
  pgd.num_steps = 1;
  pgd.step_size = 1.0 / 256;
  pgd.random_init_prob = 0.0;
  pgd.mode = AttackMode::kUntargeted;
  const auto p = pgd_attack(model, batch, pgd);
  CHECK(r.adversarial.pixels == p.adversarial.pixels);
}

TEST_CASE("Adam reaches a lower loss than signed steps on a quadratic toy") {
  const test::QuadraticToy model({0.5 + 0.0301, 0.5 - 0.0173}, 100.0);
  ImageBatch batch(1, 2, 1, 1);
  batch.pixels = {0.5f, 0.5f};
  batch.labels[0] = 0;
  AttackConfig adam = attack_presets::adam();
  adam.mode = AttackMode::kTargetedFixed;
  adam.target_class = 1;
  adam.random_init_prob = 0.0;
  AttackConfig sgn = adam;
  sgn.optimizer = AttackOptimizer::kSignedGradient;
  sgn.lr_schedule.clear();
  sgn.step_size = 1.0 / 255;
  const auto a = run_attack(model, batch, adam), s = run_attack(model, batch, sgn);
  CHECK(a.outcomes[0].loss_trace.size() == 251);
  CHECK(a.outcomes[0].final_loss < s.outcomes[0].final_loss);
}

TEST_CASE("attack config presets and validation") {
  const auto adam = attack_presets::adam();
  CHECK(adam.num_steps == 250);
  CHECK(adam.adam_lr_at(0) == 0.1);
  CHECK(adam.adam_lr_at(99) == 0.1);
  CHECK(adam.adam_lr_at(100) == 0.01);
  CHECK(adam.adam_lr_at(249) == 0.001);
  CHECK(attack_presets::evaluation(10).step_size == doctest::Approx(1.6 / 255));
  CHECK(attack_presets::evaluation(100).step_size == doctest::Approx(1.0 / 255));
  CHECK(attack_presets::training().random_init_prob == 0.8);
  CHECK(attack_presets::spsa().num_samples == 4096);
  AttackConfig bad;
  bad.epsilon = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = AttackConfig{};
  bad.optimizer = AttackOptimizer::kAdam;
  bad.lr_schedule = {{0, 0.1}, {0, 0.01}};
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = AttackConfig{};
  bad.restarts = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("multi-restart keeps the strongest example and never raises robust accuracy") {
  const auto model = random_linear(5, 8, 31, 1.0);
  const auto batch = test::random_batch(1, 8, 1, 40, 5, 32);
  AttackConfig cfg = attack_presets::evaluation(3);
  cfg.epsilon = 0.08;
  cfg.rng_seed = 9;
  AttackFn fn = [&](const ImageBatch& b, int restart) {
    AttackContext ctx;
    ctx.restart = restart;
    return run_attack(model, b, cfg, ctx);
  };
  const auto one = multi_restart(fn, batch, 1);
  const auto single = fn(batch, 0);
  CHECK(one.adversarial.pixels == single.adversarial.pixels);
  CHECK(one.restarts_used == 1);

  const auto ten = multi_restart(fn, batch, 10);
  CHECK(ten.restarts_used == 10);
  std::vector<AttackResult> runs;
  for (int r = 0; r < 10; ++r) runs.push_back(fn(batch, r));
  const auto folded = fold_restarts(runs);
  CHECK(folded.adversarial.pixels == ten.adversarial.pixels);

  int robust1 = 0, robust10 = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    bool all_correct = true, any_success = false;
    for (const auto& run : runs) {
      all_correct &= run.outcomes[i].final_prediction == batch.labels[i];
      any_success |= run.outcomes[i].success;
    }
    CHECK(ten.outcomes[i].all_restarts_correct == all_correct);
    CHECK(ten.outcomes[i].success == any_success);
    if (ten.outcomes[i].all_restarts_correct) CHECK(one.outcomes[i].all_restarts_correct);
    robust1 += one.outcomes[i].all_restarts_correct;
    robust10 += ten.outcomes[i].all_restarts_correct;
    if (any_success) CHECK(runs[ten.outcomes[i].restart].outcomes[i].success);
  }
  CHECK(robust10 <= robust1);
  CHECK_THROWS_AS(multi_restart(fn, batch, 0), InvalidArgument);
}

}
