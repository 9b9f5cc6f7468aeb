#include "s3ta/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "s3ta/errors.hpp"
#include "s3ta/parallel.hpp"

namespace s3ta {
namespace {

constexpr std::uint64_t kTargetStream = 0x7a29;
constexpr std::uint64_t kInitStream = 0x1b17;
constexpr std::uint64_t kSpsaStream = 0x5b5a;

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

struct StartPoint {
  std::vector<float> x;
  int target = -1;
  int attack_label = 0;
  // +1 ascends the attack cross-entropy, -1 descends it.
  double direction = 1.0;
};

StartPoint make_start(std::span<const float> x0, int label, int num_classes, AttackMode mode, int target_class,
                      double epsilon, double init_prob, std::uint64_t seed, std::size_t index, int restart) {
  StartPoint s;
  switch (mode) {
    case AttackMode::kTargetedRandom:
      s.target = draw_random_target(seed, index, label, num_classes);
      break;
    case AttackMode::kTargetedFixed:
      if (target_class < 0 || target_class >= num_classes) throw InvalidArgument("fixed target class out of range");
      s.target = target_class;
      break;
    case AttackMode::kUntargeted:
      break;
  }
  s.attack_label = s.target >= 0 ? s.target : label;
  s.direction = s.target >= 0 ? -1.0 : 1.0;
  s.x.assign(x0.begin(), x0.end());
  Rng rng = make_rng(seed, {index, static_cast<std::uint64_t>(restart), kInitStream});
  if (init_prob > 0.0 && std::bernoulli_distribution(init_prob)(rng)) {
    std::uniform_real_distribution<double> noise(-epsilon, epsilon);
    for (std::size_t j = 0; j < s.x.size(); ++j) s.x[j] = static_cast<float>(x0[j] + noise(rng));
    project_linf_inplace(s.x, x0, epsilon);
  }
  return s;
}

void finish(const Classifier& model, std::span<const float> x0, const StartPoint& start, std::span<const float> x,
            int label, ImageOutcome& out) {
  out.label = label;
  out.target = start.target;
  out.clean_prediction = model.predict(x0);
  out.final_prediction = model.predict(x);
  out.success = start.target >= 0 ? out.final_prediction == start.target : out.final_prediction != label;
  out.all_restarts_correct = out.final_prediction == label;
  out.final_loss = out.loss_trace.back();
}

void check_batch(const Classifier& model, const ImageBatch& batch) {
  if (batch.image_size() != model.input_size()) throw InvalidArgument("batch image size does not match the model");
  if (batch.pixels.size() != batch.size() * batch.image_size()) throw InvalidArgument("batch pixel buffer has the wrong size");
  for (int l : batch.labels)
    if (l < 0 || l >= model.num_classes()) throw InvalidArgument("label out of range");
}

AttackResult empty_result(const ImageBatch& batch, int restart) {
  AttackResult r;
  r.adversarial = batch;
  r.outcomes.resize(batch.size());
  for (auto& o : r.outcomes) o.restart = restart;
  return r;
}

template <typename StepFn>
AttackResult gradient_attack(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg,
                             const AttackContext& ctx, StepFn&& make_stepper) {
  cfg.validate();
  check_batch(model, batch);
  AttackResult result = empty_result(batch, ctx.restart);
  parallel_for(batch.size(), [&](std::size_t begin, std::size_t end, int) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto x0 = batch.image(i);
      const int label = batch.labels[i];
      auto start = make_start(x0, label, model.num_classes(), cfg.mode, cfg.target_class, cfg.epsilon,
                              cfg.random_init_prob, cfg.rng_seed, ctx.index_offset + i, ctx.restart);
      auto& out = result.outcomes[i];
      std::vector<float> x = start.x;
      std::vector<float> grad(x.size());
      auto stepper = make_stepper(x.size());
      if (ctx.observer) (*ctx.observer)(i, 0, x);
      for (int s = 0;; ++s) {
        if (s == cfg.num_steps) {
          out.loss_trace.push_back(model.loss(x, start.attack_label));
          break;
        }
        out.loss_trace.push_back(model.loss_gradient(x, start.attack_label, 0.0, grad));
        stepper(s, x, grad, start.direction);
        project_linf_inplace(x, x0, cfg.epsilon);
        if (ctx.observer) (*ctx.observer)(i, s + 1, x);
      }
      std::copy(x.begin(), x.end(), result.adversarial.image(i).begin());
      finish(model, x0, start, x, label, out);
    }
  });
  return result;
}

bool better_loss(const ImageOutcome& candidate, const ImageOutcome& incumbent) {
  // Targeted attacks minimize the target cross-entropy, untargeted maximize.
  return candidate.target >= 0 ? candidate.final_loss < incumbent.final_loss
                               : candidate.final_loss > incumbent.final_loss;
}

}  // namespace

void AttackConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) throw InvalidArgument("epsilon must lie in (0, 1]");
  if (num_steps < 0) throw InvalidArgument("num_steps must be >= 0");
  if (optimizer == AttackOptimizer::kSignedGradient && num_steps > 0 && !(step_size > 0.0))
    throw InvalidArgument("step_size must be > 0 when num_steps > 0");
  if (!(random_init_prob >= 0.0 && random_init_prob <= 1.0)) throw InvalidArgument("random_init_prob must lie in [0, 1]");
  if (restarts < 1) throw InvalidArgument("restarts must be >= 1");
  if (mode == AttackMode::kTargetedFixed && target_class < 0) throw InvalidArgument("targeted-fixed mode needs a target class");
  if (optimizer == AttackOptimizer::kAdam) {
    if (lr_schedule.empty()) throw InvalidArgument("Adam attack needs a non-empty learning-rate schedule");
    for (std::size_t i = 0; i < lr_schedule.size(); ++i) {
      if (!(lr_schedule[i].lr > 0.0)) throw InvalidArgument("learning rates must be positive");
      if (i > 0 && lr_schedule[i].step_threshold <= lr_schedule[i - 1].step_threshold)
        throw InvalidArgument("learning-rate schedule thresholds must be strictly increasing");
    }
  }
}

double AttackConfig::adam_lr_at(int step) const {
  if (lr_schedule.empty()) throw InvalidArgument("empty learning-rate schedule");
  double lr = lr_schedule.front().lr;
  for (const auto& stage : lr_schedule)
    if (step >= stage.step_threshold) lr = stage.lr;
  return lr;
}

void SpsaConfig::validate() const {
  if (num_samples < 2 || num_samples % 2 != 0) throw InvalidArgument("SPSA num_samples must be even and >= 2");
  if (!(perturbation > 0.0)) throw InvalidArgument("SPSA perturbation size must be > 0");
  if (num_iterations < 0) throw InvalidArgument("SPSA num_iterations must be >= 0");
  if (num_iterations > 0 && !(step_size > 0.0)) throw InvalidArgument("SPSA step_size must be > 0");
  if (!(epsilon > 0.0 && epsilon <= 1.0)) throw InvalidArgument("epsilon must lie in (0, 1]");
  if (!(random_init_prob >= 0.0 && random_init_prob <= 1.0)) throw InvalidArgument("random_init_prob must lie in [0, 1]");
}

namespace attack_presets {

AttackConfig training() {
  AttackConfig c;
  c.epsilon = 16.0 / 255.0;
  c.step_size = 1.0 / 255.0;
  c.mode = AttackMode::kTargetedRandom;
  c.random_init_prob = 0.8;
  return c;
}

AttackConfig evaluation(int steps) {
  AttackConfig c = training();
  c.num_steps = steps;
  c.step_size = steps == 10 ? 1.6 / 255.0 : 1.0 / 255.0;
  return c;
}

AttackConfig adam() {
  AttackConfig c = training();
  c.optimizer = AttackOptimizer::kAdam;
  c.num_steps = 250;
  c.lr_schedule = {{0, 0.1}, {100, 0.01}, {200, 0.001}};
  return c;
}

SpsaConfig spsa() {
  SpsaConfig c;
  c.num_samples = 4096;
  c.num_iterations = 100;
  c.epsilon = 16.0 / 255.0;
  return c;
}

}  // namespace attack_presets

void project_linf_inplace(std::span<float> x, std::span<const float> x0, double epsilon) {
  if (x.size() != x0.size()) throw InvalidArgument("project_linf: shape mismatch");
  constexpr float kInf = std::numeric_limits<float>::infinity();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lo = std::max(static_cast<double>(x0[i]) - epsilon, 0.0);
    const double hi = std::min(static_cast<double>(x0[i]) + epsilon, 1.0);
    float flo = static_cast<float>(lo);
    if (static_cast<double>(flo) < lo) flo = std::nextafter(flo, kInf);
    float fhi = static_cast<float>(hi);
    if (static_cast<double>(fhi) > hi) fhi = std::nextafter(fhi, -kInf);
    x[i] = std::clamp(x[i], flo, fhi);
  }
}

std::vector<float> project_linf(std::span<const float> x, std::span<const float> x0, double epsilon) {
  std::vector<float> out(x.begin(), x.end());
  project_linf_inplace(out, x0, epsilon);
  return out;
}

void signed_step(std::span<float> x, std::span<const float> grad, double step, double direction) {
  const float s = static_cast<float>(step);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double g = direction * grad[i];
    if (g > 0.0) x[i] += s;
    else if (g < 0.0) x[i] -= s;
  }
}

int draw_random_target(std::uint64_t seed, std::size_t image_index, int label, int num_classes) {
  if (num_classes < 2) throw InvalidArgument("random targets need at least two classes");
  Rng rng = make_rng(seed, {image_index, kTargetStream});
  const int r = std::uniform_int_distribution<int>(0, num_classes - 2)(rng);
  return r >= label ? r + 1 : r;
}

AttackResult pgd_attack(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg,
                        const AttackContext& ctx) {
  if (cfg.optimizer != AttackOptimizer::kSignedGradient) throw InvalidArgument("pgd_attack needs the signed-gradient optimizer");
  return gradient_attack(model, batch, cfg, ctx, [&](std::size_t) {
    return [&](int, std::vector<float>& x, const std::vector<float>& grad, double direction) {
      signed_step(x, grad, cfg.step_size, direction);
    };
  });
}

AttackResult adam_pgd(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg,
                      const AttackContext& ctx) {
  if (cfg.optimizer != AttackOptimizer::kAdam) throw InvalidArgument("adam_pgd needs the Adam optimizer");
  return gradient_attack(model, batch, cfg, ctx, [&](std::size_t n) {
    return [&cfg, m = std::vector<double>(n, 0.0), v = std::vector<double>(n, 0.0)](
               int s, std::vector<float>& x, const std::vector<float>& grad, double direction) mutable {
      const double lr = cfg.adam_lr_at(s);
      const double c1 = 1.0 - std::pow(kAdamBeta1, s + 1);
      const double c2 = 1.0 - std::pow(kAdamBeta2, s + 1);
      for (std::size_t j = 0; j < x.size(); ++j) {
        const double g = -direction * grad[j];  // gradient of the minimized objective
        m[j] = kAdamBeta1 * m[j] + (1.0 - kAdamBeta1) * g;
        v[j] = kAdamBeta2 * v[j] + (1.0 - kAdamBeta2) * g * g;
        x[j] = static_cast<float>(x[j] - lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + kAdamEps));
      }
    };
  });
}

AttackResult run_attack(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg,
                        const AttackContext& ctx) {
  return cfg.optimizer == AttackOptimizer::kAdam ? adam_pgd(model, batch, cfg, ctx) : pgd_attack(model, batch, cfg, ctx);
}

std::vector<double> spsa_gradient(const std::function<double(std::span<const float>)>& f, std::span<const float> x,
                                  const SpsaConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = x.size();
  std::vector<double> g(d, 0.0);
  std::vector<double> v(d);
  std::vector<float> plus(d), minus(d);
  for (int i = 0; i < cfg.num_samples; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      v[j] = rademacher(rng);
      plus[j] = static_cast<float>(x[j] + cfg.perturbation * v[j]);
      minus[j] = static_cast<float>(x[j] - cfg.perturbation * v[j]);
    }
    const double diff = (f(plus) - f(minus)) / (2.0 * cfg.perturbation);
    // Dividing by v_j = ±1 is multiplying by it.
    for (std::size_t j = 0; j < d; ++j) g[j] += diff * v[j];
  }
  for (auto& gj : g) gj /= cfg.num_samples;
  return g;
}

AttackResult spsa_attack(const Classifier& model, const ImageBatch& batch, const SpsaConfig& cfg, AttackMode mode,
                         int target_class, const AttackContext& ctx) {
  cfg.validate();
  check_batch(model, batch);
  AttackResult result = empty_result(batch, ctx.restart);
  parallel_for(batch.size(), [&](std::size_t begin, std::size_t end, int) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto x0 = batch.image(i);
      const int label = batch.labels[i];
      const std::size_t index = ctx.index_offset + i;
      auto start = make_start(x0, label, model.num_classes(), mode, target_class, cfg.epsilon, cfg.random_init_prob,
                              cfg.rng_seed, index, ctx.restart);
      Rng rng = make_rng(cfg.rng_seed, {index, static_cast<std::uint64_t>(ctx.restart), kSpsaStream});
      // Objective to minimize, built from forward passes only.
      auto objective = [&](std::span<const float> x) { return -start.direction * model.loss(x, start.attack_label); };
      auto& out = result.outcomes[i];
      std::vector<float> x = start.x;
      std::vector<float> step_dir(x.size());
      if (ctx.observer) (*ctx.observer)(i, 0, x);
      for (int it = 0;; ++it) {
        out.loss_trace.push_back(model.loss(x, start.attack_label));
        if (it == cfg.num_iterations) break;
        const auto g = spsa_gradient(objective, x, cfg, rng);
        for (std::size_t j = 0; j < x.size(); ++j) step_dir[j] = static_cast<float>(g[j]);
        signed_step(x, step_dir, cfg.step_size, -1.0);
        project_linf_inplace(x, x0, cfg.epsilon);
        if (ctx.observer) (*ctx.observer)(i, it + 1, x);
      }
      std::copy(x.begin(), x.end(), result.adversarial.image(i).begin());
      finish(model, x0, start, x, label, out);
    }
  });
  return result;
}

AttackResult fold_restarts(std::vector<AttackResult> runs) {
  if (runs.empty()) throw InvalidArgument("fold_restarts needs at least one run");
  AttackResult folded = std::move(runs.front());
  const std::size_t n = folded.outcomes.size();
  for (std::size_t r = 1; r < runs.size(); ++r) {
    auto& run = runs[r];
    if (run.outcomes.size() != n) throw InvalidArgument("restart runs disagree on batch size");
    for (std::size_t i = 0; i < n; ++i) {
      auto& best = folded.outcomes[i];
      auto& cand = run.outcomes[i];
      const bool all_correct = best.all_restarts_correct && cand.all_restarts_correct;
      bool take = false;
      if (!best.success && cand.success) take = true;
      else if (!best.success && !cand.success) {
        const bool best_wrong = best.final_prediction != best.label;
        const bool cand_wrong = cand.final_prediction != cand.label;
        if (!best_wrong && cand_wrong) take = true;
        else if (best_wrong == cand_wrong && better_loss(cand, best)) take = true;
      }
      if (take) {
        best = std::move(cand);
        std::copy(run.adversarial.image(i).begin(), run.adversarial.image(i).end(), folded.adversarial.image(i).begin());
      }
      best.all_restarts_correct = all_correct;
    }
  }
  folded.restarts_used = static_cast<int>(runs.size());
  return folded;
}

AttackResult multi_restart(const AttackFn& attack, const ImageBatch& batch, int restarts) {
  if (restarts < 1) throw InvalidArgument("multi_restart needs R >= 1");
  std::vector<AttackResult> runs;
  runs.reserve(restarts);
  for (int r = 0; r < restarts; ++r) runs.push_back(attack(batch, r));
  return fold_restarts(std::move(runs));
}

}  // namespace s3ta
