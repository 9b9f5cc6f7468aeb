#pragma once

// L-infinity constrained perturbation searches against a Classifier.
//
// Every attack starts from x0 (or, with probability random_init_prob, from a
// uniform point of the epsilon-ball), takes steps on the cross-entropy and
// projects back onto N_eps(x0) ∩ [0,1]^d after every step. Targeted modes
// descend the cross-entropy of the target class; untargeted mode ascends the
// cross-entropy of the true label. Success is judged on the final iterate.
//
// Randomness is per image: the stream for image i and restart r is derived
// from (rng_seed, i, r), so results do not depend on batching or threading.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "s3ta/classifier.hpp"
#include "s3ta/image.hpp"
#include "s3ta/rng.hpp"

namespace s3ta {

enum class AttackMode { kTargetedRandom, kTargetedFixed, kUntargeted };
enum class AttackOptimizer { kSignedGradient, kAdam };

/// Adam learning rate `lr` applies from `step_threshold` until the next stage.
struct LrStage {
  int step_threshold = 0;
  double lr = 0.0;
};

struct AttackConfig {
  double epsilon = 16.0 / 255.0;
  double step_size = 1.0 / 255.0;
  int num_steps = 10;
  AttackMode mode = AttackMode::kTargetedRandom;
  int target_class = -1;  // kTargetedFixed only
  double random_init_prob = 0.8;
  AttackOptimizer optimizer = AttackOptimizer::kSignedGradient;
  std::vector<LrStage> lr_schedule;  // kAdam only
  int restarts = 1;
  std::uint64_t rng_seed = 0;

  void validate() const;
  double adam_lr_at(int step) const;
};

struct SpsaConfig {
  int num_samples = 128;  // n, must be even
  double perturbation = 0.01;  // delta
  int num_iterations = 100;
  double step_size = 1.0 / 255.0;
  double epsilon = 16.0 / 255.0;
  double random_init_prob = 0.0;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

namespace attack_presets {
/// Random-targeted signed-gradient PGD used inside adversarial training:
/// eps 16/255, step 1/255, init probability 0.8.
AttackConfig training();
/// Evaluation PGD with `steps` iterations: step 1.6/255 at 10 steps, else 1/255.
AttackConfig evaluation(int steps);
/// 250-step Adam attack, lr 0.1 until step 100, 0.01 until 200, then 0.001.
AttackConfig adam();
/// Gradient-free check: 4096 samples per iteration, 100 iterations.
SpsaConfig spsa();
}  // namespace attack_presets

/// Per-image attack outcome.
struct ImageOutcome {
  int label = 0;
  int target = -1;  // -1 for untargeted attacks
  int clean_prediction = -1;
  int final_prediction = -1;
  bool success = false;
  /// Under multi-restart: true only if every restart left the prediction correct.
  bool all_restarts_correct = false;
  double final_loss = 0.0;
  /// Cross-entropy the attack works on (target class, or true label when
  /// untargeted) at the start point and after every step.
  std::vector<double> loss_trace;
  int restart = 0;  // which restart produced this example
};

struct AttackResult {
  ImageBatch adversarial;
  std::vector<ImageOutcome> outcomes;
  int restarts_used = 1;
};

/// Called with (image index within the batch, step, iterate) after the start
/// point (step 0) and after every projected step. May be called concurrently
/// for different images.
using IterateObserver = std::function<void(std::size_t, int, std::span<const float>)>;

struct AttackContext {
  int restart = 0;
  /// Added to batch-local indices when deriving rng streams.
  std::size_t index_offset = 0;
  const IterateObserver* observer = nullptr;
};

/// Clamp x into [x0 - eps, x0 + eps] ∩ [0, 1]. Bounds are rounded inward so
/// the float result satisfies the constraint exactly in real arithmetic.
std::vector<float> project_linf(std::span<const float> x, std::span<const float> x0, double epsilon);
void project_linf_inplace(std::span<float> x, std::span<const float> x0, double epsilon);

/// x + step * sign(direction * grad) per coordinate; zero gradients do not move.
void signed_step(std::span<float> x, std::span<const float> grad, double step, double direction);

/// Target for the random-targeted mode: uniform over classes != label.
int draw_random_target(std::uint64_t seed, std::size_t image_index, int label, int num_classes);

/// Dispatches on cfg.optimizer.
AttackResult run_attack(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg,
                        const AttackContext& ctx = {});
AttackResult pgd_attack(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg,
                        const AttackContext& ctx = {});
AttackResult adam_pgd(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg,
                      const AttackContext& ctx = {});

/// Mean of n two-sided finite differences along Rademacher directions;
/// evaluates f exactly 2n times.
std::vector<double> spsa_gradient(const std::function<double(std::span<const float>)>& f, std::span<const float> x,
                                  const SpsaConfig& cfg, Rng& rng);

AttackResult spsa_attack(const Classifier& model, const ImageBatch& batch, const SpsaConfig& cfg, AttackMode mode,
                         int target_class = -1, const AttackContext& ctx = {});

using AttackFn = std::function<AttackResult(const ImageBatch&, int restart)>;

/// Runs `restarts` attacks (restart indices 0..R-1) and keeps, per image, the
/// strongest example: a successful one if any, else a misclassified one, else
/// the one with the best attack loss.
AttackResult multi_restart(const AttackFn& attack, const ImageBatch& batch, int restarts);
/// The fold multi_restart applies, exposed for testing.
AttackResult fold_restarts(std::vector<AttackResult> runs);

}  // namespace s3ta
