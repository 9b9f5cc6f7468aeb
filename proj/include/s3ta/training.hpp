#pragma once

// Adversarial training: every update is computed on adversarial examples
// found by the inner attack against the current parameters. Clean images do
// not contribute to the loss.

#include <cstdint>
#include <functional>
#include <vector>

#include "s3ta/attacks.hpp"
#include "s3ta/image.hpp"
#include "s3ta/network.hpp"
#include "s3ta/parameters.hpp"

namespace s3ta {

/// From `epoch_threshold` on, logits are read out after `readout_step` steps.
struct ReadoutStage {
  int epoch_threshold = 0;
  int readout_step = 1;
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 128;
  /// Learning rate per 256 images; the applied rate is lr_per_256 * batch_size / 256.
  double lr_per_256 = 0.05;
  double warmup_epochs = 5.0;
  std::vector<double> decay_epochs = {20.0, 25.0};
  double decay_factor = 0.1;
  double weight_decay = 1e-4;
  double label_smoothing = 0.1;
  double momentum = 0.9;
  AttackConfig inner_attack;
  std::vector<ReadoutStage> staged_readout = {{0, 2}};
  /// Images of the held-out set scored after each epoch (0: skip).
  int monitor_images = 256;
  AttackConfig monitor_attack;
  /// Random crop (4-pixel zero padding) and horizontal flip.
  bool augment = false;
  std::uint64_t rng_seed = 0;

  double base_lr() const { return lr_per_256 * batch_size / 256.0; }
  /// `unroll_steps` bounds the staged readout steps.
  void validate(int unroll_steps) const;
};

namespace train_presets {
/// 30 epochs, batch 128, 7-step targeted-random PGD at eps 8/255 (step 2/255).
TrainConfig desk_scale(int unroll_steps);
/// 120 epochs, decays at 35/70/95, 10-step PGD at eps 16/255, readout 4/8/16
/// for k = 16 (single stage at k otherwise).
TrainConfig paper_scale(int unroll_steps);
}  // namespace train_presets

/// Linear warmup from 0 to base_lr, then a factor decay_factor at every decay epoch passed.
double lr_at(double epoch, const TrainConfig& cfg);
/// Readout step of the last stage whose threshold is <= epoch.
int staged_readout_at(int epoch, const TrainConfig& cfg);

struct EpochMetrics {
  int epoch = 0;  // 1-based count of completed epochs
  double lr = 0.0;  // at the end of the epoch
  double adv_loss = 0.0;  // mean training loss on adversarial images
  double clean_top1 = 0.0;  // on the monitor slice
  double robust_top1 = 0.0;
};

struct TrainState {
  ParameterSet<float> params;
  ParameterSet<float> momentum;
  int epoch = 0;  // completed epochs
  std::int64_t step = 0;  // completed updates
  std::vector<EpochMetrics> history;

  static TrainState fresh(ParameterSet<float> params);
};

struct StepMetrics {
  double loss = 0.0;
  double lr = 0.0;
  int readout_step = 0;
  double attack_success = 0.0;
};

/// Momentum SGD with decoupled weight decay:
///   v <- momentum * v + grad;  theta <- theta * (1 - lr * wd) - lr * v
void apply_update(TrainState& state, const ParameterSet<float>& grad, double lr, const TrainConfig& cfg);

/// The adversarial batch the next adversarial_train_step would train on.
AttackResult inner_attack_batch(const S3taNetwork<float>& net, const TrainState& state, const ImageBatch& batch,
                                const TrainConfig& cfg, double epoch, std::size_t index_offset = 0);

/// One update at fractional epoch `epoch`: inner attack, loss on the
/// adversarial batch only, apply_update. `index_offset` keys the attack's
/// per-image rng streams.
StepMetrics adversarial_train_step(const S3taNetwork<float>& net, TrainState& state, const ImageBatch& batch,
                                   const TrainConfig& cfg, double epoch, std::size_t index_offset = 0);

struct TrainCallbacks {
  std::function<void(const StepMetrics&, const TrainState&)> on_step;
  /// Called after every epoch, after the metrics are appended to the history.
  std::function<void(const TrainState&)> on_epoch;
};

/// Runs epochs state.epoch .. cfg.epochs - 1. A non-finite loss throws
/// NumericalFailure.
void train(const S3taNetwork<float>& net, TrainState& state, const ImageBatch& train_set, const ImageBatch* monitor_set,
           const TrainConfig& cfg, const TrainCallbacks& callbacks = {});

}  // namespace s3ta
