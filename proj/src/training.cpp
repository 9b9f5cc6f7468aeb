#include "s3ta/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "s3ta/classifier.hpp"
#include "s3ta/dataset.hpp"
#include "s3ta/errors.hpp"
#include "s3ta/eval.hpp"
#include "s3ta/rng.hpp"

namespace s3ta {
namespace {

constexpr std::uint64_t kAttackStream = 0xa77a;
constexpr std::uint64_t kAugmentStream = 0xa06e;
constexpr int kCropPad = 4;

// Random crop from a zero-padded copy plus a coin-flip mirror, in place.
void augment_image(std::span<float> img, int h, int w, int c, Rng& rng) {
  std::uniform_int_distribution<int> shift(-kCropPad, kCropPad);
  const int dy = shift(rng), dx = shift(rng);
  const bool flip = rng() >> 63;
  std::vector<float> src(img.begin(), img.end());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int sy = y + dy;
      const int sx0 = x + dx;
      const int sx = flip ? w - 1 - sx0 : sx0;
      for (int ch = 0; ch < c; ++ch) {
        float v = 0.0f;
        if (sy >= 0 && sy < h && sx0 >= 0 && sx0 < w) v = src[(static_cast<std::size_t>(sy) * w + sx) * c + ch];
        img[(static_cast<std::size_t>(y) * w + x) * c + ch] = v;
      }
    }
  }
}

}  // namespace

void TrainConfig::validate(int unroll_steps) const {
  if (epochs < 0) throw InvalidArgument("epochs must be >= 0");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (!(lr_per_256 > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (!(warmup_epochs >= 0.0)) throw InvalidArgument("warmup_epochs must be >= 0");
  for (std::size_t i = 1; i < decay_epochs.size(); ++i)
    if (!(decay_epochs[i] > decay_epochs[i - 1])) throw InvalidArgument("decay epochs must be increasing");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw InvalidArgument("decay_factor must lie in (0, 1]");
  if (!(weight_decay >= 0.0)) throw InvalidArgument("weight_decay must be >= 0");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw InvalidArgument("label_smoothing must lie in [0, 1)");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must lie in [0, 1)");
  if (staged_readout.empty()) throw InvalidArgument("staged_readout must not be empty");
  for (std::size_t i = 0; i < staged_readout.size(); ++i) {
    const auto& s = staged_readout[i];
    if (s.readout_step < 1 || s.readout_step > unroll_steps)
      throw InvalidArgument("staged readout steps must lie in [1, k]");
    if (i > 0 && s.epoch_threshold <= staged_readout[i - 1].epoch_threshold)
      throw InvalidArgument("staged readout thresholds must be increasing");
  }
  if (monitor_images < 0) throw InvalidArgument("monitor_images must be >= 0");
  inner_attack.validate();
  monitor_attack.validate();
}

namespace train_presets {

TrainConfig desk_scale(int unroll_steps) {
  TrainConfig c;
  c.inner_attack = attack_presets::training();
  c.inner_attack.epsilon = 8.0 / 255.0;
  c.inner_attack.step_size = 2.0 / 255.0;
  c.inner_attack.num_steps = 7;
  c.monitor_attack = c.inner_attack;
  c.monitor_attack.mode = AttackMode::kUntargeted;
  c.staged_readout = {{0, unroll_steps}};
  return c;
}

TrainConfig paper_scale(int unroll_steps) {
  TrainConfig c;
  c.epochs = 120;
  c.batch_size = 1024;
  c.decay_epochs = {35.0, 70.0, 95.0};
  c.inner_attack = attack_presets::training();
  c.monitor_attack = attack_presets::evaluation(10);
  if (unroll_steps == 16)
    c.staged_readout = {{0, 4}, {35, 8}, {70, 16}};
  else
    c.staged_readout = {{0, unroll_steps}};
  return c;
}

}  // namespace train_presets

double lr_at(double epoch, const TrainConfig& cfg) {
  const double base = cfg.base_lr();
  if (epoch < cfg.warmup_epochs) return base * epoch / cfg.warmup_epochs;
  double lr = base;
  for (double d : cfg.decay_epochs)
    if (epoch >= d) lr *= cfg.decay_factor;
  return lr;
}

int staged_readout_at(int epoch, const TrainConfig& cfg) {
  if (cfg.staged_readout.empty()) throw InvalidArgument("staged_readout must not be empty");
  int step = cfg.staged_readout.front().readout_step;
  for (const auto& s : cfg.staged_readout)
    if (epoch >= s.epoch_threshold) step = s.readout_step;
  return step;
}

TrainState TrainState::fresh(ParameterSet<float> params) {
  TrainState s;
  s.momentum = ParameterSet<float>(params.shared_layout());
  s.params = std::move(params);
  return s;
}

void apply_update(TrainState& state, const ParameterSet<float>& grad, double lr, const TrainConfig& cfg) {
  auto theta = state.params.flat();
  auto v = state.momentum.flat();
  const auto g = grad.flat();
  if (g.size() != theta.size() || v.size() != theta.size()) throw InvalidArgument("apply_update: size mismatch");
  const float mu = static_cast<float>(cfg.momentum);
  const float shrink = static_cast<float>(1.0 - lr * cfg.weight_decay);
  const float step = static_cast<float>(lr);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    v[i] = mu * v[i] + g[i];
    theta[i] = theta[i] * shrink - step * v[i];
  }
  ++state.step;
}

AttackResult inner_attack_batch(const S3taNetwork<float>& net, const TrainState& state, const ImageBatch& batch,
                                const TrainConfig& cfg, double epoch, std::size_t index_offset) {
  const S3taClassifier model(net, state.params, staged_readout_at(static_cast<int>(std::floor(epoch)), cfg));
  AttackConfig attack = cfg.inner_attack;
  attack.rng_seed = derive_seed(cfg.rng_seed, {static_cast<std::uint64_t>(state.step), kAttackStream});
  AttackContext ctx;
  ctx.index_offset = index_offset;
  return run_attack(model, batch, attack, ctx);
}

StepMetrics adversarial_train_step(const S3taNetwork<float>& net, TrainState& state, const ImageBatch& batch,
                                   const TrainConfig& cfg, double epoch, std::size_t index_offset) {
  StepMetrics m;
  m.lr = lr_at(epoch, cfg);
  m.readout_step = staged_readout_at(static_cast<int>(std::floor(epoch)), cfg);

  const auto adv = inner_attack_batch(net, state, batch, cfg, epoch, index_offset);
  std::size_t hits = 0;
  for (const auto& o : adv.outcomes) hits += o.success;
  m.attack_success = static_cast<double>(hits) / batch.size();

  LossSpec spec;
  spec.smoothing = cfg.label_smoothing;
  spec.readout_step = m.readout_step;
  ParameterSet<float> grad;
  m.loss = parameter_gradient(net, state.params, adv.adversarial, adv.adversarial.labels, spec, grad);
  if (!std::isfinite(m.loss)) throw NumericalFailure("non-finite training loss at step " + std::to_string(state.step));
  apply_update(state, grad, m.lr, cfg);
  return m;
}

void train(const S3taNetwork<float>& net, TrainState& state, const ImageBatch& train_set, const ImageBatch* monitor_set,
           const TrainConfig& cfg, const TrainCallbacks& callbacks) {
  cfg.validate(net.config().unroll_steps);
  if (train_set.size() == 0) throw InvalidArgument("empty training set");
  train_set.validate(net.config().num_classes);
  const std::size_t n = train_set.size();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;

  for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_order(cfg.rng_seed, epoch, n);
    double loss_sum = 0.0;
    double last_lr = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * cfg.batch_size;
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      ImageBatch batch = take(train_set, std::span(order).subspan(begin, end - begin));
      if (cfg.augment) {
        for (std::size_t i = 0; i < batch.size(); ++i) {
          Rng rng = make_rng(cfg.rng_seed, {static_cast<std::uint64_t>(epoch), order[begin + i], kAugmentStream});
          augment_image(batch.image(i), batch.height, batch.width, batch.channels, rng);
        }
      }
      const double frac = epoch + static_cast<double>(b) / batches;
      const auto m = adversarial_train_step(net, state, batch, cfg, frac, static_cast<std::size_t>(epoch) * n + begin);
      loss_sum += m.loss * batch.size();
      last_lr = m.lr;
      if (callbacks.on_step) callbacks.on_step(m, state);
    }

    EpochMetrics em;
    em.epoch = epoch + 1;
    em.lr = last_lr;
    em.adv_loss = loss_sum / n;
    if (monitor_set && monitor_set->size() > 0 && cfg.monitor_images > 0) {
      const std::size_t count = std::min<std::size_t>(monitor_set->size(), cfg.monitor_images);
      std::vector<std::size_t> idx(count);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      const ImageBatch slice = take(*monitor_set, idx);
      const S3taClassifier model(net, state.params, staged_readout_at(epoch, cfg));
      const auto summary = evaluate(model, slice, cfg.monitor_attack);
      em.clean_top1 = summary.nominal_top1;
      em.robust_top1 = summary.robust_top1;
    }
    state.epoch = epoch + 1;
    state.history.push_back(em);
    if (callbacks.on_epoch) callbacks.on_epoch(state);
  }
}

}  // namespace s3ta
