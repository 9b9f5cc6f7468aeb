#include "s3ta/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <random>

#include "s3ta/errors.hpp"
#include "s3ta/kernels.hpp"
#include "s3ta/parallel.hpp"
#include "s3ta/rng.hpp"

namespace s3ta {

using kernels::Trans;

// ---------------------------------------------------------------------------
// Attention

template <typename T>
AttentionRead<T> attend(std::span<const T> query, const FeatureMap<T>& keys_aug, const FeatureMap<T>& values_aug) {
  if (static_cast<int>(query.size()) != keys_aug.channels)
    throw InvalidArgument("attend: query length " + std::to_string(query.size()) + " does not match " +
                          std::to_string(keys_aug.channels) + " key channels");
  if (keys_aug.height != values_aug.height || keys_aug.width != values_aug.width)
    throw InvalidArgument("attend: keys and values must share the spatial grid");
  const int p = keys_aug.positions();
  AttentionRead<T> read;
  read.query.assign(query.begin(), query.end());
  read.logits_map.resize(p);
  read.attention_map.resize(p);
  read.answer.resize(values_aug.channels);
  kernels::gemv<T>(Trans::kYes, keys_aug.channels, p, T(1), keys_aug.data.data(), p, query.data(), T(0),
                   read.logits_map.data());
  layers::softmax<T>(read.logits_map, read.attention_map);
  // A single map weights every value channel.
  kernels::gemv<T>(Trans::kNo, values_aug.channels, p, T(1), values_aug.data.data(), p,
                   read.attention_map.data(), T(0), read.answer.data());
  return read;
}

template <typename T>
FeatureMap<T> append_basis(const FeatureMap<T>& features, const SpatialBasis& basis) {
  if (basis.height != features.height || basis.width != features.width)
    throw InvalidArgument("spatial basis grid does not match the feature grid");
  FeatureMap<T> out{features.channels + basis.channels, features.height, features.width, {}};
  const int p = features.positions();
  out.data.resize(static_cast<std::size_t>(out.channels) * p);
  std::copy(features.data.begin(), features.data.end(), out.data.begin());
  T* dst = out.data.data() + static_cast<std::size_t>(features.channels) * p;
  for (int c = 0; c < basis.channels; ++c)
    for (int y = 0; y < basis.height; ++y)
      for (int x = 0; x < basis.width; ++x)
        dst[static_cast<std::size_t>(c) * p + y * basis.width + x] = static_cast<T>(basis.at(y, x, c));
  return out;
}

// ---------------------------------------------------------------------------
// Losses

template <typename T>
double cross_entropy_with_grad(std::span<const T> logits, int label, double smoothing, std::span<T> dlogits) {
  const int n = static_cast<int>(logits.size());
  if (label < 0 || label >= n) throw InvalidArgument("label out of range");
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw InvalidArgument("smoothing must lie in [0, 1)");
  double mx = -std::numeric_limits<double>::infinity();
  for (T z : logits) mx = std::max(mx, static_cast<double>(z));
  double sum = 0.0;
  for (T z : logits) sum += std::exp(static_cast<double>(z) - mx);
  const double lse = mx + std::log(sum);
  double loss = 0.0;
  for (int c = 0; c < n; ++c) {
    const double target = (c == label ? 1.0 - smoothing : 0.0) + smoothing / n;
    const double logp = static_cast<double>(logits[c]) - lse;
    if (target > 0.0) loss -= target * logp;
    if (!dlogits.empty()) dlogits[c] = static_cast<T>(std::exp(logp) - target);
  }
  return loss;
}

double smoothed_cross_entropy(std::span<const double> logits, std::span<const int> labels, int num_classes,
                              double smoothing) {
  if (labels.empty() || logits.size() != labels.size() * num_classes)
    throw InvalidArgument("smoothed_cross_entropy: logits must be (batch, num_classes)");
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    total += cross_entropy_with_grad<double>(logits.subspan(i * num_classes, num_classes), labels[i], smoothing, {});
  return total / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Network

template <typename T>
struct S3taNetwork<T>::Index {
  struct Block {
    std::size_t w1, b1, w2, b2;
    std::ptrdiff_t shortcut = -1;
  };
  std::size_t stem_w, stem_b;
  std::vector<Block> blocks;
  std::size_t ctrl_wx, ctrl_wh, ctrl_b, h0, c0;
  std::size_t q_w1, q_b1, q_w2, q_b2;
  std::size_t o_w1, o_b1, o_w2, o_b2;
};

template <typename T>
S3taNetwork<T>::S3taNetwork(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  auto layout = std::make_shared<ParameterLayout>(model_parameter_layout(config_));
  auto idx = std::make_shared<Index>();
  const auto& L = *layout;
  idx->stem_w = L.index_of("backbone.stem.weight");
  idx->stem_b = L.index_of("backbone.stem.bias");

  layers::ConvGeometry stem{config_.input_channels, config_.input_height, config_.input_width,
                            config_.stem_channels, 3, config_.stem_stride, 1};
  convs_.push_back(stem);
  int in_c = config_.stem_channels, h = stem.out_height(), w = stem.out_width();
  for (std::size_t i = 0; i < config_.blocks.size(); ++i) {
    const auto& b = config_.blocks[i];
    const std::string p = "backbone.block" + std::to_string(i);
    typename Index::Block bi{L.index_of(p + ".conv1.weight"), L.index_of(p + ".conv1.bias"),
                             L.index_of(p + ".conv2.weight"), L.index_of(p + ".conv2.bias"), -1};
    if (L.contains(p + ".shortcut.weight")) bi.shortcut = static_cast<std::ptrdiff_t>(L.index_of(p + ".shortcut.weight"));
    idx->blocks.push_back(bi);
    layers::ConvGeometry c1{in_c, h, w, b.channels, 3, b.stride, 1};
    layers::ConvGeometry c2{b.channels, c1.out_height(), c1.out_width(), b.channels, 3, 1, 1};
    layers::ConvGeometry sc{in_c, h, w, b.channels, 1, b.stride, 0};
    convs_.push_back(c1);
    convs_.push_back(c2);
    convs_.push_back(sc);
    in_c = b.channels;
    h = c1.out_height();
    w = c1.out_width();
  }
  idx->ctrl_wx = L.index_of("controller.input_weight");
  idx->ctrl_wh = L.index_of("controller.recurrent_weight");
  idx->ctrl_b = L.index_of("controller.bias");
  idx->h0 = L.index_of("controller.initial_hidden");
  idx->c0 = L.index_of("controller.initial_cell");
  idx->q_w1 = L.index_of("query.hidden_weight");
  idx->q_b1 = L.index_of("query.hidden_bias");
  idx->q_w2 = L.index_of("query.output_weight");
  idx->q_b2 = L.index_of("query.output_bias");
  idx->o_w1 = L.index_of("output.hidden_weight");
  idx->o_b1 = L.index_of("output.hidden_bias");
  idx->o_w2 = L.index_of("output.output_weight");
  idx->o_b2 = L.index_of("output.output_bias");
  layout_ = std::move(layout);
  index_ = std::move(idx);
  basis_ = build_spatial_basis(config_.grid_height(), config_.grid_width(), config_.basis_frequencies);
}

template <typename T>
ParameterSet<T> S3taNetwork<T>::make_parameters() const {
  return ParameterSet<T>(layout_);
}

template <typename T>
ParameterSet<T> S3taNetwork<T>::init_parameters(std::uint64_t seed) const {
  ParameterSet<T> params(layout_);
  Rng rng = make_rng(seed, {0x1417});
  const auto& I = *index_;
  auto uniform = [&](std::span<T> dst, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : dst) v = static_cast<T>(dist(rng));
  };
  auto fan_in = [&](std::size_t index) {
    const auto& shape = layout_->entries()[index].shape;
    int f = 1;
    for (std::size_t d = 1; d < shape.size(); ++d) f *= shape[d];
    return static_cast<double>(f);
  };
  // ReLU-fed layers get the He bound, linear read-outs and the cell 1/sqrt(fan_in).
  auto relu_layer = [&](std::size_t index) { uniform(params.at(index), std::sqrt(6.0 / fan_in(index))); };
  auto linear_layer = [&](std::size_t index) { uniform(params.at(index), 1.0 / std::sqrt(fan_in(index))); };

  relu_layer(I.stem_w);
  for (const auto& b : I.blocks) {
    relu_layer(b.w1);
    relu_layer(b.w2);
    if (b.shortcut >= 0) linear_layer(static_cast<std::size_t>(b.shortcut));
  }
  linear_layer(I.ctrl_wx);
  linear_layer(I.ctrl_wh);
  auto bias = params.at(I.ctrl_b);
  const int hw = config_.controller_width;
  for (int j = hw; j < 2 * hw; ++j) bias[j] = T(1);
  uniform(params.at(I.h0), 0.1);
  uniform(params.at(I.c0), 0.1);
  relu_layer(I.q_w1);
  linear_layer(I.q_w2);
  relu_layer(I.o_w1);
  linear_layer(I.o_w2);
  return params;
}

template <typename T>
void S3taNetwork<T>::check_image(std::span<const T> image) const {
  if (static_cast<int>(image.size()) != config_.input_size())
    throw InvalidArgument("image has " + std::to_string(image.size()) + " values, model expects " +
                          std::to_string(config_.input_size()));
}

template <typename T>
int S3taNetwork<T>::resolve_readout(int readout_step) const {
  const int r = readout_step == 0 ? config_.unroll_steps : readout_step;
  if (r < 1 || r > config_.unroll_steps)
    throw InvalidArgument("readout_step " + std::to_string(readout_step) + " outside [1, " +
                          std::to_string(config_.unroll_steps) + "]");
  return r;
}

namespace {

template <typename T>
void vision_pass(const ModelConfig& cfg, const std::vector<layers::ConvGeometry>& convs, const ParameterSet<T>& params,
                 std::size_t stem_w, std::size_t stem_b, const auto& blocks, std::span<const T> image,
                 ForwardTrace<T>& trace) {
  const int hw = cfg.input_height * cfg.input_width;
  const int ch = cfg.input_channels;
  trace.input.resize(image.size());
  for (int p = 0; p < hw; ++p)
    for (int c = 0; c < ch; ++c) trace.input[static_cast<std::size_t>(c) * hw + p] = image[static_cast<std::size_t>(p) * ch + c];

  std::vector<T> col;
  const auto& stem = convs[0];
  trace.stem_out.resize(static_cast<std::size_t>(stem.out_channels) * stem.out_size());
  layers::conv2d_forward<T>(stem, trace.input.data(), params.at(stem_w).data(), params.at(stem_b).data(),
                            trace.stem_out.data(), col);
  std::vector<T> x = trace.stem_out;
  trace.blocks.resize(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& c1 = convs[1 + 3 * i];
    const auto& c2 = convs[2 + 3 * i];
    const auto& sc = convs[3 + 3 * i];
    auto& cache = trace.blocks[i];
    cache.input = x;
    cache.activated = x;
    layers::relu_inplace<T>(cache.activated);
    cache.hidden.resize(static_cast<std::size_t>(c1.out_channels) * c1.out_size());
    layers::conv2d_forward<T>(c1, cache.activated.data(), params.at(blocks[i].w1).data(),
                              params.at(blocks[i].b1).data(), cache.hidden.data(), col);
    layers::relu_inplace<T>(cache.hidden);
    std::vector<T> y(static_cast<std::size_t>(c2.out_channels) * c2.out_size());
    layers::conv2d_forward<T>(c2, cache.hidden.data(), params.at(blocks[i].w2).data(), params.at(blocks[i].b2).data(),
                              y.data(), col);
    if (blocks[i].shortcut >= 0) {
      std::vector<T> s(y.size());
      layers::conv2d_forward<T>(sc, cache.activated.data(), params.at(static_cast<std::size_t>(blocks[i].shortcut)).data(),
                                nullptr, s.data(), col);
      for (std::size_t j = 0; j < y.size(); ++j) y[j] += s[j];
    } else {
      for (std::size_t j = 0; j < y.size(); ++j) y[j] += x[j];
    }
    x = std::move(y);
  }
  trace.backbone_out = x;
  layers::relu_inplace<T>(x);

  const int gh = cfg.grid_height(), gw = cfg.grid_width();
  const auto p = static_cast<std::size_t>(gh) * gw;
  auto& f = trace.features;
  f.keys = {cfg.key_channels, gh, gw, std::vector<T>(x.begin(), x.begin() + cfg.key_channels * p)};
  f.values = {cfg.value_channels, gh, gw, std::vector<T>(x.begin() + cfg.key_channels * p, x.end())};
}

}  // namespace

template <typename T>
VisionFeatures<T> S3taNetwork<T>::vision_forward(const ParameterSet<T>& params, std::span<const T> image) const {
  check_image(image);
  ForwardTrace<T> trace;
  vision_pass<T>(config_, convs_, params, index_->stem_w, index_->stem_b, index_->blocks, image, trace);
  return std::move(trace.features);
}

template <typename T>
ControllerState<T> S3taNetwork<T>::initial_state(const ParameterSet<T>& params) const {
  const auto h0 = params.at(index_->h0);
  const auto c0 = params.at(index_->c0);
  return {std::vector<T>(h0.begin(), h0.end()), std::vector<T>(c0.begin(), c0.end()),
          std::vector<T>(config_.num_classes, T(0))};
}

template <typename T>
std::vector<std::vector<T>> S3taNetwork<T>::make_queries(const ControllerState<T>& state,
                                                         const ParameterSet<T>& params) const {
  const int hw = config_.controller_width, nc = config_.num_classes;
  if (static_cast<int>(state.hidden.size()) != hw || static_cast<int>(state.previous_logits.size()) != nc)
    throw InvalidArgument("controller state has the wrong width");
  std::vector<T> z(state.hidden);
  z.insert(z.end(), state.previous_logits.begin(), state.previous_logits.end());
  std::vector<T> hidden(config_.query_hidden_width);
  layers::dense_forward<T>(config_.query_hidden_width, hw + nc, params.at(index_->q_w1).data(),
                           params.at(index_->q_b1).data(), z.data(), hidden.data());
  layers::relu_inplace<T>(hidden);
  const int dq = config_.query_width();
  std::vector<T> all(static_cast<std::size_t>(config_.num_heads) * dq);
  layers::dense_forward<T>(config_.num_heads * dq, config_.query_hidden_width, params.at(index_->q_w2).data(),
                           params.at(index_->q_b2).data(), hidden.data(), all.data());
  std::vector<std::vector<T>> queries;
  for (int n = 0; n < config_.num_heads; ++n) queries.emplace_back(all.begin() + n * dq, all.begin() + (n + 1) * dq);
  return queries;
}

template <typename T>
ControllerState<T> S3taNetwork<T>::controller_step(const ControllerState<T>& state,
                                                   std::span<const AttentionRead<T>> reads,
                                                   const ParameterSet<T>& params) const {
  if (static_cast<int>(reads.size()) != config_.num_heads)
    throw InvalidArgument("controller_step expects " + std::to_string(config_.num_heads) + " reads, got " +
                          std::to_string(reads.size()));
  const int hw = config_.controller_width;
  if (static_cast<int>(state.hidden.size()) != hw || static_cast<int>(state.cell.size()) != hw)
    throw InvalidArgument("controller state has the wrong width");
  std::vector<T> x;
  x.reserve(config_.controller_input_width());
  for (const auto& r : reads) {
    if (static_cast<int>(r.answer.size()) != config_.answer_width()) throw InvalidArgument("answer has the wrong length");
    x.insert(x.end(), r.answer.begin(), r.answer.end());
  }
  for (const auto& r : reads) {
    if (static_cast<int>(r.query.size()) != config_.query_width()) throw InvalidArgument("query has the wrong length");
    x.insert(x.end(), r.query.begin(), r.query.end());
  }
  layers::LstmStep<T> cell;
  layers::lstm_forward<T>(hw, config_.controller_input_width(), params.at(index_->ctrl_wx).data(),
                          params.at(index_->ctrl_wh).data(), params.at(index_->ctrl_b).data(), x.data(),
                          state.hidden.data(), state.cell.data(), cell);
  std::vector<T> oh(config_.output_hidden_width);
  layers::dense_forward<T>(config_.output_hidden_width, hw, params.at(index_->o_w1).data(),
                           params.at(index_->o_b1).data(), cell.hidden.data(), oh.data());
  layers::relu_inplace<T>(oh);
  std::vector<T> logits(config_.num_classes);
  layers::dense_forward<T>(config_.num_classes, config_.output_hidden_width, params.at(index_->o_w2).data(),
                           params.at(index_->o_b2).data(), oh.data(), logits.data());
  return {std::move(cell.hidden), std::move(cell.cell), std::move(logits)};
}

template <typename T>
void S3taNetwork<T>::step_forward(const ParameterSet<T>& params, const ForwardTrace<T>& trace,
                                  typename ForwardTrace<T>::Step& step) const {
  const auto& I = *index_;
  const int hw = config_.controller_width, nc = config_.num_classes;
  const int dq = config_.query_width(), nh = config_.num_heads;

  step.query_input = step.state_in.hidden;
  step.query_input.insert(step.query_input.end(), step.state_in.previous_logits.begin(),
                          step.state_in.previous_logits.end());
  step.query_hidden.resize(config_.query_hidden_width);
  layers::dense_forward<T>(config_.query_hidden_width, hw + nc, params.at(I.q_w1).data(), params.at(I.q_b1).data(),
                           step.query_input.data(), step.query_hidden.data());
  layers::relu_inplace<T>(step.query_hidden);
  std::vector<T> queries(static_cast<std::size_t>(nh) * dq);
  layers::dense_forward<T>(nh * dq, config_.query_hidden_width, params.at(I.q_w2).data(), params.at(I.q_b2).data(),
                           step.query_hidden.data(), queries.data());

  step.reads.clear();
  for (int n = 0; n < nh; ++n)
    step.reads.push_back(attend<T>(std::span<const T>(queries).subspan(n * dq, dq), trace.keys_aug, trace.values_aug));

  step.controller_input.clear();
  step.controller_input.reserve(config_.controller_input_width());
  for (const auto& r : step.reads) step.controller_input.insert(step.controller_input.end(), r.answer.begin(), r.answer.end());
  step.controller_input.insert(step.controller_input.end(), queries.begin(), queries.end());

  layers::lstm_forward<T>(hw, config_.controller_input_width(), params.at(I.ctrl_wx).data(), params.at(I.ctrl_wh).data(),
                          params.at(I.ctrl_b).data(), step.controller_input.data(), step.state_in.hidden.data(),
                          step.state_in.cell.data(), step.cell);
  step.output_hidden.resize(config_.output_hidden_width);
  layers::dense_forward<T>(config_.output_hidden_width, hw, params.at(I.o_w1).data(), params.at(I.o_b1).data(),
                           step.cell.hidden.data(), step.output_hidden.data());
  layers::relu_inplace<T>(step.output_hidden);
  step.logits.resize(nc);
  layers::dense_forward<T>(nc, config_.output_hidden_width, params.at(I.o_w2).data(), params.at(I.o_b2).data(),
                           step.output_hidden.data(), step.logits.data());
}

template <typename T>
ForwardTrace<T> S3taNetwork<T>::forward_trace(const ParameterSet<T>& params, std::span<const T> image,
                                              int readout_step) const {
  check_image(image);
  if (!(params.layout() == *layout_)) throw InvalidArgument("parameter layout does not match the model");
  const int steps = resolve_readout(readout_step);
  ForwardTrace<T> trace;
  vision_pass<T>(config_, convs_, params, index_->stem_w, index_->stem_b, index_->blocks, image, trace);
  trace.keys_aug = append_basis(trace.features.keys, basis_);
  trace.values_aug = append_basis(trace.features.values, basis_);
  trace.steps.resize(steps);
  ControllerState<T> state = initial_state(params);
  for (int t = 0; t < steps; ++t) {
    auto& step = trace.steps[t];
    step.state_in = std::move(state);
    step_forward(params, trace, step);
    state = {step.cell.hidden, step.cell.cell, step.logits};
  }
  return trace;
}

template <typename T>
std::vector<T> S3taNetwork<T>::forward(const ParameterSet<T>& params, std::span<const T> image, int readout_step) const {
  return forward_trace(params, image, readout_step).logits();
}

template <typename T>
void S3taNetwork<T>::backward(const ParameterSet<T>& params, const ForwardTrace<T>& trace, std::span<const T> dlogits,
                              ParameterSet<T>* dparams, std::span<T> dimage) const {
  const auto& I = *index_;
  const int hw = config_.controller_width, nc = config_.num_classes;
  const int dq = config_.query_width(), dv = config_.answer_width(), nh = config_.num_heads;
  const int pos = trace.keys_aug.positions();
  if (static_cast<int>(dlogits.size()) != nc) throw InvalidArgument("dlogits has the wrong length");
  if (!dimage.empty() && static_cast<int>(dimage.size()) != config_.input_size())
    throw InvalidArgument("dimage has the wrong length");

  auto grad = [&](std::size_t index) -> T* { return dparams ? dparams->at(index).data() : nullptr; };
  auto w = [&](std::size_t index) { return params.at(index).data(); };

  std::vector<T> dh(hw, T(0)), dc(hw, T(0)), dlog(dlogits.begin(), dlogits.end());
  std::vector<T> dkeys_aug(static_cast<std::size_t>(dq) * pos, T(0));
  std::vector<T> dvalues_aug(static_cast<std::size_t>(dv) * pos, T(0));
  std::vector<T> dx(config_.controller_input_width()), dh_prev(hw), dc_prev(hw);
  std::vector<T> doh(config_.output_hidden_width), dq_all(static_cast<std::size_t>(nh) * dq);
  std::vector<T> dqh(config_.query_hidden_width), dz(hw + nc), dattn(pos), dlogit_map(pos);

  for (int t = static_cast<int>(trace.steps.size()) - 1; t >= 0; --t) {
    const auto& step = trace.steps[t];
    // Output network.
    std::fill(doh.begin(), doh.end(), T(0));
    layers::dense_backward<T>(nc, config_.output_hidden_width, w(I.o_w2), step.output_hidden.data(), dlog.data(),
                              grad(I.o_w2), grad(I.o_b2), doh.data());
    layers::relu_mask<T>(step.output_hidden, doh);
    layers::dense_backward<T>(config_.output_hidden_width, hw, w(I.o_w1), step.cell.hidden.data(), doh.data(),
                              grad(I.o_w1), grad(I.o_b1), dh.data());
    // Recurrent cell.
    std::fill(dx.begin(), dx.end(), T(0));
    layers::lstm_backward<T>(hw, config_.controller_input_width(), w(I.ctrl_wx), w(I.ctrl_wh),
                             step.controller_input.data(), step.state_in.hidden.data(), step.state_in.cell.data(),
                             step.cell, dh.data(), dc.data(), grad(I.ctrl_wx), grad(I.ctrl_wh), grad(I.ctrl_b),
                             dx.data(), dh_prev.data(), dc_prev.data());
    // Attention heads: dx holds d(answers) then d(queries).
    std::copy(dx.begin() + static_cast<std::ptrdiff_t>(nh) * dv, dx.end(), dq_all.begin());
    for (int n = 0; n < nh; ++n) {
      const auto& read = step.reads[n];
      const T* dans = dx.data() + static_cast<std::size_t>(n) * dv;
      kernels::gemv<T>(Trans::kYes, dv, pos, T(1), trace.values_aug.data.data(), pos, dans, T(0), dattn.data());
      kernels::ger<T>(dv, pos, T(1), dans, read.attention_map.data(), dvalues_aug.data(), pos);
      layers::softmax_backward<T>(read.attention_map, dattn, dlogit_map);
      kernels::gemv<T>(Trans::kNo, dq, pos, T(1), trace.keys_aug.data.data(), pos, dlogit_map.data(), T(1),
                       dq_all.data() + static_cast<std::size_t>(n) * dq);
      kernels::ger<T>(dq, pos, T(1), read.query.data(), dlogit_map.data(), dkeys_aug.data(), pos);
    }
    // Query network.
    std::fill(dqh.begin(), dqh.end(), T(0));
    layers::dense_backward<T>(nh * dq, config_.query_hidden_width, w(I.q_w2), step.query_hidden.data(), dq_all.data(),
                              grad(I.q_w2), grad(I.q_b2), dqh.data());
    layers::relu_mask<T>(step.query_hidden, dqh);
    std::fill(dz.begin(), dz.end(), T(0));
    layers::dense_backward<T>(config_.query_hidden_width, hw + nc, w(I.q_w1), step.query_input.data(), dqh.data(),
                              grad(I.q_w1), grad(I.q_b1), dz.data());
    for (int j = 0; j < hw; ++j) dh[j] = dh_prev[j] + dz[j];
    dc = dc_prev;
    std::copy(dz.begin() + hw, dz.end(), dlog.begin());
  }
  if (dparams) {
    auto g0 = dparams->at(I.h0);
    auto gc = dparams->at(I.c0);
    for (int j = 0; j < hw; ++j) {
      g0[j] += dh[j];
      gc[j] += dc[j];
    }
  }
  if (!dparams && dimage.empty()) return;

  // Backbone. Basis channels are constants; drop their gradients.
  const int ck = config_.key_channels, cv = config_.value_channels;
  std::vector<T> dy(static_cast<std::size_t>(ck + cv) * pos);
  std::copy(dkeys_aug.begin(), dkeys_aug.begin() + static_cast<std::ptrdiff_t>(ck) * pos, dy.begin());
  std::copy(dvalues_aug.begin(), dvalues_aug.begin() + static_cast<std::ptrdiff_t>(cv) * pos,
            dy.begin() + static_cast<std::ptrdiff_t>(ck) * pos);
  layers::relu_mask<T>(trace.backbone_out, dy);

  std::vector<T> col;
  for (int i = static_cast<int>(I.blocks.size()) - 1; i >= 0; --i) {
    const auto& bi = I.blocks[i];
    const auto& cache = trace.blocks[i];
    const auto& c1 = convs_[1 + 3 * i];
    const auto& c2 = convs_[2 + 3 * i];
    const auto& sc = convs_[3 + 3 * i];
    std::vector<T> dhidden(cache.hidden.size(), T(0));
    layers::conv2d_backward<T>(c2, cache.hidden.data(), w(bi.w2), dy.data(), grad(bi.w2), grad(bi.b2), dhidden.data(), col);
    layers::relu_mask<T>(cache.hidden, dhidden);
    std::vector<T> dact(cache.activated.size(), T(0));
    layers::conv2d_backward<T>(c1, cache.activated.data(), w(bi.w1), dhidden.data(), grad(bi.w1), grad(bi.b1),
                               dact.data(), col);
    std::vector<T> dinput;
    if (bi.shortcut >= 0) {
      const auto s = static_cast<std::size_t>(bi.shortcut);
      layers::conv2d_backward<T>(sc, cache.activated.data(), w(s), dy.data(), grad(s), nullptr, dact.data(), col);
      dinput.assign(cache.input.size(), T(0));
    } else {
      dinput = dy;
    }
    for (std::size_t j = 0; j < dinput.size(); ++j)
      if (cache.input[j] > T(0)) dinput[j] += dact[j];
    dy = std::move(dinput);
  }
  const auto& stem = convs_[0];
  std::vector<T> dinput_chw;
  if (!dimage.empty()) dinput_chw.assign(trace.input.size(), T(0));
  layers::conv2d_backward<T>(stem, trace.input.data(), w(I.stem_w), dy.data(), grad(I.stem_w), grad(I.stem_b),
                             dimage.empty() ? nullptr : dinput_chw.data(), col);
  if (!dimage.empty()) {
    const int hwi = config_.input_height * config_.input_width, ch = config_.input_channels;
    for (int p = 0; p < hwi; ++p)
      for (int c = 0; c < ch; ++c)
        dimage[static_cast<std::size_t>(p) * ch + c] = dinput_chw[static_cast<std::size_t>(c) * hwi + p];
  }
}

// ---------------------------------------------------------------------------
// Batch entry points

namespace {

template <typename T>
std::vector<T> image_as(const ImageBatch& batch, std::size_t i) {
  const auto img = batch.image(i);
  return std::vector<T>(img.begin(), img.end());
}

template <typename T>
void check_batch(const S3taNetwork<T>& net, const ImageBatch& batch) {
  const auto& c = net.config();
  if (batch.height != c.input_height || batch.width != c.input_width || batch.channels != c.input_channels)
    throw InvalidArgument("batch image shape does not match the model input");
  if (batch.pixels.size() != batch.size() * batch.image_size())
    throw InvalidArgument("batch pixel buffer has the wrong size");
}

}  // namespace

template <typename T>
std::vector<T> forward_batch(const S3taNetwork<T>& net, const ParameterSet<T>& params, const ImageBatch& batch,
                             int readout_step) {
  check_batch(net, batch);
  const int nc = net.config().num_classes;
  std::vector<T> logits(batch.size() * nc);
  parallel_for(batch.size(), [&](std::size_t begin, std::size_t end, int) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto img = image_as<T>(batch, i);
      const auto z = net.forward(params, img, readout_step);
      std::copy(z.begin(), z.end(), logits.begin() + static_cast<std::ptrdiff_t>(i) * nc);
    }
  });
  return logits;
}

template <typename T>
std::vector<T> input_gradient(const S3taNetwork<T>& net, const ParameterSet<T>& params, const ImageBatch& batch,
                              std::span<const int> target_labels, const LossSpec& spec, double* loss_out) {
  if (spec.kind != LossKind::kCrossEntropy)
    throw UnsupportedOperation("input_gradient: the zero-one loss has no gradient");
  check_batch(net, batch);
  if (target_labels.size() != batch.size()) throw InvalidArgument("one target label per image is required");
  const std::size_t n = batch.size();
  const int nc = net.config().num_classes;
  std::vector<T> grad(batch.pixels.size(), T(0));
  std::vector<double> losses(n, 0.0);
  const double weight = spec.scale / static_cast<double>(n);
  parallel_for(n, [&](std::size_t begin, std::size_t end, int) {
    std::vector<T> dlogits(nc);
    for (std::size_t i = begin; i < end; ++i) {
      const auto img = image_as<T>(batch, i);
      const auto trace = net.forward_trace(params, img, spec.readout_step);
      losses[i] = cross_entropy_with_grad<T>(trace.logits(), target_labels[i], spec.smoothing, dlogits);
      for (auto& d : dlogits) d = static_cast<T>(d * weight);
      net.backward(params, trace, dlogits, nullptr,
                   std::span<T>(grad.data() + i * batch.image_size(), batch.image_size()));
    }
  });
  if (loss_out) {
    double total = 0.0;
    for (double l : losses) total += l;
    *loss_out = total * weight;
  }
  return grad;
}

template <typename T>
double parameter_gradient(const S3taNetwork<T>& net, const ParameterSet<T>& params, const ImageBatch& batch,
                          std::span<const int> labels, const LossSpec& spec, ParameterSet<T>& grads) {
  if (spec.kind != LossKind::kCrossEntropy)
    throw UnsupportedOperation("parameter_gradient: the zero-one loss has no gradient");
  check_batch(net, batch);
  if (labels.size() != batch.size()) throw InvalidArgument("one label per image is required");
  const std::size_t n = batch.size();
  const int nc = net.config().num_classes;
  const double weight = spec.scale / static_cast<double>(n);
  grads = net.make_parameters();
  std::vector<ParameterSet<T>> partial(parallel_chunks(n));
  std::vector<double> losses(n, 0.0);
  parallel_for(n, [&](std::size_t begin, std::size_t end, int chunk) {
    ParameterSet<T> local = net.make_parameters();
    std::vector<T> dlogits(nc);
    for (std::size_t i = begin; i < end; ++i) {
      const auto img = image_as<T>(batch, i);
      const auto trace = net.forward_trace(params, img, spec.readout_step);
      losses[i] = cross_entropy_with_grad<T>(trace.logits(), labels[i], spec.smoothing, dlogits);
      for (auto& d : dlogits) d = static_cast<T>(d * weight);
      net.backward(params, trace, dlogits, &local, {});
    }
    partial[chunk] = std::move(local);
  });
  auto dst = grads.flat();
  for (const auto& p : partial) {
    const auto src = p.flat();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
  double total = 0.0;
  for (double l : losses) total += l;
  return total * weight;
}

#define S3TA_INSTANTIATE_NETWORK(T)                                                                         \
  template class S3taNetwork<T>;                                                                            \
  template AttentionRead<T> attend<T>(std::span<const T>, const FeatureMap<T>&, const FeatureMap<T>&);      \
  template FeatureMap<T> append_basis<T>(const FeatureMap<T>&, const SpatialBasis&);                        \
  template double cross_entropy_with_grad<T>(std::span<const T>, int, double, std::span<T>);                \
  template std::vector<T> forward_batch<T>(const S3taNetwork<T>&, const ParameterSet<T>&, const ImageBatch&, \
                                           int);                                                            \
  template std::vector<T> input_gradient<T>(const S3taNetwork<T>&, const ParameterSet<T>&, const ImageBatch&, \
                                            std::span<const int>, const LossSpec&, double*);                \
  template double parameter_gradient<T>(const S3taNetwork<T>&, const ParameterSet<T>&, const ImageBatch&,   \
                                        std::span<const int>, const LossSpec&, ParameterSet<T>&);

S3TA_INSTANTIATE_NETWORK(float)
S3TA_INSTANTIATE_NETWORK(double)

}  // namespace s3ta
