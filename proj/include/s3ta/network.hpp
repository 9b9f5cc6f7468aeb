#pragma once

// The sequential top-down attention classifier.
//
// A residual conv backbone turns the image into a feature grid, split along
// channels into keys and values; a fixed spatial basis is appended to both.
// A recurrent controller is unrolled for a number of steps. At each step a
// query network decodes the controller state (plus the previous step's
// logits) into one query per head, each head reads the values through a
// spatial softmax over query-key products, and the answers together with the
// queries drive the next controller step. Logits are decoded from the
// controller's hidden state by an output network.
//
// Everything here is a pure function of (parameters, inputs); the network
// object only holds the configuration, the layout and the basis.

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "s3ta/basis.hpp"
#include "s3ta/config.hpp"
#include "s3ta/image.hpp"
#include "s3ta/layers.hpp"
#include "s3ta/parameters.hpp"

namespace s3ta {

/// Channel-major (channels, height, width) tensor.
template <typename T>
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  int positions() const { return height * width; }
  std::span<const T> channel(int c) const {
    return {data.data() + static_cast<std::size_t>(c) * positions(), static_cast<std::size_t>(positions())};
  }
  T at(int y, int x, int c) const { return data[static_cast<std::size_t>(c) * positions() + y * width + x]; }
};

/// Backbone output split into keys (first C_k channels) and values.
template <typename T>
struct VisionFeatures {
  FeatureMap<T> keys;
  FeatureMap<T> values;
};

/// One head's read at one step. Maps are row-major (y * width + x).
template <typename T>
struct AttentionRead {
  std::vector<T> query;
  std::vector<T> logits_map;
  std::vector<T> attention_map;
  std::vector<T> answer;
};

template <typename T>
struct ControllerState {
  std::vector<T> hidden;
  std::vector<T> cell;
  std::vector<T> previous_logits;
};

/// query . keys_aug at every position, spatial softmax, then the
/// attention-weighted spatial sum of values_aug.
template <typename T>
AttentionRead<T> attend(std::span<const T> query, const FeatureMap<T>& keys_aug, const FeatureMap<T>& values_aug);

/// `features` with the basis channels appended.
template <typename T>
FeatureMap<T> append_basis(const FeatureMap<T>& features, const SpatialBasis& basis);

enum class LossKind { kCrossEntropy, kZeroOne };

struct LossSpec {
  LossKind kind = LossKind::kCrossEntropy;
  double smoothing = 0.0;
  int readout_step = 0;  // 0 means the configured unroll_steps
  double scale = 1.0;
};

/// Mean over the batch of the label-smoothed cross-entropy; logits are
/// (batch, num_classes) row-major.
double smoothed_cross_entropy(std::span<const double> logits, std::span<const int> labels, int num_classes,
                              double smoothing);

/// Per-example loss and dL/dlogits for one row.
template <typename T>
double cross_entropy_with_grad(std::span<const T> logits, int label, double smoothing, std::span<T> dlogits);

template <typename T>
struct BlockCache {
  std::vector<T> input;        // block input x
  std::vector<T> activated;    // relu(x)
  std::vector<T> hidden;       // relu(conv1(relu(x)))
};

/// Everything the backward pass needs from one forward pass.
template <typename T>
struct ForwardTrace {
  struct Step {
    ControllerState<T> state_in;
    std::vector<T> query_input;   // hidden ++ previous_logits
    std::vector<T> query_hidden;  // post-ReLU
    std::vector<AttentionRead<T>> reads;
    std::vector<T> controller_input;
    layers::LstmStep<T> cell;
    std::vector<T> output_hidden;  // post-ReLU
    std::vector<T> logits;
  };

  std::vector<T> input;  // channel-major copy of the image
  std::vector<T> stem_out;
  std::vector<BlockCache<T>> blocks;
  std::vector<T> backbone_out;  // pre-ReLU
  VisionFeatures<T> features;
  FeatureMap<T> keys_aug;
  FeatureMap<T> values_aug;
  std::vector<Step> steps;

  const std::vector<T>& logits() const { return steps.back().logits; }
};

template <typename T>
class S3taNetwork {
 public:
  explicit S3taNetwork(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const std::shared_ptr<const ParameterLayout>& layout() const { return layout_; }
  const SpatialBasis& basis() const { return basis_; }
  std::size_t parameter_count() const { return layout_->total_size(); }

  /// Zero-filled parameters.
  ParameterSet<T> make_parameters() const;
  /// Fan-in scaled uniform weights, zero biases except forget-gate bias 1.
  ParameterSet<T> init_parameters(std::uint64_t seed) const;

  /// `image` is (height, width, channels).
  VisionFeatures<T> vision_forward(const ParameterSet<T>& params, std::span<const T> image) const;

  ControllerState<T> initial_state(const ParameterSet<T>& params) const;
  std::vector<std::vector<T>> make_queries(const ControllerState<T>& state, const ParameterSet<T>& params) const;
  /// Requires exactly num_heads reads; the cell input is all answers then all
  /// queries in head order. previous_logits of the result are the logits
  /// decoded from the new hidden state.
  ControllerState<T> controller_step(const ControllerState<T>& state, std::span<const AttentionRead<T>> reads,
                                     const ParameterSet<T>& params) const;

  /// Logits read out after `readout_step` controller steps (0: unroll_steps).
  std::vector<T> forward(const ParameterSet<T>& params, std::span<const T> image, int readout_step = 0) const;
  ForwardTrace<T> forward_trace(const ParameterSet<T>& params, std::span<const T> image, int readout_step = 0) const;

  /// Backpropagates dlogits through a trace. Accumulates into `dparams` when
  /// non-null and writes d(image) when `dimage` is non-empty.
  void backward(const ParameterSet<T>& params, const ForwardTrace<T>& trace, std::span<const T> dlogits,
                ParameterSet<T>* dparams, std::span<T> dimage) const;

  int resolve_readout(int readout_step) const;

 private:
  struct Index;
  void check_image(std::span<const T> image) const;
  void step_forward(const ParameterSet<T>& params, const ForwardTrace<T>& trace, typename ForwardTrace<T>::Step& step) const;

  ModelConfig config_;
  std::shared_ptr<const ParameterLayout> layout_;
  std::shared_ptr<const Index> index_;
  SpatialBasis basis_;
  std::vector<layers::ConvGeometry> convs_;  // stem, then per block conv1, conv2, shortcut
};

// Batch-level entry points. Pixels come from an ImageBatch (float) and are
// converted to the network's scalar type.

template <typename T>
std::vector<T> forward_batch(const S3taNetwork<T>& net, const ParameterSet<T>& params, const ImageBatch& batch,
                             int readout_step = 0);

/// Batch-mean loss (times spec.scale) and its exact gradient with respect to
/// every pixel, laid out like batch.pixels. kZeroOne is not differentiable and
/// throws UnsupportedOperation.
template <typename T>
std::vector<T> input_gradient(const S3taNetwork<T>& net, const ParameterSet<T>& params, const ImageBatch& batch,
                              std::span<const int> target_labels, const LossSpec& spec, double* loss_out = nullptr);

/// Batch-mean loss and its gradient with respect to every parameter.
template <typename T>
double parameter_gradient(const S3taNetwork<T>& net, const ParameterSet<T>& params, const ImageBatch& batch,
                          std::span<const int> labels, const LossSpec& spec, ParameterSet<T>& grads);

}  // namespace s3ta
