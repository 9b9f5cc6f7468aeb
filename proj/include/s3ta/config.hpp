#pragma once

#include <map>
#include <string>
#include <vector>

namespace s3ta {

/// One pre-activation residual block of the vision backbone.
struct BlockSpec {
  int channels = 0;
  int stride = 1;
  bool operator==(const BlockSpec&) const = default;
};

/// Architecture hyperparameters. Everything except unroll_steps determines
/// the parameter layout.
struct ModelConfig {
  int input_height = 32;
  int input_width = 32;
  int input_channels = 3;
  int stem_channels = 16;
  int stem_stride = 1;
  std::vector<BlockSpec> blocks = {{16, 1}, {32, 2}, {64, 2}, {64, 1}};

  int key_channels = 8;
  int value_channels = 56;
  int basis_frequencies = 2;
  int num_heads = 4;
  int unroll_steps = 2;
  int controller_width = 128;
  int query_hidden_width = 128;
  int output_hidden_width = 128;
  int num_classes = 10;

  int basis_channels() const { return 4 * basis_frequencies * basis_frequencies; }
  int feature_channels() const { return blocks.empty() ? stem_channels : blocks.back().channels; }
  int grid_height() const;
  int grid_width() const;
  int grid_size() const { return grid_height() * grid_width(); }
  int query_width() const { return key_channels + basis_channels(); }
  int answer_width() const { return value_channels + basis_channels(); }
  /// Recurrent-cell input: N answers then N queries.
  int controller_input_width() const { return num_heads * (answer_width() + query_width()); }
  int input_size() const { return input_height * input_width * input_channels; }

  /// Throws InvalidArgument when an invariant does not hold.
  void validate() const;

  /// "key = value" lines, stable order. Round-trips through from_text.
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
  /// Applies known keys from a flat map (unknown keys are rejected).
  void apply(const std::map<std::string, std::string>& kv);

  bool operator==(const ModelConfig&) const = default;
};

namespace presets {

/// 32x32 inputs, 4 residual blocks, 8x8 grid, C_k=8, C_v=56.
ModelConfig desk_scale();
/// H'=W'=4, C_k=4, C_v=8, F=1, N=2, k=2 on 8x8x3 inputs. Used for gradient checks.
ModelConfig tiny();
/// Sizes of the ImageNet-scale model: 224x224 input, 28x28 grid, C_k=32,
/// C_v=2016, C_s=64, N=4, 1024-wide controller and MLPs, 1000 classes. The
/// backbone is a shallow stand-in with the same output geometry.
ModelConfig paper_scale();

}  // namespace presets

}  // namespace s3ta
