#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "s3ta/attacks.hpp"
#include "s3ta/classifier.hpp"
#include "s3ta/image.hpp"
#include "s3ta/image_io.hpp"

namespace s3ta {

struct EvalRecord {
  std::size_t image_id = 0;
  int label = 0;
  int clean_prediction = -1;
  int target = -1;  // -1 when untargeted
  int adversarial_prediction = -1;
  bool success = false;
  /// False if any restart left the image misclassified.
  bool robust_correct = false;
  double final_loss = 0.0;
};

struct EvalSummary {
  std::size_t count = 0;
  double nominal_top1 = 0.0;
  double robust_top1 = 0.0;
  double success_rate = 0.0;
  int steps = 0;
  int restarts = 1;
  std::vector<EvalRecord> records;
};

/// Nominal top-1, robust top-1 and attack success rate over every image of
/// `batch`; all three use the full batch as denominator. Without an attack
/// this is a 0-step attack with no random start.
EvalSummary evaluate(const Classifier& model, const ImageBatch& batch, const std::optional<AttackConfig>& attack,
                     std::size_t index_offset = 0);

struct LandscapeOptions {
  double epsilon = 16.0 / 255.0;
  int grid_n = 21;  // odd
  /// Produces the worst-case direction. Its epsilon is overridden.
  AttackConfig reference_attack;
  std::uint64_t seed = 0;  // random direction

  LandscapeOptions();
};

struct LandscapeGrid {
  double epsilon = 0.0;
  std::vector<double> u_axis;  // in units of epsilon, from -1 to 1
  std::vector<double> v_axis;
  std::vector<double> losses;  // (u index, v index) row-major
  std::vector<float> direction_u;  // perturbation / epsilon
  std::vector<float> direction_v;  // +-1 entries
  bool gradient_fallback = false;  // direction_u is the loss-gradient sign
  /// Slice of the epsilon-ball by the (u, v) plane, as a closed polygon in
  /// axis units.
  std::vector<std::pair<double, double>> footprint;

  double loss_at(int i, int j) const { return losses[static_cast<std::size_t>(i) * v_axis.size() + j]; }
};

/// Folds attack outcomes into a summary.
EvalSummary summarize(const AttackResult& result, int steps, std::size_t index_offset = 0);

/// Cross-entropy of `label` at clip(x + u eps d_u + v eps d_v, [0,1]) on the grid.
LandscapeGrid loss_landscape(const Classifier& model, std::span<const float> image, int label,
                             const LandscapeOptions& options);

struct AttentionExportOptions {
  std::string directory;
  std::string prefix = "attn";
  double overlay_alpha = 0.6;  // weight of the map in the overlay
};

struct NamedImage {
  std::string name;  // file name without directory
  RasterImage image;
};

/// One grayscale map per (step, head), upsampled to the input resolution and
/// scaled so the most attended location is 255, then an RGB overlay per map
/// that dims the input where attention is low.
std::vector<NamedImage> render_attention(const S3taNetwork<float>& net, const ParameterSet<float>& params,
                                         std::span<const float> image, const std::string& prefix = "attn",
                                         double overlay_alpha = 0.6);

/// Writes render_attention's images into options.directory and returns
/// their paths in the same order.
std::vector<std::string> export_attention(const S3taNetwork<float>& net, const ParameterSet<float>& params,
                                          std::span<const float> image, const AttentionExportOptions& options);

/// The attention maps of every step and head as 8-bit images of the input
/// size, in (step, head) order.
std::vector<std::vector<std::uint8_t>> attention_images(const S3taNetwork<float>& net,
                                                        const ParameterSet<float>& params,
                                                        std::span<const float> image);

}  // namespace s3ta
