#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "s3ta/network.hpp"

namespace s3ta {

/// What the attacks and the evaluation harness need from a model: logits for
/// one image, and the cross-entropy gradient with respect to its pixels.
/// Implementations must be safe to call concurrently.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual int num_classes() const = 0;
  virtual std::size_t input_size() const = 0;
  virtual std::vector<double> logits(std::span<const float> image) const = 0;
  /// Label-smoothed cross-entropy of `label` and d(loss)/d(pixels) in `grad`.
  virtual double loss_gradient(std::span<const float> image, int label, double smoothing,
                               std::span<float> grad) const = 0;

  double loss(std::span<const float> image, int label, double smoothing = 0.0) const;
  /// argmax of the logits, lowest index on ties.
  int predict(std::span<const float> image) const;
};

int argmax(std::span<const double> values);

/// Adapts a float network plus parameters. Both must outlive the adapter.
class S3taClassifier final : public Classifier {
 public:
  S3taClassifier(const S3taNetwork<float>& net, const ParameterSet<float>& params, int readout_step = 0);

  int num_classes() const override;
  std::size_t input_size() const override;
  std::vector<double> logits(std::span<const float> image) const override;
  double loss_gradient(std::span<const float> image, int label, double smoothing,
                       std::span<float> grad) const override;

  const S3taNetwork<float>& network() const { return net_; }
  const ParameterSet<float>& parameters() const { return params_; }
  int readout_step() const { return readout_; }

 private:
  const S3taNetwork<float>& net_;
  const ParameterSet<float>& params_;
  int readout_;
};

}  // namespace s3ta
