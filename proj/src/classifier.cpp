#include "s3ta/classifier.hpp"

#include <algorithm>

#include "s3ta/errors.hpp"

namespace s3ta {

int argmax(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("argmax of an empty vector");
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

double Classifier::loss(std::span<const float> image, int label, double smoothing) const {
  const auto z = logits(image);
  return cross_entropy_with_grad<double>(z, label, smoothing, {});
}

int Classifier::predict(std::span<const float> image) const { return argmax(logits(image)); }

S3taClassifier::S3taClassifier(const S3taNetwork<float>& net, const ParameterSet<float>& params, int readout_step)
    : net_(net), params_(params), readout_(net.resolve_readout(readout_step)) {}

int S3taClassifier::num_classes() const { return net_.config().num_classes; }

std::size_t S3taClassifier::input_size() const { return static_cast<std::size_t>(net_.config().input_size()); }

std::vector<double> S3taClassifier::logits(std::span<const float> image) const {
  const auto z = net_.forward(params_, image, readout_);
  return {z.begin(), z.end()};
}

double S3taClassifier::loss_gradient(std::span<const float> image, int label, double smoothing,
                                     std::span<float> grad) const {
  if (grad.size() != image.size()) throw InvalidArgument("gradient buffer has the wrong size");
  const auto trace = net_.forward_trace(params_, image, readout_);
  std::vector<float> dlogits(num_classes());
  const double loss = cross_entropy_with_grad<float>(trace.logits(), label, smoothing, dlogits);
  net_.backward(params_, trace, dlogits, nullptr, grad);
  return loss;
}

}  // namespace s3ta
