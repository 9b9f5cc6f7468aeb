#pragma once

// Small closed-form classifiers and helpers shared by the unit tests.

#include <cmath>
#include <numeric>
#include <vector>

#include "s3ta/classifier.hpp"
#include "s3ta/image.hpp"
#include "s3ta/network.hpp"
#include "s3ta/rng.hpp"

namespace s3ta::test {

/// logits = W x + b, W is (classes, d).
class LinearClassifier final : public Classifier {
 public:
  LinearClassifier(std::vector<double> w, std::vector<double> b) : w_(std::move(w)), b_(std::move(b)) {}

  int num_classes() const override { return static_cast<int>(b_.size()); }
  std::size_t input_size() const override { return w_.size() / b_.size(); }
  std::vector<double> logits(std::span<const float> x) const override {
    std::vector<double> z = b_;
    const std::size_t d = input_size();
    for (std::size_t c = 0; c < z.size(); ++c)
      for (std::size_t j = 0; j < d; ++j) z[c] += w_[c * d + j] * x[j];
    return z;
  }
  double loss_gradient(std::span<const float> x, int label, double smoothing, std::span<float> grad) const override {
    const auto z = logits(x);
    std::vector<double> dz(z.size());
    const double l = cross_entropy_with_grad<double>(z, label, smoothing, dz);
    const std::size_t d = input_size();
    for (std::size_t j = 0; j < d; ++j) {
      double g = 0.0;
      for (std::size_t c = 0; c < z.size(); ++c) g += dz[c] * w_[c * d + j];
      grad[j] = static_cast<float>(g);
    }
    return l;
  }

 private:
  std::vector<double> w_, b_;
};

/// Two classes; logit 1 is -scale * |x - centre|^2, logit 0 is 0. The
/// cross-entropy of class 1 is softplus(scale * |x - centre|^2).
class QuadraticToy final : public Classifier {
 public:
  QuadraticToy(std::vector<double> centre, double scale) : c_(std::move(centre)), s_(scale) {}
  int num_classes() const override { return 2; }
  std::size_t input_size() const override { return c_.size(); }
  std::vector<double> logits(std::span<const float> x) const override {
    double q = 0.0;
    for (std::size_t j = 0; j < c_.size(); ++j) q += (x[j] - c_[j]) * (x[j] - c_[j]);
    return {0.0, -s_ * q};
  }
  double loss_gradient(std::span<const float> x, int label, double smoothing, std::span<float> grad) const override {
    const auto z = logits(x);
    std::vector<double> dz(2);
    const double l = cross_entropy_with_grad<double>(z, label, smoothing, dz);
    for (std::size_t j = 0; j < c_.size(); ++j) grad[j] = static_cast<float>(dz[1] * -2.0 * s_ * (x[j] - c_[j]));
    return l;
  }

 private:
  std::vector<double> c_;
  double s_;
};

/// Ignores its input.
class ConstantClassifier final : public Classifier {
 public:
  ConstantClassifier(std::vector<double> z, std::size_t d) : z_(std::move(z)), d_(d) {}
  int num_classes() const override { return static_cast<int>(z_.size()); }
  std::size_t input_size() const override { return d_; }
  std::vector<double> logits(std::span<const float>) const override { return z_; }
  double loss_gradient(std::span<const float>, int label, double smoothing, std::span<float> grad) const override {
    std::vector<double> dz(z_.size());
    std::fill(grad.begin(), grad.end(), 0.0f);
    return cross_entropy_with_grad<double>(z_, label, smoothing, dz);
  }

 private:
  std::vector<double> z_;
  std::size_t d_;
};

inline ImageBatch random_batch(int h, int w, int c, std::size_t n, int classes, std::uint64_t seed) {
  ImageBatch b(h, w, c, n);
  Rng rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& p : b.pixels) p = u(rng);
  for (std::size_t i = 0; i < n; ++i) b.labels[i] = static_cast<int>(rng() % classes);
  return b;
}

/// |a - b| / max(|a|, |b|) with Euclidean norms.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double den = std::sqrt(std::max(na, nb));
  return den == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / den;
}

/// On/off state of every ReLU in a forward pass.
inline std::vector<bool> relu_pattern(const ForwardTrace<double>& t) {
  std::vector<bool> p;
  auto add = [&](const std::vector<double>& v) {
    for (double x : v) p.push_back(x > 0.0);
  };
  for (const auto& b : t.blocks) {
    add(b.input);
    add(b.hidden);
  }
  add(t.backbone_out);
  for (const auto& s : t.steps) {
    add(s.query_hidden);
    add(s.output_hidden);
  }
  return p;
}

/// Central differences of the smoothed cross-entropy with respect to each
/// pixel. A coordinate is flagged when x + h and x - h do not share one ReLU
/// pattern: the loss has a kink between them and the difference quotient is
/// not an estimate of the derivative at x.
struct FiniteDifferences {
  std::vector<double> gradient;
  std::vector<bool> crosses_kink;
};

inline FiniteDifferences central_differences(const S3taNetwork<double>& net, const ParameterSet<double>& params,
                                             std::vector<double> x, int label, double smoothing, double h) {
  FiniteDifferences out{std::vector<double>(x.size()), std::vector<bool>(x.size())};
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double x0 = x[j];
    x[j] = x0 + h;
    const auto tp = net.forward_trace(params, x);
    x[j] = x0 - h;
    const auto tm = net.forward_trace(params, x);
    x[j] = x0;
    const double lp = cross_entropy_with_grad<double>(tp.logits(), label, smoothing, {});
    const double lm = cross_entropy_with_grad<double>(tm.logits(), label, smoothing, {});
    out.gradient[j] = (lp - lm) / (2 * h);
    out.crosses_kink[j] = relu_pattern(tp) != relu_pattern(tm);
  }
  return out;
}

/// relative_error over the coordinates where `skip` is false.
inline double relative_error_where(const std::vector<double>& a, const std::vector<double>& b,
                                   const std::vector<bool>& skip) {
  std::vector<double> ka, kb;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!skip[i]) {
      ka.push_back(a[i]);
      kb.push_back(b[i]);
    }
  return relative_error(ka, kb);
}

}  // namespace s3ta::test
