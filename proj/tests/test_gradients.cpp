#include <cmath>

#include "doctest.h"
#include "s3ta/config.hpp"
#include "s3ta/errors.hpp"
#include "s3ta/network.hpp"
#include "support.hpp"

using namespace s3ta;

namespace {

double image_loss(const S3taNetwork<double>& net, const ParameterSet<double>& p, const std::vector<double>& x, int label,
                  double smoothing, int readout = 0) {
  const auto z = net.forward(p, x, readout);
  return cross_entropy_with_grad<double>(z, label, smoothing, {});
}

}  // namespace

TEST_SUITE("gradients") {

TEST_CASE("input gradient matches central differences on the tiny model") {
  const auto c = presets::tiny();
  const S3taNetwork<double> net(c);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto params = net.init_parameters(100 + seed);
    const auto batch = test::random_batch(8, 8, 3, 1, 3, 200 + seed);
    LossSpec spec;
    spec.smoothing = 0.1;
    const auto g = input_gradient(net, params, batch, batch.labels, spec);
    const auto fd = test::central_differences(net, params, std::vector<double>(batch.pixels.begin(), batch.pixels.end()),
                                              batch.labels[0], 0.1, 1e-3);
    const auto kinks = std::count(fd.crosses_kink.begin(), fd.crosses_kink.end(), true);
    CAPTURE(kinks);
    CHECK(kinks <= static_cast<long>(g.size() / 8));
    CHECK(test::relative_error_where(g, fd.gradient, fd.crosses_kink) <= 1e-3);
    // Away from kinks a smaller step agrees far more closely.
    const auto fine = test::central_differences(net, params, std::vector<double>(batch.pixels.begin(), batch.pixels.end()),
                                                batch.labels[0], 0.1, 1e-5);
    CHECK(test::relative_error_where(g, fine.gradient, fine.crosses_kink) <= 1e-6);
  }
}

TEST_CASE("parameter gradient matches central differences") {
  auto c = presets::tiny();
  c.unroll_steps = 3;
  const S3taNetwork<double> net(c);
  const auto params = net.init_parameters(31);
  const auto batch = test::random_batch(8, 8, 3, 2, 3, 32);
  LossSpec spec;
  spec.smoothing = 0.1;
  spec.readout_step = 2;
  ParameterSet<double> grads;
  parameter_gradient(net, params, batch, batch.labels, spec, grads);

  auto batch_loss = [&](const ParameterSet<double>& p) {
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto img = batch.image(i);
      total += image_loss(net, p, std::vector<double>(img.begin(), img.end()), batch.labels[i], 0.1, 2);
    }
    return total / batch.size();
  };
  // A few coordinates of every array.
  std::vector<double> analytic, numeric;
  const auto& entries = params.layout().entries();
  for (std::size_t e = 0; e < entries.size(); ++e) {
    for (std::size_t t = 0; t < 3 && t < entries[e].size; ++t) {
      const std::size_t idx = entries[e].offset + (t * 7919) % entries[e].size;
      auto p = params;
      const double h = 1e-5, v = p.flat()[idx];
      p.flat()[idx] = v + h;
      const double lp = batch_loss(p);
      p.flat()[idx] = v - h;
      const double lm = batch_loss(p);
      const double num = (lp - lm) / (2 * h);
      const double ana = grads.flat()[idx];
      CAPTURE(entries[e].name);
      CHECK(std::abs(ana - num) <= 1e-6 + 1e-4 * std::abs(num));
      analytic.push_back(ana);
      numeric.push_back(num);
    }
  }
  CHECK(test::relative_error(analytic, numeric) <= 1e-5);
}

TEST_CASE("a model that ignores its input has zero input gradient") {
  const auto c = presets::tiny();
  const S3taNetwork<double> net(c);
  auto params = net.init_parameters(3);
  const auto& entries = params.layout().entries();
  for (std::size_t e = 0; e < entries.size(); ++e)
    if (entries[e].name.rfind("backbone.stem", 0) != 0)
      for (auto& v : params.at(e)) v = 0.0;
  const auto batch = test::random_batch(8, 8, 3, 3, 3, 4);
  const auto g = input_gradient(net, params, batch, batch.labels, LossSpec{});
  for (double v : g) CHECK(v == 0.0);
}

TEST_CASE("scaling the loss scales the gradient") {
  const auto c = presets::tiny();
  const S3taNetwork<double> net(c);
  const auto params = net.init_parameters(5);
  const auto batch = test::random_batch(8, 8, 3, 2, 3, 6);
  LossSpec spec;
  double l1 = 0.0, l3 = 0.0;
  const auto g1 = input_gradient(net, params, batch, batch.labels, spec, &l1);
  spec.scale = 3.0;
  const auto g3 = input_gradient(net, params, batch, batch.labels, spec, &l3);
  CHECK(l3 == doctest::Approx(3.0 * l1).epsilon(1e-14));
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g3[i] == doctest::Approx(3.0 * g1[i]).epsilon(1e-12));
}

TEST_CASE("float and double gradients agree") {
  const auto c = presets::tiny();
  const S3taNetwork<double> netd(c);
  const S3taNetwork<float> netf(c);
  const auto pd = netd.init_parameters(9);
  const auto pf = pd.cast<float>();
  const auto batch = test::random_batch(8, 8, 3, 2, 3, 10);
  const auto gd = input_gradient(netd, pd, batch, batch.labels, LossSpec{});
  const auto gf = input_gradient(netf, pf, batch, batch.labels, LossSpec{});
  CHECK(test::relative_error(gd, std::vector<double>(gf.begin(), gf.end())) <= 1e-4);
}

TEST_CASE("zero-one loss is not differentiable") {
  const S3taNetwork<float> net(presets::tiny());
  const auto params = net.init_parameters(1);
  const auto batch = test::random_batch(8, 8, 3, 1, 3, 1);
  LossSpec spec;
  spec.kind = LossKind::kZeroOne;
  CHECK_THROWS_AS(input_gradient(net, params, batch, batch.labels, spec), UnsupportedOperation);
}

}
