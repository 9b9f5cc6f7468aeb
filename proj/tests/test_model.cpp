#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "s3ta/basis.hpp"
#include "s3ta/classifier.hpp"
#include "s3ta/config.hpp"
#include "s3ta/errors.hpp"
#include "s3ta/network.hpp"
#include "support.hpp"

using namespace s3ta;

namespace {

FeatureMap<double> random_map(int c, int h, int w, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  FeatureMap<double> m{c, h, w, std::vector<double>(static_cast<std::size_t>(c) * h * w)};
  for (auto& v : m.data) v = u(rng);
  return m;
}

std::vector<float> random_image(const ModelConfig& c, std::uint64_t seed) {
  return test::random_batch(c.input_height, c.input_width, c.input_channels, 1, 2, seed).pixels;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("basis channel count and the single-position example") {
  CHECK(build_spatial_basis(3, 3, 4).channels == 64);
  const auto b = build_spatial_basis(1, 1, 1);
  REQUIRE(b.channels == 4);
  const double expect[] = {0.0, 0.0, 0.0, 1.0};
  for (int c = 0; c < 4; ++c) CHECK(std::abs(b.at(0, 0, c) - expect[c]) < 1e-15);
  CHECK_THROWS_AS(build_spatial_basis(0, 2, 1), InvalidArgument);
}

TEST_CASE("basis is bounded, deterministic and follows the product form") {
  for (auto [h, w, f] : {std::tuple{4, 4, 1}, {8, 8, 2}, {7, 5, 3}, {28, 28, 4}}) {
    const auto a = build_spatial_basis(h, w, f);
    const auto b = build_spatial_basis(h, w, f);
    CHECK(a.values == b.values);
    for (double v : a.values) CHECK(std::abs(v) <= 1.0);
    auto fn = [](int p, double t) {
      const double arg = std::numbers::pi * (p / 2 + 1) * t;
      return p % 2 == 0 ? std::cos(arg) : std::sin(arg);
    };
    const int y = h - 1, x = w / 2;
    const double u = (x + 0.5) / w, v = (y + 0.5) / h;
    for (int p = 0; p < 2 * f; ++p)
      for (int q = 0; q < 2 * f; ++q) CHECK(a.at(y, x, p * 2 * f + q) == doctest::Approx(fn(p, u) * fn(q, v)).epsilon(1e-12));
  }
}

TEST_CASE("zero query attends uniformly and answers with the spatial mean") {
  std::mt19937_64 rng(5);
  const auto keys = random_map(3, 4, 4, rng), values = random_map(5, 4, 4, rng);
  const std::vector<double> q(3, 0.0);
  const auto r = attend<double>(q, keys, values);
  for (double a : r.attention_map) CHECK(a == doctest::Approx(1.0 / 16));
  for (int c = 0; c < 5; ++c) {
    double mean = 0.0;
    for (double v : values.channel(c)) mean += v / 16;
    CHECK(r.answer[c] == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("hand-set 2x2 logits give the expected map") {
  FeatureMap<double> keys{1, 2, 2, {0.0, std::log(2.0), 0.0, 0.0}};
  FeatureMap<double> values{1, 2, 2, {1.0, 2.0, 3.0, 4.0}};
  const std::vector<double> q{1.0};
  const auto r = attend<double>(q, keys, values);
  const double expect[] = {0.2, 0.4, 0.2, 0.2};
  for (int i = 0; i < 4; ++i) CHECK(std::abs(r.attention_map[i] - expect[i]) < 1e-15);
  CHECK(r.answer[0] == doctest::Approx(0.2 + 0.8 + 0.6 + 0.8));
}

TEST_CASE("a dominant logit selects its location") {
  std::mt19937_64 rng(6);
  const auto values = random_map(6, 3, 3, rng);
  FeatureMap<double> keys{1, 3, 3, std::vector<double>(9, 0.0)};
  for (int i = 0; i < 9; ++i) keys.data[i] = (i % 3) * 0.1;
  keys.data[4] = 50.3;  // margin >= 50 over every other logit
  const auto r = attend<double>(std::vector<double>{1.0}, keys, values);
  for (int c = 0; c < 6; ++c) {
    const double v = values.channel(c)[4];
    CHECK(std::abs(r.answer[c] - v) <= 1e-8 * std::abs(v));
  }
}

TEST_CASE("attend agrees with a naive double loop on random 4x4 grids") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto keys = random_map(6, 4, 4, rng, 2.0), values = random_map(9, 4, 4, rng);
    std::vector<double> q(6);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (auto& v : q) v = u(rng);
    const auto r = attend<double>(q, keys, values);
    double z[4][4], total = 0.0;
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        double s = 0.0;
        for (int c = 0; c < 6; ++c) s += q[c] * keys.at(y, x, c);
        z[y][x] = std::exp(s);
        total += z[y][x];
      }
    double sum = 0.0;
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        CHECK(r.attention_map[y * 4 + x] == doctest::Approx(z[y][x] / total).epsilon(1e-9));
        CHECK(r.attention_map[y * 4 + x] >= 0.0);
        sum += r.attention_map[y * 4 + x];
      }
    CHECK(std::abs(sum - 1.0) < 1e-12);
    for (int c = 0; c < 9; ++c) {
      double a = 0.0;
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) a += z[y][x] / total * values.at(y, x, c);
      CHECK(std::abs(r.answer[c] - a) <= 1e-6);
    }
  }
  FeatureMap<double> k2{2, 4, 4, std::vector<double>(32)};
  CHECK_THROWS_AS(attend<double>(std::vector<double>(3), k2, k2), InvalidArgument);
}

TEST_CASE("paper-scale sizes") {
  const auto c = presets::paper_scale();
  CHECK(c.basis_channels() == 64);
  CHECK(c.num_heads * c.query_width() == 384);
  CHECK(c.controller_input_width() == 4 * 2080 + 4 * 96);
  CHECK(c.controller_input_width() == 8704);
  CHECK(c.grid_height() == 28);
  CHECK(c.grid_width() == 28);
}

TEST_CASE("parameter count does not depend on the unroll length") {
  for (auto base : {presets::tiny(), presets::desk_scale()}) {
    std::size_t first = 0;
    for (int k : {1, 2, 4, 8, 16}) {
      base.unroll_steps = k;
      const S3taNetwork<float> net(base);
      if (k == 1) first = net.parameter_count();
      CHECK(net.parameter_count() == first);
    }
  }
}

TEST_CASE("desk-scale parameter count from the architecture arithmetic") {
  const auto c = presets::desk_scale();
  auto conv = [](long o, long i, long k) { return o * i * k * k; };
  long n = conv(16, 3, 3) + 16;
  n += 2 * (conv(16, 16, 3) + 16);                                   // block0
  n += conv(32, 16, 3) + 32 + conv(32, 32, 3) + 32 + conv(32, 16, 1);  // block1
  n += conv(64, 32, 3) + 64 + conv(64, 64, 3) + 64 + conv(64, 32, 1);  // block2
  n += 2 * (conv(64, 64, 3) + 64);                                   // block3
  const long cs = 16, h = 128, heads = 4;
  const long in = heads * (56 + cs) + heads * (8 + cs);
  n += 4 * h * in + 4 * h * h + 4 * h + 2 * h;
  n += 128 * (h + 10) + 128 + heads * (8 + cs) * 128 + heads * (8 + cs);
  n += 128 * h + 128 + 10 * 128 + 10;
  CHECK(S3taNetwork<float>(c).parameter_count() == static_cast<std::size_t>(n));
  CHECK(model_parameter_layout(c).count() == 33);
}

TEST_CASE("readout prefix: reading out at step j equals unrolling j steps") {
  auto c = presets::tiny();
  c.unroll_steps = 6;
  const S3taNetwork<double> net(c);
  const auto params = net.init_parameters(11);
  const auto img32 = random_image(c, 3);
  const std::vector<double> img(img32.begin(), img32.end());
  for (int j = 1; j <= 6; ++j) {
    auto cj = c;
    cj.unroll_steps = j;
    const S3taNetwork<double> short_net(cj);
    CHECK(net.forward(params, img, j) == short_net.forward(params, img));
  }
  CHECK_THROWS_AS(net.forward(params, img, 7), InvalidArgument);
}

TEST_CASE("forward is bitwise deterministic and attention maps are normalized") {
  auto c = presets::tiny();
  c.unroll_steps = 4;
  const S3taNetwork<float> net(c);
  const auto params = net.init_parameters(2);
  const auto img = random_image(c, 9);
  CHECK(net.forward(params, img) == net.forward(params, img));
  const auto trace = net.forward_trace(params, img);
  CHECK(trace.steps.size() == 4);
  for (const auto& step : trace.steps) {
    REQUIRE(step.reads.size() == 2);
    for (const auto& read : step.reads) {
      double sum = 0.0;
      for (float a : read.attention_map) {
        CHECK(a >= 0.0f);
        sum += a;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-5);
    }
  }
  const auto f1 = net.vision_forward(params, img);
  const auto f2 = net.vision_forward(params, img);
  CHECK(f1.keys.data == f2.keys.data);
  CHECK(f1.values.data == f2.values.data);
  CHECK(f1.keys.channels == c.key_channels);
  CHECK(f1.values.channels == c.value_channels);
}

TEST_CASE("step-0 queries do not depend on the image") {
  const auto c = presets::tiny();
  const S3taNetwork<double> net(c);
  const auto params = net.init_parameters(4);
  const auto a32 = random_image(c, 1), b32 = random_image(c, 2);
  const std::vector<double> a(a32.begin(), a32.end()), b(b32.begin(), b32.end());
  const auto ta = net.forward_trace(params, a), tb = net.forward_trace(params, b);
  for (int h = 0; h < c.num_heads; ++h) CHECK(ta.steps[0].reads[h].query == tb.steps[0].reads[h].query);
  CHECK(ta.logits() != tb.logits());
  const auto q = net.make_queries(net.initial_state(params), params);
  REQUIRE(q.size() == 2);
  CHECK(q[0] == ta.steps[0].reads[0].query);
  CHECK(q[0].size() == static_cast<std::size_t>(c.query_width()));
}

TEST_CASE("zero weights give uniform maps and zero features") {
  const auto c = presets::tiny();
  const S3taNetwork<float> net(c);
  const auto params = net.make_parameters();
  const std::vector<float> img(c.input_size(), 0.0f);
  const auto f = net.vision_forward(params, img);
  for (float v : f.keys.data) CHECK(v == 0.0f);
  for (float v : f.values.data) CHECK(v == 0.0f);
  const auto trace = net.forward_trace(params, img);
  for (const auto& step : trace.steps)
    for (const auto& read : step.reads)
      for (float a : read.attention_map) CHECK(a == doctest::Approx(1.0 / c.grid_size()));
}

TEST_CASE("controller step keeps the state width and checks the head count") {
  const auto c = presets::tiny();
  const S3taNetwork<double> net(c);
  const auto params = net.init_parameters(8);
  const auto trace = net.forward_trace(params, std::vector<double>(c.input_size(), 0.3));
  const auto s0 = net.initial_state(params);
  const auto s1 = net.controller_step(s0, trace.steps[0].reads, params);
  const auto s1b = net.controller_step(s0, trace.steps[0].reads, params);
  CHECK(s1.hidden.size() == s0.hidden.size());
  CHECK(s1.cell.size() == s0.cell.size());
  CHECK(s1.hidden == s1b.hidden);
  CHECK(s1.previous_logits.size() == 3u);
  CHECK(s1.hidden == trace.steps[1].state_in.hidden);
  const std::vector<AttentionRead<double>> one(trace.steps[0].reads.begin(), trace.steps[0].reads.begin() + 1);
  CHECK_THROWS_AS(net.controller_step(s0, one, params), InvalidArgument);
}

TEST_CASE("smoothed cross-entropy examples") {
  const std::vector<double> uniform(10, 0.3);
  const std::vector<int> label{4};
  CHECK(smoothed_cross_entropy(uniform, label, 10, 0.0) == doctest::Approx(std::log(10.0)).epsilon(1e-14));
  CHECK(smoothed_cross_entropy(uniform, label, 10, 0.1) == doctest::Approx(std::log(10.0)).epsilon(1e-14));
  std::vector<double> sure(10, 0.0);
  sure[4] = 1e6;
  CHECK(smoothed_cross_entropy(sure, label, 10, 0.0) < 1e-12);
  CHECK_THROWS_AS(smoothed_cross_entropy(uniform, label, 10, 1.0), InvalidArgument);
  CHECK_THROWS_AS(smoothed_cross_entropy(uniform, label, 10, -0.1), InvalidArgument);
}

TEST_CASE("model config text round-trips and rejects bad values") {
  const auto c = presets::desk_scale();
  CHECK(ModelConfig::from_text(c.to_text()) == c);
  auto bad = c;
  bad.num_heads = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  const S3taNetwork<float> net(c);
  CHECK_THROWS_AS(net.forward(net.make_parameters(), std::vector<float>(10)), InvalidArgument);
}

}
