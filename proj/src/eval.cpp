#include "s3ta/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

#include "s3ta/errors.hpp"
#include "s3ta/file_io.hpp"
#include "s3ta/image_io.hpp"
#include "s3ta/parallel.hpp"
#include "s3ta/rng.hpp"

namespace s3ta {
namespace {

constexpr std::uint64_t kDirectionStream = 0xd1c7;
constexpr int kFootprintAngles = 360;

}  // namespace

EvalSummary summarize(const AttackResult& result, int steps, std::size_t index_offset) {
  EvalSummary s;
  s.count = result.outcomes.size();
  s.steps = steps;
  s.restarts = result.restarts_used;
  std::size_t clean = 0, robust = 0, success = 0;
  s.records.reserve(s.count);
  for (std::size_t i = 0; i < s.count; ++i) {
    const auto& o = result.outcomes[i];
    EvalRecord r;
    r.image_id = index_offset + i;
    r.label = o.label;
    r.clean_prediction = o.clean_prediction;
    r.target = o.target;
    r.adversarial_prediction = o.final_prediction;
    r.success = o.success;
    r.robust_correct = o.all_restarts_correct;
    r.final_loss = o.final_loss;
    clean += r.clean_prediction == r.label;
    robust += r.robust_correct;
    success += r.success;
    s.records.push_back(r);
  }
  if (s.count > 0) {
    const double n = static_cast<double>(s.count);
    s.nominal_top1 = clean / n;
    s.robust_top1 = robust / n;
    s.success_rate = success / n;
  }
  return s;
}

EvalSummary evaluate(const Classifier& model, const ImageBatch& batch, const std::optional<AttackConfig>& attack,
                     std::size_t index_offset) {
  if (batch.size() == 0) throw InvalidArgument("evaluate needs a non-empty dataset");
  AttackConfig cfg;
  if (attack) {
    cfg = *attack;
  } else {
    cfg.num_steps = 0;
    cfg.random_init_prob = 0.0;
  }
  cfg.validate();
  AttackFn fn = [&](const ImageBatch& b, int restart) {
    AttackContext ctx;
    ctx.restart = restart;
    ctx.index_offset = index_offset;
    return run_attack(model, b, cfg, ctx);
  };
  return summarize(multi_restart(fn, batch, cfg.restarts), cfg.num_steps, index_offset);
}

LandscapeOptions::LandscapeOptions() : reference_attack(attack_presets::evaluation(10)) {
  reference_attack.mode = AttackMode::kUntargeted;
  reference_attack.random_init_prob = 0.0;
}

LandscapeGrid loss_landscape(const Classifier& model, std::span<const float> image, int label,
                             const LandscapeOptions& options) {
  if (options.grid_n < 1 || options.grid_n % 2 == 0) throw InvalidArgument("grid_n must be odd and positive");
  if (!(options.epsilon > 0.0 && options.epsilon <= 1.0)) throw InvalidArgument("epsilon must lie in (0, 1]");
  const std::size_t d = image.size();
  if (d != model.input_size()) throw InvalidArgument("image size does not match the model");

  LandscapeGrid grid;
  grid.epsilon = options.epsilon;

  ImageBatch one(1, static_cast<int>(d), 1, 1);
  std::copy(image.begin(), image.end(), one.pixels.begin());
  one.labels[0] = label;
  AttackConfig ref = options.reference_attack;
  ref.epsilon = options.epsilon;
  const auto attacked = run_attack(model, one, ref);
  grid.direction_u.resize(d);
  bool moved = false;
  for (std::size_t j = 0; j < d; ++j) {
    const double delta = static_cast<double>(attacked.adversarial.pixels[j]) - image[j];
    grid.direction_u[j] = static_cast<float>(delta / options.epsilon);
    moved |= delta != 0.0;
  }
  if (!moved) {
    grid.gradient_fallback = true;
    std::vector<float> grad(d);
    model.loss_gradient(image, label, 0.0, grad);
    for (std::size_t j = 0; j < d; ++j) grid.direction_u[j] = grad[j] > 0 ? 1.0f : (grad[j] < 0 ? -1.0f : 0.0f);
  }

  Rng rng = make_rng(options.seed, {kDirectionStream});
  grid.direction_v.resize(d);
  for (auto& v : grid.direction_v) v = static_cast<float>(rademacher(rng));

  const int n = options.grid_n;
  for (int i = 0; i < n; ++i) {
    const double t = n == 1 ? 0.0 : -1.0 + 2.0 * i / (n - 1);
    grid.u_axis.push_back(t);
    grid.v_axis.push_back(t);
  }
  grid.losses.assign(static_cast<std::size_t>(n) * n, 0.0);
  parallel_for(grid.losses.size(), [&](std::size_t begin, std::size_t end, int) {
    std::vector<float> x(d);
    for (std::size_t cell = begin; cell < end; ++cell) {
      const double u = grid.u_axis[cell / n] * options.epsilon;
      const double v = grid.v_axis[cell % n] * options.epsilon;
      for (std::size_t j = 0; j < d; ++j) {
        const double p = image[j] + u * grid.direction_u[j] + v * grid.direction_v[j];
        x[j] = static_cast<float>(std::clamp(p, 0.0, 1.0));
      }
      grid.losses[cell] = model.loss(x, label);
    }
  });
  for (double l : grid.losses)
    if (!std::isfinite(l)) throw NumericalFailure("non-finite loss on the landscape grid");

  // Boundary of {(u, v) : |u d_u[j] + v d_v[j]| <= 1 for all j}.
  for (int a = 0; a <= kFootprintAngles; ++a) {
    const double theta = 2.0 * std::numbers::pi * (a % kFootprintAngles) / kFootprintAngles;
    const double c = std::cos(theta), s = std::sin(theta);
    double worst = 0.0;
    for (std::size_t j = 0; j < d; ++j)
      worst = std::max(worst, std::abs(c * grid.direction_u[j] + s * grid.direction_v[j]));
    const double r = 1.0 / worst;  // worst >= |s| or |c| > 0 since d_v is +-1
    grid.footprint.emplace_back(r * c, r * s);
  }
  return grid;
}

std::vector<std::vector<std::uint8_t>> attention_images(const S3taNetwork<float>& net,
                                                        const ParameterSet<float>& params,
                                                        std::span<const float> image) {
  const auto& cfg = net.config();
  const auto trace = net.forward_trace(params, image, cfg.unroll_steps);
  const int gh = cfg.grid_height(), gw = cfg.grid_width();
  const int h = cfg.input_height, w = cfg.input_width;
  std::vector<std::vector<std::uint8_t>> out;
  for (const auto& step : trace.steps) {
    for (const auto& read : step.reads) {
      const auto& a = read.attention_map;
      const float mx = *std::max_element(a.begin(), a.end());
      std::vector<std::uint8_t> img(static_cast<std::size_t>(h) * w);
      for (int y = 0; y < h; ++y) {
        const int gy = y * gh / h;
        for (int x = 0; x < w; ++x) {
          const int gx = x * gw / w;
          const double m = mx > 0.0f ? a[gy * gw + gx] / static_cast<double>(mx) : 0.0;
          img[static_cast<std::size_t>(y) * w + x] = static_cast<std::uint8_t>(std::lround(255.0 * m));
        }
      }
      out.push_back(std::move(img));
    }
  }
  return out;
}

std::vector<NamedImage> render_attention(const S3taNetwork<float>& net, const ParameterSet<float>& params,
                                         std::span<const float> image, const std::string& prefix,
                                         double overlay_alpha) {
  const auto& cfg = net.config();
  if (!(overlay_alpha >= 0.0 && overlay_alpha <= 1.0)) throw InvalidArgument("overlay_alpha must lie in [0, 1]");
  const auto maps = attention_images(net, params, image);
  const int h = cfg.input_height, w = cfg.input_width, c = cfg.input_channels;

  std::vector<NamedImage> grays, overlays;
  for (std::size_t m = 0; m < maps.size(); ++m) {
    const int step = static_cast<int>(m) / cfg.num_heads + 1;
    const int head = static_cast<int>(m) % cfg.num_heads;
    char name[128];
    std::snprintf(name, sizeof name, "%s_step%02d_head%d", prefix.c_str(), step, head);
    grays.push_back({std::string(name) + ".pgm", RasterImage{w, h, 1, maps[m]}});

    RasterImage overlay{w, h, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w * 3)};
    for (int p = 0; p < h * w; ++p) {
      const double weight = (1.0 - overlay_alpha) + overlay_alpha * maps[m][p] / 255.0;
      for (int ch = 0; ch < 3; ++ch) {
        const float v = image[static_cast<std::size_t>(p) * c + (c == 3 ? ch : 0)];
        overlay.data[static_cast<std::size_t>(p) * 3 + ch] = to_byte(static_cast<float>(v * weight));
      }
    }
    overlays.push_back({std::string(name) + "_overlay.ppm", std::move(overlay)});
  }
  grays.insert(grays.end(), std::make_move_iterator(overlays.begin()), std::make_move_iterator(overlays.end()));
  return grays;
}

std::vector<std::string> export_attention(const S3taNetwork<float>& net, const ParameterSet<float>& params,
                                          std::span<const float> image, const AttentionExportOptions& options) {
  const auto images = render_attention(net, params, image, options.prefix, options.overlay_alpha);
  ensure_directory(options.directory);
  std::vector<std::string> written;
  for (const auto& img : images) {
    const auto path = (std::filesystem::path(options.directory) / img.name).string();
    write_pnm(path, img.image);
    written.push_back(path);
  }
  return written;
}

}  // namespace s3ta
