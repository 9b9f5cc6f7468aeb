#include "cli/app.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>

#include "cli/output.hpp"
#include "cli/settings.hpp"
#include "s3ta/checkpoint.hpp"
#include "s3ta/classifier.hpp"
#include "s3ta/dataset.hpp"
#include "s3ta/errors.hpp"
#include "s3ta/eval.hpp"
#include "s3ta/file_io.hpp"
#include "s3ta/kernels.hpp"
#include "s3ta/parallel.hpp"
#include "s3ta/results.hpp"
#include "s3ta/training.hpp"

extern char** environ;

namespace s3ta::cli {
namespace {

namespace fs = std::filesystem;

struct Invocation {
  std::string command;
  std::string config_file;
  std::vector<std::string> sets;
  KvMap flags;
  std::string checkpoint;
  std::string out_dir;
  std::string results;
  std::string resume;
  bool save_images = false;
};

struct Context {
  const Invocation& inv;
  KvMap settings;
  Resolved r;
  std::optional<std::string> expected_hash;
  std::ostream& out;
};

struct LoadedModel {
  std::string hash;
  Checkpoint ck;
  std::unique_ptr<S3taNetwork<float>> net;
};

LoadedModel load_model(const std::string& path, const std::optional<std::string>& expected_hash) {
  LoadedModel m;
  const std::string bytes = read_file(path);
  m.hash = sha256_hex(bytes);
  if (expected_hash && *expected_hash != m.hash)
    throw InvalidArgument("checkpoint " + path + " does not match the manifest's checkpoint hash");
  try {
    m.ck = decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what(), e.offset());
  }
  m.net = std::make_unique<S3taNetwork<float>>(m.ck.config);
  return m;
}

std::string manifest_text(const Context& c, const KvMap& extra) {
  KvMap m = pin_model(c.settings, c.r.model);
  m["run.threads"] = std::to_string(c.r.threads);
  m["manifest.command"] = c.inv.command;
  m["manifest.format"] = "1";
  m["manifest.isa"] = kernels::isa_name(kernels::active_isa());
  for (const auto& [k, v] : extra) m["manifest." + k] = v;
  return "# Resolved settings of one run. Pass this file back with --config to repeat it.\n" + format_kv(m);
}

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

std::string mode_name(AttackMode m) {
  switch (m) {
    case AttackMode::kTargetedRandom: return "targeted-random";
    case AttackMode::kTargetedFixed: return "targeted-fixed";
    case AttackMode::kUntargeted: return "untargeted";
  }
  return "?";
}

std::string attack_name(const Resolved& r) {
  static const char* kinds[] = {"pgd", "adam", "spsa"};
  char eps[32];
  std::snprintf(eps, sizeof eps, "%.4f", r.attack.epsilon);
  return std::string(kinds[static_cast<int>(r.attack_kind)]) + "/" + mode_name(r.attack.mode) + "/eps=" + eps;
}

// Attack `batch` with the configured optimizer for `steps` iterations, over attack.restarts restarts.
AttackResult run_configured_attack(const Resolved& r, const Classifier& model, const ImageBatch& batch, int steps) {
  AttackFn fn;
  if (r.attack_kind == AttackKind::kSpsa) {
    SpsaConfig sp = r.spsa;
    sp.num_iterations = steps;
    fn = [&, sp](const ImageBatch& b, int restart) {
      AttackContext ctx;
      ctx.restart = restart;
      return spsa_attack(model, b, sp, r.attack.mode, r.attack.target_class, ctx);
    };
  } else {
    const AttackConfig a = attack_for_steps(r, steps);
    fn = [&, a](const ImageBatch& b, int restart) {
      AttackContext ctx;
      ctx.restart = restart;
      return run_attack(model, b, a, ctx);
    };
  }
  return multi_restart(fn, batch, r.attack.restarts);
}

ImageBatch test_images(const Resolved& r, std::size_t limit) {
  ImageBatch test = load_split(r, DatasetSplit::kTest);
  if (limit > 0) test = head(test, limit);
  if (test.size() == 0) throw InvalidArgument("the test split is empty");
  return test;
}

std::string model_name(const Context& c) {
  if (!c.r.eval_model_name.empty()) return c.r.eval_model_name;
  return fs::path(c.inv.checkpoint).stem().string();
}

// Metrics rows of an earlier run in the same directory, up to `epoch`.
std::vector<EpochMetrics> prior_metrics(const std::string& path, int epoch) {
  std::vector<EpochMetrics> rows;
  std::error_code ec;
  if (!fs::exists(path, ec)) return rows;
  const std::string text = read_file(path);
  std::size_t pos = text.find('\n');
  while (pos != std::string::npos && pos + 1 < text.size()) {
    const std::size_t end = text.find('\n', pos + 1);
    const std::string line = text.substr(pos + 1, end == std::string::npos ? std::string::npos : end - pos - 1);
    pos = end;
    EpochMetrics m;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf", &m.epoch, &m.lr, &m.adv_loss, &m.clean_top1, &m.robust_top1) ==
            5 &&
        m.epoch <= epoch)
      rows.push_back(m);
  }
  return rows;
}

int cmd_train(Context& c) {
  const Invocation& inv = c.inv;
  const std::string ckpt_path = path_in(inv.out_dir, "checkpoint.s3ta");
  const std::string metrics_path = path_in(inv.out_dir, "metrics.csv");

  TrainState state;
  KvMap extra;
  std::unique_ptr<S3taNetwork<float>> net;
  if (!inv.resume.empty()) {
    auto loaded = load_model(inv.resume, c.expected_hash);
    c.r.model = loaded.ck.config;
    net = std::move(loaded.net);
    state = TrainState::fresh(std::move(loaded.ck.params));
    if (auto it = loaded.ck.meta.find("epoch"); it != loaded.ck.meta.end()) state.epoch = parse_int(it->second);
    if (auto it = loaded.ck.meta.find("step"); it != loaded.ck.meta.end())
      state.step = static_cast<std::int64_t>(parse_u64(it->second));
    state.history = prior_metrics(metrics_path, state.epoch);
    extra["checkpoint_sha256"] = loaded.hash;
  } else {
    net = std::make_unique<S3taNetwork<float>>(c.r.model);
    state = TrainState::fresh(net->init_parameters(c.r.seed));
  }
  TrainConfig& cfg = c.r.train;
  if (cfg.staged_readout.size() == 1 && c.settings.at("train.staged_readout").empty())
    cfg.staged_readout = {{0, c.r.model.unroll_steps}};
  cfg.validate(c.r.model.unroll_steps);

  auto snapshot = [&](OutputSet& o) {
    const KvMap meta = {{"epoch", std::to_string(state.epoch)}, {"step", std::to_string(state.step)}};
    std::string bytes = encode_checkpoint(c.r.model, state.params, meta);
    const std::string hash = sha256_hex(bytes);
    o.add(ckpt_path, std::move(bytes));
    o.add(metrics_path, format_metrics(state.history));
    return hash;
  };

  if (state.epoch < cfg.epochs) {
    const ImageBatch train_set = load_split(c.r, DatasetSplit::kTrain);
    std::optional<ImageBatch> monitor;
    if (cfg.monitor_images > 0) monitor = head(load_split(c.r, DatasetSplit::kTest), cfg.monitor_images);
    c.out << "training " << train_set.size() << " images, " << net->parameter_count() << " parameters, epochs "
          << state.epoch << ".." << cfg.epochs << "\n";
    TrainCallbacks cb;
    cb.on_epoch = [&](const TrainState&) {
      OutputSet o;
      snapshot(o);
      o.commit();
      const auto& m = state.history.back();
      char line[160];
      std::snprintf(line, sizeof line, "epoch %d lr %.5f adv_loss %.4f clean_top1 %.4f robust_top1 %.4f\n", m.epoch,
                    m.lr, m.adv_loss, m.clean_top1, m.robust_top1);
      c.out << line << std::flush;
    };
    train(*net, state, train_set, monitor ? &*monitor : nullptr, cfg, cb);
  }

  OutputSet o;
  extra["output_checkpoint_sha256"] = snapshot(o);
  o.add(path_in(inv.out_dir, "manifest.txt"), manifest_text(c, extra));
  o.commit();
  c.out << "wrote " << ckpt_path << " (epoch " << state.epoch << ")\n";
  return kExitOk;
}

int cmd_attack(Context& c) {
  auto loaded = load_model(c.inv.checkpoint, c.expected_hash);
  c.r.model = loaded.ck.config;
  const S3taClassifier model(*loaded.net, loaded.ck.params);
  const ImageBatch test = test_images(c.r, 0);
  const int steps = c.r.attack_kind == AttackKind::kSpsa ? c.r.spsa.num_iterations : c.r.attack.num_steps;
  const auto result = run_configured_attack(c.r, model, test, steps);
  const auto summary = summarize(result, steps);

  OutputSet o;
  o.add(path_in(c.inv.out_dir, "records.csv"), format_records(summary.records));
  const ResultRow row{model_name(c), attack_name(c.r), steps, c.r.attack.restarts, summary.robust_top1,
                      summary.success_rate};
  o.add(path_in(c.inv.out_dir, "summary.csv"), format_results({row}));
  if (c.inv.save_images) {
    const auto& adv = result.adversarial;
    for (std::size_t i = 0; i < adv.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "images/adv_%05zu.%s", i, adv.channels == 1 ? "pgm" : "ppm");
      o.add(path_in(c.inv.out_dir, name),
            encode_pnm(to_raster(adv.image(i), adv.height, adv.width, adv.channels)));
    }
  }
  o.add(path_in(c.inv.out_dir, "manifest.txt"), manifest_text(c, {{"checkpoint_sha256", loaded.hash}}));
  o.commit();

  char line[200];
  std::snprintf(line, sizeof line, "%zu images: nominal top1 %.4f robust top1 %.4f success rate %.4f\n", summary.count,
                summary.nominal_top1, summary.robust_top1, summary.success_rate);
  c.out << line;
  return kExitOk;
}

int cmd_eval(Context& c) {
  auto loaded = load_model(c.inv.checkpoint, c.expected_hash);
  c.r.model = loaded.ck.config;
  const S3taClassifier model(*loaded.net, loaded.ck.params);
  const ImageBatch test = test_images(c.r, c.r.eval_limit);
  const std::string name = model_name(c);

  std::vector<ResultRow> rows;
  const auto clean = evaluate(model, test, std::nullopt);
  rows.push_back({name, "none", 0, 1, clean.nominal_top1, 0.0});
  for (int steps : c.r.eval_steps) {
    const auto s = summarize(run_configured_attack(c.r, model, test, steps), steps);
    rows.push_back({name, attack_name(c.r), steps, c.r.attack.restarts, s.robust_top1, s.success_rate});
  }
  for (const auto& row : rows) {
    char line[200];
    std::snprintf(line, sizeof line, "%-28s steps %5d restarts %3d top1 %.4f success %.4f\n", row.attack.c_str(),
                  row.steps, row.restarts, row.top1, row.success_rate);
    c.out << line;
  }

  std::string existing;
  std::error_code ec;
  if (fs::exists(c.inv.results, ec)) existing = read_file(c.inv.results);
  OutputSet o;
  o.add(c.inv.results, append_results(existing, rows));
  o.add(c.inv.results + ".manifest.txt", manifest_text(c, {{"checkpoint_sha256", loaded.hash}}));
  o.commit();
  return kExitOk;
}

int cmd_landscape(Context& c) {
  auto loaded = load_model(c.inv.checkpoint, c.expected_hash);
  c.r.model = loaded.ck.config;
  const S3taClassifier model(*loaded.net, loaded.ck.params);
  const ImageBatch test = test_images(c.r, 0);
  if (c.r.landscape_image >= test.size()) throw InvalidArgument("landscape.image is beyond the test split");

  LandscapeOptions opt;
  opt.epsilon = c.r.landscape_epsilon;
  opt.grid_n = c.r.landscape_grid;
  opt.seed = c.r.seed;
  opt.reference_attack.rng_seed = c.r.seed;
  const auto grid = loss_landscape(model, test.image(c.r.landscape_image), test.labels[c.r.landscape_image], opt);

  OutputSet o;
  o.add(path_in(c.inv.out_dir, "landscape.csv"), format_landscape(grid));
  o.add(path_in(c.inv.out_dir, "footprint.csv"), format_footprint(grid));
  o.add(path_in(c.inv.out_dir, "heatmap.ppm"), encode_pnm(render_heatmap(grid)));
  o.add(path_in(c.inv.out_dir, "manifest.txt"),
        manifest_text(c, {{"checkpoint_sha256", loaded.hash}, {"gradient_fallback", grid.gradient_fallback ? "true" : "false"}}));
  o.commit();
  const int mid = c.r.landscape_grid / 2;
  c.out << "landscape " << c.r.landscape_grid << "x" << c.r.landscape_grid << ", centre loss " << grid.loss_at(mid, mid)
        << (grid.gradient_fallback ? " (gradient-sign direction)" : "") << "\n";
  return kExitOk;
}

int cmd_attmaps(Context& c) {
  auto loaded = load_model(c.inv.checkpoint, c.expected_hash);
  c.r.model = loaded.ck.config;
  const ImageBatch test = test_images(c.r, 0);
  if (c.r.attmaps_image >= test.size()) throw InvalidArgument("attmaps.image is beyond the test split");
  const auto images = render_attention(*loaded.net, loaded.ck.params, test.image(c.r.attmaps_image), "attn",
                                       c.r.attmaps_alpha);
  OutputSet o;
  for (const auto& img : images) o.add(path_in(c.inv.out_dir, img.name), encode_pnm(img.image));
  o.add(path_in(c.inv.out_dir, "manifest.txt"), manifest_text(c, {{"checkpoint_sha256", loaded.hash}}));
  o.commit();
  c.out << "wrote " << images.size() << " images to " << c.inv.out_dir << "\n";
  return kExitOk;
}

int cmd_synth(Context& c) {
  Resolved r = c.r;
  r.data.source = "synthetic";
  const ImageBatch train = load_split(r, DatasetSplit::kTrain);
  const ImageBatch test = load_split(r, DatasetSplit::kTest);
  OutputSet o;
  o.add(path_in(c.inv.out_dir, "data_batch_1.bin"), encode_records(train));
  o.add(path_in(c.inv.out_dir, "test_batch.bin"), encode_records(test));
  o.add(path_in(c.inv.out_dir, "manifest.txt"), manifest_text(c, {}));
  o.commit();
  c.out << "wrote " << train.size() << " training and " << test.size() << " test images to " << c.inv.out_dir << "\n";
  return kExitOk;
}

void add_setting(CLI::App* sub, Invocation& inv, const std::string& flag, const std::string& key,
                 const std::string& help) {
  sub->add_option_function<std::string>(
      flag, [&inv, key](const std::string& v) { inv.flags[key] = v; }, help + " (" + key + ")");
}

void add_common(CLI::App* sub, Invocation& inv) {
  sub->add_option("--config", inv.config_file, "Settings file (section.key = value lines)");
  sub->add_option("--set", inv.sets, "Override one setting, key=value (repeatable)");
  add_setting(sub, inv, "--threads", "run.threads", "Worker thread cap, 0 for all cores");
  add_setting(sub, inv, "--seed", "run.seed", "Seed for initialization, data order and attacks");
  add_setting(sub, inv, "--data", "data.path", "Dataset file or directory");
  add_setting(sub, inv, "--data-source", "data.source", "records, images or synthetic");
}

void add_attack_flags(CLI::App* sub, Invocation& inv) {
  add_setting(sub, inv, "--restarts", "attack.restarts", "Random restarts per image");
  add_setting(sub, inv, "--optimizer", "attack.optimizer", "pgd, adam or spsa");
  add_setting(sub, inv, "--mode", "attack.mode", "targeted-random, targeted-fixed or untargeted");
  add_setting(sub, inv, "--target", "attack.target", "Target class for targeted-fixed");
  add_setting(sub, inv, "--epsilon", "attack.epsilon", "L-inf radius, e.g. 16/255");
  add_setting(sub, inv, "--step-size", "attack.step_size", "Signed step size or auto");
  add_setting(sub, inv, "--init-prob", "attack.init_prob", "Probability of a random start");
  add_setting(sub, inv, "--limit", "data.test_limit", "Use the first N test images");
}

}  // namespace

int run(const std::vector<std::string>& args, const std::map<std::string, std::string>& env, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"Adversarial training and evaluation of sequential top-down attention classifiers", "s3ta"};
  app.require_subcommand(1, 1);
  Invocation inv;

  auto* train_cmd = app.add_subcommand("train", "Adversarially train a model");
  add_common(train_cmd, inv);
  train_cmd->add_option("--out", inv.out_dir, "Output directory")->required();
  train_cmd->add_option("--resume", inv.resume, "Continue from a checkpoint");
  add_setting(train_cmd, inv, "--epochs", "train.epochs", "Total epochs");
  add_setting(train_cmd, inv, "--batch-size", "train.batch_size", "Images per update");
  add_setting(train_cmd, inv, "--model-preset", "model.preset", "desk, tiny or paper");
  add_setting(train_cmd, inv, "--unroll", "model.unroll_steps", "Controller steps k");
  add_setting(train_cmd, inv, "--train-limit", "data.train_limit", "Use the first N training images");

  auto* attack_cmd = app.add_subcommand("attack", "Attack a checkpoint on the test split");
  add_common(attack_cmd, inv);
  attack_cmd->add_option("--checkpoint", inv.checkpoint, "Model checkpoint")->required();
  attack_cmd->add_option("--out", inv.out_dir, "Output directory")->required();
  attack_cmd->add_flag("--save-images", inv.save_images, "Write the adversarial images");
  add_setting(attack_cmd, inv, "--steps", "attack.steps", "Attack iterations");
  add_attack_flags(attack_cmd, inv);

  auto* eval_cmd = app.add_subcommand("eval", "Sweep attack strengths and append to a results table");
  add_common(eval_cmd, inv);
  eval_cmd->add_option("--checkpoint", inv.checkpoint, "Model checkpoint")->required();
  eval_cmd->add_option("--results", inv.results, "Results CSV (appended)")->required();
  add_setting(eval_cmd, inv, "--steps", "eval.steps", "Comma-separated attack step counts");
  add_setting(eval_cmd, inv, "--model-name", "eval.model_name", "Model column of the results");
  add_attack_flags(eval_cmd, inv);

  auto* landscape_cmd = app.add_subcommand("landscape", "Loss on the plane of the attack and a random direction");
  add_common(landscape_cmd, inv);
  landscape_cmd->add_option("--checkpoint", inv.checkpoint, "Model checkpoint")->required();
  landscape_cmd->add_option("--out", inv.out_dir, "Output directory")->required();
  add_setting(landscape_cmd, inv, "--image", "landscape.image", "Test image index");
  add_setting(landscape_cmd, inv, "--grid", "landscape.grid", "Odd grid size");
  add_setting(landscape_cmd, inv, "--epsilon", "landscape.epsilon", "Ball radius");

  auto* attmaps_cmd = app.add_subcommand("attmaps", "Export per-step, per-head attention maps");
  add_common(attmaps_cmd, inv);
  attmaps_cmd->add_option("--checkpoint", inv.checkpoint, "Model checkpoint")->required();
  attmaps_cmd->add_option("--out", inv.out_dir, "Output directory")->required();
  add_setting(attmaps_cmd, inv, "--image", "attmaps.image", "Test image index");

  auto* synth_cmd = app.add_subcommand("synth", "Write a procedural dataset in record-binary form");
  add_common(synth_cmd, inv);
  synth_cmd->add_option("--out", inv.out_dir, "Output directory")->required();
  add_setting(synth_cmd, inv, "--train", "data.synthetic_train", "Training images");
  add_setting(synth_cmd, inv, "--test", "data.synthetic_test", "Test images");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    inv.command = app.get_subcommands().front()->get_name();

    KvMap settings = default_settings();
    std::optional<std::string> expected_hash;
    if (!inv.config_file.empty()) {
      const KvMap file = read_kv_file(inv.config_file);
      if (auto it = file.find("manifest.checkpoint_sha256"); it != file.end()) expected_hash = it->second;
      overlay(settings, file, inv.config_file);
    }
    overlay(settings, env_settings(env), "environment");
    KvMap sets;
    for (const auto& s : inv.sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw InvalidArgument("--set expects key=value, got '" + s + "'");
      sets[s.substr(0, eq)] = s.substr(eq + 1);
    }
    overlay(settings, sets, "--set");
    overlay(settings, inv.flags, "command line");

    Context c{inv, settings, resolve(settings), expected_hash, out};
    set_max_threads(c.r.threads);
    if (inv.command == "train") return cmd_train(c);
    if (inv.command == "attack") return cmd_attack(c);
    if (inv.command == "eval") return cmd_eval(c);
    if (inv.command == "landscape") return cmd_landscape(c);
    if (inv.command == "attmaps") return cmd_attmaps(c);
    return cmd_synth(c);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  } catch (const NumericalFailure& e) {
    err << "error: numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const UnsupportedVersion& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const UnsupportedOperation& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

int run_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::map<std::string, std::string> env;
  for (char** e = environ; e && *e; ++e) {
    const std::string kv(*e);
    const auto eq = kv.find('=');
    if (eq != std::string::npos && kv.rfind("S3TA_", 0) == 0) env[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  return run(args, env, std::cout, std::cerr);
}

}  // namespace s3ta::cli
