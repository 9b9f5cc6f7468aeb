#include "cli/settings.hpp"

#include <algorithm>
#include <cctype>
#include <thread>

#include "s3ta/errors.hpp"
#include "s3ta/rng.hpp"

namespace s3ta::cli {
namespace {

constexpr std::uint64_t kSyntheticTrainStream = 0x7a11;
constexpr std::uint64_t kSyntheticTestStream = 0x7e57;

const std::vector<std::string>& model_keys() {
  static const std::vector<std::string> keys = {
      "input_height",     "input_width",       "input_channels",     "stem_channels",       "stem_stride",
      "blocks",           "key_channels",      "value_channels",     "basis_frequencies",   "num_heads",
      "unroll_steps",     "controller_width",  "query_hidden_width", "output_hidden_width", "num_classes"};
  return keys;
}

const std::vector<std::string>& sections() {
  static const std::vector<std::string> s = {"run",  "model", "train",     "attack", "spsa",
                                             "data", "eval",  "landscape", "attmaps"};
  return s;
}

AttackMode parse_mode(const std::string& s) {
  if (s == "targeted-random") return AttackMode::kTargetedRandom;
  if (s == "targeted-fixed") return AttackMode::kTargetedFixed;
  if (s == "untargeted") return AttackMode::kUntargeted;
  throw InvalidArgument("unknown attack mode '" + s + "' (targeted-random, targeted-fixed, untargeted)");
}

// "0:0.1,100:0.01" style pairs.
std::vector<std::pair<int, std::string>> parse_pairs(const std::string& text) {
  std::vector<std::pair<int, std::string>> out;
  if (text.empty()) return out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw InvalidArgument("expected threshold:value pairs, got '" + text + "'");
    out.emplace_back(parse_int(item.substr(0, colon)), item.substr(colon + 1));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::size_t parse_count(const std::string& s) { return static_cast<std::size_t>(parse_u64(s)); }

}  // namespace

KvMap default_settings() {
  KvMap kv = {
      {"run.seed", "0"},
      {"run.threads", "0"},
      {"model.preset", "desk"},
      {"train.epochs", "30"},
      {"train.batch_size", "128"},
      {"train.lr_per_256", "0.05"},
      {"train.warmup_epochs", "5"},
      {"train.decay_epochs", "20,25"},
      {"train.decay_factor", "0.1"},
      {"train.weight_decay", "0.0001"},
      {"train.label_smoothing", "0.1"},
      {"train.momentum", "0.9"},
      {"train.staged_readout", ""},
      {"train.monitor_images", "256"},
      {"train.augment", "false"},
      {"train.attack_mode", "targeted-random"},
      {"train.attack_steps", "7"},
      {"train.attack_epsilon", "8/255"},
      {"train.attack_step_size", "2/255"},
      {"train.attack_init_prob", "0.8"},
      {"attack.optimizer", "pgd"},
      {"attack.mode", "targeted-random"},
      {"attack.target", "-1"},
      {"attack.epsilon", "16/255"},
      {"attack.step_size", "auto"},
      {"attack.steps", "10"},
      {"attack.init_prob", "0.8"},
      {"attack.restarts", "1"},
      {"attack.adam_schedule", "0:0.1,100:0.01,200:0.001"},
      {"spsa.samples", "256"},
      {"spsa.delta", "0.01"},
      {"spsa.iterations", "100"},
      {"spsa.step_size", "1/255"},
      {"data.source", "records"},
      {"data.path", ""},
      {"data.train_limit", "0"},
      {"data.test_limit", "0"},
      {"data.synthetic_train", "5000"},
      {"data.synthetic_test", "1000"},
      {"eval.steps", "10,100,250,1000"},
      {"eval.limit", "0"},
      {"eval.model_name", ""},
      {"landscape.grid", "21"},
      {"landscape.epsilon", "16/255"},
      {"landscape.image", "0"},
      {"attmaps.image", "0"},
      {"attmaps.alpha", "0.6"},
  };
  for (const auto& k : model_keys()) kv["model." + k] = "";
  return kv;
}

void overlay(KvMap& base, const KvMap& layer, const std::string& source) {
  for (const auto& [k, v] : layer) {
    if (k.rfind("manifest.", 0) == 0) continue;
    auto it = base.find(k);
    if (it == base.end()) throw InvalidArgument(source + ": unknown setting '" + k + "'");
    it->second = v;
  }
}

KvMap env_settings(const std::map<std::string, std::string>& env) {
  KvMap kv;
  for (const auto& [name, value] : env) {
    if (name.rfind("S3TA_", 0) != 0) continue;
    std::string rest = name.substr(5);
    std::transform(rest.begin(), rest.end(), rest.begin(), [](unsigned char c) { return std::tolower(c); });
    const auto us = rest.find('_');
    if (us == std::string::npos) continue;
    const std::string section = rest.substr(0, us);
    if (std::find(sections().begin(), sections().end(), section) == sections().end()) continue;
    kv[section + "." + rest.substr(us + 1)] = value;
  }
  return kv;
}

Resolved resolve(const KvMap& s) {
  auto get = [&](const std::string& key) -> const std::string& {
    const auto it = s.find(key);
    if (it == s.end()) throw InvalidArgument("missing setting '" + key + "'");
    return it->second;
  };
  Resolved r;
  r.seed = parse_u64(get("run.seed"));
  r.threads = parse_int(get("run.threads"));
  if (r.threads < 0) throw InvalidArgument("run.threads must be >= 0");
  if (r.threads == 0) r.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  const std::string& preset = get("model.preset");
  if (preset == "desk") r.model = presets::desk_scale();
  else if (preset == "tiny") r.model = presets::tiny();
  else if (preset == "paper") r.model = presets::paper_scale();
  else throw InvalidArgument("unknown model.preset '" + preset + "' (desk, tiny, paper)");
  KvMap model_kv;
  for (const auto& k : model_keys())
    if (const auto& v = get("model." + k); !v.empty()) model_kv[k] = v;
  r.model.apply(model_kv);
  r.model.validate();

  auto& t = r.train;
  t = train_presets::desk_scale(r.model.unroll_steps);
  t.epochs = parse_int(get("train.epochs"));
  t.batch_size = parse_int(get("train.batch_size"));
  t.lr_per_256 = parse_double(get("train.lr_per_256"));
  t.warmup_epochs = parse_double(get("train.warmup_epochs"));
  t.decay_epochs = get("train.decay_epochs").empty() ? std::vector<double>{} : parse_double_list(get("train.decay_epochs"));
  t.decay_factor = parse_double(get("train.decay_factor"));
  t.weight_decay = parse_double(get("train.weight_decay"));
  t.label_smoothing = parse_double(get("train.label_smoothing"));
  t.momentum = parse_double(get("train.momentum"));
  t.staged_readout.clear();
  for (const auto& [epoch, step] : parse_pairs(get("train.staged_readout")))
    t.staged_readout.push_back({epoch, parse_int(step)});
  if (t.staged_readout.empty()) t.staged_readout = {{0, r.model.unroll_steps}};
  t.monitor_images = parse_int(get("train.monitor_images"));
  t.augment = parse_bool(get("train.augment"));
  t.rng_seed = r.seed;
  t.inner_attack.mode = parse_mode(get("train.attack_mode"));
  t.inner_attack.num_steps = parse_int(get("train.attack_steps"));
  t.inner_attack.epsilon = parse_double(get("train.attack_epsilon"));
  t.inner_attack.step_size = parse_double(get("train.attack_step_size"));
  t.inner_attack.random_init_prob = parse_double(get("train.attack_init_prob"));
  t.monitor_attack = t.inner_attack;
  t.monitor_attack.mode = AttackMode::kUntargeted;
  t.monitor_attack.rng_seed = r.seed;
  t.validate(r.model.unroll_steps);

  const std::string& opt = get("attack.optimizer");
  if (opt == "pgd") r.attack_kind = AttackKind::kPgd;
  else if (opt == "adam") r.attack_kind = AttackKind::kAdam;
  else if (opt == "spsa") r.attack_kind = AttackKind::kSpsa;
  else throw InvalidArgument("unknown attack.optimizer '" + opt + "' (pgd, adam, spsa)");
  auto& a = r.attack;
  a.mode = parse_mode(get("attack.mode"));
  a.target_class = parse_int(get("attack.target"));
  a.epsilon = parse_double(get("attack.epsilon"));
  a.num_steps = parse_int(get("attack.steps"));
  r.auto_step_size = get("attack.step_size") == "auto";
  a.step_size = r.auto_step_size ? attack_presets::evaluation(a.num_steps).step_size : parse_double(get("attack.step_size"));
  a.random_init_prob = parse_double(get("attack.init_prob"));
  a.restarts = parse_int(get("attack.restarts"));
  a.rng_seed = r.seed;
  a.optimizer = r.attack_kind == AttackKind::kAdam ? AttackOptimizer::kAdam : AttackOptimizer::kSignedGradient;
  for (const auto& [step, lr] : parse_pairs(get("attack.adam_schedule"))) a.lr_schedule.push_back({step, parse_double(lr)});
  if (a.mode == AttackMode::kTargetedFixed && a.target_class >= r.model.num_classes)
    throw InvalidArgument("attack.target is not a valid class");
  a.validate();

  auto& sp = r.spsa;
  sp.num_samples = parse_int(get("spsa.samples"));
  sp.perturbation = parse_double(get("spsa.delta"));
  sp.num_iterations = parse_int(get("spsa.iterations"));
  sp.step_size = parse_double(get("spsa.step_size"));
  sp.epsilon = a.epsilon;
  sp.random_init_prob = 0.0;
  sp.rng_seed = r.seed;
  sp.validate();

  r.data.source = get("data.source");
  if (r.data.source != "records" && r.data.source != "images" && r.data.source != "synthetic")
    throw InvalidArgument("unknown data.source '" + r.data.source + "' (records, images, synthetic)");
  r.data.path = get("data.path");
  r.data.train_limit = parse_count(get("data.train_limit"));
  r.data.test_limit = parse_count(get("data.test_limit"));
  r.data.synthetic_train = parse_count(get("data.synthetic_train"));
  r.data.synthetic_test = parse_count(get("data.synthetic_test"));

  r.eval_steps = parse_int_list(get("eval.steps"));
  for (int st : r.eval_steps)
    if (st < 0) throw InvalidArgument("eval.steps must be >= 0");
  r.eval_limit = parse_count(get("eval.limit"));
  r.eval_model_name = get("eval.model_name");

  r.landscape_grid = parse_int(get("landscape.grid"));
  if (r.landscape_grid < 1 || r.landscape_grid % 2 == 0) throw InvalidArgument("landscape.grid must be odd");
  r.landscape_epsilon = parse_double(get("landscape.epsilon"));
  r.landscape_image = parse_count(get("landscape.image"));
  r.attmaps_image = parse_count(get("attmaps.image"));
  r.attmaps_alpha = parse_double(get("attmaps.alpha"));
  return r;
}

KvMap pin_model(const KvMap& settings, const ModelConfig& model) {
  KvMap out = settings;
  for (const auto& [k, v] : parse_kv_text(model.to_text())) out["model." + k] = v;
  return out;
}

AttackConfig attack_for_steps(const Resolved& r, int steps) {
  AttackConfig a = r.attack;
  a.num_steps = steps;
  if (r.auto_step_size) a.step_size = attack_presets::evaluation(steps).step_size;
  return a;
}

ImageBatch load_split(const Resolved& r, DatasetSplit split) {
  const std::size_t limit = split == DatasetSplit::kTrain ? r.data.train_limit : r.data.test_limit;
  const auto& m = r.model;
  if (r.data.source == "synthetic") {
    const bool train = split == DatasetSplit::kTrain;
    const std::size_t count = train ? r.data.synthetic_train : r.data.synthetic_test;
    const auto seed = derive_seed(r.seed, {train ? kSyntheticTrainStream : kSyntheticTestStream});
    ImageBatch b = make_synthetic(count, seed, m.input_height, m.input_width, m.input_channels, m.num_classes);
    return limit > 0 ? head(b, limit) : b;
  }
  if (r.data.path.empty()) throw InvalidArgument("data.path is required for data.source = " + r.data.source);
  DatasetSpec spec;
  spec.path = r.data.path;
  spec.format = r.data.source == "images" ? DatasetFormat::kImageDirectory : DatasetFormat::kRecordBinary;
  spec.split = split;
  spec.height = m.input_height;
  spec.width = m.input_width;
  spec.channels = m.input_channels;
  spec.num_classes = m.num_classes;
  spec.limit = limit;
  if (spec.format == DatasetFormat::kImageDirectory)
    spec.path += split == DatasetSplit::kTrain ? "/train" : "/test";
  return load_dataset(spec);
}

}  // namespace s3ta::cli
