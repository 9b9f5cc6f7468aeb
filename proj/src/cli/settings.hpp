#pragma once

// Layered run settings. Every setting is a dotted "section.key" string;
// layers apply in order defaults < config file < S3TA_* environment < flags.
// An empty model.* value means "take it from model.preset".

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "s3ta/attacks.hpp"
#include "s3ta/config.hpp"
#include "s3ta/dataset.hpp"
#include "s3ta/kv_config.hpp"
#include "s3ta/training.hpp"

namespace s3ta::cli {

/// Every known key with its default value.
KvMap default_settings();

/// Overlays `layer` onto `base`. Keys must already exist in `base`, except
/// keys of the informational "manifest" section, which are dropped.
void overlay(KvMap& base, const KvMap& layer, const std::string& source);

/// S3TA_<SECTION>_<KEY>=value becomes section.key = value for known
/// sections; other variables are ignored.
KvMap env_settings(const std::map<std::string, std::string>& env);

enum class AttackKind { kPgd, kAdam, kSpsa };

struct DataSettings {
  std::string source;  // records | images | synthetic
  std::string path;
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;
  std::size_t synthetic_train = 0;
  std::size_t synthetic_test = 0;
};

struct Resolved {
  std::uint64_t seed = 0;
  int threads = 0;
  ModelConfig model;
  TrainConfig train;
  AttackKind attack_kind = AttackKind::kPgd;
  AttackConfig attack;
  bool auto_step_size = true;
  SpsaConfig spsa;
  DataSettings data;
  std::vector<int> eval_steps;
  std::string eval_model_name;
  std::size_t eval_limit = 0;
  int landscape_grid = 21;
  double landscape_epsilon = 0.0;
  std::size_t landscape_image = 0;
  std::size_t attmaps_image = 0;
  double attmaps_alpha = 0.6;
};

/// Parses and validates every setting. Throws InvalidArgument.
Resolved resolve(const KvMap& settings);

/// The settings with model.* replaced by the concrete model config, so the
/// result no longer depends on the preset table.
KvMap pin_model(const KvMap& settings, const ModelConfig& model);

/// Attack config for `steps` iterations, honouring attack.step_size = auto.
AttackConfig attack_for_steps(const Resolved& r, int steps);

/// The train (or test) images the settings describe. Synthetic sets derive
/// their seed from run.seed.
ImageBatch load_split(const Resolved& r, DatasetSplit split);

}  // namespace s3ta::cli
