#include <filesystem>
#include <sstream>

#include "cli/app.hpp"
#include "doctest.h"
#include "s3ta/checkpoint.hpp"
#include "s3ta/file_io.hpp"
#include "s3ta/results.hpp"

using namespace s3ta;
using s3ta::cli::kExitConfig;
using s3ta::cli::kExitIo;
using s3ta::cli::kExitNumerical;
using s3ta::cli::kExitOk;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run invoke(std::vector<std::string> args, const std::map<std::string, std::string>& env = {}) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::run(args, env, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path workdir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("s3ta_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const std::vector<std::string> kSmall = {"--data-source", "synthetic", "--set", "model.preset=tiny", "--set",
                                         "data.synthetic_train=64", "--set", "data.synthetic_test=12", "--set",
                                         "train.batch_size=32", "--set", "train.monitor_images=8", "--set",
                                         "train.attack_steps=2"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::string trained_checkpoint(const fs::path& dir, int epochs) {
  const auto r = invoke(with({"train", "--out", dir.string(), "--epochs", std::to_string(epochs)}, kSmall));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  return (dir / "checkpoint.s3ta").string();
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("exit codes for configuration and I/O errors") {
  CHECK(invoke({"frobnicate"}).code == kExitConfig);
  CHECK(invoke({}).code == kExitConfig);
  CHECK(invoke({"train", "--out", "/tmp/x", "--set", "nosuch.key=1"}).code == kExitConfig);
  CHECK(invoke({"train", "--out", "/tmp/x", "--set", "train.epochs=ten"}).code == kExitConfig);
  CHECK(invoke({"attack", "--checkpoint", "/nonexistent/ck.s3ta", "--out", "/tmp/x"}).code == kExitIo);
  const auto dir = workdir("badckpt");
  write_file_atomic((dir / "bad.s3ta").string(), "S3TA garbage");
  CHECK(invoke({"eval", "--checkpoint", (dir / "bad.s3ta").string(), "--results", (dir / "r.csv").string()}).code ==
        kExitIo);
  CHECK(invoke({"train", "--help"}).code == kExitOk);
  fs::remove_all(dir);
}

TEST_CASE("train with zero epochs writes the initial checkpoint") {
  const auto dir = workdir("epochs0");
  const auto ck = trained_checkpoint(dir, 0);
  const auto loaded = load_checkpoint(ck);
  CHECK(loaded.meta.at("epoch") == "0");
  CHECK(loaded.config.input_height == 8);
  CHECK(read_file((dir / "metrics.csv").string()) == std::string(kMetricsHeader) + "\n");
  CHECK(read_file((dir / "manifest.txt").string()).find("manifest.output_checkpoint_sha256") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("train, resume, attack and eval end to end") {
  const auto dir = workdir("e2e");
  const auto ck = trained_checkpoint(dir / "model", 1);
  auto r = invoke(with({"train", "--out", (dir / "model").string(), "--resume", ck, "--epochs", "2"}, kSmall));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(load_checkpoint(ck).meta.at("epoch") == "2");
  const auto metrics = read_file((dir / "model" / "metrics.csv").string());
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 3);

  const std::vector<std::string> attack_args = {"attack", "--checkpoint", ck, "--steps", "3"};
  r = invoke(with(with(attack_args, {"--out", (dir / "a1").string()}), kSmall));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  r = invoke(with(with(attack_args, {"--out", (dir / "a2").string(), "--restarts", "1"}), kSmall));
  REQUIRE(r.code == 0);
  const auto records = read_file((dir / "a1" / "records.csv").string());
  CHECK(records == read_file((dir / "a2" / "records.csv").string()));
  CHECK(std::count(records.begin(), records.end(), '\n') == 13);

  // The manifest alone reproduces the run.
  r = invoke({"attack", "--config", (dir / "a1" / "manifest.txt").string(), "--checkpoint", ck, "--out",
           (dir / "a3").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(records == read_file((dir / "a3" / "records.csv").string()));

  const auto results = (dir / "results.csv").string();
  r = invoke(with({"eval", "--checkpoint", ck, "--results", results, "--steps", "1,3", "--model-name", "m"}, kSmall));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  auto table = read_file(results);
  CHECK(table.rfind(kResultsHeader, 0) == 0);
  CHECK(std::count(table.begin(), table.end(), '\n') == 4);
  r = invoke(with({"eval", "--checkpoint", ck, "--results", results, "--steps", "1", "--model-name", "m"}, kSmall));
  table = read_file(results);
  CHECK(std::count(table.begin(), table.end(), '\n') == 6);

  r = invoke(with({"landscape", "--checkpoint", ck, "--out", (dir / "land").string(), "--grid", "5"}, kSmall));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(dir / "land" / "heatmap.ppm"));
  r = invoke(with({"attmaps", "--checkpoint", ck, "--out", (dir / "maps").string()}, kSmall));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(dir / "maps" / "manifest.txt"));
  fs::remove_all(dir);
}

TEST_CASE("a failed command leaves no partial outputs") {
  const auto dir = workdir("partial");
  const auto ck = trained_checkpoint(dir / "model", 0);
  auto r = invoke(with({"landscape", "--checkpoint", ck, "--out", (dir / "land").string(), "--image", "500"}, kSmall));
  CHECK(r.code == kExitConfig);
  CHECK(!fs::exists(dir / "land" / "landscape.csv"));
  CHECK(!fs::exists(dir / "land" / "manifest.txt"));

  r = invoke(with({"train", "--out", (dir / "nan").string(), "--epochs", "1", "--batch-size", "8", "--set", "train.lr_per_256=1e30", "--set",
                "train.warmup_epochs=0"},
               kSmall));
  CHECK(r.code == kExitNumerical);
  CHECK(!fs::exists(dir / "nan" / "checkpoint.s3ta"));
  CHECK(!fs::exists(dir / "nan" / "manifest.txt"));
  fs::remove_all(dir);
}

TEST_CASE("settings layer: file < environment < --set < flags") {
  const auto dir = workdir("layers");
  write_file_atomic((dir / "cfg.txt").string(), "data.synthetic_test = 5\nrun.seed = 4\n");
  auto r = invoke(with({"synth", "--out", (dir / "s1").string(), "--config", (dir / "cfg.txt").string()}, {}));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(read_file((dir / "s1" / "test_batch.bin").string()).size() == 5u * 3073u);
  r = invoke({"synth", "--out", (dir / "s2").string(), "--config", (dir / "cfg.txt").string()},
          {{"S3TA_DATA_SYNTHETIC_TEST", "6"}});
  CHECK(read_file((dir / "s2" / "test_batch.bin").string()).size() == 6u * 3073u);
  r = invoke({"synth", "--out", (dir / "s3").string(), "--config", (dir / "cfg.txt").string(), "--set",
           "data.synthetic_test=7"},
          {{"S3TA_DATA_SYNTHETIC_TEST", "6"}});
  CHECK(read_file((dir / "s3" / "test_batch.bin").string()).size() == 7u * 3073u);
  r = invoke({"synth", "--out", (dir / "s4").string(), "--set", "data.synthetic_test=7", "--test", "8",
           "--train", "2"});
  CHECK(read_file((dir / "s4" / "test_batch.bin").string()).size() == 8u * 3073u);
  fs::remove_all(dir);
}

TEST_CASE("a config pinned to another checkpoint is refused") {
  const auto dir = workdir("pinned");
  const auto ck = trained_checkpoint(dir / "model", 0);
  auto r = invoke(with({"attack", "--checkpoint", ck, "--out", (dir / "a").string(), "--steps", "1"}, kSmall));
  REQUIRE(r.code == 0);
  auto manifest = read_file((dir / "a" / "manifest.txt").string());
  const auto at = manifest.find("manifest.checkpoint_sha256 = ");
  REQUIRE(at != std::string::npos);
  manifest[at + 29] = manifest[at + 29] == '0' ? '1' : '0';
  write_file_atomic((dir / "m.txt").string(), manifest);
  r = invoke({"attack", "--config", (dir / "m.txt").string(), "--checkpoint", ck, "--out", (dir / "b").string()});
  CHECK(r.code != kExitOk);
  fs::remove_all(dir);
}

}
