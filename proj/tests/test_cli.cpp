#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "prdl/binio.hpp"
#include "prdl/config.hpp"

using namespace prdl;
namespace fs = std::filesystem;

namespace {

std::string cli_path() {
  const char* env = std::getenv("PRDL_CLI");
  REQUIRE_MESSAGE(env != nullptr, "PRDL_CLI must point at the prdl binary");
  return env;
}

int run(const std::string& args) {
  const std::string cmd = cli_path() + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& sub) const {
    return (path / sub).string();
  }
};

void write_quick_config(const std::string& path) {
  std::ofstream out(path);
  out << R"({
    "data": {"bags_per_class": 8, "patches_per_bag": 12},
    "pretrain": {"epochs": 2, "batch_size": 16, "max_images": 96,
      "model": {"enc_hidden": 24, "repr_dim": 12, "proj_hidden": 12, "proj_dim": 12}},
    "mil": {"epochs": 15}
  })";
}

}  // namespace

TEST_CASE("config parsing: defaults, overrides, strict keys") {
  const config::RunConfig def = config::defaults();
  CHECK(def.pretrain.batch_size == 32);
  CHECK(def.pretrain.loss.beta1 == 0.001);
  CHECK(def.pretrain.loss.beta3 == 1.0);
  CHECK(def.pretrain.loss.tau_v == 1.0);

  const auto j = nlohmann::json::parse(R"({
    "loss": {"tau_s": 0.2, "kl_direction": "conventional"},
    "mil": {"epochs": 5}
  })");
  const config::RunConfig cfg = config::from_json(j);
  CHECK(cfg.pretrain.loss.tau_s == 0.2);
  CHECK(cfg.pretrain.loss.kl_direction == loss::KlDirection::Conventional);
  CHECK(cfg.mil.epochs == 5);
  CHECK(cfg.data.num_classes == 3);  // untouched default

  CHECK_THROWS_AS(config::from_json(nlohmann::json::parse(
                      R"({"loss": {"tau_sigma": 1}})")),
                  ConfigError);
  CHECK_THROWS_AS(config::from_json(nlohmann::json::parse(
                      R"({"nonsense": {}})")),
                  ConfigError);
  CHECK_THROWS_AS(config::from_json(nlohmann::json::parse(
                      R"({"loss": {"kl_direction": "sideways"}})")),
                  ConfigError);
  CHECK_THROWS_AS(config::from_json(nlohmann::json::parse(
                      R"({"loss": {"tau_s": "fast"}})")),
                  ConfigError);

  // Hash is stable and sensitive to values.
  config::RunConfig a = config::defaults();
  config::RunConfig b = config::defaults();
  CHECK(config::config_hash(a) == config::config_hash(b));
  b.mil.lr = 0.2;
  CHECK(config::config_hash(a) != config::config_hash(b));
}

TEST_CASE("full pipeline exits 0 and produces schema-valid metrics") {
  TempDir dir("prdl_cli_pipeline");
  const std::string cfg = dir / "quick.json";
  write_quick_config(cfg);

  REQUIRE(run("gen-data --out " + (dir / "run") + " --config " + cfg) == 0);
  REQUIRE(fs::exists(dir / "run/dataset/labels.csv"));
  REQUIRE(fs::exists(dir / "run/dataset/splits.csv"));
  REQUIRE(fs::exists(dir / "run/config.gen-data.json"));

  REQUIRE(run("pretrain --data " + (dir / "run/dataset") + " --out " +
              (dir / "run/pre") + " --seed 7 --config " + cfg) == 0);
  REQUIRE(fs::exists(dir / "run/pre/checkpoint.bin"));
  REQUIRE(fs::exists(dir / "run/pre/pretrain_log.csv"));

  REQUIRE(run("extract --checkpoint " + (dir / "run/pre/checkpoint.bin") +
              " --data " + (dir / "run/dataset") + " --out " +
              (dir / "run/store") + " --config " + cfg) == 0);
  REQUIRE(fs::exists(dir / "run/store/store.prsd"));

  REQUIRE(run("train-mil --store " + (dir / "run/store/store.prsd") +
              " --data " + (dir / "run/dataset") + " --aug prs --seed 3" +
              " --out " + (dir / "run/mil") + " --config " + cfg) == 0);
  REQUIRE(fs::exists(dir / "run/mil/mil_model.bin"));

  // Metrics lines parse as JSON with the full schema.
  std::ifstream metrics(dir / "run/mil/metrics.jsonl");
  REQUIRE(metrics.good());
  std::string line;
  int lines = 0;
  while (std::getline(metrics, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("method") == "prs");
    CHECK(j.at("seed") == 3);
    CHECK((j.at("split") == "val" || j.at("split") == "test"));
    for (const char* k : {"auc", "f1", "acc"}) {
      const double v = j.at(k).get<double>();
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    ++lines;
  }
  CHECK(lines == 2);

  REQUIRE(run("eval --model " + (dir / "run/mil/mil_model.bin") + " --store " +
              (dir / "run/store/store.prsd") + " --data " +
              (dir / "run/dataset") + " --split test") == 0);

  REQUIRE(run("mask-sim --checkpoint " + (dir / "run/pre/checkpoint.bin") +
              " --out " + (dir / "run/mask")) == 0);
  REQUIRE(fs::exists(dir / "run/mask/mask_similarity.csv"));
}

TEST_CASE("reruns with identical config and seed are byte-identical") {
  TempDir dir("prdl_cli_determinism");
  const std::string cfg = dir / "quick.json";
  write_quick_config(cfg);

  for (const char* tag : {"a", "b"}) {
    const std::string base = dir / tag;
    REQUIRE(run("gen-data --out " + base + " --config " + cfg) == 0);
    REQUIRE(run("pretrain --data " + base + "/dataset --out " + base +
                "/pre --seed 11 --config " + cfg) == 0);
    REQUIRE(run("extract --checkpoint " + base + "/pre/checkpoint.bin" +
                " --data " + base + "/dataset --out " + base +
                "/store --config " + cfg) == 0);
    REQUIRE(run("train-mil --store " + base + "/store/store.prsd --data " +
                base + "/dataset --aug prs --seed 5 --out " + base +
                "/mil --config " + cfg) == 0);
  }

  CHECK(binio::read_file(dir / "a/pre/checkpoint.bin") ==
        binio::read_file(dir / "b/pre/checkpoint.bin"));
  CHECK(binio::read_file(dir / "a/store/store.prsd") ==
        binio::read_file(dir / "b/store/store.prsd"));
  CHECK(binio::read_file(dir / "a/mil/mil_model.bin") ==
        binio::read_file(dir / "b/mil/mil_model.bin"));

  auto read_text = [](const std::string& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  CHECK(read_text(dir / "a/mil/metrics.jsonl") ==
        read_text(dir / "b/mil/metrics.jsonl"));
}

TEST_CASE("cli exit codes distinguish validation from runtime failures") {
  TempDir dir("prdl_cli_errors");

  // Unknown augmentation mode: validation error.
  CHECK(run("train-mil --store nope.prsd --data nowhere --aug bogus --seed 1"
            " --out " + (dir / "x")) == 1);

  // Missing input file: runtime (I/O) error.
  CHECK(run("extract --checkpoint " + (dir / "missing.bin") + " --data " +
            (dir / "nowhere") + " --out " + (dir / "y")) == 2);

  // Malformed config: validation error.
  const std::string bad = dir / "bad.json";
  {
    std::ofstream out(bad);
    out << R"({"pretrain": {"hello": 1}})";
  }
  CHECK(run("gen-data --out " + (dir / "z") + " --config " + bad) == 1);

  // Missing required flag: validation error.
  CHECK(run("pretrain --data somewhere --out " + (dir / "w")) == 1);

  // Unknown split name: validation error.
  CHECK(run("eval --model m --store s --data d --split middle") == 1);
}

TEST_CASE("gradcheck subcommand exits zero on a fresh build") {
  CHECK(run("gradcheck --seed 7") == 0);
}
