#ifndef PRDL_CONFIG_HPP
#define PRDL_CONFIG_HPP

#include <string>

#include <json.hpp>

#include "prdl/mil.hpp"
#include "prdl/trainer.hpp"

namespace prdl::config {

// Full run configuration; every field has a default, and unknown JSON keys
// are hard errors carrying the offending key path.
struct RunConfig {
  mil::SyntheticBagConfig data;
  train::TrainConfig pretrain;  // carries loss config and model dims
  bool store_literal_sigma = false;
  mil::MilConfig mil;
};

RunConfig defaults();

// Parses and validates a config document (or file), applying values over the
// defaults. Throws ConfigError on unknown keys, wrong types, or invalid
// values.
RunConfig from_json(const nlohmann::json& j);
RunConfig from_file(const std::string& path);

// Fully resolved round trip: defaults applied, every field present.
nlohmann::json to_json(const RunConfig& cfg);

// FNV-1a over the canonical dump; stable across runs for provenance lines.
std::string config_hash(const RunConfig& cfg);

// Writes the resolved config next to the artifacts it produced.
void echo_config(const RunConfig& cfg, const std::string& out_dir,
                 const std::string& stage);

}  // namespace prdl::config

#endif  // PRDL_CONFIG_HPP
