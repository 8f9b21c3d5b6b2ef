#include "prdl/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "prdl/rng.hpp"

namespace prdl::config {

using nlohmann::json;

RunConfig defaults() { return RunConfig{}; }

namespace {

// Pulls a field if present, enforcing the JSON type; removes it from the
// in-flight copy so leftovers can be reported as unknown keys.
template <typename T>
void take(json& section, const std::string& path, const char* key, T& out) {
  auto it = section.find(key);
  if (it == section.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError::key(path + "." + key, "wrong type");
  }
  section.erase(it);
}

void reject_unknown(const json& section, const std::string& path) {
  if (section.empty()) return;
  throw ConfigError::key(path + "." + section.begin().key(), "unknown key");
}

json take_section(json& root, const char* key) {
  auto it = root.find(key);
  if (it == root.end()) return json::object();
  if (!it->is_object()) {
    throw ConfigError::key(key, "expected an object");
  }
  json section = *it;
  root.erase(it);
  return section;
}

}  // namespace

RunConfig from_json(const json& input) {
  if (!input.is_object()) throw ConfigError("config root must be an object");
  RunConfig cfg;
  json root = input;

  {
    json s = take_section(root, "data");
    take(s, "data", "classes", cfg.data.num_classes);
    take(s, "data", "bags_per_class", cfg.data.bags_per_class);
    take(s, "data", "patches_per_bag", cfg.data.patches_per_bag);
    take(s, "data", "positive_fraction", cfg.data.positive_fraction);
    take(s, "data", "noise", cfg.data.noise);
    take(s, "data", "patch_size", cfg.data.patch_size);
    take(s, "data", "seed", cfg.data.seed);
    reject_unknown(s, "data");
  }

  {
    json s = take_section(root, "pretrain");
    take(s, "pretrain", "batch_size", cfg.pretrain.batch_size);
    take(s, "pretrain", "epochs", cfg.pretrain.epochs);
    take(s, "pretrain", "max_steps", cfg.pretrain.max_steps);
    take(s, "pretrain", "max_images", cfg.pretrain.max_images);
    take(s, "pretrain", "lr_scale", cfg.pretrain.lr_scale);
    take(s, "pretrain", "lr_floor", cfg.pretrain.lr_floor);
    take(s, "pretrain", "warmup_epochs", cfg.pretrain.warmup_epochs);
    take(s, "pretrain", "lambda0", cfg.pretrain.lambda0);
    take(s, "pretrain", "tau_t_start", cfg.pretrain.tau_t_start);
    take(s, "pretrain", "tau_t_end", cfg.pretrain.tau_t_end);
    take(s, "pretrain", "tau_t_ramp_epochs", cfg.pretrain.tau_t_ramp_epochs);
    take(s, "pretrain", "n_local", cfg.pretrain.n_local);
    take(s, "pretrain", "clip_norm", cfg.pretrain.clip_norm);
    if (s.contains("model")) {
      json m = s["model"];
      s.erase("model");
      if (!m.is_object()) {
        throw ConfigError::key("pretrain.model", "expected an object");
      }
      take(m, "pretrain.model", "enc_hidden", cfg.pretrain.dims.enc_hidden);
      take(m, "pretrain.model", "repr_dim", cfg.pretrain.dims.repr_dim);
      take(m, "pretrain.model", "proj_hidden", cfg.pretrain.dims.proj_hidden);
      take(m, "pretrain.model", "proj_dim", cfg.pretrain.dims.proj_dim);
      take(m, "pretrain.model", "head_depth", cfg.pretrain.dims.head_depth);
      reject_unknown(m, "pretrain.model");
    }
    reject_unknown(s, "pretrain");
  }

  {
    json s = take_section(root, "loss");
    loss::LossConfig& l = cfg.pretrain.loss;
    take(s, "loss", "tau_s", l.tau_s);
    take(s, "loss", "tau_v", l.tau_v);
    take(s, "loss", "beta1", l.beta1);
    take(s, "loss", "beta2", l.beta2);
    take(s, "loss", "beta3", l.beta3);
    take(s, "loss", "gamma", l.gamma);
    take(s, "loss", "center_teacher", l.center_teacher);
    take(s, "loss", "center_momentum", l.center_momentum);
    std::string direction;
    take(s, "loss", "kl_direction", direction);
    if (!direction.empty()) {
      if (direction == "paper-literal") {
        l.kl_direction = loss::KlDirection::PaperLiteral;
      } else if (direction == "conventional") {
        l.kl_direction = loss::KlDirection::Conventional;
      } else {
        throw ConfigError::key(
            "loss.kl_direction",
            "must be 'paper-literal' or 'conventional', got '" + direction +
                "'");
      }
    }
    reject_unknown(s, "loss");
  }

  {
    json s = take_section(root, "store");
    take(s, "store", "literal_sigma", cfg.store_literal_sigma);
    reject_unknown(s, "store");
  }

  {
    json s = take_section(root, "mil");
    take(s, "mil", "epochs", cfg.mil.epochs);
    take(s, "mil", "lr", cfg.mil.lr);
    take(s, "mil", "attn_hidden", cfg.mil.attn_hidden);
    take(s, "mil", "perturb_scale", cfg.mil.perturb_scale);
    take(s, "mil", "discard_keep", cfg.mil.discard_keep);
    take(s, "mil", "per_patch_prompts", cfg.mil.per_patch_prompts);
    take(s, "mil", "resample_every_step", cfg.mil.resample_every_step);
    reject_unknown(s, "mil");
  }

  reject_unknown(root, "(root)");

  cfg.data.validate();
  cfg.pretrain.validate();
  cfg.mil.validate();
  cfg.mil.literal_sigma = cfg.store_literal_sigma;
  return cfg;
}

RunConfig from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError::at(path, "cannot open config file");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("failed to parse " + path + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json to_json(const RunConfig& cfg) {
  json j;
  j["data"] = {{"classes", cfg.data.num_classes},
               {"bags_per_class", cfg.data.bags_per_class},
               {"patches_per_bag", cfg.data.patches_per_bag},
               {"positive_fraction", cfg.data.positive_fraction},
               {"noise", cfg.data.noise},
               {"patch_size", cfg.data.patch_size},
               {"seed", cfg.data.seed}};
  j["pretrain"] = {
      {"batch_size", cfg.pretrain.batch_size},
      {"epochs", cfg.pretrain.epochs},
      {"max_steps", cfg.pretrain.max_steps},
      {"max_images", cfg.pretrain.max_images},
      {"lr_scale", cfg.pretrain.lr_scale},
      {"lr_floor", cfg.pretrain.lr_floor},
      {"warmup_epochs", cfg.pretrain.warmup_epochs},
      {"lambda0", cfg.pretrain.lambda0},
      {"tau_t_start", cfg.pretrain.tau_t_start},
      {"tau_t_end", cfg.pretrain.tau_t_end},
      {"tau_t_ramp_epochs", cfg.pretrain.tau_t_ramp_epochs},
      {"n_local", cfg.pretrain.n_local},
      {"clip_norm", cfg.pretrain.clip_norm},
      {"model",
       {{"enc_hidden", cfg.pretrain.dims.enc_hidden},
        {"repr_dim", cfg.pretrain.dims.repr_dim},
        {"proj_hidden", cfg.pretrain.dims.proj_hidden},
        {"proj_dim", cfg.pretrain.dims.proj_dim},
        {"head_depth", cfg.pretrain.dims.head_depth}}}};
  j["loss"] = {
      {"tau_s", cfg.pretrain.loss.tau_s},
      {"tau_v", cfg.pretrain.loss.tau_v},
      {"beta1", cfg.pretrain.loss.beta1},
      {"beta2", cfg.pretrain.loss.beta2},
      {"beta3", cfg.pretrain.loss.beta3},
      {"gamma", cfg.pretrain.loss.gamma},
      {"kl_direction",
       cfg.pretrain.loss.kl_direction == loss::KlDirection::PaperLiteral
           ? "paper-literal"
           : "conventional"},
      {"center_teacher", cfg.pretrain.loss.center_teacher},
      {"center_momentum", cfg.pretrain.loss.center_momentum}};
  j["store"] = {{"literal_sigma", cfg.store_literal_sigma}};
  j["mil"] = {{"epochs", cfg.mil.epochs},
              {"lr", cfg.mil.lr},
              {"attn_hidden", cfg.mil.attn_hidden},
              {"perturb_scale", cfg.mil.perturb_scale},
              {"discard_keep", cfg.mil.discard_keep},
              {"per_patch_prompts", cfg.mil.per_patch_prompts},
              {"resample_every_step", cfg.mil.resample_every_step}};
  return j;
}

std::string config_hash(const RunConfig& cfg) {
  const std::string dump = to_json(cfg).dump();
  const std::uint64_t h = hash_string(dump);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

void echo_config(const RunConfig& cfg, const std::string& out_dir,
                 const std::string& stage) {
  std::filesystem::create_directories(out_dir);
  const std::string path =
      (std::filesystem::path(out_dir) / ("config." + stage + ".json")).string();
  std::ofstream out(path);
  if (!out) throw IoError::at(path, "cannot write resolved config");
  out << to_json(cfg).dump(2) << "\n";
}

}  // namespace prdl::config
