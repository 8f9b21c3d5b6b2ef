#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>

#include "prdl/config.hpp"
#include "prdl/dataset.hpp"
#include "prdl/gradsuite.hpp"
#include "prdl/kernels.hpp"
#include "prdl/mil.hpp"
#include "prdl/prs_store.hpp"
#include "prdl/trainer.hpp"

namespace {

using namespace prdl;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

config::RunConfig load_config(const std::string& path) {
  if (path.empty()) return config::defaults();
  return config::from_file(path);
}

void require_file(const std::string& path) {
  if (!fs::exists(path)) {
    throw IoError::at(path, "no such file or directory");
  }
}

void print_hash(const config::RunConfig& cfg) {
  std::cout << "config_hash=" << config::config_hash(cfg) << "\n";
}

void write_metrics_line(std::ostream& out, const std::string& method,
                        std::uint64_t seed, const std::string& split,
                        const metrics::Metrics& m) {
  nlohmann::json j = {{"method", method}, {"seed", seed},   {"split", split},
                      {"auc", m.auc},     {"f1", m.f1},     {"acc", m.acc}};
  out << j.dump() << "\n";
}

void print_metrics_table(const std::string& split, const metrics::Metrics& m) {
  std::printf("%-6s auc=%.4f  macro_f1=%.4f  acc=%.4f\n", split.c_str(), m.auc,
              m.f1, m.acc);
}

// Validation errors (bad config, bad flags) exit 1; anything thrown while
// running (I/O, numerical aborts) exits 2. Missing input files are I/O.
int guarded(const std::function<void()>& validate,
            const std::function<void()>& execute) {
  try {
    validate();
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  try {
    execute();
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PRDL: promptable representation-distribution pretraining and "
               "feature-space augmentation for bag-of-patches classifiers"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string data_dir;
  std::string checkpoint_path;
  std::string store_path;
  std::string model_path;
  std::string aug_mode_name = "none";
  std::string split_name = "test";
  std::uint64_t seed = 0;
  int threads = 1;

  auto add_common = [&](CLI::App* cmd, bool with_threads = true) {
    cmd->add_option("--config", config_path, "JSON config file");
    if (with_threads) {
      cmd->add_option("--threads", threads, "worker thread cap (default 1)");
    }
  };

  CLI::App* cmd_gen = app.add_subcommand("gen-data",
                                         "generate a synthetic bag dataset");
  add_common(cmd_gen, false);
  cmd_gen->add_option("--out", out_dir, "output directory")->required();
  CLI::Option* gen_seed = cmd_gen->add_option("--seed", seed, "dataset seed");

  CLI::App* cmd_pre = app.add_subcommand("pretrain",
                                         "self-distillation pretraining");
  add_common(cmd_pre);
  cmd_pre->add_option("--data", data_dir, "dataset directory")->required();
  cmd_pre->add_option("--out", out_dir, "output directory")->required();
  cmd_pre->add_option("--seed", seed, "training seed")->required();

  CLI::App* cmd_ext = app.add_subcommand(
      "extract", "extract per-patch representation distributions");
  add_common(cmd_ext);
  cmd_ext->add_option("--checkpoint", checkpoint_path, "model checkpoint")
      ->required();
  cmd_ext->add_option("--data", data_dir, "dataset directory")->required();
  cmd_ext->add_option("--out", out_dir, "output directory")->required();

  CLI::App* cmd_mil = app.add_subcommand("train-mil",
                                         "train the attention-MIL classifier");
  add_common(cmd_mil);
  cmd_mil->add_option("--store", store_path, "PRSD store file")->required();
  cmd_mil->add_option("--data", data_dir, "dataset directory (for splits)")
      ->required();
  cmd_mil->add_option("--aug", aug_mode_name,
                      "augmentation mode: none|prs|random-perturb|mc-discard");
  cmd_mil->add_option("--out", out_dir, "output directory")->required();
  cmd_mil->add_option("--seed", seed, "training seed")->required();

  CLI::App* cmd_eval = app.add_subcommand("eval", "evaluate a trained model");
  add_common(cmd_eval);
  cmd_eval->add_option("--model", model_path, "trained MIL model")->required();
  cmd_eval->add_option("--store", store_path, "PRSD store file")->required();
  cmd_eval->add_option("--data", data_dir, "dataset directory (for splits)")
      ->required();
  cmd_eval->add_option("--split", split_name, "train|val|test (default test)");
  cmd_eval->add_option("--out", out_dir, "optional output directory");
  CLI::Option* eval_seed =
      cmd_eval->add_option("--seed", seed, "seed recorded in metrics lines");

  CLI::App* cmd_grad = app.add_subcommand(
      "gradcheck", "finite-difference gradient suite (non-zero exit on fail)");
  add_common(cmd_grad);
  cmd_grad->add_option("--seed", seed, "base seed");

  CLI::App* cmd_mask = app.add_subcommand(
      "mask-sim", "cosine similarity matrix of the augmentation masks (CSV)");
  add_common(cmd_mask, false);
  cmd_mask->add_option("--checkpoint", checkpoint_path, "model checkpoint")
      ->required();
  cmd_mask->add_option("--out", out_dir, "optional output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  kernels::set_max_threads(threads);

  if (cmd_gen->parsed()) {
    config::RunConfig cfg;
    return guarded(
        [&] {
          cfg = load_config(config_path);
          if (gen_seed->count() > 0) cfg.data.seed = seed;
          cfg.data.validate();
        },
        [&] {
          print_hash(cfg);
          const data::Dataset ds = mil::gen_synthetic(cfg.data);
          const std::string dataset_dir =
              (fs::path(out_dir) / "dataset").string();
          data::write_dataset(ds, dataset_dir);
          config::echo_config(cfg, out_dir, "gen-data");
          std::size_t patches = 0;
          for (const auto& b : ds.bags) patches += b.patches.size();
          std::cout << "wrote " << ds.bags.size() << " bags (" << patches
                    << " patches) to " << dataset_dir << "\n";
        });
  }

  if (cmd_pre->parsed()) {
    config::RunConfig cfg;
    return guarded(
        [&] {
          cfg = load_config(config_path);
          cfg.pretrain.seed = seed;
          cfg.pretrain.validate();
          require_file(data_dir);
        },
        [&] {
          print_hash(cfg);
          const data::Dataset ds = data::read_dataset(data_dir);
          const auto pool = ds.split_patch_pool(data::Split::Train);
          const train::PretrainResult result =
              train::pretrain(cfg.pretrain, pool, out_dir);
          config::echo_config(cfg, out_dir, "pretrain");
          std::cout << "checkpoint: " << result.checkpoint_path << "\n"
                    << "log: " << result.log_path << "\n"
                    << "final_eval total=" << result.final_eval.total
                    << " at step " << result.final_step << "\n";
        });
  }

  if (cmd_ext->parsed()) {
    config::RunConfig cfg;
    return guarded(
        [&] {
          cfg = load_config(config_path);
          require_file(checkpoint_path);
          require_file(data_dir);
        },
        [&] {
          print_hash(cfg);
          const model::PrdlModel m = model::load_checkpoint(checkpoint_path);
          const data::Dataset ds = data::read_dataset(data_dir);
          const prs::PrsStore store = prs::extract_distributions(m, ds);
          fs::create_directories(out_dir);
          const std::string path = (fs::path(out_dir) / "store.prsd").string();
          prs::save_store(store, path);
          config::echo_config(cfg, out_dir, "extract");
          std::cout << "wrote " << store.bags.size() << " bags to " << path
                    << "\n";
        });
  }

  if (cmd_mil->parsed()) {
    config::RunConfig cfg;
    mil::AugMode mode = mil::AugMode::None;
    return guarded(
        [&] {
          cfg = load_config(config_path);
          mode = mil::parse_aug_mode(aug_mode_name);
          cfg.mil.seed = seed;
          cfg.mil.validate();
          require_file(store_path);
          require_file(data_dir);
        },
        [&] {
          print_hash(cfg);
          const prs::PrsStore store = prs::load_store(store_path);
          const data::Dataset ds = data::read_dataset(data_dir);
          const mil::SplitMap splits = mil::split_map_of(ds);
          const mil::TrainedMil trained =
              mil::train_mil(store, splits, cfg.mil, mode);

          fs::create_directories(out_dir);
          const std::string model_file =
              (fs::path(out_dir) / "mil_model.bin").string();
          mil::save_mil_model(trained.model, model_file);
          config::echo_config(cfg, out_dir, "train-mil");

          const std::string metrics_path =
              (fs::path(out_dir) / "metrics.jsonl").string();
          std::ofstream metrics_file(metrics_path);
          if (!metrics_file) throw IoError::at(metrics_path, "cannot open");
          const char* method = mil::aug_mode_name(mode);
          for (data::Split s : {data::Split::Val, data::Split::Test}) {
            const metrics::Metrics m =
                mil::evaluate(trained.model, store, splits, s);
            print_metrics_table(data::split_name(s), m);
            write_metrics_line(metrics_file, method, cfg.mil.seed,
                               data::split_name(s), m);
          }
          std::cout << "model: " << model_file << "\n"
                    << "metrics: " << metrics_path << "\n"
                    << "best_val_acc=" << trained.best_val_accuracy
                    << " at epoch " << trained.best_epoch << "\n";
        });
  }

  if (cmd_eval->parsed()) {
    config::RunConfig cfg;
    data::Split split = data::Split::Test;
    return guarded(
        [&] {
          cfg = load_config(config_path);
          split = data::parse_split(split_name);
          require_file(model_path);
          require_file(store_path);
          require_file(data_dir);
        },
        [&] {
          print_hash(cfg);
          const mil::MilModel m = mil::load_mil_model(model_path);
          const prs::PrsStore store = prs::load_store(store_path);
          const data::Dataset ds = data::read_dataset(data_dir);
          const metrics::Metrics result =
              mil::evaluate(m, store, mil::split_map_of(ds), split);
          print_metrics_table(data::split_name(split), result);
          write_metrics_line(std::cout, "eval",
                             eval_seed->count() > 0 ? seed : 0,
                             data::split_name(split), result);
          if (!out_dir.empty()) {
            fs::create_directories(out_dir);
            const std::string path =
                (fs::path(out_dir) / "metrics.jsonl").string();
            std::ofstream out(path);
            if (!out) throw IoError::at(path, "cannot open");
            write_metrics_line(out, "eval", eval_seed->count() > 0 ? seed : 0,
                               data::split_name(split), result);
          }
        });
  }

  if (cmd_grad->parsed()) {
    return guarded(
        [] {},
        [&] {
          const train::GradSuiteResult result =
              train::gradient_suite(seed, /*num_seeds=*/5, /*h=*/1e-4,
                                    /*tolerance=*/1e-4);
          for (const auto& c : result.cases) {
            std::printf("%-18s seed=%llu %s max_rel_err=%.3g\n", c.name.c_str(),
                        static_cast<unsigned long long>(c.seed),
                        c.pass ? "PASS" : "FAIL", c.max_rel_err);
          }
          if (!result.pass) {
            throw DomainError("gradient suite failed");
          }
          std::cout << "gradient suite: all " << result.cases.size()
                    << " checks passed\n";
        });
  }

  if (cmd_mask->parsed()) {
    config::RunConfig cfg;
    return guarded(
        [&] {
          cfg = load_config(config_path);
          require_file(checkpoint_path);
        },
        [&] {
          print_hash(cfg);
          const model::PrdlModel m = model::load_checkpoint(checkpoint_path);
          const ad::Tensor sim =
              model::mask_similarity(model::mask_matrix(m.student.at("mask.u")));
          std::ostringstream csv;
          csv << "operator";
          for (std::size_t k = 0; k < m.dims.num_ops; ++k) {
            csv << "," << aug::operator_name(k);
          }
          csv << "\n";
          csv.precision(10);
          for (std::size_t i = 0; i < m.dims.num_ops; ++i) {
            csv << aug::operator_name(i);
            for (std::size_t j = 0; j < m.dims.num_ops; ++j) {
              csv << "," << sim.at2(i, j);
            }
            csv << "\n";
          }
          std::cout << csv.str();
          if (!out_dir.empty()) {
            fs::create_directories(out_dir);
            const std::string path =
                (fs::path(out_dir) / "mask_similarity.csv").string();
            std::ofstream out(path);
            if (!out) throw IoError::at(path, "cannot open");
            out << csv.str();
          }
        });
  }

  return kExitValidation;
}
