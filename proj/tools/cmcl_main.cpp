// Copyright 2026 The cmcl Authors.
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Talks to the library through the C API only.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "cmcl/cmcl.h"
#include "json.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code_for(int status) {
  if (status == CMCL_OK) return kExitOk;
  if (status == CMCL_DIVERGENCE_DETECTED || status == CMCL_GRADIENT_CHECK_FAILED) {
    return kExitNumerical;
  }
  return kExitUsage;
}

int report(int status) {
  if (status != CMCL_OK) {
    std::cerr << "cmcl: " << cmcl_last_error() << '\n';
  }
  return exit_code_for(status);
}

std::string take(char* s) {
  std::string out = s ? s : "";
  cmcl_string_free(s);
  return out;
}

// Loads a JSON config file (or "{}" when no file is given) and applies
// command-line overrides.
std::string load_config(const std::string& path, const nlohmann::ordered_json& overrides) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  if (!path.empty()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      doc = nlohmann::ordered_json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
      throw UsageError("config file " + path + " is not valid JSON: " + e.what());
    }
    if (!doc.is_object()) throw UsageError("config file " + path + " must hold a JSON object");
  }
  for (const auto& [key, value] : overrides.items()) doc[key] = value;
  return doc.dump();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-debiased cross-modal contrastive learning toolkit"};
  app.set_version_flag("--version", std::string(cmcl_version()));
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, checkpoint, modes, lambdas, split = "train";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> batch_size;
  std::size_t trials = 50, seeds_per_cell = 5, threads = 0, num_batches = 4;
  std::string json_out;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--config", config_path, "Synthetic spec JSON file")->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--seed", seed, "Override the spec seed");

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", config_path, "Training config JSON file")->check(CLI::ExistingFile);
  train->add_option("--data", data_dir, "Dataset directory")->required();
  train->add_option("--out", out_dir, "Run output directory")->required();
  train->add_option("--seed", seed, "Override the config seed");
  train->add_option("--batch-size", batch_size, "Override the config batch size");

  auto* grad = app.add_subcommand("grad-check", "Compare analytic and numerical gradients");
  grad->add_option("--seed", seed, "Root seed (default 0)");
  grad->add_option("--trials", trials, "Random instances per objective")->capture_default_str();
  grad->add_option("--out", json_out, "Also write the JSON report to this file");

  auto* ablate = app.add_subcommand("ablate", "Run the contrastive-mode ablation and lambda sweep");
  ablate->add_option("--config", config_path, "Base training config JSON file")
      ->check(CLI::ExistingFile);
  ablate->add_option("--data", data_dir, "Dataset directory")->required();
  ablate->add_option("--out", out_dir, "Output directory")->required();
  ablate->add_option("--seed", seed, "First seed of each cell");
  ablate->add_option("--batch-size", batch_size, "Override the config batch size");
  ablate->add_option("--modes", modes, "Comma-separated cl modes")
      ->default_str("off,coarse_triplet,vanilla,graph_negatives,multi_positive");
  ablate->add_option("--sweep-lambda", lambdas, "Comma-separated lambda values, e.g. 0,0.1,0.3,0.5,0.7,1.0");
  ablate->add_option("--seeds-per-cell", seeds_per_cell, "Seeds per row")->capture_default_str();
  ablate->add_option("--threads", threads, "Worker threads (0 = all cores)")->capture_default_str();

  auto* probe = app.add_subcommand("probe-graph", "Dump in-batch graphs and false-negative rates");
  probe->add_option("--checkpoint", checkpoint, "Checkpoint JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  probe->add_option("--data", data_dir, "Dataset directory")->required();
  probe->add_option("--batch-size", batch_size, "Probe batch size (default 64)");
  probe->add_option("--num-batches", num_batches, "Number of batches")->capture_default_str();
  probe->add_option("--split", split, "train, test_iid or test_counter")
      ->check(CLI::IsMember({"train", "test_iid", "test_counter"}))
      ->capture_default_str();
  probe->add_option("--seed", seed, "Batch sampling seed (default 0)");
  probe->add_option("--out", json_out, "Write the report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      nlohmann::ordered_json over = nlohmann::ordered_json::object();
      if (seed) over["seed"] = *seed;
      const std::string spec = load_config(config_path, over);
      const int st = cmcl_generate_dataset(spec.c_str(), out_dir.c_str());
      if (st == CMCL_OK) std::cout << "wrote dataset to " << out_dir << '\n';
      return report(st);
    }

    if (train->parsed()) {
      nlohmann::ordered_json over = nlohmann::ordered_json::object();
      if (seed) over["seed"] = *seed;
      if (batch_size) over["batch_size"] = *batch_size;
      const std::string cfg = load_config(config_path, over);
      char* summary = nullptr;
      const int st = cmcl_train(cfg.c_str(), data_dir.c_str(), out_dir.c_str(), &summary);
      if (st == CMCL_OK) std::cout << take(summary) << '\n';
      return report(st);
    }

    if (grad->parsed()) {
      char* js = nullptr;
      char* table = nullptr;
      int passed = 0;
      const int st = cmcl_grad_check(seed.value_or(0), trials, &js, &table, &passed);
      if (st != CMCL_OK) return report(st);
      std::cout << take(table);
      const std::string report_json = take(js);
      if (!json_out.empty()) {
        std::ofstream out(json_out, std::ios::binary);
        if (!out) throw UsageError("cannot write " + json_out);
        out << report_json << '\n';
      }
      std::cout << (passed ? "gradient check passed\n" : "gradient check FAILED\n");
      return passed ? kExitOk : kExitNumerical;
    }

    if (ablate->parsed()) {
      nlohmann::ordered_json over = nlohmann::ordered_json::object();
      if (batch_size) over["batch_size"] = *batch_size;
      const std::string cfg = load_config(config_path, over);
      cmcl_ablate_options opt{};
      opt.config_json = cfg.c_str();
      opt.modes = modes.empty() ? nullptr : modes.c_str();
      opt.lambdas = lambdas.c_str();
      opt.seeds_per_cell = seeds_per_cell;
      opt.threads = threads;
      opt.has_seed = seed ? 1 : 0;
      opt.seed = seed.value_or(0);
      if (seeds_per_cell == 0) throw UsageError("--seeds-per-cell must be >= 1");
      char* csv = nullptr;
      const int st = cmcl_ablate(&opt, data_dir.c_str(), out_dir.c_str(), &csv);
      if (st == CMCL_OK) std::cout << take(csv);
      return report(st);
    }

    if (probe->parsed()) {
      cmcl_probe_options opt{};
      opt.checkpoint = checkpoint.c_str();
      opt.data_dir = data_dir.c_str();
      opt.split = split == "train" ? 0 : split == "test_iid" ? 1 : 2;
      opt.batch_size = batch_size.value_or(0);
      opt.num_batches = num_batches;
      opt.seed = seed.value_or(0);
      if (num_batches == 0) throw UsageError("--num-batches must be >= 1");
      if (batch_size && *batch_size < 2) throw UsageError("--batch-size must be >= 2");
      char* js = nullptr;
      const int st = cmcl_probe_graph(&opt, &js);
      if (st != CMCL_OK) return report(st);
      const std::string text = take(js);
      if (json_out.empty()) {
        std::cout << text;
      } else {
        std::ofstream out(json_out, std::ios::binary);
        if (!out) throw UsageError("cannot write " + json_out);
        out << text;
      }
      return kExitOk;
    }
  } catch (const UsageError& e) {
    std::cerr << "cmcl: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
