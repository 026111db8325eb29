// Copyright 2026 The cmcl Authors.
// SPDX-License-Identifier: Apache-2.0

// Reproducible experiment entry points shared by the C API and the CLI.
// Every output file except timings.json is a pure function of the inputs.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "data_synth.hpp"
#include "trainer.hpp"

namespace cmcl {

const char* version_string() noexcept;

/// FNV-1a over the dataset files in a fixed order, hex encoded.
std::string dataset_hash(const std::filesystem::path& data_dir);

// ---------------------------------------------------------------------------
// gen-data

void run_gen_data(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// train

struct TrainRunSummary {
  std::size_t steps = 0;
  EpochMetrics final_metrics;
};

/// Writes metrics.jsonl, summary.csv, checkpoint.json, manifest.json and
/// timings.json into out_dir. On divergence, checkpoint_last_good.json is
/// written before the DivergenceError propagates.
TrainRunSummary run_train(const TrainConfig& config, const std::filesystem::path& data_dir,
                          const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// grad-check

/// Relative error normaliser floor: |a - n| / max(|a|, |n|, floor).
/// With floor = 1e-2 a 1e-5 relative threshold implies a 1e-7 absolute floor.
inline constexpr double kGradCheckScaleFloor = 1e-2;
inline constexpr double kGradCheckTolerance = 1e-5;
inline constexpr double kGradCheckStep = 1e-5;

struct GradCheckRow {
  std::string objective;
  std::size_t instances = 0;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::uint64_t seed = 0;
  std::size_t trials = 0;
  std::vector<GradCheckRow> rows;

  bool passed() const;
  std::string to_json() const;
  std::string to_table() const;
};

double gradient_error(double analytic, double numeric);

/// Compares analytic gradients with central differences for every
/// objective on `trials` random instances each (M in [2,16], D in [2,8]).
GradCheckReport run_grad_check(std::uint64_t seed, std::size_t trials);

// ---------------------------------------------------------------------------
// ablate

struct AblationCell {
  std::string group;  // "mode" or "lambda"
  ClMode mode = ClMode::kOff;
  double lambda = 0.0;
  std::size_t seeds = 0;
  double acc_train = 0.0;
  double acc_test_iid = 0.0;
  double acc_test_counter = 0.0;
  double acc_test_counter_std = 0.0;
  double fn_rate_vanilla = 0.0;
  double fn_rate_graph = 0.0;
  double mean_component_size = 0.0;
  double loss_sup = 0.0;
  double loss_cl = 0.0;
  std::vector<double> per_seed_counter;
};

struct AblationRequest {
  TrainConfig base;
  std::vector<ClMode> modes;
  std::vector<double> lambdas;  // empty: no sweep
  std::size_t seeds_per_cell = 5;
  std::size_t threads = 1;
};

std::vector<ClMode> parse_mode_list(const std::string& csv);
std::vector<double> parse_lambda_list(const std::string& csv);

/// Final-epoch metrics averaged over seeds base.seed .. base.seed + n - 1.
std::vector<AblationCell> run_ablation(const AblationRequest& request, const DataSplits& data);

std::string ablation_to_csv(const std::vector<AblationCell>& cells);

/// Loads data, runs the ablation, and writes ablation.csv + manifest.json
/// (+ timings.json) into out_dir. Returns the CSV text.
std::string run_ablate(const AblationRequest& request, const std::filesystem::path& data_dir,
                       const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// probe-graph

struct ProbeRequest {
  std::filesystem::path checkpoint;
  std::filesystem::path data_dir;
  Split split = Split::kTrain;
  std::size_t batch_size = 64;
  std::size_t num_batches = 4;
  std::uint64_t seed = 0;
};

/// JSON report with one serialized graph per probed batch and, when the
/// data carries concept labels, pooled false-negative rates.
std::string run_probe_graph(const ProbeRequest& request);

}  // namespace cmcl
