// Copyright 2026 The cmcl Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "data_synth.hpp"
#include "graph.hpp"
#include "losses.hpp"
#include "model.hpp"

namespace cmcl {

/// Contrastive term added to the supervised loss during training.
enum class ClMode { kOff, kCoarseTriplet, kVanilla, kGraphNegatives, kMultiPositive };

std::string_view to_string(ClMode mode);
ClMode parse_cl_mode(std::string_view name);

struct OptimizerConfig {
  enum class Kind { kSgd, kAdam };
  Kind kind = Kind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 256;
  double warmup_ratio = 0.1;
  double base_lr = 1e-3;
  OptimizerConfig optimizer;
  double lambda = 0.5;
  double tau = 1.0;
  ClMode cl_mode = ClMode::kMultiPositive;
  std::uint64_t seed = 0;
  std::size_t hidden = 32;
  std::size_t embed = 16;
  /// Batches probed for false-negative rates after every epoch.
  std::size_t probe_batches = 20;

  void validate() const;
};

/// Strict JSON (unknown keys rejected); absent keys keep their defaults.
TrainConfig parse_train_config(const std::string& json_text);
std::string train_config_to_json(const TrainConfig& config);

/// lr(step) = base_lr * min(1, step / (warmup_ratio * total_steps)), step 1-based.
double learning_rate(std::size_t step, std::size_t total_steps, double warmup_ratio,
                     double base_lr);

struct Batch {
  Matrix images;
  Matrix questions;
  Matrix answers;
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices);

/// Triplet-level InfoNCE on fused representations: the anchor fuse(I_m, QA_m)
/// is contrasted with fuse(I_j, QA_m) for every image j in the batch.
struct CoarseTripletResult {
  double value = 0.0;
  Matrix grad_image;
  Matrix grad_qa;
  Mlp grad_fusion;
};

CoarseTripletResult coarse_triplet_cl(const Matrix& v_image, const Matrix& v_qa,
                                      const ToyModel& model, double tau);

struct StepResult {
  double loss_sup = 0.0;
  double loss_cl = 0.0;
  double loss_total = 0.0;
  ToyParams grads;
};

/// Neighbour graph over the batch's current image embeddings.
NeighborGraph batch_graph(const ToyModel& model, const Batch& batch);

/// Joint loss and parameter gradients for one batch. When `fixed_graph` is
/// null and the mode needs one, it is built from the current embeddings.
StepResult compute_step(const ToyModel& model, const Batch& batch, const TrainConfig& config,
                        const NeighborGraph* fixed_graph = nullptr);

class Optimizer {
 public:
  Optimizer(const OptimizerConfig& config, const ToyParams& like);
  void apply(ToyParams& params, const ToyParams& grads, double lr);

 private:
  OptimizerConfig config_;
  ToyParams first_moment_;
  ToyParams second_moment_;
  std::uint64_t steps_ = 0;
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> per_question_type;  // NaN for absent types
};

EvalResult evaluate(const ToyModel& model, const Dataset& dataset);

struct ProbeResult {
  double rate_vanilla = 0.0;
  double rate_graph = 0.0;
  double mean_component_size = 0.0;
  std::size_t negatives_vanilla = 0;
  std::size_t false_negatives_vanilla = 0;
  std::size_t negatives_graph = 0;
  std::size_t false_negatives_graph = 0;
};

struct ProbedBatch {
  std::vector<std::size_t> indices;
  NeighborGraph graph;
  ProbeResult counts;
};

/// Counts oracle false negatives among the negatives each selection rule
/// picks on one batch of dataset rows.
ProbedBatch probe_batch(const ToyModel& model, const Dataset& dataset,
                        std::vector<std::size_t> indices);

/// Rates pooled over `num_batches` random batches (seeded).
ProbeResult probe_false_negatives(const ToyModel& model, const Dataset& dataset,
                                  std::size_t batch_size, std::size_t num_batches,
                                  std::uint64_t seed);

/// Random batches used by probe_false_negatives for a given seed.
std::vector<std::vector<std::size_t>> probe_batches(std::size_t dataset_size,
                                                    std::size_t batch_size,
                                                    std::size_t num_batches, std::uint64_t seed);

struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double loss_sup = 0.0;
  double loss_cl = 0.0;
  double acc_overall = 0.0;                  // train split
  std::vector<double> acc_per_question_type;  // counter split
  double acc_test_iid = 0.0;
  double acc_test_counter = 0.0;
  double false_negative_rate_vanilla = 0.0;   // NaN without an oracle
  double false_negative_rate_graph = 0.0;
  double mean_component_size = 0.0;
};

std::string metrics_to_json(const EpochMetrics& metrics);

struct TrainResult {
  ToyModel model;
  std::vector<EpochMetrics> history;
  std::size_t steps = 0;
};

/// Thrown when the loss turns non-finite; carries the parameters from
/// before the failing step.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& message, ToyModel last_good, std::size_t step)
      : Error(ErrorCode::kDivergenceDetected, message), last_good_(std::move(last_good)),
        step_(step) {}

  const ToyModel& last_good() const noexcept { return last_good_; }
  std::size_t step() const noexcept { return step_; }

 private:
  ToyModel last_good_;
  std::size_t step_;
};

ModelSpec model_spec_for(const DataSplits& data, const TrainConfig& config);

using EpochCallback = std::function<void(const EpochMetrics&, const ToyModel&)>;

TrainResult train(ToyModel model, const DataSplits& data, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

}  // namespace cmcl
