// Copyright 2026 The cmcl Authors.
// SPDX-License-Identifier: Apache-2.0

#include "trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>

#include "json_util.hpp"

namespace cmcl {

using jsonutil::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    purpose, 0x636d636cU};
  return std::mt19937_64(seq);
}

enum Purpose : std::uint32_t { kInit = 1, kShuffle = 2, kProbe = 3 };

}  // namespace

std::string_view to_string(ClMode mode) {
  switch (mode) {
    case ClMode::kOff: return "off";
    case ClMode::kCoarseTriplet: return "coarse_triplet";
    case ClMode::kVanilla: return "vanilla";
    case ClMode::kGraphNegatives: return "graph_negatives";
    case ClMode::kMultiPositive: return "multi_positive";
  }
  return "unknown";
}

ClMode parse_cl_mode(std::string_view name) {
  for (ClMode m : {ClMode::kOff, ClMode::kCoarseTriplet, ClMode::kVanilla,
                   ClMode::kGraphNegatives, ClMode::kMultiPositive}) {
    if (to_string(m) == name) return m;
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown cl_mode '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::kInvalidConfig, why); };
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 2) fail("batch_size must be >= 2");
  if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) fail("warmup_ratio must be in [0, 1]");
  if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) fail("base_lr must be >= 0");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda must be >= 0");
  if (!(tau > 0.0) || !std::isfinite(tau)) fail("tau must be > 0");
  if (hidden == 0 || embed == 0) fail("hidden and embed must be positive");
  if (optimizer.kind == OptimizerConfig::Kind::kAdam) {
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) fail("adam beta1 must be in [0, 1)");
    if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) fail("adam beta2 must be in [0, 1)");
    if (!(optimizer.eps > 0.0)) fail("adam eps must be > 0");
  }
}

TrainConfig parse_train_config(const std::string& json_text) {
  constexpr auto code = ErrorCode::kInvalidConfig;
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(code, std::string("config JSON: ") + e.what());
  }
  jsonutil::reject_unknown_keys(doc,
                                {"epochs", "batch_size", "warmup_ratio", "base_lr", "optimizer",
                                 "lambda", "tau", "cl_mode", "seed", "model", "probe_batches"},
                                "train config", code);
  TrainConfig cfg;
  jsonutil::read_optional(doc, "epochs", cfg.epochs, code);
  jsonutil::read_optional(doc, "batch_size", cfg.batch_size, code);
  jsonutil::read_optional(doc, "warmup_ratio", cfg.warmup_ratio, code);
  jsonutil::read_optional(doc, "base_lr", cfg.base_lr, code);
  jsonutil::read_optional(doc, "lambda", cfg.lambda, code);
  jsonutil::read_optional(doc, "tau", cfg.tau, code);
  jsonutil::read_optional(doc, "seed", cfg.seed, code);
  jsonutil::read_optional(doc, "probe_batches", cfg.probe_batches, code);
  if (doc.contains("cl_mode")) {
    std::string mode;
    jsonutil::read_optional(doc, "cl_mode", mode, code);
    cfg.cl_mode = parse_cl_mode(mode);
  }
  if (doc.contains("optimizer")) {
    const json& o = doc["optimizer"];
    jsonutil::reject_unknown_keys(o, {"kind", "beta1", "beta2", "eps"}, "optimizer", code);
    std::string kind = "adam";
    jsonutil::read_optional(o, "kind", kind, code);
    if (kind == "adam") {
      cfg.optimizer.kind = OptimizerConfig::Kind::kAdam;
    } else if (kind == "sgd") {
      cfg.optimizer.kind = OptimizerConfig::Kind::kSgd;
    } else {
      throw Error(code, "unknown optimizer '" + kind + "'");
    }
    jsonutil::read_optional(o, "beta1", cfg.optimizer.beta1, code);
    jsonutil::read_optional(o, "beta2", cfg.optimizer.beta2, code);
    jsonutil::read_optional(o, "eps", cfg.optimizer.eps, code);
  }
  if (doc.contains("model")) {
    const json& m = doc["model"];
    jsonutil::reject_unknown_keys(m, {"hidden", "embed"}, "model", code);
    jsonutil::read_optional(m, "hidden", cfg.hidden, code);
    jsonutil::read_optional(m, "embed", cfg.embed, code);
  }
  cfg.validate();
  return cfg;
}

std::string train_config_to_json(const TrainConfig& c) {
  const bool adam = c.optimizer.kind == OptimizerConfig::Kind::kAdam;
  json o{{"kind", adam ? "adam" : "sgd"}};
  if (adam) {
    o["beta1"] = c.optimizer.beta1;
    o["beta2"] = c.optimizer.beta2;
    o["eps"] = c.optimizer.eps;
  }
  json doc{{"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"warmup_ratio", c.warmup_ratio},
           {"base_lr", c.base_lr},
           {"optimizer", std::move(o)},
           {"lambda", c.lambda},
           {"tau", c.tau},
           {"cl_mode", std::string(to_string(c.cl_mode))},
           {"seed", c.seed},
           {"model", {{"hidden", c.hidden}, {"embed", c.embed}}},
           {"probe_batches", c.probe_batches}};
  return doc.dump(2) + "\n";
}

double learning_rate(std::size_t step, std::size_t total_steps, double warmup_ratio,
                     double base_lr) {
  const double warm = warmup_ratio * static_cast<double>(total_steps);
  if (warm <= 0.0) return base_lr;
  return base_lr * std::min(1.0, static_cast<double>(step) / warm);
}

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
  if (indices.empty()) throw Error(ErrorCode::kEmptyDataset, "empty batch");
  const Sample& first = dataset.samples.at(indices[0]);
  Batch b{Matrix(indices.size(), first.image_feat.size()),
          Matrix(indices.size(), first.question_feat.size()),
          Matrix(indices.size(), first.answer_feat.size()),
          {}};
  b.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const Sample& s = dataset.samples.at(indices[r]);
    if (s.image_feat.size() != b.images.cols() || s.question_feat.size() != b.questions.cols() ||
        s.answer_feat.size() != b.answers.cols()) {
      throw Error(ErrorCode::kDimensionMismatch, "sample " + std::to_string(indices[r]) +
                                                     " has inconsistent feature sizes");
    }
    std::copy(s.image_feat.begin(), s.image_feat.end(), b.images.row(r).begin());
    std::copy(s.question_feat.begin(), s.question_feat.end(), b.questions.row(r).begin());
    std::copy(s.answer_feat.begin(), s.answer_feat.end(), b.answers.row(r).begin());
    b.labels.push_back(s.answer_id);
  }
  return b;
}

CoarseTripletResult coarse_triplet_cl(const Matrix& v_image, const Matrix& v_qa,
                                      const ToyModel& model, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorCode::kInvalidArgument, "tau must be > 0");
  const std::size_t m = v_image.rows();
  if (m < 2) throw Error(ErrorCode::kBatchTooSmall, "coarse triplet loss needs M >= 2");
  const PairFusionPass pass = model.fuse_pairs(v_image, v_qa);
  const std::size_t h = pass.fused.cols();
  const double scale = 1.0 / static_cast<double>(m);

  Matrix grad_fused(m * m, h);
  std::vector<double> logits(m);
  double sum_j = 0.0;
  for (std::size_t anchor = 0; anchor < m; ++anchor) {
    const auto a = pass.fused.row(anchor * m + anchor);
    for (std::size_t j = 0; j < m; ++j) {
      logits[j] = cosine_similarity(a, pass.fused.row(anchor * m + j)) / tau;
    }
    const double lse = log_sum_exp(logits);
    sum_j += logits[anchor] - lse;
    // The positive's similarity is cos(a, a) = 1, which carries no gradient.
    for (std::size_t j = 0; j < m; ++j) {
      if (j == anchor) continue;
      const double g = scale * std::exp(logits[j] - lse) / tau;
      cosine_backward(a, pass.fused.row(anchor * m + j), g, grad_fused.row(anchor * m + anchor),
                      grad_fused.row(anchor * m + j));
    }
  }

  CoarseTripletResult out;
  out.value = -sum_j * scale;
  out.grad_image = Matrix(m, v_image.cols());
  out.grad_qa = Matrix(m, v_qa.cols());
  out.grad_fusion = zeros_like(model.params()).fusion;
  model.backward_pairs(pass, v_image, v_qa, grad_fused, out.grad_image, out.grad_qa,
                       out.grad_fusion);
  return out;
}

NeighborGraph batch_graph(const ToyModel& model, const Batch& batch) {
  return build_knn_graph(model.encode_images(batch.images));
}

namespace {

ContrastiveMode to_contrastive(ClMode mode) {
  switch (mode) {
    case ClMode::kVanilla: return ContrastiveMode::kVanilla;
    case ClMode::kGraphNegatives: return ContrastiveMode::kGraphNegatives;
    default: return ContrastiveMode::kMultiPositive;
  }
}

void add_mlp(Mlp& into, const Mlp& from, double scale) {
  into.first.weight.add_scaled(from.first.weight, scale);
  into.first.bias.add_scaled(from.first.bias, scale);
  into.second.weight.add_scaled(from.second.weight, scale);
  into.second.bias.add_scaled(from.second.bias, scale);
}

}  // namespace

StepResult compute_step(const ToyModel& model, const Batch& batch, const TrainConfig& config,
                        const NeighborGraph* fixed_graph) {
  const bool needs_qa = config.cl_mode != ClMode::kOff;
  const ForwardPass pass =
      model.forward(batch.images, batch.questions, needs_qa ? &batch.answers : nullptr);
  const LossReport sup = supervised_ce(pass.logits, batch.labels);

  StepResult out;
  out.loss_sup = sup.value;
  OutputGradients upstream;
  upstream.logits = sup.grad_logits;

  switch (config.cl_mode) {
    case ClMode::kOff:
      out.grads = model.backward(pass, upstream);
      break;
    case ClMode::kCoarseTriplet: {
      CoarseTripletResult cl = coarse_triplet_cl(pass.v_image, pass.v_qa, model, config.tau);
      out.loss_cl = cl.value;
      cl.grad_image *= config.lambda;
      cl.grad_qa *= config.lambda;
      upstream.v_image = std::move(cl.grad_image);
      upstream.v_qa = std::move(cl.grad_qa);
      out.grads = model.backward(pass, upstream);
      add_mlp(out.grads.fusion, cl.grad_fusion, config.lambda);
      break;
    }
    case ClMode::kVanilla:
    case ClMode::kGraphNegatives:
    case ClMode::kMultiPositive: {
      const ContrastiveConfig cc{config.tau, config.lambda, to_contrastive(config.cl_mode)};
      std::optional<NeighborGraph> built;
      const NeighborGraph* graph = fixed_graph;
      if (cc.mode != ContrastiveMode::kVanilla && graph == nullptr) {
        built = build_knn_graph(pass.v_image);
        graph = &*built;
      }
      const EmbeddingBatch eb{pass.v_image, pass.v_qa};
      const AlignmentMap map{model.params().alignment};
      const LossReport cl = contrastive_loss(eb, map, cc, graph);
      out.loss_cl = cl.value;
      const LossReport joint = joint_loss(sup, cl, config.lambda);
      upstream.logits = joint.grad_logits;
      upstream.v_image = joint.grad_image;
      upstream.v_qa = joint.grad_text;
      upstream.alignment = joint.grad_alignment;
      out.grads = model.backward(pass, upstream);
      break;
    }
  }
  out.loss_total = out.loss_sup + config.lambda * out.loss_cl;
  return out;
}

Optimizer::Optimizer(const OptimizerConfig& config, const ToyParams& like)
    : config_(config), first_moment_(zeros_like(like)), second_moment_(zeros_like(like)) {}

void Optimizer::apply(ToyParams& params, const ToyParams& grads, double lr) {
  ++steps_;
  std::vector<Matrix*> p;
  std::vector<const Matrix*> g;
  std::vector<Matrix*> m1;
  std::vector<Matrix*> m2;
  for_each_tensor(params, [&](std::string_view, Matrix& t) { p.push_back(&t); });
  for_each_tensor(grads, [&](std::string_view, const Matrix& t) { g.push_back(&t); });
  for_each_tensor(first_moment_, [&](std::string_view, Matrix& t) { m1.push_back(&t); });
  for_each_tensor(second_moment_, [&](std::string_view, Matrix& t) { m2.push_back(&t); });

  if (config_.kind == OptimizerConfig::Kind::kSgd) {
    for (std::size_t i = 0; i < p.size(); ++i) p[i]->add_scaled(*g[i], -lr);
    return;
  }
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto pv = p[i]->values();
    auto gv = g[i]->values();
    auto mv = m1[i]->values();
    auto vv = m2[i]->values();
    for (std::size_t k = 0; k < pv.size(); ++k) {
      mv[k] = b1 * mv[k] + (1.0 - b1) * gv[k];
      vv[k] = b2 * vv[k] + (1.0 - b2) * gv[k] * gv[k];
      pv[k] -= lr * (mv[k] / c1) / (std::sqrt(vv[k] / c2) + config_.eps);
    }
  }
}

EvalResult evaluate(const ToyModel& model, const Dataset& dataset) {
  if (dataset.samples.empty()) throw Error(ErrorCode::kEmptyDataset, "cannot evaluate an empty dataset");
  constexpr std::size_t kChunk = 1024;
  const std::size_t types = dataset.num_question_types();
  std::vector<std::size_t> correct_by_type(types, 0);
  std::vector<std::size_t> total_by_type(types, 0);
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < dataset.size(); start += kChunk) {
    const std::size_t end = std::min(dataset.size(), start + kChunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Batch b = make_batch(dataset, idx);
    const ForwardPass pass = model.forward(b.images, b.questions, nullptr);
    for (std::size_t r = 0; r < b.size(); ++r) {
      const auto row = pass.logits.row(r);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      const std::size_t t = dataset.samples[start + r].question_type;
      ++total_by_type[t];
      if (best == b.labels[r]) {
        ++correct;
        ++correct_by_type[t];
      }
    }
  }
  EvalResult out;
  out.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());
  for (std::size_t t = 0; t < types; ++t) {
    out.per_question_type.push_back(
        total_by_type[t] == 0 ? kNaN
                              : static_cast<double>(correct_by_type[t]) /
                                    static_cast<double>(total_by_type[t]));
  }
  return out;
}

ProbedBatch probe_batch(const ToyModel& model, const Dataset& dataset,
                        std::vector<std::size_t> indices) {
  if (!dataset.has_oracle()) {
    throw Error(ErrorCode::kOracleUnavailable, "dataset has no concept labels");
  }
  const Batch b = make_batch(dataset, indices);
  NeighborGraph graph = build_knn_graph(model.encode_images(b.images));
  ProbeResult counts;
  const std::size_t m = indices.size();
  for (std::size_t a = 0; a < m; ++a) {
    const Sample& anchor = dataset.samples[indices[a]];
    const auto& component = graph.component_of();
    for (std::size_t j = 0; j < m; ++j) {
      if (j == a) continue;
      const bool fn = oracle_false_negative(dataset, anchor, dataset.samples[indices[j]]);
      ++counts.negatives_vanilla;
      counts.false_negatives_vanilla += fn ? 1 : 0;
      if (component[j] != component[a]) {
        ++counts.negatives_graph;
        counts.false_negatives_graph += fn ? 1 : 0;
      }
    }
  }
  counts.mean_component_size = static_cast<double>(m) / static_cast<double>(graph.num_components());
  auto rate = [](std::size_t fn, std::size_t n) {
    return n == 0 ? 0.0 : static_cast<double>(fn) / static_cast<double>(n);
  };
  counts.rate_vanilla = rate(counts.false_negatives_vanilla, counts.negatives_vanilla);
  counts.rate_graph = rate(counts.false_negatives_graph, counts.negatives_graph);
  return ProbedBatch{std::move(indices), std::move(graph), counts};
}

std::vector<std::vector<std::size_t>> probe_batches(std::size_t dataset_size,
                                                    std::size_t batch_size,
                                                    std::size_t num_batches, std::uint64_t seed) {
  if (dataset_size < 2) throw Error(ErrorCode::kBatchTooSmall, "probing needs at least 2 samples");
  if (batch_size < 2) throw Error(ErrorCode::kBatchTooSmall, "probe batch size must be >= 2");
  const std::size_t m = std::min(batch_size, dataset_size);
  auto rng = stream(seed, kProbe);
  std::vector<std::size_t> pool(dataset_size);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < num_batches; ++b) {
    // Partial Fisher-Yates: the first m slots become a uniform sample.
    for (std::size_t i = 0; i < m; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, dataset_size - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    out.emplace_back(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(m));
  }
  return out;
}

ProbeResult probe_false_negatives(const ToyModel& model, const Dataset& dataset,
                                  std::size_t batch_size, std::size_t num_batches,
                                  std::uint64_t seed) {
  if (!dataset.has_oracle()) {
    throw Error(ErrorCode::kOracleUnavailable, "dataset has no concept labels");
  }
  if (num_batches == 0) throw Error(ErrorCode::kInvalidArgument, "num_batches must be >= 1");
  ProbeResult total;
  double component_size_sum = 0.0;
  for (auto& indices : probe_batches(dataset.size(), batch_size, num_batches, seed)) {
    const ProbedBatch pb = probe_batch(model, dataset, std::move(indices));
    total.negatives_vanilla += pb.counts.negatives_vanilla;
    total.false_negatives_vanilla += pb.counts.false_negatives_vanilla;
    total.negatives_graph += pb.counts.negatives_graph;
    total.false_negatives_graph += pb.counts.false_negatives_graph;
    component_size_sum += pb.counts.mean_component_size;
  }
  auto rate = [](std::size_t fn, std::size_t n) {
    return n == 0 ? 0.0 : static_cast<double>(fn) / static_cast<double>(n);
  };
  total.rate_vanilla = rate(total.false_negatives_vanilla, total.negatives_vanilla);
  total.rate_graph = rate(total.false_negatives_graph, total.negatives_graph);
  total.mean_component_size = component_size_sum / static_cast<double>(num_batches);
  return total;
}

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

std::string metrics_to_json(const EpochMetrics& m) {
  json per_type = json::array();
  for (double v : m.acc_per_question_type) per_type.push_back(number_or_null(v));
  json doc{{"epoch", m.epoch},
           {"step", m.step},
           {"lr", m.lr},
           {"loss_sup", number_or_null(m.loss_sup)},
           {"loss_cl", number_or_null(m.loss_cl)},
           {"acc_overall", m.acc_overall},
           {"acc_per_question_type", std::move(per_type)},
           {"acc_test_iid", m.acc_test_iid},
           {"acc_test_counter", m.acc_test_counter},
           {"false_negative_rate_vanilla", number_or_null(m.false_negative_rate_vanilla)},
           {"false_negative_rate_graph", number_or_null(m.false_negative_rate_graph)},
           {"mean_component_size", number_or_null(m.mean_component_size)}};
  return doc.dump();
}

ModelSpec model_spec_for(const DataSplits& data, const TrainConfig& config) {
  if (data.train.samples.empty()) throw Error(ErrorCode::kEmptyDataset, "training split is empty");
  const Sample& s = data.train.samples[0];
  std::size_t answers = 0;
  for (const Dataset* d : {&data.train, &data.test_iid, &data.test_counter}) {
    for (const auto& x : d->samples) answers = std::max(answers, x.answer_id + 1);
  }
  return ModelSpec{s.image_feat.size(), s.question_feat.size(), s.answer_feat.size(),
                   config.hidden,       config.embed,           std::max<std::size_t>(answers, 2)};
}

TrainResult train(ToyModel model, const DataSplits& data, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  const std::size_t n = data.train.size();
  if (n < 2) throw Error(ErrorCode::kEmptyDataset, "training split needs at least 2 samples");
  if (data.test_iid.samples.empty() || data.test_counter.samples.empty()) {
    throw Error(ErrorCode::kEmptyDataset, "test splits must be non-empty");
  }
  const std::size_t batch = std::min(config.batch_size, n);
  const std::size_t full = n / batch;
  const std::size_t steps_per_epoch = full + ((n % batch) >= 2 ? 1 : 0);
  const std::size_t total_steps = steps_per_epoch * config.epochs;

  Optimizer optimizer(config.optimizer, model.params());
  auto shuffle_rng = stream(config.seed, kShuffle);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result{model, {}, 0};
  std::size_t step = 0;
  double lr = 0.0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double sup_sum = 0.0;
    double cl_sum = 0.0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      const std::size_t begin = b * batch;
      const std::size_t end = std::min(n, begin + batch);
      const Batch mb = make_batch(
          data.train, std::span<const std::size_t>(order.data() + begin, end - begin));
      ++step;
      const StepResult sr = compute_step(model, mb, config);
      if (!std::isfinite(sr.loss_total)) {
        throw DivergenceError("non-finite loss at step " + std::to_string(step), model, step);
      }
      lr = learning_rate(step, total_steps, config.warmup_ratio, config.base_lr);
      optimizer.apply(model.mutable_params(), sr.grads, lr);
      sup_sum += sr.loss_sup;
      cl_sum += sr.loss_cl;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.step = step;
    em.lr = lr;
    em.loss_sup = sup_sum / static_cast<double>(steps_per_epoch);
    em.loss_cl = cl_sum / static_cast<double>(steps_per_epoch);
    em.acc_overall = evaluate(model, data.train).accuracy;
    em.acc_test_iid = evaluate(model, data.test_iid).accuracy;
    const EvalResult counter = evaluate(model, data.test_counter);
    em.acc_test_counter = counter.accuracy;
    em.acc_per_question_type = counter.per_question_type;
    if (data.train.has_oracle() && config.probe_batches > 0) {
      const ProbeResult pr =
          probe_false_negatives(model, data.train, batch, config.probe_batches, config.seed);
      em.false_negative_rate_vanilla = pr.rate_vanilla;
      em.false_negative_rate_graph = pr.rate_graph;
      em.mean_component_size = pr.mean_component_size;
    } else {
      em.false_negative_rate_vanilla = kNaN;
      em.false_negative_rate_graph = kNaN;
      em.mean_component_size = kNaN;
    }
    result.history.push_back(em);
    if (on_epoch) on_epoch(em, model);
  }
  result.model = std::move(model);
  result.steps = step;
  return result;
}

}  // namespace cmcl
