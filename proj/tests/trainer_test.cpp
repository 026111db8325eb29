// Copyright 2026 The cmcl Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "trainer.hpp"

using namespace cmcl;
using cmcl::testing::random_matrix;

namespace {

DataSplits small_data(std::uint64_t seed = 0, double sigma = 0.15, double rho = 0.85) {
  SyntheticSpec s;
  s.n_train = 512;
  s.n_test_iid = 256;
  s.n_test_counter = 256;
  s.noise_sigma = sigma;
  s.bias_strength = rho;
  s.seed = seed;
  SyntheticData d = generate(s);
  return {std::move(d.train), std::move(d.test_iid), std::move(d.test_counter)};
}

TrainConfig quick_config(ClMode mode) {
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 64;
  c.cl_mode = mode;
  c.probe_batches = 2;
  return c;
}

std::vector<Matrix> tensors(const ToyModel& m) {
  std::vector<Matrix> out;
  for_each_tensor(m.params(), [&](std::string_view, const Matrix& t) { out.push_back(t); });
  return out;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kInternal;
}

}  // namespace

TEST_CASE("warmup schedule") {
  const std::size_t total = 320;
  for (std::size_t step = 1; step <= total; ++step) {
    const double expected = 1e-3 * std::min(1.0, static_cast<double>(step) / (0.1 * total));
    CHECK(learning_rate(step, total, 0.1, 1e-3) == expected);
  }
  CHECK(learning_rate(1, 100, 0.0, 0.5) == 0.5);
  CHECK(learning_rate(100, 100, 1.0, 0.5) == 0.5);
  CHECK(learning_rate(50, 100, 1.0, 0.5) == 0.25);
}

TEST_CASE("config parsing is strict") {
  const TrainConfig c = parse_train_config(
      R"({"epochs": 2, "cl_mode": "graph_negatives", "optimizer": {"kind": "sgd"}, "lambda": 0.7})");
  CHECK(c.epochs == 2);
  CHECK(c.cl_mode == ClMode::kGraphNegatives);
  CHECK(c.optimizer.kind == OptimizerConfig::Kind::kSgd);
  CHECK(c.lambda == 0.7);
  CHECK(c.tau == 1.0);
  const TrainConfig round = parse_train_config(train_config_to_json(c));
  CHECK(train_config_to_json(round) == train_config_to_json(c));

  for (const char* bad : {R"({"epoch": 2})", R"({"epochs": 0})", R"({"warmup_ratio": 1.5})",
                          R"({"tau": 0})", R"({"lambda": -1})", R"({"cl_mode": "mp"})",
                          R"({"optimizer": {"kind": "adam", "beta3": 1}})", R"({"batch_size": 1})",
                          R"({"epochs": "ten"})", "[]"}) {
    CAPTURE(bad);
    CHECK(code_of([&] { parse_train_config(bad); }) == ErrorCode::kInvalidConfig);
  }
}

TEST_CASE("coarse triplet loss") {
  std::mt19937_64 rng(3);
  ModelSpec spec;
  spec.embed = 4;
  spec.hidden = 5;
  ToyModel model = ToyModel::init(spec, 1);
  for (std::size_t m : {2u, 3u, 7u}) {
    // Identical images make every candidate equal to the anchor.
    const Matrix images(m, spec.embed, 0.4);
    const CoarseTripletResult r = coarse_triplet_cl(images, random_matrix(m, spec.embed, rng), model, 1.0);
    CHECK(std::abs(r.value - std::log(static_cast<double>(m))) < 1e-12);
  }
  const Matrix vi = random_matrix(5, spec.embed, rng), vq = random_matrix(5, spec.embed, rng);
  const CoarseTripletResult r = coarse_triplet_cl(vi, vq, model, 0.7);
  CHECK(r.value > 0.0);
  CHECK(r.value < std::log(5.0) + 2.0 / 0.7);
}

TEST_CASE("cl_mode off reproduces pure supervised training") {
  const DataSplits d = small_data();
  TrainConfig a = quick_config(ClMode::kOff);
  TrainConfig b = a;
  b.lambda = 0.0;
  b.cl_mode = ClMode::kMultiPositive;
  const TrainResult ra = train(ToyModel::init(model_spec_for(d, a), 0), d, a);
  const TrainResult rb = train(ToyModel::init(model_spec_for(d, b), 0), d, b);
  CHECK(tensors(ra.model) == tensors(rb.model));
  for (const auto& m : ra.history) CHECK(m.loss_cl == 0.0);
  for (std::size_t e = 0; e < ra.history.size(); ++e) {
    CHECK(ra.history[e].loss_sup == rb.history[e].loss_sup);
    CHECK(ra.history[e].acc_test_counter == rb.history[e].acc_test_counter);
  }
}

TEST_CASE("zero learning rate leaves parameters and evaluation metrics unchanged") {
  const DataSplits d = small_data(1);
  TrainConfig c = quick_config(ClMode::kMultiPositive);
  c.base_lr = 0.0;
  const ToyModel init = ToyModel::init(model_spec_for(d, c), 4);
  const TrainResult r = train(init, d, c);
  CHECK(tensors(r.model) == tensors(init));
  for (const auto& m : r.history) {
    CHECK(m.acc_overall == r.history[0].acc_overall);
    CHECK(m.acc_test_iid == r.history[0].acc_test_iid);
    CHECK(m.acc_test_counter == r.history[0].acc_test_counter);
    CHECK(m.false_negative_rate_vanilla == r.history[0].false_negative_rate_vanilla);
    CHECK(m.false_negative_rate_graph == r.history[0].false_negative_rate_graph);
    CHECK(m.mean_component_size == r.history[0].mean_component_size);
  }
}

TEST_CASE("training is reproducible for every mode") {
  const DataSplits d = small_data(2);
  for (ClMode mode : {ClMode::kOff, ClMode::kCoarseTriplet, ClMode::kVanilla, ClMode::kGraphNegatives,
                      ClMode::kMultiPositive}) {
    TrainConfig c = quick_config(mode);
    c.epochs = 1;
    c.batch_size = mode == ClMode::kCoarseTriplet ? 32 : 64;
    const TrainResult a = train(ToyModel::init(model_spec_for(d, c), 7), d, c);
    const TrainResult b = train(ToyModel::init(model_spec_for(d, c), 7), d, c);
    CHECK(tensors(a.model) == tensors(b.model));
    CHECK(metrics_to_json(a.history.back()) == metrics_to_json(b.history.back()));
    const auto& m = a.history.back();
    for (double v : {m.acc_overall, m.acc_test_iid, m.acc_test_counter, m.false_negative_rate_vanilla,
                     m.false_negative_rate_graph}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("partial last batch is dropped only when it has a single sample") {
  DataSplits d = small_data(3);
  TrainConfig c = quick_config(ClMode::kVanilla);
  c.epochs = 1;
  d.train.samples.resize(2 * 64 + 1);
  CHECK(train(ToyModel::init(model_spec_for(d, c), 0), d, c).steps == 2);
  d = small_data(3);
  d.train.samples.resize(2 * 64 + 2);
  CHECK(train(ToyModel::init(model_spec_for(d, c), 0), d, c).steps == 3);
}

TEST_CASE("divergence is detected and the last good model is kept") {
  const DataSplits d = small_data(4);
  TrainConfig c = quick_config(ClMode::kOff);
  c.base_lr = 1e300;
  c.warmup_ratio = 0.0;
  c.optimizer.kind = OptimizerConfig::Kind::kSgd;
  try {
    train(ToyModel::init(model_spec_for(d, c), 0), d, c);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.code() == ErrorCode::kDivergenceDetected);
    CHECK(e.step() >= 2);
    for (const Matrix& t : tensors(e.last_good())) CHECK(all_finite(t.values()));
  }
}

TEST_CASE("evaluation") {
  const DataSplits d = small_data(5);
  ModelSpec spec = model_spec_for(d, TrainConfig{});

  SUBCASE("constant prediction scores the class frequency") {
    ToyModel m = ToyModel::init(spec, 0);
    for_each_tensor(m.mutable_params(), [](std::string_view, Matrix& t) { t.fill(0.0); });
    m.mutable_params().head.bias(0, 3) = 1.0;
    std::size_t hits = 0;
    for (const auto& s : d.test_iid.samples) hits += s.answer_id == 3;
    CHECK(evaluate(m, d.test_iid).accuracy == static_cast<double>(hits) / d.test_iid.size());
  }
  SUBCASE("random models score about 1/K on unbiased data") {
    const DataSplits u = small_data(6, 0.15, 0.0);
    double mean = 0.0;
    const int models = 20;
    for (int s = 0; s < models; ++s) mean += evaluate(ToyModel::init(spec, 1000 + s), u.train).accuracy / models;
    // 20 models x 512 samples; allow four binomial standard deviations of a
    // single 512-sample estimate.
    CHECK(std::abs(mean - 1.0 / 8.0) < 4.0 * std::sqrt(0.125 * 0.875 / 512.0));
  }
  CHECK(code_of([&] { evaluate(ToyModel::init(spec, 0), Dataset{}); }) == ErrorCode::kEmptyDataset);
}

TEST_CASE("engineered oracle model is perfect on noiseless data") {
  SyntheticSpec s;
  s.num_concepts = 4;
  s.num_question_types = 2;
  s.num_answers = 4;
  s.noise_sigma = 0.0;
  s.image_dim = 8;
  s.question_dim = 4;
  s.answer_dim = 4;
  s.n_train = 200;
  s.n_test_iid = 200;
  s.n_test_counter = 200;
  const SyntheticData d = generate(s);

  ModelSpec spec;
  spec.image_dim = 8;
  spec.question_dim = 4;
  spec.answer_dim = 4;
  spec.hidden = 8;  // one fusion unit per (concept, question type)
  spec.embed = 8;
  spec.num_answers = 4;
  ToyModel m = ToyModel::init(spec, 0);
  for_each_tensor(m.mutable_params(), [](std::string_view, Matrix& t) { t.fill(0.0); });
  auto& p = m.mutable_params();
  // V_I[c] ~ +1 iff the image is prototype c.
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t k = 0; k < 8; ++k) p.vision.first.weight(c, k) = 20.0 * d.prototypes[c][k];
    p.vision.first.bias(0, c) = -15.0;
    p.vision.second.weight(c, c) = 1.0;
  }
  // V_X[4 + t] ~ +1 iff the question code is that of type t.
  for (std::size_t t = 0; t < 2; ++t) {
    const Sample* ex = nullptr;
    for (const auto& x : d.train.samples) {
      if (x.question_type == t) {
        ex = &x;
        break;
      }
    }
    REQUIRE(ex != nullptr);
    const double n2 = dot(ex->question_feat, ex->question_feat);
    for (std::size_t k = 0; k < 4; ++k) p.text.first.weight(4 + t, k) = 20.0 * ex->question_feat[k] / n2;
    p.text.first.bias(0, 4 + t) = -15.0;
    p.text.second.weight(4 + t, 4 + t) = 1.0;
  }
  // Fusion unit (c, t) fires when both detectors fire; the head sums units
  // per answer.
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t t = 0; t < 2; ++t) {
      const std::size_t u = c * 2 + t;
      p.fusion.first.weight(u, c) = 10.0;
      p.fusion.first.weight(u, 8 + 4 + t) = 10.0;
      p.fusion.first.bias(0, u) = -10.0;
      p.fusion.second.weight(u, u) = 1.0;
      p.head.weight(d.table.at(c, t), u) = 1.0;
    }
  }
  CHECK(evaluate(m, d.train).accuracy == 1.0);
  CHECK(evaluate(m, d.test_counter).accuracy == 1.0);
}

TEST_CASE("false-negative probe") {
  SUBCASE("noiseless data: graph negatives are clean") {
    const DataSplits d = small_data(7, 0.0);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const ToyModel m = ToyModel::init(model_spec_for(d, TrainConfig{}), seed);
      const ProbeResult r = probe_false_negatives(m, d.train, 64, 10, seed);
      CHECK(r.rate_graph == 0.0);
      CHECK(r.rate_vanilla > 0.0);
      CHECK(r.false_negatives_graph == 0);
    }
  }
  SUBCASE("single concept: every vanilla negative is false") {
    SyntheticSpec s;
    s.num_concepts = 1;
    s.n_train = 300;
    s.n_test_counter = 0;
    s.n_test_iid = 10;
    const SyntheticData d = generate(s);
    ModelSpec spec;
    const ProbeResult r = probe_false_negatives(ToyModel::init(spec, 0), d.train, 32, 5, 0);
    CHECK(r.rate_vanilla == 1.0);
  }
  SUBCASE("counts follow the oracle") {
    const DataSplits d = small_data(8);
    const ToyModel m = ToyModel::init(model_spec_for(d, TrainConfig{}), 0);
    const auto batches = probe_batches(d.train.size(), 32, 3, 5);
    for (const auto& idx : batches) {
      const ProbedBatch pb = probe_batch(m, d.train, idx);
      std::size_t fn_v = 0, fn_g = 0, neg_g = 0;
      for (std::size_t a = 0; a < idx.size(); ++a) {
        for (std::size_t j = 0; j < idx.size(); ++j) {
          if (j == a) continue;
          const bool fn = oracle_false_negative(d.train, d.train.samples[idx[a]], d.train.samples[idx[j]]);
          fn_v += fn;
          if (pb.graph.component_of()[j] != pb.graph.component_of()[a]) {
            ++neg_g;
            fn_g += fn;
          }
        }
      }
      CHECK(pb.counts.negatives_vanilla == idx.size() * (idx.size() - 1));
      CHECK(pb.counts.false_negatives_vanilla == fn_v);
      CHECK(pb.counts.negatives_graph == neg_g);
      CHECK(pb.counts.false_negatives_graph == fn_g);
    }
  }
  SUBCASE("oracle required") {
    DataSplits d = small_data(9);
    d.train.answers.reset();
    const ToyModel m = ToyModel::init(model_spec_for(d, TrainConfig{}), 0);
    CHECK(code_of([&] { probe_false_negatives(m, d.train, 32, 2, 0); }) == ErrorCode::kOracleUnavailable);
  }
}
