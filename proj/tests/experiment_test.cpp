// Copyright 2026 The cmcl Authors.
// SPDX-License-Identifier: Apache-2.0

#include <map>
#include <set>

#include "doctest.h"
#include "experiment.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace cmcl;
using cmcl::testing::read_file;
using cmcl::testing::scratch_dir;

namespace {

SyntheticSpec tiny_spec(double sigma = 0.15) {
  SyntheticSpec s;
  s.n_train = 256;
  s.n_test_iid = 128;
  s.n_test_counter = 128;
  s.noise_sigma = sigma;
  return s;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 32;
  c.probe_batches = 2;
  return c;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string line; std::getline(ss, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("gradient check report") {
  const GradCheckReport a = run_grad_check(3, 4);
  CHECK(a.passed());
  CHECK(a.rows.size() == 9);
  for (const auto& r : a.rows) {
    CHECK(r.instances == 4);
    CHECK(r.coordinates > 0);
    CHECK(r.max_rel_error <= kGradCheckTolerance);
  }
  CHECK(run_grad_check(3, 4).to_json() == a.to_json());
  CHECK(a.to_table().find("coarse_triplet") != std::string::npos);
  CHECK_THROWS_AS(run_grad_check(0, 0), Error);

  CHECK(gradient_error(1.0, 1.0) == 0.0);
  CHECK(gradient_error(2.0, 1.0) == 0.5);
  CHECK(gradient_error(1e-9, 0.0) == doctest::Approx(1e-7));
}

TEST_CASE("train run writes reproducible outputs") {
  const auto data = scratch_dir("exp_data");
  run_gen_data(tiny_spec(), data);
  const auto out1 = scratch_dir("exp_run1");
  const auto out2 = scratch_dir("exp_run2");
  const TrainRunSummary s1 = run_train(tiny_config(), data, out1);
  run_train(tiny_config(), data, out2);
  CHECK(s1.steps == 16);
  for (const char* f : {"metrics.jsonl", "summary.csv", "checkpoint.json", "manifest.json"}) {
    CAPTURE(f);
    CHECK(read_file(out1 / f) == read_file(out2 / f));
  }
  CHECK(std::filesystem::exists(out1 / "timings.json"));
  const auto metrics = lines_of(read_file(out1 / "metrics.jsonl"));
  REQUIRE(metrics.size() == 2);
  const auto last = nlohmann::json::parse(metrics[1]);
  for (const char* key : {"loss_sup", "loss_cl", "acc_overall", "acc_per_question_type", "acc_test_iid",
                          "acc_test_counter", "false_negative_rate_vanilla", "false_negative_rate_graph",
                          "mean_component_size"}) {
    CHECK(last.contains(key));
  }
  const auto manifest = nlohmann::json::parse(read_file(out1 / "manifest.json"));
  CHECK(manifest["dataset_hash"] == dataset_hash(data));
  CHECK(manifest["seed"] == 0);
  CHECK(manifest["config"]["cl_mode"] == "multi_positive");
  CHECK(lines_of(read_file(out1 / "summary.csv")).size() == 3);

  const Checkpoint ck = load_checkpoint(out1 / "checkpoint.json");
  CHECK(ck.step == 16);
}

TEST_CASE("ablation table") {
  const auto data = scratch_dir("abl_data");
  run_gen_data(tiny_spec(), data);
  AblationRequest req;
  req.base = tiny_config();
  req.base.epochs = 1;
  req.modes = parse_mode_list("off,vanilla,graph_negatives,multi_positive");
  req.lambdas = parse_lambda_list("0, 0.5");
  req.seeds_per_cell = 2;
  req.threads = 2;
  const DataSplits d = load_dataset_dir(data);
  const auto cells = run_ablation(req, d);
  REQUIRE(cells.size() == 6);
  CHECK(cells[0].mode == ClMode::kOff);
  CHECK(cells[4].group == "lambda");
  CHECK(cells[4].mode == ClMode::kMultiPositive);
  // lambda = 0 trains exactly like the supervised-only arm.
  CHECK(cells[4].acc_test_counter == cells[0].acc_test_counter);
  CHECK(cells[4].per_seed_counter == cells[0].per_seed_counter);
  CHECK(cells[5].acc_test_counter == cells[3].acc_test_counter);

  req.threads = 1;
  const auto serial = run_ablation(req, d);
  CHECK(ablation_to_csv(serial) == ablation_to_csv(cells));
  const auto rows = lines_of(ablation_to_csv(cells));
  CHECK(rows.size() == 7);
  CHECK(rows[0].rfind("group,cl_mode,lambda", 0) == 0);

  CHECK_THROWS_AS(parse_mode_list("off,nope"), Error);
  CHECK_THROWS_AS(parse_lambda_list("0,abc"), Error);
  CHECK_THROWS_AS(parse_lambda_list("-1"), Error);
  CHECK_THROWS_AS(parse_lambda_list(""), Error);
}

TEST_CASE("probe-graph report") {
  const auto data = scratch_dir("probe_data");
  run_gen_data(tiny_spec(0.0), data);
  const auto ckdir = scratch_dir("probe_ck");
  const DataSplits d = load_dataset_dir(data);
  save_checkpoint(ckdir / "untrained.json", ToyModel::init(model_spec_for(d, TrainConfig{}), 0), 0, 0);

  ProbeRequest req;
  req.checkpoint = ckdir / "untrained.json";
  req.data_dir = data;
  req.batch_size = 48;
  req.num_batches = 3;
  const std::string text = run_probe_graph(req);
  CHECK(run_probe_graph(req) == text);
  const auto j = nlohmann::json::parse(text);
  CHECK(j["oracle_available"] == true);
  CHECK(j["rate_graph"] == 0.0);
  CHECK(j["rate_vanilla"].get<double>() > 0.0);
  REQUIRE(j["batches"].size() == 3);
  for (const auto& b : j["batches"]) {
    CHECK(b["graph"]["num_nodes"] == 48);
    const auto concepts = b["concepts"].get<std::vector<std::size_t>>();
    std::map<std::size_t, std::size_t> count;
    for (auto c : concepts) ++count[c];
    // Noiseless images: a concept seen at least twice occupies exactly one
    // component, shared with no other such concept.
    std::map<std::size_t, std::set<std::size_t>> comps_of_concept;
    std::map<std::size_t, std::set<std::size_t>> concepts_of_comp;
    std::size_t label = 0;
    for (const auto& comp : b["graph"]["components"]) {
      for (std::size_t node : comp.get<std::vector<std::size_t>>()) {
        const std::size_t c = concepts[node];
        if (count[c] < 2) continue;
        comps_of_concept[c].insert(label);
        concepts_of_comp[label].insert(c);
      }
      ++label;
    }
    for (const auto& [c, comps] : comps_of_concept) CHECK(comps.size() == 1);
    for (const auto& [comp, cs] : concepts_of_comp) CHECK(cs.size() == 1);
  }
}
