// Copyright 2026 The cmcl Authors.
// SPDX-License-Identifier: Apache-2.0

#include "experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "json_util.hpp"

#ifndef CMCL_VERSION_STRING
#define CMCL_VERSION_STRING "0.0.0"
#endif

namespace cmcl {

using jsonutil::json;
namespace fs = std::filesystem;

const char* version_string() noexcept { return CMCL_VERSION_STRING; }

namespace {

class PhaseTimer {
 public:
  void start(std::string name) {
    name_ = std::move(name);
    begin_ = std::chrono::steady_clock::now();
  }
  void stop() {
    const auto dt = std::chrono::steady_clock::now() - begin_;
    phases_[name_] = std::chrono::duration<double>(dt).count();
  }
  const json& phases() const { return phases_; }

 private:
  std::string name_;
  std::chrono::steady_clock::time_point begin_;
  json phases_ = json::object();
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

std::string fixed(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string dataset_hash(const fs::path& data_dir) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char* name : {"train.jsonl", "test_iid.jsonl", "test_counter.jsonl", "manifest.json"}) {
    const fs::path p = data_dir / name;
    if (!fs::exists(p)) continue;
    std::ifstream in(p, std::ios::binary);
    char buf[1 << 14];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
      for (std::streamsize i = 0; i < in.gcount(); ++i) {
        h ^= static_cast<unsigned char>(buf[i]);
        h *= 0x100000001b3ULL;
      }
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void run_gen_data(const SyntheticSpec& spec, const fs::path& out_dir) {
  write_dataset_dir(spec, generate(spec), out_dir);
}

// ---------------------------------------------------------------------------

namespace {

json run_manifest(const std::string& command, const json& config, std::uint64_t seed,
                  const fs::path& data_dir) {
  return json{{"tool", "cmcl"},
              {"version", version_string()},
              {"command", command},
              {"seed", seed},
              {"config", config},
              {"data_dir", data_dir.string()},
              {"dataset_hash", dataset_hash(data_dir)}};
}

std::string summary_csv(const std::vector<EpochMetrics>& history) {
  std::ostringstream os;
  os << "epoch,step,lr,loss_sup,loss_cl,acc_overall,acc_test_iid,acc_test_counter,"
        "false_negative_rate_vanilla,false_negative_rate_graph,mean_component_size\n";
  for (const auto& m : history) {
    os << m.epoch << ',' << m.step << ',' << fixed(m.lr) << ',' << fixed(m.loss_sup) << ','
       << fixed(m.loss_cl) << ',' << fixed(m.acc_overall) << ',' << fixed(m.acc_test_iid) << ','
       << fixed(m.acc_test_counter) << ',' << fixed(m.false_negative_rate_vanilla) << ','
       << fixed(m.false_negative_rate_graph) << ',' << fixed(m.mean_component_size) << '\n';
  }
  return os.str();
}

}  // namespace

TrainRunSummary run_train(const TrainConfig& config, const fs::path& data_dir,
                          const fs::path& out_dir) {
  config.validate();
  PhaseTimer timer;
  json timings = json::object();
  timer.start("load");
  const DataSplits data = load_dataset_dir(data_dir);
  timer.stop();
  ensure_dir(out_dir);

  const json config_json = json::parse(train_config_to_json(config));
  write_text(out_dir / "manifest.json",
             run_manifest("train", config_json, config.seed, data_dir).dump(2) + "\n");

  std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::binary);
  if (!metrics) throw Error(ErrorCode::kIoError, "cannot write metrics.jsonl");

  timer.start("train");
  ToyModel model = ToyModel::init(model_spec_for(data, config), config.seed);
  TrainResult result = [&] {
    try {
      return train(std::move(model), data, config, [&](const EpochMetrics& m, const ToyModel&) {
        metrics << metrics_to_json(m) << '\n';
        metrics.flush();
      });
    } catch (const DivergenceError& e) {
      save_checkpoint(out_dir / "checkpoint_last_good.json", e.last_good(), config.seed,
                      e.step() - 1);
      throw;
    }
  }();
  timer.stop();

  timer.start("write");
  save_checkpoint(out_dir / "checkpoint.json", result.model, config.seed, result.steps);
  write_text(out_dir / "summary.csv", summary_csv(result.history));
  timer.stop();
  write_text(out_dir / "timings.json", json{{"phases_seconds", timer.phases()}}.dump(2) + "\n");
  return TrainRunSummary{result.steps, result.history.back()};
}

// ---------------------------------------------------------------------------

double gradient_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), kGradCheckScaleFloor});
  return std::abs(analytic - numeric) / scale;
}

bool GradCheckReport::passed() const {
  return std::all_of(rows.begin(), rows.end(), [](const GradCheckRow& r) { return r.passed; });
}

std::string GradCheckReport::to_json() const {
  json objectives = json::array();
  for (const auto& r : rows) {
    objectives.push_back(json{{"objective", r.objective},
                              {"instances", r.instances},
                              {"coordinates", r.coordinates},
                              {"max_rel_error", r.max_rel_error},
                              {"max_abs_error", r.max_abs_error},
                              {"passed", r.passed}});
  }
  return json{{"seed", seed},
              {"trials", trials},
              {"step", kGradCheckStep},
              {"tolerance", kGradCheckTolerance},
              {"passed", passed()},
              {"objectives", std::move(objectives)}}
      .dump(2);
}

std::string GradCheckReport::to_table() const {
  std::ostringstream os;
  os << std::left << std::setw(28) << "objective" << std::setw(11) << "instances"
     << std::setw(13) << "coordinates" << std::setw(15) << "max_rel_err" << "status\n";
  for (const auto& r : rows) {
    char err[32];
    std::snprintf(err, sizeof err, "%.3e", r.max_rel_error);
    os << std::setw(28) << r.objective << std::setw(11) << r.instances << std::setw(13)
       << r.coordinates << std::setw(15) << err << (r.passed ? "PASS" : "FAIL") << '\n';
  }
  return os.str();
}

namespace {

// Fourth-order central differences over every coordinate of `values`;
// `loss` re-evaluates with the current contents.
template <typename LossFn>
void compare_coordinates(std::span<double> values, std::span<const double> analytic,
                         LossFn&& loss, GradCheckRow& row) {
  const double h = kGradCheckStep;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    auto at = [&](double offset) {
      values[i] = saved + offset;
      return loss();
    };
    const double numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
    values[i] = saved;
    row.max_rel_error = std::max(row.max_rel_error, gradient_error(analytic[i], numeric));
    row.max_abs_error = std::max(row.max_abs_error, std::abs(analytic[i] - numeric));
    ++row.coordinates;
  }
}

Matrix gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = g(rng);
  return m;
}

std::size_t draw(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

void check_supervised(std::mt19937_64& rng, GradCheckRow& row) {
  const std::size_t m = draw(rng, 2, 16);
  const std::size_t k = draw(rng, 2, 8);
  Matrix logits = gaussian(m, k, rng, 2.0);
  std::vector<std::size_t> labels(m);
  for (auto& l : labels) l = draw(rng, 0, k - 1);
  const LossReport r = supervised_ce(logits, labels);
  compare_coordinates(logits.values(), r.grad_logits.values(),
                      [&] { return supervised_ce(logits, labels).value; }, row);
}

void check_infonce(std::mt19937_64& rng, ContrastiveMode mode, GradCheckRow& row) {
  const std::size_t m = draw(rng, 2, 16);
  const std::size_t d = draw(rng, 2, 8);
  EmbeddingBatch batch{gaussian(m, d, rng), gaussian(m, d, rng)};
  AlignmentMap map = AlignmentMap::identity(d);
  map.weight.add_scaled(gaussian(d, d, rng, 0.3), 1.0);
  const double tau = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
  const NeighborGraph graph = build_knn_graph(batch.image);
  const ContrastiveConfig cfg{tau, 0.5, mode};
  auto value = [&] { return contrastive_loss(batch, map, cfg, &graph).value; };
  const LossReport r = contrastive_loss(batch, map, cfg, &graph);
  compare_coordinates(batch.image.values(), r.grad_image.values(), value, row);
  compare_coordinates(batch.text_qa.values(), r.grad_text.values(), value, row);
  compare_coordinates(map.weight.values(), r.grad_alignment.values(), value, row);
}

void check_full_model(std::mt19937_64& rng, ClMode mode, GradCheckRow& row) {
  ModelSpec spec;
  spec.image_dim = draw(rng, 2, 6);
  spec.question_dim = draw(rng, 2, 4);
  spec.answer_dim = draw(rng, 2, 4);
  spec.hidden = draw(rng, 2, 6);
  spec.embed = draw(rng, 2, 8);
  spec.num_answers = draw(rng, 2, 6);
  const std::size_t m = draw(rng, 2, 16);

  ToyModel model = ToyModel::init(spec, rng());
  for_each_tensor(model.mutable_params(), [&](std::string_view, Matrix& t) {
    t.add_scaled(gaussian(t.rows(), t.cols(), rng, 0.1), 1.0);
  });
  Batch batch{gaussian(m, spec.image_dim, rng), gaussian(m, spec.question_dim, rng),
              gaussian(m, spec.answer_dim, rng), std::vector<std::size_t>(m)};
  for (auto& l : batch.labels) l = draw(rng, 0, spec.num_answers - 1);

  TrainConfig cfg;
  cfg.cl_mode = mode;
  cfg.lambda = 0.5;
  cfg.tau = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
  const NeighborGraph graph = batch_graph(model, batch);
  const StepResult analytic = compute_step(model, batch, cfg, &graph);

  std::vector<Matrix*> params;
  for_each_tensor(model.mutable_params(), [&](std::string_view, Matrix& t) { params.push_back(&t); });
  std::vector<const Matrix*> grads;
  for_each_tensor(analytic.grads, [&](std::string_view, const Matrix& t) { grads.push_back(&t); });
  auto value = [&] { return compute_step(model, batch, cfg, &graph).loss_total; };
  for (std::size_t i = 0; i < params.size(); ++i) {
    compare_coordinates(params[i]->values(), grads[i]->values(), value, row);
  }
}

}  // namespace

GradCheckReport run_grad_check(std::uint64_t seed, std::size_t trials) {
  if (trials == 0) throw Error(ErrorCode::kInvalidArgument, "trials must be >= 1");
  GradCheckReport report;
  report.seed = seed;
  report.trials = trials;

  struct Objective {
    const char* name;
    std::function<void(std::mt19937_64&, GradCheckRow&)> run;
  };
  const std::vector<Objective> objectives = {
      {"supervised_ce", check_supervised},
      {"infonce_vanilla", [](auto& r, auto& row) { check_infonce(r, ContrastiveMode::kVanilla, row); }},
      {"infonce_graph", [](auto& r, auto& row) { check_infonce(r, ContrastiveMode::kGraphNegatives, row); }},
      {"infonce_multipos", [](auto& r, auto& row) { check_infonce(r, ContrastiveMode::kMultiPositive, row); }},
      {"joint[off]", [](auto& r, auto& row) { check_full_model(r, ClMode::kOff, row); }},
      {"joint[vanilla]", [](auto& r, auto& row) { check_full_model(r, ClMode::kVanilla, row); }},
      {"joint[graph_negatives]", [](auto& r, auto& row) { check_full_model(r, ClMode::kGraphNegatives, row); }},
      {"joint[multi_positive]", [](auto& r, auto& row) { check_full_model(r, ClMode::kMultiPositive, row); }},
      {"coarse_triplet", [](auto& r, auto& row) { check_full_model(r, ClMode::kCoarseTriplet, row); }},
  };
  std::uint32_t index = 0;
  for (const auto& obj : objectives) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), ++index};
    std::mt19937_64 rng(seq);
    GradCheckRow row;
    row.objective = obj.name;
    for (std::size_t t = 0; t < trials; ++t) {
      obj.run(rng, row);
      ++row.instances;
    }
    row.passed = row.max_rel_error <= kGradCheckTolerance;
    report.rows.push_back(row);
  }
  return report;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

std::vector<ClMode> parse_mode_list(const std::string& csv) {
  std::vector<ClMode> out;
  for (const auto& s : split_csv(csv)) out.push_back(parse_cl_mode(s));
  if (out.empty()) throw Error(ErrorCode::kInvalidConfig, "empty mode list");
  return out;
}

std::vector<double> parse_lambda_list(const std::string& csv) {
  std::vector<double> out;
  for (const auto& s : split_csv(csv)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || !(v >= 0.0) || !std::isfinite(v)) {
      throw Error(ErrorCode::kInvalidConfig, "bad lambda value '" + s + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw Error(ErrorCode::kInvalidConfig, "empty lambda list");
  return out;
}

std::vector<AblationCell> run_ablation(const AblationRequest& request, const DataSplits& data) {
  request.base.validate();
  if (request.seeds_per_cell == 0) throw Error(ErrorCode::kInvalidConfig, "seeds_per_cell must be >= 1");

  std::vector<AblationCell> cells;
  for (ClMode mode : request.modes) {
    AblationCell c;
    c.group = "mode";
    c.mode = mode;
    c.lambda = request.base.lambda;
    cells.push_back(c);
  }
  const ClMode sweep_mode =
      request.base.cl_mode == ClMode::kOff ? ClMode::kMultiPositive : request.base.cl_mode;
  for (double lambda : request.lambdas) {
    AblationCell c;
    c.group = "lambda";
    c.mode = sweep_mode;
    c.lambda = lambda;
    cells.push_back(c);
  }

  const std::size_t seeds = request.seeds_per_cell;
  std::vector<EpochMetrics> results(cells.size() * seeds);
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t task = next++; task < results.size(); task = next++) {
      try {
        const AblationCell& cell = cells[task / seeds];
        TrainConfig cfg = request.base;
        cfg.cl_mode = cell.mode;
        cfg.lambda = cell.lambda;
        cfg.seed = request.base.seed + task % seeds;
        ToyModel model = ToyModel::init(model_spec_for(data, cfg), cfg.seed);
        results[task] = train(std::move(model), data, cfg).history.back();
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(request.threads, 1, results.size());
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    AblationCell& c = cells[ci];
    c.seeds = seeds;
    const double n = static_cast<double>(seeds);
    for (std::size_t s = 0; s < seeds; ++s) {
      const EpochMetrics& m = results[ci * seeds + s];
      c.acc_train += m.acc_overall / n;
      c.acc_test_iid += m.acc_test_iid / n;
      c.acc_test_counter += m.acc_test_counter / n;
      c.fn_rate_vanilla += m.false_negative_rate_vanilla / n;
      c.fn_rate_graph += m.false_negative_rate_graph / n;
      c.mean_component_size += m.mean_component_size / n;
      c.loss_sup += m.loss_sup / n;
      c.loss_cl += m.loss_cl / n;
      c.per_seed_counter.push_back(m.acc_test_counter);
    }
    double var = 0.0;
    for (double v : c.per_seed_counter) var += (v - c.acc_test_counter) * (v - c.acc_test_counter);
    c.acc_test_counter_std = seeds > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  }
  return cells;
}

std::string ablation_to_csv(const std::vector<AblationCell>& cells) {
  std::ostringstream os;
  os << "group,cl_mode,lambda,seeds,acc_train,acc_test_iid,acc_test_counter,"
        "acc_test_counter_std,fn_rate_vanilla,fn_rate_graph,mean_component_size,loss_sup,"
        "loss_cl\n";
  for (const auto& c : cells) {
    os << c.group << ',' << to_string(c.mode) << ',' << fixed(c.lambda) << ',' << c.seeds << ','
       << fixed(c.acc_train) << ',' << fixed(c.acc_test_iid) << ',' << fixed(c.acc_test_counter)
       << ',' << fixed(c.acc_test_counter_std) << ',' << fixed(c.fn_rate_vanilla) << ','
       << fixed(c.fn_rate_graph) << ',' << fixed(c.mean_component_size) << ','
       << fixed(c.loss_sup) << ',' << fixed(c.loss_cl) << '\n';
  }
  return os.str();
}

std::string run_ablate(const AblationRequest& request, const fs::path& data_dir,
                       const fs::path& out_dir) {
  PhaseTimer timer;
  timer.start("load");
  const DataSplits data = load_dataset_dir(data_dir);
  timer.stop();
  ensure_dir(out_dir);

  json modes = json::array();
  for (ClMode m : request.modes) modes.push_back(std::string(to_string(m)));
  json manifest = run_manifest("ablate", json::parse(train_config_to_json(request.base)),
                               request.base.seed, data_dir);
  manifest["modes"] = std::move(modes);
  manifest["sweep_lambda"] = request.lambdas;
  manifest["seeds_per_cell"] = request.seeds_per_cell;
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");

  timer.start("ablate");
  const auto cells = run_ablation(request, data);
  timer.stop();
  const std::string csv = ablation_to_csv(cells);
  write_text(out_dir / "ablation.csv", csv);

  std::ostringstream runs;
  runs << "group,cl_mode,lambda,seed,acc_test_counter\n";
  for (const auto& c : cells) {
    for (std::size_t s = 0; s < c.per_seed_counter.size(); ++s) {
      runs << c.group << ',' << to_string(c.mode) << ',' << fixed(c.lambda) << ','
           << request.base.seed + s << ',' << fixed(c.per_seed_counter[s]) << '\n';
    }
  }
  write_text(out_dir / "runs.csv", runs.str());
  write_text(out_dir / "timings.json", json{{"phases_seconds", timer.phases()}}.dump(2) + "\n");
  return csv;
}

// ---------------------------------------------------------------------------

std::string run_probe_graph(const ProbeRequest& request) {
  const Checkpoint ckpt = load_checkpoint(request.checkpoint);
  const DataSplits data = load_dataset_dir(request.data_dir);
  const Dataset& ds = request.split == Split::kTrain     ? data.train
                      : request.split == Split::kTestIid ? data.test_iid
                                                         : data.test_counter;
  if (request.num_batches == 0) throw Error(ErrorCode::kInvalidArgument, "num_batches must be >= 1");
  const bool oracle = ds.has_oracle();

  json batches = json::array();
  ProbeResult pooled;
  double component_sum = 0.0;
  for (auto& indices : probe_batches(ds.size(), request.batch_size, request.num_batches, request.seed)) {
    json entry;
    entry["indices"] = indices;
    if (oracle) {
      std::vector<std::size_t> concepts;
      for (std::size_t i : indices) concepts.push_back(*ds.samples[i].concept_id);
      const ProbedBatch pb = probe_batch(ckpt.model, ds, std::move(indices));
      entry["concepts"] = std::move(concepts);
      entry["graph"] = json::parse(graph_to_json(pb.graph));
      entry["rate_vanilla"] = pb.counts.rate_vanilla;
      entry["rate_graph"] = pb.counts.rate_graph;
      pooled.negatives_vanilla += pb.counts.negatives_vanilla;
      pooled.false_negatives_vanilla += pb.counts.false_negatives_vanilla;
      pooled.negatives_graph += pb.counts.negatives_graph;
      pooled.false_negatives_graph += pb.counts.false_negatives_graph;
      component_sum += pb.counts.mean_component_size;
    } else {
      const Batch b = make_batch(ds, indices);
      const NeighborGraph g = build_knn_graph(ckpt.model.encode_images(b.images));
      entry["graph"] = json::parse(graph_to_json(g));
      component_sum += static_cast<double>(g.num_nodes()) / static_cast<double>(g.num_components());
    }
    batches.push_back(std::move(entry));
  }
  auto rate = [](std::size_t fn, std::size_t n) {
    return n == 0 ? 0.0 : static_cast<double>(fn) / static_cast<double>(n);
  };
  json report{{"checkpoint", request.checkpoint.filename().string()},
              {"checkpoint_step", ckpt.step},
              {"split", std::string(to_string(request.split))},
              {"batch_size", request.batch_size},
              {"num_batches", request.num_batches},
              {"seed", request.seed},
              {"oracle_available", oracle},
              {"mean_component_size", component_sum / static_cast<double>(request.num_batches)}};
  if (oracle) {
    report["rate_vanilla"] = rate(pooled.false_negatives_vanilla, pooled.negatives_vanilla);
    report["rate_graph"] = rate(pooled.false_negatives_graph, pooled.negatives_graph);
  } else {
    report["rate_vanilla"] = nullptr;
    report["rate_graph"] = nullptr;
  }
  report["batches"] = std::move(batches);
  return report.dump() + "\n";
}

}  // namespace cmcl
