// Copyright 2026 The cmcl Authors.
// SPDX-License-Identifier: Apache-2.0

#include "cmcl/cmcl.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <new>
#include <optional>
#include <string>
#include <thread>

#include "experiment.hpp"
#include "json.hpp"

struct cmcl_graph {
  cmcl::NeighborGraph graph;
};

struct cmcl_dataset {
  cmcl::DataSplits data;
};

struct cmcl_model {
  cmcl::ToyModel model;
};

namespace {

thread_local std::string g_last_error;

template <typename Fn>
int guarded(Fn&& fn) noexcept {
  try {
    fn();
    g_last_error.clear();
    return CMCL_OK;
  } catch (const cmcl::Error& e) {
    g_last_error = e.what();
    return static_cast<int>(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return CMCL_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return CMCL_INTERNAL;
  } catch (...) {
    g_last_error = "unknown exception";
    return CMCL_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw cmcl::Error(cmcl::ErrorCode::kInvalidArgument, what);
}

char* duplicate(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

cmcl::Matrix copy_matrix(const double* data, std::size_t rows, std::size_t cols) {
  return cmcl::Matrix(rows, cols, cmcl::Vector(data, data + rows * cols));
}

void copy_out(const cmcl::Matrix& m, double* dst) {
  if (dst != nullptr) std::copy(m.values().begin(), m.values().end(), dst);
}

cmcl::Split to_split(int split) {
  switch (split) {
    case 0: return cmcl::Split::kTrain;
    case 1: return cmcl::Split::kTestIid;
    case 2: return cmcl::Split::kTestCounter;
    default: throw cmcl::Error(cmcl::ErrorCode::kInvalidArgument, "split must be 0, 1 or 2");
  }
}

const cmcl::Dataset& pick(const cmcl::DataSplits& d, int split) {
  switch (to_split(split)) {
    case cmcl::Split::kTrain: return d.train;
    case cmcl::Split::kTestIid: return d.test_iid;
    default: return d.test_counter;
  }
}

cmcl::TrainConfig config_or_default(const char* json_text) {
  return json_text == nullptr ? cmcl::TrainConfig{} : cmcl::parse_train_config(json_text);
}

}  // namespace

extern "C" {

const char* cmcl_version(void) { return cmcl::version_string(); }

const char* cmcl_status_name(int status) {
  if (status == CMCL_OK) return "Ok";
  if (status < 1 || status > CMCL_INTERNAL) return "Unknown";
  return cmcl::error_code_name(static_cast<cmcl::ErrorCode>(status));
}

const char* cmcl_last_error(void) { return g_last_error.c_str(); }

void cmcl_string_free(char* str) { std::free(str); }

int cmcl_cosine_similarity(const double* a, const double* b, size_t dim, double* out) {
  return guarded([&] {
    require(a && b && out, "null argument");
    *out = cmcl::cosine_similarity({a, dim}, {b, dim});
  });
}

int cmcl_log_sum_exp(const double* values, size_t count, double* out) {
  return guarded([&] {
    require(out && (values || count == 0), "null argument");
    *out = cmcl::log_sum_exp({values, count});
  });
}

int cmcl_graph_build(const double* embeddings, size_t rows, size_t dim, cmcl_graph** out) {
  return guarded([&] {
    require(embeddings && out, "null argument");
    *out = new cmcl_graph{cmcl::build_knn_graph(copy_matrix(embeddings, rows, dim))};
  });
}

void cmcl_graph_free(cmcl_graph* graph) { delete graph; }

int cmcl_graph_num_components(const cmcl_graph* graph, size_t* out) {
  return guarded([&] {
    require(graph && out, "null argument");
    *out = graph->graph.num_components();
  });
}

int cmcl_graph_component_labels(const cmcl_graph* graph, size_t* labels) {
  return guarded([&] {
    require(graph && labels, "null argument");
    const auto& c = graph->graph.component_of();
    std::copy(c.begin(), c.end(), labels);
  });
}

int cmcl_graph_to_json(const cmcl_graph* graph, char** out_json) {
  return guarded([&] {
    require(graph && out_json, "null argument");
    *out_json = duplicate(cmcl::graph_to_json(graph->graph));
  });
}

int cmcl_contrastive_loss(const double* image, const double* text, size_t rows, size_t dim,
                          const double* alignment, double tau, int mode, const cmcl_graph* graph,
                          double* value, double* grad_image, double* grad_text,
                          double* grad_alignment) {
  return guarded([&] {
    require(image && text && value, "null argument");
    cmcl::ContrastiveConfig cfg;
    cfg.tau = tau;
    switch (mode) {
      case CMCL_MODE_VANILLA: cfg.mode = cmcl::ContrastiveMode::kVanilla; break;
      case CMCL_MODE_GRAPH_NEGATIVES: cfg.mode = cmcl::ContrastiveMode::kGraphNegatives; break;
      case CMCL_MODE_MULTI_POSITIVE: cfg.mode = cmcl::ContrastiveMode::kMultiPositive; break;
      default: throw cmcl::Error(cmcl::ErrorCode::kInvalidArgument, "unknown contrastive mode");
    }
    cfg.validate();
    cmcl::EmbeddingBatch batch{copy_matrix(image, rows, dim), copy_matrix(text, rows, dim)};
    batch.validate();
    const cmcl::AlignmentMap map = alignment == nullptr
                                       ? cmcl::AlignmentMap::identity(dim)
                                       : cmcl::AlignmentMap{copy_matrix(alignment, dim, dim)};
    std::optional<cmcl::NeighborGraph> built;
    const cmcl::NeighborGraph* g = graph ? &graph->graph : nullptr;
    if (g == nullptr && cfg.mode != cmcl::ContrastiveMode::kVanilla) {
      built.emplace(cmcl::build_knn_graph(batch.image));
      g = &*built;
    }
    const cmcl::LossReport r = cmcl::contrastive_loss(batch, map, cfg, g);
    *value = r.value;
    copy_out(r.grad_image, grad_image);
    copy_out(r.grad_text, grad_text);
    copy_out(r.grad_alignment, grad_alignment);
  });
}

int cmcl_supervised_ce(const double* logits, size_t rows, size_t classes, const size_t* labels,
                       double* value, double* grad_logits) {
  return guarded([&] {
    require(logits && labels && value, "null argument");
    const cmcl::LossReport r =
        cmcl::supervised_ce(copy_matrix(logits, rows, classes), {labels, rows});
    *value = r.value;
    copy_out(r.grad_logits, grad_logits);
  });
}

int cmcl_generate_dataset(const char* spec_json, const char* out_dir) {
  return guarded([&] {
    require(out_dir != nullptr, "null output directory");
    const cmcl::SyntheticSpec spec =
        spec_json == nullptr ? cmcl::SyntheticSpec{} : cmcl::parse_synthetic_spec(spec_json);
    cmcl::run_gen_data(spec, out_dir);
  });
}

int cmcl_dataset_load(const char* data_dir, cmcl_dataset** out) {
  return guarded([&] {
    require(data_dir && out, "null argument");
    *out = new cmcl_dataset{cmcl::load_dataset_dir(data_dir)};
  });
}

void cmcl_dataset_free(cmcl_dataset* dataset) { delete dataset; }

int cmcl_dataset_size(const cmcl_dataset* dataset, int split, size_t* out) {
  return guarded([&] {
    require(dataset && out, "null argument");
    *out = pick(dataset->data, split).size();
  });
}

int cmcl_model_load(const char* checkpoint_path, cmcl_model** out) {
  return guarded([&] {
    require(checkpoint_path && out, "null argument");
    *out = new cmcl_model{cmcl::load_checkpoint(checkpoint_path).model};
  });
}

void cmcl_model_free(cmcl_model* model) { delete model; }

int cmcl_model_predict(const cmcl_model* model, const double* image, size_t image_dim,
                       const double* question, size_t question_dim, size_t* answer) {
  return guarded([&] {
    require(model && image && question && answer, "null argument");
    const cmcl::Vector logits = model->model.predict({image, image_dim}, {question, question_dim});
    *answer = static_cast<size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  });
}

int cmcl_model_accuracy(const cmcl_model* model, const cmcl_dataset* dataset, int split,
                        double* out) {
  return guarded([&] {
    require(model && dataset && out, "null argument");
    *out = cmcl::evaluate(model->model, pick(dataset->data, split)).accuracy;
  });
}

int cmcl_train(const char* config_json, const char* data_dir, const char* out_dir,
               char** summary_json) {
  return guarded([&] {
    require(data_dir && out_dir, "null argument");
    const auto summary = cmcl::run_train(config_or_default(config_json), data_dir, out_dir);
    if (summary_json != nullptr) {
      auto doc = nlohmann::ordered_json::parse(cmcl::metrics_to_json(summary.final_metrics));
      doc["steps"] = summary.steps;
      *summary_json = duplicate(doc.dump());
    }
  });
}

int cmcl_grad_check(uint64_t seed, size_t trials, char** report_json, char** report_table,
                    int* passed) {
  return guarded([&] {
    const cmcl::GradCheckReport report = cmcl::run_grad_check(seed, trials);
    if (passed != nullptr) *passed = report.passed() ? 1 : 0;
    if (report_json != nullptr) *report_json = duplicate(report.to_json());
    if (report_table != nullptr) *report_table = duplicate(report.to_table());
  });
}

int cmcl_ablate(const cmcl_ablate_options* options, const char* data_dir, const char* out_dir,
                char** csv) {
  return guarded([&] {
    require(options && data_dir && out_dir, "null argument");
    cmcl::AblationRequest req;
    req.base = config_or_default(options->config_json);
    if (options->has_seed) req.base.seed = options->seed;
    req.modes = cmcl::parse_mode_list(
        options->modes ? options->modes : "off,coarse_triplet,vanilla,graph_negatives,multi_positive");
    if (options->lambdas != nullptr && options->lambdas[0] != '\0') {
      req.lambdas = cmcl::parse_lambda_list(options->lambdas);
    }
    req.seeds_per_cell = options->seeds_per_cell == 0 ? 5 : options->seeds_per_cell;
    req.threads = options->threads != 0 ? options->threads
                                        : std::max(1u, std::thread::hardware_concurrency());
    const std::string table = cmcl::run_ablate(req, data_dir, out_dir);
    if (csv != nullptr) *csv = duplicate(table);
  });
}

int cmcl_probe_graph(const cmcl_probe_options* options, char** report_json) {
  return guarded([&] {
    require(options && options->checkpoint && options->data_dir && report_json, "null argument");
    cmcl::ProbeRequest req;
    req.checkpoint = options->checkpoint;
    req.data_dir = options->data_dir;
    req.split = to_split(options->split);
    if (options->batch_size != 0) req.batch_size = options->batch_size;
    if (options->num_batches != 0) req.num_batches = options->num_batches;
    req.seed = options->seed;
    *report_json = duplicate(cmcl::run_probe_graph(req));
  });
}

}  // extern "C"
