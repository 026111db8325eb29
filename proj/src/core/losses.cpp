// Copyright 2026 The cmcl Authors.
// SPDX-License-Identifier: Apache-2.0

#include "losses.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace cmcl {

void EmbeddingBatch::validate() const {
  if (!image.same_shape(text_qa)) {
    throw Error(ErrorCode::kDimensionMismatch, "image and text_qa shapes differ");
  }
  if (image.rows() < 2) throw Error(ErrorCode::kBatchTooSmall, "embedding batch needs M >= 2");
  if (image.cols() == 0) throw Error(ErrorCode::kDimensionMismatch, "zero embedding dimension");
  for (std::size_t m = 0; m < image.rows(); ++m) {
    if (norm(image.row(m)) <= kNormEpsilon) {
      throw Error(ErrorCode::kZeroNormVector, "image row " + std::to_string(m));
    }
    if (norm(text_qa.row(m)) <= kNormEpsilon) {
      throw Error(ErrorCode::kZeroNormVector, "text row " + std::to_string(m));
    }
  }
}

AlignmentMap AlignmentMap::identity(std::size_t dim) {
  AlignmentMap map{Matrix(dim, dim)};
  for (std::size_t i = 0; i < dim; ++i) map.weight(i, i) = 1.0;
  return map;
}

std::string_view to_string(ContrastiveMode mode) {
  switch (mode) {
    case ContrastiveMode::kVanilla: return "vanilla";
    case ContrastiveMode::kGraphNegatives: return "graph_negatives";
    case ContrastiveMode::kMultiPositive: return "multi_positive";
  }
  return "unknown";
}

ContrastiveMode parse_contrastive_mode(std::string_view name) {
  if (name == "vanilla") return ContrastiveMode::kVanilla;
  if (name == "graph_negatives") return ContrastiveMode::kGraphNegatives;
  if (name == "multi_positive") return ContrastiveMode::kMultiPositive;
  throw Error(ErrorCode::kInvalidConfig, "unknown contrastive mode '" + std::string(name) + "'");
}

void ContrastiveConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw Error(ErrorCode::kInvalidConfig, "tau must be > 0");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw Error(ErrorCode::kInvalidConfig, "lambda must be >= 0");
  }
}

namespace {

void check_map(const EmbeddingBatch& batch, const AlignmentMap& map) {
  const std::size_t d = batch.image.cols();
  if (map.weight.rows() != d || map.weight.cols() != d) {
    throw Error(ErrorCode::kDimensionMismatch, "alignment map must be " + std::to_string(d) +
                                                   "x" + std::to_string(d));
  }
}

void check_tau(double tau) {
  if (!(tau > 0.0)) throw Error(ErrorCode::kInvalidArgument, "tau must be > 0");
}

void check_graph(const EmbeddingBatch& batch, const NeighborGraph& graph) {
  if (graph.num_nodes() != batch.size()) {
    throw Error(ErrorCode::kGraphBatchMismatch,
                "graph has " + std::to_string(graph.num_nodes()) + " nodes, batch has " +
                    std::to_string(batch.size()));
  }
}

// Similarities S(m, j) = cos(W t_m, v_j) plus what the backward pass needs.
struct SimilarityTable {
  Matrix projected;  // M×D, row m = W t_m
  Matrix sim;        // M×M
};

SimilarityTable similarity_table(const EmbeddingBatch& batch, const AlignmentMap& map) {
  batch.validate();
  check_map(batch, map);
  SimilarityTable t{matmul_bt(batch.text_qa, map.weight), Matrix(batch.size(), batch.size())};
  for (std::size_t m = 0; m < batch.size(); ++m) {
    if (norm(t.projected.row(m)) <= kNormEpsilon) {
      throw Error(ErrorCode::kZeroNormVector, "projected text row " + std::to_string(m));
    }
    for (std::size_t j = 0; j < batch.size(); ++j) {
      t.sim(m, j) = cosine_similarity(t.projected.row(m), batch.image.row(j));
    }
  }
  return t;
}

// Pushes dL/dS back to the image rows, text rows and alignment weight.
LossReport backprop_similarity(const EmbeddingBatch& batch, const AlignmentMap& map,
                               const SimilarityTable& table, const Matrix& grad_sim,
                               double value) {
  const std::size_t m_rows = batch.size();
  const std::size_t d = batch.image.cols();
  Matrix grad_projected(m_rows, d);
  LossReport report;
  report.value = value;
  report.grad_image = Matrix(m_rows, d);
  for (std::size_t m = 0; m < m_rows; ++m) {
    for (std::size_t j = 0; j < m_rows; ++j) {
      const double g = grad_sim(m, j);
      if (g == 0.0) continue;
      cosine_backward(table.projected.row(m), batch.image.row(j), g, grad_projected.row(m),
                      report.grad_image.row(j));
    }
  }
  // P = T Wᵀ  =>  dT = dP W,  dW = dPᵀ T
  report.grad_text = matmul(grad_projected, map.weight);
  report.grad_alignment = matmul_at(grad_projected, batch.text_qa);
  return report;
}

// Accumulates -(1/M) * [log-ratio of `numerators` against `denominator`] into
// grad_sim for anchor m and returns the anchor's J term. `numerators` are
// averaged (single-positive when it has one element).
double anchor_term(const SimilarityTable& table, std::size_t m, double tau,
                   const std::vector<std::size_t>& numerators,
                   const std::vector<std::size_t>& denominator, double scale, Matrix& grad_sim) {
  std::vector<double> logits(denominator.size());
  for (std::size_t k = 0; k < denominator.size(); ++k) logits[k] = table.sim(m, denominator[k]) / tau;
  const double lse = log_sum_exp(logits);

  double numerator_mean = 0.0;
  for (std::size_t c : numerators) numerator_mean += table.sim(m, c) / tau;
  numerator_mean /= static_cast<double>(numerators.size());

  // L = -scale * J,  J = mean(s_c / tau) - lse
  const double weight = 1.0 / static_cast<double>(numerators.size());
  for (std::size_t k = 0; k < denominator.size(); ++k) {
    grad_sim(m, denominator[k]) += scale * std::exp(logits[k] - lse) / tau;
  }
  for (std::size_t c : numerators) grad_sim(m, c) -= scale * weight / tau;
  return numerator_mean - lse;
}

}  // namespace

double similarity_h(std::span<const double> text_row, std::span<const double> image_row,
                    const AlignmentMap& map) {
  if (map.weight.cols() != text_row.size() || map.weight.rows() != image_row.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "alignment map does not match row dimensions");
  }
  Vector projected(map.weight.rows(), 0.0);
  for (std::size_t i = 0; i < projected.size(); ++i) projected[i] = dot(map.weight.row(i), text_row);
  return cosine_similarity(projected, image_row);
}

LossReport supervised_ce(const Matrix& logits, std::span<const std::size_t> labels) {
  const std::size_t m = logits.rows();
  const std::size_t k = logits.cols();
  if (labels.size() != m) {
    throw Error(ErrorCode::kDimensionMismatch, "labels length " + std::to_string(labels.size()) +
                                                   " vs " + std::to_string(m) + " rows");
  }
  if (m == 0 || k == 0) throw Error(ErrorCode::kEmptySequence, "empty logits");
  LossReport report;
  report.grad_logits = Matrix(m, k);
  const double inv_m = 1.0 / static_cast<double>(m);
  double total = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    if (labels[r] >= k) {
      throw Error(ErrorCode::kLabelOutOfRange, "label " + std::to_string(labels[r]) + " at row " +
                                                   std::to_string(r) + " with K=" +
                                                   std::to_string(k));
    }
    const double lse = log_sum_exp(logits.row(r));
    total += lse - logits(r, labels[r]);
    for (std::size_t c = 0; c < k; ++c) {
      report.grad_logits(r, c) = std::exp(logits(r, c) - lse) * inv_m;
    }
    report.grad_logits(r, labels[r]) -= inv_m;
  }
  report.value = total * inv_m;
  return report;
}

LossReport infonce_vanilla(const EmbeddingBatch& batch, const AlignmentMap& map, double tau) {
  check_tau(tau);
  const SimilarityTable table = similarity_table(batch, map);
  const std::size_t m_rows = batch.size();
  const double scale = 1.0 / static_cast<double>(m_rows);
  std::vector<std::size_t> everyone(m_rows);
  for (std::size_t j = 0; j < m_rows; ++j) everyone[j] = j;

  Matrix grad_sim(m_rows, m_rows);
  double sum_j = 0.0;
  for (std::size_t m = 0; m < m_rows; ++m) {
    sum_j += anchor_term(table, m, tau, {m}, everyone, scale, grad_sim);
  }
  return backprop_similarity(batch, map, table, grad_sim, -sum_j * scale);
}

LossReport infonce_graph(const EmbeddingBatch& batch, const AlignmentMap& map, double tau,
                         const NeighborGraph& graph) {
  check_tau(tau);
  check_graph(batch, graph);
  const SimilarityTable table = similarity_table(batch, map);
  const std::size_t m_rows = batch.size();
  const double scale = 1.0 / static_cast<double>(m_rows);

  Matrix grad_sim(m_rows, m_rows);
  double sum_j = 0.0;
  for (std::size_t m = 0; m < m_rows; ++m) {
    std::vector<std::size_t> denominator = graph.negatives_for(m);
    if (denominator.empty()) continue;
    denominator.insert(denominator.begin(), m);
    sum_j += anchor_term(table, m, tau, {m}, denominator, scale, grad_sim);
  }
  return backprop_similarity(batch, map, table, grad_sim, -sum_j * scale);
}

LossReport infonce_multipos(const EmbeddingBatch& batch, const AlignmentMap& map, double tau,
                            const NeighborGraph& graph) {
  check_tau(tau);
  check_graph(batch, graph);
  const SimilarityTable table = similarity_table(batch, map);
  const std::size_t m_rows = batch.size();
  const double scale = 1.0 / static_cast<double>(m_rows);
  std::vector<std::size_t> everyone(m_rows);
  for (std::size_t j = 0; j < m_rows; ++j) everyone[j] = j;

  Matrix grad_sim(m_rows, m_rows);
  double sum_j = 0.0;
  for (std::size_t m = 0; m < m_rows; ++m) {
    sum_j += anchor_term(table, m, tau, graph.positives_for(m), everyone, scale, grad_sim);
  }
  return backprop_similarity(batch, map, table, grad_sim, -sum_j * scale);
}

LossReport contrastive_loss(const EmbeddingBatch& batch, const AlignmentMap& map,
                            const ContrastiveConfig& config, const NeighborGraph* graph) {
  config.validate();
  if (config.mode == ContrastiveMode::kVanilla) return infonce_vanilla(batch, map, config.tau);
  if (graph == nullptr) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string(to_string(config.mode)) + " needs a neighbour graph");
  }
  if (config.mode == ContrastiveMode::kGraphNegatives) {
    return infonce_graph(batch, map, config.tau, *graph);
  }
  return infonce_multipos(batch, map, config.tau, *graph);
}

namespace {

Matrix combine(const Matrix& a, const Matrix& b, double lambda) {
  if (b.empty()) return a;
  Matrix out = a.empty() ? Matrix(b.rows(), b.cols()) : a;
  out.add_scaled(b, lambda);
  return out;
}

}  // namespace

LossReport joint_loss(const LossReport& sup, const LossReport& cl, double lambda) {
  if (!(lambda >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "lambda must be >= 0");
  LossReport out;
  out.value = sup.value + lambda * cl.value;
  out.grad_image = combine(sup.grad_image, cl.grad_image, lambda);
  out.grad_text = combine(sup.grad_text, cl.grad_text, lambda);
  out.grad_alignment = combine(sup.grad_alignment, cl.grad_alignment, lambda);
  out.grad_logits = combine(sup.grad_logits, cl.grad_logits, lambda);
  return out;
}

}  // namespace cmcl
