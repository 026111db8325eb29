// Copyright 2026 The cmcl Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string_view>

#include "graph.hpp"
#include "numcore.hpp"

namespace cmcl {

/// Paired image / QA-text embeddings; row m of text_qa belongs to row m of image.
struct EmbeddingBatch {
  Matrix image;
  Matrix text_qa;

  std::size_t size() const noexcept { return image.rows(); }
  /// Throws unless both are M×D with M ≥ 2 and no zero rows.
  void validate() const;
};

/// Learnable linear map applied to the text embedding before comparing it
/// against an image embedding.
struct AlignmentMap {
  Matrix weight;

  static AlignmentMap identity(std::size_t dim);
};

enum class ContrastiveMode { kVanilla, kGraphNegatives, kMultiPositive };

std::string_view to_string(ContrastiveMode mode);
ContrastiveMode parse_contrastive_mode(std::string_view name);

struct ContrastiveConfig {
  double tau = 1.0;
  double lambda = 0.5;
  ContrastiveMode mode = ContrastiveMode::kMultiPositive;

  void validate() const;
};

/// Loss value and the gradients it produces. Gradients that a particular
/// objective does not touch are left empty and count as zero.
struct LossReport {
  double value = 0.0;
  Matrix grad_image;
  Matrix grad_text;
  Matrix grad_alignment;
  Matrix grad_logits;
};

/// cos(W · text, image).
double similarity_h(std::span<const double> text_row, std::span<const double> image_row,
                    const AlignmentMap& map);

/// Mean softmax cross-entropy over the rows of `logits` (M×K).
LossReport supervised_ce(const Matrix& logits, std::span<const std::size_t> labels);

/// QA-anchored InfoNCE; every image in the batch is in every denominator.
LossReport infonce_vanilla(const EmbeddingBatch& batch, const AlignmentMap& map, double tau);

/// InfoNCE whose denominator keeps the paired image plus the images outside
/// the anchor's component. An anchor with no negatives contributes zero.
LossReport infonce_graph(const EmbeddingBatch& batch, const AlignmentMap& map, double tau,
                         const NeighborGraph& graph);

/// Multi-positive InfoNCE: averages the log-ratio over every member of the
/// anchor's component, against a denominator spanning the whole batch.
LossReport infonce_multipos(const EmbeddingBatch& batch, const AlignmentMap& map, double tau,
                            const NeighborGraph& graph);

/// Dispatches on config.mode. `graph` is required for the graph-based modes.
LossReport contrastive_loss(const EmbeddingBatch& batch, const AlignmentMap& map,
                            const ContrastiveConfig& config, const NeighborGraph* graph);

/// sup + lambda * cl, value and gradients alike.
LossReport joint_loss(const LossReport& sup, const LossReport& cl, double lambda);

}  // namespace cmcl
