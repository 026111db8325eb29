// Copyright 2026 The cmcl Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "numcore.hpp"

namespace cmcl {

/// Disjoint-set forest with path compression and union by size.
class UnionFind {
 public:
  explicit UnionFind(std::size_t n);

  std::size_t find(std::size_t x);
  /// Returns false when a and b were already in the same set.
  bool unite(std::size_t a, std::size_t b);
  std::size_t set_size(std::size_t x) { return size_[find(x)]; }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
};

using Edge = std::pair<std::size_t, std::size_t>;

/// Symmetric 1-nearest-neighbour graph over a batch of image embeddings,
/// together with its connected components.
///
/// Components are labelled in order of their smallest member, so labels are
/// a deterministic function of the edge set. Instances are immutable.
class NeighborGraph {
 public:
  /// Builds a graph from an explicit edge list (each pair stored as i < j).
  NeighborGraph(std::size_t num_nodes, std::vector<Edge> edges);

  /// Edge-free graph with a caller-supplied partition. Used to inject
  /// degenerate component structures (e.g. all singletons).
  static NeighborGraph from_partition(const std::vector<std::size_t>& component_of);

  std::size_t num_nodes() const noexcept { return num_nodes_; }
  std::size_t num_components() const noexcept { return components_.size(); }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const std::vector<std::size_t>& component_of() const noexcept { return component_of_; }
  const std::vector<std::vector<std::size_t>>& components() const noexcept { return components_; }

  /// The anchor's whole component, anchor included, ascending.
  const std::vector<std::size_t>& positives_for(std::size_t anchor) const;
  /// Every node outside the anchor's component, ascending.
  std::vector<std::size_t> negatives_for(std::size_t anchor) const;

 private:
  NeighborGraph() = default;
  void label_components(UnionFind& forest);

  std::size_t num_nodes_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::size_t> component_of_;
  std::vector<std::vector<std::size_t>> components_;
};

/// Nearest neighbour of every row under cosine similarity, excluding the row
/// itself. Ties go to the lowest index.
std::vector<std::size_t> nearest_neighbors(const Matrix& embeddings);

/// Union-symmetrised 1-NN graph over the rows of `image_embeddings` (M ≥ 2).
NeighborGraph build_knn_graph(const Matrix& image_embeddings);

/// {"num_nodes": M, "edges": [[i, j], ...], "components": [[...], ...]}
std::string graph_to_json(const NeighborGraph& graph);

}  // namespace cmcl
