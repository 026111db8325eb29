// Copyright 2026 The cmcl Authors.
// SPDX-License-Identifier: Apache-2.0

#include "graph.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "json.hpp"

namespace cmcl {

UnionFind::UnionFind(std::size_t n) : parent_(n), size_(n, 1) {
  std::iota(parent_.begin(), parent_.end(), std::size_t{0});
}

std::size_t UnionFind::find(std::size_t x) {
  std::size_t root = x;
  while (parent_[root] != root) root = parent_[root];
  while (parent_[x] != root) {
    const std::size_t next = parent_[x];
    parent_[x] = root;
    x = next;
  }
  return root;
}

bool UnionFind::unite(std::size_t a, std::size_t b) {
  a = find(a);
  b = find(b);
  if (a == b) return false;
  if (size_[a] < size_[b]) std::swap(a, b);
  parent_[b] = a;
  size_[a] += size_[b];
  return true;
}

NeighborGraph::NeighborGraph(std::size_t num_nodes, std::vector<Edge> edges)
    : num_nodes_(num_nodes) {
  for (auto& [i, j] : edges) {
    if (i >= num_nodes || j >= num_nodes) {
      throw Error(ErrorCode::kIndexOutOfRange, "edge endpoint outside the graph");
    }
    if (i == j) throw Error(ErrorCode::kInvalidArgument, "self-loop edge");
    if (i > j) std::swap(i, j);
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  edges_ = std::move(edges);

  UnionFind forest(num_nodes_);
  for (const auto& [i, j] : edges_) forest.unite(i, j);
  label_components(forest);
}

NeighborGraph NeighborGraph::from_partition(const std::vector<std::size_t>& component_of) {
  NeighborGraph g;
  g.num_nodes_ = component_of.size();
  UnionFind forest(g.num_nodes_);
  std::vector<std::size_t> first_with_label;
  for (std::size_t i = 0; i < component_of.size(); ++i) {
    const std::size_t label = component_of[i];
    if (label >= first_with_label.size()) first_with_label.resize(label + 1, g.num_nodes_);
    if (first_with_label[label] == g.num_nodes_) {
      first_with_label[label] = i;
    } else {
      forest.unite(first_with_label[label], i);
    }
  }
  g.label_components(forest);
  return g;
}

// Hoshen-Kopelman style second pass: relabel forest roots densely in
// order of first appearance.
void NeighborGraph::label_components(UnionFind& forest) {
  constexpr std::size_t kUnset = static_cast<std::size_t>(-1);
  std::vector<std::size_t> label_of_root(num_nodes_, kUnset);
  component_of_.assign(num_nodes_, 0);
  components_.clear();
  for (std::size_t i = 0; i < num_nodes_; ++i) {
    const std::size_t root = forest.find(i);
    if (label_of_root[root] == kUnset) {
      label_of_root[root] = components_.size();
      components_.emplace_back();
    }
    component_of_[i] = label_of_root[root];
    components_[component_of_[i]].push_back(i);
  }
}

const std::vector<std::size_t>& NeighborGraph::positives_for(std::size_t anchor) const {
  if (anchor >= num_nodes_) {
    throw Error(ErrorCode::kIndexOutOfRange, "anchor " + std::to_string(anchor) + " of " +
                                                 std::to_string(num_nodes_) + " nodes");
  }
  return components_[component_of_[anchor]];
}

std::vector<std::size_t> NeighborGraph::negatives_for(std::size_t anchor) const {
  if (anchor >= num_nodes_) {
    throw Error(ErrorCode::kIndexOutOfRange, "anchor " + std::to_string(anchor) + " of " +
                                                 std::to_string(num_nodes_) + " nodes");
  }
  const std::size_t own = component_of_[anchor];
  std::vector<std::size_t> out;
  out.reserve(num_nodes_ - components_[own].size());
  for (std::size_t j = 0; j < num_nodes_; ++j) {
    if (component_of_[j] != own) out.push_back(j);
  }
  return out;
}

std::vector<std::size_t> nearest_neighbors(const Matrix& embeddings) {
  const Matrix sim = pairwise_cosine(embeddings);
  const std::size_t m = sim.rows();
  std::vector<std::size_t> nn(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t best = i == 0 ? 1 : 0;
    for (std::size_t k = best + 1; k < m; ++k) {
      if (k != i && sim(i, k) > sim(i, best)) best = k;
    }
    nn[i] = best;
  }
  return nn;
}

NeighborGraph build_knn_graph(const Matrix& image_embeddings) {
  if (image_embeddings.rows() < 2) {
    throw Error(ErrorCode::kBatchTooSmall, "graph needs at least 2 nodes, got " +
                                               std::to_string(image_embeddings.rows()));
  }
  const auto nn = nearest_neighbors(image_embeddings);
  std::vector<Edge> edges;
  edges.reserve(nn.size());
  for (std::size_t i = 0; i < nn.size(); ++i) edges.emplace_back(i, nn[i]);
  return NeighborGraph(image_embeddings.rows(), std::move(edges));
}

std::string graph_to_json(const NeighborGraph& graph) {
  nlohmann::ordered_json edges = nlohmann::ordered_json::array();
  for (const auto& [i, j] : graph.edges()) edges.push_back({i, j});
  nlohmann::ordered_json doc{{"num_nodes", graph.num_nodes()},
                             {"edges", std::move(edges)},
                             {"components", graph.components()}};
  return doc.dump();
}

}  // namespace cmcl
