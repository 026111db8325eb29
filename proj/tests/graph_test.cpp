// Copyright 2026 The cmcl Authors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <queue>
#include <set>

#include "doctest.h"
#include "graph.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace cmcl;
using cmcl::testing::random_matrix;
using cmcl::testing::uniform_index;

namespace {

// Nearest neighbour by explicit dot/norm loops, independent of numcore.
std::vector<std::size_t> oracle_neighbors(const Matrix& x) {
  const std::size_t m = x.rows();
  std::vector<std::size_t> nn(m);
  for (std::size_t i = 0; i < m; ++i) {
    double best = -2.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      double d = 0, ni = 0, nj = 0;
      for (std::size_t k = 0; k < x.cols(); ++k) {
        d += x(i, k) * x(j, k);
        ni += x(i, k) * x(i, k);
        nj += x(j, k) * x(j, k);
      }
      const double c = d / std::sqrt(ni * nj);
      if (c > best) {
        best = c;
        nn[i] = j;
      }
    }
  }
  return nn;
}

// Breadth-first traversal labels over an adjacency list.
std::vector<std::size_t> bfs_labels(std::size_t m, const std::vector<Edge>& edges) {
  std::vector<std::vector<std::size_t>> adj(m);
  for (auto [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::vector<std::size_t> label(m, m);
  std::size_t next = 0;
  for (std::size_t s = 0; s < m; ++s) {
    if (label[s] != m) continue;
    std::queue<std::size_t> q;
    q.push(s);
    label[s] = next;
    while (!q.empty()) {
      const std::size_t u = q.front();
      q.pop();
      for (std::size_t v : adj[u]) {
        if (label[v] == m) {
          label[v] = next;
          q.push(v);
        }
      }
    }
    ++next;
  }
  return label;
}

// Two labelings describe the same partition.
bool same_partition(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  if (a.size() != b.size()) return false;
  std::map<std::size_t, std::size_t> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto [it1, new1] = ab.emplace(a[i], b[i]);
    auto [it2, new2] = ba.emplace(b[i], a[i]);
    if (it1->second != b[i] || it2->second != a[i]) return false;
  }
  return true;
}

std::set<std::set<std::size_t>> as_sets(const NeighborGraph& g) {
  std::set<std::set<std::size_t>> out;
  for (const auto& c : g.components()) out.emplace(c.begin(), c.end());
  return out;
}

}  // namespace

TEST_CASE("two separated clusters") {
  const Matrix x = Matrix::from_rows({{1, 0}, {0.9, 0.1}, {-1, 0}, {-0.9, -0.1}});
  const NeighborGraph g = build_knn_graph(x);
  CHECK(g.edges() == std::vector<Edge>{{0, 1}, {2, 3}});
  CHECK(g.num_components() == 2);
  CHECK(g.components() == std::vector<std::vector<std::size_t>>{{0, 1}, {2, 3}});
  CHECK(g.negatives_for(0) == std::vector<std::size_t>{2, 3});
  CHECK(g.positives_for(1) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("identical rows form one component") {
  const NeighborGraph g = build_knn_graph(Matrix::from_rows({{1, 0}, {1, 0}, {1, 0}}));
  CHECK(g.num_components() == 1);
  CHECK(g.components()[0] == std::vector<std::size_t>{0, 1, 2});
  // Ties go to the lowest index: 0 -> 1, 1 -> 0, 2 -> 0.
  CHECK(nearest_neighbors(Matrix::from_rows({{1, 0}, {1, 0}, {1, 0}})) ==
        std::vector<std::size_t>{1, 0, 0});
  for (std::size_t a = 0; a < 3; ++a) CHECK(g.negatives_for(a).empty());
}

TEST_CASE("injected singleton partition") {
  const NeighborGraph g = NeighborGraph::from_partition({0, 1, 2, 3});
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(g.positives_for(i) == std::vector<std::size_t>{i});
    CHECK(g.negatives_for(i).size() == 3);
  }
}

TEST_CASE("graph errors") {
  CHECK_THROWS_AS(build_knn_graph(Matrix(1, 3, 1.0)), Error);
  try {
    build_knn_graph(Matrix(1, 3, 1.0));
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kBatchTooSmall);
  }
  try {
    build_knn_graph(Matrix::from_rows({{1, 0}, {0, 0}}));
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kZeroNormVector);
  }
  const NeighborGraph g = build_knn_graph(Matrix::from_rows({{1, 0}, {0, 1}}));
  try {
    g.negatives_for(2);
    FAIL("expected IndexOutOfRange");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIndexOutOfRange);
  }
  CHECK_THROWS_AS(g.positives_for(5), Error);
  CHECK_THROWS_AS(NeighborGraph(3, {{0, 0}}), Error);
  CHECK_THROWS_AS(NeighborGraph(3, {{0, 3}}), Error);
}

TEST_CASE("union-find labels agree with breadth-first traversal on 1000 random batches") {
  std::mt19937_64 rng(2026);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t m = uniform_index(rng, 2, 64);
    const std::size_t d = uniform_index(rng, 2, 32);
    const Matrix x = random_matrix(m, d, rng);
    const NeighborGraph g = build_knn_graph(x);

    // Edge set = union of oracle nearest-neighbour choices.
    const auto nn = oracle_neighbors(x);
    std::set<Edge> expected;
    for (std::size_t i = 0; i < m; ++i) expected.emplace(std::min(i, nn[i]), std::max(i, nn[i]));
    REQUIRE(std::set<Edge>(g.edges().begin(), g.edges().end()) == expected);

    REQUIRE(same_partition(g.component_of(), bfs_labels(m, g.edges())));

    std::size_t covered = 0;
    for (const auto& c : g.components()) {
      CHECK(c.size() >= 2);
      covered += c.size();
    }
    CHECK(covered == m);

    const std::size_t anchor = uniform_index(rng, 0, m - 1);
    const auto pos = g.positives_for(anchor);
    const auto neg = g.negatives_for(anchor);
    std::vector<std::size_t> all;
    std::set_union(pos.begin(), pos.end(), neg.begin(), neg.end(), std::back_inserter(all));
    std::vector<std::size_t> expected_all(m);
    std::iota(expected_all.begin(), expected_all.end(), 0);
    CHECK(all == expected_all);
    CHECK(pos.size() + neg.size() == m);
    CHECK(std::find(neg.begin(), neg.end(), anchor) == neg.end());
  }
}

TEST_CASE("permutation equivariance and per-row scale invariance") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int t = 0; t < 200; ++t) {
    const std::size_t m = uniform_index(rng, 2, 40);
    const std::size_t d = uniform_index(rng, 2, 16);
    const Matrix x = random_matrix(m, d, rng);
    const NeighborGraph g = build_knn_graph(x);

    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix px(m, d);
    for (std::size_t i = 0; i < m; ++i) {
      std::copy(x.row(perm[i]).begin(), x.row(perm[i]).end(), px.row(i).begin());
    }
    const NeighborGraph pg = build_knn_graph(px);
    std::set<std::set<std::size_t>> mapped;
    for (const auto& c : pg.components()) {
      std::set<std::size_t> s;
      for (std::size_t i : c) s.insert(perm[i]);
      mapped.insert(s);
    }
    CHECK(mapped == as_sets(g));

    Matrix sx = x;
    const std::size_t r = uniform_index(rng, 0, m - 1);
    const double s = scale(rng);
    for (double& v : sx.row(r)) v *= s;
    CHECK(build_knn_graph(sx).edges() == g.edges());
  }
}

TEST_CASE("graph JSON form") {
  const NeighborGraph g = build_knn_graph(Matrix::from_rows({{1, 0}, {0.9, 0.1}, {-1, 0}, {-0.9, -0.1}}));
  const auto j = nlohmann::json::parse(graph_to_json(g));
  CHECK(j["num_nodes"] == 4);
  CHECK(j["edges"] == nlohmann::json::parse("[[0,1],[2,3]]"));
  CHECK(j["components"] == nlohmann::json::parse("[[0,1],[2,3]]"));
}
