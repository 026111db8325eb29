// Copyright 2026 The cmcl Authors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "losses.hpp"
#include "test_util.hpp"

using namespace cmcl;
using cmcl::testing::random_matrix;
using cmcl::testing::uniform_index;

namespace {

struct Instance {
  EmbeddingBatch batch;
  AlignmentMap map;
  double tau;
};

Instance random_instance(std::mt19937_64& rng) {
  const std::size_t m = uniform_index(rng, 2, 16);
  const std::size_t d = uniform_index(rng, 2, 8);
  Instance in{{random_matrix(m, d, rng), random_matrix(m, d, rng)}, AlignmentMap::identity(d),
              std::uniform_real_distribution<double>(0.5, 2.0)(rng)};
  in.map.weight.add_scaled(random_matrix(d, d, rng, 0.3), 1.0);
  return in;
}

// h(m, j) from the definition with explicit loops.
Matrix oracle_similarity(const Instance& in) {
  const std::size_t m = in.batch.size(), d = in.batch.image.cols();
  Matrix h(m, m);
  for (std::size_t a = 0; a < m; ++a) {
    Vector p(d, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t c = 0; c < d; ++c) p[r] += in.map.weight(r, c) * in.batch.text_qa(a, c);
    }
    for (std::size_t j = 0; j < m; ++j) {
      double dot = 0, np = 0, ni = 0;
      for (std::size_t k = 0; k < d; ++k) {
        dot += p[k] * in.batch.image(j, k);
        np += p[k] * p[k];
        ni += in.batch.image(j, k) * in.batch.image(j, k);
      }
      h(a, j) = dot / std::sqrt(np * ni);
    }
  }
  return h;
}

double oracle_vanilla(const Instance& in) {
  const Matrix h = oracle_similarity(in);
  const std::size_t m = h.rows();
  double total = 0;
  for (std::size_t a = 0; a < m; ++a) {
    double denom = 0;
    for (std::size_t j = 0; j < m; ++j) denom += std::exp(h(a, j) / in.tau);
    total += std::log(std::exp(h(a, a) / in.tau) / denom);
  }
  return -total / static_cast<double>(m);
}

double oracle_graph(const Instance& in, const NeighborGraph& g) {
  const Matrix h = oracle_similarity(in);
  const std::size_t m = h.rows();
  double total = 0;
  for (std::size_t a = 0; a < m; ++a) {
    std::vector<std::size_t> negatives;
    for (std::size_t j = 0; j < m; ++j) {
      if (g.component_of()[j] != g.component_of()[a]) negatives.push_back(j);
    }
    if (negatives.empty()) continue;
    double denom = std::exp(h(a, a) / in.tau);
    for (std::size_t j : negatives) denom += std::exp(h(a, j) / in.tau);
    total += std::log(std::exp(h(a, a) / in.tau) / denom);
  }
  return -total / static_cast<double>(m);
}

double oracle_multipos(const Instance& in, const NeighborGraph& g) {
  const Matrix h = oracle_similarity(in);
  const std::size_t m = h.rows();
  double total = 0;
  for (std::size_t a = 0; a < m; ++a) {
    double denom = 0;
    for (const auto& comp : g.components()) {
      for (std::size_t j : comp) denom += std::exp(h(a, j) / in.tau);
    }
    std::vector<std::size_t> members;
    for (std::size_t c = 0; c < m; ++c) {
      if (g.component_of()[c] == g.component_of()[a]) members.push_back(c);
    }
    double inner = 0;
    for (std::size_t c : members) inner += std::log(std::exp(h(a, c) / in.tau) / denom);
    total += inner / static_cast<double>(members.size());
  }
  return -total / static_cast<double>(m);
}

double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-2});
}

// Largest relative error between analytic gradients and fourth-order central
// differences with step 1e-5.
template <typename Fn>
double worst_gradient_error(std::span<double> values, const Matrix& analytic, Fn&& value) {
  const double h = 1e-5;
  double worst = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    auto at = [&](double off) {
      values[i] = saved + off;
      return value();
    };
    const double numeric = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
    values[i] = saved;
    worst = std::max(worst, rel_error(analytic.values()[i], numeric));
  }
  return worst;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  REQUIRE(a.same_shape(b));
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
  }
  return worst;
}

NeighborGraph singletons(std::size_t m) {
  std::vector<std::size_t> labels(m);
  std::iota(labels.begin(), labels.end(), 0);
  return NeighborGraph::from_partition(labels);
}

}  // namespace

TEST_CASE("similarity h") {
  const AlignmentMap id = AlignmentMap::identity(3);
  const Vector a{0.5, -1, 2}, b{1, 0.5, 0};
  CHECK(std::abs(similarity_h(a, a, id) - 1.0) < 1e-15);
  CHECK(similarity_h(Vector{1, 0, 0}, Vector{0, 1, 0}, id) == 0.0);

  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    Instance in = random_instance(rng);
    const Matrix h = oracle_similarity(in);
    for (std::size_t i = 0; i < in.batch.size(); ++i) {
      CHECK(std::abs(similarity_h(in.batch.text_qa.row(i), in.batch.image.row(0), in.map) - h(i, 0)) <
            1e-13);
    }
  }
  const AlignmentMap zero{Matrix(3, 3, 0.0)};
  CHECK_THROWS_AS(similarity_h(a, b, zero), Error);
}

TEST_CASE("supervised cross-entropy") {
  const std::vector<std::size_t> labels{0, 3, 2};
  CHECK(supervised_ce(Matrix(3, 4, 0.0), labels).value == doctest::Approx(std::log(4.0)).epsilon(1e-15));

  Matrix dominant(3, 4, 0.0);
  for (std::size_t i = 0; i < 3; ++i) dominant(i, labels[i]) = 1000.0;
  CHECK(supervised_ce(dominant, labels).value < 1e-300);

  std::mt19937_64 rng(2);
  Matrix logits = random_matrix(3, 5, rng, 2.0);
  const std::vector<std::size_t> y{4, 0, 1};
  const LossReport r = supervised_ce(logits, y);
  double expected = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    double z = 0;
    for (std::size_t k = 0; k < 5; ++k) z += std::exp(logits(i, k));
    expected -= std::log(std::exp(logits(i, y[i])) / z) / 3.0;
  }
  CHECK(std::abs(r.value - expected) < 1e-14);
  CHECK(worst_gradient_error(logits.values(), r.grad_logits, [&] { return supervised_ce(logits, y).value; }) <
        1e-6);

  try {
    supervised_ce(Matrix(2, 3, 0.0), std::vector<std::size_t>{0, 3});
    FAIL("expected LabelOutOfRange");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kLabelOutOfRange);
  }
}

TEST_CASE("vanilla InfoNCE closed forms") {
  SUBCASE("two orthonormal pairs") {
    const EmbeddingBatch b{Matrix::from_rows({{1, 0}, {0, 1}}), Matrix::from_rows({{1, 0}, {0, 1}})};
    const double v = infonce_vanilla(b, AlignmentMap::identity(2), 1.0).value;
    CHECK(std::abs(v - std::log1p(std::exp(-1.0))) < 1e-15);
    CHECK(std::abs(v - 0.313262) < 5e-7);
  }
  SUBCASE("identical images give ln M for any temperature") {
    std::mt19937_64 rng(3);
    for (std::size_t m : {2u, 5u, 16u}) {
      const Matrix text = random_matrix(m, 4, rng);
      const EmbeddingBatch b{Matrix(m, 4, 0.7), text};
      for (double tau : {0.1, 1.0, 3.0}) {
        CHECK(std::abs(infonce_vanilla(b, AlignmentMap::identity(4), tau).value -
                       std::log(static_cast<double>(m))) < 1e-12);
      }
    }
  }
}

TEST_CASE("graph and multi-positive InfoNCE degenerate cases") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    const Instance in = random_instance(rng);
    const std::size_t m = in.batch.size();
    const LossReport van = infonce_vanilla(in.batch, in.map, in.tau);
    const NeighborGraph single = singletons(m);
    for (const LossReport& r : {infonce_graph(in.batch, in.map, in.tau, single),
                                infonce_multipos(in.batch, in.map, in.tau, single)}) {
      CHECK(std::abs(r.value - van.value) <= 1e-12);
      CHECK(max_abs_diff(r.grad_image, van.grad_image) <= 1e-12);
      CHECK(max_abs_diff(r.grad_text, van.grad_text) <= 1e-12);
      CHECK(max_abs_diff(r.grad_alignment, van.grad_alignment) <= 1e-12);
    }
    const NeighborGraph one = NeighborGraph::from_partition(std::vector<std::size_t>(m, 0));
    const LossReport g1 = infonce_graph(in.batch, in.map, in.tau, one);
    CHECK(g1.value == 0.0);
    CHECK(max_abs_diff(g1.grad_image, Matrix(m, in.batch.image.cols())) == 0.0);
  }

  SUBCASE("identical images, one component: multi-positive gives ln M") {
    const EmbeddingBatch b{Matrix(6, 3, 1.0), random_matrix(6, 3, rng)};
    const NeighborGraph g = build_knn_graph(b.image);
    REQUIRE(g.num_components() == 1);
    CHECK(std::abs(infonce_multipos(b, AlignmentMap::identity(3), 1.0, g).value - std::log(6.0)) < 1e-12);
  }
  SUBCASE("constant similarity gives ln of the denominator count") {
    const EmbeddingBatch b{Matrix(7, 3, 1.0), Matrix(7, 3, 2.0)};
    const NeighborGraph g = NeighborGraph::from_partition({0, 0, 1, 1, 1, 2, 3});
    // Anchor in a component of size s has 1 + (7 - s) terms in its denominator.
    const double expected = (2 * std::log(6.0) + 3 * std::log(5.0) + 2 * std::log(7.0)) / 7.0;
    for (double tau : {0.25, 1.0, 4.0}) {
      CHECK(std::abs(infonce_graph(b, AlignmentMap::identity(3), tau, g).value - expected) < 1e-12);
      CHECK(std::abs(infonce_multipos(b, AlignmentMap::identity(3), tau, g).value - std::log(7.0)) < 1e-12);
      CHECK(std::abs(infonce_vanilla(b, AlignmentMap::identity(3), tau).value - std::log(7.0)) < 1e-12);
    }
  }
}

TEST_CASE("InfoNCE variants match brute-force index-set oracles") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 200; ++t) {
    const Instance in = random_instance(rng);
    const NeighborGraph g = build_knn_graph(in.batch.image);
    const double van = infonce_vanilla(in.batch, in.map, in.tau).value;
    const double gr = infonce_graph(in.batch, in.map, in.tau, g).value;
    const double mp = infonce_multipos(in.batch, in.map, in.tau, g).value;
    CHECK(std::abs(van - oracle_vanilla(in)) < 1e-12);
    CHECK(std::abs(gr - oracle_graph(in, g)) < 1e-12);
    CHECK(std::abs(mp - oracle_multipos(in, g)) < 1e-12);
    CHECK(van >= 0.0);
    CHECK(gr >= 0.0);
    CHECK(mp >= 0.0);
  }
}

TEST_CASE("InfoNCE gradients match finite differences on 100 instances") {
  std::mt19937_64 rng(6);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    Instance in = random_instance(rng);
    const NeighborGraph g = build_knn_graph(in.batch.image);
    for (ContrastiveMode mode :
         {ContrastiveMode::kVanilla, ContrastiveMode::kGraphNegatives, ContrastiveMode::kMultiPositive}) {
      const ContrastiveConfig cfg{in.tau, 0.5, mode};
      auto value = [&] { return contrastive_loss(in.batch, in.map, cfg, &g).value; };
      const LossReport r = contrastive_loss(in.batch, in.map, cfg, &g);
      worst = std::max(worst, worst_gradient_error(in.batch.image.values(), r.grad_image, value));
      worst = std::max(worst, worst_gradient_error(in.batch.text_qa.values(), r.grad_text, value));
      worst = std::max(worst, worst_gradient_error(in.map.weight.values(), r.grad_alignment, value));
    }
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("losses are invariant to joint anchor permutation and row scaling") {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 50; ++t) {
    const Instance in = random_instance(rng);
    const std::size_t m = in.batch.size();
    const NeighborGraph g = build_knn_graph(in.batch.image);
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Instance p = in;
    std::vector<std::size_t> labels(m);
    for (std::size_t i = 0; i < m; ++i) {
      std::copy(in.batch.image.row(perm[i]).begin(), in.batch.image.row(perm[i]).end(), p.batch.image.row(i).begin());
      std::copy(in.batch.text_qa.row(perm[i]).begin(), in.batch.text_qa.row(perm[i]).end(),
                p.batch.text_qa.row(i).begin());
      labels[i] = g.component_of()[perm[i]];
    }
    const NeighborGraph pg = NeighborGraph::from_partition(labels);
    CHECK(std::abs(infonce_vanilla(in.batch, in.map, in.tau).value -
                   infonce_vanilla(p.batch, p.map, p.tau).value) < 1e-12);
    CHECK(std::abs(infonce_graph(in.batch, in.map, in.tau, g).value -
                   infonce_graph(p.batch, p.map, p.tau, pg).value) < 1e-12);
    CHECK(std::abs(infonce_multipos(in.batch, in.map, in.tau, g).value -
                   infonce_multipos(p.batch, p.map, p.tau, pg).value) < 1e-12);

    Instance s = in;
    for (double& v : s.batch.image.row(uniform_index(rng, 0, m - 1))) v *= 37.5;
    CHECK(std::abs(infonce_multipos(s.batch, s.map, s.tau, g).value -
                   infonce_multipos(in.batch, in.map, in.tau, g).value) < 1e-12);
  }
}

TEST_CASE("joint loss") {
  std::mt19937_64 rng(10);
  const Instance in = random_instance(rng);
  const std::size_t m = in.batch.size();
  std::vector<std::size_t> labels(m, 1);
  const LossReport sup = supervised_ce(random_matrix(m, 3, rng), labels);
  const NeighborGraph g = build_knn_graph(in.batch.image);
  const LossReport cl = infonce_multipos(in.batch, in.map, in.tau, g);

  const LossReport zero = joint_loss(sup, cl, 0.0);
  CHECK(zero.value == sup.value);
  CHECK(zero.grad_logits == sup.grad_logits);
  CHECK(max_abs_diff(zero.grad_image, Matrix(m, in.batch.image.cols())) == 0.0);

  LossReport none = cl;
  none.value = 0.0;
  CHECK(joint_loss(sup, none, 1.0).value == sup.value);

  const LossReport half = joint_loss(sup, cl, 0.5);
  CHECK(half.value == sup.value + 0.5 * cl.value);
  for (std::size_t i = 0; i < cl.grad_text.size(); ++i) {
    CHECK(half.grad_text.values()[i] == 0.5 * cl.grad_text.values()[i]);
  }
  CHECK_THROWS_AS(joint_loss(sup, cl, -0.1), Error);
}

TEST_CASE("loss argument errors") {
  const EmbeddingBatch b{Matrix::from_rows({{1, 0}, {0, 1}, {1, 1}}), Matrix::from_rows({{1, 0}, {0, 1}, {1, 1}})};
  const NeighborGraph wrong = build_knn_graph(Matrix::from_rows({{1, 0}, {0, 1}}));
  try {
    infonce_graph(b, AlignmentMap::identity(2), 1.0, wrong);
    FAIL("expected GraphBatchMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kGraphBatchMismatch);
  }
  CHECK_THROWS_AS(infonce_multipos(b, AlignmentMap::identity(2), 1.0, wrong), Error);
  CHECK_THROWS_AS(infonce_vanilla(b, AlignmentMap::identity(2), 0.0), Error);
  const EmbeddingBatch zero_row{Matrix::from_rows({{1, 0}, {0, 0}}), Matrix::from_rows({{1, 0}, {0, 1}})};
  CHECK_THROWS_AS(infonce_vanilla(zero_row, AlignmentMap::identity(2), 1.0), Error);
  CHECK(parse_contrastive_mode("graph_negatives") == ContrastiveMode::kGraphNegatives);
  CHECK(to_string(ContrastiveMode::kMultiPositive) == "multi_positive");
  CHECK_THROWS_AS(parse_contrastive_mode("bogus"), Error);
}
