// Copyright 2026 The cmcl Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>

#include "numcore.hpp"

namespace cmcl {

struct ModelSpec {
  std::size_t image_dim = 16;
  std::size_t question_dim = 16;
  std::size_t answer_dim = 16;
  std::size_t hidden = 32;
  std::size_t embed = 16;
  std::size_t num_answers = 8;

  std::size_t text_dim() const noexcept { return question_dim + answer_dim; }
  void validate() const;
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Affine layer y = W x + b. weight is out×in, bias is 1×out.
struct Dense {
  Matrix weight;
  Matrix bias;
};

/// Two affine layers with tanh in between.
struct Mlp {
  Dense first;
  Dense second;
};

struct ToyParams {
  Mlp vision;   // image_dim -> hidden -> embed
  Mlp text;     // question_dim + answer_dim -> hidden -> embed
  Mlp fusion;   // 2*embed -> hidden -> hidden
  Dense head;   // hidden -> num_answers
  Matrix alignment;  // embed × embed
};

/// Visits every tensor in a fixed order with a stable dotted name.
template <typename Params, typename Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  fn("vision.first.weight", p.vision.first.weight);
  fn("vision.first.bias", p.vision.first.bias);
  fn("vision.second.weight", p.vision.second.weight);
  fn("vision.second.bias", p.vision.second.bias);
  fn("text.first.weight", p.text.first.weight);
  fn("text.first.bias", p.text.first.bias);
  fn("text.second.weight", p.text.second.weight);
  fn("text.second.bias", p.text.second.bias);
  fn("fusion.first.weight", p.fusion.first.weight);
  fn("fusion.first.bias", p.fusion.first.bias);
  fn("fusion.second.weight", p.fusion.second.weight);
  fn("fusion.second.bias", p.fusion.second.bias);
  fn("head.weight", p.head.weight);
  fn("head.bias", p.head.bias);
  fn("alignment", p.alignment);
}

ToyParams zeros_like(const ToyParams& params);
std::size_t parameter_count(const ToyParams& params);

struct MlpCache {
  Matrix input;
  Matrix hidden;  // post-tanh
};

Matrix dense_forward(const Dense& layer, const Matrix& x);
Matrix mlp_forward(const Mlp& mlp, const Matrix& x, MlpCache* cache);
/// Accumulates parameter gradients into `grads` and returns dL/dinput.
Matrix mlp_backward(const Mlp& mlp, const MlpCache& cache, const Matrix& grad_out, Mlp& grads);

/// Activations of one batched forward pass, needed by backward().
struct ForwardPass {
  std::uint64_t stamp = 0;
  MlpCache vision;
  MlpCache text_question;
  MlpCache text_qa;
  MlpCache fusion;
  Matrix v_image;     // M×embed
  Matrix v_question;  // M×embed
  Matrix v_qa;        // M×embed, empty unless answers were supplied
  Matrix fused;       // M×hidden
  Matrix logits;      // M×num_answers

  bool has_qa() const noexcept { return !v_qa.empty(); }
};

/// Upstream gradients entering the model. Empty matrices count as zero.
struct OutputGradients {
  Matrix logits;     // dL/dlogits
  Matrix v_image;    // extra dL/dV_I (contrastive path)
  Matrix v_qa;       // dL/dV_QA
  Matrix alignment;  // dL/dW of the alignment map
};

/// Fusion evaluated on every (QA_m, image_j) pair; row m*M + j.
struct PairFusionPass {
  std::uint64_t stamp = 0;
  std::size_t batch = 0;
  Matrix hidden;  // M²×hidden, post-tanh
  Matrix fused;   // M²×hidden
};

/// Toy multi-modal network: image encoder, text encoder shared between the
/// question-only and question+answer inputs, MLP fusion, linear answer head,
/// and the text-to-image alignment map used by the contrastive similarity.
class ToyModel {
 public:
  ToyModel(ModelSpec spec, ToyParams params);

  /// Xavier-uniform weights, zero biases, identity alignment map.
  static ToyModel init(const ModelSpec& spec, std::uint64_t seed);

  const ModelSpec& spec() const noexcept { return spec_; }
  const ToyParams& params() const noexcept { return params_; }
  /// Mutable access invalidates every outstanding forward pass.
  ToyParams& mutable_params();
  std::uint64_t stamp() const noexcept { return stamp_; }

  Vector encode_image(std::span<const double> image_feat) const;
  /// Question-only when answer_feat is empty (answer slot zero-filled).
  Vector encode_text(std::span<const double> question_feat,
                     std::span<const double> answer_feat = {}) const;
  Vector predict(std::span<const double> image_feat, std::span<const double> question_feat) const;

  Matrix encode_images(const Matrix& image_feats) const;

  /// Batched forward. `answers` may be null; when given, the QA text
  /// embeddings are computed too.
  ForwardPass forward(const Matrix& images, const Matrix& questions, const Matrix* answers) const;

  /// Gradients of every parameter. Throws StaleCache when `pass` was not
  /// produced by this model in its current state.
  ToyParams backward(const ForwardPass& pass, const OutputGradients& upstream) const;

  PairFusionPass fuse_pairs(const Matrix& v_image, const Matrix& v_qa) const;
  void backward_pairs(const PairFusionPass& pass, const Matrix& v_image, const Matrix& v_qa,
                      const Matrix& grad_fused, Matrix& grad_image, Matrix& grad_qa,
                      Mlp& fusion_grads) const;

 private:
  void check_shapes() const;
  void check_stamp(std::uint64_t stamp) const;
  Matrix text_input(const Matrix& questions, const Matrix* answers) const;

  ModelSpec spec_;
  ToyParams params_;
  std::uint64_t stamp_;
};

struct Checkpoint {
  ToyModel model;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

std::string checkpoint_to_json(const ToyModel& model, std::uint64_t seed, std::uint64_t step);
Checkpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const std::filesystem::path& path, const ToyModel& model, std::uint64_t seed,
                     std::uint64_t step);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cmcl
