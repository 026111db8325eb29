// Copyright 2026 The cmcl Authors.
// SPDX-License-Identifier: Apache-2.0

#include "model.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace cmcl {

namespace {

std::uint64_t next_stamp() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

Dense zero_dense(std::size_t in, std::size_t out) { return Dense{Matrix(out, in), Matrix(1, out)}; }

Mlp zero_mlp(std::size_t in, std::size_t hidden, std::size_t out) {
  return Mlp{zero_dense(in, hidden), zero_dense(hidden, out)};
}

void xavier_fill(Matrix& w, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : w.values()) v = dist(rng);
}

void expect_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::string(name) + " is " + std::to_string(m.rows()) + "x" +
                    std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                    std::to_string(cols));
  }
}

Matrix row_matrix(std::span<const double> v) { return Matrix(1, v.size(), Vector(v.begin(), v.end())); }

}  // namespace

void ModelSpec::validate() const {
  if (image_dim == 0 || question_dim == 0 || answer_dim == 0 || hidden == 0 || embed == 0 ||
      num_answers == 0) {
    throw Error(ErrorCode::kInvalidSpec, "model layer sizes must be positive");
  }
}

ToyParams zeros_like(const ToyParams& params) {
  ToyParams out = params;
  for_each_tensor(out, [](std::string_view, Matrix& m) { m.fill(0.0); });
  return out;
}

std::size_t parameter_count(const ToyParams& params) {
  std::size_t n = 0;
  for_each_tensor(params, [&](std::string_view, const Matrix& m) { n += m.size(); });
  return n;
}

Matrix dense_forward(const Dense& layer, const Matrix& x) {
  Matrix y = matmul_bt(x, layer.weight);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = y.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += layer.bias(0, c);
  }
  return y;
}

namespace {

// Accumulates dW, db for y = x Wᵀ + b and returns dx.
Matrix dense_backward(const Dense& layer, const Matrix& x, const Matrix& grad_y, Dense& grads) {
  grads.weight += matmul_at(grad_y, x);
  for (std::size_t r = 0; r < grad_y.rows(); ++r) {
    for (std::size_t c = 0; c < grad_y.cols(); ++c) grads.bias(0, c) += grad_y(r, c);
  }
  return matmul(grad_y, layer.weight);
}

}  // namespace

Matrix mlp_forward(const Mlp& mlp, const Matrix& x, MlpCache* cache) {
  Matrix hidden = dense_forward(mlp.first, x);
  for (double& v : hidden.values()) v = std::tanh(v);
  Matrix out = dense_forward(mlp.second, hidden);
  if (cache != nullptr) {
    cache->input = x;
    cache->hidden = std::move(hidden);
  }
  return out;
}

Matrix mlp_backward(const Mlp& mlp, const MlpCache& cache, const Matrix& grad_out, Mlp& grads) {
  Matrix grad_hidden = dense_backward(mlp.second, cache.hidden, grad_out, grads.second);
  auto gh = grad_hidden.values();
  auto h = cache.hidden.values();
  for (std::size_t i = 0; i < gh.size(); ++i) gh[i] *= 1.0 - h[i] * h[i];
  return dense_backward(mlp.first, cache.input, grad_hidden, grads.first);
}

ToyModel::ToyModel(ModelSpec spec, ToyParams params)
    : spec_(spec), params_(std::move(params)), stamp_(next_stamp()) {
  spec_.validate();
  check_shapes();
}

void ToyModel::check_shapes() const {
  const auto& s = spec_;
  const auto& p = params_;
  expect_shape(p.vision.first.weight, s.hidden, s.image_dim, "vision.first.weight");
  expect_shape(p.vision.first.bias, 1, s.hidden, "vision.first.bias");
  expect_shape(p.vision.second.weight, s.embed, s.hidden, "vision.second.weight");
  expect_shape(p.vision.second.bias, 1, s.embed, "vision.second.bias");
  expect_shape(p.text.first.weight, s.hidden, s.text_dim(), "text.first.weight");
  expect_shape(p.text.first.bias, 1, s.hidden, "text.first.bias");
  expect_shape(p.text.second.weight, s.embed, s.hidden, "text.second.weight");
  expect_shape(p.text.second.bias, 1, s.embed, "text.second.bias");
  expect_shape(p.fusion.first.weight, s.hidden, 2 * s.embed, "fusion.first.weight");
  expect_shape(p.fusion.first.bias, 1, s.hidden, "fusion.first.bias");
  expect_shape(p.fusion.second.weight, s.hidden, s.hidden, "fusion.second.weight");
  expect_shape(p.fusion.second.bias, 1, s.hidden, "fusion.second.bias");
  expect_shape(p.head.weight, s.num_answers, s.hidden, "head.weight");
  expect_shape(p.head.bias, 1, s.num_answers, "head.bias");
  expect_shape(p.alignment, s.embed, s.embed, "alignment");
}

ToyModel ToyModel::init(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ToyParams p{zero_mlp(spec.image_dim, spec.hidden, spec.embed),
              zero_mlp(spec.text_dim(), spec.hidden, spec.embed),
              zero_mlp(2 * spec.embed, spec.hidden, spec.hidden),
              zero_dense(spec.hidden, spec.num_answers), Matrix(spec.embed, spec.embed)};
  std::mt19937_64 rng(seed);
  for (Matrix* w : {&p.vision.first.weight, &p.vision.second.weight, &p.text.first.weight,
                    &p.text.second.weight, &p.fusion.first.weight, &p.fusion.second.weight,
                    &p.head.weight}) {
    xavier_fill(*w, rng);
  }
  for (std::size_t i = 0; i < spec.embed; ++i) p.alignment(i, i) = 1.0;
  return ToyModel(spec, std::move(p));
}

ToyParams& ToyModel::mutable_params() {
  stamp_ = next_stamp();
  return params_;
}

void ToyModel::check_stamp(std::uint64_t stamp) const {
  if (stamp != stamp_) {
    throw Error(ErrorCode::kStaleCache, "forward pass does not match the current parameters");
  }
}

Matrix ToyModel::text_input(const Matrix& questions, const Matrix* answers) const {
  if (questions.cols() != spec_.question_dim) {
    throw Error(ErrorCode::kDimensionMismatch, "question features have " +
                                                   std::to_string(questions.cols()) +
                                                   " columns, expected " +
                                                   std::to_string(spec_.question_dim));
  }
  if (answers == nullptr) return hconcat(questions, Matrix(questions.rows(), spec_.answer_dim));
  if (answers->cols() != spec_.answer_dim || answers->rows() != questions.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "answer features do not match");
  }
  return hconcat(questions, *answers);
}

Matrix ToyModel::encode_images(const Matrix& image_feats) const {
  if (image_feats.cols() != spec_.image_dim) {
    throw Error(ErrorCode::kDimensionMismatch, "image features have " +
                                                   std::to_string(image_feats.cols()) +
                                                   " columns, expected " +
                                                   std::to_string(spec_.image_dim));
  }
  return mlp_forward(params_.vision, image_feats, nullptr);
}

Vector ToyModel::encode_image(std::span<const double> image_feat) const {
  const Matrix out = encode_images(row_matrix(image_feat));
  return Vector(out.values().begin(), out.values().end());
}

Vector ToyModel::encode_text(std::span<const double> question_feat,
                             std::span<const double> answer_feat) const {
  const Matrix q = row_matrix(question_feat);
  Matrix a;
  if (!answer_feat.empty()) a = row_matrix(answer_feat);
  const Matrix out = mlp_forward(params_.text, text_input(q, answer_feat.empty() ? nullptr : &a),
                                 nullptr);
  return Vector(out.values().begin(), out.values().end());
}

Vector ToyModel::predict(std::span<const double> image_feat,
                         std::span<const double> question_feat) const {
  const ForwardPass pass = forward(row_matrix(image_feat), row_matrix(question_feat), nullptr);
  return Vector(pass.logits.values().begin(), pass.logits.values().end());
}

ForwardPass ToyModel::forward(const Matrix& images, const Matrix& questions,
                              const Matrix* answers) const {
  if (images.rows() != questions.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "image and question batches differ in size");
  }
  if (images.cols() != spec_.image_dim) {
    throw Error(ErrorCode::kDimensionMismatch, "image features have " +
                                                   std::to_string(images.cols()) +
                                                   " columns, expected " +
                                                   std::to_string(spec_.image_dim));
  }
  ForwardPass pass;
  pass.stamp = stamp_;
  pass.v_image = mlp_forward(params_.vision, images, &pass.vision);
  pass.v_question = mlp_forward(params_.text, text_input(questions, nullptr), &pass.text_question);
  if (answers != nullptr) {
    pass.v_qa = mlp_forward(params_.text, text_input(questions, answers), &pass.text_qa);
  }
  pass.fused = mlp_forward(params_.fusion, hconcat(pass.v_image, pass.v_question), &pass.fusion);
  pass.logits = dense_forward(params_.head, pass.fused);
  return pass;
}

ToyParams ToyModel::backward(const ForwardPass& pass, const OutputGradients& upstream) const {
  check_stamp(pass.stamp);
  const std::size_t m = pass.v_image.rows();
  const std::size_t d = spec_.embed;
  ToyParams grads = zeros_like(params_);

  Matrix grad_image(m, d);
  Matrix grad_question(m, d);
  if (!upstream.logits.empty()) {
    expect_shape(upstream.logits, m, spec_.num_answers, "logits gradient");
    const Matrix grad_fused = dense_backward(params_.head, pass.fused, upstream.logits, grads.head);
    const Matrix grad_concat = mlp_backward(params_.fusion, pass.fusion, grad_fused, grads.fusion);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < d; ++c) {
        grad_image(r, c) = grad_concat(r, c);
        grad_question(r, c) = grad_concat(r, d + c);
      }
    }
  }
  if (!upstream.v_image.empty()) {
    expect_shape(upstream.v_image, m, d, "image embedding gradient");
    grad_image += upstream.v_image;
  }
  mlp_backward(params_.vision, pass.vision, grad_image, grads.vision);
  mlp_backward(params_.text, pass.text_question, grad_question, grads.text);

  if (!upstream.v_qa.empty()) {
    if (!pass.has_qa()) {
      throw Error(ErrorCode::kStaleCache, "QA gradient supplied but forward ran without answers");
    }
    expect_shape(upstream.v_qa, m, d, "QA embedding gradient");
    mlp_backward(params_.text, pass.text_qa, upstream.v_qa, grads.text);
  }
  if (!upstream.alignment.empty()) {
    expect_shape(upstream.alignment, d, d, "alignment gradient");
    grads.alignment += upstream.alignment;
  }
  return grads;
}

PairFusionPass ToyModel::fuse_pairs(const Matrix& v_image, const Matrix& v_qa) const {
  const std::size_t m = v_image.rows();
  const std::size_t d = spec_.embed;
  const std::size_t h = spec_.hidden;
  expect_shape(v_image, m, d, "image embeddings");
  expect_shape(v_qa, m, d, "QA embeddings");
  const Matrix& w1 = params_.fusion.first.weight;

  // First layer splits over the concatenation: W1 [v ; t] = W1a v + W1b t.
  Matrix from_image(m, h);
  Matrix from_text(m, h);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t k = 0; k < h; ++k) {
      auto wk = w1.row(k);
      double a = 0.0;
      double b = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        a += wk[c] * v_image(r, c);
        b += wk[d + c] * v_qa(r, c);
      }
      from_image(r, k) = a;
      from_text(r, k) = b + params_.fusion.first.bias(0, k);
    }
  }

  PairFusionPass pass;
  pass.stamp = stamp_;
  pass.batch = m;
  pass.hidden = Matrix(m * m, h);
  for (std::size_t anchor = 0; anchor < m; ++anchor) {
    for (std::size_t j = 0; j < m; ++j) {
      auto row = pass.hidden.row(anchor * m + j);
      for (std::size_t k = 0; k < h; ++k) row[k] = std::tanh(from_image(j, k) + from_text(anchor, k));
    }
  }
  pass.fused = dense_forward(params_.fusion.second, pass.hidden);
  return pass;
}

void ToyModel::backward_pairs(const PairFusionPass& pass, const Matrix& v_image,
                              const Matrix& v_qa, const Matrix& grad_fused, Matrix& grad_image,
                              Matrix& grad_qa, Mlp& fusion_grads) const {
  check_stamp(pass.stamp);
  const std::size_t m = pass.batch;
  const std::size_t d = spec_.embed;
  const std::size_t h = spec_.hidden;
  expect_shape(grad_fused, m * m, h, "pair fusion gradient");
  expect_shape(grad_image, m, d, "image gradient");
  expect_shape(grad_qa, m, d, "QA gradient");

  Matrix grad_hidden = dense_backward(params_.fusion.second, pass.hidden, grad_fused,
                                      fusion_grads.second);
  Matrix grad_from_image(m, h);
  Matrix grad_from_text(m, h);
  for (std::size_t anchor = 0; anchor < m; ++anchor) {
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t r = anchor * m + j;
      for (std::size_t k = 0; k < h; ++k) {
        const double t = pass.hidden(r, k);
        const double g = grad_hidden(r, k) * (1.0 - t * t);
        grad_from_image(j, k) += g;
        grad_from_text(anchor, k) += g;
      }
    }
  }
  const Matrix& w1 = params_.fusion.first.weight;
  for (std::size_t k = 0; k < h; ++k) {
    auto gw = fusion_grads.first.weight.row(k);
    auto wk = w1.row(k);
    for (std::size_t r = 0; r < m; ++r) {
      const double gi = grad_from_image(r, k);
      const double gt = grad_from_text(r, k);
      fusion_grads.first.bias(0, k) += gt;
      for (std::size_t c = 0; c < d; ++c) {
        gw[c] += gi * v_image(r, c);
        gw[d + c] += gt * v_qa(r, c);
        grad_image(r, c) += gi * wk[c];
        grad_qa(r, c) += gt * wk[d + c];
      }
    }
  }
}

namespace {

using json = nlohmann::ordered_json;

json spec_to_json(const ModelSpec& s) {
  return json{{"image_dim", s.image_dim},     {"question_dim", s.question_dim},
              {"answer_dim", s.answer_dim},   {"hidden", s.hidden},
              {"embed", s.embed},             {"num_answers", s.num_answers}};
}

}  // namespace

std::string checkpoint_to_json(const ToyModel& model, std::uint64_t seed, std::uint64_t step) {
  json tensors = json::object();
  for_each_tensor(model.params(), [&](std::string_view name, const Matrix& m) {
    tensors[std::string(name)] = json{{"shape", {m.rows(), m.cols()}},
                                      {"data", std::vector<double>(m.values().begin(),
                                                                   m.values().end())}};
  });
  json out{{"format", "cmcl-checkpoint-v1"},
           {"model_spec", spec_to_json(model.spec())},
           {"seed", seed},
           {"step", step},
           {"tensors", std::move(tensors)}};
  return out.dump(1) + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
  try {
    const json doc = json::parse(text);
    const json& js = doc.at("model_spec");
    ModelSpec spec;
    spec.image_dim = js.at("image_dim").get<std::size_t>();
    spec.question_dim = js.at("question_dim").get<std::size_t>();
    spec.answer_dim = js.at("answer_dim").get<std::size_t>();
    spec.hidden = js.at("hidden").get<std::size_t>();
    spec.embed = js.at("embed").get<std::size_t>();
    spec.num_answers = js.at("num_answers").get<std::size_t>();
    spec.validate();
    ToyModel shape = ToyModel::init(spec, 0);
    ToyParams params = shape.params();
    const json& tensors = doc.at("tensors");
    for_each_tensor(params, [&](std::string_view name, Matrix& m) {
      const json& t = tensors.at(std::string(name));
      const auto shape_v = t.at("shape").get<std::vector<std::size_t>>();
      auto data = t.at("data").get<std::vector<double>>();
      if (shape_v.size() != 2 || shape_v[0] != m.rows() || shape_v[1] != m.cols()) {
        throw Error(ErrorCode::kDimensionMismatch, "tensor " + std::string(name) + " has wrong shape");
      }
      m = Matrix(m.rows(), m.cols(), std::move(data));
    });
    return Checkpoint{ToyModel(spec, std::move(params)), doc.at("seed").get<std::uint64_t>(),
                      doc.at("step").get<std::uint64_t>()};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const ToyModel& model, std::uint64_t seed,
                     std::uint64_t step) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << checkpoint_to_json(model, seed, step);
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return checkpoint_from_json(buffer.str());
}

}  // namespace cmcl
