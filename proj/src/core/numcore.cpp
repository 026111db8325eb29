// Copyright 2026 The cmcl Authors.
// SPDX-License-Identifier: Apache-2.0

#include "numcore.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cmcl {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kZeroNormVector: return "ZeroNormVector";
    case ErrorCode::kEmptySequence: return "EmptySequence";
    case ErrorCode::kBatchTooSmall: return "BatchTooSmall";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kLabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::kGraphBatchMismatch: return "GraphBatchMismatch";
    case ErrorCode::kStaleCache: return "StaleCache";
    case ErrorCode::kInvalidSpec: return "InvalidSpec";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kOracleUnavailable: return "OracleUnavailable";
    case ErrorCode::kDivergenceDetected: return "DivergenceDetected";
    case ErrorCode::kGradientCheckFailed: return "GradientCheckFailed";
    case ErrorCode::kInternal: return "Internal";
  }
  return "Unknown";
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows * cols) {
    throw Error(ErrorCode::kDimensionMismatch,
                "matrix " + std::to_string(rows) + "x" + std::to_string(cols) + " given " +
                    std::to_string(data_.size()) + " values");
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw Error(ErrorCode::kDimensionMismatch, "ragged matrix rows");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(values));
}

Matrix& Matrix::operator+=(const Matrix& other) {
  add_scaled(other, 1.0);
  return *this;
}

Matrix& Matrix::operator*=(double scale) {
  for (double& v : data_) v *= scale;
  return *this;
}

void Matrix::add_scaled(const Matrix& other, double scale) {
  if (!same_shape(other)) throw Error(ErrorCode::kDimensionMismatch, "add_scaled shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
}

void Matrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

bool all_finite(std::span<const double> values) noexcept {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

namespace {

double cosine_from_parts(double ab, double na, double nb) {
  return std::clamp(ab / (na * nb), -1.0, 1.0);
}

}  // namespace

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  if (a.empty()) throw Error(ErrorCode::kDimensionMismatch, "empty vectors");
  const double na = norm(a);
  const double nb = norm(b);
  if (na <= kNormEpsilon || nb <= kNormEpsilon) {
    throw Error(ErrorCode::kZeroNormVector, "cosine of a zero-norm vector");
  }
  return cosine_from_parts(dot(a, b), na, nb);
}

void cosine_backward(std::span<const double> a, std::span<const double> b, double upstream,
                     std::span<double> grad_a, std::span<double> grad_b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na <= kNormEpsilon || nb <= kNormEpsilon) {
    throw Error(ErrorCode::kZeroNormVector, "cosine gradient at a zero-norm vector");
  }
  const double c = dot(a, b) / (na * nb);
  // d cos / da = b / (|a||b|) - cos * a / |a|^2
  const double inv_ab = upstream / (na * nb);
  const double ca = upstream * c / (na * na);
  const double cb = upstream * c / (nb * nb);
  for (std::size_t i = 0; i < a.size(); ++i) {
    grad_a[i] += inv_ab * b[i] - ca * a[i];
    grad_b[i] += inv_ab * a[i] - cb * b[i];
  }
}

Matrix pairwise_cosine(const Matrix& batch) {
  const std::size_t m = batch.rows();
  if (m < 2) throw Error(ErrorCode::kBatchTooSmall, "pairwise_cosine needs at least 2 rows");
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    norms[i] = norm(batch.row(i));
    if (norms[i] <= kNormEpsilon) {
      throw Error(ErrorCode::kZeroNormVector, "row " + std::to_string(i) + " has zero norm");
    }
  }
  Matrix out(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i; j < m; ++j) {
      const double c = cosine_from_parts(dot(batch.row(i), batch.row(j)), norms[i], norms[j]);
      out(i, j) = c;
      out(j, i) = c;
    }
  }
  return out;
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::kEmptySequence, "log_sum_exp of empty sequence");
  const double hi = *std::max_element(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += std::exp(v - hi);
  return hi + std::log(s);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw Error(ErrorCode::kDimensionMismatch, "matmul inner dimension");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto o = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto br = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw Error(ErrorCode::kDimensionMismatch, "matmul_bt inner dimension");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto br = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < ar.size(); ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
  return out;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw Error(ErrorCode::kDimensionMismatch, "matmul_at inner dimension");
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto ar = a.row(k);
    auto br = b.row(k);
    for (std::size_t i = 0; i < ar.size(); ++i) {
      const double aki = ar[i];
      if (aki == 0.0) continue;
      auto o = out.row(i);
      for (std::size_t j = 0; j < br.size(); ++j) o[j] += aki * br[j];
    }
  }
  return out;
}

Matrix hconcat(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw Error(ErrorCode::kDimensionMismatch, "hconcat row count");
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto o = out.row(i);
    std::copy(a.row(i).begin(), a.row(i).end(), o.begin());
    std::copy(b.row(i).begin(), b.row(i).end(), o.begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return out;
}

}  // namespace cmcl
