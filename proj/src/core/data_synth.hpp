// Copyright 2026 The cmcl Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "numcore.hpp"

namespace cmcl {

/// Recipe for a shortcut-biased synthetic question-answering dataset.
///
/// Every sample pairs a latent visual concept with a question type; the
/// answer is answer_table[concept][question_type]. Each question type has a
/// "majority" concept, and training samples use it with probability
/// bias_strength, so the question type alone predicts the answer most of
/// the time. The counter split never contains a question type's majority
/// answer.
struct SyntheticSpec {
  std::size_t num_concepts = 8;
  std::size_t num_question_types = 4;
  std::size_t num_answers = 8;
  double bias_strength = 0.85;
  double noise_sigma = 0.15;
  std::size_t image_dim = 16;
  std::size_t question_dim = 16;
  std::size_t answer_dim = 16;
  std::size_t n_train = 8192;
  std::size_t n_test_iid = 2048;
  std::size_t n_test_counter = 2048;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

/// Strict JSON (unknown keys rejected); absent keys keep their defaults.
SyntheticSpec parse_synthetic_spec(const std::string& json_text);
std::string synthetic_spec_to_json(const SyntheticSpec& spec);

enum class Split { kTrain, kTestIid, kTestCounter };
std::string_view to_string(Split split);

struct Sample {
  Vector image_feat;
  Vector question_feat;
  Vector answer_feat;
  std::size_t answer_id = 0;
  std::size_t question_type = 0;
  std::optional<std::size_t> concept_id;  // oracle only, never shown to the model

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// answer(concept, question_type); entries may be unknown for loaded data.
class AnswerTable {
 public:
  static constexpr std::size_t kUnknown = static_cast<std::size_t>(-1);

  AnswerTable() = default;
  AnswerTable(std::size_t num_concepts, std::size_t num_question_types)
      : concepts_(num_concepts), qtypes_(num_question_types),
        entries_(num_concepts * num_question_types, kUnknown) {}

  std::size_t num_concepts() const noexcept { return concepts_; }
  std::size_t num_question_types() const noexcept { return qtypes_; }
  /// kUnknown when out of range or never observed.
  std::size_t at(std::size_t concept_id, std::size_t qtype) const noexcept {
    if (concept_id >= concepts_ || qtype >= qtypes_) return kUnknown;
    return entries_[concept_id * qtypes_ + qtype];
  }
  void set(std::size_t concept_id, std::size_t qtype, std::size_t answer) {
    entries_.at(concept_id * qtypes_ + qtype) = answer;
  }

  friend bool operator==(const AnswerTable&, const AnswerTable&) = default;

 private:
  std::size_t concepts_ = 0;
  std::size_t qtypes_ = 0;
  std::vector<std::size_t> entries_;
};

struct Dataset {
  Split split = Split::kTrain;
  std::vector<Sample> samples;
  std::optional<AnswerTable> answers;

  std::size_t size() const noexcept { return samples.size(); }
  bool has_oracle() const;
  std::size_t num_question_types() const;
};

struct SyntheticData {
  Dataset train;
  Dataset test_iid;
  Dataset test_counter;
  AnswerTable table;
  std::vector<std::size_t> majority_concept;  // per question type
  std::vector<std::size_t> counter_concept;   // per question type
  std::vector<Vector> prototypes;
};

SyntheticData generate(const SyntheticSpec& spec);

/// True iff the candidate's image would truthfully satisfy the anchor's
/// QA pair. Throws OracleUnavailable when concepts or the table are missing.
bool oracle_false_negative(const Dataset& dataset, const Sample& anchor, const Sample& candidate);

void save_jsonl(const Dataset& dataset, const std::filesystem::path& path);
/// Infers the answer table from the samples when every sample has a concept.
Dataset load_jsonl(const std::filesystem::path& path, Split split = Split::kTrain);

struct DataSplits {
  Dataset train;
  Dataset test_iid;
  Dataset test_counter;
};

/// Writes train.jsonl, test_iid.jsonl, test_counter.jsonl and manifest.json.
void write_dataset_dir(const SyntheticSpec& spec, const SyntheticData& data,
                       const std::filesystem::path& dir);
/// Reads the three splits; the answer table comes from manifest.json when
/// present, otherwise from the union of the splits.
DataSplits load_dataset_dir(const std::filesystem::path& dir);

/// Per-split answer counts: [question_type][answer].
std::vector<std::vector<std::size_t>> answer_histogram(const Dataset& dataset,
                                                       std::size_t num_question_types,
                                                       std::size_t num_answers);

}  // namespace cmcl
