// Copyright 2026 The cmcl Authors.
// SPDX-License-Identifier: Apache-2.0

#include "data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json_util.hpp"

namespace cmcl {

using jsonutil::json;

namespace {

constexpr double kMaxPrototypeCosine = 0.5;
constexpr int kPrototypeAttempts = 100000;

// Independent generator per purpose so changing one split's size leaves the
// others untouched.
std::mt19937_64 stream(std::uint64_t seed, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    purpose};
  return std::mt19937_64(seq);
}

enum Purpose : std::uint32_t {
  kPrototypes = 1,
  kCodes = 2,
  kTable = 3,
  kMajority = 4,
  kTrainStream = 10,
  kIidStream = 11,
  kCounterStream = 12,
};

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

Vector one_hot_code(std::size_t dim, std::size_t hot, double sigma, std::mt19937_64& rng) {
  Vector v(dim, 0.0);
  v[hot] = 1.0;
  if (sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, sigma);
    for (double& x : v) x += noise(rng);
  }
  return v;
}

std::vector<Vector> draw_prototypes(const SyntheticSpec& spec) {
  auto rng = stream(spec.seed, kPrototypes);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Vector> protos;
  int attempts = 0;
  while (protos.size() < spec.num_concepts) {
    if (++attempts > kPrototypeAttempts) {
      throw Error(ErrorCode::kInvalidSpec,
                  "cannot place " + std::to_string(spec.num_concepts) +
                      " prototypes with pairwise cosine < 0.5 in " +
                      std::to_string(spec.image_dim) + " dimensions");
    }
    Vector v(spec.image_dim);
    for (double& x : v) x = gauss(rng);
    const double n = norm(v);
    if (n <= kNormEpsilon) continue;
    for (double& x : v) x /= n;
    const bool separated = std::all_of(protos.begin(), protos.end(), [&](const Vector& p) {
      return dot(p, v) < kMaxPrototypeCosine;
    });
    if (separated) protos.push_back(std::move(v));
  }
  return protos;
}

AnswerTable draw_table(const SyntheticSpec& spec) {
  auto rng = stream(spec.seed, kTable);
  const std::size_t c_count = spec.num_concepts;
  AnswerTable table(c_count, spec.num_question_types);
  for (std::size_t t = 0; t < spec.num_question_types; ++t) {
    if (spec.num_answers >= c_count) {
      // Injective per question type: answers identify concepts.
      std::vector<std::size_t> answers(spec.num_answers);
      std::iota(answers.begin(), answers.end(), std::size_t{0});
      std::shuffle(answers.begin(), answers.end(), rng);
      for (std::size_t c = 0; c < c_count; ++c) table.set(c, t, answers[c]);
    } else {
      std::vector<std::size_t> answers(c_count);
      do {
        for (auto& a : answers) a = uniform_index(rng, spec.num_answers);
      } while (std::all_of(answers.begin(), answers.end(),
                           [&](std::size_t a) { return a == answers[0]; }));
      for (std::size_t c = 0; c < c_count; ++c) table.set(c, t, answers[c]);
    }
  }
  return table;
}

Sample make_sample(const SyntheticSpec& spec, const SyntheticData& data,
                   const std::vector<Vector>& question_codes,
                   const std::vector<Vector>& answer_codes, std::size_t concept_id,
                   std::size_t qtype, std::mt19937_64& rng) {
  Sample s;
  s.image_feat = data.prototypes[concept_id];
  if (spec.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (double& x : s.image_feat) x += noise(rng);
  }
  s.question_type = qtype;
  s.answer_id = data.table.at(concept_id, qtype);
  s.question_feat = question_codes[qtype];
  s.answer_feat = answer_codes[s.answer_id];
  s.concept_id = concept_id;
  return s;
}

std::vector<std::size_t> counter_candidates(const SyntheticData& data, std::size_t qtype) {
  const std::size_t majority_answer = data.table.at(data.majority_concept[qtype], qtype);
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < data.table.num_concepts(); ++c) {
    if (data.table.at(c, qtype) != majority_answer) out.push_back(c);
  }
  return out;
}

}  // namespace

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::kInvalidSpec, why); };
  if (num_concepts == 0) fail("num_concepts must be >= 1");
  if (num_question_types == 0) fail("num_question_types must be >= 1");
  if (num_answers < 2) fail("num_answers must be >= 2");
  if (!(bias_strength >= 0.0 && bias_strength <= 1.0)) fail("bias_strength must be in [0, 1]");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) fail("noise_sigma must be >= 0");
  if (image_dim < 2) fail("image_dim must be >= 2");
  if (question_dim < num_question_types) fail("question_dim must be >= num_question_types");
  if (answer_dim < num_answers) fail("answer_dim must be >= num_answers");
  if (n_train < 2) fail("n_train must be >= 2");
  if (num_concepts == 1 && n_test_counter > 0) {
    fail("a single-concept dataset has no counter examples; set n_test_counter to 0");
  }
}

SyntheticSpec parse_synthetic_spec(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidSpec, std::string("spec JSON: ") + e.what());
  }
  constexpr auto code = ErrorCode::kInvalidSpec;
  jsonutil::reject_unknown_keys(doc,
                                {"num_concepts", "num_question_types", "num_answers",
                                 "bias_strength", "noise_sigma", "dims", "sizes", "seed"},
                                "synthetic spec", code);
  SyntheticSpec spec;
  jsonutil::read_optional(doc, "num_concepts", spec.num_concepts, code);
  jsonutil::read_optional(doc, "num_question_types", spec.num_question_types, code);
  jsonutil::read_optional(doc, "num_answers", spec.num_answers, code);
  jsonutil::read_optional(doc, "bias_strength", spec.bias_strength, code);
  jsonutil::read_optional(doc, "noise_sigma", spec.noise_sigma, code);
  jsonutil::read_optional(doc, "seed", spec.seed, code);
  if (doc.contains("dims")) {
    const json& d = doc["dims"];
    jsonutil::reject_unknown_keys(d, {"image", "question", "answer"}, "dims", code);
    jsonutil::read_optional(d, "image", spec.image_dim, code);
    jsonutil::read_optional(d, "question", spec.question_dim, code);
    jsonutil::read_optional(d, "answer", spec.answer_dim, code);
  }
  if (doc.contains("sizes")) {
    const json& s = doc["sizes"];
    jsonutil::reject_unknown_keys(s, {"train", "test_iid", "test_counter"}, "sizes", code);
    jsonutil::read_optional(s, "train", spec.n_train, code);
    jsonutil::read_optional(s, "test_iid", spec.n_test_iid, code);
    jsonutil::read_optional(s, "test_counter", spec.n_test_counter, code);
  }
  spec.validate();
  return spec;
}

namespace {

json spec_json(const SyntheticSpec& s) {
  return json{{"num_concepts", s.num_concepts},
              {"num_question_types", s.num_question_types},
              {"num_answers", s.num_answers},
              {"bias_strength", s.bias_strength},
              {"noise_sigma", s.noise_sigma},
              {"dims", {{"image", s.image_dim}, {"question", s.question_dim}, {"answer", s.answer_dim}}},
              {"sizes", {{"train", s.n_train}, {"test_iid", s.n_test_iid}, {"test_counter", s.n_test_counter}}},
              {"seed", s.seed}};
}

}  // namespace

std::string synthetic_spec_to_json(const SyntheticSpec& spec) { return spec_json(spec).dump(2) + "\n"; }

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kTestIid: return "test_iid";
    case Split::kTestCounter: return "test_counter";
  }
  return "unknown";
}

bool Dataset::has_oracle() const {
  return answers.has_value() &&
         std::all_of(samples.begin(), samples.end(),
                     [](const Sample& s) { return s.concept_id.has_value(); });
}

std::size_t Dataset::num_question_types() const {
  std::size_t t = 0;
  for (const auto& s : samples) t = std::max(t, s.question_type + 1);
  return t;
}

SyntheticData generate(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticData data;
  data.prototypes = draw_prototypes(spec);
  data.table = draw_table(spec);

  auto code_rng = stream(spec.seed, kCodes);
  std::vector<Vector> question_codes;
  for (std::size_t t = 0; t < spec.num_question_types; ++t) {
    question_codes.push_back(one_hot_code(spec.question_dim, t, spec.noise_sigma, code_rng));
  }
  std::vector<Vector> answer_codes;
  for (std::size_t a = 0; a < spec.num_answers; ++a) {
    answer_codes.push_back(one_hot_code(spec.answer_dim, a, spec.noise_sigma, code_rng));
  }

  // Distinct majority concepts per question type while they last.
  auto major_rng = stream(spec.seed, kMajority);
  std::vector<std::size_t> order(spec.num_concepts);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), major_rng);
  for (std::size_t t = 0; t < spec.num_question_types; ++t) {
    data.majority_concept.push_back(order[t % spec.num_concepts]);
    data.counter_concept.push_back((data.majority_concept.back() + 1) % spec.num_concepts);
  }

  auto biased_split = [&](Split split, std::size_t n, std::uint32_t purpose) {
    auto rng = stream(spec.seed, purpose);
    std::bernoulli_distribution shortcut(spec.bias_strength);
    Dataset ds{split, {}, data.table};
    ds.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t t = uniform_index(rng, spec.num_question_types);
      const std::size_t c = shortcut(rng) ? data.majority_concept[t]
                                          : uniform_index(rng, spec.num_concepts);
      ds.samples.push_back(make_sample(spec, data, question_codes, answer_codes, c, t, rng));
    }
    return ds;
  };
  data.train = biased_split(Split::kTrain, spec.n_train, kTrainStream);
  data.test_iid = biased_split(Split::kTestIid, spec.n_test_iid, kIidStream);

  // Counter split: the majority answer never appears; the shifted concept
  // takes over the shortcut role.
  auto rng = stream(spec.seed, kCounterStream);
  std::bernoulli_distribution shifted(spec.bias_strength);
  data.test_counter = Dataset{Split::kTestCounter, {}, data.table};
  data.test_counter.samples.reserve(spec.n_test_counter);
  for (std::size_t i = 0; i < spec.n_test_counter; ++i) {
    const std::size_t t = uniform_index(rng, spec.num_question_types);
    const auto candidates = counter_candidates(data, t);
    if (candidates.empty()) {
      throw Error(ErrorCode::kInvalidSpec,
                  "question type " + std::to_string(t) + " has no counter-example concepts");
    }
    const std::size_t preferred = data.counter_concept[t];
    const bool preferred_ok =
        std::find(candidates.begin(), candidates.end(), preferred) != candidates.end();
    const bool take_preferred = shifted(rng) && preferred_ok;
    const std::size_t c = take_preferred ? preferred : candidates[uniform_index(rng, candidates.size())];
    data.test_counter.samples.push_back(
        make_sample(spec, data, question_codes, answer_codes, c, t, rng));
  }
  return data;
}

bool oracle_false_negative(const Dataset& dataset, const Sample& anchor, const Sample& candidate) {
  if (!anchor.concept_id || !candidate.concept_id || !dataset.answers) {
    throw Error(ErrorCode::kOracleUnavailable, "dataset carries no concept oracle");
  }
  if (*anchor.concept_id == *candidate.concept_id) return true;
  const std::size_t want = dataset.answers->at(*anchor.concept_id, anchor.question_type);
  const std::size_t got = dataset.answers->at(*candidate.concept_id, anchor.question_type);
  return want != AnswerTable::kUnknown && want == got;
}

namespace {

json sample_json(const Sample& s) {
  json j{{"image_feat", s.image_feat},
         {"question_feat", s.question_feat},
         {"answer_feat", s.answer_feat},
         {"answer_id", s.answer_id},
         {"question_type", s.question_type}};
  j["concept"] = s.concept_id ? json(*s.concept_id) : json(nullptr);
  return j;
}

std::size_t read_index(const json& obj, const char* key) {
  const json& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw json::type_error::create(302, std::string(key) + " must be a non-negative integer", &v);
  }
  return v.get<std::size_t>();
}

void check_dim(std::size_t& expected, std::size_t got, const char* what, std::size_t line) {
  if (expected == 0) {
    expected = got;
  } else if (expected != got) {
    throw Error(ErrorCode::kDimensionMismatch,
                "line " + std::to_string(line) + ": " + what + " has " + std::to_string(got) +
                    " entries, expected " + std::to_string(expected));
  }
}

// Adds observed (concept, qtype) -> answer pairs to `table`, growing it.
void merge_observed(AnswerTable& table, const Dataset& ds) {
  std::size_t c_count = table.num_concepts();
  std::size_t t_count = table.num_question_types();
  for (const auto& s : ds.samples) {
    c_count = std::max(c_count, *s.concept_id + 1);
    t_count = std::max(t_count, s.question_type + 1);
  }
  if (c_count != table.num_concepts() || t_count != table.num_question_types()) {
    AnswerTable grown(c_count, t_count);
    for (std::size_t c = 0; c < table.num_concepts(); ++c) {
      for (std::size_t t = 0; t < table.num_question_types(); ++t) {
        if (table.at(c, t) != AnswerTable::kUnknown) grown.set(c, t, table.at(c, t));
      }
    }
    table = std::move(grown);
  }
  for (const auto& s : ds.samples) {
    const std::size_t known = table.at(*s.concept_id, s.question_type);
    if (known == AnswerTable::kUnknown) {
      table.set(*s.concept_id, s.question_type, s.answer_id);
    } else if (known != s.answer_id) {
      throw Error(ErrorCode::kParseError, "inconsistent answers for concept " +
                                              std::to_string(*s.concept_id) + ", question type " +
                                              std::to_string(s.question_type));
    }
  }
}

bool all_have_concepts(const Dataset& ds) {
  return !ds.samples.empty() && std::all_of(ds.samples.begin(), ds.samples.end(), [](const Sample& s) {
    return s.concept_id.has_value();
  });
}

}  // namespace

void save_jsonl(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  for (const auto& s : dataset.samples) out << sample_json(s).dump() << '\n';
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

Dataset load_jsonl(const std::filesystem::path& path, Split split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  Dataset ds{split, {}, std::nullopt};
  std::size_t image_dim = 0;
  std::size_t question_dim = 0;
  std::size_t answer_dim = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Sample s;
    try {
      const json j = json::parse(line);
      if (!j.is_object()) throw json::type_error::create(302, "line is not an object", &j);
      s.image_feat = j.at("image_feat").get<Vector>();
      s.question_feat = j.at("question_feat").get<Vector>();
      s.answer_feat = j.at("answer_feat").get<Vector>();
      s.answer_id = read_index(j, "answer_id");
      s.question_type = read_index(j, "question_type");
      if (j.contains("concept") && !j["concept"].is_null()) s.concept_id = read_index(j, "concept");
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParseError,
                  path.filename().string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
    check_dim(image_dim, s.image_feat.size(), "image_feat", line_no);
    check_dim(question_dim, s.question_feat.size(), "question_feat", line_no);
    check_dim(answer_dim, s.answer_feat.size(), "answer_feat", line_no);
    if (image_dim == 0 || question_dim == 0 || answer_dim == 0) {
      throw Error(ErrorCode::kDimensionMismatch, "line " + std::to_string(line_no) + ": empty feature vector");
    }
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw Error(ErrorCode::kEmptyDataset, path.string() + " has no samples");
  if (all_have_concepts(ds)) {
    AnswerTable table;
    merge_observed(table, ds);
    ds.answers = std::move(table);
  }
  return ds;
}

std::vector<std::vector<std::size_t>> answer_histogram(const Dataset& dataset,
                                                       std::size_t num_question_types,
                                                       std::size_t num_answers) {
  std::vector<std::vector<std::size_t>> h(num_question_types, std::vector<std::size_t>(num_answers, 0));
  for (const auto& s : dataset.samples) {
    if (s.question_type < num_question_types && s.answer_id < num_answers) {
      ++h[s.question_type][s.answer_id];
    }
  }
  return h;
}

void write_dataset_dir(const SyntheticSpec& spec, const SyntheticData& data,
                       const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir.string() + ": " + ec.message());

  json table = json::array();
  for (std::size_t c = 0; c < data.table.num_concepts(); ++c) {
    json row = json::array();
    for (std::size_t t = 0; t < data.table.num_question_types(); ++t) row.push_back(data.table.at(c, t));
    table.push_back(std::move(row));
  }
  json splits = json::object();
  for (const Dataset* ds : {&data.train, &data.test_iid, &data.test_counter}) {
    const std::string name(to_string(ds->split));
    save_jsonl(*ds, dir / (name + ".jsonl"));
    const auto per_type = answer_histogram(*ds, spec.num_question_types, spec.num_answers);
    std::vector<std::size_t> overall(spec.num_answers, 0);
    for (const auto& row : per_type) {
      for (std::size_t a = 0; a < row.size(); ++a) overall[a] += row[a];
    }
    splits[name] = json{{"file", name + ".jsonl"},
                        {"count", ds->size()},
                        {"answer_histogram", overall},
                        {"per_question_type_answer_histogram", per_type}};
  }
  json manifest{{"format", "cmcl-dataset-v1"},
                {"spec", spec_json(spec)},
                {"answer_table", std::move(table)},
                {"majority_concept", data.majority_concept},
                {"counter_concept", data.counter_concept},
                {"splits", std::move(splits)}};
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

DataSplits load_dataset_dir(const std::filesystem::path& dir) {
  DataSplits splits{load_jsonl(dir / "train.jsonl", Split::kTrain),
                    load_jsonl(dir / "test_iid.jsonl", Split::kTestIid),
                    load_jsonl(dir / "test_counter.jsonl", Split::kTestCounter)};
  std::optional<AnswerTable> table;
  const auto manifest_path = dir / "manifest.json";
  if (std::filesystem::exists(manifest_path)) {
    std::ifstream in(manifest_path, std::ios::binary);
    try {
      const json manifest = json::parse(in);
      if (manifest.contains("answer_table")) {
        const auto rows = manifest["answer_table"].get<std::vector<std::vector<std::size_t>>>();
        if (!rows.empty()) {
          AnswerTable t(rows.size(), rows[0].size());
          for (std::size_t c = 0; c < rows.size(); ++c) {
            if (rows[c].size() != rows[0].size()) {
              throw Error(ErrorCode::kParseError, "manifest answer_table is ragged");
            }
            for (std::size_t q = 0; q < rows[c].size(); ++q) t.set(c, q, rows[c][q]);
          }
          table = std::move(t);
        }
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParseError, std::string("manifest.json: ") + e.what());
    }
  }
  Dataset* all[] = {&splits.train, &splits.test_iid, &splits.test_counter};
  if (!table && std::all_of(std::begin(all), std::end(all), [](const Dataset* d) {
        return all_have_concepts(*d);
      })) {
    AnswerTable merged;
    for (const Dataset* d : all) merge_observed(merged, *d);
    table = std::move(merged);
  }
  for (Dataset* d : all) {
    d->answers = all_have_concepts(*d) ? table : std::nullopt;
  }
  const std::size_t image_dim = splits.train.samples[0].image_feat.size();
  const std::size_t question_dim = splits.train.samples[0].question_feat.size();
  const std::size_t answer_dim = splits.train.samples[0].answer_feat.size();
  for (const Dataset* d : all) {
    const Sample& s = d->samples[0];
    if (s.image_feat.size() != image_dim || s.question_feat.size() != question_dim ||
        s.answer_feat.size() != answer_dim) {
      throw Error(ErrorCode::kDimensionMismatch,
                  std::string(to_string(d->split)) + " feature dimensions differ from train");
    }
  }
  return splits;
}

}  // namespace cmcl
