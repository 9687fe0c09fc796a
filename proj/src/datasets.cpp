#include "vqaforge/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vqaforge/errors.hpp"

namespace vqaforge {

using nlohmann::json;
using nlohmann::ordered_json;

AnswerType parse_answer_type(std::string_view s) {
  if (s == "yes/no") return AnswerType::kYesNo;
  if (s == "number") return AnswerType::kNumber;
  if (s == "other") return AnswerType::kOther;
  throw FormatError("unknown answer type '" + std::string(s) + "'");
}

const char* answer_type_name(AnswerType t) {
  switch (t) {
    case AnswerType::kYesNo: return "yes/no";
    case AnswerType::kNumber: return "number";
    case AnswerType::kOther: return "other";
  }
  return "other";
}

namespace {

json parse_file(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(std::string(what) + ": cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(std::string(what) + ": " + path + " is not valid JSON: " + e.what());
  }
  return j;
}

template <typename T>
T field(const json& rec, const char* key, const char* what, std::size_t index) {
  auto it = rec.find(key);
  if (it == rec.end())
    throw FormatError(std::string(what) + ": record " + std::to_string(index) +
                      " is missing '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw FormatError(std::string(what) + ": record " + std::to_string(index) + " field '" +
                      key + "' has the wrong type");
  }
}

}  // namespace

std::vector<Question> load_questions(const std::string& path) {
  json j = parse_file(path, "questions");
  auto it = j.find("questions");
  if (it == j.end() || !it->is_array())
    throw FormatError("questions: " + path + " has no 'questions' array");
  std::vector<Question> out;
  out.reserve(it->size());
  for (std::size_t i = 0; i < it->size(); ++i) {
    const json& rec = (*it)[i];
    Question q;
    q.question_id = field<std::int64_t>(rec, "question_id", "questions", i);
    q.image_id = field<std::int64_t>(rec, "image_id", "questions", i);
    q.text = field<std::string>(rec, "question", "questions", i);
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<Annotation> load_annotations(const std::string& path) {
  json j = parse_file(path, "annotations");
  auto it = j.find("annotations");
  if (it == j.end() || !it->is_array())
    throw FormatError("annotations: " + path + " has no 'annotations' array");
  std::vector<Annotation> out;
  out.reserve(it->size());
  for (std::size_t i = 0; i < it->size(); ++i) {
    const json& rec = (*it)[i];
    Annotation a;
    a.question_id = field<std::int64_t>(rec, "question_id", "annotations", i);
    a.image_id = field<std::int64_t>(rec, "image_id", "annotations", i);
    a.answer_type = parse_answer_type(field<std::string>(rec, "answer_type", "annotations", i));
    a.canonical_answer = field<std::string>(rec, "multiple_choice_answer", "annotations", i);
    auto ans = rec.find("answers");
    if (ans == rec.end() || !ans->is_array() || ans->size() != 10)
      throw FormatError("annotations: record " + std::to_string(i) +
                        " must carry exactly 10 answers");
    for (std::size_t k = 0; k < 10; ++k)
      a.human_answers[k] = field<std::string>((*ans)[k], "answer", "annotations", i);
    out.push_back(std::move(a));
  }
  return out;
}

// ---------------------------------------------------------------------------
// FeatureStore
// ---------------------------------------------------------------------------

Eigen::Map<const Eigen::VectorXf> FeatureStore::lookup(std::int64_t image_id) const {
  auto it = rows_.find(image_id);
  if (it == rows_.end())
    throw NotFoundError("features: image_id " + std::to_string(image_id) + " not in store");
  return Eigen::Map<const Eigen::VectorXf>(data_.data() + it->second * dim_, dim_);
}

void FeatureStore::insert(std::int64_t image_id, const std::vector<float>& features) {
  if (features.empty()) throw FormatError("features: empty vector for image_id " +
                                          std::to_string(image_id));
  if (dim_ == 0) dim_ = static_cast<Index>(features.size());
  if (static_cast<Index>(features.size()) != dim_)
    throw FormatError("features: image_id " + std::to_string(image_id) + " has dimension " +
                      std::to_string(features.size()) + ", store dimension is " +
                      std::to_string(dim_));
  for (float f : features)
    if (!std::isfinite(f))
      throw FormatError("features: non-finite value for image_id " + std::to_string(image_id));
  auto [it, inserted] = rows_.emplace(image_id, count());
  if (!inserted)
    throw FormatError("features: duplicate image_id " + std::to_string(image_id));
  ids_.push_back(image_id);
  data_.insert(data_.end(), features.begin(), features.end());
}

FeatureStore FeatureStore::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("features: cannot open " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() == 4 && std::memcmp(magic, "VQAF", 4) == 0) return load_binary(path);
  return load_jsonl(path);
}

FeatureStore FeatureStore::load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("features: cannot open " + path);
  FeatureStore store;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError("features: " + path + " line " + std::to_string(lineno) +
                        " is not valid JSON: " + e.what());
    }
    std::int64_t id = field<std::int64_t>(rec, "image_id", "features", lineno);
    std::vector<float> vec = field<std::vector<float>>(rec, "features", "features", lineno);
    store.insert(id, vec);
  }
  if (store.count() == 0) throw FormatError("features: " + path + " holds no records");
  return store;
}

namespace {

template <typename T>
void write_le(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (in.gcount() != sizeof(T)) throw FormatError("features: " + path + " is truncated");
  return v;
}

}  // namespace

FeatureStore FeatureStore::load_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("features: cannot open " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "VQAF", 4) != 0)
    throw FormatError("features: " + path + " lacks the VQAF magic");
  std::uint32_t count = read_le<std::uint32_t>(in, path);
  std::uint32_t dim = read_le<std::uint32_t>(in, path);
  if (dim == 0) throw FormatError("features: " + path + " declares dimension 0");
  FeatureStore store;
  std::vector<float> vec(dim);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint64_t id = read_le<std::uint64_t>(in, path);
    in.read(reinterpret_cast<char*>(vec.data()), static_cast<std::streamsize>(dim * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(dim * sizeof(float)))
      throw FormatError("features: " + path + " is truncated");
    store.insert(static_cast<std::int64_t>(id), vec);
  }
  return store;
}

void FeatureStore::save_jsonl(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("features: cannot open " + path + " for writing");
  for (std::int64_t id : ids_) {
    ordered_json rec;
    rec["image_id"] = id;
    auto row = lookup(id);
    std::vector<float> vec(row.data(), row.data() + row.size());
    rec["features"] = vec;
    out << rec.dump() << '\n';
  }
}

void FeatureStore::save_binary(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("features: cannot open " + path + " for writing");
  out.write("VQAF", 4);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(count()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
  for (std::int64_t id : ids_) {
    write_le<std::uint64_t>(out, static_cast<std::uint64_t>(id));
    auto row = lookup(id);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(dim_ * sizeof(float)));
  }
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

VQAData assemble(const std::vector<Question>& questions,
                 const std::vector<Annotation>* annotations, const FeatureStore& features,
                 const Vocabulary& vocab, Index maxlen, AnswerReduction reduction) {
  std::unordered_map<std::int64_t, const Annotation*> by_id;
  if (annotations) {
    by_id.reserve(annotations->size());
    for (const Annotation& a : *annotations) by_id[a.question_id] = &a;
  }

  VQAData data;
  data.samples.reserve(questions.size());
  double answer_words = 0.0;
  std::size_t answered = 0;
  for (const Question& q : questions) {
    if (!features.contains(q.image_id))
      throw ConsistencyError("assemble: question " + std::to_string(q.question_id) +
                             " references image_id " + std::to_string(q.image_id) +
                             " absent from the feature store");
    VQASample s;
    s.question_id = q.question_id;
    s.image_id = q.image_id;
    s.question_tokens = vocab.encode(tokenize(q.text), maxlen);
    if (annotations) {
      auto it = by_id.find(q.question_id);
      if (it == by_id.end())
        throw ConsistencyError("assemble: no annotation for question " +
                               std::to_string(q.question_id));
      const Annotation& a = *it->second;
      std::vector<std::string> ans_tokens = tokenize(a.canonical_answer);
      answer_words += static_cast<double>(ans_tokens.size());
      ++answered;
      if (reduction == AnswerReduction::kSkip && ans_tokens.size() != 1) continue;
      // Multi-word answers train on their first token; an empty answer
      // degenerates to UNK.
      s.target = ans_tokens.empty() ? kUnkIndex : vocab.index_of(ans_tokens.front());
      s.answer_type = a.answer_type;
    }
    data.samples.push_back(std::move(s));
  }
  data.mean_answer_word_count = answered ? answer_words / static_cast<double>(answered) : 0.0;
  return data;
}

std::pair<std::vector<VQASample>, std::vector<VQASample>> split_plan(
    std::vector<VQASample> train, std::vector<VQASample> val, double fraction_into_train,
    std::uint64_t seed) {
  if (fraction_into_train < 0.0 || fraction_into_train > 1.0)
    throw ValueError("split_plan: fraction must be in [0, 1], got " +
                     std::to_string(fraction_into_train));
  std::vector<std::size_t> order(val.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::size_t moved =
      static_cast<std::size_t>(std::llround(fraction_into_train * static_cast<double>(val.size())));
  std::vector<VQASample> kept;
  kept.reserve(val.size() - moved);
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < moved)
      train.push_back(std::move(val[order[i]]));
    else
      kept.push_back(std::move(val[order[i]]));
  }
  return {std::move(train), std::move(kept)};
}

// ---------------------------------------------------------------------------
// bAbI
// ---------------------------------------------------------------------------

std::vector<BabiTriple> load_babi(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("babi: cannot open " + path);
  std::vector<BabiTriple> out;
  std::vector<std::string> story;  // accumulated statement tokens
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::size_t sp = line.find(' ');
    long number = -1;
    if (sp != std::string::npos) {
      try {
        number = std::stol(line.substr(0, sp));
      } catch (const std::exception&) {
        number = -1;
      }
    }
    if (number < 1)
      throw FormatError("babi: line " + std::to_string(lineno) +
                        " does not start with a statement number");
    if (number == 1) story.clear();  // numbering reset starts a new story
    std::string rest = line.substr(sp + 1);
    std::size_t tab = rest.find('\t');
    if (tab == std::string::npos) {
      // Statement line: tokens join the running story.
      for (std::string& tok : tokenize(rest)) story.push_back(std::move(tok));
      continue;
    }
    // Question line: question TAB answer TAB supporting ids.
    std::string question = rest.substr(0, tab);
    std::string tail = rest.substr(tab + 1);
    std::size_t tab2 = tail.find('\t');
    std::string answer = tab2 == std::string::npos ? tail : tail.substr(0, tab2);
    std::vector<std::string> answer_tokens = tokenize(answer);
    if (answer_tokens.size() != 1)
      throw FormatError("babi: line " + std::to_string(lineno) +
                        " answer is not a single word");
    BabiTriple t;
    t.story_tokens = story;
    t.question_tokens = tokenize(question);
    if (t.question_tokens.empty())
      throw FormatError("babi: line " + std::to_string(lineno) + " has an empty question");
    t.answer = answer_tokens.front();
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace vqaforge
