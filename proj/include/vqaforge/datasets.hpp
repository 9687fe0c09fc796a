#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "vqaforge/batch.hpp"
#include "vqaforge/rng.hpp"
#include "vqaforge/text.hpp"

namespace vqaforge {

enum class AnswerType { kYesNo, kNumber, kOther };

AnswerType parse_answer_type(std::string_view s);
const char* answer_type_name(AnswerType t);

struct Question {
  std::int64_t question_id = 0;
  std::int64_t image_id = 0;
  std::string text;
};

struct Annotation {
  std::int64_t question_id = 0;
  std::int64_t image_id = 0;
  AnswerType answer_type = AnswerType::kOther;
  std::string canonical_answer;                 // multiple_choice_answer
  std::array<std::string, 10> human_answers;    // exactly ten, always
};

// image_id -> fixed-dimension feature vector, O(1) lookup. Two on-disk
// forms: JSON-lines ({"image_id": ..., "features": [...]}) and a flat binary
// layout (magic "VQAF", u32 count, u32 dim, then count x (u64 id + dim f32),
// all little-endian).
class FeatureStore {
 public:
  Index dim() const { return dim_; }
  Index count() const { return static_cast<Index>(ids_.size()); }
  bool contains(std::int64_t image_id) const { return rows_.count(image_id) != 0; }

  Eigen::Map<const Eigen::VectorXf> lookup(std::int64_t image_id) const;

  void insert(std::int64_t image_id, const std::vector<float>& features);

  static FeatureStore load(const std::string& path);  // sniffs the format
  static FeatureStore load_jsonl(const std::string& path);
  static FeatureStore load_binary(const std::string& path);
  void save_jsonl(const std::string& path) const;
  void save_binary(const std::string& path) const;

 private:
  Index dim_ = 0;
  std::vector<std::int64_t> ids_;  // insertion order, for byte-stable saves
  std::unordered_map<std::int64_t, Index> rows_;
  std::vector<float> data_;  // count x dim, row-major
};

std::vector<Question> load_questions(const std::string& path);
std::vector<Annotation> load_annotations(const std::string& path);

// One encoded training/eval unit. Feature vectors stay in the store; samples
// carry the image id.
struct VQASample {
  std::int64_t question_id = 0;
  std::int64_t image_id = 0;
  std::vector<std::int32_t> question_tokens;  // encoded row, length maxlen
  std::optional<std::int32_t> target;         // absent for the test split
  std::optional<AnswerType> answer_type;
};

struct VQAData {
  std::vector<VQASample> samples;
  double mean_answer_word_count = 0.0;  // loader diagnostic
};

enum class AnswerReduction { kFirstToken, kSkip };

// Joins questions with annotations (pass nullptr for the unlabeled test
// split) and validates feature coverage. Multi-word answers train on their
// first token under kFirstToken; kSkip drops those samples.
VQAData assemble(const std::vector<Question>& questions,
                 const std::vector<Annotation>* annotations, const FeatureStore& features,
                 const Vocabulary& vocab, Index maxlen,
                 AnswerReduction reduction = AnswerReduction::kFirstToken);

// Moves a seeded random fraction of the validation samples into training;
// the remainder stays validation. Partitions exactly.
std::pair<std::vector<VQASample>, std::vector<VQASample>> split_plan(
    std::vector<VQASample> train, std::vector<VQASample> val, double fraction_into_train,
    std::uint64_t seed);

// One bAbI sample: the statements seen so far in the current story, the
// question, and its single-word answer.
struct BabiTriple {
  std::vector<std::string> story_tokens;
  std::vector<std::string> question_tokens;
  std::string answer;
};

// Parses the bAbI line format: "N statement" lines accumulate into the
// story, "N question\tanswer\tsupport" lines emit a sample, and a numbering
// reset to 1 starts a fresh story.
std::vector<BabiTriple> load_babi(const std::string& path);

// ---------------------------------------------------------------------------
// Batch sources
// ---------------------------------------------------------------------------

template <typename Scalar>
class VQABatchSource final : public BatchSource<Scalar> {
 public:
  VQABatchSource(const std::vector<VQASample>& samples, const FeatureStore& features)
      : samples_(samples), features_(features) {}

  Index size() const override { return static_cast<Index>(samples_.size()); }

  Batch<Scalar> gather(std::span<const Index> indices) const override {
    Batch<Scalar> batch;
    Index n = static_cast<Index>(indices.size());
    if (n == 0) throw ValueError("gather: empty index set");
    Index maxlen = static_cast<Index>(samples_[0].question_tokens.size());
    TokenMatrix toks(n, maxlen);
    batch.features.resize(n, features_.dim());
    batch.targets.reserve(static_cast<std::size_t>(n));
    bool any_target = false;
    for (Index r = 0; r < n; ++r) {
      const VQASample& s = samples_[static_cast<std::size_t>(indices[static_cast<std::size_t>(r)])];
      for (Index c = 0; c < maxlen; ++c)
        toks(r, c) = s.question_tokens[static_cast<std::size_t>(c)];
      batch.features.row(r) = features_.lookup(s.image_id).template cast<Scalar>().transpose();
      if (s.target) {
        batch.targets.push_back(*s.target);
        any_target = true;
      }
    }
    if (any_target && batch.targets.size() != static_cast<std::size_t>(n))
      throw ConsistencyError("gather: mixed labeled and unlabeled samples in one batch");
    batch.question = MaskedSequence::from_tokens(std::move(toks));
    return batch;
  }

 private:
  const std::vector<VQASample>& samples_;
  const FeatureStore& features_;
};

// Encoded bAbI samples for the text-QA model.
template <typename Scalar>
class BabiBatchSource final : public BatchSource<Scalar> {
 public:
  BabiBatchSource(const std::vector<BabiTriple>& triples, const Vocabulary& vocab,
                  Index story_maxlen, Index question_maxlen) {
    story_rows_.reserve(triples.size());
    question_rows_.reserve(triples.size());
    targets_.reserve(triples.size());
    for (const BabiTriple& t : triples) {
      story_rows_.push_back(vocab.encode(t.story_tokens, story_maxlen));
      question_rows_.push_back(vocab.encode(t.question_tokens, question_maxlen));
      targets_.push_back(vocab.index_of(t.answer));
    }
  }

  Index size() const override { return static_cast<Index>(targets_.size()); }

  Batch<Scalar> gather(std::span<const Index> indices) const override {
    Index n = static_cast<Index>(indices.size());
    if (n == 0) throw ValueError("gather: empty index set");
    std::vector<std::vector<std::int32_t>> story, question;
    Batch<Scalar> batch;
    for (Index r = 0; r < n; ++r) {
      std::size_t i = static_cast<std::size_t>(indices[static_cast<std::size_t>(r)]);
      story.push_back(story_rows_[i]);
      question.push_back(question_rows_[i]);
      batch.targets.push_back(targets_[i]);
    }
    batch.question = MaskedSequence::from_rows(question);
    batch.story = MaskedSequence::from_rows(story);
    return batch;
  }

 private:
  std::vector<std::vector<std::int32_t>> story_rows_, question_rows_;
  std::vector<std::int32_t> targets_;
};

}  // namespace vqaforge
