#pragma once

// Shared fixtures for tests: a memorizable synthetic VQA task and a
// bAbI-format story generator in the documented line format.

#include <string>
#include <vector>

#include "vqaforge/datasets.hpp"
#include "vqaforge/models.hpp"
#include "vqaforge/rng.hpp"

namespace vqaforge::testsupport {

struct SyntheticVQA {
  FeatureStore store;
  std::vector<VQASample> samples;
  ModelConfig config;  // scaled-down sentence-embedding model
};

// n_images x n_questions samples over a small vocabulary. Question token
// rows repeat across images, features are fixed per image, and the answer is
// a deterministic function of the (image, question) pair, so the task is
// memorizable only by combining both inputs.
inline SyntheticVQA make_synthetic_vqa(Index n_images, Index n_questions, Index vocab_size,
                                       Index feature_dim, Index maxlen, std::uint64_t seed) {
  SyntheticVQA data;
  Rng rng(seed);

  for (Index i = 0; i < n_images; ++i) {
    std::vector<float> vec(static_cast<std::size_t>(feature_dim));
    for (float& v : vec) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    data.store.insert(i + 1, vec);
  }

  std::vector<std::vector<std::int32_t>> question_rows;
  for (Index q = 0; q < n_questions; ++q) {
    std::vector<std::int32_t> row(static_cast<std::size_t>(maxlen), 0);
    Index len = 2 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(maxlen - 1)));
    for (Index t = maxlen - len; t < maxlen; ++t)
      row[static_cast<std::size_t>(t)] =
          static_cast<std::int32_t>(2 + rng.below(static_cast<std::uint64_t>(vocab_size - 2)));
    question_rows.push_back(std::move(row));
  }

  for (Index i = 0; i < n_images; ++i)
    for (Index q = 0; q < n_questions; ++q) {
      VQASample s;
      s.question_id = i * n_questions + q + 1;
      s.image_id = i + 1;
      s.question_tokens = question_rows[static_cast<std::size_t>(q)];
      s.target = static_cast<std::int32_t>(2 + (i * n_questions + q) % (vocab_size - 2));
      s.answer_type = AnswerType::kOther;
      data.samples.push_back(std::move(s));
    }

  ModelConfig cfg;
  cfg.architecture = Architecture::kVqaSentence;
  cfg.merge_mode = MergeMode::kSum;
  cfg.vocab_size = vocab_size;
  cfg.maxlen = maxlen;
  cfg.embed_dim = 16;
  cfg.lstm_units = 32;
  cfg.projection_dim = 32;
  cfg.visual_dim = feature_dim;
  cfg.dropout_rate = 0.5;
  data.config = cfg;
  return data;
}

// bAbI task-1 style generator: two-statement rounds of people moving between
// locations, a where-question after each round, numbering reset every
// rounds_per_story questions. Answers are the current location of the asked
// person.
inline std::string generate_babi_qa1(int n_questions, std::uint64_t seed,
                                     int rounds_per_story = 5) {
  static const char* people[] = {"Mary", "John", "Daniel", "Sandra"};
  static const char* places[] = {"bathroom", "hallway", "garden", "office", "bedroom",
                                 "kitchen"};
  static const char* moves[] = {"moved to the", "went to the", "journeyed to the",
                                "travelled to the", "went back to the"};
  Rng rng(seed);
  std::string out;
  int asked = 0;
  while (asked < n_questions) {
    int line = 1;
    int last_line[4] = {0, 0, 0, 0};
    int location[4] = {-1, -1, -1, -1};
    for (int round = 0; round < rounds_per_story && asked < n_questions; ++round) {
      for (int s = 0; s < 2; ++s) {
        int p = static_cast<int>(rng.below(4));
        int loc = static_cast<int>(rng.below(6));
        location[p] = loc;
        last_line[p] = line;
        out += std::to_string(line++) + " " + people[p] + " " +
               moves[rng.below(5)] + " " + places[loc] + ".\n";
      }
      int p;
      do {
        p = static_cast<int>(rng.below(4));
      } while (location[p] < 0);
      out += std::to_string(line++) + " Where is " + people[p] + "?\t" +
             places[location[p]] + "\t" + std::to_string(last_line[p]) + "\n";
      ++asked;
    }
  }
  return out;
}

}  // namespace vqaforge::testsupport
