#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vqaforge/sequence.hpp"
#include "vqaforge/tensor.hpp"

namespace vqaforge {

// Lowercase, replace !"#$%&()*+,-./:;<=>?@[\]^_`{|}~ by spaces, split on
// whitespace, drop empties. Numerals stay verbatim.
std::vector<std::string> tokenize(std::string_view raw);

// Frequency-ranked word <-> index mapping. Index 0 is the padding sentinel,
// index 1 the unknown-word sentinel; everything else is ranked by corpus
// frequency, ties broken by first occurrence.
class Vocabulary {
 public:
  static constexpr const char* kPadWord = "<pad>";
  static constexpr const char* kUnkWord = "<unk>";

  // target_size counts the two sentinels; needs >= 3. Keeps the
  // target_size - 2 most frequent tokens of the tokenized corpus.
  static Vocabulary build(const std::vector<std::string>& corpus, Index target_size);

  Index size() const { return static_cast<Index>(words_.size()); }

  // Unknown words map to the UNK index.
  std::int32_t index_of(std::string_view word) const;
  bool contains(std::string_view word) const;

  // Inverse lookup; the sentinels decode to "<pad>" and "<unk>".
  const std::string& decode(Index index) const;

  // One word per line, line number = index (lines 0 and 1 are sentinels).
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  // Encodes tokens into a fixed-length row: unknown tokens become UNK,
  // longer sequences keep their last maxlen tokens, shorter ones are
  // left-padded with 0.
  std::vector<std::int32_t> encode(const std::vector<std::string>& tokens, Index maxlen) const;

 private:
  Vocabulary() = default;
  void push_word(std::string word);

  std::vector<std::string> words_;
  std::unordered_map<std::string, std::int32_t> index_;
};

template <typename Scalar>
Tensor<Scalar> one_hot(const Vocabulary& vocab, std::string_view word) {
  Tensor<Scalar> v({vocab.size()});
  v(vocab.index_of(word)) = Scalar(1);
  return v;
}

}  // namespace vqaforge
