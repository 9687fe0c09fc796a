#include "vqaforge/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "vqaforge/errors.hpp"

namespace vqaforge {

namespace {

constexpr std::string_view kPunctuation = "!\"#$%&()*+,-./:;<=>?@[\\]^_`{|}~";

bool is_punct(char c) { return kPunctuation.find(c) != std::string_view::npos; }

}  // namespace

std::vector<std::string> tokenize(std::string_view raw) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : raw) {
    if (is_punct(c) || std::isspace(static_cast<unsigned char>(c))) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

void Vocabulary::push_word(std::string word) {
  index_.emplace(word, static_cast<std::int32_t>(words_.size()));
  words_.push_back(std::move(word));
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus, Index target_size) {
  if (target_size < 3)
    throw ValueError("vocabulary: size must be at least 3 (two sentinels plus a word), got " +
                     std::to_string(target_size));

  struct Entry {
    std::int64_t count = 0;
    std::int64_t first_seen = 0;
  };
  std::unordered_map<std::string, Entry> counts;
  std::int64_t position = 0;
  for (const std::string& text : corpus) {
    for (std::string& tok : tokenize(text)) {
      auto [it, inserted] = counts.try_emplace(std::move(tok));
      if (inserted) it->second.first_seen = position;
      ++it->second.count;
      ++position;
    }
  }

  std::vector<std::pair<std::string, Entry>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.count != b.second.count) return a.second.count > b.second.count;
    return a.second.first_seen < b.second.first_seen;
  });

  Vocabulary v;
  v.push_word(kPadWord);
  v.push_word(kUnkWord);
  Index keep = std::min<Index>(target_size - 2, static_cast<Index>(ranked.size()));
  for (Index i = 0; i < keep; ++i) v.push_word(std::move(ranked[static_cast<std::size_t>(i)].first));
  return v;
}

std::int32_t Vocabulary::index_of(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnkIndex : it->second;
}

bool Vocabulary::contains(std::string_view word) const {
  return index_.find(std::string(word)) != index_.end();
}

const std::string& Vocabulary::decode(Index index) const {
  if (index < 0 || index >= size())
    throw BoundsError("vocabulary: index " + std::to_string(index) + " out of range [0," +
                      std::to_string(size()) + ")");
  return words_[static_cast<std::size_t>(index)];
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("vocabulary: cannot open " + path + " for writing");
  for (const std::string& w : words_) out << w << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("vocabulary: cannot open " + path);
  Vocabulary v;
  std::string line;
  while (std::getline(in, line)) v.push_word(line);
  if (v.size() < 2 || v.words_[0] != kPadWord || v.words_[1] != kUnkWord)
    throw FormatError("vocabulary: " + path + " does not start with the <pad>/<unk> sentinels");
  return v;
}

std::vector<std::int32_t> Vocabulary::encode(const std::vector<std::string>& tokens,
                                             Index maxlen) const {
  if (maxlen < 1)
    throw ValueError("encode: maxlen must be >= 1, got " + std::to_string(maxlen));
  std::vector<std::int32_t> row(static_cast<std::size_t>(maxlen), kPadIndex);
  // Over-long sequences keep their trailing tokens.
  std::size_t start = tokens.size() > static_cast<std::size_t>(maxlen)
                          ? tokens.size() - static_cast<std::size_t>(maxlen)
                          : 0;
  std::size_t n = tokens.size() - start;
  std::size_t pad = static_cast<std::size_t>(maxlen) - n;
  for (std::size_t i = 0; i < n; ++i) row[pad + i] = index_of(tokens[start + i]);
  return row;
}

}  // namespace vqaforge
