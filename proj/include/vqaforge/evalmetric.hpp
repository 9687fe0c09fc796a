#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vqaforge/datasets.hpp"

namespace vqaforge {

// Consensus scoring: a predicted answer earns min(matches/3, 1) where
// matches counts the human annotators (out of ten) who gave exactly that
// answer after normalization. The kScript variant reproduces the floor
// behaviour of the reference evaluation script, min(0.3 * matches, 1),
// whose outputs land exactly on {0, 0.3, 0.6, 0.9, 1}.
enum class MetricVariant { kExact, kScript };

MetricVariant parse_metric_variant(std::string_view s);

// Lowercase, strip surrounding punctuation per token, drop the articles
// a/an/the, map the number words zero..ten to digits, collapse whitespace.
// Idempotent.
std::string normalize_answer(std::string_view raw);

// Both sides must already be normalized; exactly ten human answers.
double question_accuracy(const std::string& predicted,
                         std::span<const std::string> human_answers, MetricVariant variant);

struct ResultRecord {
  std::int64_t question_id = 0;
  std::string answer;
};

struct EvalReport {
  struct TypeStats {
    double accuracy = 0.0;  // mean per-question accuracy in [0, 1]
    Index count = 0;
  };
  double overall = 0.0;  // mean over all scored questions
  TypeStats yes_no, number, other;
  std::vector<std::pair<std::int64_t, double>> per_question;  // (question_id, accuracy)
};

// Scores every result against its annotation and aggregates overall and per
// answer type. Unknown question ids raise ConsistencyError (listing them),
// duplicate result ids raise FormatError.
EvalReport evaluate(const std::vector<ResultRecord>& results,
                    const std::vector<Annotation>& annotations, MetricVariant variant);

// JSON array of {"question_id": ..., "answer": ...}, sorted by question id.
void write_results(const std::vector<ResultRecord>& records, const std::string& path);
std::vector<ResultRecord> read_results(const std::string& path);

// Text table with the Yes/No, Number, Other, Overall columns (percentages,
// two decimals) and a machine-readable JSON rendering of the same report.
std::string format_report_table(const EvalReport& report);
std::string report_json(const EvalReport& report, bool per_question = false);

}  // namespace vqaforge
