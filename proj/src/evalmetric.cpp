#include "vqaforge/evalmetric.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "vqaforge/errors.hpp"

namespace vqaforge {

using nlohmann::json;
using nlohmann::ordered_json;

MetricVariant parse_metric_variant(std::string_view s) {
  if (s == "exact") return MetricVariant::kExact;
  if (s == "script") return MetricVariant::kScript;
  throw ValueError("metric variant must be 'exact' or 'script', got '" + std::string(s) + "'");
}

namespace {

bool is_ascii_punct(char c) {
  static constexpr std::string_view punct = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";
  return punct.find(c) != std::string_view::npos;
}

const std::unordered_map<std::string_view, std::string_view>& number_words() {
  static const std::unordered_map<std::string_view, std::string_view> map = {
      {"zero", "0"}, {"one", "1"}, {"two", "2"},   {"three", "3"}, {"four", "4"},
      {"five", "5"}, {"six", "6"}, {"seven", "7"}, {"eight", "8"}, {"nine", "9"},
      {"ten", "10"},
  };
  return map;
}

// Worker count for the scoring map: hardware concurrency capped by
// VQA_FORGE_THREADS when set.
unsigned worker_count() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("VQA_FORGE_THREADS")) {
    char* end = nullptr;
    long cap = std::strtol(env, &end, 10);
    if (end != env && cap >= 1 && cap < static_cast<long>(n)) n = static_cast<unsigned>(cap);
  }
  return n;
}

}  // namespace

std::string normalize_answer(std::string_view raw) {
  std::vector<std::string> kept;
  std::string current;
  auto flush = [&] {
    if (current.empty()) return;
    std::size_t begin = 0, end = current.size();
    while (begin < end && is_ascii_punct(current[begin])) ++begin;
    while (end > begin && is_ascii_punct(current[end - 1])) --end;
    std::string tok = current.substr(begin, end - begin);
    current.clear();
    if (tok.empty()) return;
    if (tok == "a" || tok == "an" || tok == "the") return;
    auto it = number_words().find(tok);
    if (it != number_words().end()) tok = std::string(it->second);
    kept.push_back(std::move(tok));
  };
  for (char c : raw) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  std::string out;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (i) out.push_back(' ');
    out += kept[i];
  }
  return out;
}

double question_accuracy(const std::string& predicted,
                         std::span<const std::string> human_answers, MetricVariant variant) {
  if (human_answers.size() != 10)
    throw ValueError("question_accuracy: expected exactly 10 human answers, got " +
                     std::to_string(human_answers.size()));
  int matches = 0;
  for (const std::string& h : human_answers)
    if (h == predicted) ++matches;
  if (variant == MetricVariant::kExact) return std::min(static_cast<double>(matches) / 3.0, 1.0);
  // Floor variant: integer arithmetic keeps the five levels exact.
  return static_cast<double>(std::min(3 * matches, 10)) / 10.0;
}

EvalReport evaluate(const std::vector<ResultRecord>& results,
                    const std::vector<Annotation>& annotations, MetricVariant variant) {
  std::unordered_map<std::int64_t, const Annotation*> by_id;
  by_id.reserve(annotations.size());
  for (const Annotation& a : annotations) by_id[a.question_id] = &a;

  std::unordered_set<std::int64_t> seen;
  std::vector<std::int64_t> missing;
  for (const ResultRecord& r : results) {
    if (!seen.insert(r.question_id).second)
      throw FormatError("evaluate: duplicate question_id " + std::to_string(r.question_id) +
                        " in results");
    if (!by_id.count(r.question_id)) missing.push_back(r.question_id);
  }
  if (!missing.empty()) {
    std::ostringstream os;
    os << "evaluate: no annotation for question ids:";
    for (std::int64_t id : missing) os << ' ' << id;
    throw ConsistencyError(os.str());
  }

  // Pure per-question map, sharded across workers; aggregation stays
  // sequential so the report is deterministic.
  std::vector<double> acc(results.size(), 0.0);
  auto score_range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const ResultRecord& r = results[i];
      const Annotation& a = *by_id.at(r.question_id);
      std::string pred = normalize_answer(r.answer);
      std::vector<std::string> humans(a.human_answers.begin(), a.human_answers.end());
      for (std::string& h : humans) h = normalize_answer(h);
      acc[i] = question_accuracy(pred, humans, variant);
    }
  };
  unsigned workers = std::min<unsigned>(worker_count(),
                                        std::max<std::size_t>(results.size() / 256, 1));
  if (workers <= 1) {
    score_range(0, results.size());
  } else {
    std::vector<std::thread> pool;
    std::size_t chunk = (results.size() + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
      std::size_t lo = w * chunk, hi = std::min(results.size(), lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back(score_range, lo, hi);
    }
    for (std::thread& t : pool) t.join();
  }

  EvalReport rep;
  double total = 0.0;
  double sums[3] = {0, 0, 0};
  Index counts[3] = {0, 0, 0};
  rep.per_question.reserve(results.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    const Annotation& a = *by_id.at(results[i].question_id);
    total += acc[i];
    int t = static_cast<int>(a.answer_type);
    sums[t] += acc[i];
    ++counts[t];
    rep.per_question.emplace_back(results[i].question_id, acc[i]);
  }
  rep.overall = results.empty() ? 0.0 : total / static_cast<double>(results.size());
  auto fill = [&](EvalReport::TypeStats& s, AnswerType t) {
    int i = static_cast<int>(t);
    s.count = counts[i];
    s.accuracy = counts[i] ? sums[i] / static_cast<double>(counts[i]) : 0.0;
  };
  fill(rep.yes_no, AnswerType::kYesNo);
  fill(rep.number, AnswerType::kNumber);
  fill(rep.other, AnswerType::kOther);
  return rep;
}

void write_results(const std::vector<ResultRecord>& records, const std::string& path) {
  std::vector<const ResultRecord*> sorted;
  sorted.reserve(records.size());
  std::unordered_set<std::int64_t> seen;
  for (const ResultRecord& r : records) {
    if (!seen.insert(r.question_id).second)
      throw FormatError("results: duplicate question_id " + std::to_string(r.question_id));
    sorted.push_back(&r);
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const ResultRecord* a, const ResultRecord* b) {
              return a->question_id < b->question_id;
            });
  ordered_json arr = ordered_json::array();
  for (const ResultRecord* r : sorted) {
    ordered_json rec;
    rec["question_id"] = r->question_id;
    rec["answer"] = r->answer;
    arr.push_back(std::move(rec));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("results: cannot open " + path + " for writing");
  out << arr.dump(2) << '\n';
}

std::vector<ResultRecord> read_results(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("results: cannot open " + path);
  json arr;
  try {
    in >> arr;
  } catch (const json::exception& e) {
    throw FormatError("results: " + path + " is not valid JSON: " + e.what());
  }
  if (!arr.is_array()) throw FormatError("results: " + path + " is not a JSON array");
  std::vector<ResultRecord> out;
  out.reserve(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const json& rec = arr[i];
    if (!rec.is_object() || !rec.contains("question_id") || !rec.contains("answer"))
      throw FormatError("results: record " + std::to_string(i) +
                        " must carry question_id and answer");
    ResultRecord r;
    try {
      r.question_id = rec["question_id"].get<std::int64_t>();
      r.answer = rec["answer"].get<std::string>();
    } catch (const json::exception&) {
      throw FormatError("results: record " + std::to_string(i) + " has wrong field types");
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string format_report_table(const EvalReport& report) {
  char buf[256];
  std::string out;
  out += "            Yes/No    Number     Other   Overall\n";
  std::snprintf(buf, sizeof(buf), "accuracy  %8.2f  %8.2f  %8.2f  %8.2f\n",
                report.yes_no.accuracy * 100.0, report.number.accuracy * 100.0,
                report.other.accuracy * 100.0, report.overall * 100.0);
  out += buf;
  std::snprintf(buf, sizeof(buf), "count     %8lld  %8lld  %8lld  %8lld\n",
                static_cast<long long>(report.yes_no.count),
                static_cast<long long>(report.number.count),
                static_cast<long long>(report.other.count),
                static_cast<long long>(report.yes_no.count + report.number.count +
                                       report.other.count));
  out += buf;
  return out;
}

namespace {

double pct2(double fraction) { return std::round(fraction * 10000.0) / 100.0; }

}  // namespace

std::string report_json(const EvalReport& report, bool per_question) {
  ordered_json j;
  j["overall"] = pct2(report.overall);
  j["yes_no"] = pct2(report.yes_no.accuracy);
  j["number"] = pct2(report.number.accuracy);
  j["other"] = pct2(report.other.accuracy);
  ordered_json counts;
  counts["yes_no"] = report.yes_no.count;
  counts["number"] = report.number.count;
  counts["other"] = report.other.count;
  j["counts"] = std::move(counts);
  if (per_question) {
    ordered_json pq = ordered_json::array();
    for (const auto& [id, acc] : report.per_question) {
      ordered_json rec;
      rec["question_id"] = id;
      rec["accuracy"] = acc;
      pq.push_back(std::move(rec));
    }
    j["per_question"] = std::move(pq);
  }
  return j.dump(2);
}

}  // namespace vqaforge
