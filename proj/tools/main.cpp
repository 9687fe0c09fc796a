// vqaforge command line: train / predict / evaluate VQA models, run the
// gradient-check harness, and train the text-QA model on bAbI-format data.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vqaforge/datasets.hpp"
#include "vqaforge/evalmetric.hpp"
#include "vqaforge/gradcheck_suite.hpp"
#include "vqaforge/models.hpp"
#include "vqaforge/optim.hpp"
#include "vqaforge/text.hpp"

namespace fs = std::filesystem;
using namespace vqaforge;

namespace {

// Exit codes, one family per error class.
constexpr int kExitValue = 2;
constexpr int kExitMissingFile = 3;
constexpr int kExitFormat = 4;
constexpr int kExitConsistency = 5;
constexpr int kExitCompatibility = 6;
constexpr int kExitDivergence = 7;
constexpr int kExitInternal = 8;

void require_input(const std::string& path, const char* what) {
  if (!fs::exists(path))
    throw NotFoundError(std::string(what) + " file does not exist: " + path);
}

// Table of model presets: architecture, learning rate, batch norm.
struct ModelPreset {
  Architecture architecture;
  double lr;
  bool batch_norm;
};

ModelPreset preset_for_tag(int tag) {
  switch (tag) {
    case 1: return {Architecture::kVqaConcat, 0.001, false};
    case 2: return {Architecture::kVqaConcat, 0.001, true};
    case 3: return {Architecture::kVqaConcat, 0.0001, false};  // model 1 at lr/10
    case 4: return {Architecture::kVqaSentence, 0.0001, false};
    case 5: return {Architecture::kVqaSentence, 0.0001, true};
    default:
      throw ValueError("model tag must be 1..5, got " + std::to_string(tag));
  }
}

ModelConfig config_for_tag(int tag, Index vocab_size, Index maxlen, Index visual_dim) {
  ModelPreset p = preset_for_tag(tag);
  ModelConfig c;
  c.architecture = p.architecture;
  c.batch_norm = p.batch_norm;
  c.vocab_size = vocab_size;
  c.maxlen = maxlen;
  c.visual_dim = visual_dim;
  c.embed_dim = 100;
  c.dropout_rate = 0.5;
  if (p.architecture == Architecture::kVqaConcat) {
    c.merge_mode = MergeMode::kConcat;
    c.lstm_units = 100;
  } else {
    c.merge_mode = MergeMode::kSum;
    c.lstm_units = 256;
    c.projection_dim = 256;
  }
  return c;
}

Vocabulary load_or_build_vocab(const std::string& path, const std::vector<Question>& questions,
                               const std::vector<Annotation>* annotations, Index vocab_size) {
  if (!path.empty() && fs::exists(path)) {
    std::cout << "loading vocabulary from " << path << "\n";
    return Vocabulary::load(path);
  }
  std::vector<std::string> corpus;
  corpus.reserve(questions.size() + (annotations ? annotations->size() : 0));
  for (const Question& q : questions) corpus.push_back(q.text);
  if (annotations)
    for (const Annotation& a : *annotations) corpus.push_back(a.canonical_answer);
  Vocabulary vocab = Vocabulary::build(corpus, vocab_size);
  if (!path.empty()) {
    vocab.save(path);
    std::cout << "built vocabulary of " << vocab.size() << " words, saved to " << path << "\n";
  }
  return vocab;
}

struct TrainArgs {
  int model = 4;
  std::string questions, annotations, features, vocab, weights, log;
  std::string val_questions, val_annotations;
  double val_into_train = 0.0;
  int epochs = 10;
  double lr = -1.0;  // <0 means: use the model preset
  Index batch = 32;
  std::uint64_t seed = 42;
  double dropout = -1.0;
  Index vocab_size = 20000;
  Index maxlen = 22;
  std::string answer_reduction = "first-token";
};

int cmd_train(const TrainArgs& a) {
  require_input(a.questions, "questions");
  require_input(a.annotations, "annotations");
  require_input(a.features, "features");
  if (!a.val_questions.empty()) require_input(a.val_questions, "validation questions");
  if (!a.val_annotations.empty()) require_input(a.val_annotations, "validation annotations");
  if (a.val_questions.empty() != a.val_annotations.empty())
    throw ValueError("--val-questions and --val-annotations must be given together");
  if (a.val_into_train > 0.0 && a.val_questions.empty())
    throw ValueError("--val-into-train needs a validation split to draw from");

  AnswerReduction reduction = a.answer_reduction == "skip" ? AnswerReduction::kSkip
                                                           : AnswerReduction::kFirstToken;

  std::vector<Question> questions = load_questions(a.questions);
  std::vector<Annotation> annotations = load_annotations(a.annotations);
  FeatureStore features = FeatureStore::load(a.features);
  std::cout << "loaded " << questions.size() << " questions, " << annotations.size()
            << " annotations, " << features.count() << " feature vectors (dim "
            << features.dim() << ")\n";

  Vocabulary vocab = load_or_build_vocab(a.vocab, questions, &annotations, a.vocab_size);

  VQAData train_data = assemble(questions, &annotations, features, vocab, a.maxlen, reduction);
  std::printf("assembled %zu training samples (mean answer length %.2f words)\n",
              train_data.samples.size(), train_data.mean_answer_word_count);

  std::vector<VQASample> val_samples;
  if (!a.val_questions.empty()) {
    std::vector<Question> vq = load_questions(a.val_questions);
    std::vector<Annotation> va = load_annotations(a.val_annotations);
    VQAData val_data = assemble(vq, &va, features, vocab, a.maxlen, reduction);
    val_samples = std::move(val_data.samples);
    if (a.val_into_train > 0.0) {
      auto [tr, vl] =
          split_plan(std::move(train_data.samples), std::move(val_samples), a.val_into_train, a.seed);
      train_data.samples = std::move(tr);
      val_samples = std::move(vl);
      std::cout << "split plan: " << train_data.samples.size() << " train / "
                << val_samples.size() << " validation\n";
    }
  }

  ModelConfig cfg = config_for_tag(a.model, vocab.size(), a.maxlen, features.dim());
  if (a.dropout >= 0.0) cfg.dropout_rate = a.dropout;
  ModelGraph<float> model = ModelGraph<float>::build(cfg, a.seed);

  VQABatchSource<float> train_source(train_data.samples, features);
  std::optional<VQABatchSource<float>> val_source;
  if (!val_samples.empty()) val_source.emplace(val_samples, features);

  TrainOptions opts;
  opts.epochs = a.epochs;
  opts.lr = a.lr >= 0.0 ? a.lr : preset_for_tag(a.model).lr;
  opts.batch_size = a.batch;
  opts.seed = a.seed;
  opts.on_epoch_end = [&](int epoch, const TrainLog& log) {
    const EpochRecord& r = log.epochs.back();
    std::printf("epoch %d/%d  train %.4f  val %.4f  %lds\n", epoch, a.epochs, r.train_loss,
                r.val_loss, r.seconds);
    std::fflush(stdout);
    return false;
  };

  TrainLog log = train(model, train_source, val_source ? &*val_source : nullptr, opts);
  log.write_csv(a.log);
  model.save_weights(a.weights);
  std::cout << "wrote " << a.weights << " and " << a.log << "\n";
  return 0;
}

struct PredictArgs {
  int model = 4;
  std::string questions, features, vocab, weights, results;
  Index batch = 32;
};

int cmd_predict(const PredictArgs& a) {
  require_input(a.questions, "questions");
  require_input(a.features, "features");
  require_input(a.vocab, "vocabulary");
  require_input(a.weights, "weights");

  Vocabulary vocab = Vocabulary::load(a.vocab);
  FeatureStore features = FeatureStore::load(a.features);
  std::vector<Question> questions = load_questions(a.questions);

  ModelGraph<float> model = ModelGraph<float>::load_weights(a.weights);
  ModelPreset preset = preset_for_tag(a.model);
  ModelConfig expected = model.config();
  expected.architecture = preset.architecture;
  expected.batch_norm = preset.batch_norm;
  expected.vocab_size = vocab.size();
  check_compatible(expected, model.config());
  if (features.dim() != model.config().visual_dim)
    throw DimensionError("features have dimension " + std::to_string(features.dim()) +
                         ", model expects " + std::to_string(model.config().visual_dim));

  // Coverage check up front, listing every missing image.
  std::vector<std::int64_t> missing;
  for (const Question& q : questions)
    if (!features.contains(q.image_id)) missing.push_back(q.image_id);
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
    std::string msg = "feature store misses image_ids:";
    for (std::int64_t id : missing) msg += " " + std::to_string(id);
    throw ConsistencyError(msg);
  }

  VQAData data = assemble(questions, nullptr, features, vocab, model.config().maxlen);
  VQABatchSource<float> source(data.samples, features);

  std::vector<ResultRecord> records;
  records.reserve(data.samples.size());
  Index unk = 0;
  std::vector<Index> indices(data.samples.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = static_cast<Index>(i);
  for (Index start = 0; start < source.size(); start += a.batch) {
    Index len = std::min<Index>(a.batch, source.size() - start);
    std::span<const Index> span(indices.data() + start, static_cast<std::size_t>(len));
    Batch<float> batch = source.gather(span);
    PredictOutcome out = predict(model, batch, vocab);
    unk += out.unk_count;
    for (Index r = 0; r < len; ++r)
      records.push_back({data.samples[static_cast<std::size_t>(start + r)].question_id,
                         out.answers[static_cast<std::size_t>(r)]});
  }
  write_results(records, a.results);
  std::cout << "wrote " << records.size() << " answers to " << a.results << " (" << unk
            << " <unk>)\n";
  return 0;
}

struct EvaluateArgs {
  std::string results, annotations, metric = "exact", report;
};

int cmd_evaluate(const EvaluateArgs& a) {
  require_input(a.results, "results");
  require_input(a.annotations, "annotations");
  std::vector<ResultRecord> results = read_results(a.results);
  if (results.empty()) throw ValueError("results file " + a.results + " holds no records");
  std::vector<Annotation> annotations = load_annotations(a.annotations);
  EvalReport report = evaluate(results, annotations, parse_metric_variant(a.metric));
  std::cout << format_report_table(report);
  if (!a.report.empty()) {
    std::ofstream out(a.report, std::ios::binary);
    if (!out) throw FormatError("cannot open " + a.report + " for writing");
    out << report_json(report, true) << '\n';
    std::cout << "report written to " << a.report << "\n";
  }
  return 0;
}

int cmd_gradcheck(const std::string& corrupt) {
  auto t0 = std::chrono::steady_clock::now();
  std::vector<GradCheckEntry> entries = run_layer_gradient_checks(99, corrupt);
  std::vector<GradCheckEntry> model_entries = run_model_gradient_checks(7, corrupt);
  entries.insert(entries.end(), model_entries.begin(), model_entries.end());
  bool all_ok = true;
  std::printf("%-44s %12s  %s\n", "parameter group", "max rel err", "status");
  for (const GradCheckEntry& e : entries) {
    bool ok = e.pass();
    all_ok = all_ok && ok;
    std::printf("%-44s %12.3e  %s\n", e.name.c_str(), e.max_rel_error, ok ? "ok" : "FAIL");
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%zu checks in %.1fs: %s\n", entries.size(), secs, all_ok ? "all ok" : "FAILURES");
  return all_ok ? 0 : 1;
}

struct BabiArgs {
  std::string data, weights, log, vocab;
  int epochs = 100;
  double lr = 0.001;
  Index batch = 32;
  std::uint64_t seed = 42;
  Index embed_dim = 100;
  Index vocab_size = 20000;
  double dropout = 0.3;
};

int cmd_babi_train(const BabiArgs& a) {
  require_input(a.data, "babi data");
  std::vector<BabiTriple> triples = load_babi(a.data);
  if (triples.empty()) throw FormatError("babi: " + a.data + " holds no samples");
  std::cout << "loaded " << triples.size() << " samples\n";

  Index story_maxlen = 1, question_maxlen = 1;
  std::vector<std::string> corpus;
  for (const BabiTriple& t : triples) {
    story_maxlen = std::max<Index>(story_maxlen, static_cast<Index>(t.story_tokens.size()));
    question_maxlen =
        std::max<Index>(question_maxlen, static_cast<Index>(t.question_tokens.size()));
    std::string text;
    for (const std::string& w : t.story_tokens) text += w + " ";
    for (const std::string& w : t.question_tokens) text += w + " ";
    text += t.answer;
    corpus.push_back(std::move(text));
  }
  Vocabulary vocab = [&] {
    if (!a.vocab.empty() && fs::exists(a.vocab)) return Vocabulary::load(a.vocab);
    Vocabulary v = Vocabulary::build(corpus, a.vocab_size);
    if (!a.vocab.empty()) v.save(a.vocab);
    return v;
  }();
  std::cout << "vocabulary " << vocab.size() << " words, story length " << story_maxlen
            << ", question length " << question_maxlen << "\n";

  ModelConfig cfg;
  cfg.architecture = Architecture::kTextQA;
  cfg.merge_mode = MergeMode::kSum;
  cfg.vocab_size = vocab.size();
  cfg.maxlen = question_maxlen;
  cfg.story_maxlen = story_maxlen;
  cfg.embed_dim = a.embed_dim;
  cfg.lstm_units = a.embed_dim;  // sum merge needs equal widths
  cfg.dropout_rate = a.dropout;
  ModelGraph<float> model = build_text_qa<float>(cfg, a.seed);

  BabiBatchSource<float> source(triples, vocab, story_maxlen, question_maxlen);
  TrainOptions opts;
  opts.epochs = a.epochs;
  opts.lr = a.lr;
  opts.batch_size = a.batch;
  opts.seed = a.seed;
  opts.on_epoch_end = [&](int epoch, const TrainLog& log) {
    const EpochRecord& r = log.epochs.back();
    std::printf("epoch %d/%d  train %.4f  %lds\n", epoch, a.epochs, r.train_loss, r.seconds);
    std::fflush(stdout);
    return false;
  };
  TrainLog log = train<float>(model, source, nullptr, opts);
  if (!a.log.empty()) log.write_csv(a.log);
  if (!a.weights.empty()) model.save_weights(a.weights);
  std::printf("training answer accuracy: %.2f%%\n", 100.0 * answer_accuracy(model, source));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vqaforge: LSTM question answering on text and image features"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "",
                 "key=value config file with one [subcommand] section per command; "
                 "flags override it");

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "train a VQA model");
  train_cmd->add_option("--model", train_args.model, "model preset 1..5")->default_val(4);
  train_cmd->add_option("--questions", train_args.questions, "questions JSON")->required();
  train_cmd->add_option("--annotations", train_args.annotations, "annotations JSON")->required();
  train_cmd->add_option("--features", train_args.features, "feature store (jsonl or VQAF)")
      ->required();
  train_cmd->add_option("--vocab", train_args.vocab,
                        "vocabulary file (built from the training data when absent)");
  train_cmd->add_option("--weights", train_args.weights, "output weight file")->required();
  train_cmd->add_option("--log", train_args.log, "output loss CSV")->required();
  train_cmd->add_option("--val-questions", train_args.val_questions, "validation questions");
  train_cmd->add_option("--val-annotations", train_args.val_annotations,
                        "validation annotations");
  train_cmd->add_option("--val-into-train", train_args.val_into_train,
                        "fraction of the validation split moved into training");
  train_cmd->add_option("--epochs", train_args.epochs)->default_val(10);
  train_cmd->add_option("--lr", train_args.lr, "learning rate (default: model preset)");
  train_cmd->add_option("--batch", train_args.batch)->default_val(32);
  train_cmd->add_option("--seed", train_args.seed)->default_val(42);
  train_cmd->add_option("--dropout", train_args.dropout, "dropout rate (default 0.5)");
  train_cmd->add_option("--vocab-size", train_args.vocab_size)->default_val(20000);
  train_cmd->add_option("--maxlen", train_args.maxlen, "question length")->default_val(22);
  train_cmd->add_option("--answer-reduction", train_args.answer_reduction,
                        "first-token or skip (multi-word answers)")
      ->check(CLI::IsMember({"first-token", "skip"}));

  PredictArgs predict_args;
  CLI::App* predict_cmd = app.add_subcommand("predict", "write answers for a question set");
  predict_cmd->add_option("--model", predict_args.model, "model preset 1..5")->default_val(4);
  predict_cmd->add_option("--questions", predict_args.questions)->required();
  predict_cmd->add_option("--features", predict_args.features)->required();
  predict_cmd->add_option("--vocab", predict_args.vocab)->required();
  predict_cmd->add_option("--weights", predict_args.weights)->required();
  predict_cmd->add_option("--results", predict_args.results, "output results JSON")->required();
  predict_cmd->add_option("--batch", predict_args.batch)->default_val(32);

  EvaluateArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "score a results file");
  eval_cmd->add_option("--results", eval_args.results)->required();
  eval_cmd->add_option("--annotations", eval_args.annotations)->required();
  eval_cmd->add_option("--metric", eval_args.metric, "exact or script")
      ->check(CLI::IsMember({"exact", "script"}));
  eval_cmd->add_option("--report", eval_args.report, "also write a JSON report here");

  std::string corrupt;
  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  grad_cmd->add_option("--corrupt", corrupt,
                       "testing hook: corrupt analytic gradients of matching groups");

  BabiArgs babi_args;
  CLI::App* babi_cmd = app.add_subcommand("babi-train", "train the text-QA model on bAbI data");
  babi_cmd->add_option("--data", babi_args.data, "bAbI-format task file")->required();
  babi_cmd->add_option("--weights", babi_args.weights, "output weight file");
  babi_cmd->add_option("--log", babi_args.log, "output loss CSV");
  babi_cmd->add_option("--vocab", babi_args.vocab, "vocabulary file to save/reuse");
  babi_cmd->add_option("--epochs", babi_args.epochs)->default_val(100);
  babi_cmd->add_option("--lr", babi_args.lr)->default_val(0.001);
  babi_cmd->add_option("--batch", babi_args.batch)->default_val(32);
  babi_cmd->add_option("--seed", babi_args.seed)->default_val(42);
  babi_cmd->add_option("--embed-dim", babi_args.embed_dim,
                       "word embedding width == LSTM units")
      ->default_val(100);
  babi_cmd->add_option("--vocab-size", babi_args.vocab_size)->default_val(20000);
  babi_cmd->add_option("--dropout", babi_args.dropout)->default_val(0.3);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (predict_cmd->parsed()) return cmd_predict(predict_args);
    if (eval_cmd->parsed()) return cmd_evaluate(eval_args);
    if (grad_cmd->parsed()) return cmd_gradcheck(corrupt);
    if (babi_cmd->parsed()) return cmd_babi_train(babi_args);
  } catch (const NotFoundError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissingFile;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const ConsistencyError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConsistency;
  } catch (const CompatibilityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCompatibility;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const ValueError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValue;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
