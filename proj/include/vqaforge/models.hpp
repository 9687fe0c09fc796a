#pragma once

#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqaforge/batch.hpp"
#include "vqaforge/layers.hpp"
#include "vqaforge/text.hpp"

namespace vqaforge {

enum class Architecture { kTextQA, kVqaConcat, kVqaSentence };
enum class MergeMode { kSum, kConcat };

inline const char* architecture_name(Architecture a) {
  switch (a) {
    case Architecture::kTextQA: return "text-qa";
    case Architecture::kVqaConcat: return "vqa-concat";
    case Architecture::kVqaSentence: return "vqa-sentence";
  }
  return "?";
}

inline Architecture parse_architecture(std::string_view s) {
  if (s == "text-qa") return Architecture::kTextQA;
  if (s == "vqa-concat") return Architecture::kVqaConcat;
  if (s == "vqa-sentence") return Architecture::kVqaSentence;
  throw ValueError("unknown architecture '" + std::string(s) + "'");
}

inline const char* merge_mode_name(MergeMode m) {
  return m == MergeMode::kSum ? "sum" : "concat";
}

inline MergeMode parse_merge_mode(std::string_view s) {
  if (s == "sum") return MergeMode::kSum;
  if (s == "concat") return MergeMode::kConcat;
  throw ValueError("unknown merge mode '" + std::string(s) + "'");
}

struct ModelConfig {
  Architecture architecture = Architecture::kVqaSentence;
  Index vocab_size = 20000;
  Index maxlen = 22;        // question length
  Index story_maxlen = 0;   // text-qa only
  Index embed_dim = 100;
  Index lstm_units = 256;
  Index visual_dim = 1024;
  Index projection_dim = 256;
  double dropout_rate = 0.5;
  MergeMode merge_mode = MergeMode::kSum;
  bool batch_norm = false;

  bool operator==(const ModelConfig&) const = default;

  // Fields that differ from `other`, for compatibility messages.
  std::vector<std::string> diff(const ModelConfig& other) const {
    std::vector<std::string> d;
    if (architecture != other.architecture) d.push_back("architecture");
    if (vocab_size != other.vocab_size) d.push_back("vocab_size");
    if (maxlen != other.maxlen) d.push_back("maxlen");
    if (story_maxlen != other.story_maxlen) d.push_back("story_maxlen");
    if (embed_dim != other.embed_dim) d.push_back("embed_dim");
    if (lstm_units != other.lstm_units) d.push_back("lstm_units");
    if (visual_dim != other.visual_dim) d.push_back("visual_dim");
    if (projection_dim != other.projection_dim) d.push_back("projection_dim");
    if (dropout_rate != other.dropout_rate) d.push_back("dropout_rate");
    if (merge_mode != other.merge_mode) d.push_back("merge_mode");
    if (batch_norm != other.batch_norm) d.push_back("batch_norm");
    return d;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["vocab_size"] = vocab_size;
    j["maxlen"] = maxlen;
    j["story_maxlen"] = story_maxlen;
    j["embed_dim"] = embed_dim;
    j["lstm_units"] = lstm_units;
    j["visual_dim"] = visual_dim;
    j["projection_dim"] = projection_dim;
    j["dropout_rate"] = dropout_rate;
    j["merge_mode"] = merge_mode_name(merge_mode);
    j["batch_norm"] = batch_norm;
    return j;
  }

  static ModelConfig from_json(Architecture arch, const nlohmann::json& j) {
    ModelConfig c;
    c.architecture = arch;
    c.vocab_size = j.at("vocab_size").get<Index>();
    c.maxlen = j.at("maxlen").get<Index>();
    c.story_maxlen = j.at("story_maxlen").get<Index>();
    c.embed_dim = j.at("embed_dim").get<Index>();
    c.lstm_units = j.at("lstm_units").get<Index>();
    c.visual_dim = j.at("visual_dim").get<Index>();
    c.projection_dim = j.at("projection_dim").get<Index>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.merge_mode = parse_merge_mode(j.at("merge_mode").get<std::string>());
    c.batch_norm = j.at("batch_norm").get<bool>();
    return c;
  }
};

// One of the three QA architectures, made of the layers above with
// hand-chained forward/backward passes. Training mode mutates per-layer
// caches, so a graph being trained needs exclusive ownership; in inference
// mode forward is pure.
template <typename Scalar>
class ModelGraph {
 public:
  // Builds and initializes a graph; every random draw (weights, later
  // dropout masks) comes from the given seed.
  static ModelGraph build(const ModelConfig& config, std::uint64_t seed) {
    ModelGraph m(config, seed);
    Rng& rng = m.rng_;
    const ModelConfig& c = m.config_;
    if (c.vocab_size < 3 || c.embed_dim < 1 || c.lstm_units < 1)
      throw ValueError("model: non-positive dimensions in config");
    switch (c.architecture) {
      case Architecture::kTextQA: {
        if (c.merge_mode != MergeMode::kSum)
          throw ValueError("text-qa: merge mode must be sum");
        if (c.embed_dim != c.lstm_units)
          throw ValueError("text-qa: sum merge needs embed_dim == lstm_units, got " +
                           std::to_string(c.embed_dim) + " vs " + std::to_string(c.lstm_units));
        m.story_embed_.emplace("story_embedding", c.vocab_size, c.embed_dim, rng);
        m.question_embed_.emplace("question_embedding", c.vocab_size, c.embed_dim, rng);
        m.question_lstm_.emplace("question_lstm", c.embed_dim, c.lstm_units, rng);
        m.merge_lstm_.emplace("merge_lstm", c.embed_dim, c.lstm_units, rng);
        m.story_dropout_.emplace(c.dropout_rate);
        m.question_dropout_.emplace(c.dropout_rate);
        m.merge_dropout_.emplace(c.dropout_rate);
        m.head_.emplace("classifier", c.lstm_units, c.vocab_size, Activation::kSoftmax, rng);
        break;
      }
      case Architecture::kVqaConcat: {
        if (c.merge_mode != MergeMode::kConcat)
          throw ValueError("vqa-concat: merge mode must be concat");
        m.question_embed_.emplace("question_embedding", c.vocab_size, c.embed_dim, rng);
        if (c.batch_norm) m.batchnorm_.emplace("batchnorm", c.visual_dim + c.embed_dim);
        m.merge_lstm_.emplace("merge_lstm", c.visual_dim + c.embed_dim, c.lstm_units, rng);
        m.merge_dropout_.emplace(c.dropout_rate);
        m.head_.emplace("classifier", c.lstm_units, c.vocab_size, Activation::kSoftmax, rng);
        break;
      }
      case Architecture::kVqaSentence: {
        if (c.merge_mode != MergeMode::kSum)
          throw ValueError("vqa-sentence: merge mode must be sum");
        if (c.projection_dim != c.lstm_units)
          throw ValueError("vqa-sentence: sum merge needs projection_dim == lstm_units, got " +
                           std::to_string(c.projection_dim) + " vs " +
                           std::to_string(c.lstm_units));
        m.question_embed_.emplace("question_embedding", c.vocab_size, c.embed_dim, rng);
        m.question_lstm_.emplace("question_lstm", c.embed_dim, c.lstm_units, rng);
        m.projection_.emplace("visual_projection", c.visual_dim, c.projection_dim,
                              Activation::kRelu, rng);
        if (c.batch_norm) m.batchnorm_.emplace("batchnorm", c.projection_dim);
        m.merge_dropout_.emplace(c.dropout_rate);
        m.head_.emplace("classifier", c.lstm_units, c.vocab_size, Activation::kSoftmax, rng);
        break;
      }
    }
    return m;
  }

  const ModelConfig& config() const { return config_; }
  Architecture architecture() const { return config_.architecture; }

  void reseed(std::uint64_t seed) { rng_ = Rng(seed); }

  // Answer probabilities, (batch, vocab_size).
  Tensor<Scalar> forward(const Batch<Scalar>& batch, Mode mode) {
    switch (config_.architecture) {
      case Architecture::kTextQA: return forward_text_qa(batch, mode);
      case Architecture::kVqaConcat: return forward_vqa_concat(batch, mode);
      case Architecture::kVqaSentence: return forward_vqa_sentence(batch, mode);
    }
    throw StateError("model: unknown architecture");
  }

  // Backpropagates mean cross-entropy against the targets through the whole
  // graph, accumulating parameter gradients. Requires a preceding train-mode
  // forward on the same batch.
  void backward(const std::vector<std::int32_t>& targets) {
    if (!forward_was_train_) throw StateError("model: backward requires a train-mode forward");
    forward_was_train_ = false;
    Tensor<Scalar> d = head_->backward_cross_entropy(targets);
    d = merge_dropout_->backward(d);
    switch (config_.architecture) {
      case Architecture::kTextQA: {
        Tensor<Scalar> dmerged = merge_lstm_->backward(d);  // (B, Ts, E)
        // sum merge: the gradient flows unchanged into both branches
        Tensor<Scalar> dq_vec = repeat_vector_backward(dmerged);
        Tensor<Scalar> dq_seq = question_lstm_->backward(dq_vec);
        question_embed_->backward(question_dropout_->backward(dq_seq));
        story_embed_->backward(story_dropout_->backward(dmerged));
        break;
      }
      case Architecture::kVqaConcat: {
        Tensor<Scalar> dmerged = merge_lstm_->backward(d);  // (B, T, Dv+E)
        if (batchnorm_) {
          Index b = dmerged.dim(0), t = dmerged.dim(1), w = dmerged.dim(2);
          dmerged = batchnorm_->backward(dmerged.reshape({b * t, w})).reshape({b, t, w});
        }
        auto [dvis, demb] = split_last_axis(dmerged, config_.visual_dim);
        question_embed_->backward(demb);
        // visual features are inputs, their gradient is dropped
        (void)repeat_vector_backward(dvis);
        break;
      }
      case Architecture::kVqaSentence: {
        if (batchnorm_) d = batchnorm_->backward(d);
        // sum merge: same gradient into both branches
        Tensor<Scalar> dq_seq = question_lstm_->backward(d);
        question_embed_->backward(dq_seq);
        (void)projection_->backward(d);
        break;
      }
    }
  }

  // Every tensor the weight file carries, in manifest order.
  std::vector<ParamTensor<Scalar>*> parameters() {
    std::vector<ParamTensor<Scalar>*> out;
    if (story_embed_) story_embed_->collect(out);
    if (question_embed_) question_embed_->collect(out);
    if (question_lstm_) question_lstm_->collect(out);
    if (projection_) projection_->collect(out);
    if (merge_lstm_) merge_lstm_->collect(out);
    if (batchnorm_) batchnorm_->collect(out);
    if (head_) head_->collect(out);
    return out;
  }

  std::vector<ParamTensor<Scalar>*> trainable_parameters() {
    std::vector<ParamTensor<Scalar>*> out;
    for (ParamTensor<Scalar>* p : parameters())
      if (p->trainable) out.push_back(p);
    return out;
  }

  void zero_grads() {
    for (ParamTensor<Scalar>* p : parameters()) p->zero_grad();
  }

  void save_weights(const std::string& path) const;
  static ModelGraph load_weights(const std::string& path, std::uint64_t seed = 0);

 private:
  ModelGraph(const ModelConfig& config, std::uint64_t seed) : config_(config), rng_(seed) {}

  void check_features(const Batch<Scalar>& batch) const {
    if (batch.features.rows() != batch.question.batch() ||
        batch.features.cols() != config_.visual_dim)
      throw DimensionError("model: feature matrix is " +
                           std::to_string(batch.features.rows()) + "x" +
                           std::to_string(batch.features.cols()) + ", expected " +
                           std::to_string(batch.question.batch()) + "x" +
                           std::to_string(config_.visual_dim));
  }

  Tensor<Scalar> forward_text_qa(const Batch<Scalar>& batch, Mode mode) {
    if (!batch.story) throw DimensionError("text-qa: batch has no story sequence");
    forward_was_train_ = mode == Mode::kTrain;
    Tensor<Scalar> s = story_dropout_->forward(story_embed_->forward(*batch.story), mode, rng_);
    Tensor<Scalar> q =
        question_dropout_->forward(question_embed_->forward(batch.question), mode, rng_);
    Tensor<Scalar> q_vec = question_lstm_->forward(q, batch.question.mask);
    Tensor<Scalar> merged = merge_sum(s, repeat_vector(q_vec, batch.story->length()));
    Tensor<Scalar> h = merge_lstm_->forward(merged, batch.story->mask);
    return head_->forward(merge_dropout_->forward(h, mode, rng_));
  }

  Tensor<Scalar> forward_vqa_concat(const Batch<Scalar>& batch, Mode mode) {
    check_features(batch);
    forward_was_train_ = mode == Mode::kTrain;
    Index b = batch.question.batch(), t = batch.question.length();
    Tensor<Scalar> vis({b, config_.visual_dim});
    vis.mat() = batch.features;
    Tensor<Scalar> merged =
        merge_concat(repeat_vector(vis, t), question_embed_->forward(batch.question));
    if (batchnorm_) {
      Index w = merged.dim(2);
      merged = batchnorm_->forward(merged.reshape({b * t, w}), mode).reshape({b, t, w});
    }
    Tensor<Scalar> h = merge_lstm_->forward(merged, batch.question.mask);
    return head_->forward(merge_dropout_->forward(h, mode, rng_));
  }

  Tensor<Scalar> forward_vqa_sentence(const Batch<Scalar>& batch, Mode mode) {
    check_features(batch);
    forward_was_train_ = mode == Mode::kTrain;
    Tensor<Scalar> q_vec = question_lstm_->forward(question_embed_->forward(batch.question),
                                                   batch.question.mask);
    Tensor<Scalar> vis({batch.features.rows(), config_.visual_dim});
    vis.mat() = batch.features;
    Tensor<Scalar> merged = merge_sum(q_vec, projection_->forward(vis));
    if (batchnorm_) merged = batchnorm_->forward(merged, mode);
    return head_->forward(merge_dropout_->forward(merged, mode, rng_));
  }

  ModelConfig config_;
  Rng rng_;
  bool forward_was_train_ = false;

  std::optional<EmbeddingLayer<Scalar>> story_embed_, question_embed_;
  std::optional<LSTMLayer<Scalar>> question_lstm_, merge_lstm_;
  std::optional<DenseLayer<Scalar>> projection_;
  std::optional<BatchNormLayer<Scalar>> batchnorm_;
  std::optional<DropoutLayer<Scalar>> story_dropout_, question_dropout_, merge_dropout_;
  std::optional<DenseLayer<Scalar>> head_;
};

// Named builders for the three architectures. Each validates that the
// config carries the matching tag and merge mode before assembling.
template <typename Scalar>
ModelGraph<Scalar> build_text_qa(const ModelConfig& config, std::uint64_t seed) {
  if (config.architecture != Architecture::kTextQA)
    throw ValueError("build_text_qa: config is tagged " +
                     std::string(architecture_name(config.architecture)));
  return ModelGraph<Scalar>::build(config, seed);
}

template <typename Scalar>
ModelGraph<Scalar> build_vqa_concat(const ModelConfig& config, std::uint64_t seed) {
  if (config.architecture != Architecture::kVqaConcat)
    throw ValueError("build_vqa_concat: config is tagged " +
                     std::string(architecture_name(config.architecture)));
  return ModelGraph<Scalar>::build(config, seed);
}

template <typename Scalar>
ModelGraph<Scalar> build_vqa_sentence(const ModelConfig& config, std::uint64_t seed) {
  if (config.architecture != Architecture::kVqaSentence)
    throw ValueError("build_vqa_sentence: config is tagged " +
                     std::string(architecture_name(config.architecture)));
  return ModelGraph<Scalar>::build(config, seed);
}

// Mean cross-entropy over a batch of probability rows, accumulated in
// double. Probabilities are clamped to [1e-12, 1] before the log.
template <typename Scalar>
double mean_cross_entropy(const Tensor<Scalar>& probs, const std::vector<std::int32_t>& targets) {
  probs.require_rank(2);
  if (static_cast<Index>(targets.size()) != probs.dim(0))
    throw DimensionError("loss: " + std::to_string(targets.size()) + " targets for batch " +
                         std::to_string(probs.dim(0)));
  double total = 0.0;
  for (Index r = 0; r < probs.dim(0); ++r) {
    std::int32_t t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= probs.dim(1))
      throw BoundsError("loss: target " + std::to_string(t) + " out of range [0," +
                        std::to_string(probs.dim(1)) + ")");
    double p = std::min(std::max(static_cast<double>(probs(r, t)), kLogClamp), 1.0);
    total -= std::log(p);
  }
  return total / static_cast<double>(probs.dim(0));
}

// Argmax over the answer distribution with the padding index excluded (it is
// never a legal answer). Returns the chosen vocabulary indices.
template <typename Scalar>
std::vector<Index> predict_indices(const Tensor<Scalar>& probs) {
  probs.require_rank(2);
  if (probs.dim(1) < 2) throw DimensionError("predict: vocabulary too small");
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(probs.dim(0)));
  for (Index r = 0; r < probs.dim(0); ++r) {
    Index best = 1;  // skip PAD at 0
    for (Index j = 2; j < probs.dim(1); ++j)
      if (probs(r, j) > probs(r, best)) best = j;
    out.push_back(best);
  }
  return out;
}

struct PredictOutcome {
  std::vector<std::string> answers;  // in batch order
  Index unk_count = 0;
};

template <typename Scalar>
PredictOutcome predict(ModelGraph<Scalar>& model, const Batch<Scalar>& batch,
                       const Vocabulary& vocab) {
  Tensor<Scalar> probs = model.forward(batch, Mode::kInfer);
  PredictOutcome out;
  for (Index idx : predict_indices(probs)) {
    if (idx == kUnkIndex) ++out.unk_count;
    out.answers.push_back(vocab.decode(idx));
  }
  return out;
}

// Fraction of samples whose excluded-PAD argmax equals the target, evaluated
// in inference mode.
template <typename Scalar>
double answer_accuracy(ModelGraph<Scalar>& model, const BatchSource<Scalar>& data,
                       Index batch_size = 32) {
  Index n = data.size();
  if (n == 0) throw ValueError("accuracy: empty dataset");
  Index correct = 0;
  std::vector<Index> indices(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) indices[static_cast<std::size_t>(i)] = i;
  for (Index start = 0; start < n; start += batch_size) {
    Index len = std::min(batch_size, n - start);
    std::span<const Index> span(indices.data() + start, static_cast<std::size_t>(len));
    Batch<Scalar> batch = data.gather(span);
    Tensor<Scalar> probs = model.forward(batch, Mode::kInfer);
    std::vector<Index> preds = predict_indices(probs);
    for (Index r = 0; r < len; ++r)
      if (preds[static_cast<std::size_t>(r)] ==
          static_cast<Index>(batch.targets[static_cast<std::size_t>(r)]))
        ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Weight files: "VQAW" magic, little-endian u32 header length, JSON header
// (architecture, config, tensor manifest), then raw little-endian f32 tensor
// data in manifest order. Adam state is not part of the file.
// ---------------------------------------------------------------------------

template <typename Scalar>
void ModelGraph<Scalar>::save_weights(const std::string& path) const {
  auto params = const_cast<ModelGraph*>(this)->parameters();
  nlohmann::ordered_json header;
  header["architecture"] = architecture_name(config_.architecture);
  header["config"] = config_.to_json();
  nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
  for (const ParamTensor<Scalar>* p : params) {
    nlohmann::ordered_json t;
    t["name"] = p->name;
    t["shape"] = p->value.shape();
    t["trainable"] = p->trainable;
    manifest.push_back(std::move(t));
  }
  header["tensors"] = std::move(manifest);
  std::string header_bytes = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("weights: cannot open " + path + " for writing");
  out.write("VQAW", 4);
  std::uint32_t len = static_cast<std::uint32_t>(header_bytes.size());
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
  std::vector<float> buf;
  for (const ParamTensor<Scalar>* p : params) {
    buf.resize(static_cast<std::size_t>(p->value.size()));
    for (Index i = 0; i < p->value.size(); ++i)
      buf[static_cast<std::size_t>(i)] = static_cast<float>(p->value(i));
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw FormatError("weights: write to " + path + " failed");
}

template <typename Scalar>
ModelGraph<Scalar> ModelGraph<Scalar>::load_weights(const std::string& path, std::uint64_t seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("weights: cannot open " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "VQAW", 4) != 0)
    throw FormatError("weights: " + path + " lacks the VQAW magic");
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 4);
  if (in.gcount() != 4) throw FormatError("weights: " + path + " is truncated");
  std::string header_bytes(len, '\0');
  in.read(header_bytes.data(), len);
  if (in.gcount() != static_cast<std::streamsize>(len))
    throw FormatError("weights: " + path + " is truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_bytes);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("weights: " + path + " header is not valid JSON: " + e.what());
  }

  ModelConfig config;
  try {
    config = ModelConfig::from_json(
        parse_architecture(header.at("architecture").get<std::string>()), header.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("weights: " + path + " header is incomplete: " + e.what());
  }
  ModelGraph model = build(config, seed);
  auto params = model.parameters();
  const nlohmann::json& manifest = header.at("tensors");
  if (manifest.size() != params.size())
    throw FormatError("weights: " + path + " carries " + std::to_string(manifest.size()) +
                      " tensors, model expects " + std::to_string(params.size()));
  std::vector<float> buf;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const nlohmann::json& t = manifest[i];
    if (t.at("name").get<std::string>() != params[i]->name)
      throw FormatError("weights: tensor " + std::to_string(i) + " is '" +
                        t.at("name").get<std::string>() + "', expected '" + params[i]->name +
                        "'");
    std::vector<Index> shape = t.at("shape").get<std::vector<Index>>();
    if (shape != params[i]->value.shape())
      throw FormatError("weights: tensor '" + params[i]->name + "' has shape " +
                        shape_string(shape) + ", expected " +
                        shape_string(params[i]->value.shape()));
    buf.resize(static_cast<std::size_t>(params[i]->value.size()));
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
      throw FormatError("weights: " + path + " is truncated in tensor '" + params[i]->name +
                        "'");
    for (Index k = 0; k < params[i]->value.size(); ++k)
      params[i]->value(k) = static_cast<Scalar>(buf[static_cast<std::size_t>(k)]);
  }
  return model;
}

// Throws CompatibilityError naming every differing field when a loaded
// graph does not match the requested configuration.
inline void check_compatible(const ModelConfig& expected, const ModelConfig& actual) {
  std::vector<std::string> d = expected.diff(actual);
  if (d.empty()) return;
  std::string msg = "weights incompatible with requested model; differing fields:";
  for (const std::string& f : d) msg += " " + f;
  throw CompatibilityError(msg);
}

}  // namespace vqaforge
