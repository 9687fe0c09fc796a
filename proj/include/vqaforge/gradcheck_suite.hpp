#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vqaforge/gradcheck.hpp"
#include "vqaforge/layers.hpp"
#include "vqaforge/models.hpp"
#include "vqaforge/optim.hpp"

namespace vqaforge {

// Finite-difference verification of every layer and of end-to-end builds of
// the three architectures at toy dimensions. `corrupt` is a testing hook: a
// non-empty substring perturbs the analytic gradients of matching parameter
// groups so the harness itself can be shown to catch faults.

namespace detail {

inline double dot_loss(const Tensor<double>& y, const Tensor<double>& w) {
  return (y.flat() * w.flat()).sum();
}

inline Tensor<double> random_tensor(std::vector<Index> shape, Rng& rng, double lo = -1.0,
                                    double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  init::uniform(t, rng, lo, hi);
  return t;
}

inline void apply_corruption(std::vector<ParamTensor<double>*> params,
                             const std::string& corrupt) {
  if (corrupt.empty()) return;
  for (ParamTensor<double>* p : params)
    if (p->name.find(corrupt) != std::string::npos)
      p->grad.flat() = p->grad.flat() * 1.5 + 0.05;
}

}  // namespace detail

inline std::vector<GradCheckEntry> run_layer_gradient_checks(std::uint64_t seed = 99,
                                                             const std::string& corrupt = "") {
  std::vector<GradCheckEntry> entries;
  Rng rng(seed);

  auto check_params = [&](const std::function<double()>& loss,
                          std::vector<ParamTensor<double>*> params) {
    detail::apply_corruption(params, corrupt);
    for (ParamTensor<double>* p : params) {
      if (!p->trainable) continue;
      entries.push_back(check_param_gradient(loss, *p));
    }
  };
  auto check_input = [&](const std::function<double()>& loss, Tensor<double>& x,
                         Tensor<double> dx, const std::string& name) {
    if (!corrupt.empty() && name.find(corrupt) != std::string::npos)
      dx.flat() = dx.flat() * 1.5 + 0.05;
    entries.push_back(check_input_gradient(loss, x, dx, name));
  };

  {  // embedding
    EmbeddingLayer<double> emb("embedding", 7, 3, rng);
    MaskedSequence seq = MaskedSequence::from_rows({{0, 0, 2, 3}, {2, 4, 5, 6}});
    Tensor<double> w = detail::random_tensor({2, 4, 3}, rng);
    auto loss = [&] { return detail::dot_loss(emb.forward(seq), w); };
    emb.table().zero_grad();
    emb.forward(seq);
    emb.backward(w);
    check_params(loss, {&emb.table()});
  }

  {  // lstm over a left-padded batch
    LSTMLayer<double> lstm("lstm", 3, 4, rng);
    Tensor<double> x = detail::random_tensor({2, 3, 3}, rng);
    MaskMatrix mask(2, 3);
    mask << 0, 1, 1, 1, 1, 1;
    Tensor<double> w = detail::random_tensor({2, 4}, rng);
    auto loss = [&] { return detail::dot_loss(lstm.forward(x, mask), w); };
    std::vector<ParamTensor<double>*> params;
    lstm.collect(params);
    for (auto* p : params) p->zero_grad();
    lstm.forward(x, mask);
    Tensor<double> dx = lstm.backward(w);
    check_params(loss, params);
    check_input(loss, x, dx, "lstm.input");
  }

  {  // dense, each activation
    for (Activation act : {Activation::kNone, Activation::kRelu, Activation::kSoftmax}) {
      std::string name = act == Activation::kNone   ? "dense_linear"
                         : act == Activation::kRelu ? "dense_relu"
                                                    : "dense_softmax";
      DenseLayer<double> dense(name, 4, 3, act, rng);
      Tensor<double> x = detail::random_tensor({2, 4}, rng);
      Tensor<double> w = detail::random_tensor({2, 3}, rng);
      auto loss = [&] { return detail::dot_loss(dense.forward(x), w); };
      std::vector<ParamTensor<double>*> params;
      dense.collect(params);
      for (auto* p : params) p->zero_grad();
      dense.forward(x);
      Tensor<double> dx = dense.backward(w);
      check_params(loss, params);
      check_input(loss, x, dx, name + ".input");
    }
  }

  {  // softmax head driven by the fused cross-entropy backward
    DenseLayer<double> head("classifier", 4, 5, Activation::kSoftmax, rng);
    Tensor<double> x = detail::random_tensor({3, 4}, rng);
    std::vector<std::int32_t> targets = {1, 4, 2};
    auto loss = [&] { return mean_cross_entropy(head.forward(x), targets); };
    std::vector<ParamTensor<double>*> params;
    head.collect(params);
    for (auto* p : params) p->zero_grad();
    head.forward(x);
    Tensor<double> dx = head.backward_cross_entropy(targets);
    check_params(loss, params);
    check_input(loss, x, dx, "classifier.input");
  }

  {  // batch normalization, train mode
    BatchNormLayer<double> bn("batchnorm", 3);
    Tensor<double> x = detail::random_tensor({4, 3}, rng);
    Tensor<double> w = detail::random_tensor({4, 3}, rng);
    auto loss = [&] { return detail::dot_loss(bn.forward(x, Mode::kTrain), w); };
    std::vector<ParamTensor<double>*> params;
    bn.collect(params);
    for (auto* p : params) p->zero_grad();
    bn.forward(x, Mode::kTrain);
    Tensor<double> dx = bn.backward(w);
    check_params(loss, params);
    check_input(loss, x, dx, "batchnorm.input");
  }

  {  // dropout with the mask pinned by reseeding
    DropoutLayer<double> drop(0.4);
    Tensor<double> x = detail::random_tensor({3, 5}, rng);
    Tensor<double> w = detail::random_tensor({3, 5}, rng);
    auto loss = [&] {
      Rng r(1234);
      return detail::dot_loss(drop.forward(x, Mode::kTrain, r), w);
    };
    Rng r(1234);
    drop.forward(x, Mode::kTrain, r);
    Tensor<double> dx = drop.backward(w);
    check_input(loss, x, dx, "dropout.input");
  }

  {  // repeat
    Tensor<double> x = detail::random_tensor({2, 3}, rng);
    Tensor<double> w = detail::random_tensor({2, 4, 3}, rng);
    auto loss = [&] { return detail::dot_loss(repeat_vector(x, 4), w); };
    check_input(loss, x, repeat_vector_backward(w), "repeat.input");
  }

  {  // merge sum / concat
    Tensor<double> a = detail::random_tensor({2, 3}, rng);
    Tensor<double> b = detail::random_tensor({2, 3}, rng);
    Tensor<double> w = detail::random_tensor({2, 3}, rng);
    auto loss_sum = [&] { return detail::dot_loss(merge_sum(a, b), w); };
    check_input(loss_sum, a, w, "merge_sum.lhs");
    check_input(loss_sum, b, w, "merge_sum.rhs");

    Tensor<double> c = detail::random_tensor({2, 2}, rng);
    Tensor<double> wc = detail::random_tensor({2, 5}, rng);
    auto loss_cat = [&] { return detail::dot_loss(merge_concat(a, c), wc); };
    auto [da, dc] = split_last_axis(wc, 3);
    check_input(loss_cat, a, da, "merge_concat.lhs");
    check_input(loss_cat, c, dc, "merge_concat.rhs");
  }

  return entries;
}

// Toy-dimension batches for the end-to-end checks: vocab 20, question
// length 4, hidden width 8, batch 2.
inline std::vector<GradCheckEntry> run_model_gradient_checks(std::uint64_t seed = 7,
                                                             const std::string& corrupt = "") {
  std::vector<GradCheckEntry> entries;
  Rng rng(seed);

  auto random_row = [&](Index maxlen, Index real, Index vocab) {
    std::vector<std::int32_t> row(static_cast<std::size_t>(maxlen), 0);
    for (Index i = maxlen - real; i < maxlen; ++i)
      row[static_cast<std::size_t>(i)] =
          static_cast<std::int32_t>(2 + rng.below(static_cast<std::uint64_t>(vocab - 2)));
    return row;
  };

  auto run = [&](const std::string& tag, const ModelConfig& cfg, Batch<double> batch,
                 const std::vector<std::int32_t>& targets) {
    ModelGraph<double> model = ModelGraph<double>::build(cfg, seed + 1);
    auto loss = [&]() -> double {
      model.reseed(11);  // pins the dropout masks across evaluations
      return mean_cross_entropy(model.forward(batch, Mode::kTrain), targets);
    };
    model.zero_grads();
    model.reseed(11);
    model.forward(batch, Mode::kTrain);
    model.backward(targets);
    std::vector<ParamTensor<double>*> params = model.trainable_parameters();
    detail::apply_corruption(params, corrupt);
    for (ParamTensor<double>* p : params) {
      GradCheckEntry e = check_param_gradient(loss, *p);
      e.name = tag + "." + e.name;
      entries.push_back(std::move(e));
    }
  };

  const Index vocab = 20, maxlen = 4, hidden = 8, visual = 6;

  {  // text-qa
    ModelConfig cfg;
    cfg.architecture = Architecture::kTextQA;
    cfg.merge_mode = MergeMode::kSum;
    cfg.vocab_size = vocab;
    cfg.maxlen = maxlen;
    cfg.story_maxlen = 5;
    cfg.embed_dim = hidden;
    cfg.lstm_units = hidden;
    cfg.dropout_rate = 0.3;
    Batch<double> batch;
    batch.question = MaskedSequence::from_rows(
        {random_row(maxlen, 3, vocab), random_row(maxlen, 4, vocab)});
    batch.story = MaskedSequence::from_rows(
        {random_row(cfg.story_maxlen, 4, vocab), random_row(cfg.story_maxlen, 5, vocab)});
    run("text-qa", cfg, std::move(batch), {3, 17});
  }

  for (bool bn : {false, true}) {  // vqa-concat, models 1 and 2
    ModelConfig cfg;
    cfg.architecture = Architecture::kVqaConcat;
    cfg.merge_mode = MergeMode::kConcat;
    cfg.vocab_size = vocab;
    cfg.maxlen = maxlen;
    cfg.embed_dim = hidden;
    cfg.lstm_units = hidden;
    cfg.visual_dim = visual;
    cfg.dropout_rate = 0.5;
    cfg.batch_norm = bn;
    Batch<double> batch;
    batch.question = MaskedSequence::from_rows(
        {random_row(maxlen, 2, vocab), random_row(maxlen, 4, vocab)});
    batch.features.resize(2, visual);
    for (Index i = 0; i < batch.features.size(); ++i)
      batch.features.data()[i] = rng.uniform(-1.0, 1.0);
    run(bn ? "vqa-concat-bn" : "vqa-concat", cfg, std::move(batch), {5, 9});
  }

  for (bool bn : {false, true}) {  // vqa-sentence, models 4 and 5
    ModelConfig cfg;
    cfg.architecture = Architecture::kVqaSentence;
    cfg.merge_mode = MergeMode::kSum;
    cfg.vocab_size = vocab;
    cfg.maxlen = maxlen;
    cfg.embed_dim = hidden;
    cfg.lstm_units = hidden;
    cfg.visual_dim = visual;
    cfg.projection_dim = hidden;
    cfg.dropout_rate = 0.5;
    cfg.batch_norm = bn;
    Batch<double> batch;
    batch.question = MaskedSequence::from_rows(
        {random_row(maxlen, 4, vocab), random_row(maxlen, 1, vocab)});
    batch.features.resize(2, visual);
    for (Index i = 0; i < batch.features.size(); ++i)
      batch.features.data()[i] = rng.uniform(-1.0, 1.0);
    run(bn ? "vqa-sentence-bn" : "vqa-sentence", cfg, std::move(batch), {12, 2});
  }

  return entries;
}

}  // namespace vqaforge
