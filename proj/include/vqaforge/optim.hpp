#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "vqaforge/batch.hpp"
#include "vqaforge/models.hpp"
#include "vqaforge/rng.hpp"

namespace vqaforge {

struct AdamOptions {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment tensors mirror the parameter list passed
// at construction; every step consumes and zeroes the accumulated gradients.
template <typename Scalar>
class AdamState {
 public:
  AdamState(std::span<ParamTensor<Scalar>* const> params, AdamOptions opts) : opts_(opts) {
    moments_.reserve(params.size());
    for (ParamTensor<Scalar>* p : params)
      moments_.push_back({Tensor<Scalar>(p->value.shape()), Tensor<Scalar>(p->value.shape())});
  }

  std::int64_t steps() const { return t_; }
  const AdamOptions& options() const { return opts_; }

  // checked scans gradients for non-finite values before applying them.
  void step(std::span<ParamTensor<Scalar>* const> params, bool checked = true) {
    if (params.size() != moments_.size())
      throw DimensionError("adam: parameter list size changed");
    ++t_;
    double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    Scalar b1 = static_cast<Scalar>(opts_.beta1), b2 = static_cast<Scalar>(opts_.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
      ParamTensor<Scalar>& p = *params[i];
      if (p.value.shape() != moments_[i].m.shape())
        throw DimensionError("adam: parameter '" + p.name + "' changed shape");
      if (checked && !p.grad.all_finite())
        throw DivergenceError("adam: non-finite gradient in '" + p.name + "'");
      Tensor<Scalar>& m = moments_[i].m;
      Tensor<Scalar>& v = moments_[i].v;
      m.flat() = b1 * m.flat() + (Scalar(1) - b1) * p.grad.flat();
      v.flat() = b2 * v.flat() + (Scalar(1) - b2) * p.grad.flat().square();
      for (Index k = 0; k < p.value.size(); ++k) {
        double mhat = static_cast<double>(m(k)) / bc1;
        double vhat = static_cast<double>(v(k)) / bc2;
        p.value(k) -= static_cast<Scalar>(opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps));
      }
      p.zero_grad();
    }
  }

 private:
  struct Moments {
    Tensor<Scalar> m, v;
  };
  AdamOptions opts_;
  std::vector<Moments> moments_;
  std::int64_t t_ = 0;
};

struct EpochRecord {
  int epoch = 0;            // 1-based, contiguous
  double train_loss = 0.0;
  double val_loss = 0.0;    // NaN when no validation split was given
  long seconds = 0;         // wall clock, floored to whole seconds
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  // CSV: header `epoch,train_loss,val_loss,seconds`, one row per epoch.
  void write_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("train log: cannot open " + path + " for writing");
    out << "epoch,train_loss,val_loss,seconds\n";
    char buf[128];
    for (const EpochRecord& r : epochs) {
      std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%ld\n", r.epoch, r.train_loss, r.val_loss,
                    r.seconds);
      out << buf;
    }
  }
};

struct TrainOptions {
  int epochs = 10;
  double lr = 0.001;
  Index batch_size = 32;
  std::uint64_t seed = 42;
  bool checked = true;
  AdamOptions adam;  // lr is taken from `lr`, the betas/eps from here
  // Called after each epoch; return true to stop early. Used by evaluation
  // harnesses, not by the CLI.
  std::function<bool(int epoch, const TrainLog&)> on_epoch_end;
};

// Epoch/batch training loop: seeded shuffle, forward, mean cross-entropy,
// backward, Adam step; validation loss in inference mode after each epoch.
// Identical seeds give identical logs and parameter trajectories.
template <typename Scalar>
TrainLog train(ModelGraph<Scalar>& model, const BatchSource<Scalar>& data,
               const BatchSource<Scalar>* validation, const TrainOptions& opts) {
  if (data.size() == 0) throw ValueError("train: empty dataset");
  if (opts.batch_size < 1) throw ValueError("train: batch size must be >= 1");
  if (opts.epochs < 0) throw ValueError("train: negative epoch count");

  AdamOptions adam_opts = opts.adam;
  adam_opts.lr = opts.lr;
  std::vector<ParamTensor<Scalar>*> params = model.trainable_parameters();
  AdamState<Scalar> adam(params, adam_opts);
  model.zero_grads();

  // Distinct stream from the model's own (dropout) stream.
  Rng shuffle_rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  for (Index i = 0; i < data.size(); ++i) order[static_cast<std::size_t>(i)] = i;

  TrainLog log;
  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    Index seen = 0;
    int batch_index = 0;
    for (Index start = 0; start < data.size(); start += opts.batch_size, ++batch_index) {
      Index len = std::min<Index>(opts.batch_size, data.size() - start);
      std::span<const Index> span(order.data() + start, static_cast<std::size_t>(len));
      Batch<Scalar> batch = data.gather(span);
      if (batch.targets.empty())
        throw ValueError("train: batch without targets at epoch " + std::to_string(epoch));
      Tensor<Scalar> probs = model.forward(batch, Mode::kTrain);
      double loss = mean_cross_entropy(probs, batch.targets);
      if (!std::isfinite(loss))
        throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(batch_index));
      model.backward(batch.targets);
      adam.step(params, opts.checked);
      loss_sum += loss * static_cast<double>(len);
      seen += len;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.val_loss = std::numeric_limits<double>::quiet_NaN();
    if (validation && validation->size() > 0) {
      double vsum = 0.0;
      std::vector<Index> vidx(static_cast<std::size_t>(validation->size()));
      for (Index i = 0; i < validation->size(); ++i) vidx[static_cast<std::size_t>(i)] = i;
      for (Index start = 0; start < validation->size(); start += opts.batch_size) {
        Index len = std::min<Index>(opts.batch_size, validation->size() - start);
        std::span<const Index> span(vidx.data() + start, static_cast<std::size_t>(len));
        Batch<Scalar> batch = validation->gather(span);
        Tensor<Scalar> probs = model.forward(batch, Mode::kInfer);
        vsum += mean_cross_entropy(probs, batch.targets) * static_cast<double>(len);
      }
      rec.val_loss = vsum / static_cast<double>(validation->size());
    }
    rec.seconds = static_cast<long>(std::chrono::duration_cast<std::chrono::seconds>(
                                        std::chrono::steady_clock::now() - t0)
                                        .count());
    log.epochs.push_back(rec);
    if (opts.on_epoch_end && opts.on_epoch_end(epoch, log)) break;
  }
  return log;
}

}  // namespace vqaforge
