#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vqaforge/rng.hpp"
#include "vqaforge/sequence.hpp"
#include "vqaforge/tensor.hpp"

namespace vqaforge {

enum class Mode { kTrain, kInfer };

// A trainable tensor with its gradient accumulator. Batch-norm running
// statistics also live in ParamTensors (trainable = false) so that one
// manifest covers everything a weight file must carry.
template <typename Scalar>
struct ParamTensor {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  std::string name;
  bool trainable = true;

  ParamTensor() = default;
  ParamTensor(std::string n, std::vector<Index> shape)
      : value(shape), grad(std::move(shape)), name(std::move(n)) {}

  void zero_grad() { grad.set_zero(); }
};

namespace init {

template <typename Scalar>
void uniform(Tensor<Scalar>& t, Rng& rng, double lo, double hi) {
  for (Index i = 0; i < t.size(); ++i) t(i) = static_cast<Scalar>(rng.uniform(lo, hi));
}

// Glorot-uniform for a fan_in x fan_out weight matrix.
template <typename Scalar>
void glorot(Tensor<Scalar>& t, Rng& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(t.dim(0) + t.dim(1)));
  uniform(t, rng, -limit, limit);
}

// Orthogonal init for square recurrent matrices: QR of a Gaussian matrix,
// sign-fixed by diag(R) so the result is canonical for a given stream.
template <typename Scalar>
void orthogonal(Tensor<Scalar>& t, Rng& rng) {
  Index n = t.dim(0);
  Eigen::MatrixXd g(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  Eigen::MatrixXd r = qr.matrixQR().template triangularView<Eigen::Upper>();
  for (Index j = 0; j < n; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) t(i, j) = static_cast<Scalar>(q(i, j));
}

}  // namespace init

// Strided rank-2 view of one timestep of a (batch, T, dim) tensor.
template <typename Scalar>
using StepMap = Eigen::Map<const MatrixX<Scalar>, 0, Eigen::OuterStride<>>;

template <typename Scalar>
StepMap<Scalar> timestep(const Tensor<Scalar>& x, Index t) {
  x.require_rank(3);
  return StepMap<Scalar>(x.data() + t * x.dim(2), x.dim(0), x.dim(2),
                         Eigen::OuterStride<>(x.dim(1) * x.dim(2)));
}

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

// Learned word vectors: row lookup per token, zero vectors at padding
// positions regardless of the padding row's contents.
template <typename Scalar>
class EmbeddingLayer {
 public:
  EmbeddingLayer(std::string name, Index vocab, Index dim, Rng& rng)
      : table_(name + ".table", {vocab, dim}) {
    init::uniform(table_.value, rng, -0.05, 0.05);
  }

  Tensor<Scalar> forward(const MaskedSequence& seq) {
    Index vocab = table_.value.dim(0), dim = table_.value.dim(1);
    Tensor<Scalar> out({seq.batch(), seq.length(), dim});
    for (Index b = 0; b < seq.batch(); ++b) {
      for (Index t = 0; t < seq.length(); ++t) {
        if (!seq.mask(b, t)) continue;  // stays zero
        Index tok = seq.tokens(b, t);
        if (tok < 0 || tok >= vocab)
          throw BoundsError(table_.name + ": token index " + std::to_string(tok) +
                            " out of range [0," + std::to_string(vocab) + ") at row " +
                            std::to_string(b) + ", position " + std::to_string(t));
        for (Index d = 0; d < dim; ++d) out(b, t, d) = table_.value(tok, d);
      }
    }
    cached_ = seq;
    has_cache_ = true;
    return out;
  }

  void backward(const Tensor<Scalar>& grad_out) {
    if (!has_cache_) throw StateError(table_.name + ": backward before forward");
    has_cache_ = false;
    Index dim = table_.value.dim(1);
    for (Index b = 0; b < cached_.batch(); ++b)
      for (Index t = 0; t < cached_.length(); ++t) {
        if (!cached_.mask(b, t)) continue;
        Index tok = cached_.tokens(b, t);
        for (Index d = 0; d < dim; ++d) table_.grad(tok, d) += grad_out(b, t, d);
      }
  }

  ParamTensor<Scalar>& table() { return table_; }
  void collect(std::vector<ParamTensor<Scalar>*>& out) { out.push_back(&table_); }

 private:
  ParamTensor<Scalar> table_;
  MaskedSequence cached_;
  bool has_cache_ = false;
};

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

// Gate order everywhere: input, forget, candidate, output.
inline constexpr std::array<const char*, 4> kGateNames = {"i", "f", "g", "o"};

template <typename Scalar>
struct LSTMCellParams {
  std::array<ParamTensor<Scalar>, 4> w;  // input-to-gate, d_in x d_h
  std::array<ParamTensor<Scalar>, 4> u;  // recurrent, d_h x d_h
  std::array<ParamTensor<Scalar>, 4> b;  // d_h

  LSTMCellParams(const std::string& name, Index d_in, Index d_h, Rng& rng) {
    for (int g = 0; g < 4; ++g) {
      w[g] = ParamTensor<Scalar>(name + ".W_" + kGateNames[g], {d_in, d_h});
      init::glorot(w[g].value, rng);
    }
    for (int g = 0; g < 4; ++g) {
      u[g] = ParamTensor<Scalar>(name + ".U_" + kGateNames[g], {d_h, d_h});
      init::orthogonal(u[g].value, rng);
    }
    for (int g = 0; g < 4; ++g)
      b[g] = ParamTensor<Scalar>(name + ".b_" + kGateNames[g], {d_h});
    b[1].value.flat().setConstant(Scalar(1));  // forget gate open at start
  }

  Index input_dim() const { return w[0].value.dim(0); }
  Index hidden_dim() const { return w[0].value.dim(1); }
};

// Non-stateful masked LSTM: states start at zero for every batch, masked
// timesteps carry the hidden and cell state through unchanged (which is what
// makes left-padding a no-op), and only the state after the final timestep
// is returned.
template <typename Scalar>
class LSTMLayer {
 public:
  LSTMLayer(std::string name, Index input_dim, Index hidden_dim, Rng& rng)
      : params_(name, input_dim, hidden_dim, rng), name_(std::move(name)) {}

  // x: (batch, T, input_dim); mask: batch x T. Returns (batch, hidden_dim).
  Tensor<Scalar> forward(const Tensor<Scalar>& x, const MaskMatrix& mask) {
    x.require_rank(3);
    Index batch = x.dim(0), steps = x.dim(1), d_in = x.dim(2), d_h = hidden_dim();
    if (steps == 0) throw DimensionError(name_ + ": zero-length sequence");
    if (d_in != input_dim())
      throw DimensionError(name_ + ": input width " + std::to_string(d_in) + ", expected " +
                           std::to_string(input_dim()));
    if (mask.rows() != batch || mask.cols() != steps)
      throw DimensionError(name_ + ": mask shape does not match input");

    x_ = x;
    mask_ = mask;
    steps_.assign(static_cast<std::size_t>(steps), StepCache{});
    MatrixX<Scalar> h = MatrixX<Scalar>::Zero(batch, d_h);
    MatrixX<Scalar> c = MatrixX<Scalar>::Zero(batch, d_h);

    for (Index t = 0; t < steps; ++t) {
      StepCache& s = steps_[static_cast<std::size_t>(t)];
      s.active = mask.col(t).any();
      if (!s.active) continue;  // whole step is padding, state carries
      s.h_in = h;
      s.c_in = c;
      auto x_t = timestep(x_, t);
      s.gate[0] = gate_pre(x_t, h, 0);
      s.gate[1] = gate_pre(x_t, h, 1);
      s.gate[2] = gate_pre(x_t, h, 2);
      s.gate[3] = gate_pre(x_t, h, 3);
      s.gate[0] = sigmoid_m(s.gate[0]);
      s.gate[1] = sigmoid_m(s.gate[1]);
      s.gate[2] = s.gate[2].array().tanh().matrix();
      s.gate[3] = sigmoid_m(s.gate[3]);
      MatrixX<Scalar> c_new =
          (s.gate[1].array() * c.array() + s.gate[0].array() * s.gate[2].array()).matrix();
      s.tanh_c = c_new.array().tanh().matrix();
      MatrixX<Scalar> h_new = (s.gate[3].array() * s.tanh_c.array()).matrix();
      for (Index bi = 0; bi < batch; ++bi) {
        if (!mask(bi, t)) continue;  // carry state for padded rows
        c.row(bi) = c_new.row(bi);
        h.row(bi) = h_new.row(bi);
      }
    }

    has_cache_ = true;
    Tensor<Scalar> out({batch, d_h});
    out.mat() = h;
    return out;
  }

  // grad_h_last: (batch, hidden_dim). Returns gradient w.r.t. x.
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_h_last) {
    if (!has_cache_) throw StateError(name_ + ": backward before forward");
    has_cache_ = false;
    Index batch = x_.dim(0), steps = x_.dim(1), d_in = x_.dim(2), d_h = hidden_dim();
    grad_h_last.require_rank(2);

    MatrixX<Scalar> dh = grad_h_last.mat();
    MatrixX<Scalar> dc = MatrixX<Scalar>::Zero(batch, d_h);
    Tensor<Scalar> dx({batch, steps, d_in});

    for (Index t = steps - 1; t >= 0; --t) {
      const StepCache& s = steps_[static_cast<std::size_t>(t)];
      if (!s.active) continue;

      // Row mask as 0/1 scalars; padded rows keep dh/dc untouched and
      // contribute nothing to parameter gradients.
      ArrayX<Scalar> m(batch);
      for (Index bi = 0; bi < batch; ++bi) m[bi] = mask_(bi, t) ? Scalar(1) : Scalar(0);

      MatrixX<Scalar> dtanh = (dh.array() * s.gate[3].array()).matrix();
      MatrixX<Scalar> dc_tot =
          (dc.array() + dtanh.array() * (Scalar(1) - s.tanh_c.array().square())).matrix();
      MatrixX<Scalar> dz[4];
      // d(pre-activation) per gate: sigmoid' = y(1-y), tanh' = 1-y^2
      dz[0] = (dc_tot.array() * s.gate[2].array() * s.gate[0].array() *
               (Scalar(1) - s.gate[0].array()))
                  .matrix();
      dz[1] = (dc_tot.array() * s.c_in.array() * s.gate[1].array() *
               (Scalar(1) - s.gate[1].array()))
                  .matrix();
      dz[2] = (dc_tot.array() * s.gate[0].array() * (Scalar(1) - s.gate[2].array().square()))
                  .matrix();
      dz[3] = (dh.array() * s.tanh_c.array() * s.gate[3].array() *
               (Scalar(1) - s.gate[3].array()))
                  .matrix();
      for (int g = 0; g < 4; ++g) dz[g].array().colwise() *= m;

      auto x_t = timestep(x_, t);
      MatrixX<Scalar> dh_cell = MatrixX<Scalar>::Zero(batch, d_h);
      MatrixX<Scalar> dx_t = MatrixX<Scalar>::Zero(batch, d_in);
      for (int g = 0; g < 4; ++g) {
        params_.w[g].grad.mat().noalias() += x_t.transpose() * dz[g];
        params_.u[g].grad.mat().noalias() += s.h_in.transpose() * dz[g];
        params_.b[g].grad.mat(1, d_h).noalias() += dz[g].colwise().sum();
        dh_cell.noalias() += dz[g] * params_.u[g].value.mat().transpose();
        dx_t.noalias() += dz[g] * params_.w[g].value.mat().transpose();
      }
      for (Index bi = 0; bi < batch; ++bi)
        for (Index d = 0; d < d_in; ++d) dx(bi, t, d) = dx_t(bi, d);

      MatrixX<Scalar> dc_cell = (dc_tot.array() * s.gate[1].array()).matrix();
      for (Index bi = 0; bi < batch; ++bi) {
        if (!mask_(bi, t)) continue;
        dh.row(bi) = dh_cell.row(bi);
        dc.row(bi) = dc_cell.row(bi);
      }
    }
    return dx;
  }

  Index input_dim() const { return params_.input_dim(); }
  Index hidden_dim() const { return params_.hidden_dim(); }
  LSTMCellParams<Scalar>& params() { return params_; }

  void collect(std::vector<ParamTensor<Scalar>*>& out) {
    for (int g = 0; g < 4; ++g) out.push_back(&params_.w[g]);
    for (int g = 0; g < 4; ++g) out.push_back(&params_.u[g]);
    for (int g = 0; g < 4; ++g) out.push_back(&params_.b[g]);
  }

 private:
  struct StepCache {
    bool active = false;
    MatrixX<Scalar> h_in, c_in;
    std::array<MatrixX<Scalar>, 4> gate;  // post-activation i, f, g, o
    MatrixX<Scalar> tanh_c;
  };

  MatrixX<Scalar> gate_pre(const StepMap<Scalar>& x_t, const MatrixX<Scalar>& h, int g) {
    MatrixX<Scalar> z = x_t * params_.w[g].value.mat();
    z.noalias() += h * params_.u[g].value.mat();
    z.rowwise() += params_.b[g].value.mat(1, hidden_dim()).row(0);
    return z;
  }

  static MatrixX<Scalar> sigmoid_m(const MatrixX<Scalar>& z) {
    return (Scalar(1) / (Scalar(1) + (-z.array()).exp())).matrix();
  }

  LSTMCellParams<Scalar> params_;
  std::string name_;
  Tensor<Scalar> x_;
  MaskMatrix mask_;
  std::vector<StepCache> steps_;
  bool has_cache_ = false;
};

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

enum class Activation { kNone, kRelu, kSoftmax };

template <typename Scalar>
class DenseLayer {
 public:
  DenseLayer(std::string name, Index d_in, Index d_out, Activation act, Rng& rng)
      : w_(name + ".W", {d_in, d_out}), b_(name + ".b", {d_out}), act_(act),
        name_(std::move(name)) {
    init::glorot(w_.value, rng);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    x.require_rank(2);
    if (x.dim(1) != w_.value.dim(0))
      throw DimensionError(name_ + ": input width " + std::to_string(x.dim(1)) +
                           ", expected " + std::to_string(w_.value.dim(0)));
    x_ = x;
    Tensor<Scalar> z({x.dim(0), w_.value.dim(1)});
    z.mat().noalias() = x.mat() * w_.value.mat();
    z.mat().rowwise() += b_.value.mat(1, b_.value.size()).row(0);
    switch (act_) {
      case Activation::kNone: y_ = z; break;
      case Activation::kRelu: y_ = relu(z); break;
      case Activation::kSoftmax: y_ = softmax_rows(z); break;
    }
    z_ = std::move(z);
    has_cache_ = true;
    return y_;
  }

  // General path: grad_y holds dL/d(output); works for every activation
  // (softmax backward applies the full Jacobian product per row).
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_y) {
    if (!has_cache_) throw StateError(name_ + ": backward before forward");
    require_same_shape(grad_y, y_, "dense backward");
    Tensor<Scalar> dz(grad_y.shape());
    switch (act_) {
      case Activation::kNone:
        dz = grad_y;
        break;
      case Activation::kRelu:
        dz.flat() = grad_y.flat() * (z_.flat() > Scalar(0)).template cast<Scalar>();
        break;
      case Activation::kSoftmax:
        for (Index r = 0; r < grad_y.dim(0); ++r) {
          Scalar dot = 0;
          for (Index j = 0; j < grad_y.dim(1); ++j) dot += grad_y(r, j) * y_(r, j);
          for (Index j = 0; j < grad_y.dim(1); ++j)
            dz(r, j) = y_(r, j) * (grad_y(r, j) - dot);
        }
        break;
    }
    return backward_pre(dz);
  }

  // Fused softmax + mean cross-entropy gradient: dz = (p - onehot) / batch.
  // Only meaningful for the softmax classifier head.
  Tensor<Scalar> backward_cross_entropy(const std::vector<std::int32_t>& targets) {
    if (!has_cache_) throw StateError(name_ + ": backward before forward");
    if (act_ != Activation::kSoftmax)
      throw StateError(name_ + ": cross-entropy backward needs softmax activation");
    if (static_cast<Index>(targets.size()) != y_.dim(0))
      throw DimensionError(name_ + ": " + std::to_string(targets.size()) +
                           " targets for batch " + std::to_string(y_.dim(0)));
    Tensor<Scalar> dz(y_.shape());
    Scalar inv_b = Scalar(1) / static_cast<Scalar>(y_.dim(0));
    for (Index r = 0; r < y_.dim(0); ++r) {
      std::int32_t tgt = targets[static_cast<std::size_t>(r)];
      if (tgt < 0 || tgt >= y_.dim(1))
        throw BoundsError(name_ + ": target " + std::to_string(tgt) + " out of range [0," +
                          std::to_string(y_.dim(1)) + ")");
      for (Index j = 0; j < y_.dim(1); ++j) dz(r, j) = y_(r, j) * inv_b;
      dz(r, tgt) -= inv_b;
    }
    return backward_pre(dz);
  }

  void collect(std::vector<ParamTensor<Scalar>*>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
  }
  ParamTensor<Scalar>& weights() { return w_; }
  ParamTensor<Scalar>& bias() { return b_; }

 private:
  Tensor<Scalar> backward_pre(const Tensor<Scalar>& dz) {
    has_cache_ = false;
    w_.grad.mat().noalias() += x_.mat().transpose() * dz.mat();
    b_.grad.mat(1, b_.grad.size()).noalias() += dz.mat().colwise().sum();
    Tensor<Scalar> dx(x_.shape());
    dx.mat().noalias() = dz.mat() * w_.value.mat().transpose();
    return dx;
  }

  ParamTensor<Scalar> w_, b_;
  Activation act_;
  std::string name_;
  Tensor<Scalar> x_, z_, y_;
  bool has_cache_ = false;
};

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

template <typename Scalar>
class BatchNormLayer {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.99;

  BatchNormLayer(std::string name, Index dim)
      : gamma_(name + ".gamma", {dim}), beta_(name + ".beta", {dim}),
        running_mean_(name + ".running_mean", {dim}),
        running_var_(name + ".running_var", {dim}), name_(std::move(name)) {
    gamma_.value.flat().setConstant(Scalar(1));
    running_var_.value.flat().setConstant(Scalar(1));
    running_mean_.trainable = false;
    running_var_.trainable = false;
  }

  // x: (rows, dim). Train mode standardizes by batch statistics and updates
  // the running estimates; infer mode standardizes by the running estimates
  // and leaves them untouched.
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) {
    x.require_rank(2);
    Index rows = x.dim(0), dim = x.dim(1);
    if (dim != gamma_.value.size())
      throw DimensionError(name_ + ": feature width " + std::to_string(dim) + ", expected " +
                           std::to_string(gamma_.value.size()));
    Tensor<Scalar> y(x.shape());
    if (mode == Mode::kTrain) {
      if (rows < 2)
        throw ValueError(name_ + ": train mode needs a batch of at least 2, got " +
                         std::to_string(rows));
      mean_ = x.mat().colwise().mean();
      MatrixX<Scalar> centered = x.mat().rowwise() - mean_;
      var_ = centered.array().square().colwise().mean();
      inv_std_ = (var_ + Scalar(kEps)).rsqrt();
      xhat_ = centered.array().rowwise() * inv_std_;
      y.mat() = (xhat_.rowwise() * gamma_.value.flat().transpose()).matrix();
      y.mat().rowwise() += beta_.value.mat(1, dim).row(0);
      for (Index j = 0; j < dim; ++j) {
        running_mean_.value(j) = static_cast<Scalar>(kMomentum * running_mean_.value(j) +
                                                     (1.0 - kMomentum) * mean_(j));
        running_var_.value(j) = static_cast<Scalar>(kMomentum * running_var_.value(j) +
                                                    (1.0 - kMomentum) * var_(j));
      }
      has_cache_ = true;
    } else {
      for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < dim; ++j) {
          Scalar s = Scalar(1) / std::sqrt(running_var_.value(j) + Scalar(kEps));
          y(i, j) = gamma_.value(j) * (x(i, j) - running_mean_.value(j)) * s + beta_.value(j);
        }
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad_y) {
    if (!has_cache_) throw StateError(name_ + ": backward before train-mode forward");
    has_cache_ = false;
    grad_y.require_rank(2);
    Index rows = grad_y.dim(0), dim = grad_y.dim(1);
    Scalar n = static_cast<Scalar>(rows);

    Eigen::Array<Scalar, 1, Eigen::Dynamic> dgamma =
        (grad_y.mat().array() * xhat_).colwise().sum();
    Eigen::Array<Scalar, 1, Eigen::Dynamic> dbeta = grad_y.mat().array().colwise().sum();
    gamma_.grad.mat(1, dim).array() += dgamma;
    beta_.grad.mat(1, dim).array() += dbeta;

    // dx = inv_std/N * (N*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat)),
    // the batch mean and variance treated as functions of x.
    RowArrays dxhat = grad_y.mat().array().rowwise() * gamma_.value.flat().transpose();
    Eigen::Array<Scalar, 1, Eigen::Dynamic> sum_dxhat = dxhat.colwise().sum();
    Eigen::Array<Scalar, 1, Eigen::Dynamic> sum_dxhat_xhat = (dxhat * xhat_).colwise().sum();
    Tensor<Scalar> dx(grad_y.shape());
    dx.mat() = ((((dxhat * n).rowwise() - sum_dxhat) - (xhat_.rowwise() * sum_dxhat_xhat))
                    .rowwise() *
                (inv_std_ / n))
                   .matrix();
    return dx;
  }

  void collect(std::vector<ParamTensor<Scalar>*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
  }
  ParamTensor<Scalar>& gamma() { return gamma_; }
  ParamTensor<Scalar>& beta() { return beta_; }

 private:
  using RowArrays = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  ParamTensor<Scalar> gamma_, beta_, running_mean_, running_var_;
  std::string name_;
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mean_;
  Eigen::Array<Scalar, 1, Eigen::Dynamic> var_, inv_std_;
  RowArrays xhat_;
  bool has_cache_ = false;
};

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

// Inverted dropout: survivors are scaled by 1/(1-rate) at train time so
// inference is the identity.
template <typename Scalar>
class DropoutLayer {
 public:
  explicit DropoutLayer(double rate) : rate_(rate) {
    if (rate < 0.0 || rate >= 1.0)
      throw ValueError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode, Rng& rng) {
    if (mode == Mode::kInfer || rate_ == 0.0) {
      scaled_mask_.reset();
      has_cache_ = true;
      return x;
    }
    Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - rate_));
    scaled_mask_.emplace(x.shape());
    Tensor<Scalar> y(x.shape());
    for (Index i = 0; i < x.size(); ++i) {
      Scalar m = rng.uniform() < rate_ ? Scalar(0) : keep_scale;
      (*scaled_mask_)(i) = m;
      y(i) = x(i) * m;
    }
    has_cache_ = true;
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad_y) {
    if (!has_cache_) throw StateError("dropout: backward before forward");
    has_cache_ = false;
    if (!scaled_mask_) return grad_y;
    return mul(grad_y, *scaled_mask_);
  }

  double rate() const { return rate_; }

 private:
  double rate_;
  std::optional<Tensor<Scalar>> scaled_mask_;
  bool has_cache_ = false;
};

// ---------------------------------------------------------------------------
// Repeat, merge
// ---------------------------------------------------------------------------

// (batch, d) -> (batch, n, d) with n identical copies along the new axis.
template <typename Scalar>
Tensor<Scalar> repeat_vector(const Tensor<Scalar>& v, Index n) {
  v.require_rank(2);
  if (n < 1) throw ValueError("repeat_vector: count must be >= 1, got " + std::to_string(n));
  Tensor<Scalar> out({v.dim(0), n, v.dim(1)});
  for (Index b = 0; b < v.dim(0); ++b)
    for (Index t = 0; t < n; ++t)
      for (Index d = 0; d < v.dim(1); ++d) out(b, t, d) = v(b, d);
  return out;
}

// Upstream slabs sum over the repeat axis.
template <typename Scalar>
Tensor<Scalar> repeat_vector_backward(const Tensor<Scalar>& grad_out) {
  grad_out.require_rank(3);
  Tensor<Scalar> dv({grad_out.dim(0), grad_out.dim(2)});
  for (Index b = 0; b < grad_out.dim(0); ++b)
    for (Index t = 0; t < grad_out.dim(1); ++t)
      for (Index d = 0; d < grad_out.dim(2); ++d) dv(b, d) += grad_out(b, t, d);
  return dv;
}

template <typename Scalar>
Tensor<Scalar> merge_sum(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("merge(sum): shapes differ: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  return add(a, b);
}

// Concatenation along the last axis; all leading axes must agree.
template <typename Scalar>
Tensor<Scalar> merge_concat(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != b.rank() || a.rank() < 1)
    throw DimensionError("merge(concat): ranks differ: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  for (int i = 0; i + 1 < a.rank(); ++i)
    if (a.dim(i) != b.dim(i))
      throw DimensionError("merge(concat): leading axes differ: " + shape_string(a.shape()) +
                           " vs " + shape_string(b.shape()));
  Index da = a.dim(a.rank() - 1), db = b.dim(b.rank() - 1);
  std::vector<Index> shape = a.shape();
  shape.back() = da + db;
  Tensor<Scalar> out(shape);
  Index outer = a.size() / da;
  for (Index o = 0; o < outer; ++o) {
    for (Index d = 0; d < da; ++d) out(o * (da + db) + d) = a(o * da + d);
    for (Index d = 0; d < db; ++d) out(o * (da + db) + da + d) = b(o * db + d);
  }
  return out;
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> split_last_axis(const Tensor<Scalar>& x, Index da) {
  Index dtot = x.dim(x.rank() - 1);
  if (da <= 0 || da >= dtot)
    throw DimensionError("split_last_axis: width " + std::to_string(da) + " out of " +
                         std::to_string(dtot));
  Index db = dtot - da;
  std::vector<Index> sa = x.shape(), sb = x.shape();
  sa.back() = da;
  sb.back() = db;
  Tensor<Scalar> a(sa), b(sb);
  Index outer = x.size() / dtot;
  for (Index o = 0; o < outer; ++o) {
    for (Index d = 0; d < da; ++d) a(o * da + d) = x(o * dtot + d);
    for (Index d = 0; d < db; ++d) b(o * db + d) = x(o * dtot + da + d);
  }
  return {std::move(a), std::move(b)};
}

}  // namespace vqaforge
