#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qisicgm/common.hpp"

namespace qisicgm::nn {

// --- tensors and parameters --------------------------------------------------

/// Tensor payloads use Eigen-aligned storage so that mapped kernels see the
/// same pointer alignment on every allocation; reduction order (and therefore
/// the low bits of results) would otherwise vary with the allocator's mood.
using AlignedVector = std::vector<double, Eigen::aligned_allocator<double>>;

struct Tensor {
  std::vector<int> shape;
  AlignedVector data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(element_count(shape)), 0.0);
  }

  static std::int64_t element_count(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }
  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
};

using MatView = Eigen::Map<Mat>;
using ConstMatView = Eigen::Map<const Mat>;

inline MatView view2d(Tensor& t, Eigen::Index rows, Eigen::Index cols) {
  return MatView(t.data.data(), rows, cols);
}
inline ConstMatView view2d(const Tensor& t, Eigen::Index rows, Eigen::Index cols) {
  return ConstMatView(t.data.data(), rows, cols);
}

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param(std::string n, std::vector<int> shape) : name(std::move(n)), value(shape), grad(shape) {}
  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

/// Fills a weight tensor with U(-1/sqrt(fan_in), 1/sqrt(fan_in)) draws.
void init_fan_in_uniform(Param& p, int fan_in, std::mt19937_64& rng);

class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void attach(std::vector<Param*> params);
  void step();  // applies every attached param's grad

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Param*> params_;
  std::vector<std::vector<double>> m_, v_;
};

// --- losses ------------------------------------------------------------------

double bce_mean_from_logits(const Vec& logits, const std::vector<double>& y);
Vec bce_grad_from_logits(const Vec& logits, const std::vector<double>& y);  // d(mean BCE)/dz

/// Multi-class softmax cross-entropy over logit rows; grad is (softmax - onehot)/B.
double softmax_cross_entropy(const Mat& logits, const std::vector<int>& labels, Mat* dlogits);

// --- standalone ops ----------------------------------------------------------

/// softmax(Q K^T / sqrt(d_k)) V with row-max stabilization.
Mat attention(const Mat& Q, const Mat& K, const Mat& V);

/// Row-wise stabilized softmax in place.
void softmax_rows(Eigen::Ref<Mat> m);

// --- configs (defaults follow the reference architecture) --------------------

struct TransformerConfig {
  int layers = 4;
  int heads = 8;
  int model_dim = 128;
  int ff_dim = 256;
  double dropout = 0.1;
};

struct CnnSeqConfig {
  int conv_layers = 3;
  int filters = 64;
  int kernel_size = 3;
};

struct FfnnConfig {
  std::vector<int> hidden_dims = {128, 64};
  double dropout = 0.2;
};

// --- models ------------------------------------------------------------------
// Each model exposes the same trio used by the shared trainer: forward_logits
// over a batch of row indices (caching activations), backward from dlogits
// (accumulating into param grads), and the ordered parameter list.

/// Dense feed-forward binary classifier over flat feature rows.
class FfnnModel {
 public:
  FfnnModel() = default;
  FfnnModel(const FfnnConfig& cfg, int input_dim, std::uint64_t seed);

  Vec forward_logits(const Mat& X, const std::vector<int>& idx, bool train,
                     std::mt19937_64* rng);
  void backward(const Vec& dlogits);
  std::vector<Param*> params();
  std::vector<const Param*> params() const;

  std::vector<double> predict_proba(const Mat& X);

  const FfnnConfig& config() const { return cfg_; }
  int input_dim() const { return input_dim_; }

 private:
  FfnnConfig cfg_;
  int input_dim_ = 0;
  std::vector<Param> params_;
  // caches
  Mat x_, a1_pre_, a1_, mask1_, a2_pre_, a2_, mask2_;
  bool train_cached_ = false;
};

/// Pre-layer-norm transformer encoder over fixed-length sequences, mean-pooled
/// into a dense sigmoid head.
class TransformerModel {
 public:
  TransformerModel() = default;
  TransformerModel(const TransformerConfig& cfg, int seq_len, std::uint64_t seed);

  Vec forward_logits(const Tensor& seqs, const std::vector<int>& idx, bool train,
                     std::mt19937_64* rng);
  void backward(const Vec& dlogits);
  std::vector<Param*> params();
  std::vector<const Param*> params() const;

  std::vector<double> predict_proba(const Tensor& seqs);

  const TransformerConfig& config() const { return cfg_; }
  int seq_len() const { return seq_len_; }

 private:
  struct LayerParams {
    int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    int ln2_g, ln2_b, wf1, bf1, wf2, bf2;
  };
  struct LayerCache {
    Mat x_in;                  // block input (B*s, D)
    Mat ln1_xhat, ln2_xhat;    // normalized activations
    Vec ln1_inv, ln2_inv;      // per-row 1/sqrt(var+eps)
    Mat q, k, v;               // projections (B*s, D)
    Tensor attn;               // softmax weights (B, H, s, s)
    Mat concat;                // attention heads concatenated (B*s, D)
    Mat attn_mask, ff_mask;    // dropout masks
    Mat x_mid;                 // after attention residual
    Mat f1_pre, f1_act;        // feed-forward hidden
  };

  Param& p(int i) { return params_[static_cast<std::size_t>(i)]; }
  const Param& p(int i) const { return params_[static_cast<std::size_t>(i)]; }

  TransformerConfig cfg_;
  int seq_len_ = 0;
  std::vector<Param> params_;
  std::vector<LayerParams> layer_index_;
  int wh_ = 0, bh_ = 0;
  // caches
  std::vector<LayerCache> caches_;
  Mat x_out_, pooled_;
  int batch_ = 0;
  bool train_cached_ = false;
  Mat dx_;  // scratch for backward
};

/// Stack of same-padded 1-D convolutions with ReLU, global max-pool, dense
/// sigmoid head.
class CnnSeqModel {
 public:
  CnnSeqModel() = default;
  CnnSeqModel(const CnnSeqConfig& cfg, int seq_len, int in_channels, std::uint64_t seed);

  Vec forward_logits(const Tensor& seqs, const std::vector<int>& idx, bool train,
                     std::mt19937_64* rng);
  void backward(const Vec& dlogits);
  std::vector<Param*> params();
  std::vector<const Param*> params() const;

  std::vector<double> predict_proba(const Tensor& seqs);

  const CnnSeqConfig& config() const { return cfg_; }
  int seq_len() const { return seq_len_; }
  int in_channels() const { return in_channels_; }

 private:
  CnnSeqConfig cfg_;
  int seq_len_ = 0;
  int in_channels_ = 0;
  std::vector<Param> params_;  // per layer: W {k, C_in, C_out}, b {C_out}; then head
  int wh_ = 0, bh_ = 0;
  // caches
  std::vector<Mat> layer_in_, layer_pre_, layer_post_;
  Mat pooled_;
  std::vector<std::vector<int>> argmax_;  // [b][c] -> t
  int batch_ = 0;
};

// --- training ----------------------------------------------------------------

struct TrainOptions {
  int epochs = 50;
  double lr = 1e-3;
  int batch_size = 32;
  std::uint64_t seed = 0;
};

/// Mini-batch Adam training against mean binary cross-entropy. Returns the
/// per-epoch mean training loss. Batches are reshuffled each epoch from the
/// seed; identical seeds give bit-identical parameters.
template <class Model, class Input>
std::vector<double> train_binary(Model& model, const Input& X, const std::vector<int>& labels,
                                 const TrainOptions& opt) {
  const int n = static_cast<int>(labels.size());
  int positives = 0;
  for (int y : labels) positives += y;
  if (positives < 2 || n - positives < 2) {
    throw std::runtime_error("train_binary: need at least 2 samples per class (got " +
                             std::to_string(positives) + " positive of " + std::to_string(n) + ")");
  }

  AdamOptimizer adam(opt.lr);
  adam.attach(model.params());
  auto rng = make_rng(opt.seed, 1);

  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(opt.epochs));
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (int start = 0; start < n; start += opt.batch_size) {
      const int stop = std::min(n, start + opt.batch_size);
      std::vector<int> batch(order.begin() + start, order.begin() + stop);
      std::vector<double> yb(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        yb[i] = static_cast<double>(labels[static_cast<std::size_t>(batch[i])]);
      }
      const Vec logits = model.forward_logits(X, batch, true, &rng);
      const double loss = bce_mean_from_logits(logits, yb);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train_binary: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", batch " + std::to_string(start));
      }
      epoch_loss += loss * static_cast<double>(batch.size());
      for (Param* param : model.params()) param->zero_grad();
      model.backward(bce_grad_from_logits(logits, yb));
      adam.step();
    }
    trace.push_back(epoch_loss / static_cast<double>(n));
  }
  return trace;
}

}  // namespace qisicgm::nn
