#include "qisicgm/neuralkernel.hpp"

#include <cmath>
#include <stdexcept>

namespace qisicgm::nn {

namespace {

constexpr double kLayerNormEps = 1e-5;

using VecView = Eigen::Map<Vec>;
using ConstVecView = Eigen::Map<const Vec>;

VecView vec_of(Tensor& t) { return VecView(t.data.data(), static_cast<Eigen::Index>(t.data.size())); }
ConstVecView vec_of(const Tensor& t) {
  return ConstVecView(t.data.data(), static_cast<Eigen::Index>(t.data.size()));
}

void add_bias(Mat& m, const Param& b) { m.rowwise() += vec_of(b.value).transpose(); }

void accumulate_bias_grad(Param& b, const Mat& dy) {
  vec_of(b.grad) += dy.colwise().sum().transpose();
}

// y = x * W + b
void dense_forward(const Mat& x, const Param& W, const Param& b, Mat& y, int in, int out) {
  y.noalias() = x * view2d(W.value, in, out);
  add_bias(y, b);
}

// accumulates dW, db; dx optional
void dense_backward(const Mat& x, const Mat& dy, Param& W, Param& b, Mat* dx, int in, int out) {
  view2d(W.grad, in, out).noalias() += x.transpose() * dy;
  accumulate_bias_grad(b, dy);
  if (dx) dx->noalias() = dy * view2d(W.value, in, out).transpose();
}

void relu_inplace(Mat& m) { m = m.cwiseMax(0.0); }

// dx = dy where pre > 0
void relu_backward(const Mat& pre, Mat& dy) {
  dy = ((pre.array() > 0.0).cast<double>() * dy.array()).matrix();
}

/// Inverted dropout: mask entries are 1/(1-rate) or 0, so inference needs no
/// rescaling.
void dropout_mask(Mat& mask, double rate, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double keep = 1.0 - rate;
  for (Eigen::Index i = 0; i < mask.rows(); ++i) {
    for (Eigen::Index j = 0; j < mask.cols(); ++j) {
      mask(i, j) = unit(rng) < keep ? 1.0 / keep : 0.0;
    }
  }
}

void layernorm_forward(const Mat& x, const Param& g, const Param& b, Mat& y, Mat& xhat, Vec& inv) {
  const Eigen::Index rows = x.rows(), cols = x.cols();
  y.resize(rows, cols);
  xhat.resize(rows, cols);
  inv.resize(rows);
  const auto gv = vec_of(g.value);
  const auto bv = vec_of(b.value);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    const double istd = 1.0 / std::sqrt(var + kLayerNormEps);
    inv(i) = istd;
    xhat.row(i) = ((x.row(i).array() - mean) * istd).matrix();
    y.row(i) = (xhat.row(i).array() * gv.transpose().array() + bv.transpose().array()).matrix();
  }
}

/// dx for y = g .* xhat + b; accumulates dg, db.
void layernorm_backward(const Mat& dy, const Mat& xhat, const Vec& inv, Param& g, Param& b,
                        Mat& dx) {
  const Eigen::Index rows = dy.rows(), cols = dy.cols();
  dx.resize(rows, cols);
  auto dg = vec_of(g.grad);
  auto db = vec_of(b.grad);
  const auto gv = vec_of(g.value);
  dg += (dy.array() * xhat.array()).colwise().sum().matrix().transpose();
  db += dy.colwise().sum().transpose();
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Eigen::ArrayXd dxhat = dy.row(i).transpose().array() * gv.array();
    const double mean_dxhat = dxhat.mean();
    const double mean_dxhat_xhat = (dxhat * xhat.row(i).transpose().array()).mean();
    dx.row(i) = (inv(i) * (dxhat - mean_dxhat - xhat.row(i).transpose().array() * mean_dxhat_xhat))
                    .matrix()
                    .transpose();
  }
}

// dS = A .* (dA - rowsum(dA .* A)) per row
void softmax_backward_rows(const Mat& A, const Mat& dA, Mat& dS) {
  dS.resize(A.rows(), A.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    const double dot = dA.row(i).dot(A.row(i));
    dS.row(i) = (A.row(i).array() * (dA.row(i).array() - dot)).matrix();
  }
}

[[noreturn]] void throw_divergence(const std::string& model, const std::string& layer) {
  throw std::runtime_error(model + ": non-finite activations at " + layer);
}

}  // namespace

void init_fan_in_uniform(Param& p, int fan_in, std::mt19937_64& rng) {
  const double r = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-r, r);
  for (double& v : p.value.data) v = dist(rng);
}

void AdamOptimizer::attach(std::vector<Param*> params) {
  params_ = std::move(params);
  m_.clear();
  v_.clear();
  for (const Param* p : params_) {
    m_.emplace_back(p->value.data.size(), 0.0);
    v_.emplace_back(p->value.data.size(), 0.0);
  }
  t_ = 0;
}

void AdamOptimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& value = params_[i]->value.data;
    const auto& grad = params_[i]->grad.data;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * grad[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * grad[j] * grad[j];
      value[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
    }
  }
}

double bce_mean_from_logits(const Vec& logits, const std::vector<double>& y) {
  double loss = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    loss += softplus(logits(i)) - y[static_cast<std::size_t>(i)] * logits(i);
  }
  return loss / static_cast<double>(logits.size());
}

Vec bce_grad_from_logits(const Vec& logits, const std::vector<double>& y) {
  Vec g(logits.size());
  const double inv_n = 1.0 / static_cast<double>(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    g(i) = (sigmoid(logits(i)) - y[static_cast<std::size_t>(i)]) * inv_n;
  }
  return g;
}

double softmax_cross_entropy(const Mat& logits, const std::vector<int>& labels, Mat* dlogits) {
  const Eigen::Index B = logits.rows();
  Mat probs = logits;
  softmax_rows(probs);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    loss -= std::log(std::max(probs(i, c), 1e-300));
  }
  loss /= static_cast<double>(B);
  if (dlogits) {
    *dlogits = probs / static_cast<double>(B);
    for (Eigen::Index i = 0; i < B; ++i) {
      (*dlogits)(i, labels[static_cast<std::size_t>(i)]) -= 1.0 / static_cast<double>(B);
    }
  }
  return loss;
}

void softmax_rows(Eigen::Ref<Mat> m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp().matrix();
    m.row(i) /= m.row(i).sum();
  }
}

Mat attention(const Mat& Q, const Mat& K, const Mat& V) {
  if (Q.cols() != K.cols() || K.rows() != V.rows()) {
    throw std::runtime_error("attention: inconsistent shapes Q(" + std::to_string(Q.rows()) + "x" +
                             std::to_string(Q.cols()) + ") K(" + std::to_string(K.rows()) + "x" +
                             std::to_string(K.cols()) + ") V(" + std::to_string(V.rows()) + "x" +
                             std::to_string(V.cols()) + ")");
  }
  Mat scores = Q * K.transpose() / std::sqrt(static_cast<double>(Q.cols()));
  softmax_rows(scores);
  return scores * V;
}

// --- FfnnModel ---------------------------------------------------------------

FfnnModel::FfnnModel(const FfnnConfig& cfg, int input_dim, std::uint64_t seed)
    : cfg_(cfg), input_dim_(input_dim) {
  if (cfg_.hidden_dims.size() != 2) {
    throw std::runtime_error("FfnnModel: expected exactly 2 hidden dims");
  }
  if (!(cfg_.dropout >= 0.0 && cfg_.dropout < 1.0)) {
    throw std::runtime_error("FfnnModel: dropout must be in [0,1)");
  }
  const int h1 = cfg_.hidden_dims[0], h2 = cfg_.hidden_dims[1];
  params_.emplace_back("w1", std::vector<int>{input_dim, h1});
  params_.emplace_back("b1", std::vector<int>{h1});
  params_.emplace_back("w2", std::vector<int>{h1, h2});
  params_.emplace_back("b2", std::vector<int>{h2});
  params_.emplace_back("w3", std::vector<int>{h2, 1});
  params_.emplace_back("b3", std::vector<int>{1});
  auto rng = make_rng(seed, 0);
  init_fan_in_uniform(params_[0], input_dim, rng);
  init_fan_in_uniform(params_[1], input_dim, rng);
  init_fan_in_uniform(params_[2], h1, rng);
  init_fan_in_uniform(params_[3], h1, rng);
  init_fan_in_uniform(params_[4], h2, rng);
  init_fan_in_uniform(params_[5], h2, rng);
}

Vec FfnnModel::forward_logits(const Mat& X, const std::vector<int>& idx, bool train,
                              std::mt19937_64* rng) {
  const int B = static_cast<int>(idx.size());
  const int h1 = cfg_.hidden_dims[0], h2 = cfg_.hidden_dims[1];
  x_.resize(B, input_dim_);
  for (int i = 0; i < B; ++i) x_.row(i) = X.row(idx[static_cast<std::size_t>(i)]);

  a1_pre_.resize(B, h1);
  dense_forward(x_, params_[0], params_[1], a1_pre_, input_dim_, h1);
  a1_ = a1_pre_;
  relu_inplace(a1_);
  train_cached_ = train && cfg_.dropout > 0.0;
  if (train_cached_) {
    mask1_.resize(B, h1);
    dropout_mask(mask1_, cfg_.dropout, *rng);
    a1_ = a1_.cwiseProduct(mask1_);
  }

  a2_pre_.resize(B, h2);
  dense_forward(a1_, params_[2], params_[3], a2_pre_, h1, h2);
  a2_ = a2_pre_;
  relu_inplace(a2_);
  if (train_cached_) {
    mask2_.resize(B, h2);
    dropout_mask(mask2_, cfg_.dropout, *rng);
    a2_ = a2_.cwiseProduct(mask2_);
  }

  Mat z(B, 1);
  dense_forward(a2_, params_[4], params_[5], z, h2, 1);
  if (!z.allFinite()) {
    // cheap hot-path check on the logits only; the caches name the culprit
    if (!a1_pre_.allFinite()) throw_divergence("ffnn", "dense layer 1");
    if (!a2_pre_.allFinite()) throw_divergence("ffnn", "dense layer 2");
    throw_divergence("ffnn", "output head");
  }
  return z.col(0);
}

void FfnnModel::backward(const Vec& dlogits) {
  const int h1 = cfg_.hidden_dims[0], h2 = cfg_.hidden_dims[1];
  const Mat dz = dlogits;
  Mat da2;
  dense_backward(a2_, dz, params_[4], params_[5], &da2, h2, 1);
  if (train_cached_) da2 = da2.cwiseProduct(mask2_);
  relu_backward(a2_pre_, da2);
  Mat da1;
  dense_backward(a1_, da2, params_[2], params_[3], &da1, h1, h2);
  if (train_cached_) da1 = da1.cwiseProduct(mask1_);
  relu_backward(a1_pre_, da1);
  dense_backward(x_, da1, params_[0], params_[1], nullptr, input_dim_, h1);
}

std::vector<Param*> FfnnModel::params() {
  std::vector<Param*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}
std::vector<const Param*> FfnnModel::params() const {
  std::vector<const Param*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<double> FfnnModel::predict_proba(const Mat& X) {
  const int n = static_cast<int>(X.rows());
  std::vector<double> out(static_cast<std::size_t>(n));
  constexpr int kChunk = 512;
  for (int start = 0; start < n; start += kChunk) {
    const int stop = std::min(n, start + kChunk);
    std::vector<int> idx(static_cast<std::size_t>(stop - start));
    for (int i = start; i < stop; ++i) idx[static_cast<std::size_t>(i - start)] = i;
    const Vec z = forward_logits(X, idx, false, nullptr);
    for (int i = start; i < stop; ++i) out[static_cast<std::size_t>(i)] = sigmoid(z(i - start));
  }
  return out;
}

// --- TransformerModel --------------------------------------------------------

TransformerModel::TransformerModel(const TransformerConfig& cfg, int seq_len, std::uint64_t seed)
    : cfg_(cfg), seq_len_(seq_len) {
  if (cfg_.model_dim % cfg_.heads != 0) {
    throw std::runtime_error("TransformerModel: model_dim must be divisible by heads");
  }
  if (!(cfg_.dropout >= 0.0 && cfg_.dropout < 1.0)) {
    throw std::runtime_error("TransformerModel: dropout must be in [0,1)");
  }
  const int D = cfg_.model_dim, F = cfg_.ff_dim;
  auto add = [&](const std::string& name, std::vector<int> shape) {
    params_.emplace_back(name, std::move(shape));
    return static_cast<int>(params_.size()) - 1;
  };
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string pre = "l" + std::to_string(l) + ".";
    LayerParams lp;
    lp.ln1_g = add(pre + "ln1_g", {D});
    lp.ln1_b = add(pre + "ln1_b", {D});
    lp.wq = add(pre + "wq", {D, D});
    lp.bq = add(pre + "bq", {D});
    lp.wk = add(pre + "wk", {D, D});
    lp.bk = add(pre + "bk", {D});
    lp.wv = add(pre + "wv", {D, D});
    lp.bv = add(pre + "bv", {D});
    lp.wo = add(pre + "wo", {D, D});
    lp.bo = add(pre + "bo", {D});
    lp.ln2_g = add(pre + "ln2_g", {D});
    lp.ln2_b = add(pre + "ln2_b", {D});
    lp.wf1 = add(pre + "wf1", {D, F});
    lp.bf1 = add(pre + "bf1", {F});
    lp.wf2 = add(pre + "wf2", {F, D});
    lp.bf2 = add(pre + "bf2", {D});
    layer_index_.push_back(lp);
  }
  wh_ = add("head.w", {D, 1});
  bh_ = add("head.b", {1});

  auto rng = make_rng(seed, 0);
  for (int l = 0; l < cfg_.layers; ++l) {
    const LayerParams& lp = layer_index_[static_cast<std::size_t>(l)];
    vec_of(p(lp.ln1_g).value).setOnes();
    vec_of(p(lp.ln2_g).value).setOnes();
    init_fan_in_uniform(p(lp.wq), D, rng);
    init_fan_in_uniform(p(lp.bq), D, rng);
    init_fan_in_uniform(p(lp.wk), D, rng);
    init_fan_in_uniform(p(lp.bk), D, rng);
    init_fan_in_uniform(p(lp.wv), D, rng);
    init_fan_in_uniform(p(lp.bv), D, rng);
    init_fan_in_uniform(p(lp.wo), D, rng);
    init_fan_in_uniform(p(lp.bo), D, rng);
    init_fan_in_uniform(p(lp.wf1), D, rng);
    init_fan_in_uniform(p(lp.bf1), D, rng);
    init_fan_in_uniform(p(lp.wf2), F, rng);
    init_fan_in_uniform(p(lp.bf2), F, rng);
  }
  init_fan_in_uniform(p(wh_), D, rng);
  init_fan_in_uniform(p(bh_), D, rng);
  caches_.resize(static_cast<std::size_t>(cfg_.layers));
}

Vec TransformerModel::forward_logits(const Tensor& seqs, const std::vector<int>& idx, bool train,
                                     std::mt19937_64* rng) {
  const int B = static_cast<int>(idx.size());
  const int s = seq_len_, D = cfg_.model_dim, F = cfg_.ff_dim, H = cfg_.heads;
  const int dh = D / H;
  const int BS = B * s;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  batch_ = B;
  train_cached_ = train && cfg_.dropout > 0.0;

  Mat x(BS, D);
  ConstMatView all(seqs.data.data(), static_cast<Eigen::Index>(seqs.shape[0]) * s, D);
  for (int b = 0; b < B; ++b) {
    x.middleRows(b * s, s) = all.middleRows(idx[static_cast<std::size_t>(b)] * s, s);
  }

  Mat y1, y2;
  for (int l = 0; l < cfg_.layers; ++l) {
    LayerCache& cache = caches_[static_cast<std::size_t>(l)];
    const LayerParams& lp = layer_index_[static_cast<std::size_t>(l)];
    cache.x_in = x;

    layernorm_forward(x, p(lp.ln1_g), p(lp.ln1_b), y1, cache.ln1_xhat, cache.ln1_inv);
    cache.q.resize(BS, D);
    cache.k.resize(BS, D);
    cache.v.resize(BS, D);
    dense_forward(y1, p(lp.wq), p(lp.bq), cache.q, D, D);
    dense_forward(y1, p(lp.wk), p(lp.bk), cache.k, D, D);
    dense_forward(y1, p(lp.wv), p(lp.bv), cache.v, D, D);

    cache.attn = Tensor({B, H, s, s});
    cache.concat.resize(BS, D);
    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < H; ++h) {
        const auto qb = cache.q.block(b * s, h * dh, s, dh);
        const auto kb = cache.k.block(b * s, h * dh, s, dh);
        const auto vb = cache.v.block(b * s, h * dh, s, dh);
        MatView A(cache.attn.data.data() + (static_cast<std::size_t>(b) * H + h) * s * s, s, s);
        A.noalias() = qb * kb.transpose() * scale;
        softmax_rows(A);
        cache.concat.block(b * s, h * dh, s, dh).noalias() = A * vb;
      }
    }

    Mat o(BS, D);
    dense_forward(cache.concat, p(lp.wo), p(lp.bo), o, D, D);
    if (train_cached_) {
      cache.attn_mask.resize(BS, D);
      dropout_mask(cache.attn_mask, cfg_.dropout, *rng);
      o = o.cwiseProduct(cache.attn_mask);
    }
    cache.x_mid = cache.x_in + o;

    layernorm_forward(cache.x_mid, p(lp.ln2_g), p(lp.ln2_b), y2, cache.ln2_xhat, cache.ln2_inv);
    cache.f1_pre.resize(BS, F);
    dense_forward(y2, p(lp.wf1), p(lp.bf1), cache.f1_pre, D, F);
    cache.f1_act = cache.f1_pre;
    relu_inplace(cache.f1_act);
    Mat f2(BS, D);
    dense_forward(cache.f1_act, p(lp.wf2), p(lp.bf2), f2, F, D);
    if (train_cached_) {
      cache.ff_mask.resize(BS, D);
      dropout_mask(cache.ff_mask, cfg_.dropout, *rng);
      f2 = f2.cwiseProduct(cache.ff_mask);
    }
    x = cache.x_mid + f2;
  }
  x_out_ = x;

  pooled_.resize(B, D);
  for (int b = 0; b < B; ++b) {
    pooled_.row(b) = x.middleRows(b * s, s).colwise().mean();
  }
  Mat z(B, 1);
  dense_forward(pooled_, p(wh_), p(bh_), z, D, 1);
  if (!z.allFinite()) {
    for (int l = 0; l < cfg_.layers; ++l) {
      const LayerCache& cache = caches_[static_cast<std::size_t>(l)];
      const std::string where = "layer " + std::to_string(l);
      if (!cache.ln1_xhat.allFinite()) throw_divergence("transformer", where + " layer-norm 1");
      if (!cache.q.allFinite() || !cache.k.allFinite() || !cache.v.allFinite()) {
        throw_divergence("transformer", where + " qkv projection");
      }
      if (!cache.concat.allFinite()) throw_divergence("transformer", where + " attention");
      if (!cache.x_mid.allFinite()) throw_divergence("transformer", where + " attention residual");
      if (!cache.ln2_xhat.allFinite()) throw_divergence("transformer", where + " layer-norm 2");
      if (!cache.f1_pre.allFinite()) throw_divergence("transformer", where + " feed-forward");
    }
    throw_divergence("transformer", "pooling head");
  }
  return z.col(0);
}

void TransformerModel::backward(const Vec& dlogits) {
  const int B = batch_, s = seq_len_, D = cfg_.model_dim, F = cfg_.ff_dim, H = cfg_.heads;
  const int dh = D / H;
  const int BS = B * s;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat dpooled;
  dense_backward(pooled_, Mat(dlogits), p(wh_), p(bh_), &dpooled, D, 1);

  dx_.resize(BS, D);
  const double inv_s = 1.0 / static_cast<double>(s);
  for (int b = 0; b < B; ++b) {
    dx_.middleRows(b * s, s) = (inv_s * dpooled.row(b)).replicate(s, 1);
  }

  Mat y1, y2, df2, df1, dy2, dmid_ln, do_, dconcat, dq, dk, dv, dy1, dln1;
  Mat dA(s, s), dS(s, s);
  for (int l = cfg_.layers - 1; l >= 0; --l) {
    LayerCache& cache = caches_[static_cast<std::size_t>(l)];
    const LayerParams& lp = layer_index_[static_cast<std::size_t>(l)];

    // feed-forward branch
    if (train_cached_) {
      df2 = dx_.cwiseProduct(cache.ff_mask);
    } else {
      df2 = dx_;
    }
    y2 = cache.ln2_xhat;
    y2.array().rowwise() *= vec_of(p(lp.ln2_g).value).transpose().array();
    y2.rowwise() += vec_of(p(lp.ln2_b).value).transpose();
    dense_backward(cache.f1_act, df2, p(lp.wf2), p(lp.bf2), &df1, F, D);
    relu_backward(cache.f1_pre, df1);
    dense_backward(y2, df1, p(lp.wf1), p(lp.bf1), &dy2, D, F);
    layernorm_backward(dy2, cache.ln2_xhat, cache.ln2_inv, p(lp.ln2_g), p(lp.ln2_b), dmid_ln);
    Mat dmid = dx_ + dmid_ln;

    // attention branch
    if (train_cached_) {
      do_ = dmid.cwiseProduct(cache.attn_mask);
    } else {
      do_ = dmid;
    }
    dense_backward(cache.concat, do_, p(lp.wo), p(lp.bo), &dconcat, D, D);

    dq.setZero(BS, D);
    dk.setZero(BS, D);
    dv.setZero(BS, D);
    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < H; ++h) {
        const auto qb = cache.q.block(b * s, h * dh, s, dh);
        const auto kb = cache.k.block(b * s, h * dh, s, dh);
        const auto vb = cache.v.block(b * s, h * dh, s, dh);
        ConstMatView A(cache.attn.data.data() + (static_cast<std::size_t>(b) * H + h) * s * s, s,
                       s);
        const auto dout = dconcat.block(b * s, h * dh, s, dh);
        dA.noalias() = dout * vb.transpose();
        dv.block(b * s, h * dh, s, dh).noalias() += A.transpose() * dout;
        softmax_backward_rows(A, dA, dS);
        dq.block(b * s, h * dh, s, dh).noalias() += dS * kb * scale;
        dk.block(b * s, h * dh, s, dh).noalias() += dS.transpose() * qb * scale;
      }
    }

    y1 = cache.ln1_xhat;
    y1.array().rowwise() *= vec_of(p(lp.ln1_g).value).transpose().array();
    y1.rowwise() += vec_of(p(lp.ln1_b).value).transpose();
    Mat tmp;
    dense_backward(y1, dq, p(lp.wq), p(lp.bq), &dy1, D, D);
    dense_backward(y1, dk, p(lp.wk), p(lp.bk), &tmp, D, D);
    dy1 += tmp;
    dense_backward(y1, dv, p(lp.wv), p(lp.bv), &tmp, D, D);
    dy1 += tmp;
    layernorm_backward(dy1, cache.ln1_xhat, cache.ln1_inv, p(lp.ln1_g), p(lp.ln1_b), dln1);
    dx_ = dmid + dln1;
  }
}

std::vector<Param*> TransformerModel::params() {
  std::vector<Param*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}
std::vector<const Param*> TransformerModel::params() const {
  std::vector<const Param*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<double> TransformerModel::predict_proba(const Tensor& seqs) {
  const int n = seqs.shape[0];
  std::vector<double> out(static_cast<std::size_t>(n));
  constexpr int kChunk = 256;
  for (int start = 0; start < n; start += kChunk) {
    const int stop = std::min(n, start + kChunk);
    std::vector<int> idx(static_cast<std::size_t>(stop - start));
    for (int i = start; i < stop; ++i) idx[static_cast<std::size_t>(i - start)] = i;
    const Vec z = forward_logits(seqs, idx, false, nullptr);
    for (int i = start; i < stop; ++i) out[static_cast<std::size_t>(i)] = sigmoid(z(i - start));
  }
  return out;
}

// --- CnnSeqModel ---------------------------------------------------------------

CnnSeqModel::CnnSeqModel(const CnnSeqConfig& cfg, int seq_len, int in_channels, std::uint64_t seed)
    : cfg_(cfg), seq_len_(seq_len), in_channels_(in_channels) {
  if (cfg_.kernel_size % 2 == 0) {
    throw std::runtime_error("CnnSeqModel: kernel_size must be odd");
  }
  if (cfg_.filters < 1) throw std::runtime_error("CnnSeqModel: filters must be >= 1");
  auto rng = make_rng(seed, 0);
  int cin = in_channels;
  for (int l = 0; l < cfg_.conv_layers; ++l) {
    const std::string pre = "conv" + std::to_string(l) + ".";
    params_.emplace_back(pre + "w", std::vector<int>{cfg_.kernel_size, cin, cfg_.filters});
    params_.emplace_back(pre + "b", std::vector<int>{cfg_.filters});
    init_fan_in_uniform(params_[params_.size() - 2], cfg_.kernel_size * cin, rng);
    init_fan_in_uniform(params_[params_.size() - 1], cfg_.kernel_size * cin, rng);
    cin = cfg_.filters;
  }
  params_.emplace_back("head.w", std::vector<int>{cfg_.filters, 1});
  params_.emplace_back("head.b", std::vector<int>{1});
  wh_ = static_cast<int>(params_.size()) - 2;
  bh_ = static_cast<int>(params_.size()) - 1;
  init_fan_in_uniform(params_[static_cast<std::size_t>(wh_)], cfg_.filters, rng);
  init_fan_in_uniform(params_[static_cast<std::size_t>(bh_)], cfg_.filters, rng);
  layer_in_.resize(static_cast<std::size_t>(cfg_.conv_layers));
  layer_pre_.resize(static_cast<std::size_t>(cfg_.conv_layers));
  layer_post_.resize(static_cast<std::size_t>(cfg_.conv_layers));
}

Vec CnnSeqModel::forward_logits(const Tensor& seqs, const std::vector<int>& idx, bool /*train*/,
                                std::mt19937_64* /*rng*/) {
  const int B = static_cast<int>(idx.size());
  const int s = seq_len_, k = cfg_.kernel_size, pad = cfg_.kernel_size / 2, C = cfg_.filters;
  const int BS = B * s;
  batch_ = B;

  Mat x(BS, in_channels_);
  ConstMatView all(seqs.data.data(), static_cast<Eigen::Index>(seqs.shape[0]) * s, in_channels_);
  for (int b = 0; b < B; ++b) {
    x.middleRows(b * s, s) = all.middleRows(idx[static_cast<std::size_t>(b)] * s, s);
  }

  int cin = in_channels_;
  for (int l = 0; l < cfg_.conv_layers; ++l) {
    const Param& W = params_[static_cast<std::size_t>(2 * l)];
    const Param& bias = params_[static_cast<std::size_t>(2 * l + 1)];
    layer_in_[static_cast<std::size_t>(l)] = x;
    Mat& pre = layer_pre_[static_cast<std::size_t>(l)];
    pre.resize(BS, C);
    pre.setZero();
    add_bias(pre, bias);
    for (int j = 0; j < k; ++j) {
      const int shift = j - pad;
      const int t0 = std::max(0, -shift);
      const int len = s - std::abs(shift);
      if (len <= 0) continue;
      ConstMatView Wj(W.value.data.data() + static_cast<std::size_t>(j) * cin * C, cin, C);
      for (int b = 0; b < B; ++b) {
        pre.middleRows(b * s + t0, len).noalias() += x.middleRows(b * s + t0 + shift, len) * Wj;
      }
    }
    Mat& post = layer_post_[static_cast<std::size_t>(l)];
    post = pre;
    relu_inplace(post);
    x = post;
    cin = C;
  }

  pooled_.resize(B, C);
  argmax_.assign(static_cast<std::size_t>(B), std::vector<int>(static_cast<std::size_t>(C), 0));
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      int best_t = 0;
      double best = x(b * s, c);
      for (int t = 1; t < s; ++t) {
        if (x(b * s + t, c) > best) {
          best = x(b * s + t, c);
          best_t = t;
        }
      }
      pooled_(b, c) = best;
      argmax_[static_cast<std::size_t>(b)][static_cast<std::size_t>(c)] = best_t;
    }
  }

  Mat z(B, 1);
  dense_forward(pooled_, params_[static_cast<std::size_t>(wh_)], params_[static_cast<std::size_t>(bh_)],
                z, C, 1);
  if (!z.allFinite()) {
    for (int l = 0; l < cfg_.conv_layers; ++l) {
      if (!layer_pre_[static_cast<std::size_t>(l)].allFinite()) {
        throw_divergence("cnn_seq", "conv layer " + std::to_string(l));
      }
    }
    throw_divergence("cnn_seq", "pooling head");
  }
  return z.col(0);
}

void CnnSeqModel::backward(const Vec& dlogits) {
  const int B = batch_, s = seq_len_, k = cfg_.kernel_size, pad = cfg_.kernel_size / 2,
            C = cfg_.filters;
  const int BS = B * s;

  Mat dpooled;
  dense_backward(pooled_, Mat(dlogits), params_[static_cast<std::size_t>(wh_)],
                 params_[static_cast<std::size_t>(bh_)], &dpooled, C, 1);

  Mat dx = Mat::Zero(BS, C);
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      dx(b * s + argmax_[static_cast<std::size_t>(b)][static_cast<std::size_t>(c)], c) +=
          dpooled(b, c);
    }
  }

  for (int l = cfg_.conv_layers - 1; l >= 0; --l) {
    const int cin = l == 0 ? in_channels_ : C;
    Param& W = params_[static_cast<std::size_t>(2 * l)];
    Param& bias = params_[static_cast<std::size_t>(2 * l + 1)];
    const Mat& x = layer_in_[static_cast<std::size_t>(l)];

    relu_backward(layer_pre_[static_cast<std::size_t>(l)], dx);
    accumulate_bias_grad(bias, dx);

    Mat dprev = Mat::Zero(BS, cin);
    for (int j = 0; j < k; ++j) {
      const int shift = j - pad;
      const int t0 = std::max(0, -shift);
      const int len = s - std::abs(shift);
      if (len <= 0) continue;
      MatView dWj(W.grad.data.data() + static_cast<std::size_t>(j) * cin * C, cin, C);
      ConstMatView Wj(W.value.data.data() + static_cast<std::size_t>(j) * cin * C, cin, C);
      for (int b = 0; b < B; ++b) {
        const auto dpre_block = dx.middleRows(b * s + t0, len);
        dWj.noalias() += x.middleRows(b * s + t0 + shift, len).transpose() * dpre_block;
        dprev.middleRows(b * s + t0 + shift, len).noalias() += dpre_block * Wj.transpose();
      }
    }
    dx = std::move(dprev);
  }
}

std::vector<Param*> CnnSeqModel::params() {
  std::vector<Param*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}
std::vector<const Param*> CnnSeqModel::params() const {
  std::vector<const Param*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<double> CnnSeqModel::predict_proba(const Tensor& seqs) {
  const int n = seqs.shape[0];
  std::vector<double> out(static_cast<std::size_t>(n));
  constexpr int kChunk = 256;
  for (int start = 0; start < n; start += kChunk) {
    const int stop = std::min(n, start + kChunk);
    std::vector<int> idx(static_cast<std::size_t>(stop - start));
    for (int i = start; i < stop; ++i) idx[static_cast<std::size_t>(i - start)] = i;
    const Vec z = forward_logits(seqs, idx, false, nullptr);
    for (int i = start; i < stop; ++i) out[static_cast<std::size_t>(i)] = sigmoid(z(i - start));
  }
  return out;
}

}  // namespace qisicgm::nn
