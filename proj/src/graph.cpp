#include "qisicgm/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace qisicgm::graph {

namespace {

using nn::Param;

/// Distances are summed directly (not via the gram identity) so that any
/// straightforward reimplementation produces bit-identical values and thus the
/// same neighbor ordering.
double squared_distance(const Mat& emb, int a, int b) {
  double sum = 0.0;
  for (Eigen::Index j = 0; j < emb.cols(); ++j) {
    const double d = emb(a, j) - emb(b, j);
    sum += d * d;
  }
  return sum;
}

std::vector<std::vector<int>> knn_neighbors(const Mat& emb, int k) {
  const int n = static_cast<int>(emb.rows());
  std::vector<std::vector<int>> neighbors(static_cast<std::size_t>(n));
  std::vector<std::pair<double, int>> cand;
  for (int i = 0; i < n; ++i) {
    cand.clear();
    cand.reserve(static_cast<std::size_t>(n - 1));
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      cand.emplace_back(squared_distance(emb, i, j), j);
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    auto& out = neighbors[static_cast<std::size_t>(i)];
    out.resize(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) out[static_cast<std::size_t>(j)] = cand[static_cast<std::size_t>(j)].second;
  }
  return neighbors;
}

/// Unique undirected edges (a < b) of the symmetrized simple graph.
std::vector<std::pair<int, int>> undirected_edges(const ConceptGraph& graph) {
  std::set<std::pair<int, int>> edges;
  for (int i = 0; i < static_cast<int>(graph.neighbors.size()); ++i) {
    for (int j : graph.neighbors[static_cast<std::size_t>(i)]) {
      edges.emplace(std::min(i, j), std::max(i, j));
    }
  }
  return {edges.begin(), edges.end()};
}

}  // namespace

// --- autoencoder -------------------------------------------------------------

Autoencoder::Autoencoder(int input_dim, const AutoencoderConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), input_dim_(input_dim) {
  const int h1 = cfg.hidden1, h2 = cfg.hidden2, e = cfg.embedding;
  params_.emplace_back("enc.w1", std::vector<int>{input_dim, h1});
  params_.emplace_back("enc.b1", std::vector<int>{h1});
  params_.emplace_back("enc.w2", std::vector<int>{h1, h2});
  params_.emplace_back("enc.b2", std::vector<int>{h2});
  params_.emplace_back("enc.w3", std::vector<int>{h2, e});
  params_.emplace_back("enc.b3", std::vector<int>{e});
  params_.emplace_back("dec.w1", std::vector<int>{e, h2});
  params_.emplace_back("dec.b1", std::vector<int>{h2});
  params_.emplace_back("dec.w2", std::vector<int>{h2, h1});
  params_.emplace_back("dec.b2", std::vector<int>{h1});
  params_.emplace_back("dec.w3", std::vector<int>{h1, input_dim});
  params_.emplace_back("dec.b3", std::vector<int>{input_dim});
  auto rng = make_rng(seed, 0);
  const int fan_ins[6] = {input_dim, h1, h2, e, h2, h1};
  for (int i = 0; i < 6; ++i) {
    nn::init_fan_in_uniform(params_[static_cast<std::size_t>(2 * i)], fan_ins[i], rng);
    nn::init_fan_in_uniform(params_[static_cast<std::size_t>(2 * i + 1)], fan_ins[i], rng);
  }
}

namespace {

struct AeStack {
  Mat a1_pre, a1, a2_pre, a2, z, d1_pre, d1, d2_pre, d2, out;
};

void ae_forward(const Mat& X, const std::vector<Param>& p, AeStack& s) {
  auto W = [&](int i) {
    return nn::view2d(p[static_cast<std::size_t>(i)].value, p[static_cast<std::size_t>(i)].value.shape[0],
                      p[static_cast<std::size_t>(i)].value.shape[1]);
  };
  auto b = [&](int i) {
    return Eigen::Map<const Vec>(p[static_cast<std::size_t>(i)].value.data.data(),
                                 static_cast<Eigen::Index>(p[static_cast<std::size_t>(i)].value.data.size()));
  };
  s.a1_pre.noalias() = X * W(0);
  s.a1_pre.rowwise() += b(1).transpose();
  s.a1 = s.a1_pre.cwiseMax(0.0);
  s.a2_pre.noalias() = s.a1 * W(2);
  s.a2_pre.rowwise() += b(3).transpose();
  s.a2 = s.a2_pre.cwiseMax(0.0);
  s.z.noalias() = s.a2 * W(4);
  s.z.rowwise() += b(5).transpose();
  s.d1_pre.noalias() = s.z * W(6);
  s.d1_pre.rowwise() += b(7).transpose();
  s.d1 = s.d1_pre.cwiseMax(0.0);
  s.d2_pre.noalias() = s.d1 * W(8);
  s.d2_pre.rowwise() += b(9).transpose();
  s.d2 = s.d2_pre.cwiseMax(0.0);
  s.out.noalias() = s.d2 * W(10);
  s.out.rowwise() += b(11).transpose();
}

}  // namespace

double Autoencoder::loss_and_grad(const Mat& X, bool with_grad) {
  AeStack s;
  ae_forward(X, params_, s);
  const double n_terms = static_cast<double>(X.rows()) * static_cast<double>(X.cols());
  const Mat err = s.out - X;
  const double loss = err.squaredNorm() / n_terms;
  if (!std::isfinite(loss)) {
    throw std::runtime_error("autoencoder: non-finite reconstruction loss");
  }
  if (!with_grad) return loss;

  auto W = [&](int i) {
    return nn::view2d(params_[static_cast<std::size_t>(i)].value,
                      params_[static_cast<std::size_t>(i)].value.shape[0],
                      params_[static_cast<std::size_t>(i)].value.shape[1]);
  };
  auto gW = [&](int i) {
    return nn::view2d(params_[static_cast<std::size_t>(i)].grad,
                      params_[static_cast<std::size_t>(i)].grad.shape[0],
                      params_[static_cast<std::size_t>(i)].grad.shape[1]);
  };
  auto gb = [&](int i) {
    return Eigen::Map<Vec>(params_[static_cast<std::size_t>(i)].grad.data.data(),
                           static_cast<Eigen::Index>(params_[static_cast<std::size_t>(i)].grad.data.size()));
  };

  Mat d = 2.0 * err / n_terms;
  gW(10).noalias() += s.d2.transpose() * d;
  gb(11) += d.colwise().sum().transpose();
  Mat back = d * W(10).transpose();
  back = ((s.d2_pre.array() > 0.0).cast<double>() * back.array()).matrix();
  gW(8).noalias() += s.d1.transpose() * back;
  gb(9) += back.colwise().sum().transpose();
  back = back * W(8).transpose();
  back = ((s.d1_pre.array() > 0.0).cast<double>() * back.array()).matrix();
  gW(6).noalias() += s.z.transpose() * back;
  gb(7) += back.colwise().sum().transpose();
  back = back * W(6).transpose();  // gradient at the embedding (linear layer)
  gW(4).noalias() += s.a2.transpose() * back;
  gb(5) += back.colwise().sum().transpose();
  back = back * W(4).transpose();
  back = ((s.a2_pre.array() > 0.0).cast<double>() * back.array()).matrix();
  gW(2).noalias() += s.a1.transpose() * back;
  gb(3) += back.colwise().sum().transpose();
  back = back * W(2).transpose();
  back = ((s.a1_pre.array() > 0.0).cast<double>() * back.array()).matrix();
  gW(0).noalias() += X.transpose() * back;
  gb(1) += back.colwise().sum().transpose();
  return loss;
}

std::vector<double> Autoencoder::train(const Mat& X) {
  nn::AdamOptimizer adam(cfg_.lr);
  adam.attach(params());
  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(cfg_.epochs) + 1);
  trace.push_back(loss_and_grad(X, false));
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    for (auto& p : params_) p.zero_grad();
    const double loss = loss_and_grad(X, true);
    if (!std::isfinite(loss)) {
      throw std::runtime_error("autoencoder: diverged at epoch " + std::to_string(epoch));
    }
    adam.step();
    trace.push_back(loss_and_grad(X, false));
  }
  return trace;
}

Mat Autoencoder::encode(const Mat& X) const {
  AeStack s;
  ae_forward(X, params_, s);
  return s.z;
}

Mat Autoencoder::reconstruct(const Mat& X) const {
  AeStack s;
  ae_forward(X, params_, s);
  return s.out;
}

std::vector<Param*> Autoencoder::params() {
  std::vector<Param*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}
std::vector<const Param*> Autoencoder::params() const {
  std::vector<const Param*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

TrainEmbeddingsResult train_autoencoder(const Mat& lifted, std::uint64_t seed,
                                        const AutoencoderConfig& cfg) {
  if (lifted.rows() < 10) {
    throw std::runtime_error("train_autoencoder: need at least 10 samples");
  }
  TrainEmbeddingsResult result;
  result.autoencoder = Autoencoder(static_cast<int>(lifted.cols()), cfg, seed);
  result.loss_trace = result.autoencoder.train(lifted);
  result.embeddings.matrix = result.autoencoder.encode(lifted);
  result.embeddings.source = EmbeddingSource::kAutoencoder;
  return result;
}

// --- k-NN construction --------------------------------------------------------

ConceptGraph build_knn(const Embeddings& emb, int k) {
  const int n = static_cast<int>(emb.matrix.rows());
  if (n <= k) {
    throw std::runtime_error("build_knn: need more than k=" + std::to_string(k) + " nodes, got " +
                             std::to_string(n));
  }
  ConceptGraph graph;
  graph.k = k;
  graph.neighbors = knn_neighbors(emb.matrix, k);
  graph.avg_degree = average_degree(graph);
  return graph;
}

std::vector<int> knn_lookup(const Mat& stored, const Eigen::Ref<const Eigen::RowVectorXd>& query,
                            int k) {
  const int n = static_cast<int>(stored.rows());
  if (n < k) throw std::runtime_error("knn_lookup: fewer stored rows than k");
  std::vector<std::pair<double, int>> cand;
  cand.reserve(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    double sum = 0.0;
    for (Eigen::Index c = 0; c < stored.cols(); ++c) {
      const double d = query(c) - stored(j, c);
      sum += d * d;
    }
    cand.emplace_back(sum, j);
  }
  std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
  std::vector<int> out(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) out[static_cast<std::size_t>(j)] = cand[static_cast<std::size_t>(j)].second;
  return out;
}

// --- refinement ----------------------------------------------------------------

RefineResult refine(const ConceptGraph& graph, const Embeddings& emb, const std::vector<int>& y,
                    std::uint64_t seed, const RefineOptions& opt) {
  const int n = static_cast<int>(emb.matrix.rows());
  if (opt.iterations < 1) throw std::runtime_error("refine: iterations must be >= 1");
  if (static_cast<std::size_t>(n) != y.size()) {
    throw std::runtime_error("refine: embedding/label count mismatch");
  }

  RefineResult result;
  result.graph = graph;
  result.embeddings = emb;
  Mat& E = result.embeddings.matrix;
  const int k = graph.k;

  auto rng = make_rng(seed, 0);
  Vec w(E.cols());
  {
    const double r = 1.0 / std::sqrt(static_cast<double>(E.cols()));
    std::uniform_real_distribution<double> dist(-r, r);
    for (Eigen::Index j = 0; j < w.size(); ++j) w(j) = dist(rng);
  }
  double b = 0.0;

  Mat M(n, E.cols());
  Vec g(n);
  for (int iter = 1; iter <= opt.iterations; ++iter) {
    // forward: mean neighbor embedding per node, linear classifier, BCE
    for (int i = 0; i < n; ++i) {
      M.row(i).setZero();
      for (int j : result.graph.neighbors[static_cast<std::size_t>(i)]) M.row(i) += E.row(j);
      M.row(i) /= static_cast<double>(k);
    }
    const Vec z = M * w + Vec::Constant(n, b);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
      loss += softplus(z(i)) - static_cast<double>(y[static_cast<std::size_t>(i)]) * z(i);
      g(i) = (sigmoid(z(i)) - static_cast<double>(y[static_cast<std::size_t>(i)])) /
             static_cast<double>(n);
    }
    loss /= static_cast<double>(n);
    if (!std::isfinite(loss)) {
      throw std::runtime_error("refine: non-finite loss at iteration " + std::to_string(iter));
    }

    RefineIterationStats stats;
    stats.iteration = iter;
    stats.bce = loss;
    stats.modularity = modularity(result.graph, y);
    stats.avg_degree = average_degree(result.graph);
    result.stats.push_back(stats);

    // gradients: dw = M^T g, db = sum g, dE via mean-aggregation transpose
    const Vec dw = M.transpose() * g;
    const double db = g.sum();
    Mat dE = Mat::Zero(n, E.cols());
    for (int i = 0; i < n; ++i) {
      const double gi = g(i) / static_cast<double>(k);
      for (int j : result.graph.neighbors[static_cast<std::size_t>(i)]) {
        dE.row(j) += gi * w.transpose();
      }
    }
    w -= opt.lr * dw;
    b -= opt.lr * db;
    E -= opt.lr * dE;

    if (opt.rebuild_every > 0 && iter % opt.rebuild_every == 0) {
      result.graph.neighbors = knn_neighbors(E, k);
      ++result.rebuilds;
    }
  }

  result.graph.refine_state.w = w;
  result.graph.refine_state.b = b;
  result.graph.refine_state.iterations = opt.iterations;
  result.graph.modularity = modularity(result.graph, y);
  result.graph.avg_degree = average_degree(result.graph);
  result.embeddings.source = EmbeddingSource::kRefined;
  return result;
}

// --- graph statistics -----------------------------------------------------------

double modularity(const ConceptGraph& graph, const std::vector<int>& partition) {
  const int n = static_cast<int>(graph.neighbors.size());
  if (n == 0) throw std::runtime_error("modularity: empty graph");
  if (partition.size() != static_cast<std::size_t>(n)) {
    throw std::runtime_error("modularity: partition must cover all nodes");
  }
  const auto edges = undirected_edges(graph);
  const double m = static_cast<double>(edges.size());
  if (m == 0.0) throw std::runtime_error("modularity: graph has no edges");

  std::vector<double> degree(static_cast<std::size_t>(n), 0.0);
  for (const auto& [a, b] : edges) {
    degree[static_cast<std::size_t>(a)] += 1.0;
    degree[static_cast<std::size_t>(b)] += 1.0;
  }

  // Collect community ids.
  std::vector<int> ids = partition;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  auto community_of = [&](int node) {
    return static_cast<std::size_t>(
        std::lower_bound(ids.begin(), ids.end(), partition[static_cast<std::size_t>(node)]) -
        ids.begin());
  };

  std::vector<double> in_edges(ids.size(), 0.0);
  std::vector<double> total_degree(ids.size(), 0.0);
  for (const auto& [a, b] : edges) {
    if (partition[static_cast<std::size_t>(a)] == partition[static_cast<std::size_t>(b)]) {
      in_edges[community_of(a)] += 1.0;
    }
  }
  for (int i = 0; i < n; ++i) total_degree[community_of(i)] += degree[static_cast<std::size_t>(i)];

  double q = 0.0;
  for (std::size_t c = 0; c < ids.size(); ++c) {
    const double ds = total_degree[c] / (2.0 * m);
    q += in_edges[c] / m - ds * ds;
  }
  return q;
}

double average_degree(const ConceptGraph& graph) {
  const int n = static_cast<int>(graph.neighbors.size());
  if (n == 0) return 0.0;
  const auto edges = undirected_edges(graph);
  return 2.0 * static_cast<double>(edges.size()) / static_cast<double>(n);
}

// --- sequences and export --------------------------------------------------------

nn::Tensor neighbor_sequences(const ConceptGraph& graph, const Embeddings& emb) {
  const int n = static_cast<int>(emb.matrix.rows());
  if (graph.neighbors.size() != static_cast<std::size_t>(n)) {
    throw std::runtime_error("neighbor_sequences: graph and embeddings disagree on node count");
  }
  const int k = graph.k;
  const int d = static_cast<int>(emb.matrix.cols());
  nn::Tensor out({n, k, d});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < k; ++j) {
      const int nb = graph.neighbors[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      std::copy_n(emb.matrix.row(nb).data(), d,
                  out.data.data() + (static_cast<std::size_t>(i) * k + static_cast<std::size_t>(j)) * d);
    }
  }
  return out;
}

std::string to_dot(const ConceptGraph& graph, const std::vector<int>& labels) {
  if (labels.size() != graph.neighbors.size()) {
    throw std::runtime_error("to_dot: label count mismatch");
  }
  std::ostringstream out;
  out << "digraph concept_graph {\n";
  for (std::size_t i = 0; i < graph.neighbors.size(); ++i) {
    out << "  n" << i << " [color=\"" << (labels[i] == 1 ? "red" : "blue") << "\"];\n";
  }
  for (std::size_t i = 0; i < graph.neighbors.size(); ++i) {
    for (int j : graph.neighbors[i]) {
      out << "  n" << i << " -> n" << j << ";\n";
    }
  }
  out << "}\n";
  return out.str();
}

void export_dot(const ConceptGraph& graph, const std::vector<int>& labels,
                const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("export_dot: cannot write " + path);
  out << to_dot(graph, labels);
  if (!out) throw std::runtime_error("export_dot: write failed for " + path);
}

}  // namespace qisicgm::graph
