#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qisicgm/common.hpp"
#include "qisicgm/neuralkernel.hpp"

namespace qisicgm::graph {

constexpr int kEmbeddingDim = 128;

enum class EmbeddingSource { kAutoencoder, kRefined };

struct Embeddings {
  Mat matrix;  // n x 128
  EmbeddingSource source = EmbeddingSource::kAutoencoder;
};

struct RefineState {
  Vec w;          // 128 classifier weights
  double b = 0.0;
  int iterations = 0;
};

struct ConceptGraph {
  std::vector<std::vector<int>> neighbors;  // per node, k targets by ascending distance
  int k = 0;
  double modularity = 0.0;
  double avg_degree = 0.0;
  RefineState refine_state;
};

struct AutoencoderConfig {
  int hidden1 = 256;
  int hidden2 = 192;
  int embedding = kEmbeddingDim;
  int epochs = 100;
  double lr = 1e-3;
};

/// Dense autoencoder (in -> 256 -> 192 -> 128 and mirrored back) trained
/// full-batch with Adam on reconstruction MSE.
class Autoencoder {
 public:
  Autoencoder() = default;
  Autoencoder(int input_dim, const AutoencoderConfig& cfg, std::uint64_t seed);

  /// Returns per-epoch reconstruction MSE (entry 0 is the pre-training loss).
  std::vector<double> train(const Mat& X);
  Mat encode(const Mat& X) const;
  Mat reconstruct(const Mat& X) const;

  /// Reconstruction MSE and, when requested, gradients for all parameters.
  double loss_and_grad(const Mat& X, bool with_grad);

  std::vector<nn::Param*> params();
  std::vector<const nn::Param*> params() const;
  int input_dim() const { return input_dim_; }
  const AutoencoderConfig& config() const { return cfg_; }

 private:
  AutoencoderConfig cfg_;
  int input_dim_ = 0;
  std::vector<nn::Param> params_;
};

struct TrainEmbeddingsResult {
  Embeddings embeddings;
  Autoencoder autoencoder;
  std::vector<double> loss_trace;
};

TrainEmbeddingsResult train_autoencoder(const Mat& lifted, std::uint64_t seed,
                                        const AutoencoderConfig& cfg = {});

/// Exact k-NN under Euclidean distance; ties break on the smaller node index.
ConceptGraph build_knn(const Embeddings& emb, int k);

/// Neighbor rows of the query against a stored embedding matrix, same metric
/// and tie rule as build_knn.
std::vector<int> knn_lookup(const Mat& stored, const Eigen::Ref<const Eigen::RowVectorXd>& query,
                            int k);

struct RefineOptions {
  int iterations = 50;
  int rebuild_every = 10;
  double lr = 1e-2;
};

struct RefineIterationStats {
  int iteration = 0;
  double bce = 0.0;
  double modularity = 0.0;
  double avg_degree = 0.0;
};

struct RefineResult {
  ConceptGraph graph;
  Embeddings embeddings;
  std::vector<RefineIterationStats> stats;
  int rebuilds = 0;
};

/// Iteratively descends binary cross-entropy of a linear classifier over
/// mean-aggregated neighbor embeddings, updating classifier and embeddings,
/// and rebuilding edges every `rebuild_every` iterations.
RefineResult refine(const ConceptGraph& graph, const Embeddings& emb, const std::vector<int>& y,
                    std::uint64_t seed, const RefineOptions& opt = {});

/// Newman modularity of the given partition on the symmetrized simple graph.
double modularity(const ConceptGraph& graph, const std::vector<int>& partition);

/// Undirected mean degree of the symmetrized simple graph.
double average_degree(const ConceptGraph& graph);

/// Sequences of neighbor embeddings, shape (n, k, 128).
nn::Tensor neighbor_sequences(const ConceptGraph& graph, const Embeddings& emb);

/// DOT file with nodes colored red (label 1) / blue (label 0).
void export_dot(const ConceptGraph& graph, const std::vector<int>& labels,
                const std::string& path);
std::string to_dot(const ConceptGraph& graph, const std::vector<int>& labels);

}  // namespace qisicgm::graph
