#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "qisicgm/augment.hpp"
#include "qisicgm/calibmetrics.hpp"
#include "qisicgm/common.hpp"
#include "qisicgm/dataset.hpp"
#include "qisicgm/forests.hpp"
#include "qisicgm/graph.hpp"
#include "qisicgm/neuralkernel.hpp"
#include "qisicgm/phasemap.hpp"

namespace qisicgm::stack {

constexpr int kLearnerCount = 5;
constexpr int kMetaWidth = 17;
constexpr int kArtifactFormatVersion = 1;

/// Canonical learner order used for meta features, reports and file columns.
const std::array<std::string, kLearnerCount>& learner_names();  // rf, et, transformer, cnn_seq, ffnn

enum class AugmentMode { kInFold, kGlobal };

struct RunConfig {
  std::string data_path;
  std::uint64_t seed = 42;
  int synthetic_count = 2000;
  int gmm_components = 5;
  int k_neighbors = 5;
  int folds = 5;
  AugmentMode augment_mode = AugmentMode::kInFold;

  int phase_epochs = 50;
  double phase_lr = 1e-3;
  int autoencoder_epochs = 100;
  double autoencoder_lr = 1e-3;
  int refine_iterations = 50;
  int refine_rebuild_every = 10;
  double refine_lr = 1e-2;
  int learner_epochs = 50;
  double learner_lr = 1e-3;
  int batch_size = 32;
  int trees = 100;
  int max_depth = 10;
  double meta_l2 = 1.0;
  int meta_max_iterations = 10000;
  double meta_tol = 1e-6;
  double calibration_holdout = 0.2;
  int report_bins = 10;
  double vote_threshold = 0.5;

  nn::TransformerConfig transformer;
  nn::CnnSeqConfig cnn;
  nn::FfnnConfig ffnn;

  int threads = 1;
  std::string output_dir = "outputs";
  std::string models_dir = "models";

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  /// key = value lines, sorted; the keys match the CLI flag names, so a
  /// snapshot is directly reusable as a --config file.
  std::string to_toml() const;
};

// --- meta features -----------------------------------------------------------

/// probs: n x 5 calibrated base probabilities ->
/// [p1..p5, logit1..logit5, vote1..vote5, mean, std] per row (std is the
/// population standard deviation; votes break the p = threshold tie upward).
Mat build_meta(const Mat& probs, double vote_threshold = 0.5);

struct MetaLearner {
  Vec w;  // 17 weights
  double b = 0.0;
  int iterations = 0;
  double grad_norm = 0.0;
  bool converged = false;
};

/// L2-regularized logistic regression (penalty on weights only), deterministic
/// zero start, full-batch gradient descent with backtracking line search until
/// the gradient norm drops below `tol` or the iteration cap is reached.
MetaLearner fit_meta_learner(const Mat& meta, const std::vector<int>& y, double l2 = 1.0,
                             int max_iterations = 10000, double tol = 1e-6);

std::vector<double> meta_predict(const MetaLearner& model, const Mat& meta);
double meta_objective(const MetaLearner& model, const Mat& meta, const std::vector<int>& y,
                      double l2);

// --- trained bundle ----------------------------------------------------------

/// Everything fitted on one training set: preprocessing, embeddings, graph,
/// the five base learners and their calibrators.
struct FoldModel {
  dataset::ScalerStats scaler;
  phasemap::PhaseMap phase;
  graph::Autoencoder autoencoder;
  Mat train_embeddings;  // refined, n_train x 128
  graph::ConceptGraph concept_graph;
  std::vector<graph::RefineIterationStats> refine_stats;
  std::vector<int> train_labels;
  forests::ForestModel rf;
  forests::ForestModel et;
  nn::TransformerModel transformer;
  nn::CnnSeqModel cnn;
  nn::FfnnModel ffnn;
  std::array<calib::IsotonicCalibrator, kLearnerCount> calibrators;
};

/// Trains a complete FoldModel on already-augmented, imputed records.
/// `stream_base` separates the random streams of folds and of the full refit.
FoldModel train_fold_model(const std::vector<dataset::RawRecord>& records,
                           std::vector<dataset::Provenance> provenance, const RunConfig& cfg,
                           std::uint64_t stream_base, int threads);

/// Calibrated base-learner probabilities for raw (imputed) records through the
/// full inference path: scale, lift, encode, k-NN sequence lookup, predict,
/// calibrate. Columns follow learner_names() order. Non-const: the neural
/// models reuse internal forward-pass scratch.
Mat predict_base(FoldModel& model, const std::vector<dataset::RawRecord>& records,
                 const RunConfig& cfg);

// --- cross-validation ----------------------------------------------------------

struct FoldRecord {
  int fold = 0;
  std::string model;
  double f1 = 0.0;
  double auc = 0.0;
};

struct GraphSnapshot {
  std::vector<std::vector<int>> neighbors;
  std::vector<int> labels;
  int k = 0;
};

struct CvResult {
  Mat oof_base;                     // n_work x 5 calibrated probabilities
  std::vector<double> oof_meta;     // n_work meta probabilities
  std::vector<int> labels;          // work-set labels
  std::vector<int> provenance;      // 0 original, 1 synthetic
  std::vector<int> fold_of;         // fold owning each row's OOF prediction
  std::vector<FoldRecord> per_fold;  // folds x 6 models
  MetaLearner meta;
  std::vector<GraphSnapshot> fold_graphs;
  std::vector<std::vector<graph::RefineIterationStats>> fold_refine_stats;
};

/// Stratified seeded k-fold assignment (round-robin within each shuffled
/// class), so every fold's positive rate tracks the global rate.
std::vector<int> stratified_folds(const std::vector<int>& labels, int k, std::uint64_t seed);

/// Out-of-fold training per the augmentation mode: in-fold mode cross-validates
/// original rows and augments inside each training fold; global mode augments
/// once up front and cross-validates the combined set.
CvResult run_cv(const std::vector<dataset::RawRecord>& imputed, const RunConfig& cfg);

// --- artifact -------------------------------------------------------------------

struct StackArtifact {
  RunConfig config;
  FoldModel model;                 // the full-data refit
  augment::GaussianMixture gmm;    // minority-class fit used for the refit
  MetaLearner meta;
  // training report
  std::vector<FoldRecord> per_fold;
  Mat oof_base;
  std::vector<double> oof_meta;
  std::vector<int> oof_labels;
  std::vector<int> oof_provenance;
  std::vector<int> oof_fold;
  std::vector<GraphSnapshot> fold_graphs;
  std::vector<std::vector<graph::RefineIterationStats>> fold_refine_stats;
  std::vector<double> train_meta_probs;  // inference-path scores of the original rows
};

struct PredictionRow {
  std::array<double, kLearnerCount> base{};  // calibrated
  double meta = 0.0;
};

struct PredictResult {
  std::vector<PredictionRow> rows;
  double rows_per_second = 0.0;
};

/// Full training pipeline: load, impute, cross-validate, refit, score training
/// rows. Report CSVs are written separately by write_reports.
StackArtifact train_pipeline(const RunConfig& cfg);

/// Scores raw records through the stored inference path and measures
/// throughput. The non-const overload reuses the artifact's model scratch
/// buffers; the const overload works on a copy.
PredictResult predict(StackArtifact& artifact, const std::vector<dataset::RawRecord>& rows);
PredictResult predict(const StackArtifact& artifact,
                      const std::vector<dataset::RawRecord>& rows);

void save_artifact(const StackArtifact& artifact, const std::string& path);
StackArtifact load_artifact(const std::string& path);

/// Emits every figure-backing file into out_dir: perf_table.csv,
/// oof_predictions.csv, calibration_bins.csv, probability_histogram.csv,
/// graph_stats.csv, phase_training_trace.csv, concept_graph_fold{f}.dot and
/// config_snapshot.toml. Deterministic byte-for-byte.
void write_reports(const StackArtifact& artifact, const std::string& out_dir);
void write_dot_files(const StackArtifact& artifact, const std::string& out_dir);

}  // namespace qisicgm::stack
