#include "qisicgm/stack.hpp"

#include "qisicgm/artifact.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace qisicgm::stack {

namespace {

using dataset::Provenance;
using dataset::RawRecord;

constexpr double kLogitClip = 1e-6;

std::vector<int> gather(const std::vector<int>& values, const std::vector<int>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(values[static_cast<std::size_t>(i)]);
  return out;
}

Mat gather_rows(const Mat& X, const std::vector<int>& idx) {
  Mat out(static_cast<Eigen::Index>(idx.size()), X.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(idx[i]);
  return out;
}

nn::Tensor gather_seqs(const nn::Tensor& seqs, const std::vector<int>& idx) {
  const int s = seqs.shape[1], c = seqs.shape[2];
  nn::Tensor out({static_cast<int>(idx.size()), s, c});
  const std::size_t row_span = static_cast<std::size_t>(s) * static_cast<std::size_t>(c);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(seqs.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(idx[i]) * row_span),
                row_span, out.data.begin() + static_cast<std::ptrdiff_t>(i * row_span));
  }
  return out;
}

std::vector<RawRecord> gather_records(const std::vector<RawRecord>& records,
                                      const std::vector<int>& idx) {
  std::vector<RawRecord> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(records[static_cast<std::size_t>(i)]);
  return out;
}

/// Per-class seeded shuffle, then the first `fraction` of each class goes to
/// the holdout (at least one and at most size-1 per class).
void stratified_split(const std::vector<int>& labels, double fraction, std::mt19937_64& rng,
                      std::vector<int>& keep_idx, std::vector<int>& holdout_idx) {
  std::vector<int> by_class[2];
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
    by_class[labels[static_cast<std::size_t>(i)] == 1 ? 1 : 0].push_back(i);
  }
  for (auto& members : by_class) {
    if (members.empty()) continue;
    std::shuffle(members.begin(), members.end(), rng);
    int n_hold = static_cast<int>(std::round(fraction * static_cast<double>(members.size())));
    n_hold = std::clamp(n_hold, 1, std::max(1, static_cast<int>(members.size()) - 1));
    for (int i = 0; i < static_cast<int>(members.size()); ++i) {
      (i < n_hold ? holdout_idx : keep_idx).push_back(members[static_cast<std::size_t>(i)]);
    }
  }
  std::sort(keep_idx.begin(), keep_idx.end());
  std::sort(holdout_idx.begin(), holdout_idx.end());
}

graph::AutoencoderConfig autoencoder_config(const RunConfig& cfg) {
  graph::AutoencoderConfig ae;
  ae.epochs = cfg.autoencoder_epochs;
  ae.lr = cfg.autoencoder_lr;
  return ae;
}

std::uint64_t stream(const RunConfig& cfg, std::uint64_t base, std::uint64_t which) {
  return derive_seed(cfg.seed, base + which);
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::string csv_cell(double v) { return format_double(v); }

}  // namespace

const std::array<std::string, kLearnerCount>& learner_names() {
  static const std::array<std::string, kLearnerCount> names = {"rf", "et", "transformer",
                                                               "cnn_seq", "ffnn"};
  return names;
}

// --- RunConfig ---------------------------------------------------------------

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["data"] = data_path;
  j["seed"] = seed;
  j["synthetic-count"] = synthetic_count;
  j["gmm-components"] = gmm_components;
  j["k-neighbors"] = k_neighbors;
  j["folds"] = folds;
  j["augment-global"] = augment_mode == AugmentMode::kGlobal;
  j["phase-epochs"] = phase_epochs;
  j["phase-lr"] = phase_lr;
  j["autoencoder-epochs"] = autoencoder_epochs;
  j["autoencoder-lr"] = autoencoder_lr;
  j["refine-iterations"] = refine_iterations;
  j["refine-rebuild-every"] = refine_rebuild_every;
  j["refine-lr"] = refine_lr;
  j["learner-epochs"] = learner_epochs;
  j["learner-lr"] = learner_lr;
  j["batch-size"] = batch_size;
  j["trees"] = trees;
  j["max-depth"] = max_depth;
  j["meta-l2"] = meta_l2;
  j["meta-max-iterations"] = meta_max_iterations;
  j["meta-tol"] = meta_tol;
  j["calibration-holdout"] = calibration_holdout;
  j["report-bins"] = report_bins;
  j["transformer-layers"] = transformer.layers;
  j["transformer-heads"] = transformer.heads;
  j["transformer-dim"] = transformer.model_dim;
  j["transformer-ff-dim"] = transformer.ff_dim;
  j["transformer-dropout"] = transformer.dropout;
  j["cnn-layers"] = cnn.conv_layers;
  j["cnn-filters"] = cnn.filters;
  j["cnn-kernel"] = cnn.kernel_size;
  j["ffnn-hidden1"] = ffnn.hidden_dims.size() > 0 ? ffnn.hidden_dims[0] : 0;
  j["ffnn-hidden2"] = ffnn.hidden_dims.size() > 1 ? ffnn.hidden_dims[1] : 0;
  j["ffnn-dropout"] = ffnn.dropout;
  j["vote-threshold"] = vote_threshold;
  j["threads"] = threads;
  j["out-dir"] = output_dir;
  j["models-dir"] = models_dir;
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  c.data_path = j.value("data", c.data_path);
  c.seed = j.value("seed", c.seed);
  c.synthetic_count = j.value("synthetic-count", c.synthetic_count);
  c.gmm_components = j.value("gmm-components", c.gmm_components);
  c.k_neighbors = j.value("k-neighbors", c.k_neighbors);
  c.folds = j.value("folds", c.folds);
  c.augment_mode = j.value("augment-global", false) ? AugmentMode::kGlobal : AugmentMode::kInFold;
  c.phase_epochs = j.value("phase-epochs", c.phase_epochs);
  c.phase_lr = j.value("phase-lr", c.phase_lr);
  c.autoencoder_epochs = j.value("autoencoder-epochs", c.autoencoder_epochs);
  c.autoencoder_lr = j.value("autoencoder-lr", c.autoencoder_lr);
  c.refine_iterations = j.value("refine-iterations", c.refine_iterations);
  c.refine_rebuild_every = j.value("refine-rebuild-every", c.refine_rebuild_every);
  c.refine_lr = j.value("refine-lr", c.refine_lr);
  c.learner_epochs = j.value("learner-epochs", c.learner_epochs);
  c.learner_lr = j.value("learner-lr", c.learner_lr);
  c.batch_size = j.value("batch-size", c.batch_size);
  c.trees = j.value("trees", c.trees);
  c.max_depth = j.value("max-depth", c.max_depth);
  c.meta_l2 = j.value("meta-l2", c.meta_l2);
  c.meta_max_iterations = j.value("meta-max-iterations", c.meta_max_iterations);
  c.meta_tol = j.value("meta-tol", c.meta_tol);
  c.calibration_holdout = j.value("calibration-holdout", c.calibration_holdout);
  c.report_bins = j.value("report-bins", c.report_bins);
  c.transformer.layers = j.value("transformer-layers", c.transformer.layers);
  c.transformer.heads = j.value("transformer-heads", c.transformer.heads);
  c.transformer.model_dim = j.value("transformer-dim", c.transformer.model_dim);
  c.transformer.ff_dim = j.value("transformer-ff-dim", c.transformer.ff_dim);
  c.transformer.dropout = j.value("transformer-dropout", c.transformer.dropout);
  c.cnn.conv_layers = j.value("cnn-layers", c.cnn.conv_layers);
  c.cnn.filters = j.value("cnn-filters", c.cnn.filters);
  c.cnn.kernel_size = j.value("cnn-kernel", c.cnn.kernel_size);
  c.ffnn.hidden_dims = {j.value("ffnn-hidden1", 128), j.value("ffnn-hidden2", 64)};
  c.ffnn.dropout = j.value("ffnn-dropout", c.ffnn.dropout);
  c.vote_threshold = j.value("vote-threshold", c.vote_threshold);
  c.threads = j.value("threads", c.threads);
  c.output_dir = j.value("out-dir", c.output_dir);
  c.models_dir = j.value("models-dir", c.models_dir);
  return c;
}

std::string RunConfig::to_toml() const {
  const nlohmann::json j = to_json();  // alphabetical keys: deterministic
  std::ostringstream out;
  for (const auto& [key, value] : j.items()) {
    out << key << " = ";
    if (value.is_string()) {
      out << '"' << value.get<std::string>() << '"';
    } else if (value.is_boolean()) {
      out << (value.get<bool>() ? "true" : "false");
    } else if (value.is_number_float()) {
      out << format_double(value.get<double>());
    } else {
      out << value.dump();
    }
    out << "\n";
  }
  return out.str();
}

// --- meta features -------------------------------------------------------------

Mat build_meta(const Mat& probs, double vote_threshold) {
  if (probs.cols() != kLearnerCount) {
    throw std::runtime_error("build_meta: expected " + std::to_string(kLearnerCount) +
                             " probability columns, got " + std::to_string(probs.cols()));
  }
  const Eigen::Index n = probs.rows();
  Mat meta(n, kMetaWidth);
  for (Eigen::Index i = 0; i < n; ++i) {
    double sum = 0.0, sum_sq = 0.0;
    for (int l = 0; l < kLearnerCount; ++l) {
      const double p = probs(i, l);
      const double clipped = std::clamp(p, kLogitClip, 1.0 - kLogitClip);
      meta(i, l) = p;
      meta(i, kLearnerCount + l) = std::log(clipped / (1.0 - clipped));
      meta(i, 2 * kLearnerCount + l) = p >= vote_threshold ? 1.0 : 0.0;
      sum += p;
      sum_sq += p * p;
    }
    const double mean = sum / kLearnerCount;
    meta(i, 15) = mean;
    meta(i, 16) = std::sqrt(std::max(0.0, sum_sq / kLearnerCount - mean * mean));
  }
  return meta;
}

// --- meta learner ---------------------------------------------------------------

namespace {

double logistic_objective(const Mat& X, const std::vector<int>& y, const Vec& w, double b,
                          double l2, Vec* gw, double* gb) {
  const Eigen::Index n = X.rows();
  const Vec z = X * w + Vec::Constant(n, b);
  double loss = 0.0;
  Vec residual(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    loss += softplus(z(i)) - static_cast<double>(y[static_cast<std::size_t>(i)]) * z(i);
    residual(i) = sigmoid(z(i)) - static_cast<double>(y[static_cast<std::size_t>(i)]);
  }
  loss = loss / static_cast<double>(n) + 0.5 * l2 * w.squaredNorm();
  if (gw) {
    *gw = X.transpose() * residual / static_cast<double>(n) + l2 * w;
    *gb = residual.sum() / static_cast<double>(n);
  }
  return loss;
}

}  // namespace

MetaLearner fit_meta_learner(const Mat& meta, const std::vector<int>& y, double l2,
                             int max_iterations, double tol) {
  const int positives = std::accumulate(y.begin(), y.end(), 0);
  if (positives == 0 || positives == static_cast<int>(y.size())) {
    throw std::runtime_error("fit_meta_learner: both classes must be present");
  }

  MetaLearner model;
  model.w = Vec::Zero(meta.cols());
  model.b = 0.0;

  Vec gw(meta.cols());
  double gb = 0.0;
  double objective = logistic_objective(meta, y, model.w, model.b, l2, &gw, &gb);
  double step = 1.0;
  int iter = 0;
  for (; iter < max_iterations; ++iter) {
    const double grad_sq = gw.squaredNorm() + gb * gb;
    model.grad_norm = std::sqrt(grad_sq);
    if (model.grad_norm < tol) {
      model.converged = true;
      break;
    }
    // Backtracking line search on the convex objective (Armijo, factor 1/2).
    step = std::min(step * 2.0, 1e6);
    for (;;) {
      const Vec w_next = model.w - step * gw;
      const double b_next = model.b - step * gb;
      const double next = logistic_objective(meta, y, w_next, b_next, l2, nullptr, nullptr);
      if (next <= objective - 0.5 * step * grad_sq || step < 1e-18) {
        model.w = w_next;
        model.b = b_next;
        objective = next;
        break;
      }
      step *= 0.5;
    }
    objective = logistic_objective(meta, y, model.w, model.b, l2, &gw, &gb);
  }
  model.iterations = iter;
  if (!model.converged) {
    model.grad_norm = std::sqrt(gw.squaredNorm() + gb * gb);
  }
  return model;
}

std::vector<double> meta_predict(const MetaLearner& model, const Mat& meta) {
  const Vec z = meta * model.w + Vec::Constant(meta.rows(), model.b);
  std::vector<double> out(static_cast<std::size_t>(meta.rows()));
  for (Eigen::Index i = 0; i < z.size(); ++i) out[static_cast<std::size_t>(i)] = sigmoid(z(i));
  return out;
}

double meta_objective(const MetaLearner& model, const Mat& meta, const std::vector<int>& y,
                      double l2) {
  return logistic_objective(meta, y, model.w, model.b, l2, nullptr, nullptr);
}

// --- fold model -------------------------------------------------------------------

FoldModel train_fold_model(const std::vector<RawRecord>& records,
                           std::vector<Provenance> provenance, const RunConfig& cfg,
                           std::uint64_t stream_base, int threads) {
  FoldModel fm;
  const dataset::FeatureMatrix features =
      dataset::build_feature_matrix(records, std::move(provenance));
  fm.train_labels = features.labels;
  fm.scaler = features.scaler_stats;

  phasemap::TrainAlphaOptions phase_opt;
  phase_opt.epochs = cfg.phase_epochs;
  phase_opt.lr = cfg.phase_lr;
  fm.phase = phasemap::train_alpha(features.values, fm.train_labels,
                                   stream(cfg, stream_base, streams::kPhaseMap), phase_opt);
  const Mat lifted = phasemap::lift(features.values, fm.phase.alpha);

  auto ae_result = graph::train_autoencoder(
      lifted, stream(cfg, stream_base, streams::kAutoencoder), autoencoder_config(cfg));
  fm.autoencoder = std::move(ae_result.autoencoder);

  const auto knn = graph::build_knn(ae_result.embeddings, cfg.k_neighbors);
  graph::RefineOptions refine_opt;
  refine_opt.iterations = cfg.refine_iterations;
  refine_opt.rebuild_every = cfg.refine_rebuild_every;
  refine_opt.lr = cfg.refine_lr;
  auto refined = graph::refine(knn, ae_result.embeddings, fm.train_labels,
                               stream(cfg, stream_base, streams::kRefine), refine_opt);
  fm.concept_graph = std::move(refined.graph);
  fm.refine_stats = std::move(refined.stats);
  fm.train_embeddings = std::move(refined.embeddings.matrix);

  graph::Embeddings emb;
  emb.matrix = fm.train_embeddings;
  emb.source = graph::EmbeddingSource::kRefined;
  const nn::Tensor seqs = graph::neighbor_sequences(fm.concept_graph, emb);

  // Inner stratified holdout for calibration; each learner trains on the inner
  // 80%, its calibrator fits on held-out predictions, then the learner refits
  // on the whole training set.
  std::vector<int> inner_idx, cal_idx;
  {
    auto rng = make_rng(stream(cfg, stream_base, streams::kInnerSplit));
    stratified_split(fm.train_labels, cfg.calibration_holdout, rng, inner_idx, cal_idx);
  }
  const auto y_inner = gather(fm.train_labels, inner_idx);
  const auto y_cal = gather(fm.train_labels, cal_idx);
  const Mat lifted_inner = gather_rows(lifted, inner_idx);
  const Mat lifted_cal = gather_rows(lifted, cal_idx);
  const nn::Tensor seqs_inner = gather_seqs(seqs, inner_idx);
  const nn::Tensor seqs_cal = gather_seqs(seqs, cal_idx);

  forests::ForestOptions forest_opt;
  forest_opt.trees = cfg.trees;
  forest_opt.max_depth = cfg.max_depth;
  forest_opt.threads = 1;  // parallelism happens across learner jobs

  nn::TrainOptions nn_opt;
  nn_opt.epochs = cfg.learner_epochs;
  nn_opt.lr = cfg.learner_lr;
  nn_opt.batch_size = cfg.batch_size;

  const int lifted_dim = static_cast<int>(lifted.cols());
  std::array<std::vector<double>, kLearnerCount> cal_scores;

  // Ten independent jobs: {inner fit + holdout scores, full refit} per learner.
  auto run_job = [&](int job) {
    const int learner = job / 2;
    const bool inner = job % 2 == 0;
    switch (learner) {
      case 0: {  // rf
        const std::uint64_t s = stream(cfg, stream_base,
                                       streams::kForestRf + (inner ? streams::kInnerFit : 0));
        if (inner) {
          const auto model = forests::fit_forest(lifted_inner, y_inner,
                                                 forests::ForestMode::kRandomForest, s, forest_opt);
          cal_scores[0] = model.predict_proba(lifted_cal);
        } else {
          fm.rf = forests::fit_forest(lifted, fm.train_labels,
                                      forests::ForestMode::kRandomForest, s, forest_opt);
        }
        break;
      }
      case 1: {  // et
        const std::uint64_t s = stream(cfg, stream_base,
                                       streams::kForestEt + (inner ? streams::kInnerFit : 0));
        if (inner) {
          const auto model = forests::fit_forest(lifted_inner, y_inner,
                                                 forests::ForestMode::kExtraTrees, s, forest_opt);
          cal_scores[1] = model.predict_proba(lifted_cal);
        } else {
          fm.et = forests::fit_forest(lifted, fm.train_labels, forests::ForestMode::kExtraTrees, s,
                                      forest_opt);
        }
        break;
      }
      case 2: {  // transformer
        const std::uint64_t s = stream(cfg, stream_base,
                                       streams::kTransformer + (inner ? streams::kInnerFit : 0));
        nn::TrainOptions opt = nn_opt;
        opt.seed = s;
        if (inner) {
          nn::TransformerModel model(cfg.transformer, cfg.k_neighbors, s);
          (void)nn::train_binary(model, seqs_inner, y_inner, opt);
          cal_scores[2] = model.predict_proba(seqs_cal);
        } else {
          fm.transformer = nn::TransformerModel(cfg.transformer, cfg.k_neighbors, s);
          (void)nn::train_binary(fm.transformer, seqs, fm.train_labels, opt);
        }
        break;
      }
      case 3: {  // cnn_seq
        const std::uint64_t s =
            stream(cfg, stream_base, streams::kCnnSeq + (inner ? streams::kInnerFit : 0));
        nn::TrainOptions opt = nn_opt;
        opt.seed = s;
        if (inner) {
          nn::CnnSeqModel model(cfg.cnn, cfg.k_neighbors, graph::kEmbeddingDim, s);
          (void)nn::train_binary(model, seqs_inner, y_inner, opt);
          cal_scores[3] = model.predict_proba(seqs_cal);
        } else {
          fm.cnn = nn::CnnSeqModel(cfg.cnn, cfg.k_neighbors, graph::kEmbeddingDim, s);
          (void)nn::train_binary(fm.cnn, seqs, fm.train_labels, opt);
        }
        break;
      }
      case 4: {  // ffnn
        const std::uint64_t s =
            stream(cfg, stream_base, streams::kFfnn + (inner ? streams::kInnerFit : 0));
        nn::TrainOptions opt = nn_opt;
        opt.seed = s;
        if (inner) {
          nn::FfnnModel model(cfg.ffnn, lifted_dim, s);
          (void)nn::train_binary(model, lifted_inner, y_inner, opt);
          cal_scores[4] = model.predict_proba(lifted_cal);
        } else {
          fm.ffnn = nn::FfnnModel(cfg.ffnn, lifted_dim, s);
          (void)nn::train_binary(fm.ffnn, lifted, fm.train_labels, opt);
        }
        break;
      }
      default:
        break;
    }
  };
  parallel_for(2 * kLearnerCount, threads, run_job);

  for (int l = 0; l < kLearnerCount; ++l) {
    fm.calibrators[static_cast<std::size_t>(l)] =
        calib::fit_isotonic(cal_scores[static_cast<std::size_t>(l)], y_cal);
  }
  return fm;
}

Mat predict_base(FoldModel& model, const std::vector<RawRecord>& records, const RunConfig& cfg) {
  const Eigen::Index n = static_cast<Eigen::Index>(records.size());
  Mat out(n, kLearnerCount);
  if (n == 0) return out;

  const Mat x11 = dataset::engineer_features(records);
  const Mat scaled = dataset::apply_scaler(x11, model.scaler);
  const Mat lifted = phasemap::lift(scaled, model.phase.alpha);
  const Mat queries = model.autoencoder.encode(lifted);

  const int k = cfg.k_neighbors;
  const int dim = static_cast<int>(model.train_embeddings.cols());
  nn::Tensor seqs({static_cast<int>(n), k, dim});
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto nb = graph::knn_lookup(model.train_embeddings, queries.row(i), k);
    for (int j = 0; j < k; ++j) {
      std::copy_n(model.train_embeddings.row(nb[static_cast<std::size_t>(j)]).data(), dim,
                  seqs.data.begin() +
                      (static_cast<std::ptrdiff_t>(i) * k + j) * static_cast<std::ptrdiff_t>(dim));
    }
  }

  const std::array<std::vector<double>, kLearnerCount> raw = {
      model.rf.predict_proba(lifted),        model.et.predict_proba(lifted),
      model.transformer.predict_proba(seqs), model.cnn.predict_proba(seqs),
      model.ffnn.predict_proba(lifted)};
  for (int l = 0; l < kLearnerCount; ++l) {
    const auto& cal = model.calibrators[static_cast<std::size_t>(l)];
    for (Eigen::Index i = 0; i < n; ++i) {
      out(i, l) = cal(raw[static_cast<std::size_t>(l)][static_cast<std::size_t>(i)]);
    }
  }
  return out;
}

// --- cross-validation ----------------------------------------------------------

std::vector<int> stratified_folds(const std::vector<int>& labels, int k, std::uint64_t seed) {
  std::vector<int> assignment(labels.size(), 0);
  std::vector<int> by_class[2];
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
    by_class[labels[static_cast<std::size_t>(i)] == 1 ? 1 : 0].push_back(i);
  }
  auto rng = make_rng(seed);
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    for (int i = 0; i < static_cast<int>(members.size()); ++i) {
      assignment[static_cast<std::size_t>(members[static_cast<std::size_t>(i)])] = i % k;
    }
  }
  return assignment;
}

CvResult run_cv(const std::vector<RawRecord>& imputed, const RunConfig& cfg) {
  CvResult result;

  // the working set the folds partition
  std::vector<RawRecord> work = imputed;
  std::vector<Provenance> provenance(imputed.size(), Provenance::kOriginal);
  if (cfg.augment_mode == AugmentMode::kGlobal && cfg.synthetic_count > 0) {
    auto aug = augment::augment_minority(imputed, cfg.synthetic_count,
                                         stream(cfg, 0, streams::kAugment), cfg.gmm_components);
    work = std::move(aug.records);
    provenance = std::move(aug.provenance);
  }
  const int n_work = static_cast<int>(work.size());
  result.labels = dataset::labels_of(work);
  result.provenance.resize(static_cast<std::size_t>(n_work));
  for (int i = 0; i < n_work; ++i) {
    result.provenance[static_cast<std::size_t>(i)] =
        provenance[static_cast<std::size_t>(i)] == Provenance::kSynthetic ? 1 : 0;
  }

  result.fold_of = stratified_folds(result.labels, cfg.folds, stream(cfg, 0, streams::kFoldSplit));
  for (int f = 0; f < cfg.folds; ++f) {
    int pos = 0, neg = 0;
    for (int i = 0; i < n_work; ++i) {
      if (result.fold_of[static_cast<std::size_t>(i)] != f) continue;
      (result.labels[static_cast<std::size_t>(i)] == 1 ? pos : neg) += 1;
    }
    if (pos == 0 || neg == 0) {
      throw std::runtime_error("stratification error: fold " + std::to_string(f) +
                               " has a single class (" + std::to_string(pos) + " positive, " +
                               std::to_string(neg) + " negative)");
    }
  }

  result.oof_base = Mat::Zero(n_work, kLearnerCount);
  result.fold_graphs.resize(static_cast<std::size_t>(cfg.folds));
  result.fold_refine_stats.resize(static_cast<std::size_t>(cfg.folds));
  std::vector<std::vector<FoldRecord>> fold_records(static_cast<std::size_t>(cfg.folds));

  // Folds run in parallel when threads allow; inner work then stays serial so
  // results are independent of the thread count.
  const bool folds_parallel = cfg.threads > 1 && cfg.folds > 1;
  const int outer_threads = folds_parallel ? std::min(cfg.threads, cfg.folds) : 1;
  const int inner_threads = folds_parallel ? 1 : cfg.threads;

  parallel_for(cfg.folds, outer_threads, [&](int f) {
    std::vector<int> train_idx, val_idx;
    for (int i = 0; i < n_work; ++i) {
      (result.fold_of[static_cast<std::size_t>(i)] == f ? val_idx : train_idx).push_back(i);
    }
    std::vector<RawRecord> train_records = gather_records(work, train_idx);
    std::vector<Provenance> train_provenance;
    train_provenance.reserve(train_idx.size());
    for (int i : train_idx) train_provenance.push_back(provenance[static_cast<std::size_t>(i)]);
    if (cfg.augment_mode == AugmentMode::kInFold && cfg.synthetic_count > 0) {
      auto aug = augment::augment_minority(
          train_records, cfg.synthetic_count,
          stream(cfg, streams::kFoldStride * static_cast<std::uint64_t>(f + 1), streams::kAugment),
          cfg.gmm_components);
      train_records = std::move(aug.records);
      train_provenance = std::move(aug.provenance);
    }

    FoldModel fm = train_fold_model(
        train_records, std::move(train_provenance), cfg,
        streams::kFoldStride * static_cast<std::uint64_t>(f + 1), inner_threads);

    const std::vector<RawRecord> val_records = gather_records(work, val_idx);
    const Mat val_probs = predict_base(fm, val_records, cfg);
    for (std::size_t i = 0; i < val_idx.size(); ++i) {
      result.oof_base.row(val_idx[i]) = val_probs.row(static_cast<Eigen::Index>(i));
    }

    const auto y_val = gather(result.labels, val_idx);
    for (int l = 0; l < kLearnerCount; ++l) {
      std::vector<double> probs(static_cast<std::size_t>(val_probs.rows()));
      for (Eigen::Index i = 0; i < val_probs.rows(); ++i) {
        probs[static_cast<std::size_t>(i)] = val_probs(i, l);
      }
      FoldRecord record;
      record.fold = f;
      record.model = learner_names()[static_cast<std::size_t>(l)];
      record.f1 = calib::f1(y_val, probs, cfg.vote_threshold);
      record.auc = calib::auc(y_val, probs);
      fold_records[static_cast<std::size_t>(f)].push_back(record);
    }

    GraphSnapshot snap;
    snap.neighbors = fm.concept_graph.neighbors;
    snap.labels = fm.train_labels;
    snap.k = fm.concept_graph.k;
    result.fold_graphs[static_cast<std::size_t>(f)] = std::move(snap);
    result.fold_refine_stats[static_cast<std::size_t>(f)] = fm.refine_stats;
  });

  // meta learner on the complete OOF matrix
  const Mat meta_features = build_meta(result.oof_base, cfg.vote_threshold);
  result.meta = fit_meta_learner(meta_features, result.labels, cfg.meta_l2,
                                 cfg.meta_max_iterations, cfg.meta_tol);
  result.oof_meta = meta_predict(result.meta, meta_features);

  // per-fold meta metrics, then flatten into fold-major, learner-minor order
  for (int f = 0; f < cfg.folds; ++f) {
    std::vector<int> y_val;
    std::vector<double> p_val;
    for (int i = 0; i < n_work; ++i) {
      if (result.fold_of[static_cast<std::size_t>(i)] != f) continue;
      y_val.push_back(result.labels[static_cast<std::size_t>(i)]);
      p_val.push_back(result.oof_meta[static_cast<std::size_t>(i)]);
    }
    FoldRecord record;
    record.fold = f;
    record.model = "meta";
    record.f1 = calib::f1(y_val, p_val, cfg.vote_threshold);
    record.auc = calib::auc(y_val, p_val);
    fold_records[static_cast<std::size_t>(f)].push_back(record);
  }
  for (const auto& records : fold_records) {
    result.per_fold.insert(result.per_fold.end(), records.begin(), records.end());
  }
  return result;
}

// --- full pipeline -----------------------------------------------------------------

StackArtifact train_pipeline(const RunConfig& cfg) {
  const auto raw = dataset::load_csv(cfg.data_path);
  if (raw.empty()) throw InputError("training data is empty: " + cfg.data_path);
  const auto imputed = dataset::impute_zeros(raw);

  CvResult cv = run_cv(imputed, cfg);

  // Refit on the full dataset. Global mode reuses the exact augmented set the
  // folds partitioned (same stream); in-fold mode augments the full data here.
  std::vector<RawRecord> refit_records = imputed;
  std::vector<Provenance> refit_provenance(imputed.size(), Provenance::kOriginal);
  augment::GaussianMixture gmm;
  if (cfg.synthetic_count > 0) {
    const std::uint64_t augment_stream = cfg.augment_mode == AugmentMode::kGlobal
                                             ? stream(cfg, 0, streams::kAugment)
                                             : stream(cfg, streams::kRefit, streams::kAugment);
    auto aug = augment::augment_minority(imputed, cfg.synthetic_count, augment_stream,
                                         cfg.gmm_components);
    refit_records = std::move(aug.records);
    refit_provenance = std::move(aug.provenance);
    gmm = std::move(aug.gmm);
  }

  StackArtifact artifact;
  artifact.config = cfg;
  artifact.model = train_fold_model(refit_records, std::move(refit_provenance), cfg,
                                    streams::kRefit, cfg.threads);
  artifact.gmm = std::move(gmm);
  artifact.meta = cv.meta;
  artifact.per_fold = std::move(cv.per_fold);
  artifact.oof_base = std::move(cv.oof_base);
  artifact.oof_meta = std::move(cv.oof_meta);
  artifact.oof_labels = std::move(cv.labels);
  artifact.oof_provenance = std::move(cv.provenance);
  artifact.oof_fold = std::move(cv.fold_of);
  artifact.fold_graphs = std::move(cv.fold_graphs);
  artifact.fold_refine_stats = std::move(cv.fold_refine_stats);

  // Inference-path scores of the original training rows, stored for
  // consistency audits of reloaded artifacts.
  const auto scored = predict(artifact, imputed);
  artifact.train_meta_probs.reserve(scored.rows.size());
  for (const auto& row : scored.rows) artifact.train_meta_probs.push_back(row.meta);
  return artifact;
}

PredictResult predict(StackArtifact& artifact, const std::vector<RawRecord>& rows) {
  PredictResult result;
  const auto start = std::chrono::steady_clock::now();
  const Mat base = predict_base(artifact.model, rows, artifact.config);
  const Mat meta_features = build_meta(base, artifact.config.vote_threshold);
  const auto meta = meta_predict(artifact.meta, meta_features);
  const auto stop = std::chrono::steady_clock::now();

  result.rows.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int l = 0; l < kLearnerCount; ++l) {
      result.rows[i].base[static_cast<std::size_t>(l)] = base(static_cast<Eigen::Index>(i), l);
    }
    result.rows[i].meta = meta[i];
  }
  const double seconds = std::chrono::duration<double>(stop - start).count();
  result.rows_per_second = seconds > 0.0 ? static_cast<double>(rows.size()) / seconds : 0.0;
  return result;
}

PredictResult predict(const StackArtifact& artifact, const std::vector<RawRecord>& rows) {
  // predict_base uses model-internal scratch; work on a copy to keep the
  // caller's artifact logically immutable.
  StackArtifact copy = artifact;
  return predict(copy, rows);
}

// --- serialization -------------------------------------------------------------------

namespace {

void put_params(artifact::TensorStore& store, const std::string& prefix,
                const std::vector<const nn::Param*>& params) {
  for (const auto* p : params) {
    store.put(prefix + p->name, p->value.shape,
              std::vector<double>(p->value.data.begin(), p->value.data.end()));
  }
}

void load_params(const artifact::TensorStore& store, const std::string& prefix,
                 std::vector<nn::Param*> params) {
  for (auto* p : params) {
    const auto& entry = store.get(prefix + p->name);
    if (entry.shape != p->value.shape) {
      throw InputError("artifact tensor \"" + prefix + p->name + "\" has unexpected shape");
    }
    p->value.data.assign(entry.f64.begin(), entry.f64.end());
  }
}

void put_forest(artifact::TensorStore& store, const std::string& prefix,
                const forests::ForestModel& forest) {
  std::vector<std::int64_t> offsets;
  offsets.push_back(0);
  std::vector<double> nodes;
  for (const auto& tree : forest.trees) {
    for (const auto& node : tree.nodes) {
      nodes.push_back(static_cast<double>(node.feature));
      nodes.push_back(node.threshold);
      nodes.push_back(static_cast<double>(node.left));
      nodes.push_back(static_cast<double>(node.right));
      nodes.push_back(node.probability);
    }
    offsets.push_back(static_cast<std::int64_t>(nodes.size() / 5));
  }
  store.put_ints(prefix + "offsets", {static_cast<int>(offsets.size())}, offsets);
  store.put(prefix + "nodes", {static_cast<int>(nodes.size() / 5), 5}, nodes);
}

forests::ForestModel load_forest(const artifact::TensorStore& store, const std::string& prefix,
                                 forests::ForestMode mode, int feature_count) {
  forests::ForestModel forest;
  forest.mode = mode;
  forest.feature_count = feature_count;
  const auto offsets = store.get_ints(prefix + "offsets");
  const auto& nodes = store.get(prefix + "nodes");
  for (std::size_t t = 0; t + 1 < offsets.size(); ++t) {
    forests::DecisionTree tree;
    for (std::int64_t i = offsets[t]; i < offsets[t + 1]; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * 5;
      forests::TreeNode node;
      node.feature = static_cast<int>(nodes.f64[base]);
      node.threshold = nodes.f64[base + 1];
      node.left = static_cast<int>(nodes.f64[base + 2]);
      node.right = static_cast<int>(nodes.f64[base + 3]);
      node.probability = nodes.f64[base + 4];
      tree.nodes.push_back(node);
    }
    forest.trees.push_back(std::move(tree));
  }
  return forest;
}

std::vector<std::int64_t> to_i64(const std::vector<int>& v) {
  return {v.begin(), v.end()};
}

std::vector<int> to_i32(const std::vector<std::int64_t>& v) {
  return {v.begin(), v.end()};
}

void put_neighbors(artifact::TensorStore& store, const std::string& name,
                   const std::vector<std::vector<int>>& neighbors, int k) {
  std::vector<std::int64_t> flat;
  flat.reserve(neighbors.size() * static_cast<std::size_t>(k));
  for (const auto& row : neighbors) {
    for (int j : row) flat.push_back(j);
  }
  store.put_ints(name, {static_cast<int>(neighbors.size()), k}, flat);
}

std::vector<std::vector<int>> load_neighbors(const artifact::TensorStore& store,
                                             const std::string& name) {
  const auto& entry = store.get(name);
  const int n = entry.shape.at(0), k = entry.shape.at(1);
  std::vector<std::vector<int>> neighbors(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& row = neighbors[static_cast<std::size_t>(i)];
    row.resize(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
      row[static_cast<std::size_t>(j)] =
          static_cast<int>(entry.i64[static_cast<std::size_t>(i) * k + static_cast<std::size_t>(j)]);
    }
  }
  return neighbors;
}

void put_refine_stats(artifact::TensorStore& store, const std::string& name,
                      const std::vector<graph::RefineIterationStats>& stats) {
  std::vector<double> flat;
  flat.reserve(stats.size() * 4);
  for (const auto& s : stats) {
    flat.push_back(static_cast<double>(s.iteration));
    flat.push_back(s.bce);
    flat.push_back(s.modularity);
    flat.push_back(s.avg_degree);
  }
  store.put(name, {static_cast<int>(stats.size()), 4}, flat);
}

std::vector<graph::RefineIterationStats> load_refine_stats(const artifact::TensorStore& store,
                                                           const std::string& name) {
  const auto& entry = store.get(name);
  std::vector<graph::RefineIterationStats> stats(static_cast<std::size_t>(entry.shape.at(0)));
  for (std::size_t i = 0; i < stats.size(); ++i) {
    stats[i].iteration = static_cast<int>(entry.f64[i * 4]);
    stats[i].bce = entry.f64[i * 4 + 1];
    stats[i].modularity = entry.f64[i * 4 + 2];
    stats[i].avg_degree = entry.f64[i * 4 + 3];
  }
  return stats;
}

}  // namespace

void save_artifact(const StackArtifact& a, const std::string& path) {
  artifact::TensorStore store;

  store.put("scaler.median", {static_cast<int>(a.model.scaler.median.size())}, a.model.scaler.median);
  store.put("scaler.iqr", {static_cast<int>(a.model.scaler.iqr.size())}, a.model.scaler.iqr);

  store.put_scalar("phase.alpha", a.model.phase.alpha);
  store.put("phase.probe_w", a.model.phase.probe_w);
  store.put_scalar("phase.probe_b", a.model.phase.probe_b);
  store.put("phase.trace", {static_cast<int>(a.model.phase.training_trace.size())},
            a.model.phase.training_trace);
  store.put("phase.val_mse", {2}, {a.model.phase.initial_val_mse, a.model.phase.retained_val_mse});

  const int k_gmm = static_cast<int>(a.gmm.weights.size());
  store.put("gmm.weights", a.gmm.weights);
  if (k_gmm > 0) {
    store.put("gmm.means", a.gmm.means);
    std::vector<double> covs;
    const int d = static_cast<int>(a.gmm.means.cols());
    for (const auto& cov : a.gmm.covariances) {
      covs.insert(covs.end(), cov.data(), cov.data() + cov.size());
    }
    store.put("gmm.covariances", {k_gmm, d, d}, covs);
  }

  put_params(store, "ae.", a.model.autoencoder.params());
  store.put("embeddings", a.model.train_embeddings);
  put_neighbors(store, "graph.neighbors", a.model.concept_graph.neighbors, a.model.concept_graph.k);
  store.put("graph.refine_w", a.model.concept_graph.refine_state.w);
  store.put_scalar("graph.refine_b", a.model.concept_graph.refine_state.b);
  store.put("graph.stats", {2}, {a.model.concept_graph.modularity, a.model.concept_graph.avg_degree});
  store.put_ints("train_labels", {static_cast<int>(a.model.train_labels.size())},
                 to_i64(a.model.train_labels));
  put_refine_stats(store, "refine_stats", a.model.refine_stats);

  put_forest(store, "rf.", a.model.rf);
  put_forest(store, "et.", a.model.et);
  put_params(store, "transformer.", a.model.transformer.params());
  put_params(store, "cnn.", a.model.cnn.params());
  put_params(store, "ffnn.", a.model.ffnn.params());

  for (int l = 0; l < kLearnerCount; ++l) {
    const auto& cal = a.model.calibrators[static_cast<std::size_t>(l)];
    const std::string prefix = "cal." + learner_names()[static_cast<std::size_t>(l)] + ".";
    store.put(prefix + "x", {static_cast<int>(cal.breakpoints.size())}, cal.breakpoints);
    store.put(prefix + "y", {static_cast<int>(cal.values.size())}, cal.values);
  }

  store.put("meta.w", a.meta.w);
  store.put_scalar("meta.b", a.meta.b);
  store.put("meta.info", {3},
            {static_cast<double>(a.meta.iterations), a.meta.grad_norm,
             a.meta.converged ? 1.0 : 0.0});

  std::vector<double> perf;
  for (const auto& record : a.per_fold) {
    int model_idx = kLearnerCount;  // meta
    for (int l = 0; l < kLearnerCount; ++l) {
      if (record.model == learner_names()[static_cast<std::size_t>(l)]) model_idx = l;
    }
    perf.push_back(static_cast<double>(record.fold));
    perf.push_back(static_cast<double>(model_idx));
    perf.push_back(record.f1);
    perf.push_back(record.auc);
  }
  store.put("report.perf", {static_cast<int>(a.per_fold.size()), 4}, perf);

  store.put("report.oof.base", a.oof_base);
  store.put("report.oof.meta", {static_cast<int>(a.oof_meta.size())}, a.oof_meta);
  store.put_ints("report.oof.labels", {static_cast<int>(a.oof_labels.size())}, to_i64(a.oof_labels));
  store.put_ints("report.oof.provenance", {static_cast<int>(a.oof_provenance.size())},
                 to_i64(a.oof_provenance));
  store.put_ints("report.oof.fold", {static_cast<int>(a.oof_fold.size())}, to_i64(a.oof_fold));
  store.put("report.train_meta_probs", {static_cast<int>(a.train_meta_probs.size())},
            a.train_meta_probs);

  for (std::size_t f = 0; f < a.fold_graphs.size(); ++f) {
    const std::string prefix = "report.fold" + std::to_string(f) + ".";
    put_neighbors(store, prefix + "neighbors", a.fold_graphs[f].neighbors, a.fold_graphs[f].k);
    store.put_ints(prefix + "labels", {static_cast<int>(a.fold_graphs[f].labels.size())},
                   to_i64(a.fold_graphs[f].labels));
    put_refine_stats(store, prefix + "stats", a.fold_refine_stats[f]);
  }

  nlohmann::json meta_json;
  meta_json["config"] = a.config.to_json();
  meta_json["learners"] = learner_names();
  meta_json["feature_names"] = dataset::feature_names();
  meta_json["lifted_dim"] = 2 * dataset::kEngineeredFeatureCount;
  meta_json["fold_count"] = static_cast<int>(a.fold_graphs.size());
  meta_json["n_train"] = static_cast<int>(a.model.train_labels.size());
  meta_json["n_oof"] = static_cast<int>(a.oof_meta.size());

  artifact::save_envelope(path, kArtifactFormatVersion, meta_json, store);
}

StackArtifact load_artifact(const std::string& path) {
  const auto env = artifact::load_envelope(path, kArtifactFormatVersion);
  const auto& store = env.tensors;

  StackArtifact a;
  a.config = RunConfig::from_json(env.meta.at("config"));
  const int lifted_dim = env.meta.at("lifted_dim").get<int>();

  a.model.scaler.median = store.get("scaler.median").f64;
  a.model.scaler.iqr = store.get("scaler.iqr").f64;

  a.model.phase.alpha = store.get_scalar("phase.alpha");
  a.model.phase.probe_w = store.get_vector("phase.probe_w");
  a.model.phase.probe_b = store.get_scalar("phase.probe_b");
  a.model.phase.training_trace = store.get("phase.trace").f64;
  {
    const auto& vm = store.get("phase.val_mse").f64;
    a.model.phase.initial_val_mse = vm.at(0);
    a.model.phase.retained_val_mse = vm.at(1);
  }

  const auto& gmm_weights = store.get("gmm.weights");
  if (!gmm_weights.f64.empty()) {
    a.gmm.weights = store.get_vector("gmm.weights");
    a.gmm.means = store.get_matrix("gmm.means");
    const auto& covs = store.get("gmm.covariances");
    const int k = covs.shape.at(0), d = covs.shape.at(1);
    for (int c = 0; c < k; ++c) {
      Mat cov(d, d);
      std::copy_n(covs.f64.begin() + static_cast<std::ptrdiff_t>(c) * d * d, d * d, cov.data());
      a.gmm.covariances.push_back(std::move(cov));
    }
  }

  a.model.autoencoder = graph::Autoencoder(lifted_dim, graph::AutoencoderConfig{}, 0);
  load_params(store, "ae.", a.model.autoencoder.params());
  a.model.train_embeddings = store.get_matrix("embeddings");
  a.model.concept_graph.neighbors = load_neighbors(store, "graph.neighbors");
  a.model.concept_graph.k = a.config.k_neighbors;
  a.model.concept_graph.refine_state.w = store.get_vector("graph.refine_w");
  a.model.concept_graph.refine_state.b = store.get_scalar("graph.refine_b");
  a.model.concept_graph.refine_state.iterations = a.config.refine_iterations;
  {
    const auto& gs = store.get("graph.stats").f64;
    a.model.concept_graph.modularity = gs.at(0);
    a.model.concept_graph.avg_degree = gs.at(1);
  }
  a.model.train_labels = to_i32(store.get_ints("train_labels"));
  a.model.refine_stats = load_refine_stats(store, "refine_stats");

  a.model.rf = load_forest(store, "rf.", forests::ForestMode::kRandomForest, lifted_dim);
  a.model.et = load_forest(store, "et.", forests::ForestMode::kExtraTrees, lifted_dim);

  a.model.transformer = nn::TransformerModel(a.config.transformer, a.config.k_neighbors, 0);
  load_params(store, "transformer.", a.model.transformer.params());
  a.model.cnn = nn::CnnSeqModel(a.config.cnn, a.config.k_neighbors, graph::kEmbeddingDim, 0);
  load_params(store, "cnn.", a.model.cnn.params());
  a.model.ffnn = nn::FfnnModel(a.config.ffnn, lifted_dim, 0);
  load_params(store, "ffnn.", a.model.ffnn.params());

  for (int l = 0; l < kLearnerCount; ++l) {
    const std::string prefix = "cal." + learner_names()[static_cast<std::size_t>(l)] + ".";
    auto& cal = a.model.calibrators[static_cast<std::size_t>(l)];
    cal.breakpoints = store.get(prefix + "x").f64;
    cal.values = store.get(prefix + "y").f64;
  }

  a.meta.w = store.get_vector("meta.w");
  a.meta.b = store.get_scalar("meta.b");
  {
    const auto& info = store.get("meta.info").f64;
    a.meta.iterations = static_cast<int>(info.at(0));
    a.meta.grad_norm = info.at(1);
    a.meta.converged = info.at(2) != 0.0;
  }

  {
    const auto& perf = store.get("report.perf");
    for (int r = 0; r < perf.shape.at(0); ++r) {
      const std::size_t base = static_cast<std::size_t>(r) * 4;
      FoldRecord record;
      record.fold = static_cast<int>(perf.f64[base]);
      const int model_idx = static_cast<int>(perf.f64[base + 1]);
      record.model = model_idx < kLearnerCount
                         ? learner_names()[static_cast<std::size_t>(model_idx)]
                         : std::string("meta");
      record.f1 = perf.f64[base + 2];
      record.auc = perf.f64[base + 3];
      a.per_fold.push_back(std::move(record));
    }
  }

  a.oof_base = store.get_matrix("report.oof.base");
  a.oof_meta = store.get("report.oof.meta").f64;
  a.oof_labels = to_i32(store.get_ints("report.oof.labels"));
  a.oof_provenance = to_i32(store.get_ints("report.oof.provenance"));
  a.oof_fold = to_i32(store.get_ints("report.oof.fold"));
  a.train_meta_probs = store.get("report.train_meta_probs").f64;

  const int fold_count = env.meta.at("fold_count").get<int>();
  for (int f = 0; f < fold_count; ++f) {
    const std::string prefix = "report.fold" + std::to_string(f) + ".";
    GraphSnapshot snap;
    snap.neighbors = load_neighbors(store, prefix + "neighbors");
    snap.k = snap.neighbors.empty() ? 0 : static_cast<int>(snap.neighbors.front().size());
    snap.labels = to_i32(store.get_ints(prefix + "labels"));
    a.fold_graphs.push_back(std::move(snap));
    a.fold_refine_stats.push_back(load_refine_stats(store, prefix + "stats"));
  }
  return a;
}

// --- reports ----------------------------------------------------------------------

void write_dot_files(const StackArtifact& a, const std::string& out_dir) {
  for (std::size_t f = 0; f < a.fold_graphs.size(); ++f) {
    graph::ConceptGraph g;
    g.neighbors = a.fold_graphs[f].neighbors;
    g.k = a.fold_graphs[f].k;
    graph::export_dot(g, a.fold_graphs[f].labels,
                      out_dir + "/concept_graph_fold" + std::to_string(f) + ".dot");
  }
}

void write_reports(const StackArtifact& a, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);

  {
    std::ostringstream csv;
    csv << "fold,model,f1,auc\n";
    for (const auto& record : a.per_fold) {
      csv << record.fold << ',' << record.model << ',' << csv_cell(record.f1) << ','
          << csv_cell(record.auc) << "\n";
    }
    write_file(out_dir + "/perf_table.csv", csv.str());
  }

  {
    std::ostringstream csv;
    csv << "index,label,rf_prob,et_prob,transformer_prob,cnn_seq_prob,ffnn_prob,meta_prob\n";
    for (std::size_t i = 0; i < a.oof_meta.size(); ++i) {
      csv << i << ',' << a.oof_labels[i];
      for (int l = 0; l < kLearnerCount; ++l) {
        csv << ',' << csv_cell(a.oof_base(static_cast<Eigen::Index>(i), l));
      }
      csv << ',' << csv_cell(a.oof_meta[i]) << "\n";
    }
    write_file(out_dir + "/oof_predictions.csv", csv.str());
  }

  {
    const auto bins = calib::calibration_bins(a.oof_labels, a.oof_meta, a.config.report_bins);
    std::ostringstream csv;
    csv << "bin_low,bin_high,mean_pred,obs_freq,count\n";
    for (const auto& bin : bins) {
      csv << csv_cell(bin.low) << ',' << csv_cell(bin.high) << ',' << csv_cell(bin.mean_predicted)
          << ',' << csv_cell(bin.observed_frequency) << ',' << bin.count << "\n";
    }
    write_file(out_dir + "/calibration_bins.csv", csv.str());
  }

  {
    std::vector<int> counts(static_cast<std::size_t>(a.config.report_bins), 0);
    for (double p : a.oof_meta) {
      int b = static_cast<int>(p * a.config.report_bins);
      b = std::clamp(b, 0, a.config.report_bins - 1);
      counts[static_cast<std::size_t>(b)] += 1;
    }
    std::ostringstream csv;
    csv << "bin_low,bin_high,count\n";
    for (int b = 0; b < a.config.report_bins; ++b) {
      csv << csv_cell(static_cast<double>(b) / a.config.report_bins) << ','
          << csv_cell(static_cast<double>(b + 1) / a.config.report_bins) << ','
          << counts[static_cast<std::size_t>(b)] << "\n";
    }
    write_file(out_dir + "/probability_histogram.csv", csv.str());
  }

  {
    std::ostringstream csv;
    csv << "fold,iteration,bce,modularity,avg_degree\n";
    for (std::size_t f = 0; f < a.fold_refine_stats.size(); ++f) {
      for (const auto& s : a.fold_refine_stats[f]) {
        csv << f << ',' << s.iteration << ',' << csv_cell(s.bce) << ',' << csv_cell(s.modularity)
            << ',' << csv_cell(s.avg_degree) << "\n";
      }
    }
    write_file(out_dir + "/graph_stats.csv", csv.str());
  }

  {
    std::ostringstream csv;
    csv << "epoch,val_mse\n";
    for (std::size_t e = 0; e < a.model.phase.training_trace.size(); ++e) {
      csv << (e + 1) << ',' << csv_cell(a.model.phase.training_trace[e]) << "\n";
    }
    write_file(out_dir + "/phase_training_trace.csv", csv.str());
  }

  write_file(out_dir + "/config_snapshot.toml", a.config.to_toml());
  write_dot_files(a, out_dir);
}

}  // namespace qisicgm::stack
