// Command-line entry point: train / predict / evaluate / export-graph / report.
#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "qisicgm/calibmetrics.hpp"
#include "qisicgm/dataset.hpp"
#include "qisicgm/stack.hpp"

namespace {

using namespace qisicgm;

constexpr const char* kDefaultArtifactName = "qisicgm_stack.json";

struct TrainFlags {
  stack::RunConfig cfg;
  bool augment_global = false;
  bool smoke = false;
  int epochs_override = -1;
  std::string artifact_path;
  std::string export_augmented;
};

void add_train_options(CLI::App& sub, TrainFlags& flags) {
  auto& cfg = flags.cfg;
  cfg.threads = default_threads();
  sub.add_option("--data", cfg.data_path, "training CSV (PIMA schema)");
  sub.add_option("--seed", cfg.seed, "master random seed");
  sub.add_option("--synthetic-count", cfg.synthetic_count, "synthetic minority samples");
  sub.add_option("--gmm-components", cfg.gmm_components, "mixture components");
  sub.add_option("--k-neighbors", cfg.k_neighbors, "concept-graph neighbor count");
  sub.add_option("--folds", cfg.folds, "cross-validation folds");
  sub.add_flag("--augment-global", flags.augment_global,
               "augment once before splitting (reference protocol; validation folds then "
               "contain synthetic rows)");
  sub.add_option("--phase-epochs", cfg.phase_epochs, "phase-map training epochs");
  sub.add_option("--phase-lr", cfg.phase_lr, "phase-map learning rate");
  sub.add_option("--autoencoder-epochs", cfg.autoencoder_epochs, "autoencoder epochs");
  sub.add_option("--autoencoder-lr", cfg.autoencoder_lr, "autoencoder learning rate");
  sub.add_option("--refine-iterations", cfg.refine_iterations, "graph refinement iterations");
  sub.add_option("--refine-rebuild-every", cfg.refine_rebuild_every,
                 "edge rebuild cadence during refinement");
  sub.add_option("--refine-lr", cfg.refine_lr, "graph refinement learning rate");
  sub.add_option("--learner-epochs", cfg.learner_epochs, "neural base-learner epochs");
  sub.add_option("--learner-lr", cfg.learner_lr, "neural base-learner learning rate");
  sub.add_option("--batch-size", cfg.batch_size, "mini-batch size");
  sub.add_option("--trees", cfg.trees, "trees per forest");
  sub.add_option("--max-depth", cfg.max_depth, "tree depth cap");
  sub.add_option("--meta-l2", cfg.meta_l2, "meta-learner L2 strength");
  sub.add_option("--meta-max-iterations", cfg.meta_max_iterations, "meta-learner iteration cap");
  sub.add_option("--meta-tol", cfg.meta_tol, "meta-learner gradient tolerance");
  sub.add_option("--calibration-holdout", cfg.calibration_holdout,
                 "inner holdout fraction for isotonic calibration");
  sub.add_option("--report-bins", cfg.report_bins, "calibration/histogram bin count");
  sub.add_option("--transformer-layers", cfg.transformer.layers, "transformer encoder layers");
  sub.add_option("--transformer-heads", cfg.transformer.heads, "attention heads");
  sub.add_option("--transformer-dim", cfg.transformer.model_dim, "transformer model width");
  sub.add_option("--transformer-ff-dim", cfg.transformer.ff_dim, "transformer feed-forward width");
  sub.add_option("--transformer-dropout", cfg.transformer.dropout, "transformer dropout rate");
  sub.add_option("--cnn-layers", cfg.cnn.conv_layers, "convolution stages");
  sub.add_option("--cnn-filters", cfg.cnn.filters, "convolution filters");
  sub.add_option("--cnn-kernel", cfg.cnn.kernel_size, "convolution kernel size (odd)");
  sub.add_option("--ffnn-dropout", cfg.ffnn.dropout, "feed-forward net dropout rate");
  sub.add_option("--threads", cfg.threads, "worker thread cap");
  sub.add_option("--out-dir", cfg.output_dir, "report output directory");
  sub.add_option("--models-dir", cfg.models_dir, "artifact directory");
  sub.add_option("--artifact", flags.artifact_path, "explicit artifact output path");
  sub.add_option("--export-augmented", flags.export_augmented,
                 "also write the refit-stage augmented dataset (CSV with provenance column)");
  sub.add_option("--epochs", flags.epochs_override,
                 "override every epoch count (phase map, autoencoder, base learners)");
  sub.add_flag("--smoke", flags.smoke,
               "fast full-pipeline profile: 2 folds, 2 epochs everywhere, no augmentation "
               "(explicit flags still win)");
  sub.set_config("--config", "", "TOML-style key=value config file; command-line flags win");
}

void apply_presets(TrainFlags& flags, const CLI::App& sub) {
  auto untouched = [&](const std::string& name) { return sub.count(name) == 0; };
  if (flags.smoke) {
    if (untouched("--folds")) flags.cfg.folds = 2;
    if (untouched("--synthetic-count")) flags.cfg.synthetic_count = 0;
    if (untouched("--phase-epochs")) flags.cfg.phase_epochs = 2;
    if (untouched("--autoencoder-epochs")) flags.cfg.autoencoder_epochs = 2;
    if (untouched("--learner-epochs")) flags.cfg.learner_epochs = 2;
  }
  if (flags.epochs_override >= 0) {
    if (untouched("--phase-epochs")) flags.cfg.phase_epochs = flags.epochs_override;
    if (untouched("--autoencoder-epochs")) flags.cfg.autoencoder_epochs = flags.epochs_override;
    if (untouched("--learner-epochs")) flags.cfg.learner_epochs = flags.epochs_override;
  }
  flags.cfg.augment_mode =
      flags.augment_global ? stack::AugmentMode::kGlobal : stack::AugmentMode::kInFold;
}

void write_augmented_csv(const std::vector<dataset::RawRecord>& records,
                         const std::vector<dataset::Provenance>& provenance,
                         const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  const auto& cols = dataset::schema_columns();
  for (std::size_t c = 0; c < cols.size(); ++c) out << cols[c] << ',';
  out << "provenance\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    for (double v : r.features()) out << format_double(v) << ',';
    out << r.outcome << ','
        << (provenance[i] == dataset::Provenance::kSynthetic ? "synthetic" : "original") << "\n";
  }
}

int cmd_train(TrainFlags& flags) {
  auto& cfg = flags.cfg;
  if (cfg.data_path.empty()) {
    throw InputError("train: --data is required (directly or via --config)");
  }
  if (!std::filesystem::exists(cfg.data_path)) {
    throw InputError("train: data file not found: " + cfg.data_path);
  }

  const auto started = std::chrono::steady_clock::now();
  stack::StackArtifact artifact = stack::train_pipeline(cfg);

  std::filesystem::create_directories(cfg.models_dir);
  const std::string artifact_path = flags.artifact_path.empty()
                                        ? cfg.models_dir + "/" + kDefaultArtifactName
                                        : flags.artifact_path;
  stack::save_artifact(artifact, artifact_path);
  stack::write_reports(artifact, cfg.output_dir);

  if (!flags.export_augmented.empty()) {
    const auto imputed = dataset::impute_zeros(dataset::load_csv(cfg.data_path));
    if (cfg.synthetic_count > 0) {
      const std::uint64_t aug_stream =
          cfg.augment_mode == stack::AugmentMode::kGlobal
              ? derive_seed(cfg.seed, streams::kAugment)
              : derive_seed(cfg.seed, streams::kRefit + streams::kAugment);
      const auto aug = augment::augment_minority(imputed, cfg.synthetic_count, aug_stream,
                                                 cfg.gmm_components);
      write_augmented_csv(aug.records, aug.provenance, flags.export_augmented);
    } else {
      write_augmented_csv(
          imputed,
          std::vector<dataset::Provenance>(imputed.size(), dataset::Provenance::kOriginal),
          flags.export_augmented);
    }
  }

  // headline numbers: mean F1/AUC per model over folds
  std::map<std::string, std::pair<double, double>> sums;
  std::map<std::string, int> counts;
  for (const auto& record : artifact.per_fold) {
    sums[record.model].first += record.f1;
    sums[record.model].second += record.auc;
    counts[record.model] += 1;
  }
  std::cout << "model        mean_f1  mean_auc  (over " << cfg.folds << " folds)\n";
  auto print_row = [&](const std::string& name) {
    std::cout << name << std::string(13 - name.size(), ' ')
              << format_double(sums[name].first / counts[name]) << "  "
              << format_double(sums[name].second / counts[name]) << "\n";
  };
  for (const auto& name : stack::learner_names()) print_row(name);
  print_row("meta");
  std::cout << "oof meta f1=" << format_double(calib::f1(artifact.oof_labels, artifact.oof_meta))
            << " auc=" << format_double(calib::auc(artifact.oof_labels, artifact.oof_meta))
            << " brier=" << format_double(calib::brier(artifact.oof_labels, artifact.oof_meta))
            << "\n";
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  std::cout << "artifact: " << artifact_path << "\nreports:  " << cfg.output_dir << "/\n"
            << "training time: " << format_double(seconds) << " s\n";
  return 0;
}

int cmd_predict(const std::string& artifact_path, const std::string& input_path,
                const std::string& output_path) {
  stack::StackArtifact artifact = stack::load_artifact(artifact_path);

  // does the input carry an outcome column? (echoed through when present)
  bool has_outcome = false;
  {
    std::ifstream probe(input_path);
    if (!probe) throw InputError("cannot open input: " + input_path);
    std::string header;
    std::getline(probe, header);
    std::string lower;
    for (char c : header) lower.push_back(static_cast<char>(std::tolower(c)));
    has_outcome = lower.find("outcome") != std::string::npos;
  }

  const auto rows = dataset::load_csv(input_path, /*require_outcome=*/false);
  const auto imputed = dataset::impute_zeros(rows);
  const auto result = stack::predict(artifact, imputed);

  std::ofstream out(output_path, std::ios::binary);
  if (!out) throw InputError("cannot write output: " + output_path);
  const auto& cols = dataset::schema_columns();
  for (int c = 0; c < 8; ++c) out << cols[static_cast<std::size_t>(c)] << ',';
  if (has_outcome) out << "Outcome,";
  out << "rf_prob,et_prob,transformer_prob,cnn_seq_prob,ffnn_prob,meta_prob\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (double v : rows[i].features()) out << format_double(v) << ',';  // raw, as given
    if (has_outcome) out << rows[i].outcome << ',';
    for (int l = 0; l < stack::kLearnerCount; ++l) {
      out << format_double(result.rows[i].base[static_cast<std::size_t>(l)]) << ',';
    }
    out << format_double(result.rows[i].meta) << "\n";
  }
  std::cout << "scored " << rows.size() << " rows -> " << output_path << "\n";
  std::cout << "throughput: " << format_double(result.rows_per_second) << " rows/s\n";
  return 0;
}

int cmd_evaluate(const std::string& artifact_path, const std::string& data_path) {
  stack::StackArtifact artifact = stack::load_artifact(artifact_path);
  const auto rows = dataset::load_csv(data_path);
  if (rows.empty()) throw InputError("evaluate: no data rows in " + data_path);
  const auto imputed = dataset::impute_zeros(rows);
  const auto labels = dataset::labels_of(rows);
  const auto result = stack::predict(artifact, imputed);

  std::cout << "model        f1       auc      brier\n";
  auto print_metrics = [&](const std::string& name, const std::vector<double>& probs) {
    std::cout << name << std::string(13 - name.size(), ' ')
              << format_double(calib::f1(labels, probs)) << "  "
              << format_double(calib::auc(labels, probs)) << "  "
              << format_double(calib::brier(labels, probs)) << "\n";
  };
  for (int l = 0; l < stack::kLearnerCount; ++l) {
    std::vector<double> probs;
    probs.reserve(rows.size());
    for (const auto& row : result.rows) probs.push_back(row.base[static_cast<std::size_t>(l)]);
    print_metrics(stack::learner_names()[static_cast<std::size_t>(l)], probs);
  }
  std::vector<double> meta_probs;
  meta_probs.reserve(rows.size());
  for (const auto& row : result.rows) meta_probs.push_back(row.meta);
  print_metrics("meta", meta_probs);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qisicgm: quantum-inspired stacked concept-graph classifier for PIMA-schema data"};
  app.require_subcommand(1);

  TrainFlags train_flags;
  auto* train = app.add_subcommand("train", "train the full pipeline and write artifact + reports");
  add_train_options(*train, train_flags);

  std::string artifact_path, input_path, output_path, data_path, out_dir = "outputs";
  auto* predict = app.add_subcommand("predict", "score a CSV with a trained artifact");
  predict->add_option("--artifact", artifact_path, "artifact path")->required();
  predict->add_option("--input", input_path, "input CSV (outcome column optional)")->required();
  predict->add_option("--output", output_path, "output CSV path")->required();

  auto* evaluate = app.add_subcommand("evaluate", "metrics of a trained artifact on labeled data");
  evaluate->add_option("--artifact", artifact_path, "artifact path")->required();
  evaluate->add_option("--data", data_path, "labeled CSV")->required();

  auto* report = app.add_subcommand("report", "re-emit every report file from an artifact");
  report->add_option("--artifact", artifact_path, "artifact path")->required();
  report->add_option("--out-dir", out_dir, "output directory");

  auto* export_graph = app.add_subcommand("export-graph", "write per-fold concept graph DOT files");
  export_graph->add_option("--artifact", artifact_path, "artifact path")->required();
  export_graph->add_option("--out-dir", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (train->parsed()) {
      apply_presets(train_flags, *train);
      return cmd_train(train_flags);
    }
    if (predict->parsed()) return cmd_predict(artifact_path, input_path, output_path);
    if (evaluate->parsed()) return cmd_evaluate(artifact_path, data_path);
    if (report->parsed()) {
      const auto artifact = stack::load_artifact(artifact_path);
      std::filesystem::create_directories(out_dir);
      stack::write_reports(artifact, out_dir);
      std::cout << "reports written to " << out_dir << "/\n";
      return 0;
    }
    if (export_graph->parsed()) {
      const auto artifact = stack::load_artifact(artifact_path);
      std::filesystem::create_directories(out_dir);
      stack::write_dot_files(artifact, out_dir);
      std::cout << "dot files written to " << out_dir << "/\n";
      return 0;
    }
  } catch (const qisicgm::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
