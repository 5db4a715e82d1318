#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "fixture.hpp"
#include "oracles.hpp"
#include "qisicgm/stack.hpp"

using namespace qisicgm;

namespace {

/// Small-but-complete configuration: every pipeline stage runs, nothing runs
/// long.
stack::RunConfig tiny_config() {
  stack::RunConfig cfg;
  cfg.seed = 77;
  cfg.folds = 2;
  cfg.synthetic_count = 40;
  cfg.gmm_components = 3;
  cfg.phase_epochs = 2;
  cfg.autoencoder_epochs = 2;
  cfg.learner_epochs = 2;
  cfg.refine_iterations = 10;
  cfg.refine_rebuild_every = 5;
  cfg.trees = 10;
  cfg.transformer.layers = 2;
  cfg.transformer.heads = 4;
  cfg.threads = 1;
  return cfg;
}

}  // namespace

TEST_CASE("build_meta: width, layout and hand values") {
  Mat probs(3, 5);
  probs << 0.5, 0.5, 0.5, 0.5, 0.5,                    // symmetric
      1e-9, 0.5, 0.5, 0.5, 0.5,                        // clipped logit
      0.2, 0.4, 0.6, 0.8, 1.0;                         // hand stats
  const Mat meta = stack::build_meta(probs);
  REQUIRE(meta.cols() == 17);

  // row 0: logits 0, votes 1 (tie rule), mean 0.5, std 0
  for (int l = 0; l < 5; ++l) {
    CHECK(meta(0, 5 + l) == doctest::Approx(0.0));
    CHECK(meta(0, 10 + l) == doctest::Approx(1.0));
  }
  CHECK(meta(0, 15) == doctest::Approx(0.5));
  CHECK(meta(0, 16) == doctest::Approx(0.0));

  // row 1: the tiny probability is clipped to 1e-6 before the logit
  CHECK(meta(1, 5) == doctest::Approx(std::log(1e-6 / (1.0 - 1e-6))));

  // row 2: mean 0.6, population std sqrt(0.08)
  CHECK(meta(2, 15) == doctest::Approx(0.6));
  CHECK(meta(2, 16) == doctest::Approx(std::sqrt(0.08)));
  CHECK(meta(2, 10) == doctest::Approx(0.0));  // vote of 0.2
  CHECK(meta(2, 14) == doctest::Approx(1.0));  // vote of 1.0
}

TEST_CASE("meta learner: separable data, convergence contract, convexity") {
  Mat meta(20, 1);
  std::vector<int> y(20);
  for (int i = 0; i < 20; ++i) {
    meta(i, 0) = i < 10 ? -1.0 - 0.05 * i : 1.0 + 0.05 * i;
    y[static_cast<std::size_t>(i)] = i < 10 ? 0 : 1;
  }
  const auto model = stack::fit_meta_learner(meta, y, 1.0, 10000, 1e-6);
  CHECK((model.converged || model.iterations == 10000));
  if (model.converged) CHECK(model.grad_norm < 1e-6);

  const auto probs = stack::meta_predict(model, meta);
  for (int i = 0; i < 20; ++i) {
    CHECK((probs[static_cast<std::size_t>(i)] >= 0.5 ? 1 : 0) == y[static_cast<std::size_t>(i)]);
  }

  // final objective no worse than the zero-weight start (convex descent)
  stack::MetaLearner zero;
  zero.w = Vec::Zero(1);
  zero.b = 0.0;
  CHECK(stack::meta_objective(model, meta, y, 1.0) <=
        stack::meta_objective(zero, meta, y, 1.0) + 1e-12);

  CHECK_THROWS(static_cast<void>(stack::fit_meta_learner(meta, std::vector<int>(20, 1))));
}

TEST_CASE("meta learner: matches grid-refined brute-force optimum") {
  auto rng = make_rng(211);
  Mat meta = oracles::random_matrix(20, 2, rng, -2.0, 2.0);
  const auto y = oracles::random_labels(20, rng);
  const double l2 = 1.0;
  const auto model = stack::fit_meta_learner(meta, y, l2, 10000, 1e-10);

  auto objective = [&](double w0, double w1, double b) {
    stack::MetaLearner m;
    m.w = Vec(2);
    m.w << w0, w1;
    m.b = b;
    return stack::meta_objective(m, meta, y, l2);
  };

  // coarse grid then two refinement passes around the best point
  double best = std::numeric_limits<double>::infinity();
  double bw0 = 0, bw1 = 0, bb = 0;
  for (double step : {0.1, 0.01, 0.001}) {
    const double r = step * 10.0;
    const double c0 = bw0, c1 = bw1, cb = bb;
    for (double w0 = c0 - r; w0 <= c0 + r + 1e-12; w0 += step) {
      for (double w1 = c1 - r; w1 <= c1 + r + 1e-12; w1 += step) {
        for (double b = cb - r; b <= cb + r + 1e-12; b += step) {
          const double val = objective(w0, w1, b);
          if (val < best) {
            best = val;
            bw0 = w0;
            bw1 = w1;
            bb = b;
          }
        }
      }
    }
  }
  CHECK(stack::meta_objective(model, meta, y, l2) <= best + 1e-4);
  CHECK(std::abs(stack::meta_objective(model, meta, y, l2) - best) < 1e-4);
}

TEST_CASE("stratified folds: partition, balance, determinism") {
  auto rng = make_rng(223);
  const auto labels = oracles::random_labels(300, rng, 0.3);
  const auto folds = stack::stratified_folds(labels, 5, 99);
  const auto again = stack::stratified_folds(labels, 5, 99);
  CHECK(folds == again);

  double global_rate = 0.0;
  for (int v : labels) global_rate += v;
  global_rate /= 300.0;
  for (int f = 0; f < 5; ++f) {
    int pos = 0, total = 0;
    for (int i = 0; i < 300; ++i) {
      if (folds[static_cast<std::size_t>(i)] == f) {
        ++total;
        pos += labels[static_cast<std::size_t>(i)];
      }
    }
    CHECK(total > 0);
    CHECK(std::abs(static_cast<double>(pos) / total - global_rate) < 0.02);
  }
}

TEST_CASE("run_cv: structure, determinism, original-only validation in default mode") {
  const auto records = dataset::impute_zeros(fixture::pima_like(160, 60, 5));
  auto cfg = tiny_config();

  const auto cv = stack::run_cv(records, cfg);
  CHECK(cv.labels.size() == 160);  // in-fold mode: work set is the originals
  for (int p : cv.provenance) CHECK(p == 0);
  CHECK(cv.per_fold.size() == static_cast<std::size_t>(cfg.folds * 6));
  for (int f : cv.fold_of) {
    CHECK(f >= 0);
    CHECK(f < cfg.folds);
  }
  CHECK(cv.oof_meta.size() == 160);
  CHECK(static_cast<int>(cv.meta.w.size()) == stack::kMetaWidth);

  const auto cv2 = stack::run_cv(records, cfg);
  CHECK(cv.oof_base == cv2.oof_base);  // bit-identical
  CHECK(cv.oof_meta == cv2.oof_meta);

  // global mode grows the working set by the synthetic count
  cfg.augment_mode = stack::AugmentMode::kGlobal;
  const auto cv3 = stack::run_cv(records, cfg);
  CHECK(cv3.labels.size() == 200);
  int synthetic = 0;
  for (int p : cv3.provenance) synthetic += p;
  CHECK(synthetic == 40);
}

TEST_CASE("train_fold_model isolation: the model never sees validation rows") {
  // The training API receives only the training records, so any change to
  // rows outside that set cannot alter the fitted state. Exercise the claim:
  // identical training records, different "world" around them.
  const auto base = dataset::impute_zeros(fixture::pima_like(120, 45, 11));
  auto cfg = tiny_config();
  cfg.synthetic_count = 0;

  std::vector<dataset::RawRecord> train(base.begin(), base.begin() + 90);
  const std::vector<dataset::Provenance> prov(train.size(), dataset::Provenance::kOriginal);
  auto m1 = stack::train_fold_model(train, prov, cfg, 1000, 1);
  auto m2 = stack::train_fold_model(train, prov, cfg, 1000, 1);

  std::vector<dataset::RawRecord> probe(base.begin() + 90, base.end());
  const Mat p1 = stack::predict_base(m1, probe, cfg);
  const Mat p2 = stack::predict_base(m2, probe, cfg);
  CHECK(p1 == p2);
}

TEST_CASE("artifact: save/load round trip is bit-exact for predictions") {
  const std::string data_path = "stack_fixture_tmp.csv";
  fixture::write_csv(fixture::pima_like(140, 50, 21), data_path);

  auto cfg = tiny_config();
  cfg.data_path = data_path;
  auto artifact = stack::train_pipeline(cfg);

  const std::string artifact_path = "stack_artifact_tmp.json";
  stack::save_artifact(artifact, artifact_path);
  auto reloaded = stack::load_artifact(artifact_path);

  CHECK(reloaded.meta.w == artifact.meta.w);
  CHECK(reloaded.oof_meta == artifact.oof_meta);
  CHECK(reloaded.model.phase.alpha == artifact.model.phase.alpha);

  const auto probe = dataset::impute_zeros(fixture::pima_like(100, 40, 33));
  const auto before = stack::predict(artifact, probe);
  const auto after = stack::predict(reloaded, probe);
  REQUIRE(before.rows.size() == after.rows.size());
  for (std::size_t i = 0; i < before.rows.size(); ++i) {
    CHECK(before.rows[i].meta == after.rows[i].meta);  // max abs diff 0
    for (int l = 0; l < stack::kLearnerCount; ++l) {
      CHECK(before.rows[i].base[static_cast<std::size_t>(l)] ==
            after.rows[i].base[static_cast<std::size_t>(l)]);
    }
  }

  // training rows re-scored through the inference path match the stored values
  const auto originals = dataset::impute_zeros(dataset::load_csv(data_path));
  const auto rescored = stack::predict(reloaded, originals);
  REQUIRE(rescored.rows.size() == artifact.train_meta_probs.size());
  for (std::size_t i = 0; i < rescored.rows.size(); ++i) {
    CHECK(rescored.rows[i].meta == artifact.train_meta_probs[i]);
    CHECK(rescored.rows[i].meta >= 0.0);
    CHECK(rescored.rows[i].meta <= 1.0);
  }

  // version gate
  CHECK_THROWS_AS(static_cast<void>(stack::load_artifact(data_path)), InputError);

  std::remove(data_path.c_str());
  std::remove(artifact_path.c_str());
}

TEST_CASE("reports: expected files, deterministic bytes") {
  const std::string data_path = "stack_report_fixture_tmp.csv";
  fixture::write_csv(fixture::pima_like(130, 48, 43), data_path);
  auto cfg = tiny_config();
  cfg.data_path = data_path;
  const auto artifact = stack::train_pipeline(cfg);

  namespace fs = std::filesystem;
  const std::string dir = "stack_reports_tmp";
  fs::remove_all(dir);
  stack::write_reports(artifact, dir);

  const std::vector<std::string> expected = {
      "perf_table.csv",         "oof_predictions.csv",      "calibration_bins.csv",
      "probability_histogram.csv", "graph_stats.csv",       "phase_training_trace.csv",
      "config_snapshot.toml",   "concept_graph_fold0.dot",  "concept_graph_fold1.dot"};
  for (const auto& name : expected) {
    CHECK(fs::exists(dir + "/" + name));
  }

  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const auto first = slurp(dir + "/perf_table.csv");
  // 2 folds x 6 models + header
  CHECK(std::count(first.begin(), first.end(), '\n') == 13);

  stack::write_reports(artifact, dir);  // re-run must be byte-identical
  CHECK(slurp(dir + "/perf_table.csv") == first);

  fs::remove_all(dir);
  std::remove(data_path.c_str());
}
