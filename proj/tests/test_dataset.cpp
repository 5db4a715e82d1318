#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "qisicgm/dataset.hpp"

using namespace qisicgm;
using dataset::RawRecord;

namespace {

struct TempCsv {
  std::string path;
  explicit TempCsv(const std::string& content) {
    path = "test_dataset_tmp_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)) + ".csv";
    std::ofstream out(path);
    out << content;
  }
  ~TempCsv() { std::remove(path.c_str()); }
};

const char* kHeader =
    "Pregnancies,Glucose,BloodPressure,SkinThickness,Insulin,BMI,DiabetesPedigreeFunction,Age,"
    "Outcome\n";

}  // namespace

TEST_CASE("load_csv: minimal parse") {
  TempCsv csv(std::string(kHeader) + "6,148,72,35,0,33.6,0.627,50,1\n");
  const auto records = dataset::load_csv(csv.path);
  REQUIRE(records.size() == 1);
  CHECK(records[0].glucose == doctest::Approx(148.0));
  CHECK(records[0].outcome == 1);
}

TEST_CASE("load_csv: blank lines skipped, case-insensitive header, reordered columns") {
  TempCsv csv(
      "glucose,pregnancies,bloodpressure,skinthickness,insulin,bmi,diabetespedigreefunction,age,"
      "OUTCOME\n148,6,72,35,0,33.6,0.627,50,1\n\n85,1,66,29,0,26.6,0.351,31,0\n");
  const auto records = dataset::load_csv(csv.path);
  REQUIRE(records.size() == 2);
  CHECK(records[0].pregnancies == doctest::Approx(6.0));
  CHECK(records[1].glucose == doctest::Approx(85.0));
  CHECK(records[1].outcome == 0);
}

TEST_CASE("load_csv: missing column names the column") {
  TempCsv csv(
      "Pregnancies,Glucose,BloodPressure,SkinThickness,Insulin,BMI,DiabetesPedigreeFunction,Age\n"
      "6,148,72,35,0,33.6,0.627,50\n");
  CHECK_THROWS_WITH_AS(static_cast<void>(dataset::load_csv(csv.path)),
                       doctest::Contains("Outcome"), InputError);
  // but the outcome column is optional for scoring inputs
  const auto records = dataset::load_csv(csv.path, /*require_outcome=*/false);
  REQUIRE(records.size() == 1);
  CHECK(records[0].outcome == 0);
}

TEST_CASE("load_csv: non-numeric cell reports row and column") {
  TempCsv csv(std::string(kHeader) + "6,abc,72,35,0,33.6,0.627,50,1\n");
  CHECK_THROWS_WITH_AS(static_cast<void>(dataset::load_csv(csv.path)),
                       doctest::Contains("Glucose"), InputError);
}

TEST_CASE("load_csv: missing file and bad outcome") {
  CHECK_THROWS_AS(static_cast<void>(dataset::load_csv("does_not_exist.csv")), InputError);
  TempCsv csv(std::string(kHeader) + "6,148,72,35,0,33.6,0.627,50,2\n");
  CHECK_THROWS_AS(static_cast<void>(dataset::load_csv(csv.path)), InputError);
}

TEST_CASE("impute_zeros: only the five designated fields, idempotent") {
  RawRecord r;
  r.pregnancies = 0.0;
  r.glucose = 0.0;
  r.blood_pressure = 0.0;
  r.skin_thickness = 0.0;
  r.insulin = 0.0;
  r.bmi = 0.0;
  r.pedigree = 0.3;
  r.age = 21.0;
  const RawRecord imputed = dataset::impute_zeros(r);
  CHECK(imputed.glucose == doctest::Approx(120.9));
  CHECK(imputed.blood_pressure == doctest::Approx(69.1));
  CHECK(imputed.skin_thickness == doctest::Approx(20.5));
  CHECK(imputed.insulin == doctest::Approx(79.8));
  CHECK(imputed.bmi == doctest::Approx(32.0));
  CHECK(imputed.pregnancies == doctest::Approx(0.0));  // untouched

  const RawRecord twice = dataset::impute_zeros(imputed);
  CHECK(twice.glucose == imputed.glucose);
  CHECK(twice.insulin == imputed.insulin);

  RawRecord nonzero = r;
  nonzero.glucose = 100.0;
  CHECK(dataset::impute_zeros(nonzero).glucose == doctest::Approx(100.0));
}

TEST_CASE("engineer_features: fixed order and exact products") {
  RawRecord r;
  r.glucose = 120.9;
  r.blood_pressure = 69.1;
  r.bmi = 32.0;
  r.pregnancies = 2;
  r.skin_thickness = 20.5;
  r.insulin = 79.8;
  r.pedigree = 0.5;
  r.age = 33;
  const Mat out = dataset::engineer_features({r});
  REQUIRE(out.cols() == 11);
  CHECK(out(0, 8) == doctest::Approx(3868.8));
  CHECK(out(0, 9) == doctest::Approx(120.9 / 69.1).epsilon(1e-12));
  CHECK(out(0, 10) == doctest::Approx(1024.0));
  CHECK(out(0, 8) == out(0, 1) * out(0, 5));  // exactly
}

TEST_CASE("engineer_features: zero pressure is a pipeline-order bug") {
  RawRecord r;
  r.glucose = 100.0;
  r.blood_pressure = 0.0;
  r.bmi = 30.0;
  CHECK_THROWS(static_cast<void>(dataset::engineer_features({r})));
}

TEST_CASE("robust scaler: quantile conventions") {
  {
    Mat col(5, 1);
    col << 1, 2, 3, 4, 5;
    const auto stats = dataset::fit_robust_scaler(col);
    CHECK(stats.median[0] == doctest::Approx(3.0));
    CHECK(stats.iqr[0] == doctest::Approx(2.0));
  }
  {
    Mat col(3, 1);
    col << 5, 5, 5;
    const auto stats = dataset::fit_robust_scaler(col);
    CHECK(stats.median[0] == doctest::Approx(5.0));
    CHECK(stats.iqr[0] == doctest::Approx(1.0));  // degenerate guard
  }
  {
    Mat col(2, 1);
    col << 0, 10;
    const auto stats = dataset::fit_robust_scaler(col);
    CHECK(stats.median[0] == doctest::Approx(5.0));
    CHECK(stats.iqr[0] == doctest::Approx(5.0));
  }
  Mat one_row(1, 1);
  one_row << 1.0;
  CHECK_THROWS(static_cast<void>(dataset::fit_robust_scaler(one_row)));
}

TEST_CASE("apply_scaler: centering, unit scale, exact round trip") {
  Mat rows(4, 2);
  rows << 1, 10, 2, 20, 3, 30, 4, 40;
  const auto stats = dataset::fit_robust_scaler(rows);
  const Mat scaled = dataset::apply_scaler(rows, stats);

  Mat probe(2, 2);
  probe << stats.median[0], stats.median[1], stats.median[0] + stats.iqr[0],
      stats.median[1] + stats.iqr[1];
  const Mat probe_scaled = dataset::apply_scaler(probe, stats);
  CHECK(probe_scaled(0, 0) == doctest::Approx(0.0));
  CHECK(probe_scaled(0, 1) == doctest::Approx(0.0));
  CHECK(probe_scaled(1, 0) == doctest::Approx(1.0));
  CHECK(probe_scaled(1, 1) == doctest::Approx(1.0));

  const Mat round_trip = dataset::invert_scaler(scaled, stats);
  CHECK((round_trip - rows).cwiseAbs().maxCoeff() < 1e-12);

  Mat bad(1, 3);
  CHECK_THROWS(static_cast<void>(dataset::apply_scaler(bad, stats)));
}

TEST_CASE("scaled training matrix has median 0 and IQR 1 per column") {
  auto rng = make_rng(5);
  std::uniform_real_distribution<double> dist(-3.0, 9.0);
  Mat rows(101, 3);
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < rows.cols(); ++j) rows(i, j) = dist(rng);
  }
  const auto stats = dataset::fit_robust_scaler(rows);
  const Mat scaled = dataset::apply_scaler(rows, stats);
  const auto rescaled = dataset::fit_robust_scaler(scaled);
  for (int j = 0; j < 3; ++j) {
    CHECK(std::abs(rescaled.median[static_cast<std::size_t>(j)]) < 1e-9);
    CHECK(std::abs(rescaled.iqr[static_cast<std::size_t>(j)] - 1.0) < 1e-9);
  }
}
