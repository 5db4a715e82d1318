#pragma once

#include <array>
#include <string>
#include <vector>

#include "qisicgm/common.hpp"

namespace qisicgm::dataset {

constexpr int kRawFeatureCount = 8;
constexpr int kEngineeredFeatureCount = 11;

/// One PIMA-schema row: eight clinical features plus the binary outcome.
struct RawRecord {
  double pregnancies = 0.0;
  double glucose = 0.0;
  double blood_pressure = 0.0;
  double skin_thickness = 0.0;
  double insulin = 0.0;
  double bmi = 0.0;
  double pedigree = 0.0;
  double age = 0.0;
  int outcome = 0;

  std::array<double, kRawFeatureCount> features() const {
    return {pregnancies, glucose,  blood_pressure, skin_thickness,
            insulin,     bmi,      pedigree,       age};
  }
};

enum class Provenance { kOriginal, kSynthetic };

struct ScalerStats {
  std::vector<double> median;
  std::vector<double> iqr;
};

struct FeatureMatrix {
  Mat values;  // n x 11, scaled
  std::vector<int> labels;
  std::vector<std::string> feature_names;
  std::vector<Provenance> provenance;
  ScalerStats scaler_stats;
};

/// Canonical column names, in the fixed feature order used everywhere.
const std::vector<std::string>& schema_columns();          // 9 names, outcome last
const std::vector<std::string>& feature_names();           // the 11 engineered names

/// Parses a comma-separated PIMA CSV. Columns are matched to the schema by
/// name, case-insensitively, in any order; blank lines are skipped.
/// `require_outcome=false` permits CSVs without the outcome column (scoring
/// inputs); such records get outcome 0.
std::vector<RawRecord> load_csv(const std::string& path, bool require_outcome = true);

/// Replaces zeros in glucose, blood pressure, skin thickness, insulin and BMI
/// with their fixed reference medians. Pregnancies may legitimately be zero.
RawRecord impute_zeros(const RawRecord& record);
std::vector<RawRecord> impute_zeros(const std::vector<RawRecord>& records);

/// Maps imputed records to the 11-column feature matrix: the eight raw
/// features followed by glucose*bmi, glucose/blood_pressure, bmi^2.
Mat engineer_features(const std::vector<RawRecord>& records);

/// Per-column median and interquartile range with linearly interpolated
/// quantiles. A zero IQR is replaced by 1.0 so constant columns stay finite.
ScalerStats fit_robust_scaler(const Mat& rows);

/// Engineers features from already-imputed records, fits the robust scaler,
/// scales, and bundles labels, names and provenance. Guards that no value is
/// NaN or infinite after imputation and scaling.
FeatureMatrix build_feature_matrix(const std::vector<RawRecord>& records,
                                   std::vector<Provenance> provenance);

Mat apply_scaler(const Mat& rows, const ScalerStats& stats);
Mat invert_scaler(const Mat& scaled, const ScalerStats& stats);

std::vector<int> labels_of(const std::vector<RawRecord>& records);

}  // namespace qisicgm::dataset
