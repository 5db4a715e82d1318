#include "qisicgm/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace qisicgm::dataset {

namespace {

// Reference medians for zero-imputation, in schema order of the five
// imputable fields.
constexpr double kGlucoseMedian = 120.9;
constexpr double kBloodPressureMedian = 69.1;
constexpr double kSkinThicknessMedian = 20.5;
constexpr double kInsulinMedian = 79.8;
constexpr double kBmiMedian = 32.0;

std::string to_lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

double parse_cell(const std::string& cell, std::size_t row, const std::string& column) {
  const std::string t = trim(cell);
  double value = 0.0;
  const char* begin = t.data();
  const char* end = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || t.empty()) {
    throw InputError("parse error at row " + std::to_string(row) + ", column \"" + column +
                     "\": \"" + cell + "\" is not numeric");
  }
  if (!std::isfinite(value)) {
    throw InputError("non-finite value at row " + std::to_string(row) + ", column \"" +
                     column + "\"");
  }
  return value;
}

double quantile_linear(std::vector<double> sorted, double p) {
  const std::size_t n = sorted.size();
  const double h = p * static_cast<double>(n - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, n - 1);
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

const std::vector<std::string>& schema_columns() {
  static const std::vector<std::string> names = {
      "Pregnancies", "Glucose",  "BloodPressure",            "SkinThickness", "Insulin",
      "BMI",         "DiabetesPedigreeFunction", "Age",      "Outcome"};
  return names;
}

const std::vector<std::string>& feature_names() {
  static const std::vector<std::string> names = {
      "Pregnancies", "Glucose", "BloodPressure", "SkinThickness",
      "Insulin",     "BMI",     "DiabetesPedigreeFunction", "Age",
      "GlucoseTimesBMI", "GlucoseOverPressure", "BMISquared"};
  return names;
}

std::vector<RawRecord> load_csv(const std::string& path, bool require_outcome) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open data file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw InputError("empty data file: " + path);

  const auto header = split_csv_line(line);
  const auto& schema = schema_columns();
  // column index in file for each schema column, -1 when absent
  std::vector<int> where(schema.size(), -1);
  for (std::size_t h = 0; h < header.size(); ++h) {
    const std::string name = to_lower(header[h]);
    bool known = false;
    for (std::size_t s = 0; s < schema.size(); ++s) {
      if (name == to_lower(schema[s])) {
        if (where[s] >= 0) throw InputError("duplicate column \"" + header[h] + "\" in " + path);
        where[s] = static_cast<int>(h);
        known = true;
        break;
      }
    }
    if (!known) throw InputError("unknown column \"" + header[h] + "\" in " + path);
  }
  for (std::size_t s = 0; s < schema.size(); ++s) {
    if (where[s] < 0) {
      if (s + 1 == schema.size() && !require_outcome) continue;
      throw InputError("missing column \"" + schema[s] + "\" in " + path);
    }
  }

  std::vector<RawRecord> records;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw InputError("row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                       " cells, expected " + std::to_string(header.size()));
    }
    auto cell = [&](std::size_t s) -> double {
      return parse_cell(cells[static_cast<std::size_t>(where[s])], row, schema[s]);
    };
    RawRecord r;
    r.pregnancies = cell(0);
    r.glucose = cell(1);
    r.blood_pressure = cell(2);
    r.skin_thickness = cell(3);
    r.insulin = cell(4);
    r.bmi = cell(5);
    r.pedigree = cell(6);
    r.age = cell(7);
    if (where[8] >= 0) {
      const double y = cell(8);
      if (y != 0.0 && y != 1.0) {
        throw InputError("outcome at row " + std::to_string(row) + " must be 0 or 1, got " +
                         cells[static_cast<std::size_t>(where[8])]);
      }
      r.outcome = static_cast<int>(y);
    }
    records.push_back(r);
  }
  return records;
}

RawRecord impute_zeros(const RawRecord& record) {
  RawRecord r = record;
  if (r.glucose == 0.0) r.glucose = kGlucoseMedian;
  if (r.blood_pressure == 0.0) r.blood_pressure = kBloodPressureMedian;
  if (r.skin_thickness == 0.0) r.skin_thickness = kSkinThicknessMedian;
  if (r.insulin == 0.0) r.insulin = kInsulinMedian;
  if (r.bmi == 0.0) r.bmi = kBmiMedian;
  return r;
}

std::vector<RawRecord> impute_zeros(const std::vector<RawRecord>& records) {
  std::vector<RawRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(impute_zeros(r));
  return out;
}

Mat engineer_features(const std::vector<RawRecord>& records) {
  Mat out(static_cast<Eigen::Index>(records.size()), kEngineeredFeatureCount);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const RawRecord& r = records[static_cast<std::size_t>(i)];
    if (r.blood_pressure == 0.0) {
      throw std::runtime_error("engineer_features: zero blood pressure at row " +
                               std::to_string(i) + "; imputation must run first");
    }
    const auto f = r.features();
    for (int j = 0; j < kRawFeatureCount; ++j) out(i, j) = f[static_cast<std::size_t>(j)];
    out(i, 8) = r.glucose * r.bmi;
    out(i, 9) = r.glucose / r.blood_pressure;
    out(i, 10) = r.bmi * r.bmi;
  }
  return out;
}

ScalerStats fit_robust_scaler(const Mat& rows) {
  if (rows.rows() < 2) {
    throw std::runtime_error("fit_robust_scaler: need at least 2 rows, got " +
                             std::to_string(rows.rows()));
  }
  ScalerStats stats;
  stats.median.resize(static_cast<std::size_t>(rows.cols()));
  stats.iqr.resize(static_cast<std::size_t>(rows.cols()));
  std::vector<double> column(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index j = 0; j < rows.cols(); ++j) {
    for (Eigen::Index i = 0; i < rows.rows(); ++i) column[static_cast<std::size_t>(i)] = rows(i, j);
    std::sort(column.begin(), column.end());
    const double med = quantile_linear(column, 0.5);
    const double q25 = quantile_linear(column, 0.25);
    const double q75 = quantile_linear(column, 0.75);
    double iqr = q75 - q25;
    if (iqr == 0.0) iqr = 1.0;
    stats.median[static_cast<std::size_t>(j)] = med;
    stats.iqr[static_cast<std::size_t>(j)] = iqr;
  }
  return stats;
}

FeatureMatrix build_feature_matrix(const std::vector<RawRecord>& records,
                                   std::vector<Provenance> provenance) {
  if (provenance.size() != records.size()) {
    throw std::runtime_error("build_feature_matrix: provenance/record count mismatch");
  }
  FeatureMatrix fm;
  const Mat engineered = engineer_features(records);
  fm.scaler_stats = fit_robust_scaler(engineered);
  fm.values = apply_scaler(engineered, fm.scaler_stats);
  fm.labels = labels_of(records);
  fm.feature_names = feature_names();
  fm.provenance = std::move(provenance);
  if (!fm.values.allFinite()) {
    throw std::runtime_error("build_feature_matrix: non-finite value after scaling");
  }
  return fm;
}

Mat apply_scaler(const Mat& rows, const ScalerStats& stats) {
  if (static_cast<std::size_t>(rows.cols()) != stats.median.size()) {
    throw std::runtime_error("apply_scaler: column count " + std::to_string(rows.cols()) +
                             " does not match scaler width " + std::to_string(stats.median.size()));
  }
  Mat out = rows;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const double med = stats.median[static_cast<std::size_t>(j)];
    const double iqr = stats.iqr[static_cast<std::size_t>(j)];
    out.col(j) = (out.col(j).array() - med) / iqr;
  }
  return out;
}

Mat invert_scaler(const Mat& scaled, const ScalerStats& stats) {
  if (static_cast<std::size_t>(scaled.cols()) != stats.median.size()) {
    throw std::runtime_error("invert_scaler: column count mismatch");
  }
  Mat out = scaled;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const double med = stats.median[static_cast<std::size_t>(j)];
    const double iqr = stats.iqr[static_cast<std::size_t>(j)];
    out.col(j) = out.col(j).array() * iqr + med;
  }
  return out;
}

std::vector<int> labels_of(const std::vector<RawRecord>& records) {
  std::vector<int> y;
  y.reserve(records.size());
  for (const auto& r : records) y.push_back(r.outcome);
  return y;
}

}  // namespace qisicgm::dataset
