#pragma once

#include <vector>

#include "qisicgm/common.hpp"

namespace qisicgm::calib {

/// Monotone piecewise-linear map fit by pool-adjacent-violators. Queries are
/// clamped to [breakpoints.front(), breakpoints.back()].
struct IsotonicCalibrator {
  std::vector<double> breakpoints;  // strictly ascending raw scores
  std::vector<double> values;       // non-decreasing calibrated values

  double operator()(double score) const;
};

/// Least-squares monotone fit of labels against scores. Tied scores are merged
/// into a single weighted point before pooling.
IsotonicCalibrator fit_isotonic(const std::vector<double>& scores, const std::vector<int>& labels);

/// 2TP / (2TP + FP + FN) with prediction = (p >= threshold); 0 when the
/// denominator vanishes.
double f1(const std::vector<int>& y_true, const std::vector<double>& y_prob,
          double threshold = 0.5);

/// Rank-based Mann-Whitney AUC with midrank tie handling.
double auc(const std::vector<int>& y_true, const std::vector<double>& y_prob);

double brier(const std::vector<int>& y_true, const std::vector<double>& y_prob);

struct CalibrationBin {
  double low = 0.0;
  double high = 0.0;
  double mean_predicted = 0.0;  // NaN for empty bins
  double observed_frequency = 0.0;  // NaN for empty bins
  int count = 0;
};

/// Equal-width bins on [0,1]; 1.0 lands in the last bin. Empty bins are
/// emitted with count 0 and NaN statistics.
std::vector<CalibrationBin> calibration_bins(const std::vector<int>& y_true,
                                             const std::vector<double>& y_prob, int bins = 10);

}  // namespace qisicgm::calib
