#include "qisicgm/calibmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace qisicgm::calib {

double IsotonicCalibrator::operator()(double score) const {
  const auto& x = breakpoints;
  const auto& v = values;
  if (x.empty()) throw std::runtime_error("isotonic calibrator is empty");
  if (score <= x.front()) return v.front();
  if (score >= x.back()) return v.back();
  const auto it = std::upper_bound(x.begin(), x.end(), score);
  const std::size_t hi = static_cast<std::size_t>(it - x.begin());
  const std::size_t lo = hi - 1;
  const double t = (score - x[lo]) / (x[hi] - x[lo]);
  return v[lo] + t * (v[hi] - v[lo]);
}

IsotonicCalibrator fit_isotonic(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw std::runtime_error("fit_isotonic: scores and labels differ in length");
  }
  if (scores.size() < 2) {
    throw std::runtime_error("fit_isotonic: need at least 2 samples");
  }
  const int positives = std::accumulate(labels.begin(), labels.end(), 0);
  if (positives == 0 || positives == static_cast<int>(labels.size())) {
    throw std::runtime_error("fit_isotonic: both classes must be present");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Merge tied scores into weighted points.
  std::vector<double> x, y, w;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double sum = 0.0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      sum += static_cast<double>(labels[order[j]]);
      ++j;
    }
    x.push_back(scores[order[i]]);
    y.push_back(sum / static_cast<double>(j - i));
    w.push_back(static_cast<double>(j - i));
    i = j;
  }

  // Pool-adjacent-violators over the merged points: maintain a stack of blocks
  // with non-decreasing means, merging while the tail violates.
  struct Block {
    double mean, weight;
    std::size_t last;  // index of the last merged point
  };
  std::vector<Block> stack;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Block b{y[i], w[i], i};
    while (!stack.empty() && stack.back().mean >= b.mean) {
      const Block& top = stack.back();
      b.mean = (top.mean * top.weight + b.mean * b.weight) / (top.weight + b.weight);
      b.weight += top.weight;
      stack.pop_back();
    }
    stack.push_back(b);
  }

  IsotonicCalibrator cal;
  cal.breakpoints = x;
  cal.values.resize(x.size());
  std::size_t point = 0;
  for (const Block& b : stack) {
    for (; point <= b.last; ++point) cal.values[point] = b.mean;
  }
  return cal;
}

double f1(const std::vector<int>& y_true, const std::vector<double>& y_prob, double threshold) {
  if (y_true.empty() || y_true.size() != y_prob.size()) {
    throw std::runtime_error("f1: empty input or length mismatch");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::runtime_error("f1: threshold must be in (0,1)");
  }
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const bool pred = y_prob[i] >= threshold;
    if (pred && y_true[i] == 1) ++tp;
    if (pred && y_true[i] == 0) ++fp;
    if (!pred && y_true[i] == 1) ++fn;
  }
  const double denom = static_cast<double>(2 * tp + fp + fn);
  return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
}

double auc(const std::vector<int>& y_true, const std::vector<double>& y_prob) {
  if (y_true.size() != y_prob.size() || y_true.empty()) {
    throw std::runtime_error("auc: empty input or length mismatch");
  }
  const std::size_t n = y_true.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return y_prob[a] < y_prob[b]; });

  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && y_prob[order[j]] == y_prob[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j - 1) + 1.0;  // 1-based midrank
    for (std::size_t k = i; k < j; ++k) rank[order[k]] = midrank;
    i = j;
  }

  double rank_sum_pos = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (y_true[i] == 1) {
      rank_sum_pos += rank[i];
      ++n_pos;
    }
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw std::runtime_error("auc: both classes must be present");
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double brier(const std::vector<int>& y_true, const std::vector<double>& y_prob) {
  if (y_true.empty() || y_true.size() != y_prob.size()) {
    throw std::runtime_error("brier: empty input or length mismatch");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const double d = y_prob[i] - static_cast<double>(y_true[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(y_true.size());
}

std::vector<CalibrationBin> calibration_bins(const std::vector<int>& y_true,
                                             const std::vector<double>& y_prob, int bins) {
  if (bins < 2) throw std::runtime_error("calibration_bins: need at least 2 bins");
  std::vector<CalibrationBin> out(static_cast<std::size_t>(bins));
  std::vector<double> pred_sum(static_cast<std::size_t>(bins), 0.0);
  std::vector<double> label_sum(static_cast<std::size_t>(bins), 0.0);
  for (int b = 0; b < bins; ++b) {
    out[static_cast<std::size_t>(b)].low = static_cast<double>(b) / bins;
    out[static_cast<std::size_t>(b)].high = static_cast<double>(b + 1) / bins;
  }
  for (std::size_t i = 0; i < y_prob.size(); ++i) {
    int b = static_cast<int>(y_prob[i] * bins);
    b = std::clamp(b, 0, bins - 1);  // p = 1.0 goes to the last bin
    out[static_cast<std::size_t>(b)].count += 1;
    pred_sum[static_cast<std::size_t>(b)] += y_prob[i];
    label_sum[static_cast<std::size_t>(b)] += static_cast<double>(y_true[i]);
  }
  for (int b = 0; b < bins; ++b) {
    auto& bin = out[static_cast<std::size_t>(b)];
    if (bin.count > 0) {
      bin.mean_predicted = pred_sum[static_cast<std::size_t>(b)] / bin.count;
      bin.observed_frequency = label_sum[static_cast<std::size_t>(b)] / bin.count;
    } else {
      bin.mean_predicted = std::numeric_limits<double>::quiet_NaN();
      bin.observed_frequency = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return out;
}

}  // namespace qisicgm::calib
