#include "qisicgm/phasemap.hpp"

#include "qisicgm/neuralkernel.hpp"

#include <cmath>
#include <stdexcept>

namespace qisicgm::phasemap {

namespace {

/// Stratified index split: per class, a seeded shuffle, then the first
/// `holdout_fraction` go to validation (at least one per class).
void stratified_holdout(const std::vector<int>& labels, double fraction, std::mt19937_64& rng,
                        std::vector<int>& train_idx, std::vector<int>& val_idx) {
  std::vector<int> by_class[2];
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
    by_class[labels[static_cast<std::size_t>(i)] == 1 ? 1 : 0].push_back(i);
  }
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    int n_val = static_cast<int>(std::round(fraction * static_cast<double>(members.size())));
    if (!members.empty()) n_val = std::clamp(n_val, 1, static_cast<int>(members.size()) - 1);
    for (int i = 0; i < static_cast<int>(members.size()); ++i) {
      (i < n_val ? val_idx : train_idx).push_back(members[static_cast<std::size_t>(i)]);
    }
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
}

struct ProbeState {
  double alpha;
  Vec w;
  double b;
};

/// Probe prediction and (optionally) gradients of mean squared error over the
/// given rows. Returns the MSE.
double probe_pass(const Mat& X, const std::vector<int>& labels, const std::vector<int>& idx,
                  const ProbeState& s, double* dalpha, Vec* dw, double* db) {
  const Eigen::Index d = X.cols();
  const double inv_n = 1.0 / static_cast<double>(idx.size());
  double mse = 0.0;
  if (dalpha) {
    *dalpha = 0.0;
    dw->setZero(2 * d);
    *db = 0.0;
  }
  for (const int row : idx) {
    double yhat = s.b;
    double dyhat_dalpha = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double xj = X(row, j);
      const double c = std::cos(s.alpha * xj);
      const double sn = std::sin(s.alpha * xj);
      yhat += s.w(2 * j) * c + s.w(2 * j + 1) * sn;
      if (dalpha) dyhat_dalpha += xj * (s.w(2 * j + 1) * c - s.w(2 * j) * sn);
    }
    const double err = yhat - static_cast<double>(labels[static_cast<std::size_t>(row)]);
    mse += err * err;
    if (dalpha) {
      const double g = 2.0 * err * inv_n;
      *dalpha += g * dyhat_dalpha;
      for (Eigen::Index j = 0; j < d; ++j) {
        const double xj = X(row, j);
        (*dw)(2 * j) += g * std::cos(s.alpha * xj);
        (*dw)(2 * j + 1) += g * std::sin(s.alpha * xj);
      }
      *db += g;
    }
  }
  return mse * inv_n;
}

}  // namespace

Vec lift(const Vec& x, double alpha) {
  Vec out(2 * x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    out(2 * j) = std::cos(alpha * x(j));
    out(2 * j + 1) = std::sin(alpha * x(j));
  }
  return out;
}

Mat lift(const Mat& X, double alpha) {
  Mat out(X.rows(), 2 * X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    out.col(2 * j) = (X.col(j).array() * alpha).cos().matrix();
    out.col(2 * j + 1) = (X.col(j).array() * alpha).sin().matrix();
  }
  return out;
}

PhaseMap train_alpha(const Mat& X, const std::vector<int>& labels, std::uint64_t seed,
                     const TrainAlphaOptions& opt) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  if (n < 10) {
    throw std::runtime_error("train_alpha: need at least 10 samples, got " + std::to_string(n));
  }

  auto rng = make_rng(seed, 0);
  std::vector<int> train_idx, val_idx;
  stratified_holdout(labels, opt.holdout_fraction, rng, train_idx, val_idx);

  ProbeState state;
  state.alpha = 1.0;
  state.w.resize(2 * d);
  {
    const double r = 1.0 / std::sqrt(static_cast<double>(2 * d));
    std::uniform_real_distribution<double> dist(-r, r);
    for (Eigen::Index j = 0; j < state.w.size(); ++j) state.w(j) = dist(rng);
  }
  state.b = 0.0;

  // Adam moments over the packed parameter vector [alpha, w..., b].
  const Eigen::Index np = 2 + state.w.size();
  Vec m = Vec::Zero(np), v = Vec::Zero(np);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  PhaseMap best;
  best.alpha = state.alpha;
  best.probe_w = state.w;
  best.probe_b = state.b;
  double best_val = probe_pass(X, labels, val_idx, state, nullptr, nullptr, nullptr);

  PhaseMap result;
  result.initial_val_mse = best_val;
  result.training_trace.reserve(static_cast<std::size_t>(opt.epochs));

  double dalpha = 0.0, db = 0.0;
  Vec dw(2 * d);
  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    probe_pass(X, labels, train_idx, state, &dalpha, &dw, &db);

    const double bc1 = 1.0 - std::pow(kBeta1, epoch);
    const double bc2 = 1.0 - std::pow(kBeta2, epoch);
    auto adam_update = [&](Eigen::Index slot, double grad, double& value) {
      m(slot) = kBeta1 * m(slot) + (1.0 - kBeta1) * grad;
      v(slot) = kBeta2 * v(slot) + (1.0 - kBeta2) * grad * grad;
      value -= opt.lr * (m(slot) / bc1) / (std::sqrt(v(slot) / bc2) + kEps);
    };
    adam_update(0, dalpha, state.alpha);
    for (Eigen::Index j = 0; j < dw.size(); ++j) adam_update(1 + j, dw(j), state.w(j));
    adam_update(np - 1, db, state.b);

    const double val_mse = probe_pass(X, labels, val_idx, state, nullptr, nullptr, nullptr);
    result.training_trace.push_back(val_mse);
    // Only epochs with a usable scale are retention candidates; alpha = 1 from
    // initialization is always available as the fallback.
    const bool valid = std::isfinite(state.alpha) && state.alpha > 0.0 && std::isfinite(val_mse);
    if (valid && val_mse < best_val) {
      best_val = val_mse;
      best.alpha = state.alpha;
      best.probe_w = state.w;
      best.probe_b = state.b;
    }
  }

  result.alpha = best.alpha;
  result.probe_w = best.probe_w;
  result.probe_b = best.probe_b;
  result.retained_val_mse = best_val;
  return result;
}

}  // namespace qisicgm::phasemap
