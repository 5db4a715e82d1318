#pragma once

#include <cstdint>
#include <vector>

#include "qisicgm/common.hpp"

namespace qisicgm::phasemap {

/// Trigonometric feature lift x -> (cos ax, sin ax) per column, with the scale
/// a trained jointly with a linear probe against the binary label.
struct PhaseMap {
  double alpha = 1.0;
  Vec probe_w;      // 2d coefficients over the lifted features
  double probe_b = 0.0;
  std::vector<double> training_trace;  // validation MSE per epoch
  double initial_val_mse = 0.0;        // validation MSE before any update
  double retained_val_mse = 0.0;       // validation MSE of the returned state
};

/// Interleaved layout: [cos a*x1, sin a*x1, cos a*x2, sin a*x2, ...].
Vec lift(const Vec& x, double alpha);
Mat lift(const Mat& X, double alpha);

struct TrainAlphaOptions {
  int epochs = 50;
  double lr = 1e-3;
  double holdout_fraction = 0.2;
};

/// Adam on (alpha, probe) against mean squared error of the probe's label
/// prediction, with a stratified holdout; returns the epoch state with the
/// lowest validation MSE (initialization included as a candidate, so training
/// can never return something worse than alpha = 1).
PhaseMap train_alpha(const Mat& X, const std::vector<int>& labels, std::uint64_t seed,
                     const TrainAlphaOptions& opt = {});

}  // namespace qisicgm::phasemap
