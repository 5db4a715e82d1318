#pragma once

#include <cstdint>
#include <vector>

#include "qisicgm/common.hpp"
#include "qisicgm/dataset.hpp"

namespace qisicgm::augment {

struct GaussianMixture {
  Vec weights;                 // k
  Mat means;                   // k x d
  std::vector<Mat> covariances;  // k of d x d
  std::vector<double> log_likelihood_trace;  // mean per-sample LL per EM iteration
};

struct AugmentResult {
  std::vector<dataset::RawRecord> records;      // originals first, then synthetic
  std::vector<dataset::Provenance> provenance;  // aligned with records
  GaussianMixture gmm;                          // the minority-class fit
  int minority_label = 1;
};

/// Full-covariance EM from a k-means++-style seeded start. Covariances get
/// 1e-6 added to the diagonal every M-step; iteration stops when the mean
/// log-likelihood improves by less than `tol` or after `max_iter` rounds.
GaussianMixture fit_gmm(const Mat& rows, int k, std::uint64_t seed, int max_iter = 200,
                        double tol = 1e-6);

/// Component choice by weight, then a Cholesky-factor Gaussian draw per row.
Mat sample_gmm(const GaussianMixture& gmm, int n, std::uint64_t seed);

/// Fits the mixture on the minority class's eight imputed raw features,
/// appends n_synth sampled records labeled with the minority outcome, and
/// clips each sampled column to the minority min/max. Original records pass
/// through unchanged and in order.
AugmentResult augment_minority(const std::vector<dataset::RawRecord>& records, int n_synth,
                               std::uint64_t seed, int k = 5);

}  // namespace qisicgm::augment
