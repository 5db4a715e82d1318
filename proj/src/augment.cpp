#include "qisicgm/augment.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace qisicgm::augment {

namespace {

constexpr double kCovRegularizer = 1e-6;

void check_finite(const Mat& rows) {
  if (!rows.allFinite()) throw std::runtime_error("fit_gmm: input contains non-finite values");
}

/// k-means++-style seeding: first mean uniform, later means drawn with
/// probability proportional to squared distance from the nearest chosen mean.
Mat seed_means(const Mat& rows, int k, std::mt19937_64& rng) {
  const Eigen::Index n = rows.rows();
  Mat means(k, rows.cols());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Eigen::Index first = static_cast<Eigen::Index>(unit(rng) * static_cast<double>(n));
  means.row(0) = rows.row(std::min(first, n - 1));

  Vec dist2 = (rows.rowwise() - means.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = dist2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double cum = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        cum += dist2(i);
        if (cum >= target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(unit(rng) * static_cast<double>(n));
      pick = std::min(pick, n - 1);
    }
    means.row(c) = rows.row(pick);
    dist2 = dist2.cwiseMin((rows.rowwise() - means.row(c)).rowwise().squaredNorm());
  }
  return means;
}

Mat biased_covariance(const Mat& rows) {
  const Mat centered = rows.rowwise() - rows.colwise().mean();
  Mat cov = (centered.transpose() * centered) / static_cast<double>(rows.rows());
  cov.diagonal().array() += kCovRegularizer;
  return cov;
}

struct ComponentDensity {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double log_norm = 0.0;  // -0.5 * (d log 2pi + logdet)
};

ComponentDensity prepare_density(const Mat& cov, int component) {
  ComponentDensity d;
  d.llt.compute(cov);
  if (d.llt.info() != Eigen::Success) {
    throw std::runtime_error("gmm: Cholesky factorization failed for component " +
                             std::to_string(component));
  }
  double logdet = 0.0;
  const auto& L = d.llt.matrixLLT();
  for (Eigen::Index i = 0; i < L.rows(); ++i) logdet += 2.0 * std::log(L(i, i));
  const double dims = static_cast<double>(cov.rows());
  d.log_norm = -0.5 * (dims * std::log(2.0 * M_PI) + logdet);
  return d;
}

}  // namespace

GaussianMixture fit_gmm(const Mat& rows, int k, std::uint64_t seed, int max_iter, double tol) {
  const Eigen::Index n = rows.rows();
  const Eigen::Index d = rows.cols();
  if (n < k) {
    throw std::runtime_error("fit_gmm: " + std::to_string(n) + " rows are too few for k=" +
                             std::to_string(k));
  }
  if (d < 1 || k < 1) throw std::runtime_error("fit_gmm: need d >= 1 and k >= 1");
  check_finite(rows);

  auto rng = make_rng(seed);
  GaussianMixture gmm;
  gmm.weights = Vec::Constant(k, 1.0 / static_cast<double>(k));
  gmm.means = seed_means(rows, k, rng);
  gmm.covariances.assign(static_cast<std::size_t>(k), biased_covariance(rows));

  Mat log_resp(n, k);
  double prev_ll = -std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < max_iter; ++iter) {
    // E-step: responsibilities and the mean log-likelihood under the current
    // parameters.
    for (int c = 0; c < k; ++c) {
      const ComponentDensity dens = prepare_density(gmm.covariances[static_cast<std::size_t>(c)], c);
      const Mat centered = rows.rowwise() - gmm.means.row(c);
      // solve L z = centered^T, columnwise; mahalanobis = ||z||^2 per sample
      Eigen::MatrixXd z = dens.llt.matrixL().solve(centered.transpose());
      log_resp.col(c) = ((z.colwise().squaredNorm().transpose() * -0.5).array() + dens.log_norm +
                         std::log(gmm.weights(c)))
                            .matrix();
    }
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m = log_resp.row(i).maxCoeff();
      const double lse = m + std::log((log_resp.row(i).array() - m).exp().sum());
      ll += lse;
      log_resp.row(i) = (log_resp.row(i).array() - lse).exp().matrix();  // now responsibilities
    }
    ll /= static_cast<double>(n);
    gmm.log_likelihood_trace.push_back(ll);

    const bool converged = std::abs(ll - prev_ll) < tol;
    prev_ll = ll;

    // M-step
    const Vec nk = log_resp.colwise().sum().transpose();
    gmm.weights = nk / static_cast<double>(n);
    for (int c = 0; c < k; ++c) {
      const double denom = std::max(nk(c), 1e-300);
      gmm.means.row(c) = (log_resp.col(c).transpose() * rows) / denom;
      const Mat centered = rows.rowwise() - gmm.means.row(c);
      Mat cov = centered.transpose() * (centered.array().colwise() * log_resp.col(c).array()).matrix();
      cov /= denom;
      cov = 0.5 * (cov + cov.transpose());  // keep exactly symmetric
      cov.diagonal().array() += kCovRegularizer;
      gmm.covariances[static_cast<std::size_t>(c)] = cov;
    }

    if (converged) break;
  }
  return gmm;
}

Mat sample_gmm(const GaussianMixture& gmm, int n, std::uint64_t seed) {
  const int k = static_cast<int>(gmm.weights.size());
  const Eigen::Index d = gmm.means.cols();
  Mat out(n, d);
  if (n == 0) return out;

  std::vector<Eigen::MatrixXd> chol;
  chol.reserve(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    Eigen::LLT<Eigen::MatrixXd> llt(gmm.covariances[static_cast<std::size_t>(c)]);
    if (llt.info() != Eigen::Success) {
      throw std::runtime_error("sample_gmm: Cholesky factorization failed for component " +
                               std::to_string(c));
    }
    chol.push_back(llt.matrixL());
  }

  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec z(d);
  for (int i = 0; i < n; ++i) {
    const double u = unit(rng);
    int c = 0;
    double cum = 0.0;
    for (; c < k; ++c) {
      cum += gmm.weights(c);
      if (u <= cum) break;
    }
    c = std::min(c, k - 1);
    for (Eigen::Index j = 0; j < d; ++j) z(j) = gauss(rng);
    out.row(i) = gmm.means.row(c) + (chol[static_cast<std::size_t>(c)] * z).transpose();
  }
  return out;
}

AugmentResult augment_minority(const std::vector<dataset::RawRecord>& records, int n_synth,
                               std::uint64_t seed, int k) {
  using dataset::Provenance;
  using dataset::RawRecord;

  AugmentResult result;
  result.records = records;
  result.provenance.assign(records.size(), Provenance::kOriginal);

  int positives = 0;
  for (const auto& r : records) positives += r.outcome;
  const int negatives = static_cast<int>(records.size()) - positives;
  result.minority_label = positives <= negatives ? 1 : 0;

  if (n_synth == 0) return result;

  std::vector<const RawRecord*> minority;
  for (const auto& r : records) {
    if (r.outcome == result.minority_label) minority.push_back(&r);
  }
  if (static_cast<int>(minority.size()) < k) {
    throw std::runtime_error("augment_minority: minority class has " +
                             std::to_string(minority.size()) + " samples, fewer than k=" +
                             std::to_string(k));
  }

  Mat rows(static_cast<Eigen::Index>(minority.size()), dataset::kRawFeatureCount);
  for (std::size_t i = 0; i < minority.size(); ++i) {
    const auto f = minority[i]->features();
    for (int j = 0; j < dataset::kRawFeatureCount; ++j) {
      rows(static_cast<Eigen::Index>(i), j) = f[static_cast<std::size_t>(j)];
    }
  }
  const Vec col_min = rows.colwise().minCoeff().transpose();
  const Vec col_max = rows.colwise().maxCoeff().transpose();

  result.gmm = fit_gmm(rows, k, derive_seed(seed, 1));
  Mat synth = sample_gmm(result.gmm, n_synth, derive_seed(seed, 2));
  for (Eigen::Index i = 0; i < synth.rows(); ++i) {
    for (Eigen::Index j = 0; j < synth.cols(); ++j) {
      synth(i, j) = std::clamp(synth(i, j), col_min(j), col_max(j));
    }
  }

  result.records.reserve(records.size() + static_cast<std::size_t>(n_synth));
  result.provenance.reserve(records.size() + static_cast<std::size_t>(n_synth));
  for (Eigen::Index i = 0; i < synth.rows(); ++i) {
    RawRecord r;
    r.pregnancies = synth(i, 0);
    r.glucose = synth(i, 1);
    r.blood_pressure = synth(i, 2);
    r.skin_thickness = synth(i, 3);
    r.insulin = synth(i, 4);
    r.bmi = synth(i, 5);
    r.pedigree = synth(i, 6);
    r.age = synth(i, 7);
    r.outcome = result.minority_label;
    result.records.push_back(r);
    result.provenance.push_back(Provenance::kSynthetic);
  }
  return result;
}

}  // namespace qisicgm::augment
