#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "qisicgm/calibmetrics.hpp"

using namespace qisicgm;

TEST_CASE("isotonic: already monotone labels are untouched") {
  const auto cal = calib::fit_isotonic({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1});
  REQUIRE(cal.values.size() == 4);
  CHECK(cal.values[0] == doctest::Approx(0.0));
  CHECK(cal.values[1] == doctest::Approx(0.0));
  CHECK(cal.values[2] == doctest::Approx(1.0));
  CHECK(cal.values[3] == doctest::Approx(1.0));
}

TEST_CASE("isotonic: one violating pair pools to its mean") {
  const auto cal = calib::fit_isotonic({0.4, 0.6}, {1, 0});
  REQUIRE(cal.values.size() == 2);
  CHECK(cal.values[0] == doctest::Approx(0.5));
  CHECK(cal.values[1] == doctest::Approx(0.5));
}

TEST_CASE("isotonic: equals max-min closed form on random instances") {
  auto rng = make_rng(101);
  std::uniform_int_distribution<int> size_dist(2, 30);
  std::uniform_real_distribution<double> score_dist(0.0, 1.0);
  std::uniform_int_distribution<int> coarse(0, 4);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = size_dist(rng);
    std::vector<double> scores(static_cast<std::size_t>(n));
    for (auto& s : scores) {
      // coarse grid on half the trials so tied scores are exercised
      s = trial % 2 == 0 ? score_dist(rng) : coarse(rng) / 4.0;
    }
    const auto labels = oracles::random_labels(n, rng);
    calib::IsotonicCalibrator cal;
    try {
      cal = calib::fit_isotonic(scores, labels);
    } catch (const std::exception&) {
      continue;  // single-class draw
    }
    const auto [ox, ov] = oracles::isotonic_maxmin(scores, labels);
    REQUIRE(cal.breakpoints.size() == ox.size());
    for (std::size_t i = 0; i < ox.size(); ++i) {
      CHECK(cal.breakpoints[i] == doctest::Approx(ox[i]).epsilon(1e-12));
      CHECK(std::abs(cal.values[i] - ov[i]) < 1e-9);
    }
  }
}

TEST_CASE("isotonic: output is non-decreasing and evaluation clamps") {
  auto rng = make_rng(7);
  const auto labels = oracles::random_labels(40, rng);
  std::vector<double> scores(40);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (auto& s : scores) s = dist(rng);
  const auto cal = calib::fit_isotonic(scores, labels);
  for (std::size_t i = 1; i < cal.values.size(); ++i) {
    CHECK(cal.values[i] >= cal.values[i - 1]);
  }
  CHECK(cal(-10.0) == doctest::Approx(cal.values.front()));
  CHECK(cal(10.0) == doctest::Approx(cal.values.back()));
  // calibrated output is a non-decreasing function of the raw score
  double prev = cal(0.0);
  for (double q = 0.0; q <= 1.0; q += 0.01) {
    const double cur = cal(q);
    CHECK(cur >= prev - 1e-15);
    CHECK(cur >= 0.0);
    CHECK(cur <= 1.0);
    prev = cur;
  }
}

TEST_CASE("isotonic: single-class input is rejected") {
  CHECK_THROWS(calib::fit_isotonic({0.1, 0.2}, {1, 1}));
}

TEST_CASE("f1 basics") {
  CHECK(calib::f1({1, 1, 0, 0}, {0.9, 0.8, 0.1, 0.2}) == doctest::Approx(1.0));
  // TP=2, FP=1, FN=1
  CHECK(calib::f1({1, 1, 1, 0, 0}, {0.9, 0.8, 0.1, 0.7, 0.2}) == doctest::Approx(2.0 * 2 / 6));
  CHECK(calib::f1({1, 1}, {0.1, 0.2}) == doctest::Approx(0.0));
  // p == y exactly
  CHECK(calib::f1({1, 0, 1}, {1.0, 0.0, 1.0}) == doctest::Approx(1.0));
}

TEST_CASE("auc: trivial cases and pair-counting oracle") {
  CHECK(calib::auc({0, 0, 1, 1}, {0.1, 0.2, 0.8, 0.9}) == doctest::Approx(1.0));
  CHECK(calib::auc({0, 1, 0, 1}, {0.5, 0.5, 0.5, 0.5}) == doctest::Approx(0.5));
  CHECK_THROWS(calib::auc({1, 1}, {0.5, 0.6}));

  auto rng = make_rng(11);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::uniform_int_distribution<int> coarse(0, 3);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 20;
    std::vector<double> p(static_cast<std::size_t>(n));
    for (auto& v : p) v = trial % 2 == 0 ? dist(rng) : coarse(rng) / 3.0;
    const auto y = oracles::random_labels(n, rng);
    CHECK(std::abs(calib::auc(y, p) - oracles::pairwise_auc(y, p)) < 1e-12);
  }
}

TEST_CASE("auc: invariant under strictly monotone transforms") {
  auto rng = make_rng(13);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> p(50);
  for (auto& v : p) v = dist(rng);
  const auto y = oracles::random_labels(50, rng);
  std::vector<double> q = p;
  for (auto& v : q) v = std::exp(3.0 * v) - 0.5;
  CHECK(calib::auc(y, p) == doctest::Approx(calib::auc(y, q)).epsilon(1e-12));
}

TEST_CASE("auc: complement symmetry for tie-free scores") {
  auto rng = make_rng(17);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> p(60);
  for (auto& v : p) v = dist(rng);
  const auto y = oracles::random_labels(60, rng);
  std::vector<double> neg = p;
  for (auto& v : neg) v = -v;
  CHECK(calib::auc(y, p) + calib::auc(y, neg) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("brier basics") {
  CHECK(calib::brier({1, 0}, {1.0, 0.0}) == doctest::Approx(0.0));
  CHECK(calib::brier({1, 0, 1, 0}, {0.5, 0.5, 0.5, 0.5}) == doctest::Approx(0.25));
  CHECK(calib::brier({1, 0}, {0.8, 0.4}) == doctest::Approx(0.10));
}

TEST_CASE("calibration bins: boundaries and empties") {
  {
    const auto bins = calib::calibration_bins({1, 0, 1}, {0.05, 0.05, 0.05}, 10);
    CHECK(bins[0].count == 3);
    for (int b = 1; b < 10; ++b) {
      CHECK(bins[static_cast<std::size_t>(b)].count == 0);
      CHECK(std::isnan(bins[static_cast<std::size_t>(b)].mean_predicted));
      CHECK(std::isnan(bins[static_cast<std::size_t>(b)].observed_frequency));
    }
  }
  {
    const auto bins = calib::calibration_bins({1}, {1.0}, 10);
    CHECK(bins[9].count == 1);
  }
}

TEST_CASE("calibration bins: statistical agreement on calibrated draws") {
  auto rng = make_rng(19);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = 100000;
  std::vector<double> p(static_cast<std::size_t>(n));
  std::vector<int> y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    p[static_cast<std::size_t>(i)] = unit(rng);
    y[static_cast<std::size_t>(i)] = unit(rng) < p[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  for (const auto& bin : calib::calibration_bins(y, p, 10)) {
    if (bin.count == 0) continue;
    CHECK(std::abs(bin.observed_frequency - bin.mean_predicted) < 0.02);
  }
}
