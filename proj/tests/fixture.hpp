// Deterministic PIMA-schema synthetic data for tests: realistic marginals,
// correlated features, a learnable class signal, integer-coded columns and
// zero-injection in the fields the pipeline imputes.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "qisicgm/dataset.hpp"

namespace fixture {

inline std::vector<qisicgm::dataset::RawRecord> pima_like(int n, int positives,
                                                          std::uint64_t seed) {
  using qisicgm::dataset::RawRecord;
  auto rng = qisicgm::make_rng(seed, 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < positives; ++i) labels[static_cast<std::size_t>(i)] = 1;
  std::shuffle(labels.begin(), labels.end(), rng);

  std::vector<RawRecord> records;
  records.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const bool pos = labels[static_cast<std::size_t>(i)] == 1;
    // one latent severity factor drives the class signal; a second body-mass
    // factor correlates skin thickness with BMI
    const double t = (pos ? 1.6 : 0.0) + gauss(rng);
    const double body = 0.5 * t + 0.87 * gauss(rng);

    RawRecord r;
    r.pregnancies = std::floor(std::abs(2.6 + 2.4 * (0.3 * t + 0.95 * gauss(rng))));
    r.pregnancies = std::min(r.pregnancies, 15.0);
    r.glucose = std::round(std::clamp(105.0 + 18.0 * (0.8 * t + 0.6 * gauss(rng)), 44.0, 199.0));
    r.blood_pressure =
        std::round(std::clamp(68.0 + 12.0 * (0.25 * t + 0.97 * gauss(rng)), 24.0, 122.0));
    r.skin_thickness = std::round(std::clamp(27.0 + 9.0 * (0.4 * body + 0.9 * gauss(rng)), 7.0, 99.0));
    r.insulin =
        std::round(std::clamp(30.0 + 90.0 * std::exp(0.45 * (0.55 * t + 0.84 * gauss(rng))), 14.0, 846.0));
    r.bmi = std::round(10.0 * std::clamp(31.0 + 6.5 * (0.45 * body + 0.89 * gauss(rng)), 18.2, 67.1)) / 10.0;
    r.pedigree =
        std::round(1000.0 * std::clamp(0.35 * std::exp(0.55 * (0.3 * t + 0.95 * gauss(rng))), 0.078, 2.42)) /
        1000.0;
    r.age = std::round(std::clamp(23.0 + std::abs(11.0 * (0.45 * t + 0.89 * gauss(rng))), 21.0, 81.0));
    r.outcome = pos ? 1 : 0;

    // zero injection mirroring the real missingness pattern
    if (unit(rng) < 0.006) r.glucose = 0.0;
    if (unit(rng) < 0.045) r.blood_pressure = 0.0;
    if (unit(rng) < 0.29) r.skin_thickness = 0.0;
    if (unit(rng) < 0.48) r.insulin = 0.0;
    if (unit(rng) < 0.014) r.bmi = 0.0;
    records.push_back(r);
  }
  return records;
}

inline std::string format_cell(double v, int decimals) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

inline void write_csv(const std::vector<qisicgm::dataset::RawRecord>& records,
                      const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  out << "Pregnancies,Glucose,BloodPressure,SkinThickness,Insulin,BMI,"
         "DiabetesPedigreeFunction,Age,Outcome\n";
  for (const auto& r : records) {
    out << format_cell(r.pregnancies, 0) << ',' << format_cell(r.glucose, 0) << ','
        << format_cell(r.blood_pressure, 0) << ',' << format_cell(r.skin_thickness, 0) << ','
        << format_cell(r.insulin, 0) << ',' << format_cell(r.bmi, 1) << ','
        << format_cell(r.pedigree, 3) << ',' << format_cell(r.age, 0) << ',' << r.outcome << "\n";
  }
}

}  // namespace fixture
