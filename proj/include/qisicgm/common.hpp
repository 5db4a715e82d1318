#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace qisicgm {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

/// Errors caused by bad user input (missing files, malformed CSV, schema or
/// artifact-version mismatches). The CLI maps these to exit code 2; every
/// other exception maps to exit code 1.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// --- seeding ---------------------------------------------------------------
// Every stochastic stage derives its own stream from (run seed, stream id) so
// stages can run in any order or in parallel without perturbing each other.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream));
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return std::mt19937_64(derive_seed(seed, stream));
}

// Stream ids for the pipeline stages. Fold-scoped stages add the fold index.
namespace streams {
constexpr std::uint64_t kFoldSplit = 1;
constexpr std::uint64_t kAugment = 2;
constexpr std::uint64_t kPhaseMap = 3;
constexpr std::uint64_t kAutoencoder = 4;
constexpr std::uint64_t kRefine = 5;
constexpr std::uint64_t kInnerSplit = 6;
constexpr std::uint64_t kForestRf = 7;
constexpr std::uint64_t kForestEt = 8;
constexpr std::uint64_t kTransformer = 9;
constexpr std::uint64_t kCnnSeq = 10;
constexpr std::uint64_t kFfnn = 11;
constexpr std::uint64_t kFoldStride = 1000;  // fold f uses stream + f*kFoldStride
constexpr std::uint64_t kRefit = 900000;     // refit offsets its streams here
constexpr std::uint64_t kInnerFit = 500;     // inner-holdout fit of a learner
}  // namespace streams

// --- parallelism -----------------------------------------------------------

/// Runs fn(0..n-1) on up to `threads` workers. Work units must be independent
/// and write disjoint outputs; results are then invariant to the thread count.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

inline int default_threads() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// --- formatting ------------------------------------------------------------

/// Shortest decimal string that round-trips the double exactly. Used for every
/// report CSV so that re-runs are byte-identical.
inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace qisicgm
