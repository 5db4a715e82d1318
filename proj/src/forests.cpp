#include "qisicgm/forests.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace qisicgm::forests {

namespace {

constexpr double kMinImprovement = 1e-12;

double gini(double positives, double total) {
  if (total <= 0.0) return 0.0;
  const double p = positives / total;
  return 1.0 - p * p - (1.0 - p) * (1.0 - p);
}

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double improvement = 0.0;
};

/// Draws `count` distinct feature indices in [0, d) without replacement.
std::vector<int> sample_features(int d, int count, std::mt19937_64& rng) {
  std::vector<int> all(static_cast<std::size_t>(d));
  std::iota(all.begin(), all.end(), 0);
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, d - 1);
    std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(pick(rng))]);
  }
  all.resize(static_cast<std::size_t>(count));
  return all;
}

class TreeBuilder {
 public:
  TreeBuilder(const Mat& X, const std::vector<int>& y, ForestMode mode, const ForestOptions& opt,
              std::mt19937_64 rng)
      : X_(X), y_(y), mode_(mode), opt_(opt), rng_(std::move(rng)) {
    feature_subsample_ = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(X.cols()))));
  }

  DecisionTree build() {
    std::vector<int> rows;
    const int n = static_cast<int>(X_.rows());
    rows.reserve(static_cast<std::size_t>(n));
    if (mode_ == ForestMode::kRandomForest) {
      std::uniform_int_distribution<int> pick(0, n - 1);
      for (int i = 0; i < n; ++i) rows.push_back(pick(rng_));
    } else {
      for (int i = 0; i < n; ++i) rows.push_back(i);
    }
    DecisionTree tree;
    grow(tree, rows, 0);
    return tree;
  }

 private:
  int grow(DecisionTree& tree, std::vector<int>& rows, int depth) {
    const int node_id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();

    double positives = 0.0;
    for (int r : rows) positives += y_[static_cast<std::size_t>(r)];
    const double total = static_cast<double>(rows.size());
    tree.nodes[static_cast<std::size_t>(node_id)].probability = positives / total;

    const bool pure = positives == 0.0 || positives == total;
    if (depth >= opt_.max_depth || static_cast<int>(rows.size()) < opt_.min_samples_split || pure) {
      return node_id;
    }

    const Split split = find_split(rows, gini(positives, total));
    if (split.feature < 0) return node_id;

    std::vector<int> left_rows, right_rows;
    left_rows.reserve(rows.size());
    right_rows.reserve(rows.size());
    for (int r : rows) {
      (X_(r, split.feature) <= split.threshold ? left_rows : right_rows).push_back(r);
    }
    if (left_rows.empty() || right_rows.empty()) return node_id;

    rows.clear();
    rows.shrink_to_fit();

    tree.nodes[static_cast<std::size_t>(node_id)].feature = split.feature;
    tree.nodes[static_cast<std::size_t>(node_id)].threshold = split.threshold;
    const int left_id = grow(tree, left_rows, depth + 1);
    tree.nodes[static_cast<std::size_t>(node_id)].left = left_id;
    const int right_id = grow(tree, right_rows, depth + 1);
    tree.nodes[static_cast<std::size_t>(node_id)].right = right_id;
    return node_id;
  }

  Split find_split(const std::vector<int>& rows, double parent_gini) {
    Split best;
    const std::vector<int> features =
        sample_features(static_cast<int>(X_.cols()), feature_subsample_, rng_);

    for (const int f : features) {
      if (mode_ == ForestMode::kRandomForest) {
        scan_midpoints(rows, f, parent_gini, best);
      } else {
        try_random_threshold(rows, f, parent_gini, best);
      }
    }
    return best;
  }

  /// Exhaustive candidate thresholds at midpoints of consecutive distinct
  /// sorted values, evaluated with a single sorted sweep.
  void scan_midpoints(const std::vector<int>& rows, int f, double parent_gini, Split& best) {
    scratch_.clear();
    for (int r : rows) {
      scratch_.push_back({X_(r, f), y_[static_cast<std::size_t>(r)]});
    }
    std::sort(scratch_.begin(), scratch_.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    const double total = static_cast<double>(scratch_.size());
    double total_pos = 0.0;
    for (const auto& sv : scratch_) total_pos += sv.second;

    double left_n = 0.0, left_pos = 0.0;
    for (std::size_t i = 0; i + 1 < scratch_.size(); ++i) {
      left_n += 1.0;
      left_pos += scratch_[i].second;
      if (scratch_[i].first == scratch_[i + 1].first) continue;
      const double right_n = total - left_n;
      const double child =
          (left_n * gini(left_pos, left_n) + right_n * gini(total_pos - left_pos, right_n)) / total;
      const double improvement = parent_gini - child;
      if (improvement > kMinImprovement && improvement > best.improvement) {
        best.improvement = improvement;
        best.feature = f;
        best.threshold = 0.5 * (scratch_[i].first + scratch_[i + 1].first);
      }
    }
  }

  /// Extra-trees rule: a single uniform threshold in (min, max) per feature.
  void try_random_threshold(const std::vector<int>& rows, int f, double parent_gini, Split& best) {
    double lo = X_(rows.front(), f), hi = lo;
    for (int r : rows) {
      lo = std::min(lo, X_(r, f));
      hi = std::max(hi, X_(r, f));
    }
    if (lo == hi) return;
    std::uniform_real_distribution<double> dist(lo, hi);
    const double threshold = dist(rng_);

    double left_n = 0.0, left_pos = 0.0, total_pos = 0.0;
    for (int r : rows) {
      total_pos += y_[static_cast<std::size_t>(r)];
      if (X_(r, f) <= threshold) {
        left_n += 1.0;
        left_pos += y_[static_cast<std::size_t>(r)];
      }
    }
    const double total = static_cast<double>(rows.size());
    const double right_n = total - left_n;
    if (left_n == 0.0 || right_n == 0.0) return;
    const double child =
        (left_n * gini(left_pos, left_n) + right_n * gini(total_pos - left_pos, right_n)) / total;
    const double improvement = parent_gini - child;
    if (improvement > kMinImprovement && improvement > best.improvement) {
      best.improvement = improvement;
      best.feature = f;
      best.threshold = threshold;
    }
  }

  const Mat& X_;
  const std::vector<int>& y_;
  ForestMode mode_;
  const ForestOptions& opt_;
  std::mt19937_64 rng_;
  int feature_subsample_;
  std::vector<std::pair<double, int>> scratch_;
};

}  // namespace

double DecisionTree::predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  int node = 0;
  while (nodes[static_cast<std::size_t>(node)].feature >= 0) {
    const TreeNode& n = nodes[static_cast<std::size_t>(node)];
    node = row(n.feature) <= n.threshold ? n.left : n.right;
  }
  return nodes[static_cast<std::size_t>(node)].probability;
}

std::vector<double> ForestModel::predict_proba(const Mat& X) const {
  if (static_cast<int>(X.cols()) != feature_count) {
    throw std::runtime_error("forest predict: feature width " + std::to_string(X.cols()) +
                             " does not match training width " + std::to_string(feature_count));
  }
  std::vector<double> out(static_cast<std::size_t>(X.rows()), 0.0);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    double sum = 0.0;
    for (const auto& tree : trees) sum += tree.predict(X.row(i));
    out[static_cast<std::size_t>(i)] = sum / static_cast<double>(trees.size());
  }
  return out;
}

ForestModel fit_forest(const Mat& X, const std::vector<int>& y, ForestMode mode,
                       std::uint64_t seed, const ForestOptions& opt) {
  if (X.rows() < 2) throw std::runtime_error("fit_forest: need at least 2 rows");
  if (static_cast<std::size_t>(X.rows()) != y.size()) {
    throw std::runtime_error("fit_forest: row/label count mismatch");
  }
  const int positives = std::accumulate(y.begin(), y.end(), 0);
  if (positives == 0 || positives == static_cast<int>(y.size())) {
    throw std::runtime_error("fit_forest: both classes must be present");
  }

  ForestModel model;
  model.mode = mode;
  model.feature_count = static_cast<int>(X.cols());
  model.trees.resize(static_cast<std::size_t>(opt.trees));
  parallel_for(opt.trees, opt.threads, [&](int t) {
    TreeBuilder builder(X, y, mode, opt, make_rng(seed, static_cast<std::uint64_t>(t)));
    model.trees[static_cast<std::size_t>(t)] = builder.build();
  });
  return model;
}

}  // namespace qisicgm::forests
