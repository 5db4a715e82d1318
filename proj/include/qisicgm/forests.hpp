#pragma once

#include <cstdint>
#include <vector>

#include "qisicgm/common.hpp"

namespace qisicgm::forests {

enum class ForestMode { kRandomForest, kExtraTrees };

struct TreeNode {
  int feature = -1;       // -1 marks a leaf
  double threshold = 0.0;  // go left when x[feature] <= threshold
  int left = -1;
  int right = -1;
  double probability = 0.0;  // positive fraction at the node
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // node 0 is the root
  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
};

struct ForestOptions {
  int trees = 100;
  int max_depth = 10;
  int min_samples_split = 2;
  int threads = 1;
};

struct ForestModel {
  std::vector<DecisionTree> trees;
  ForestMode mode = ForestMode::kRandomForest;
  int feature_count = 0;

  std::vector<double> predict_proba(const Mat& X) const;
};

/// Gini-split trees: random-forest mode bootstraps rows and scans exhaustive
/// midpoint thresholds; extra-trees mode uses all rows and one uniform-random
/// threshold per candidate feature. Both sample ceil(sqrt(d)) features per
/// split. Tree seeds derive from (seed, tree index), so results do not depend
/// on the thread count.
ForestModel fit_forest(const Mat& X, const std::vector<int>& y, ForestMode mode,
                       std::uint64_t seed, const ForestOptions& opt = {});

}  // namespace qisicgm::forests
