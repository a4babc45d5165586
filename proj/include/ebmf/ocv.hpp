#pragma once

#include "ebmf/factor_core.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace ebmf {

// Orthogonal hold-out pattern: rows and columns are split into k groups and
// cell (i, j) belongs to fold (col_group[j] - row_group[i]) mod k, so every
// fold touches every row and every column.
struct OcvPlan {
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<int> row_groups;
  std::vector<int> col_groups;

  // Plan from explicit group labels (validated).
  static OcvPlan from_groups(int k, std::vector<int> row_groups, std::vector<int> col_groups);

  int fold(Eigen::Index i, Eigen::Index j) const {
    return ((col_groups[j] - row_groups[i]) % k + k) % k;
  }
  Eigen::Index rows() const { return static_cast<Eigen::Index>(row_groups.size()); }
  Eigen::Index cols() const { return static_cast<Eigen::Index>(col_groups.size()); }

  Mask fold_mask(int f) const;
  Eigen::MatrixXi fold_matrix() const;
};

OcvPlan ocv_partition(Eigen::Index n, Eigen::Index p, int k, std::uint64_t seed);

// A fitting procedure: training data (held-out cells unobserved) in, full
// matrix of predictions out.
using Fitter = std::function<Eigen::MatrixXd(const MatrixData& training)>;

struct OcvScore {
  std::vector<double> rmse_per_fold;
  std::vector<Eigen::Index> held_out_per_fold;
  double overall = 0.0;
};

OcvScore ocv_score(const MatrixData& data, const Fitter& fitter, const OcvPlan& plan);
OcvScore ocv_score(const MatrixData& data, const Fitter& fitter, int k, std::uint64_t seed);

}  // namespace ebmf
