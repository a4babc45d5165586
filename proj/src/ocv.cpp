#include "ebmf/ocv.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace ebmf {

namespace {

// Balanced random labels: a shuffled 0..k-1 cycle, so group sizes differ by
// at most one.
std::vector<int> balanced_groups(Eigen::Index count, int k, std::mt19937_64& rng) {
  std::vector<int> labels(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % k);
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

}  // namespace

OcvPlan OcvPlan::from_groups(int k, std::vector<int> row_groups, std::vector<int> col_groups) {
  if (k < 1) throw std::invalid_argument("ocv: fold count must be positive");
  for (int g : row_groups)
    if (g < 0 || g >= k) throw std::invalid_argument("ocv: row group label out of range");
  for (int g : col_groups)
    if (g < 0 || g >= k) throw std::invalid_argument("ocv: column group label out of range");
  OcvPlan plan;
  plan.k = k;
  plan.row_groups = std::move(row_groups);
  plan.col_groups = std::move(col_groups);
  return plan;
}

Mask OcvPlan::fold_mask(int f) const {
  Mask m(rows(), cols());
  for (Eigen::Index j = 0; j < cols(); ++j)
    for (Eigen::Index i = 0; i < rows(); ++i) m(i, j) = fold(i, j) == f;
  return m;
}

Eigen::MatrixXi OcvPlan::fold_matrix() const {
  Eigen::MatrixXi m(rows(), cols());
  for (Eigen::Index j = 0; j < cols(); ++j)
    for (Eigen::Index i = 0; i < rows(); ++i) m(i, j) = fold(i, j);
  return m;
}

OcvPlan ocv_partition(Eigen::Index n, Eigen::Index p, int k, std::uint64_t seed) {
  if (k < 2 || k > std::min(n, p))
    throw std::invalid_argument("ocv: fold count " + std::to_string(k) + " must be in [2, min(n, p)]");
  std::mt19937_64 rng(seed);
  auto rows = balanced_groups(n, k, rng);
  auto cols = balanced_groups(p, k, rng);
  OcvPlan plan = OcvPlan::from_groups(k, std::move(rows), std::move(cols));
  plan.seed = seed;
  return plan;
}

OcvScore ocv_score(const MatrixData& data, const Fitter& fitter, const OcvPlan& plan) {
  if (plan.rows() != data.rows() || plan.cols() != data.cols())
    throw std::invalid_argument("ocv: plan dimensions do not match the data");
  OcvScore score;
  double total_sq = 0.0;
  Eigen::Index total_count = 0;
  for (int f = 0; f < plan.k; ++f) {
    const Mask held = plan.fold_mask(f) && data.observed;
    const Eigen::Index count = held.count();
    if (count == 0) throw std::runtime_error("degenerate fold " + std::to_string(f));
    const MatrixData training = data.with_mask(data.observed && !held);
    const Eigen::MatrixXd pred = fitter(training);
    double sq = 0.0;
    for (Eigen::Index j = 0; j < data.cols(); ++j)
      for (Eigen::Index i = 0; i < data.rows(); ++i)
        if (held(i, j)) {
          const double e = pred(i, j) - data.values(i, j);
          sq += e * e;
        }
    score.rmse_per_fold.push_back(std::sqrt(sq / static_cast<double>(count)));
    score.held_out_per_fold.push_back(count);
    total_sq += sq;
    total_count += count;
  }
  score.overall = std::sqrt(total_sq / static_cast<double>(total_count));
  return score;
}

OcvScore ocv_score(const MatrixData& data, const Fitter& fitter, int k, std::uint64_t seed) {
  return ocv_score(data, fitter, ocv_partition(data.rows(), data.cols(), k, seed));
}

}  // namespace ebmf
