#pragma once

#include "ebmf/ebnm.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace ebmf {

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

enum class VarStructure { Constant, ByColumn, ByRow };

std::string to_string(VarStructure v);
VarStructure var_structure_from_string(const std::string& name);

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Observed n x p matrix. Unobserved cells hold an arbitrary finite
// placeholder; no computation reads them.
struct MatrixData {
  Eigen::MatrixXd values;
  Mask observed;
  VarStructure var_structure = VarStructure::ByColumn;

  MatrixData() = default;
  MatrixData(Eigen::MatrixXd values, Mask observed,
             VarStructure var_structure = VarStructure::ByColumn);
  explicit MatrixData(Eigen::MatrixXd values, VarStructure var_structure = VarStructure::ByColumn);

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
  Eigen::Index n_observed() const { return observed.count(); }
  bool fully_observed() const { return n_observed() == values.size(); }

  // Throws DataError naming the first empty row/column.
  void validate() const;

  // Same values under another observation mask (validated).
  MatrixData with_mask(Mask mask) const;
};

struct Precision {
  VarStructure var_structure = VarStructure::ByColumn;
  double tau_scalar = 1.0;
  Eigen::VectorXd tau_col;
  Eigen::VectorXd tau_row;
  // Set when a zero residual sum forced the clamp.
  bool clamped = false;

  static Precision constant(double tau, Eigen::Index n, Eigen::Index p);
  static Precision unit(VarStructure v, Eigen::Index n, Eigen::Index p);

  double at(Eigen::Index i, Eigen::Index j) const;
  // Effective tau_ij, zero at unobserved cells.
  Eigen::MatrixXd effective(const Mask& observed) const;
};

inline constexpr double kMaxPrecision = 1e12;

// One rank-1 term: moments of the loading (n) and factor (p), the fitted
// priors, and the cached E_q log(g/q) terms from the last solver calls.
struct FactorMoments {
  Eigen::VectorXd l_mean, l_mean2;
  Eigen::VectorXd f_mean, f_mean2;
  FittedPrior prior_l = FittedPrior::null_point_normal();
  FittedPrior prior_f = FittedPrior::null_point_normal();
  double kl_l = 0.0;
  double kl_f = 0.0;

  static FactorMoments zero(Eigen::Index n, Eigen::Index p);
  // Point-mass moments (second moment = square of first).
  static FactorMoments point_mass(Eigen::VectorXd l, Eigen::VectorXd f);

  bool is_null() const;
  void set_null();
};

struct MomentSet {
  Eigen::Index n = 0;
  Eigen::Index p = 0;
  std::vector<FactorMoments> factors;

  MomentSet() = default;
  MomentSet(Eigen::Index n_, Eigen::Index p_) : n(n_), p(p_) {}

  std::size_t K() const { return factors.size(); }
  // sum_k l_k f_k^T
  Eigen::MatrixXd fitted() const;
};

// Expected squared residuals E(Y_ij - sum_k l_ki f_kj)^2; zero at unobserved
// cells.
Eigen::MatrixXd expected_squared_residuals(const MatrixData& data, const MomentSet& m);

Precision update_precision(const Eigen::MatrixXd& r2bar, const MatrixData& data);

// Y minus the fitted effects of every factor other than k (0-based).
Eigen::MatrixXd residual_matrix(const MatrixData& data, const MomentSet& m, std::size_t k);

NormalMeansProblem loading_statistics(const Eigen::MatrixXd& residuals, const Eigen::VectorXd& f_mean,
                                      const Eigen::VectorXd& f_mean2, const Precision& prec,
                                      const Mask& observed);

NormalMeansProblem factor_statistics(const Eigen::MatrixXd& residuals, const Eigen::VectorXd& l_mean,
                                     const Eigen::VectorXd& l_mean2, const Precision& prec,
                                     const Mask& observed);

struct UpdateResult {
  MomentSet moments;
  Precision prec;
};

// Precision, then loading k, then factor k (0-based k).
UpdateResult single_factor_update(const MatrixData& data, const MomentSet& m, std::size_t k,
                                  const EbnmSolver& ebnm);

double compute_objective(const MatrixData& data, const MomentSet& m, const Precision& prec);

}  // namespace ebmf
