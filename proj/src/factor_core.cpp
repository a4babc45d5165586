#include "ebmf/factor_core.hpp"

#include <limits>
#include <numbers>

namespace ebmf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool all_zero(const Eigen::VectorXd& v) { return (v.array() == 0.0).all(); }

}  // namespace

std::string to_string(VarStructure v) {
  switch (v) {
    case VarStructure::Constant:
      return "constant";
    case VarStructure::ByColumn:
      return "by_column";
    case VarStructure::ByRow:
      return "by_row";
  }
  return "by_column";
}

VarStructure var_structure_from_string(const std::string& name) {
  if (name == "constant") return VarStructure::Constant;
  if (name == "by_column" || name == "by-column" || name == "column") return VarStructure::ByColumn;
  if (name == "by_row" || name == "by-row" || name == "row") return VarStructure::ByRow;
  throw std::invalid_argument("unknown variance structure: " + name);
}

MatrixData::MatrixData(Eigen::MatrixXd values_, Mask observed_, VarStructure var_structure_)
    : values(std::move(values_)), observed(std::move(observed_)), var_structure(var_structure_) {
  if (observed.rows() != values.rows() || observed.cols() != values.cols())
    throw DataError("mask dimensions do not match the data");
  for (Eigen::Index j = 0; j < values.cols(); ++j)
    for (Eigen::Index i = 0; i < values.rows(); ++i)
      if (!observed(i, j) && !std::isfinite(values(i, j))) values(i, j) = 0.0;
  validate();
}

MatrixData::MatrixData(Eigen::MatrixXd values_, VarStructure var_structure_)
    : MatrixData(values_, Mask::Constant(values_.rows(), values_.cols(), true), var_structure_) {}

void MatrixData::validate() const {
  if (values.rows() < 1 || values.cols() < 1) throw DataError("matrix must be at least 1x1");
  for (Eigen::Index j = 0; j < values.cols(); ++j)
    for (Eigen::Index i = 0; i < values.rows(); ++i)
      if (observed(i, j) && !std::isfinite(values(i, j)))
        throw DataError("non-finite observed value at row " + std::to_string(i + 1) + ", column " +
                        std::to_string(j + 1));
  for (Eigen::Index i = 0; i < values.rows(); ++i)
    if (!observed.row(i).any())
      throw DataError("row " + std::to_string(i + 1) + " has no observed values");
  for (Eigen::Index j = 0; j < values.cols(); ++j)
    if (!observed.col(j).any())
      throw DataError("column " + std::to_string(j + 1) + " has no observed values");
}

MatrixData MatrixData::with_mask(Mask mask) const { return MatrixData(values, std::move(mask), var_structure); }

Precision Precision::constant(double tau, Eigen::Index n, Eigen::Index p) {
  Precision prec;
  prec.var_structure = VarStructure::Constant;
  prec.tau_scalar = tau;
  prec.tau_col = Eigen::VectorXd::Constant(p, tau);
  prec.tau_row = Eigen::VectorXd::Constant(n, tau);
  return prec;
}

Precision Precision::unit(VarStructure v, Eigen::Index n, Eigen::Index p) {
  Precision prec = constant(1.0, n, p);
  prec.var_structure = v;
  return prec;
}

double Precision::at(Eigen::Index i, Eigen::Index j) const {
  switch (var_structure) {
    case VarStructure::Constant:
      return tau_scalar;
    case VarStructure::ByColumn:
      return tau_col[j];
    case VarStructure::ByRow:
      return tau_row[i];
  }
  return tau_scalar;
}

Eigen::MatrixXd Precision::effective(const Mask& observed) const {
  Eigen::MatrixXd tau(observed.rows(), observed.cols());
  for (Eigen::Index j = 0; j < tau.cols(); ++j)
    for (Eigen::Index i = 0; i < tau.rows(); ++i) tau(i, j) = observed(i, j) ? at(i, j) : 0.0;
  return tau;
}

FactorMoments FactorMoments::zero(Eigen::Index n, Eigen::Index p) {
  FactorMoments f;
  f.l_mean = f.l_mean2 = Eigen::VectorXd::Zero(n);
  f.f_mean = f.f_mean2 = Eigen::VectorXd::Zero(p);
  return f;
}

FactorMoments FactorMoments::point_mass(Eigen::VectorXd l, Eigen::VectorXd f) {
  FactorMoments fm;
  fm.l_mean2 = l.array().square().matrix();
  fm.f_mean2 = f.array().square().matrix();
  fm.l_mean = std::move(l);
  fm.f_mean = std::move(f);
  return fm;
}

bool FactorMoments::is_null() const { return all_zero(l_mean2) || all_zero(f_mean2); }

void FactorMoments::set_null() {
  l_mean.setZero();
  l_mean2.setZero();
  f_mean.setZero();
  f_mean2.setZero();
  const auto family_l = prior_l.family;
  const auto family_f = prior_f.family;
  prior_l = family_l == PriorFamily::PointNormal ? FittedPrior::null_point_normal()
                                                 : FittedPrior::mixture({0.0}, {1.0});
  prior_f = family_f == PriorFamily::PointNormal ? FittedPrior::null_point_normal()
                                                 : FittedPrior::mixture({0.0}, {1.0});
  kl_l = kl_f = 0.0;
}

Eigen::MatrixXd MomentSet::fitted() const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, p);
  for (const auto& f : factors) out.noalias() += f.l_mean * f.f_mean.transpose();
  return out;
}

Eigen::MatrixXd expected_squared_residuals(const MatrixData& data, const MomentSet& m) {
  Eigen::MatrixXd r2 = (data.values - m.fitted()).array().square().matrix();
  for (const auto& f : m.factors) {
    r2.noalias() += f.l_mean2 * f.f_mean2.transpose();
    r2.noalias() -= f.l_mean.array().square().matrix() * f.f_mean.array().square().matrix().transpose();
  }
  return data.observed.select(r2, 0.0);
}

Precision update_precision(const Eigen::MatrixXd& r2bar, const MatrixData& data) {
  Precision prec;
  prec.var_structure = data.var_structure;
  const Eigen::ArrayXXd counts = data.observed.cast<double>();
  const Eigen::ArrayXXd r2 = data.observed.select(r2bar.array(), 0.0);
  auto rate = [&prec](double count, double sum) {
    if (!(sum > 0.0) || count / sum > kMaxPrecision) {
      prec.clamped = true;
      return kMaxPrecision;
    }
    return count / sum;
  };
  switch (data.var_structure) {
    case VarStructure::Constant: {
      prec.tau_scalar = rate(counts.sum(), r2.sum());
      prec.tau_col = Eigen::VectorXd::Constant(data.cols(), prec.tau_scalar);
      prec.tau_row = Eigen::VectorXd::Constant(data.rows(), prec.tau_scalar);
      break;
    }
    case VarStructure::ByColumn: {
      const Eigen::ArrayXd c = counts.colwise().sum().transpose();
      const Eigen::ArrayXd s = r2.colwise().sum().transpose();
      prec.tau_col.resize(data.cols());
      for (Eigen::Index j = 0; j < data.cols(); ++j) prec.tau_col[j] = rate(c[j], s[j]);
      break;
    }
    case VarStructure::ByRow: {
      const Eigen::ArrayXd c = counts.rowwise().sum();
      const Eigen::ArrayXd s = r2.rowwise().sum();
      prec.tau_row.resize(data.rows());
      for (Eigen::Index i = 0; i < data.rows(); ++i) prec.tau_row[i] = rate(c[i], s[i]);
      break;
    }
  }
  return prec;
}

Eigen::MatrixXd residual_matrix(const MatrixData& data, const MomentSet& m, std::size_t k) {
  Eigen::MatrixXd r = data.values;
  for (std::size_t kk = 0; kk < m.K(); ++kk) {
    if (kk == k) continue;
    r.noalias() -= m.factors[kk].l_mean * m.factors[kk].f_mean.transpose();
  }
  return r;
}

namespace {

NormalMeansProblem weighted_regression(const Eigen::MatrixXd& tau, const Eigen::MatrixXd& residuals,
                                       const Eigen::VectorXd& mean, const Eigen::VectorXd& mean2) {
  const Eigen::VectorXd denom = tau * mean2;
  const Eigen::VectorXd numer = tau.cwiseProduct(residuals) * mean;
  Eigen::VectorXd x(denom.size()), s(denom.size());
  for (Eigen::Index i = 0; i < denom.size(); ++i) {
    if (denom[i] > 0.0) {
      x[i] = numer[i] / denom[i];
      s[i] = 1.0 / std::sqrt(denom[i]);
    } else {
      x[i] = 0.0;
      s[i] = kInf;
    }
  }
  return NormalMeansProblem(std::move(x), std::move(s));
}

}  // namespace

NormalMeansProblem loading_statistics(const Eigen::MatrixXd& residuals, const Eigen::VectorXd& f_mean,
                                      const Eigen::VectorXd& f_mean2, const Precision& prec,
                                      const Mask& observed) {
  const Eigen::MatrixXd tau = prec.effective(observed);
  // Unobserved placeholders must not leak through 0 * value.
  const Eigen::MatrixXd r = observed.select(residuals, 0.0);
  return weighted_regression(tau, r, f_mean, f_mean2);
}

NormalMeansProblem factor_statistics(const Eigen::MatrixXd& residuals, const Eigen::VectorXd& l_mean,
                                     const Eigen::VectorXd& l_mean2, const Precision& prec,
                                     const Mask& observed) {
  const Eigen::MatrixXd tau = prec.effective(observed).transpose();
  const Eigen::MatrixXd r = observed.select(residuals, 0.0).transpose();
  return weighted_regression(tau, r, l_mean, l_mean2);
}

UpdateResult single_factor_update(const MatrixData& data, const MomentSet& m, std::size_t k,
                                  const EbnmSolver& ebnm) {
  if (k >= m.K()) throw std::out_of_range("single_factor_update: factor index out of range");
  UpdateResult out{m, update_precision(expected_squared_residuals(data, m), data)};
  const Eigen::MatrixXd rk = residual_matrix(data, m, k);
  FactorMoments& fk = out.moments.factors[k];

  const auto prob_l = loading_statistics(rk, fk.f_mean, fk.f_mean2, out.prec, data.observed);
  auto res_l = ebnm(prob_l, &fk.prior_l);
  fk.l_mean = std::move(res_l.post_mean);
  fk.l_mean2 = std::move(res_l.post_mean2);
  fk.prior_l = std::move(res_l.prior);
  fk.kl_l = res_l.kl;

  const auto prob_f = factor_statistics(rk, fk.l_mean, fk.l_mean2, out.prec, data.observed);
  auto res_f = ebnm(prob_f, &fk.prior_f);
  fk.f_mean = std::move(res_f.post_mean);
  fk.f_mean2 = std::move(res_f.post_mean2);
  fk.prior_f = std::move(res_f.prior);
  fk.kl_f = res_f.kl;

  if (fk.is_null()) fk.set_null();
  return out;
}

double compute_objective(const MatrixData& data, const MomentSet& m, const Precision& prec) {
  const Eigen::MatrixXd r2 = expected_squared_residuals(data, m);
  double f = 0.0;
  for (Eigen::Index j = 0; j < data.cols(); ++j)
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
      if (!data.observed(i, j)) continue;
      const double tau = prec.at(i, j);
      f += 0.5 * (std::log(tau / (2.0 * std::numbers::pi)) - tau * r2(i, j));
    }
  for (const auto& fk : m.factors) f += fk.kl_l + fk.kl_f;
  return f;
}

}  // namespace ebmf
