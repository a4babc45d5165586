#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace ebmf {

// Normal means problem: x_j ~ N(theta_j, s_j^2), theta_j iid from a prior g.
// s_j may be +inf, meaning x_j carries no information about theta_j.
struct NormalMeansProblem {
  Eigen::VectorXd x;
  Eigen::VectorXd s;

  NormalMeansProblem() = default;
  NormalMeansProblem(Eigen::VectorXd x_, Eigen::VectorXd s_);

  Eigen::Index size() const { return x.size(); }
  bool informative(Eigen::Index j) const { return std::isfinite(s[j]); }
  Eigen::Index n_informative() const;
  void validate() const;
};

enum class PriorFamily { PointNormal, NormalScaleMixture };

std::string to_string(PriorFamily family);
PriorFamily prior_family_from_string(const std::string& name);

// A fitted prior: either pi0*delta_0 + (1-pi0)*N(0, var), or a mixture of
// zero-centered normals sum_m weights[m] * N(0, sds[m]^2) with sds[0] == 0.
struct FittedPrior {
  PriorFamily family = PriorFamily::PointNormal;
  double pi0 = 1.0;
  double var = 0.0;
  std::vector<double> sds;
  std::vector<double> weights;

  static FittedPrior null_point_normal();
  static FittedPrior point_normal(double pi0, double var);
  static FittedPrior mixture(std::vector<double> sds, std::vector<double> weights);

  bool is_null() const;
  void validate() const;

  // Both families viewed as a list of (weight, variance) components.
  std::vector<std::pair<double, double>> components() const;

  // Prior second moment E[theta^2].
  double second_moment() const;

  // The prior of c*theta when theta ~ this prior.
  FittedPrior scaled(double c) const;

  // Number of components with zero variance mass; used for the sparsity
  // tie-break.
  double mass_at_zero() const;
};

nlohmann::json to_json(const FittedPrior& g);
FittedPrior prior_from_json(const nlohmann::json& j);

struct EbnmOptions {
  double tol = 1e-8;  // relative change in log-likelihood
  int max_iter = 1000;
};

struct EbnmResult {
  FittedPrior prior;
  Eigen::VectorXd post_mean;
  Eigen::VectorXd post_mean2;
  double loglik = 0.0;
  // E_q log(g/q), summed over observations.
  double kl = 0.0;
  bool converged = true;
  int iterations = 0;
  std::vector<double> loglik_trace;
};

class EbnmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// [0, s_min/10 * sqrt(2)^m ...] up to 2*sqrt(max(x^2 - s^2, 0)).
std::vector<double> default_scale_grid(const NormalMeansProblem& prob);

double marginal_loglik(const FittedPrior& g, const NormalMeansProblem& prob);

struct PosteriorMoments {
  Eigen::VectorXd mean;
  Eigen::VectorXd mean2;
};

PosteriorMoments posterior_moments(const FittedPrior& g, const NormalMeansProblem& prob);

// E_q log(g/q) from the marginal log-likelihood and posterior moments.
double kl_term(const NormalMeansProblem& prob, double loglik, const Eigen::VectorXd& post_mean,
               const Eigen::VectorXd& post_mean2);

EbnmResult fit_point_normal(const NormalMeansProblem& prob, const EbnmOptions& opts = {});

EbnmResult fit_normal_scale_mixture(const NormalMeansProblem& prob, const std::vector<double>& grid,
                                    const EbnmOptions& opts = {});

// Posterior summaries and KL term for a fixed prior.
EbnmResult evaluate_prior(const FittedPrior& g, const NormalMeansProblem& prob);

// Solver callback used by the factor updates. `previous` is the prior used
// for the same loading/factor on the last update, if any; an implementation
// must return a result at least as good as it.
using EbnmSolver =
    std::function<EbnmResult(const NormalMeansProblem& prob, const FittedPrior* previous)>;

EbnmSolver make_solver(PriorFamily family, const EbnmOptions& opts = {});

}  // namespace ebmf
