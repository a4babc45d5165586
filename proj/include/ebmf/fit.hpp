#pragma once

#include "ebmf/ebnm.hpp"
#include "ebmf/factor_core.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace ebmf {

struct FitOptions {
  PriorFamily prior_family = PriorFamily::NormalScaleMixture;
  VarStructure var_structure = VarStructure::ByColumn;
  int K_max = 10;
  // Absolute objective change; non-positive means 1e-7 * (#observed cells).
  double tol = 0.0;
  int max_sweeps = 500;
  std::uint64_t seed = 1;
  bool nullcheck = true;
  EbnmOptions ebnm;

  double tolerance_for(const MatrixData& data) const;
  void validate() const;
};

struct FitResult {
  Eigen::Index n = 0;
  Eigen::Index p = 0;
  PriorFamily prior_family = PriorFamily::NormalScaleMixture;
  MomentSet moments;
  Precision prec;
  double objective = 0.0;
  // Objective after every single-factor update, then after the final
  // precision update. Each entry of segment_starts opens a run of updates
  // that begins from a freshly initialized factor (greedy addition or an
  // external backfit start); the objective is non-decreasing inside a run.
  std::vector<double> objective_trace;
  std::vector<std::size_t> segment_starts;
  std::vector<double> pve;
  // Column means removed before fitting; empty when the data were not
  // centered.
  Eigen::VectorXd column_means;

  std::size_t K() const { return moments.K(); }
};

// Rank-1 least-squares fit over the observed cells by alternating
// regressions. Returns zero vectors for all-zero data.
std::pair<Eigen::VectorXd, Eigen::VectorXd> init_rank1(const MatrixData& data, std::uint64_t seed,
                                                       int max_iter = 100, double tol = 1e-6);

FitResult fit_rank1(const MatrixData& data, const FitOptions& opts);

FitResult fit_greedy(const MatrixData& data, const FitOptions& opts);

FitResult backfit(const MatrixData& data, const FitResult& init, const FitOptions& opts);

// Backfit from external first moments (second moments are their squares).
FitResult backfit(const MatrixData& data, const MomentSet& init, const FitOptions& opts);

enum class NullcheckBranch { Keep, Null };

struct NullcheckResult {
  MomentSet moments;
  Precision prec;
  double objective = 0.0;
  NullcheckBranch branch = NullcheckBranch::Keep;
  double objective_keep = 0.0;
  double objective_null = 0.0;
};

// Compares the objective with factor k as-is against factor k zeroed, with
// the precision re-optimized in both; ties go to the null branch.
NullcheckResult nullcheck_factor(const MatrixData& data, const MomentSet& m, std::size_t k);

// Rescales every non-null factor to unit norm, moving the scale into the
// loading. Priors are rescaled with their moments.
MomentSet scale_normalize(const MomentSet& m);

std::vector<double> pve(const MomentSet& m, const Precision& prec, const Mask& observed);

std::vector<double> impute(const MomentSet& m, const std::vector<std::pair<Eigen::Index, Eigen::Index>>& cells);

// Greedy fit followed by backfitting; what the CLI runs by default.
FitResult fit_greedy_backfit(const MatrixData& data, const FitOptions& opts);

}  // namespace ebmf
