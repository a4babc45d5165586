#pragma once

#include "ebmf/factor_core.hpp"
#include "ebmf/fit.hpp"

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace ebmf {

struct SimData {
  Eigen::MatrixXd Y;
  Eigen::MatrixXd B;  // true low-rank signal
};

// Per-entry variances of the non-null loading components for the rank-1
// design.
inline const std::vector<double> kRank1SlabVariances{0.25, 0.5, 1.0, 2.0, 4.0};

SimData simulate_rank1(Eigen::Index n, Eigen::Index p, double pi0, double tau, std::uint64_t seed);

// 150 x 240, three sparse bi-clusters, noise precision 1/4.
SimData simulate_bicluster(std::uint64_t seed);

SimData simulate_noise(Eigen::Index n, Eigen::Index p, double sd, std::uint64_t seed);

// B = L F^T with iid N(0,1) entries in L (n x k) and F (p x k).
SimData simulate_low_rank(Eigen::Index n, Eigen::Index p, int k, double noise_sd, std::uint64_t seed);

double rrmse(const Eigen::MatrixXd& Bhat, const Eigen::MatrixXd& B);

double rmse_masked(const Eigen::MatrixXd& Yhat, const Eigen::MatrixXd& Y,
                   const std::vector<std::pair<Eigen::Index, Eigen::Index>>& cells);

// Rank-r truncated SVD reconstruction. With missing cells the observed
// columns are centered and the gaps zero-filled first; means are added back.
Eigen::MatrixXd truncated_svd_fit(const MatrixData& data, int rank);

// Random fraction of cells marked unobserved, never emptying a row or column.
Mask random_mask(Eigen::Index n, Eigen::Index p, double missing_fraction, std::uint64_t seed);

enum class SimKind { Rank1Sparse, BiCluster3, NoiseOnly, GenericLowRank };

SimKind sim_kind_from_string(const std::string& name);
std::string to_string(SimKind kind);

struct SimSpec {
  SimKind kind = SimKind::Rank1Sparse;
  Eigen::Index n = 200;
  Eigen::Index p = 300;
  double pi0 = 0.9;
  double tau = 1.0;
  int rank = 3;
  double noise_sd = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
  int true_rank() const;
};

SimData simulate(const SimSpec& spec);

struct BenchScenario {
  std::string name;
  SimSpec sim;
  std::string metric = "rrmse";  // or "ocv_rmse"
  int folds = 3;
  int svd_rank = 0;              // 0: the design's true rank
  int K_max = 0;                 // 0: 1 for rank-1 designs, else 10
  bool backfit = true;
};

struct BenchConfig {
  std::vector<BenchScenario> scenarios;
  std::vector<std::string> methods{"ebmf_nm", "ebmf_pn", "svd"};
  int replicates = 20;
  std::uint64_t seed = 1;
  int jobs = 1;
  std::string report_csv;
  std::string summary_csv;

  static BenchConfig from_json(const nlohmann::json& j);
};

struct BenchRow {
  std::string scenario;
  std::string method;
  int replicate = 0;
  std::string metric;
  double value = 0.0;
};

struct BenchSummaryRow {
  std::string scenario;
  std::string method;
  std::string metric;
  double mean = 0.0;
  double sd = 0.0;
  double median = 0.0;
  int wins = 0;  // replicates where this method had the lowest error
  int count = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  std::vector<BenchSummaryRow> summary;

  std::string rows_csv() const;
  std::string summary_csv() const;
  const BenchSummaryRow* find(const std::string& scenario, const std::string& method,
                              const std::string& metric) const;
};

BenchReport run_benchmark(const BenchConfig& config);

}  // namespace ebmf
