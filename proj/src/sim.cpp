#include "ebmf/sim.hpp"

#include "ebmf/ocv.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace ebmf {

namespace {

Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, sd);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

SimData simulate_rank1(Eigen::Index n, Eigen::Index p, double pi0, double tau, std::uint64_t seed) {
  if (!(pi0 >= 0.0 && pi0 <= 1.0)) throw std::invalid_argument("simulate_rank1: pi0 must be in [0,1]");
  if (!(tau > 0.0)) throw std::invalid_argument("simulate_rank1: tau must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, kRank1SlabVariances.size() - 1);
  std::normal_distribution<double> normal;
  Eigen::VectorXd l(n), f(p);
  for (Eigen::Index i = 0; i < n; ++i) {
    // Draw all three variates unconditionally so the stream layout does not
    // depend on pi0.
    const double u = unif(rng);
    const std::size_t m = pick(rng);
    const double z = normal(rng);
    l[i] = u < pi0 ? 0.0 : std::sqrt(kRank1SlabVariances[m]) * z;
  }
  for (Eigen::Index j = 0; j < p; ++j) f[j] = normal(rng);
  SimData out;
  out.B = l * f.transpose();
  out.Y = out.B + normal_matrix(n, p, 1.0 / std::sqrt(tau), rng);
  return out;
}

SimData simulate_bicluster(std::uint64_t seed) {
  constexpr Eigen::Index n = 150, p = 240;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, 3);
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(p, 3);
  const Eigen::Index row_begin[3] = {0, 10, 60};
  const Eigen::Index row_end[3] = {10, 60, 150};
  const double l_sd[3] = {2.0, 1.0, 0.5};
  const double f_sd[3] = {0.5, 1.0, 2.0};
  for (int k = 0; k < 3; ++k) {
    for (Eigen::Index i = row_begin[k]; i < row_end[k]; ++i) L(i, k) = l_sd[k] * normal(rng);
    for (Eigen::Index j = 80 * k; j < 80 * (k + 1); ++j) F(j, k) = f_sd[k] * normal(rng);
  }
  SimData out;
  out.B = L * F.transpose();
  out.Y = out.B + normal_matrix(n, p, 2.0, rng);  // tau = 1/4
  return out;
}

SimData simulate_noise(Eigen::Index n, Eigen::Index p, double sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SimData out;
  out.B = Eigen::MatrixXd::Zero(n, p);
  out.Y = normal_matrix(n, p, sd, rng);
  return out;
}

SimData simulate_low_rank(Eigen::Index n, Eigen::Index p, int k, double noise_sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Eigen::MatrixXd L = normal_matrix(n, k, 1.0, rng);
  const Eigen::MatrixXd F = normal_matrix(p, k, 1.0, rng);
  SimData out;
  out.B = L * F.transpose();
  out.Y = noise_sd > 0.0 ? Eigen::MatrixXd(out.B + normal_matrix(n, p, noise_sd, rng)) : out.B;
  return out;
}

double rrmse(const Eigen::MatrixXd& Bhat, const Eigen::MatrixXd& B) {
  if (Bhat.rows() != B.rows() || Bhat.cols() != B.cols())
    throw std::invalid_argument("rrmse: shape mismatch");
  const double denom = B.squaredNorm();
  if (!(denom > 0.0)) throw std::invalid_argument("rrmse: truth matrix is identically zero");
  return std::sqrt((Bhat - B).squaredNorm() / denom);
}

double rmse_masked(const Eigen::MatrixXd& Yhat, const Eigen::MatrixXd& Y,
                   const std::vector<std::pair<Eigen::Index, Eigen::Index>>& cells) {
  if (cells.empty()) throw std::invalid_argument("rmse_masked: empty cell set");
  if (Yhat.rows() != Y.rows() || Yhat.cols() != Y.cols())
    throw std::invalid_argument("rmse_masked: shape mismatch");
  double acc = 0.0;
  for (auto [i, j] : cells) {
    if (i < 0 || j < 0 || i >= Y.rows() || j >= Y.cols())
      throw std::out_of_range("rmse_masked: cell (" + std::to_string(i) + "," + std::to_string(j) +
                              ") outside the matrix");
    const double e = Y(i, j) - Yhat(i, j);
    acc += e * e;
  }
  return std::sqrt(acc / static_cast<double>(cells.size()));
}

Eigen::MatrixXd truncated_svd_fit(const MatrixData& data, int rank) {
  if (rank < 0) throw std::invalid_argument("truncated_svd_fit: negative rank");
  const Eigen::Index n = data.rows(), p = data.cols();
  Eigen::VectorXd means = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd filled = data.observed.select(data.values, 0.0);
  if (!data.fully_observed()) {
    for (Eigen::Index j = 0; j < p; ++j) {
      const double count = static_cast<double>(data.observed.col(j).count());
      means[j] = filled.col(j).sum() / count;
      for (Eigen::Index i = 0; i < n; ++i) filled(i, j) = data.observed(i, j) ? filled(i, j) - means[j] : 0.0;
    }
  }
  const auto r = std::min<Eigen::Index>(rank, std::min(n, p));
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, p);
  if (r > 0) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(filled, Eigen::ComputeThinU | Eigen::ComputeThinV);
    out = svd.matrixU().leftCols(r) * svd.singularValues().head(r).asDiagonal() *
          svd.matrixV().leftCols(r).transpose();
  }
  out.rowwise() += means.transpose();
  return out;
}

Mask random_mask(Eigen::Index n, Eigen::Index p, double missing_fraction, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Mask m(n, p);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index i = 0; i < n; ++i) m(i, j) = unif(rng) >= missing_fraction;
  // Restore one cell in any emptied row or column.
  std::uniform_int_distribution<Eigen::Index> pick_col(0, p - 1), pick_row(0, n - 1);
  for (Eigen::Index i = 0; i < n; ++i)
    if (!m.row(i).any()) m(i, pick_col(rng)) = true;
  for (Eigen::Index j = 0; j < p; ++j)
    if (!m.col(j).any()) m(pick_row(rng), j) = true;
  return m;
}

SimKind sim_kind_from_string(const std::string& name) {
  if (name == "rank1" || name == "rank1_sparse") return SimKind::Rank1Sparse;
  if (name == "bicluster" || name == "bicluster3") return SimKind::BiCluster3;
  if (name == "noise" || name == "noise_only") return SimKind::NoiseOnly;
  if (name == "lowrank" || name == "low_rank") return SimKind::GenericLowRank;
  throw std::invalid_argument("unknown simulation kind: " + name);
}

std::string to_string(SimKind kind) {
  switch (kind) {
    case SimKind::Rank1Sparse:
      return "rank1";
    case SimKind::BiCluster3:
      return "bicluster";
    case SimKind::NoiseOnly:
      return "noise";
    case SimKind::GenericLowRank:
      return "lowrank";
  }
  return "rank1";
}

void SimSpec::validate() const {
  if (kind != SimKind::BiCluster3 && (n < 1 || p < 1))
    throw std::invalid_argument("simulation: dimensions must be positive");
  if (kind == SimKind::Rank1Sparse && !(tau > 0.0))
    throw std::invalid_argument("simulation: tau must be positive");
  if (kind == SimKind::GenericLowRank && rank < 1)
    throw std::invalid_argument("simulation: rank must be positive");
  if (!(noise_sd >= 0.0)) throw std::invalid_argument("simulation: noise sd must be non-negative");
}

int SimSpec::true_rank() const {
  switch (kind) {
    case SimKind::Rank1Sparse:
      return 1;
    case SimKind::BiCluster3:
      return 3;
    case SimKind::NoiseOnly:
      return 0;
    case SimKind::GenericLowRank:
      return rank;
  }
  return 1;
}

SimData simulate(const SimSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case SimKind::Rank1Sparse:
      return simulate_rank1(spec.n, spec.p, spec.pi0, spec.tau, spec.seed);
    case SimKind::BiCluster3:
      return simulate_bicluster(spec.seed);
    case SimKind::NoiseOnly:
      return simulate_noise(spec.n, spec.p, spec.noise_sd, spec.seed);
    case SimKind::GenericLowRank:
      return simulate_low_rank(spec.n, spec.p, spec.rank, spec.noise_sd, spec.seed);
  }
  throw std::logic_error("unreachable");
}

BenchConfig BenchConfig::from_json(const nlohmann::json& j) {
  BenchConfig cfg;
  if (!j.is_object()) throw std::invalid_argument("bench config: expected a JSON object");
  cfg.replicates = j.value("replicates", cfg.replicates);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.jobs = j.value("jobs", cfg.jobs);
  cfg.report_csv = j.value("report_csv", cfg.report_csv);
  cfg.summary_csv = j.value("summary_csv", cfg.summary_csv);
  if (j.contains("methods")) cfg.methods = j.at("methods").get<std::vector<std::string>>();
  for (const auto& m : cfg.methods)
    if (m != "ebmf_nm" && m != "ebmf_pn" && m != "svd")
      throw std::invalid_argument("bench config: unknown method '" + m + "'");
  if (!j.contains("scenarios") || !j.at("scenarios").is_array())
    throw std::invalid_argument("bench config: 'scenarios' array required");
  for (const auto& s : j.at("scenarios")) {
    BenchScenario sc;
    sc.sim.kind = sim_kind_from_string(s.at("kind").get<std::string>());
    sc.name = s.value("name", to_string(sc.sim.kind));
    sc.sim.n = s.value("n", sc.sim.n);
    sc.sim.p = s.value("p", sc.sim.p);
    sc.sim.pi0 = s.value("pi0", sc.sim.pi0);
    sc.sim.tau = s.value("tau", sc.sim.tau);
    sc.sim.rank = s.value("rank", sc.sim.rank);
    sc.sim.noise_sd = s.value("noise_sd", sc.sim.noise_sd);
    sc.metric = s.value("metric", sc.metric);
    if (sc.metric != "rrmse" && sc.metric != "ocv_rmse")
      throw std::invalid_argument("bench config: unknown metric '" + sc.metric + "'");
    if (sc.metric == "rrmse" && sc.sim.kind == SimKind::NoiseOnly)
      sc.metric = "none";
    sc.folds = s.value("folds", sc.folds);
    sc.svd_rank = s.value("svd_rank", sc.svd_rank);
    sc.K_max = s.value("kmax", sc.K_max);
    sc.backfit = s.value("backfit", sc.backfit);
    sc.sim.validate();
    cfg.scenarios.push_back(sc);
  }
  if (cfg.replicates < 1) throw std::invalid_argument("bench config: replicates must be positive");
  if (cfg.jobs < 1) throw std::invalid_argument("bench config: jobs must be positive");
  return cfg;
}

std::string BenchReport::rows_csv() const {
  std::ostringstream os;
  os << "scenario,method,replicate,metric,value\n";
  for (const auto& r : rows)
    os << r.scenario << ',' << r.method << ',' << r.replicate << ',' << r.metric << ','
       << format_double(r.value) << '\n';
  return os.str();
}

std::string BenchReport::summary_csv() const {
  std::ostringstream os;
  os << "scenario,method,metric,count,mean,sd,median,wins\n";
  for (const auto& s : summary)
    os << s.scenario << ',' << s.method << ',' << s.metric << ',' << s.count << ','
       << format_double(s.mean) << ',' << format_double(s.sd) << ',' << format_double(s.median)
       << ',' << s.wins << '\n';
  return os.str();
}

const BenchSummaryRow* BenchReport::find(const std::string& scenario, const std::string& method,
                                         const std::string& metric) const {
  for (const auto& s : summary)
    if (s.scenario == scenario && s.method == method && s.metric == metric) return &s;
  return nullptr;
}

namespace {

std::vector<BenchRow> run_replicate(const BenchScenario& sc, const std::vector<std::string>& methods,
                                    int replicate, std::uint64_t seed) {
  SimSpec spec = sc.sim;
  spec.seed = seed;
  const SimData sim = simulate(spec);
  const MatrixData data(sim.Y);
  const int true_rank = spec.true_rank();
  const int svd_rank = sc.svd_rank > 0 ? sc.svd_rank : std::max(true_rank, 1);
  const int K_max = sc.K_max > 0 ? sc.K_max : (spec.kind == SimKind::Rank1Sparse ? 1 : 10);

  std::vector<BenchRow> rows;
  for (const auto& method : methods) {
    std::size_t retained = 0;
    Fitter fitter;
    if (method == "svd") {
      fitter = [svd_rank](const MatrixData& d) { return truncated_svd_fit(d, svd_rank); };
    } else {
      FitOptions opts;
      opts.prior_family =
          method == "ebmf_pn" ? PriorFamily::PointNormal : PriorFamily::NormalScaleMixture;
      opts.K_max = K_max;
      opts.seed = seed;
      const bool do_backfit = sc.backfit;
      fitter = [opts, do_backfit, &retained](const MatrixData& d) {
        FitResult r = do_backfit ? fit_greedy_backfit(d, opts) : fit_greedy(d, opts);
        retained = r.K();
        return r.moments.fitted();
      };
    }
    if (sc.metric == "ocv_rmse") {
      const auto score = ocv_score(data, fitter, sc.folds, seed);
      rows.push_back({sc.name, method, replicate, "ocv_rmse", score.overall});
      if (method != "svd") {
        // Rank on the full data, for reporting.
        fitter(data);
      }
    } else {
      const Eigen::MatrixXd fit = fitter(data);
      if (sc.metric == "rrmse") rows.push_back({sc.name, method, replicate, "rrmse", rrmse(fit, sim.B)});
    }
    if (method != "svd")
      rows.push_back({sc.name, method, replicate, "k_retained", static_cast<double>(retained)});
  }
  return rows;
}

}  // namespace

BenchReport run_benchmark(const BenchConfig& config) {
  struct Job {
    std::size_t scenario;
    int replicate;
  };
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < config.scenarios.size(); ++s)
    for (int r = 0; r < config.replicates; ++r) jobs.push_back({s, r});

  std::vector<std::vector<BenchRow>> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs.size());
  auto worker = [&] {
    for (std::size_t idx = next++; idx < jobs.size(); idx = next++) {
      try {
        const auto& job = jobs[idx];
        results[idx] = run_replicate(config.scenarios[job.scenario], config.methods, job.replicate,
                                     config.seed + static_cast<std::uint64_t>(job.replicate));
      } catch (...) {
        errors[idx] = std::current_exception();
      }
    }
  };
  const int workers = std::max(1, std::min<int>(config.jobs, static_cast<int>(jobs.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  BenchReport report;
  for (auto& r : results) report.rows.insert(report.rows.end(), r.begin(), r.end());

  // Summaries keyed in first-appearance order.
  std::vector<std::tuple<std::string, std::string, std::string>> keys;
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<double>> values;
  for (const auto& r : report.rows) {
    auto key = std::make_tuple(r.scenario, r.method, r.metric);
    if (!values.contains(key)) keys.push_back(key);
    values[key].push_back(r.value);
  }
  // Wins: lowest error among methods per (scenario, metric, replicate).
  std::map<std::tuple<std::string, std::string, std::string>, int> wins;
  std::map<std::tuple<std::string, std::string, int>, std::pair<double, std::string>> best;
  for (const auto& r : report.rows) {
    if (r.metric == "k_retained") continue;
    auto key = std::make_tuple(r.scenario, r.metric, r.replicate);
    auto it = best.find(key);
    if (it == best.end() || r.value < it->second.first) best[key] = {r.value, r.method};
  }
  for (const auto& [key, b] : best) ++wins[std::make_tuple(std::get<0>(key), b.second, std::get<1>(key))];

  for (const auto& key : keys) {
    auto v = values[key];
    BenchSummaryRow s;
    std::tie(s.scenario, s.method, s.metric) = key;
    s.count = static_cast<int>(v.size());
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    s.median = v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
    s.wins = s.metric == "k_retained" ? 0 : wins[key];
    report.summary.push_back(s);
  }
  return report;
}

}  // namespace ebmf
