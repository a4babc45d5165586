#include "ebmf/cli.hpp"

#include "ebmf/fit.hpp"
#include "ebmf/io.hpp"
#include "ebmf/ocv.hpp"
#include "ebmf/sim.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

namespace ebmf {

namespace {

struct FitFlags {
  std::string prior = "normal-mixture";
  std::string var = "by-column";
  int kmax = 10;
  double tol = 0.0;
  int max_sweeps = 500;
  std::uint64_t seed = 1;
  bool no_backfit = false;
  bool no_nullcheck = false;
  bool center_cols = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--prior", prior, "Prior family")
        ->check(CLI::IsMember({"normal-mixture", "point-normal"}))
        ->capture_default_str();
    cmd->add_option("--var", var, "Noise variance structure")
        ->check(CLI::IsMember({"constant", "by-column", "by-row"}))
        ->capture_default_str();
    cmd->add_option("--kmax", kmax, "Maximum number of factors")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--tol", tol, "Objective convergence tolerance (default 1e-7 x observed cells)");
    cmd->add_option("--max-sweeps", max_sweeps, "Maximum update sweeps")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", seed, "Random seed")->capture_default_str();
    cmd->add_flag("--no-backfit", no_backfit, "Greedy fit only");
    cmd->add_flag("--no-nullcheck", no_nullcheck, "Skip the null-factor check");
    cmd->add_flag("--center-cols", center_cols, "Subtract column means before fitting");
  }

  FitOptions options() const {
    FitOptions o;
    o.prior_family = prior_family_from_string(prior);
    o.var_structure = var_structure_from_string(var);
    o.K_max = kmax;
    o.tol = tol;
    o.max_sweeps = max_sweeps;
    o.seed = seed;
    o.nullcheck = !no_nullcheck;
    return o;
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

Eigen::VectorXd observed_column_means(const MatrixData& d) {
  Eigen::VectorXd means(d.cols());
  for (Eigen::Index j = 0; j < d.cols(); ++j) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < d.rows(); ++i)
      if (d.observed(i, j)) s += d.values(i, j);
    means[j] = s / static_cast<double>(d.observed.col(j).count());
  }
  return means;
}

FitResult run_fit(const MatrixData& data, const FitFlags& flags) {
  const FitOptions opts = flags.options();
  MatrixData d = data;
  Eigen::VectorXd means;
  if (flags.center_cols) {
    means = observed_column_means(d);
    d.values.rowwise() -= means.transpose();
  }
  FitResult r = flags.no_backfit ? fit_greedy(d, opts) : fit_greedy_backfit(d, opts);
  r.column_means = means;
  return r;
}

Eigen::MatrixXd predictions(const FitResult& r) {
  Eigen::MatrixXd pred = r.moments.fitted();
  if (r.column_means.size() == r.p) pred.rowwise() += r.column_means.transpose();
  return pred;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Empirical Bayes matrix factorization"};
  app.require_subcommand(1);

  // fit
  std::string fit_input, fit_output, fit_pve;
  bool no_second = false;
  FitFlags fit_flags;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a factorization to a matrix");
  fit_cmd->add_option("-i,--input", fit_input, "Input matrix (CSV/TSV, NA for missing)")->required();
  fit_cmd->add_option("-o,--output", fit_output, "Output fit JSON")->required();
  fit_cmd->add_option("--pve", fit_pve, "Write the PVE table to this CSV");
  fit_cmd->add_flag("--no-second-moments", no_second, "Omit second moments from the fit file");
  fit_flags.add_to(fit_cmd);

  // impute
  std::string imp_fit, imp_cells, imp_output, imp_data;
  auto* imp_cmd = app.add_subcommand("impute", "Predict matrix cells from a fit");
  imp_cmd->add_option("-f,--fit", imp_fit, "Fit JSON")->required();
  imp_cmd->add_option("-c,--cells", imp_cells, "Cells to predict (row,col; 0-based)")->required();
  imp_cmd->add_option("-o,--output", imp_output, "Output CSV (row,col,value)")->required();
  imp_cmd->add_option("--data", imp_data, "Matrix with true values; prints the RMSE over the cells");

  // cv
  std::string cv_input, cv_output, cv_plan, cv_method = "ebmf";
  int cv_folds = 3, cv_rank = 1;
  FitFlags cv_flags;
  auto* cv_cmd = app.add_subcommand("cv", "Orthogonal cross-validation score");
  cv_cmd->add_option("-i,--input", cv_input, "Input matrix")->required();
  cv_cmd->add_option("-o,--output", cv_output, "Per-fold score CSV");
  cv_cmd->add_option("--plan", cv_plan, "Write the fold assignment CSV");
  cv_cmd->add_option("--folds", cv_folds, "Fold count")->capture_default_str();
  cv_cmd->add_option("--method", cv_method, "Fitter")->check(CLI::IsMember({"ebmf", "svd"}))->capture_default_str();
  cv_cmd->add_option("--rank", cv_rank, "Rank for the svd fitter")->check(CLI::PositiveNumber)->capture_default_str();
  cv_flags.add_to(cv_cmd);

  // simulate
  std::string sim_kind = "bicluster", sim_output, sim_truth, sim_full, sim_cells;
  SimSpec spec;
  std::size_t sim_ncells = 0;
  double sim_missing = 0.0;
  auto* sim_cmd = app.add_subcommand("simulate", "Generate a simulated matrix");
  sim_cmd->add_option("--kind", sim_kind, "Design")
      ->check(CLI::IsMember({"rank1", "bicluster", "noise", "lowrank"}))
      ->capture_default_str();
  sim_cmd->add_option("-o,--output", sim_output, "Observed matrix output")->required();
  sim_cmd->add_option("--truth", sim_truth, "Write the true signal matrix");
  sim_cmd->add_option("--full", sim_full, "Write the matrix before any cells are hidden");
  sim_cmd->add_option("--n", spec.n, "Rows")->capture_default_str();
  sim_cmd->add_option("--p", spec.p, "Columns")->capture_default_str();
  sim_cmd->add_option("--pi0", spec.pi0, "Loading sparsity (rank1)")->capture_default_str();
  sim_cmd->add_option("--tau", spec.tau, "Noise precision (rank1)")->capture_default_str();
  sim_cmd->add_option("--rank", spec.rank, "Rank (lowrank)")->capture_default_str();
  sim_cmd->add_option("--noise-sd", spec.noise_sd, "Noise sd (noise, lowrank)")->capture_default_str();
  sim_cmd->add_option("--missing", sim_missing, "Fraction of cells to mark missing")->check(CLI::Range(0.0, 0.9));
  sim_cmd->add_option("--holdout", sim_ncells, "Hide this many random cells and list them in --cells");
  sim_cmd->add_option("--cells", sim_cells, "Output list of held-out cells");
  sim_cmd->add_option("--seed", spec.seed, "Random seed")->capture_default_str();

  // bench
  std::string bench_config, bench_report, bench_summary;
  int bench_jobs = 0;
  auto* bench_cmd = app.add_subcommand("bench", "Run a simulation benchmark");
  bench_cmd->add_option("-c,--config", bench_config, "Benchmark config JSON")->required();
  bench_cmd->add_option("--report", bench_report, "Per-replicate CSV (overrides config)");
  bench_cmd->add_option("--summary", bench_summary, "Summary CSV (overrides config)");
  bench_cmd->add_option("--jobs", bench_jobs, "Concurrent replicate jobs (overrides config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (*fit_cmd) {
      const MatrixData data = read_matrix(fit_input);
      const FitResult r = run_fit(data, fit_flags);
      write_fit(r, fit_output, !no_second);
      std::string table = "factor,pve\n";
      for (std::size_t k = 0; k < r.pve.size(); ++k) table += std::to_string(k + 1) + "," + fmt(r.pve[k]) + "\n";
      if (!fit_pve.empty()) write_text(fit_pve, table);
      out << "K=" << r.K() << " objective=" << fmt(r.objective) << "\n" << table;
    } else if (*imp_cmd) {
      const FitResult r = read_fit(imp_fit);
      const CellList cells = read_cells(imp_cells);
      auto values = impute(r.moments, cells);
      if (r.column_means.size() == r.p)
        for (std::size_t c = 0; c < cells.size(); ++c) values[c] += r.column_means[cells[c].second];
      std::string text = "row,col,value\n";
      char buf[64];
      for (std::size_t c = 0; c < cells.size(); ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", values[c]);
        text += std::to_string(cells[c].first) + "," + std::to_string(cells[c].second) + "," + buf + "\n";
      }
      write_text(imp_output, text);
      out << "imputed " << cells.size() << " cells\n";
      if (!imp_data.empty()) {
        const MatrixData truth = read_matrix(imp_data);
        if (truth.rows() != r.n || truth.cols() != r.p)
          throw DataError("--data dimensions do not match the fit");
        double acc = 0.0;
        std::size_t count = 0;
        for (std::size_t c = 0; c < cells.size(); ++c) {
          const auto [i, j] = cells[c];
          if (!truth.observed(i, j)) continue;
          const double e = values[c] - truth.values(i, j);
          acc += e * e;
          ++count;
        }
        if (count == 0) throw DataError("no listed cell is observed in --data");
        out << "rmse=" << fmt(std::sqrt(acc / static_cast<double>(count))) << " cells=" << count << "\n";
      }
    } else if (*cv_cmd) {
      const MatrixData data = read_matrix(cv_input);
      const OcvPlan plan = ocv_partition(data.rows(), data.cols(), cv_folds, cv_flags.seed);
      if (!cv_plan.empty()) write_plan(cv_plan, plan);
      Fitter fitter;
      if (cv_method == "svd") {
        fitter = [cv_rank](const MatrixData& d) { return truncated_svd_fit(d, cv_rank); };
      } else {
        fitter = [&cv_flags](const MatrixData& d) { return predictions(run_fit(d, cv_flags)); };
      }
      const OcvScore score = ocv_score(data, fitter, plan);
      std::string table = "fold,held_out,rmse\n";
      for (std::size_t f = 0; f < score.rmse_per_fold.size(); ++f)
        table += std::to_string(f + 1) + "," + std::to_string(score.held_out_per_fold[f]) + "," +
                 fmt(score.rmse_per_fold[f]) + "\n";
      table += "overall,";
      Eigen::Index total = 0;
      for (auto c : score.held_out_per_fold) total += c;
      table += std::to_string(total) + "," + fmt(score.overall) + "\n";
      if (!cv_output.empty()) write_text(cv_output, table);
      out << table;
    } else if (*sim_cmd) {
      spec.kind = sim_kind_from_string(sim_kind);
      const SimData sim = simulate(spec);
      const Eigen::Index n = sim.Y.rows(), p = sim.Y.cols();
      Mask observed = sim_missing > 0.0 ? random_mask(n, p, sim_missing, spec.seed ^ 0x9e3779b97f4a7c15ULL)
                                        : Mask::Constant(n, p, true);
      CellList held;
      if (sim_ncells > 0) {
        if (sim_cells.empty()) throw CLI::ValidationError("--holdout requires --cells");
        std::mt19937_64 rng(spec.seed + 0x5851f42d4c957f2dULL);
        std::uniform_int_distribution<Eigen::Index> ri(0, n - 1), ci(0, p - 1);
        std::set<std::pair<Eigen::Index, Eigen::Index>> chosen;
        const std::size_t limit = static_cast<std::size_t>(n * p / 2);
        while (chosen.size() < std::min(sim_ncells, limit)) {
          const auto cell = std::make_pair(ri(rng), ci(rng));
          if (!observed(cell.first, cell.second) || chosen.contains(cell)) continue;
          observed(cell.first, cell.second) = false;
          if (!observed.row(cell.first).any() || !observed.col(cell.second).any()) {
            observed(cell.first, cell.second) = true;
            continue;
          }
          chosen.insert(cell);
          held.push_back(cell);
        }
        write_cells(sim_cells, held);
      }
      const auto fmt_out = format_for_path(sim_output);
      write_matrix(sim_output, sim.Y, observed, fmt_out);
      if (!sim_truth.empty()) write_matrix(sim_truth, sim.B);
      if (!sim_full.empty()) write_matrix(sim_full, sim.Y);
      out << "simulated " << n << "x" << p << " (" << to_string(spec.kind) << ", seed " << spec.seed << ")\n";
    } else if (*bench_cmd) {
      BenchConfig cfg;
      try {
        cfg = BenchConfig::from_json(nlohmann::json::parse(read_text(bench_config)));
      } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bench config: ") + e.what());
      }
      if (!bench_report.empty()) cfg.report_csv = bench_report;
      if (!bench_summary.empty()) cfg.summary_csv = bench_summary;
      if (bench_jobs > 0) cfg.jobs = bench_jobs;
      const BenchReport report = run_benchmark(cfg);
      if (!cfg.report_csv.empty()) write_text(cfg.report_csv, report.rows_csv());
      if (!cfg.summary_csv.empty()) write_text(cfg.summary_csv, report.summary_csv());
      out << report.summary_csv();
    }
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int cli_main(int argc, const char* const* argv) { return cli_main(argc, argv, std::cout, std::cerr); }

}  // namespace ebmf
