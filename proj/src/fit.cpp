#include "ebmf/fit.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace ebmf {

namespace {

constexpr int kMaxNullcheckRounds = 5;

MatrixData with_structure(const MatrixData& data, VarStructure v) {
  MatrixData d = data;
  d.var_structure = v;
  return d;
}

FactorMoments make_factor(const Eigen::VectorXd& l, const Eigen::VectorXd& f, PriorFamily family) {
  FactorMoments fm = FactorMoments::point_mass(l, f);
  const FittedPrior null_prior = family == PriorFamily::PointNormal
                                     ? FittedPrior::null_point_normal()
                                     : FittedPrior::mixture({0.0}, {1.0});
  fm.prior_l = fm.prior_f = null_prior;
  return fm;
}

struct FitState {
  MomentSet moments;
  Precision prec;
  double objective = -std::numeric_limits<double>::infinity();
};

// Repeats single-factor updates on factor k until the objective change is
// below tol, appending each objective to trace.
void iterate_factor(const MatrixData& data, FitState& st, std::size_t k, const EbnmSolver& ebnm,
                    double tol, int max_sweeps, std::vector<double>& trace) {
  double prev = -std::numeric_limits<double>::infinity();
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    auto upd = single_factor_update(data, st.moments, k, ebnm);
    st.moments = std::move(upd.moments);
    st.prec = std::move(upd.prec);
    st.objective = compute_objective(data, st.moments, st.prec);
    trace.push_back(st.objective);
    if (st.moments.factors[k].is_null()) break;
    if (std::abs(st.objective - prev) < tol) break;
    prev = st.objective;
  }
}

void drop_null_factors(MomentSet& m) {
  std::erase_if(m.factors, [](const FactorMoments& f) { return f.is_null(); });
}

void finalize(const MatrixData& data, FitState& st, FitResult& out) {
  drop_null_factors(st.moments);
  st.prec = update_precision(expected_squared_residuals(data, st.moments), data);
  st.objective = compute_objective(data, st.moments, st.prec);
  out.objective_trace.push_back(st.objective);

  auto shares = pve(st.moments, st.prec, data.observed);
  std::vector<std::size_t> order(shares.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return shares[a] > shares[b]; });
  MomentSet sorted(st.moments.n, st.moments.p);
  out.pve.clear();
  for (std::size_t idx : order) {
    sorted.factors.push_back(std::move(st.moments.factors[idx]));
    out.pve.push_back(shares[idx]);
  }
  out.moments = std::move(sorted);
  out.prec = st.prec;
  out.objective = st.objective;
  out.n = data.rows();
  out.p = data.cols();
}

// fresh: the state was built from point-mass moments, so the objective is
// only meaningful once every factor has been updated; a new trace segment
// starts at the end of the first sweep.
FitResult run_backfit(const MatrixData& data, FitState st, FitResult out, const FitOptions& opts,
                      bool fresh = false) {
  const auto ebnm = make_solver(opts.prior_family, opts.ebnm);
  const double tol = opts.tolerance_for(data);
  for (int round = 0; round < kMaxNullcheckRounds; ++round) {
    double prev = -std::numeric_limits<double>::infinity();
    for (int sweep = 0; sweep < opts.max_sweeps && st.moments.K() > 0; ++sweep) {
      for (std::size_t k = 0; k < st.moments.K(); ++k) {
        if (st.moments.factors[k].is_null()) continue;
        auto upd = single_factor_update(data, st.moments, k, ebnm);
        st.moments = std::move(upd.moments);
        st.prec = std::move(upd.prec);
        st.objective = compute_objective(data, st.moments, st.prec);
        out.objective_trace.push_back(st.objective);
      }
      if (fresh && round == 0 && sweep == 0 && !out.objective_trace.empty())
        out.segment_starts.push_back(out.objective_trace.size() - 1);
      if (std::abs(st.objective - prev) < tol) break;
      prev = st.objective;
    }
    if (!opts.nullcheck) break;
    bool zeroed = false;
    for (std::size_t k = 0; k < st.moments.K(); ++k) {
      if (st.moments.factors[k].is_null()) continue;
      auto nc = nullcheck_factor(data, st.moments, k);
      st.moments = std::move(nc.moments);
      st.prec = std::move(nc.prec);
      st.objective = nc.objective;
      out.objective_trace.push_back(st.objective);
      zeroed = zeroed || nc.branch == NullcheckBranch::Null;
    }
    drop_null_factors(st.moments);
    if (!zeroed) break;
  }
  finalize(data, st, out);
  return out;
}

}  // namespace

double FitOptions::tolerance_for(const MatrixData& data) const {
  return tol > 0.0 ? tol : 1e-7 * static_cast<double>(data.n_observed());
}

void FitOptions::validate() const {
  if (K_max < 1) throw std::invalid_argument("K_max must be at least 1");
  if (max_sweeps < 1) throw std::invalid_argument("max_sweeps must be at least 1");
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> init_rank1(const MatrixData& data, std::uint64_t seed,
                                                       int max_iter, double tol) {
  const Eigen::Index n = data.rows(), p = data.cols();
  const Eigen::MatrixXd w = data.observed.cast<double>().matrix();
  const Eigen::MatrixXd y = data.observed.select(data.values, 0.0);
  if (y.isZero(0.0)) return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(p)};

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::VectorXd f(p);
  for (Eigen::Index j = 0; j < p; ++j) f[j] = normal(rng);
  // Starting direction: top right singular vector of the zero-filled matrix.
  // A purely random start can leave the alternating regressions stuck in a
  // degenerate valley when the observed cells form block cycles.
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd next = y.transpose() * (y * f);
    const double norm = next.norm();
    if (!(norm > 0.0)) break;
    next /= norm;
    const double change = std::min((next - f / f.norm()).norm(), (next + f / f.norm()).norm());
    f = next;
    if (change < tol) break;
  }
  Eigen::VectorXd l = Eigen::VectorXd::Zero(n);

  auto regress = [](const Eigen::MatrixXd& yy, const Eigen::MatrixXd& ww, const Eigen::VectorXd& v) {
    const Eigen::VectorXd num = yy * v;
    const Eigen::VectorXd den = ww * v.cwiseAbs2();
    Eigen::VectorXd out(num.size());
    for (Eigen::Index i = 0; i < num.size(); ++i) out[i] = den[i] > 0.0 ? num[i] / den[i] : 0.0;
    return out;
  };

  for (int it = 0; it < max_iter; ++it) {
    l = regress(y, w, f);
    if (l.isZero(0.0)) return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(p)};
    const Eigen::VectorXd f_next = regress(y.transpose(), w.transpose(), l);
    if (f_next.isZero(0.0)) return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(p)};
    // The pair is only defined up to scale; compare directions.
    const Eigen::VectorXd u = f / f.norm(), v = f_next / f_next.norm();
    const double change = std::min((u - v).norm(), (u + v).norm());
    f = f_next;
    if (change < tol) break;
  }
  l = regress(y, w, f);
  // Balance the scale between the two vectors.
  const double c = std::sqrt(l.norm() / f.norm());
  if (c > 0.0 && std::isfinite(c)) {
    l /= c;
    f *= c;
  }
  return {l, f};
}

FitResult fit_rank1(const MatrixData& data, const FitOptions& opts) {
  FitOptions one = opts;
  one.K_max = 1;
  return fit_greedy(data, one);
}

FitResult fit_greedy(const MatrixData& data_in, const FitOptions& opts) {
  opts.validate();
  const MatrixData data = with_structure(data_in, opts.var_structure);
  const auto ebnm = make_solver(opts.prior_family, opts.ebnm);
  const double tol = opts.tolerance_for(data);

  FitResult out;
  out.prior_family = opts.prior_family;
  FitState st;
  st.moments = MomentSet(data.rows(), data.cols());
  st.prec = update_precision(expected_squared_residuals(data, st.moments), data);
  st.objective = compute_objective(data, st.moments, st.prec);

  for (int K = 1; K <= opts.K_max; ++K) {
    const MatrixData resid(data.values - st.moments.fitted(), data.observed, data.var_structure);
    auto init = init_rank1(resid, opts.seed + static_cast<std::uint64_t>(K - 1));
    if (init.first.isZero(0.0) || init.second.isZero(0.0)) break;

    FitState trial = st;
    trial.moments.factors.push_back(make_factor(init.first, init.second, opts.prior_family));
    const std::size_t k = trial.moments.K() - 1;
    out.segment_starts.push_back(out.objective_trace.size());
    iterate_factor(data, trial, k, ebnm, tol, opts.max_sweeps, out.objective_trace);
    if (opts.nullcheck && !trial.moments.factors[k].is_null()) {
      auto nc = nullcheck_factor(data, trial.moments, k);
      trial.moments = std::move(nc.moments);
      trial.prec = std::move(nc.prec);
      trial.objective = nc.objective;
      out.objective_trace.push_back(trial.objective);
    }
    if (trial.moments.factors[k].is_null()) break;
    st = std::move(trial);
  }
  finalize(data, st, out);
  return out;
}

FitResult backfit(const MatrixData& data_in, const FitResult& init, const FitOptions& opts) {
  opts.validate();
  const MatrixData data = with_structure(data_in, opts.var_structure);
  FitResult out = init;
  FitState st{init.moments, init.prec, init.objective};
  if (st.moments.K() == 0) return out;
  return run_backfit(data, std::move(st), std::move(out), opts);
}

FitResult backfit(const MatrixData& data_in, const MomentSet& init, const FitOptions& opts) {
  opts.validate();
  const MatrixData data = with_structure(data_in, opts.var_structure);
  FitResult out;
  out.prior_family = opts.prior_family;
  FitState st;
  st.moments = MomentSet(init.n, init.p);
  for (const auto& f : init.factors)
    st.moments.factors.push_back(make_factor(f.l_mean, f.f_mean, opts.prior_family));
  st.prec = update_precision(expected_squared_residuals(data, st.moments), data);
  out.segment_starts.push_back(0);
  if (st.moments.K() == 0) {
    finalize(data, st, out);
    return out;
  }
  return run_backfit(data, std::move(st), std::move(out), opts, true);
}

FitResult fit_greedy_backfit(const MatrixData& data, const FitOptions& opts) {
  FitResult greedy = fit_greedy(data, opts);
  return backfit(data, greedy, opts);
}

NullcheckResult nullcheck_factor(const MatrixData& data, const MomentSet& m, std::size_t k) {
  if (k >= m.K()) throw std::out_of_range("nullcheck_factor: factor index out of range");
  NullcheckResult res;
  const Precision keep_prec = update_precision(expected_squared_residuals(data, m), data);
  res.objective_keep = compute_objective(data, m, keep_prec);

  MomentSet zeroed = m;
  zeroed.factors[k].set_null();
  const Precision null_prec = update_precision(expected_squared_residuals(data, zeroed), data);
  res.objective_null = compute_objective(data, zeroed, null_prec);

  if (m.factors[k].is_null() || res.objective_null >= res.objective_keep) {
    res.moments = std::move(zeroed);
    res.prec = null_prec;
    res.objective = res.objective_null;
    res.branch = NullcheckBranch::Null;
  } else {
    res.moments = m;
    res.prec = keep_prec;
    res.objective = res.objective_keep;
    res.branch = NullcheckBranch::Keep;
  }
  return res;
}

MomentSet scale_normalize(const MomentSet& m) {
  MomentSet out = m;
  for (auto& f : out.factors) {
    if (f.is_null()) continue;
    const double c = f.f_mean.norm();
    if (!(c > 0.0)) continue;
    f.f_mean /= c;
    f.f_mean2 /= c * c;
    f.l_mean *= c;
    f.l_mean2 *= c * c;
    f.prior_f = f.prior_f.scaled(1.0 / c);
    f.prior_l = f.prior_l.scaled(c);
  }
  return out;
}

std::vector<double> pve(const MomentSet& m, const Precision& prec, const Mask& observed) {
  std::vector<double> s(m.K());
  for (std::size_t k = 0; k < m.K(); ++k) {
    const auto& f = m.factors[k];
    s[k] = f.l_mean.squaredNorm() * f.f_mean.squaredNorm();
  }
  double noise = 0.0;
  for (Eigen::Index j = 0; j < observed.cols(); ++j)
    for (Eigen::Index i = 0; i < observed.rows(); ++i)
      if (observed(i, j)) noise += 1.0 / prec.at(i, j);
  const double total = std::accumulate(s.begin(), s.end(), 0.0) + noise;
  std::vector<double> out(m.K());
  for (std::size_t k = 0; k < m.K(); ++k) out[k] = total > 0.0 ? s[k] / total : 0.0;
  return out;
}

std::vector<double> impute(const MomentSet& m,
                           const std::vector<std::pair<Eigen::Index, Eigen::Index>>& cells) {
  std::vector<double> out;
  out.reserve(cells.size());
  for (auto [i, j] : cells) {
    if (i < 0 || i >= m.n || j < 0 || j >= m.p)
      throw std::out_of_range("impute: cell (" + std::to_string(i) + ", " + std::to_string(j) +
                              ") outside the fitted matrix");
    double v = 0.0;
    for (const auto& f : m.factors) v += f.l_mean[i] * f.f_mean[j];
    out.push_back(v);
  }
  return out;
}

}  // namespace ebmf
