#include "ebmf/ebnm.hpp"

#include <algorithm>
#include <limits>
#include <numbers>
#include <numeric>

namespace ebmf {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)

double log_normal0(double x, double var) { return -0.5 * (kLog2Pi + std::log(var) + x * x / var); }

double log_sum_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double a : v) m = std::max(m, a);
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double a : v) acc += std::exp(a - m);
  return m + std::log(acc);
}

bool relative_converged(double prev, double cur, double tol) {
  return std::abs(cur - prev) <= tol * std::max(1.0, std::abs(prev));
}

// Row-scaled component likelihoods for the informative observations:
// lik(j, m) = N(x_j; 0, s_j^2 + var_m) / max_m(...), with the log of the
// scale stored in log_scale(j).
struct ComponentLikelihoods {
  std::vector<Eigen::Index> rows;
  Eigen::MatrixXd lik;
  Eigen::VectorXd log_scale;
};

ComponentLikelihoods component_likelihoods(const NormalMeansProblem& prob,
                                           const std::vector<double>& vars) {
  ComponentLikelihoods out;
  for (Eigen::Index j = 0; j < prob.size(); ++j)
    if (prob.informative(j)) out.rows.push_back(j);
  const auto n = static_cast<Eigen::Index>(out.rows.size());
  const auto m = static_cast<Eigen::Index>(vars.size());
  out.lik.resize(n, m);
  out.log_scale.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double x = prob.x[out.rows[r]];
    const double s2 = prob.s[out.rows[r]] * prob.s[out.rows[r]];
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < m; ++c) {
      out.lik(r, c) = log_normal0(x, s2 + vars[c]);
      mx = std::max(mx, out.lik(r, c));
    }
    for (Eigen::Index c = 0; c < m; ++c) out.lik(r, c) = std::exp(out.lik(r, c) - mx);
    out.log_scale[r] = mx;
  }
  return out;
}

double mixture_loglik(const ComponentLikelihoods& cl, const Eigen::VectorXd& w) {
  const Eigen::VectorXd mix = cl.lik * w;
  double ll = cl.log_scale.sum();
  for (Eigen::Index r = 0; r < mix.size(); ++r) ll += std::log(mix[r]);
  return ll;
}

// Active-set solution of min 0.5 y'Hy + q'y subject to y >= 0, starting from
// a feasible y.
Eigen::VectorXd nonneg_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& q, Eigen::VectorXd y) {
  const Eigen::Index m = y.size();
  std::vector<bool> active(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    y[i] = std::max(y[i], 0.0);
    active[i] = y[i] == 0.0;
  }
  const double eps = 1e-13 * std::max(1.0, q.cwiseAbs().maxCoeff());
  for (int it = 0; it < 20 * m + 100; ++it) {
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < m; ++i)
      if (!active[i]) free.push_back(i);
    Eigen::VectorXd z = Eigen::VectorXd::Zero(m);
    if (!free.empty()) {
      const auto f = static_cast<Eigen::Index>(free.size());
      Eigen::MatrixXd hf(f, f);
      Eigen::VectorXd qf(f);
      for (Eigen::Index a = 0; a < f; ++a) {
        qf[a] = q[free[a]];
        for (Eigen::Index b = 0; b < f; ++b) hf(a, b) = H(free[a], free[b]);
      }
      const Eigen::VectorXd zf = hf.ldlt().solve(-qf);
      for (Eigen::Index a = 0; a < f; ++a) z[free[a]] = zf[a];
    }
    double alpha = 1.0;
    Eigen::Index block = -1;
    for (Eigen::Index i : free)
      if (z[i] < 0.0) {
        const double a = y[i] / (y[i] - z[i]);
        if (a < alpha) {
          alpha = a;
          block = i;
        }
      }
    if (block >= 0) {
      y += alpha * (z - y);
      y[block] = 0.0;
      active[block] = true;
      for (Eigen::Index i : free)
        if (y[i] <= 0.0) {
          y[i] = 0.0;
          active[i] = true;
        }
      continue;
    }
    y = z;
    const Eigen::VectorXd grad = H * y + q;
    Eigen::Index release = -1;
    double most = -eps;
    for (Eigen::Index i = 0; i < m; ++i)
      if (active[i] && grad[i] < most) {
        most = grad[i];
        release = i;
      }
    if (release < 0) break;
    active[release] = false;
  }
  return y;
}

EbnmResult null_result(const NormalMeansProblem& prob, PriorFamily family) {
  FittedPrior g = family == PriorFamily::PointNormal ? FittedPrior::null_point_normal()
                                                     : FittedPrior::mixture({0.0}, {1.0});
  return evaluate_prior(g, prob);
}

// Ties go to the sparser prior.
EbnmResult prefer_sparser(EbnmResult fitted, const NormalMeansProblem& prob) {
  if (fitted.prior.is_null()) return fitted;
  EbnmResult null_fit = null_result(prob, fitted.prior.family);
  const double slack = 1e-12 * std::max(1.0, std::abs(null_fit.loglik));
  if (null_fit.loglik >= fitted.loglik - slack) {
    null_fit.converged = fitted.converged;
    null_fit.iterations = fitted.iterations;
    null_fit.loglik_trace = std::move(fitted.loglik_trace);
    return null_fit;
  }
  return fitted;
}

// Maximizes sum_j log(pi0*a_j + (1-pi0)*b_j) over pi0 in [0,1]; the function
// is concave in pi0.
double optimal_pi0(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  auto deriv = [&](double pi0, double* second) {
    double d1 = 0.0, d2 = 0.0;
    for (Eigen::Index j = 0; j < a.size(); ++j) {
      const double den = pi0 * a[j] + (1.0 - pi0) * b[j];
      const double t = (a[j] - b[j]) / den;
      d1 += t;
      d2 -= t * t;
    }
    if (second) *second = d2;
    return d1;
  };
  if (deriv(1.0, nullptr) >= 0.0) return 1.0;
  if (deriv(0.0, nullptr) <= 0.0) return 0.0;
  double lo = 0.0, hi = 1.0, pi0 = 0.5;
  for (int it = 0; it < 100; ++it) {
    double d2 = 0.0;
    const double d1 = deriv(pi0, &d2);
    if (d1 > 0.0)
      lo = pi0;
    else
      hi = pi0;
    double next = (d2 < 0.0) ? pi0 - d1 / d2 : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - pi0) < 1e-15 || hi - lo < 1e-15) {
      pi0 = next;
      break;
    }
    pi0 = next;
  }
  return pi0;
}

struct PointNormalProfile {
  const NormalMeansProblem& prob;
  std::vector<Eigen::Index> rows;

  // Returns the profile log-likelihood max_pi0 l(pi0, var), storing the
  // maximizing pi0.
  double operator()(double var, double* pi0_out) const {
    const auto n = static_cast<Eigen::Index>(rows.size());
    Eigen::VectorXd a(n), b(n), scale(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const double x = prob.x[rows[r]];
      const double s2 = prob.s[rows[r]] * prob.s[rows[r]];
      const double la = log_normal0(x, s2);
      const double lb = log_normal0(x, s2 + var);
      const double mx = std::max(la, lb);
      a[r] = std::exp(la - mx);
      b[r] = std::exp(lb - mx);
      scale[r] = mx;
    }
    const double pi0 = optimal_pi0(a, b);
    if (pi0_out) *pi0_out = pi0;
    double ll = scale.sum();
    for (Eigen::Index r = 0; r < n; ++r) ll += std::log(pi0 * a[r] + (1.0 - pi0) * b[r]);
    return ll;
  }

  // d/d(log var) of the profile; pi0 is optimal so only the var partial remains.
  double slope(double var) const {
    double pi0 = 0.0;
    (*this)(var, &pi0);
    double d = 0.0;
    for (Eigen::Index j : rows) {
      const double x = prob.x[j];
      const double s2 = prob.s[j] * prob.s[j];
      const double la = std::log(pi0) + log_normal0(x, s2);
      const double lb = std::log1p(-pi0) + log_normal0(x, s2 + var);
      const double resp = pi0 > 0.0 ? 1.0 / (1.0 + std::exp(la - lb)) : 1.0;
      const double t = s2 + var;
      d += resp * 0.5 * (x * x / (t * t) - 1.0 / t);
    }
    return d * var;
  }
};

}  // namespace

NormalMeansProblem::NormalMeansProblem(Eigen::VectorXd x_, Eigen::VectorXd s_)
    : x(std::move(x_)), s(std::move(s_)) {
  validate();
}

Eigen::Index NormalMeansProblem::n_informative() const {
  Eigen::Index c = 0;
  for (Eigen::Index j = 0; j < s.size(); ++j) c += informative(j) ? 1 : 0;
  return c;
}

void NormalMeansProblem::validate() const {
  if (x.size() != s.size()) throw EbnmError("normal means problem: x and s differ in length");
  for (Eigen::Index j = 0; j < s.size(); ++j) {
    if (std::isnan(s[j]) || !(s[j] > 0.0))
      throw EbnmError("normal means problem: standard errors must be positive");
    if (!std::isfinite(x[j])) throw EbnmError("normal means problem: observations must be finite");
  }
}

std::string to_string(PriorFamily family) {
  return family == PriorFamily::PointNormal ? "point_normal" : "normal_scale_mixture";
}

PriorFamily prior_family_from_string(const std::string& name) {
  if (name == "point_normal" || name == "point-normal") return PriorFamily::PointNormal;
  if (name == "normal_scale_mixture" || name == "normal-mixture" || name == "normal_mixture")
    return PriorFamily::NormalScaleMixture;
  throw std::invalid_argument("unknown prior family: " + name);
}

FittedPrior FittedPrior::null_point_normal() { return point_normal(1.0, 0.0); }

FittedPrior FittedPrior::point_normal(double pi0, double var) {
  FittedPrior g;
  g.family = PriorFamily::PointNormal;
  g.pi0 = pi0;
  g.var = var;
  g.validate();
  return g;
}

FittedPrior FittedPrior::mixture(std::vector<double> sds, std::vector<double> weights) {
  FittedPrior g;
  g.family = PriorFamily::NormalScaleMixture;
  g.sds = std::move(sds);
  g.weights = std::move(weights);
  g.validate();
  return g;
}

bool FittedPrior::is_null() const {
  if (family == PriorFamily::PointNormal) return pi0 == 1.0 || var == 0.0;
  for (std::size_t m = 1; m < weights.size(); ++m)
    if (weights[m] != 0.0) return false;
  return true;
}

void FittedPrior::validate() const {
  if (family == PriorFamily::PointNormal) {
    if (!(pi0 >= 0.0 && pi0 <= 1.0)) throw EbnmError("point-normal prior: pi0 outside [0,1]");
    if (!(var >= 0.0) || !std::isfinite(var)) throw EbnmError("point-normal prior: bad variance");
    return;
  }
  if (sds.empty() || sds.size() != weights.size())
    throw EbnmError("scale mixture prior: sds and weights must be non-empty and equal length");
  if (sds[0] != 0.0) throw EbnmError("scale mixture prior: first scale must be zero");
  double total = 0.0;
  for (std::size_t m = 0; m < sds.size(); ++m) {
    if (!(weights[m] >= 0.0)) throw EbnmError("scale mixture prior: negative weight");
    if (!(sds[m] >= 0.0) || !std::isfinite(sds[m]))
      throw EbnmError("scale mixture prior: bad scale");
    if (m > 0 && sds[m] < sds[m - 1]) throw EbnmError("scale mixture prior: scales must be sorted");
    total += weights[m];
  }
  if (std::abs(total - 1.0) > 1e-12) throw EbnmError("scale mixture prior: weights must sum to 1");
}

std::vector<std::pair<double, double>> FittedPrior::components() const {
  std::vector<std::pair<double, double>> out;
  if (family == PriorFamily::PointNormal) {
    out.emplace_back(pi0, 0.0);
    out.emplace_back(1.0 - pi0, var);
  } else {
    for (std::size_t m = 0; m < sds.size(); ++m) out.emplace_back(weights[m], sds[m] * sds[m]);
  }
  return out;
}

double FittedPrior::second_moment() const {
  double acc = 0.0;
  for (auto [w, v] : components()) acc += w * v;
  return acc;
}

double FittedPrior::mass_at_zero() const {
  double acc = 0.0;
  for (auto [w, v] : components())
    if (v == 0.0) acc += w;
  return acc;
}

FittedPrior FittedPrior::scaled(double c) const {
  FittedPrior g = *this;
  const double a = std::abs(c);
  if (family == PriorFamily::PointNormal) {
    g.var = var * a * a;
  } else {
    for (double& sd : g.sds) sd *= a;
  }
  return g;
}

nlohmann::json to_json(const FittedPrior& g) {
  if (g.family == PriorFamily::PointNormal)
    return {{"family", "point_normal"}, {"pi0", g.pi0}, {"var", g.var}};
  return {{"family", "normal_scale_mixture"}, {"sds", g.sds}, {"weights", g.weights}};
}

FittedPrior prior_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("family")) throw EbnmError("prior: missing family");
  const auto family = j.at("family").get<std::string>();
  if (family == "point_normal")
    return FittedPrior::point_normal(j.at("pi0").get<double>(), j.at("var").get<double>());
  if (family == "normal_scale_mixture")
    return FittedPrior::mixture(j.at("sds").get<std::vector<double>>(),
                                j.at("weights").get<std::vector<double>>());
  throw EbnmError("prior: unknown family '" + family + "'");
}

std::vector<double> default_scale_grid(const NormalMeansProblem& prob) {
  prob.validate();
  double s_min = std::numeric_limits<double>::infinity();
  double signal = 0.0;
  for (Eigen::Index j = 0; j < prob.size(); ++j) {
    if (!prob.informative(j)) continue;
    s_min = std::min(s_min, prob.s[j]);
    signal = std::max(signal, prob.x[j] * prob.x[j] - prob.s[j] * prob.s[j]);
  }
  if (!std::isfinite(s_min)) throw EbnmError("no informative observations");
  const double sigma_min = s_min / 10.0;
  const double sigma_max = std::max(2.0 * std::sqrt(signal), sigma_min);
  std::vector<double> grid{0.0, sigma_min};
  double sigma = sigma_min;
  while (sigma < sigma_max) {
    sigma *= std::numbers::sqrt2;
    grid.push_back(sigma);
  }
  return grid;
}

double marginal_loglik(const FittedPrior& g, const NormalMeansProblem& prob) {
  const auto comps = g.components();
  std::vector<double> terms;
  double ll = 0.0;
  for (Eigen::Index j = 0; j < prob.size(); ++j) {
    if (!prob.informative(j)) continue;
    const double s2 = prob.s[j] * prob.s[j];
    terms.clear();
    for (auto [w, v] : comps)
      if (w > 0.0) terms.push_back(std::log(w) + log_normal0(prob.x[j], s2 + v));
    ll += log_sum_exp(terms);
  }
  return ll;
}

PosteriorMoments posterior_moments(const FittedPrior& g, const NormalMeansProblem& prob) {
  const auto comps = g.components();
  PosteriorMoments out{Eigen::VectorXd::Zero(prob.size()), Eigen::VectorXd::Zero(prob.size())};
  if (g.is_null()) return out;
  const double prior_m2 = g.second_moment();
  std::vector<double> logr(comps.size());
  for (Eigen::Index j = 0; j < prob.size(); ++j) {
    if (!prob.informative(j)) {
      out.mean2[j] = prior_m2;
      continue;
    }
    const double x = prob.x[j];
    const double s2 = prob.s[j] * prob.s[j];
    for (std::size_t m = 0; m < comps.size(); ++m) {
      const auto [w, v] = comps[m];
      logr[m] = w > 0.0 ? std::log(w) + log_normal0(x, s2 + v)
                        : -std::numeric_limits<double>::infinity();
    }
    const double lse = log_sum_exp(logr);
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t m = 0; m < comps.size(); ++m) {
      const double v = comps[m].second;
      if (v == 0.0 || !std::isfinite(logr[m])) continue;
      const double r = std::exp(logr[m] - lse);
      const double mu = x * v / (v + s2);
      const double pv = v * s2 / (v + s2);
      m1 += r * mu;
      m2 += r * (mu * mu + pv);
    }
    out.mean[j] = m1;
    out.mean2[j] = std::max(m2, m1 * m1);
  }
  return out;
}

double kl_term(const NormalMeansProblem& prob, double loglik, const Eigen::VectorXd& post_mean,
               const Eigen::VectorXd& post_mean2) {
  double acc = loglik;
  for (Eigen::Index j = 0; j < prob.size(); ++j) {
    if (!prob.informative(j)) continue;
    const double s2 = prob.s[j] * prob.s[j];
    const double x = prob.x[j];
    acc += 0.5 * (kLog2Pi + std::log(s2) +
                  (x * x + post_mean2[j] - 2.0 * x * post_mean[j]) / s2);
  }
  return acc;
}

EbnmResult evaluate_prior(const FittedPrior& g, const NormalMeansProblem& prob) {
  EbnmResult res;
  res.prior = g;
  res.loglik = marginal_loglik(g, prob);
  auto pm = posterior_moments(g, prob);
  res.post_mean = std::move(pm.mean);
  res.post_mean2 = std::move(pm.mean2);
  // The KL term of a point mass against itself is exactly zero.
  res.kl = g.is_null() ? 0.0 : kl_term(prob, res.loglik, res.post_mean, res.post_mean2);
  return res;
}

EbnmResult fit_point_normal(const NormalMeansProblem& prob, const EbnmOptions& opts) {
  prob.validate();
  if (prob.n_informative() == 0) return null_result(prob, PriorFamily::PointNormal);

  PointNormalProfile profile{prob, {}};
  double s_min = std::numeric_limits<double>::infinity();
  double excess = 0.0;
  for (Eigen::Index j = 0; j < prob.size(); ++j) {
    if (!prob.informative(j)) continue;
    profile.rows.push_back(j);
    s_min = std::min(s_min, prob.s[j]);
    excess += prob.x[j] * prob.x[j] - prob.s[j] * prob.s[j];
  }
  const auto n = static_cast<Eigen::Index>(profile.rows.size());
  excess /= static_cast<double>(n);

  double pi0 = 0.5;
  double var = std::max(excess, s_min * s_min);
  auto loglik_at = [&](double p0, double v) {
    return marginal_loglik(FittedPrior::point_normal(p0, v), prob);
  };

  EbnmResult res;
  double ll = loglik_at(pi0, var);
  res.loglik_trace.push_back(ll);
  bool converged = false;
  int it = 0;
  const double var_floor = 1e-12 * s_min * s_min;
  for (; it < opts.max_iter; ++it) {
    double sum_r = 0.0, sum_m2 = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
      const double x = prob.x[profile.rows[r]];
      const double s2 = prob.s[profile.rows[r]] * prob.s[profile.rows[r]];
      const double la = std::log(pi0) + log_normal0(x, s2);
      const double lb = std::log1p(-pi0) + log_normal0(x, s2 + var);
      const double resp = 1.0 / (1.0 + std::exp(la - lb));
      const double mu = x * var / (var + s2);
      const double pv = var * s2 / (var + s2);
      sum_r += resp;
      sum_m2 += resp * (mu * mu + pv);
    }
    if (sum_r <= 0.0) break;
    const double next_pi0 = 1.0 - sum_r / static_cast<double>(n);
    const double next_var = sum_m2 / sum_r;
    if (next_pi0 >= 1.0 || next_var <= var_floor) break;
    pi0 = std::max(next_pi0, 0.0);
    var = next_var;
    const double next_ll = loglik_at(pi0, var);
    res.loglik_trace.push_back(next_ll);
    const bool done = relative_converged(ll, next_ll, opts.tol);
    ll = next_ll;
    if (done) {
      converged = true;
      break;
    }
  }

  // The profile likelihood in log(var), with pi0 maximized exactly, can have
  // several local maxima. Scan it on a grid, then refine the best cell.
  double best_pi0 = pi0, best_var = var, best_ll = ll;
  {
    double x2max = 0.0;
    for (Eigen::Index j : profile.rows) x2max = std::max(x2max, prob.x[j] * prob.x[j]);
    const double scan_lo = std::min(std::log(s_min * s_min / 100.0), std::log(var));
    const double scan_hi = std::max(std::log(std::max(4.0 * x2max, s_min * s_min)), std::log(var));
    constexpr int kScan = 96;
    const double step = (scan_hi - scan_lo) / (kScan - 1);
    double centre = std::log(var);
    double pc0 = 0.0;
    double centre_f = profile(var, &pc0);
    for (int k = 0; k < kScan; ++k) {
      const double u = scan_lo + step * k;
      const double f = profile(std::exp(u), &pc0);
      if (f > centre_f) {
        centre_f = f;
        centre = u;
      }
    }
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = centre - step;
    double hi = centre + step;
    double c = hi - phi * (hi - lo), d = lo + phi * (hi - lo);
    double pc = 0.0, pd = 0.0;
    double fc = profile(std::exp(c), &pc), fd = profile(std::exp(d), &pd);
    while (hi - lo > 1e-10) {
      if (fc >= fd) {
        hi = d;
        d = c;
        fd = fc;
        pd = pc;
        c = hi - phi * (hi - lo);
        fc = profile(std::exp(c), &pc);
      } else {
        lo = c;
        c = d;
        fc = fd;
        pc = pd;
        d = lo + phi * (hi - lo);
        fd = profile(std::exp(d), &pd);
      }
    }
    double u = 0.5 * (lo + hi);
    // Golden section resolves u only to about sqrt(eps); finish by bisecting
    // the sign change of the slope.
    {
      double a = u - 1e-4, b = u + 1e-4;
      if (profile.slope(std::exp(a)) > 0.0 && profile.slope(std::exp(b)) < 0.0) {
        for (int it = 0; it < 200 && b - a > 1e-15 * std::max(1.0, std::abs(u)); ++it) {
          const double mid = 0.5 * (a + b);
          (profile.slope(std::exp(mid)) > 0.0 ? a : b) = mid;
        }
        u = 0.5 * (a + b);
      }
    }
    double pu = 0.0;
    profile(std::exp(u), &pu);
    if (pu < 1.0) {
      const double fu = loglik_at(pu, std::exp(u));
      if (fu > best_ll) {
        best_ll = fu;
        best_pi0 = pu;
        best_var = std::exp(u);
      }
    }
  }

  EbnmResult out = evaluate_prior(FittedPrior::point_normal(best_pi0, best_var), prob);
  out.converged = converged;
  out.iterations = it;
  out.loglik_trace = std::move(res.loglik_trace);
  if (best_ll > out.loglik_trace.back()) out.loglik_trace.push_back(out.loglik);
  return prefer_sparser(std::move(out), prob);
}

EbnmResult fit_normal_scale_mixture(const NormalMeansProblem& prob, const std::vector<double>& grid,
                                    const EbnmOptions& opts) {
  prob.validate();
  if (grid.empty() || grid[0] != 0.0) throw EbnmError("scale grid must start at zero");
  if (prob.n_informative() == 0) return null_result(prob, PriorFamily::NormalScaleMixture);

  std::vector<double> vars(grid.size());
  std::transform(grid.begin(), grid.end(), vars.begin(), [](double sd) { return sd * sd; });
  const auto cl = component_likelihoods(prob, vars);
  const auto m = static_cast<Eigen::Index>(grid.size());
  const double n = static_cast<double>(cl.rows.size());

  // Sequential quadratic programming on f(w) = -mean log(Lw) + sum(w) over
  // w >= 0, whose minimizer lies on the simplex. Each accepted step is
  // renormalized, which cannot increase f, so the log-likelihood trace is
  // non-decreasing.
  Eigen::VectorXd w = Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
  auto objective = [&](const Eigen::VectorXd& v) {
    const Eigen::VectorXd mix = cl.lik * v;
    if ((mix.array() <= 0.0).any()) return std::numeric_limits<double>::infinity();
    return -mix.array().log().sum() / n + v.sum();
  };
  EbnmResult res;
  double ll = mixture_loglik(cl, w);
  res.loglik_trace.push_back(ll);
  bool converged = false;
  int it = 0;
  for (; it < opts.max_iter; ++it) {
    const Eigen::VectorXd inv = (cl.lik * w).cwiseInverse();
    const Eigen::VectorXd g = Eigen::VectorXd::Ones(m) - cl.lik.transpose() * inv / n;
    if (g.minCoeff() >= -1e-10) {
      converged = true;
      break;
    }
    const Eigen::MatrixXd scaled = inv.asDiagonal() * cl.lik;
    Eigen::MatrixXd H = scaled.transpose() * scaled / n;
    H.diagonal().array() += 1e-10 * H.diagonal().maxCoeff();
    const Eigen::VectorXd y = nonneg_qp(H, g - H * w, w);
    const Eigen::VectorXd dir = y - w;
    const double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      converged = true;
      break;
    }
    const double f0 = objective(w);
    double t = 1.0;
    while (t > 1e-12 && objective(w + t * dir) > f0 + 1e-4 * t * slope) t *= 0.5;
    if (t <= 1e-12) break;
    Eigen::VectorXd next = (w + t * dir).cwiseMax(0.0);
    next /= next.sum();
    const double next_ll = mixture_loglik(cl, next);
    if (next_ll < ll) break;
    w = next;
    res.loglik_trace.push_back(next_ll);
    const bool done = std::abs(next_ll - ll) <= 1e-15 * std::max(1.0, std::abs(ll));
    ll = next_ll;
    if (done) {
      converged = true;
      break;
    }
  }

  std::vector<double> weights(w.data(), w.data() + w.size());
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (double& x : weights) x /= total;
  EbnmResult out = evaluate_prior(FittedPrior::mixture(grid, std::move(weights)), prob);
  out.converged = converged;
  out.iterations = it;
  out.loglik_trace = std::move(res.loglik_trace);
  return prefer_sparser(std::move(out), prob);
}

EbnmSolver make_solver(PriorFamily family, const EbnmOptions& opts) {
  return [family, opts](const NormalMeansProblem& prob, const FittedPrior* previous) {
    EbnmResult fitted = family == PriorFamily::PointNormal
                            ? fit_point_normal(prob, opts)
                            : (prob.n_informative() == 0
                                   ? fit_normal_scale_mixture(prob, {0.0}, opts)
                                   : fit_normal_scale_mixture(prob, default_scale_grid(prob), opts));
    if (previous && previous->family == family) {
      EbnmResult warm = evaluate_prior(*previous, prob);
      if (warm.loglik > fitted.loglik) return warm;
    }
    return fitted;
  };
}

}  // namespace ebmf
