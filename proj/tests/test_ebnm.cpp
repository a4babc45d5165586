#include <doctest.h>

#include "ebmf/ebnm.hpp"
#include "oracles.hpp"

#include <cmath>
#include <limits>
#include <random>

using namespace ebmf;
using Eigen::VectorXd;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

NormalMeansProblem problem(std::initializer_list<double> x, std::initializer_list<double> s) {
  VectorXd xv(static_cast<Eigen::Index>(x.size())), sv(static_cast<Eigen::Index>(s.size()));
  Eigen::Index i = 0;
  for (double v : x) xv[i++] = v;
  i = 0;
  for (double v : s) sv[i++] = v;
  return NormalMeansProblem(xv, sv);
}

double log_npdf(double x, double var) {
  return -0.5 * std::log(2.0 * M_PI * var) - 0.5 * x * x / var;
}

}  // namespace

TEST_CASE("problem validation") {
  CHECK_THROWS(NormalMeansProblem(VectorXd::Zero(2), VectorXd::Ones(3)));
  CHECK_THROWS(problem({1.0}, {0.0}));
  CHECK_THROWS(problem({1.0}, {std::nan("")}));
  CHECK_NOTHROW(problem({1.0}, {kInf}));
}

TEST_CASE("prior validation and null detection") {
  CHECK(FittedPrior::null_point_normal().is_null());
  CHECK(FittedPrior::point_normal(0.3, 0.0).is_null());
  CHECK_FALSE(FittedPrior::point_normal(0.3, 1.0).is_null());
  CHECK(FittedPrior::mixture({0.0, 1.0}, {1.0, 0.0}).is_null());
  CHECK_FALSE(FittedPrior::mixture({0.0, 1.0}, {0.5, 0.5}).is_null());
  CHECK_THROWS(FittedPrior::point_normal(1.5, 1.0));
  CHECK_THROWS(FittedPrior::point_normal(0.5, -1.0));
  CHECK_THROWS(FittedPrior::mixture({0.1, 1.0}, {0.5, 0.5}));
  CHECK_THROWS(FittedPrior::mixture({0.0, 1.0}, {0.5, 0.6}));
  CHECK_THROWS(FittedPrior::mixture({0.0, 1.0, 0.5}, {0.2, 0.4, 0.4}));
}

TEST_CASE("default grid") {
  SUBCASE("zero signal gives the minimal grid") {
    auto g = default_scale_grid(problem({0.0, 0.0}, {1.0, 1.0}));
    REQUIRE(g.size() == 2);
    CHECK(g[0] == 0.0);
    CHECK(g[1] == doctest::Approx(0.1).epsilon(1e-14));
  }
  SUBCASE("single large observation") {
    auto g = default_scale_grid(problem({10.0}, {1.0}));
    const double smax = 2.0 * std::sqrt(99.0);
    CHECK(g[0] == 0.0);
    CHECK(g[1] == doctest::Approx(0.1));
    CHECK(g[2] == doctest::Approx(0.1 * std::sqrt(2.0)));
    CHECK(g.back() >= smax);
    CHECK(g[g.size() - 2] < smax);
    for (std::size_t m = 2; m < g.size(); ++m)
      CHECK(g[m] / g[m - 1] == doctest::Approx(std::sqrt(2.0)));
  }
  SUBCASE("infinite entries are ignored") {
    auto g = default_scale_grid(problem({0.0, 50.0}, {1.0, kInf}));
    CHECK(g.size() == 2);
  }
  SUBCASE("no informative observations") {
    CHECK_THROWS_WITH_AS(default_scale_grid(problem({1.0}, {kInf})),
                         "no informative observations", EbnmError);
  }
}

TEST_CASE("marginal log-likelihood") {
  const auto null = FittedPrior::null_point_normal();
  CHECK(marginal_loglik(null, problem({0.0}, {1.0})) == doctest::Approx(-0.9189385332).epsilon(1e-10));
  CHECK(marginal_loglik(null, problem({2.0}, {1.0})) == doctest::Approx(-2.9189385332).epsilon(1e-10));

  const double expect = std::log(0.5 * std::exp(log_npdf(1.0, 1.0)) + 0.5 * std::exp(log_npdf(1.0, 2.0)));
  CHECK(marginal_loglik(FittedPrior::point_normal(0.5, 1.0), problem({1.0}, {1.0})) ==
        doctest::Approx(expect).epsilon(1e-12));
  CHECK(expect == doctest::Approx(std::log(0.5 * 0.2419707 + 0.5 * 0.2196956)).epsilon(1e-6));

  // Infinite s contributes nothing.
  CHECK(marginal_loglik(FittedPrior::point_normal(0.5, 1.0), problem({1.0, 7.0}, {1.0, kInf})) ==
        doctest::Approx(expect).epsilon(1e-12));

  // Point-normal is the two-component mixture.
  std::mt19937_64 rng(3);
  auto prob = oracle::random_problem(rng, 30);
  CHECK(marginal_loglik(FittedPrior::point_normal(0.4, 2.5), prob) ==
        doctest::Approx(marginal_loglik(FittedPrior::mixture({0.0, std::sqrt(2.5)}, {0.4, 0.6}), prob))
            .epsilon(1e-12));

  // Marginal density agrees with the quadrature normalizer.
  const auto g = FittedPrior::mixture({0.0, 0.5, 2.0}, {0.2, 0.3, 0.5});
  double ll = 0.0;
  for (Eigen::Index j = 0; j < prob.size(); ++j)
    ll += std::log(oracle::posterior_by_quadrature(g, prob.x[j], prob.s[j]).marginal);
  CHECK(marginal_loglik(g, prob) == doctest::Approx(ll).epsilon(1e-9));
}

TEST_CASE("posterior moments") {
  SUBCASE("point mass prior") {
    std::mt19937_64 rng(5);
    auto prob = oracle::random_problem(rng, 20);
    auto pm = posterior_moments(FittedPrior::null_point_normal(), prob);
    CHECK(pm.mean.isZero(0.0));
    CHECK(pm.mean2.isZero(0.0));
  }
  SUBCASE("conjugate normal") {
    auto pm = posterior_moments(FittedPrior::point_normal(0.0, 1.0), problem({1.0}, {1.0}));
    CHECK(pm.mean[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(pm.mean2[0] == doctest::Approx(0.75).epsilon(1e-14));
  }
  SUBCASE("point-normal against quadrature") {
    const auto g = FittedPrior::point_normal(0.9, 4.0);
    auto pm = posterior_moments(g, problem({3.0}, {1.0}));
    auto q = oracle::posterior_by_quadrature(g, 3.0, 1.0);
    CHECK(std::abs(pm.mean[0] - q.mean) < 1e-8);
    CHECK(std::abs(pm.mean2[0] - q.mean2) < 1e-8);
  }
  SUBCASE("infinite s returns the prior moments") {
    const auto g = FittedPrior::mixture({0.0, 1.0, 3.0}, {0.5, 0.25, 0.25});
    auto pm = posterior_moments(g, problem({4.0}, {kInf}));
    CHECK(pm.mean[0] == 0.0);
    CHECK(pm.mean2[0] == doctest::Approx(0.25 * 1.0 + 0.25 * 9.0).epsilon(1e-14));
  }
}

TEST_CASE("kl term") {
  // Normal prior N(0, v) and x ~ N(theta, s^2): the posterior is normal, so
  // E_q log(g/q) = -KL(q || g) has a closed form.
  const double v = 2.0, s = 0.7, x = 1.3;
  const auto g = FittedPrior::point_normal(0.0, v);
  auto prob = problem({x}, {s});
  auto pm = posterior_moments(g, prob);
  const double m = pm.mean[0], pv = pm.mean2[0] - m * m;
  const double neg_kl = -0.5 * (pv / v + m * m / v - 1.0 + std::log(v / pv));
  CHECK(kl_term(prob, marginal_loglik(g, prob), pm.mean, pm.mean2) ==
        doctest::Approx(neg_kl).epsilon(1e-10));

  auto null = evaluate_prior(FittedPrior::null_point_normal(), prob);
  CHECK(std::abs(null.kl) < 1e-12);
}

TEST_CASE("point-normal solver") {
  SUBCASE("pure null data") {
    auto r = fit_point_normal(NormalMeansProblem(VectorXd::Zero(100), VectorXd::Ones(100)));
    CHECK(r.prior.is_null());
    CHECK(r.post_mean.isZero(0.0));
    CHECK(r.post_mean2.isZero(0.0));
  }
  SUBCASE("tiny standard error") {
    auto r = fit_point_normal(problem({5.0}, {0.001}));
    CHECK(r.post_mean[0] >= 4.99);
    CHECK(r.post_mean[0] <= 5.001);
  }
  SUBCASE("local optimality") {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 10; ++rep) {
      auto prob = oracle::random_problem(rng, 50);
      auto r = fit_point_normal(prob);
      CHECK(r.loglik == doctest::Approx(marginal_loglik(r.prior, prob)).epsilon(1e-12));
      if (r.prior.pi0 <= 0.0 || r.prior.pi0 >= 1.0) continue;
      for (double dp : {-0.01, 0.01})
        for (double dv : {-0.01, 0.0, 0.01}) {
          const double pi0 = std::clamp(r.prior.pi0 + dp, 0.0, 1.0);
          auto alt = FittedPrior::point_normal(pi0, r.prior.var * (1.0 + dv));
          CHECK(r.loglik > marginal_loglik(alt, prob));
        }
    }
  }
  SUBCASE("posterior formula") {
    std::mt19937_64 rng(12);
    auto prob = oracle::random_problem(rng, 40);
    auto r = fit_point_normal(prob);
    const double pi0 = r.prior.pi0, var = r.prior.var;
    for (Eigen::Index j = 0; j < prob.size(); ++j) {
      const double s2 = prob.s[j] * prob.s[j];
      const double a = (1 - pi0) * std::exp(log_npdf(prob.x[j], var + s2));
      const double b = pi0 * std::exp(log_npdf(prob.x[j], s2));
      const double resp = a / (a + b);
      const double mu = prob.x[j] * var / (var + s2), v = var * s2 / (var + s2);
      CHECK(r.post_mean[j] == doctest::Approx(resp * mu).epsilon(1e-10));
      CHECK(r.post_mean2[j] == doctest::Approx(resp * (mu * mu + v)).epsilon(1e-10));
    }
  }
}

TEST_CASE("scale mixture solver") {
  SUBCASE("pure null data") {
    NormalMeansProblem prob(VectorXd::Zero(100), VectorXd::Ones(100));
    auto r = fit_normal_scale_mixture(prob, default_scale_grid(prob));
    CHECK(r.prior.weights[0] > 1.0 - 1e-6);
    CHECK(r.post_mean.isZero(1e-12));
  }
  SUBCASE("two-point grid") {
    // N(0;0,1) = 0.3989 beats N(0;0,2) = 0.2821, so all weight moves to zero.
    auto r = fit_normal_scale_mixture(problem({0.0}, {1.0}), {0.0, 1.0});
    CHECK(r.prior.weights[0] > 1.0 - 1e-6);
    CHECK(r.prior.weights[1] < 1e-6);
  }
  SUBCASE("moments against quadrature") {
    std::mt19937_64 rng(21);
    for (int rep = 0; rep < 5; ++rep) {
      auto prob = oracle::random_problem(rng, 50);
      auto r = fit_normal_scale_mixture(prob, default_scale_grid(prob));
      for (Eigen::Index j = 0; j < prob.size(); ++j) {
        auto q = oracle::posterior_by_quadrature(r.prior, prob.x[j], prob.s[j]);
        CHECK(std::abs(r.post_mean[j] - q.mean) < 1e-6);
        CHECK(std::abs(r.post_mean2[j] - q.mean2) < 1e-6);
      }
    }
  }
  SUBCASE("weights on the simplex") {
    std::mt19937_64 rng(22);
    auto prob = oracle::random_problem(rng, 50);
    auto r = fit_normal_scale_mixture(prob, default_scale_grid(prob));
    double sum = 0.0;
    for (double w : r.prior.weights) {
      CHECK(w >= 0.0);
      sum += w;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("infinite standard errors") {
  auto prob = problem({2.0, -3.0, 1.0, 8.0}, {1.0, 1.0, kInf, 0.5});
  for (auto family : {PriorFamily::PointNormal, PriorFamily::NormalScaleMixture}) {
    auto r = make_solver(family)(prob, nullptr);
    CHECK(r.post_mean[2] == 0.0);
    CHECK(r.post_mean2[2] == doctest::Approx(r.prior.second_moment()).epsilon(1e-12));
  }
  NormalMeansProblem none(VectorXd::Ones(3), VectorXd::Constant(3, kInf));
  for (auto family : {PriorFamily::PointNormal, PriorFamily::NormalScaleMixture}) {
    auto r = make_solver(family)(none, nullptr);
    CHECK(r.prior.is_null());
    CHECK(r.post_mean.isZero(0.0));
    CHECK(r.loglik == 0.0);
  }
}

TEST_CASE("solver invariants on random problems") {
  std::mt19937_64 rng(31);
  for (int rep = 0; rep < 20; ++rep) {
    auto prob = oracle::random_problem(rng, 10 + rep * 2, 1.0 + rep % 4, 0.2 * (rep % 5));
    for (auto family : {PriorFamily::PointNormal, PriorFamily::NormalScaleMixture}) {
      auto r = make_solver(family)(prob, nullptr);
      for (Eigen::Index j = 0; j < prob.size(); ++j) {
        CHECK(std::abs(r.post_mean[j]) <= std::abs(prob.x[j]) + 1e-15);
        CHECK(r.post_mean[j] * prob.x[j] >= 0.0);
        CHECK(r.post_mean2[j] >= r.post_mean[j] * r.post_mean[j] - 1e-12);
      }
      for (std::size_t t = 1; t < r.loglik_trace.size(); ++t)
        CHECK(r.loglik_trace[t] >= r.loglik_trace[t - 1] - 1e-10);
      if (r.prior.is_null()) {
        CHECK(r.post_mean.isZero(0.0));
        CHECK(r.post_mean2.isZero(0.0));
      }
    }
  }
}

TEST_CASE("scale-family consistency") {
  std::mt19937_64 rng(41);
  for (int rep = 0; rep < 5; ++rep) {
    auto prob = oracle::random_problem(rng, 40);
    const double c = 0.3 + 2.0 * rep;
    NormalMeansProblem scaled(c * prob.x, c * prob.s);

    auto a = fit_point_normal(prob);
    auto b = fit_point_normal(scaled);
    CHECK(std::abs(a.prior.pi0 - b.prior.pi0) < 1e-8);
    CHECK(std::abs(c * c * a.prior.var - b.prior.var) < 1e-8 * std::max(1.0, b.prior.var));
    CHECK((c * a.post_mean - b.post_mean).cwiseAbs().maxCoeff() < 1e-8 * c);

    auto grid = default_scale_grid(prob);
    std::vector<double> cgrid;
    for (double g : grid) cgrid.push_back(c * g);
    auto m1 = fit_normal_scale_mixture(prob, grid);
    auto m2 = fit_normal_scale_mixture(scaled, cgrid);
    for (std::size_t k = 0; k < grid.size(); ++k) {
      CHECK(std::abs(m1.prior.weights[k] - m2.prior.weights[k]) < 1e-8);
      CHECK(m2.prior.sds[k] == doctest::Approx(c * m1.prior.sds[k]).epsilon(1e-14));
    }
    CHECK((c * m1.post_mean - m2.post_mean).cwiseAbs().maxCoeff() < 1e-8 * c);
  }
}

TEST_CASE("ties go to the sparser prior") {
  // All x = 0 with a warm start that is not null: the null prior is at least
  // as good, so the solver must return it.
  NormalMeansProblem prob(VectorXd::Zero(10), VectorXd::Ones(10));
  auto solver = make_solver(PriorFamily::PointNormal);
  const auto prev = FittedPrior::point_normal(0.5, 1.0);
  auto r = solver(prob, &prev);
  CHECK(r.prior.is_null());
}

TEST_CASE("warm start never loses to the previous prior") {
  std::mt19937_64 rng(51);
  for (auto family : {PriorFamily::PointNormal, PriorFamily::NormalScaleMixture}) {
    auto solver = make_solver(family);
    for (int rep = 0; rep < 10; ++rep) {
      auto p1 = oracle::random_problem(rng, 30);
      auto p2 = oracle::random_problem(rng, 30);
      auto r1 = solver(p1, nullptr);
      auto r2 = solver(p2, &r1.prior);
      CHECK(r2.loglik >= marginal_loglik(r1.prior, p2) - 1e-10);
    }
  }
}

TEST_CASE("prior json round trip") {
  for (const auto& g : {FittedPrior::point_normal(0.25, 3.5),
                        FittedPrior::mixture({0.0, 0.1, 0.2}, {0.5, 0.25, 0.25})}) {
    auto j = to_json(g);
    auto back = prior_from_json(j);
    CHECK(back.family == g.family);
    CHECK(back.pi0 == g.pi0);
    CHECK(back.var == g.var);
    CHECK(back.sds == g.sds);
    CHECK(back.weights == g.weights);
  }
  CHECK(to_json(FittedPrior::point_normal(0.25, 3.5))["family"] == "point_normal");
  CHECK_THROWS(prior_from_json(nlohmann::json{{"family", "laplace"}}));
  CHECK(prior_family_from_string("point-normal") == PriorFamily::PointNormal);
  CHECK(prior_family_from_string("normal-mixture") == PriorFamily::NormalScaleMixture);
}
