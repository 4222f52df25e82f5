#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <ttjm/estimator.hpp>
#include <ttjm/naive.hpp>
#include <ttjm/splines.hpp>

#include "test_util.hpp"

using namespace ttjm;

namespace {

// Independent Breslow-ties partial log-likelihood, written directly from the
// definition: sum over events of x_i'a - log(sum_{j: t_j >= t_i} exp(x_j'a)).
double oracle_partial_loglik(const std::vector<double>& times, const std::vector<int>& events,
                             const std::vector<Eigen::VectorXd>& x, const Eigen::VectorXd& a) {
  double ll = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!events[i]) continue;
    double risk = 0.0;
    for (std::size_t j = 0; j < times.size(); ++j)
      if (times[j] >= times[i]) risk += std::exp(x[j].dot(a));
    ll += x[i].dot(a) - std::log(risk);
  }
  return ll;
}

// events interleaved across arms and covariate signs so the partial
// likelihood has an interior maximum (no monotone-likelihood separation)
Dataset cox_toy() {
  Dataset ds;
  std::vector<double> times = {1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 5.0};
  std::vector<int> events = {1, 1, 0, 1, 1, 0, 1, 1};
  std::vector<double> xs = {0.2, -0.1, 0.5, 0.3, -0.4, 0.1, 0.0, -0.2};
  std::vector<int> arms = {0, 1, 0, 1, 0, 1, 0, 1};
  for (int i = 0; i < 8; ++i) {
    Subject s;
    s.id = "t" + std::to_string(i);
    s.arm = arms[static_cast<std::size_t>(i)];
    s.obs_time = times[static_cast<std::size_t>(i)];
    s.event = events[static_cast<std::size_t>(i)] == 1;
    s.x_long = Eigen::VectorXd::Zero(1);
    s.x_surv = Eigen::VectorXd::Constant(1, xs[static_cast<std::size_t>(i)]);
    s.z_design = Eigen::VectorXd::Ones(1);
    ds.subjects.push_back(std::move(s));
  }
  return apply_efron_adjustment(ds);
}

}  // namespace

TEST_CASE("cox partial likelihood matches a direct hand-coded oracle") {
  Dataset ds = cox_toy();
  NaiveFit nf;
  fit_cox_partial(ds, nf);
  CHECK(nf.surv_converged);

  std::vector<double> times;
  std::vector<int> events;
  std::vector<Eigen::VectorXd> x;
  for (const Subject& s : ds.subjects) {
    times.push_back(s.obs_time);
    events.push_back(s.event ? 1 : 0);
    Eigen::VectorXd xi(2);
    xi << s.arm, s.x_surv[0];
    x.push_back(xi);
  }
  // independent Newton on the oracle likelihood via numeric derivatives
  Eigen::VectorXd a = Eigen::VectorXd::Zero(2);
  for (int it = 0; it < 200; ++it) {
    Eigen::VectorXd g(2);
    Eigen::MatrixXd H(2, 2);
    const double h = 1e-5;
    auto f = [&](const Eigen::VectorXd& v) { return oracle_partial_loglik(times, events, x, v); };
    for (int j = 0; j < 2; ++j) {
      Eigen::VectorXd p = a, m = a;
      p[j] += h;
      m[j] -= h;
      g[j] = (f(p) - f(m)) / (2 * h);
    }
    double f0 = f(a);
    for (int i = 0; i < 2; ++i) {
      Eigen::VectorXd p = a, m = a;
      p[i] += h;
      m[i] -= h;
      H(i, i) = (f(p) - 2 * f0 + f(m)) / (h * h);
    }
    {
      Eigen::VectorXd pp = a, pm = a, mp = a, mm = a;
      pp[0] += h; pp[1] += h;
      pm[0] += h; pm[1] -= h;
      mp[0] -= h; mp[1] += h;
      mm[0] -= h; mm[1] -= h;
      H(0, 1) = H(1, 0) = (f(pp) - f(pm) - f(mp) + f(mm)) / (4 * h * h);
    }
    Eigen::VectorXd step = (-H).ldlt().solve(g);
    a += step;
    if (step.cwiseAbs().maxCoeff() < 1e-12) break;
  }
  CHECK(nf.alpha_A_hat == doctest::Approx(a[0]).epsilon(1e-8));
  CHECK(nf.alpha_X_hat[0] == doctest::Approx(a[1]).epsilon(1e-8));
}

TEST_CASE("cox partial likelihood: symmetric design gives alpha near zero") {
  Dataset ds;
  // two arms with mirrored event patterns
  std::vector<double> times = {1, 2, 3, 4, 1, 2, 3, 4};
  for (int i = 0; i < 8; ++i) {
    Subject s;
    s.id = "s" + std::to_string(i);
    s.arm = i < 4 ? 0 : 1;
    s.obs_time = times[static_cast<std::size_t>(i)];
    s.event = true;
    s.x_long = Eigen::VectorXd::Zero(1);
    s.x_surv = Eigen::VectorXd::Zero(0);
    s.z_design = Eigen::VectorXd::Ones(1);
    ds.subjects.push_back(std::move(s));
  }
  NaiveFit nf;
  fit_cox_partial(apply_efron_adjustment(ds), nf);
  CHECK(nf.surv_converged);
  CHECK(std::abs(nf.alpha_A_hat) < 1e-8);
}

TEST_CASE("breslow estimator at the partial-likelihood MLE is finite and positive") {
  Dataset ds = cox_toy();
  NaiveFit nf;
  fit_cox_partial(ds, nf);
  BreslowHazard bh = breslow_jumps(nf.alpha_A_hat, nf.alpha_X_hat, ds);
  CHECK(bh.M() > 0);
  for (double j : bh.jumps) CHECK(j > 0.0);
  double last = bh.cumulative.back();
  CHECK(std::isfinite(last));
  CHECK(last > 0.0);
}

TEST_CASE("naive LMM flags the one-measurement identifiability boundary") {
  Dataset ds;
  for (int i = 0; i < 12; ++i) {
    Subject s;
    s.id = "s" + std::to_string(i);
    s.arm = i % 2;
    s.obs_time = 10.0 + i;
    s.event = true;
    s.x_long = Eigen::VectorXd::Zero(0);
    s.x_surv = Eigen::VectorXd::Zero(0);
    s.z_design = Eigen::VectorXd::Ones(1);
    s.measurements.push_back({5.0, 40.0 + i});  // one measurement each
    ds.subjects.push_back(std::move(s));
  }
  Dataset adj = apply_efron_adjustment(ds);
  KnotVector kv = place_knots(pooled_decedent_retrospective_times(adj), 2);
  SplineBasis basis(kv);
  NaiveFit nf;
  fit_naive_lmm(adj, basis, nf, /*compute_covariance=*/true);
  // tau^2 and sigma^2 cannot be separated with a single measurement per subject
  CHECK_FALSE(nf.long_identifiable);
}

TEST_CASE("naive LMM recovers the toy generator on decedents") {
  ttjm_test::ToyConfig cfg;
  cfg.n = 150;
  cfg.censoring = false;
  Dataset ds = apply_efron_adjustment(ttjm_test::make_toy_dataset(cfg));
  KnotVector kv = place_knots(pooled_decedent_retrospective_times(ds), 2);
  SplineBasis basis(kv);
  NaiveFit nf;
  fit_naive_lmm(ds, basis, nf, /*compute_covariance=*/false);
  CHECK(nf.long_converged);
  // with k1 = 2 the basis spans linear trends; the generator's mean is linear
  // in t*, so the covariate coefficients should land near truth
  const int k1 = 2;
  CHECK(nf.beta_hat[2 * k1] == doctest::Approx(0.5).epsilon(0.25));
  CHECK(nf.tau_hat == doctest::Approx(cfg.tau).epsilon(0.25));
}
