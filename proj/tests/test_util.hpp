#ifndef TTJM_TEST_UTIL_HPP
#define TTJM_TEST_UTIL_HPP

#include <random>
#include <string>
#include <vector>

#include <ttjm/data.hpp>

namespace ttjm_test {

// Small hand-rolled trial generator for likelihood-level tests. Not the
// simulation module: kept independent so tests do not lean on the code they
// check.
struct ToyConfig {
  int n = 40;
  double death_rate = 0.08;
  double censor_rate = 0.05;
  double meas_start = 1.0;
  double meas_step = 1.0;
  double sigma = 3.0;
  double tau = 2.0;
  bool censoring = true;
  unsigned seed = 1234;
};

inline ttjm::Dataset make_toy_dataset(const ToyConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  ttjm::Dataset ds;
  for (int i = 0; i < cfg.n; ++i) {
    ttjm::Subject s;
    s.id = "s" + std::to_string(i);
    s.arm = i % 2;
    double x1 = unif(rng) * 10.0;
    s.x_long = Eigen::VectorXd::Constant(1, x1);
    s.x_surv = Eigen::VectorXd::Constant(1, x1);
    s.z_design = Eigen::VectorXd::Ones(1);
    double death = -std::log(unif(rng)) / cfg.death_rate;
    double cens = cfg.censoring ? -std::log(unif(rng)) / cfg.censor_rate : death + 1.0;
    s.event = death <= cens;
    s.obs_time = std::min(death, cens);
    double b = cfg.sigma * normal(rng);
    for (double t = cfg.meas_start; t <= s.obs_time; t += cfg.meas_step) {
      double tstar = death - t;
      double mean = 50.0 - 0.8 * tstar + 2.0 * s.arm + 0.5 * x1;
      s.measurements.push_back({t, mean + b + cfg.tau * normal(rng)});
    }
    ds.subjects.push_back(std::move(s));
  }
  return ds;
}

}  // namespace ttjm_test

#endif
