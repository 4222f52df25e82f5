#ifndef TTJM_QALY_HPP
#define TTJM_QALY_HPP

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include <ttjm/data.hpp>
#include <ttjm/estimator.hpp>
#include <ttjm/likelihood.hpp>
#include <ttjm/splines.hpp>

namespace ttjm {

struct QalyEstimate {
  double horizon = 0.0;  // months
  int arm = 0;
  Eigen::VectorXd x_long;  // plug-in longitudinal covariates
  Eigen::VectorXd x_surv;  // plug-in survival covariates
  double estimate = 0.0;   // quality-adjusted months
  double se = 0.0;
  double lo95 = 0.0;
  double hi95 = 0.0;
  std::string warning;
};

namespace detail {

// E[ integral_0^{min(horizon,D)} utility(t) dt ] under the fitted model:
// discrete death masses P_m = exp(eta - exp(eta) L0(d_m)) L0[d_m] at the
// plug-in eta; inner integral of the mean outcome curve over prospective
// t in [0, min(horizon, d_m)], i.e. retrospective s in [d_m - min, d_m],
// computed exactly from the piecewise-cubic basis integrals.
inline double qaly_point(const ThetaParams& theta, const BreslowHazard& bh,
                         const SplineBasis& basis, int arm, const Eigen::VectorXd& x_long,
                         const Eigen::VectorXd& x_surv, double horizon,
                         double utility_scale) {
  const int k1 = basis.dim();
  Eigen::VectorXd curve_coef =
      theta.beta.segment(0, k1) + static_cast<double>(arm) * theta.beta.segment(k1, k1);
  double covariate_part = x_long.dot(theta.beta.segment(2 * k1, x_long.size()));
  double eta = arm * theta.alpha_A + x_surv.dot(theta.alpha_X);
  double ee = std::exp(eta);
  long double acc = 0.0L;
  for (int m = 0; m < bh.M(); ++m) {
    double d = bh.death_times[static_cast<std::size_t>(m)];
    double pm = std::exp(eta - ee * bh.cumulative[static_cast<std::size_t>(m)]) *
                bh.jumps[static_cast<std::size_t>(m)];
    double span = std::min(horizon, d);
    Eigen::RowVectorXd ib = basis.integrate(d - span, d);
    double inner = ib.dot(curve_coef) + span * covariate_part;
    acc += static_cast<long double>(pm * inner / utility_scale);
  }
  return static_cast<double>(acc);
}

}  // namespace detail

// Point estimate of mean QALY; no clipping of the fitted utility — values
// outside [0, 1] are flagged via the warning field.
inline QalyEstimate mean_qaly(const FitResult& fit, const BreslowHazard& bh, int arm,
                              const Eigen::VectorXd& x_long, const Eigen::VectorXd& x_surv,
                              double horizon, double utility_scale) {
  if (horizon <= 0.0) throw std::invalid_argument("mean_qaly: horizon must be > 0");
  if (utility_scale <= 0.0) throw std::invalid_argument("mean_qaly: utility_scale must be > 0");
  if (!fit.converged) throw std::invalid_argument("mean_qaly: fit did not converge");
  SplineBasis basis(fit.knots);
  QalyEstimate out;
  out.horizon = horizon;
  out.arm = arm;
  out.x_long = x_long;
  out.x_surv = x_surv;
  out.estimate = detail::qaly_point(fit.theta_hat, bh, basis, arm, x_long, x_surv, horizon,
                                    utility_scale);
  // check the fitted utility over the retrospective range actually evaluated
  const int k1 = fit.dims.k1;
  Eigen::VectorXd curve_coef = fit.theta_hat.beta.segment(0, k1) +
                               static_cast<double>(arm) * fit.theta_hat.beta.segment(k1, k1);
  double covariate_part =
      x_long.dot(fit.theta_hat.beta.segment(2 * k1, x_long.size()));
  double tmax = bh.death_times.empty() ? 0.0 : bh.death_times.back();
  for (double s = 0.0; s <= tmax; s += 0.25) {
    double u = (basis.eval(s).dot(curve_coef) + covariate_part) / utility_scale;
    if (u < 0.0 || u > 1.0) {
      out.warning = "fitted utility outside [0, 1] on the evaluated range (no clipping applied)";
      break;
    }
  }
  return out;
}

// Delta-method SE: central-difference gradient of the QALY functional over
// the unconstrained parameter vector, with the baseline hazard recomputed
// from the perturbed alpha.
inline QalyEstimate qaly_se_delta(const FitResult& fit, const Dataset& ds, int arm,
                                  const Eigen::VectorXd& x_long, const Eigen::VectorXd& x_surv,
                                  double horizon, double utility_scale) {
  BreslowHazard bh0 = breslow_jumps(fit.theta_hat.alpha_A, fit.theta_hat.alpha_X, ds);
  QalyEstimate out = mean_qaly(fit, bh0, arm, x_long, x_surv, horizon, utility_scale);
  if (!fit.covariance_ok) {
    out.warning += (out.warning.empty() ? "" : "; ");
    out.warning += "covariance unavailable; SE not computed";
    out.lo95 = out.hi95 = out.estimate;
    return out;
  }
  SplineBasis basis(fit.knots);
  const ModelDims& d = fit.dims;
  auto value_at = [&](const Eigen::VectorXd& v) {
    ThetaParams t = unpack_unconstrained(v, d);
    BreslowHazard bh = breslow_jumps(t.alpha_A, t.alpha_X, ds);
    return detail::qaly_point(t, bh, basis, arm, x_long, x_surv, horizon, utility_scale);
  };
  const Eigen::VectorXd& x = fit.theta_unconstrained;
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x, xm = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    double h = 1e-6 * std::max(1.0, std::abs(x[j]));
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    g[j] = (value_at(xp) - value_at(xm)) / (2.0 * h);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  double var = g.dot(fit.covariance * g);
  out.se = std::sqrt(std::max(0.0, var));
  out.lo95 = out.estimate - 1.96 * out.se;
  out.hi95 = out.estimate + 1.96 * out.se;
  return out;
}

// Arm-1 minus arm-0 QALY at common plug-in covariates, delta-method SE over
// the joint gradient of the contrast.
inline QalyEstimate qaly_diff(const FitResult& fit, const Dataset& ds,
                              const Eigen::VectorXd& x_long, const Eigen::VectorXd& x_surv,
                              double horizon, double utility_scale) {
  BreslowHazard bh0 = breslow_jumps(fit.theta_hat.alpha_A, fit.theta_hat.alpha_X, ds);
  SplineBasis basis(fit.knots);
  QalyEstimate out;
  out.horizon = horizon;
  out.arm = -1;  // contrast, not a single arm
  out.x_long = x_long;
  out.x_surv = x_surv;
  out.estimate = detail::qaly_point(fit.theta_hat, bh0, basis, 1, x_long, x_surv, horizon,
                                    utility_scale) -
                 detail::qaly_point(fit.theta_hat, bh0, basis, 0, x_long, x_surv, horizon,
                                    utility_scale);
  if (!fit.covariance_ok) {
    out.warning = "covariance unavailable; SE not computed";
    out.lo95 = out.hi95 = out.estimate;
    return out;
  }
  const ModelDims& d = fit.dims;
  auto contrast_at = [&](const Eigen::VectorXd& v) {
    ThetaParams t = unpack_unconstrained(v, d);
    BreslowHazard bh = breslow_jumps(t.alpha_A, t.alpha_X, ds);
    return detail::qaly_point(t, bh, basis, 1, x_long, x_surv, horizon, utility_scale) -
           detail::qaly_point(t, bh, basis, 0, x_long, x_surv, horizon, utility_scale);
  };
  const Eigen::VectorXd& x = fit.theta_unconstrained;
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x, xm = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    double h = 1e-6 * std::max(1.0, std::abs(x[j]));
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    g[j] = (contrast_at(xp) - contrast_at(xm)) / (2.0 * h);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  double var = g.dot(fit.covariance * g);
  out.se = std::sqrt(std::max(0.0, var));
  out.lo95 = out.estimate - 1.96 * out.se;
  out.hi95 = out.estimate + 1.96 * out.se;
  return out;
}

// Pooled sample means of (X, X_surv), the default plug-in covariates.
inline void mean_covariates(const Dataset& ds, Eigen::VectorXd& x_long,
                            Eigen::VectorXd& x_surv) {
  if (ds.subjects.empty()) throw std::invalid_argument("mean_covariates: empty dataset");
  x_long = Eigen::VectorXd::Zero(ds.subjects.front().x_long.size());
  x_surv = Eigen::VectorXd::Zero(ds.subjects.front().x_surv.size());
  for (const Subject& s : ds.subjects) {
    x_long += s.x_long;
    x_surv += s.x_surv;
  }
  x_long /= static_cast<double>(ds.subjects.size());
  x_surv /= static_cast<double>(ds.subjects.size());
}

}  // namespace ttjm

#endif  // TTJM_QALY_HPP
