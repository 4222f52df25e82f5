#ifndef TTJM_ESTIMATOR_HPP
#define TTJM_ESTIMATOR_HPP

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include <ttjm/data.hpp>
#include <ttjm/likelihood.hpp>
#include <ttjm/naive.hpp>
#include <ttjm/optim.hpp>
#include <ttjm/splines.hpp>

namespace ttjm {

struct FitOptions {
  int max_iterations = 500;
  bool compute_covariance = true;
  bool use_naive_start = true;
};

struct FitResult {
  ThetaParams theta_hat;
  Eigen::VectorXd theta_unconstrained;
  Eigen::MatrixXd covariance;  // over the unconstrained vector
  bool covariance_ok = false;
  double loglik = 0.0;
  int k1 = 0;
  KnotVector knots;
  ModelDims dims;
  bool converged = false;
  int iterations = 0;
  double aic = 0.0;
  double bic = 0.0;
  int n_subjects = 0;
  std::string message;

  Eigen::VectorXd se() const {
    return covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  }
};

struct CurveEstimate {
  std::vector<double> grid;
  Eigen::VectorXd value, se, lo95, hi95;
  std::string warning;
};

enum class CurveKind { Mu, Treatment, MuPlusTreatment };

// Pooled retrospective measurement times of group-1 subjects, both arms;
// the only fully observed retrospective times, used for knot placement.
inline std::vector<double> pooled_decedent_retrospective_times(const Dataset& ds) {
  std::vector<double> ts;
  for (const Subject& s : ds.subjects) {
    if (!s.event || s.efron_flipped || !s.has_measurements()) continue;
    for (double t : retrospective_times(s, s.obs_time)) ts.push_back(t);
  }
  return ts;
}

inline double aic_of(double loglik, const ModelDims& d) {
  return -2.0 * loglik + 2.0 * d.n_params();
}
inline double bic_of(double loglik, const ModelDims& d, int n_subjects) {
  return -2.0 * loglik + std::log(static_cast<double>(n_subjects)) * d.n_params();
}

// Quasi-Newton maximization of the joint log-likelihood on the unconstrained
// scale; starting values from the naive fits; covariance from the negated
// central-difference Hessian at the optimum.
inline FitResult fit(const Dataset& ds, int k1, const FitOptions& options = {}) {
  if (!ds.efron_applied) throw std::logic_error("fit: dataset must be Efron-adjusted");
  KnotVector kv = place_knots(pooled_decedent_retrospective_times(ds), k1);
  SplineBasis basis(kv);
  JointLikelihood lik(ds, basis);
  const ModelDims& d = lik.dims();

  ThetaParams start;
  start.alpha_X = Eigen::VectorXd::Zero(d.Q);
  start.beta = Eigen::VectorXd::Zero(d.n_beta());
  start.sigma_chol = Eigen::MatrixXd::Identity(d.L, d.L);
  start.tau = 1.0;
  if (options.use_naive_start) {
    try {
      NaiveFit nf = fit_naive(ds, basis, /*compute_covariance=*/false);
      start.alpha_A = nf.alpha_A_hat;
      if (nf.alpha_X_hat.size() == d.Q) start.alpha_X = nf.alpha_X_hat;
      if (nf.beta_hat.size() == d.n_beta()) start.beta = nf.beta_hat;
      if (nf.sigma_chol_hat.rows() == d.L) start.sigma_chol = nf.sigma_chol_hat;
      if (nf.tau_hat > 0.0 && std::isfinite(nf.tau_hat)) start.tau = nf.tau_hat;
    } catch (const std::exception&) {
      // fall back to neutral start
    }
  }

  MaximizeOptions mopts;
  mopts.max_iterations = options.max_iterations;
  auto fn = [&](const Eigen::VectorXd& v) { return lik.value_unconstrained(v); };
  auto gr = [&](const Eigen::VectorXd& v) { return lik.gradient_unconstrained(v); };
  MaximizeResult res = maximize_bfgs(fn, pack_unconstrained(start, d), mopts, gr);

  FitResult out;
  out.theta_unconstrained = res.x;
  out.theta_hat = unpack_unconstrained(res.x, d);
  out.loglik = res.f;
  out.k1 = k1;
  out.knots = kv;
  out.dims = d;
  out.converged = res.converged;
  out.iterations = res.iterations;
  out.message = res.message;
  out.n_subjects = static_cast<int>(ds.subjects.size());
  out.aic = aic_of(res.f, d);
  out.bic = bic_of(res.f, d, out.n_subjects);

  if (options.compute_covariance) {
    Eigen::MatrixXd H = central_hessian(fn, res.x);
    Eigen::MatrixXd info = -0.5 * (H + H.transpose());
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    Eigen::MatrixXd cov =
        ldlt.solve(Eigen::MatrixXd::Identity(d.n_unconstrained(), d.n_unconstrained()));
    if (ldlt.info() == Eigen::Success && cov.allFinite() &&
        cov.diagonal().minCoeff() > -1e-8) {
      out.covariance = 0.5 * (cov + cov.transpose());
      out.covariance_ok = true;
    } else {
      out.covariance = Eigen::MatrixXd::Constant(d.n_unconstrained(), d.n_unconstrained(),
                                                 std::numeric_limits<double>::quiet_NaN());
      out.covariance_ok = false;
    }
  }
  return out;
}

// Pointwise curve estimate with delta-method CI from the relevant beta
// sub-block of the covariance.
inline CurveEstimate curve_ci(const FitResult& fit, const std::vector<double>& grid,
                              CurveKind which) {
  const ModelDims& d = fit.dims;
  SplineBasis basis(fit.knots);
  CurveEstimate out;
  out.grid = grid;
  const auto n = static_cast<Eigen::Index>(grid.size());
  out.value.resize(n);
  out.se.resize(n);
  out.lo95.resize(n);
  out.hi95.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (grid[static_cast<std::size_t>(i)] > 2.0 * fit.knots.boundary_hi)
      out.warning = "grid extends beyond twice the upper boundary knot; extrapolation only";
  }
  const int k1 = d.k1;
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::RowVectorXd b = basis.eval(grid[static_cast<std::size_t>(i)]);
    // coefficient-space contrast over the unconstrained vector
    Eigen::VectorXd contrast = Eigen::VectorXd::Zero(d.n_unconstrained());
    if (which == CurveKind::Mu || which == CurveKind::MuPlusTreatment)
      contrast.segment(d.off_beta(), k1) = b.transpose();
    if (which == CurveKind::Treatment || which == CurveKind::MuPlusTreatment)
      contrast.segment(d.off_beta() + k1, k1) = b.transpose();
    out.value[i] = contrast.segment(d.off_beta(), d.n_beta())
                       .dot(fit.theta_unconstrained.segment(d.off_beta(), d.n_beta()));
    double var = fit.covariance_ok ? contrast.dot(fit.covariance * contrast) : 0.0;
    out.se[i] = std::sqrt(std::max(0.0, var));
    out.lo95[i] = out.value[i] - 1.96 * out.se[i];
    out.hi95[i] = out.value[i] + 1.96 * out.se[i];
  }
  return out;
}

enum class KnotCriterion { AIC, BIC };

struct KnotSweepRow {
  int k1 = 0;
  bool ok = false;
  bool converged = false;
  double loglik = 0.0;
  int n_params = 0;
  double aic = 0.0;
  double bic = 0.0;
  std::string error;
};

struct KnotSelection {
  int k1_opt = 0;
  std::vector<KnotSweepRow> table;
  FitResult best_fit;
};

// Fits every k1 in [k_min, k_max]; returns the argmin of the criterion with
// ties broken toward smaller k1. Failed fits are recorded and excluded.
inline KnotSelection select_knots(const Dataset& ds, int k_min, int k_max,
                                  KnotCriterion criterion, const FitOptions& options = {}) {
  if (k_min < 2 || k_min > k_max)
    throw std::invalid_argument("select_knots: need 2 <= k_min <= k_max");
  KnotSelection sel;
  std::vector<FitResult> fits;
  FitOptions sweep_opts = options;
  sweep_opts.compute_covariance = false;
  for (int k = k_min; k <= k_max; ++k) {
    KnotSweepRow row;
    row.k1 = k;
    try {
      FitResult f = fit(ds, k, sweep_opts);
      row.ok = true;
      row.converged = f.converged;
      row.loglik = f.loglik;
      row.n_params = f.dims.n_params();
      row.aic = f.aic;
      row.bic = f.bic;
      fits.push_back(std::move(f));
    } catch (const std::exception& e) {
      row.error = e.what();
      fits.emplace_back();
    }
    sel.table.push_back(row);
  }
  auto score = [&](const KnotSweepRow& r) { return criterion == KnotCriterion::AIC ? r.aic : r.bic; };
  int best = -1;
  bool best_converged = false;
  for (std::size_t i = 0; i < sel.table.size(); ++i) {
    const auto& r = sel.table[i];
    if (!r.ok) continue;
    // prefer converged fits; among equals, strictly smaller criterion wins,
    // so ties go to the smaller k1 encountered first
    bool better = best < 0 ||
                  (r.converged && !best_converged) ||
                  (r.converged == best_converged &&
                   score(r) < score(sel.table[static_cast<std::size_t>(best)]));
    if (better) {
      best = static_cast<int>(i);
      best_converged = r.converged;
    }
  }
  if (best < 0) throw std::runtime_error("select_knots: all candidate fits failed");
  sel.k1_opt = sel.table[static_cast<std::size_t>(best)].k1;
  sel.best_fit = std::move(fits[static_cast<std::size_t>(best)]);
  if (options.compute_covariance) {
    // covariance only for the winner
    JointLikelihood lik(ds, SplineBasis(sel.best_fit.knots));
    auto fn = [&](const Eigen::VectorXd& v) { return lik.value_unconstrained(v); };
    Eigen::MatrixXd H = central_hessian(fn, sel.best_fit.theta_unconstrained);
    Eigen::MatrixXd info = -0.5 * (H + H.transpose());
    const int nu = sel.best_fit.dims.n_unconstrained();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(nu, nu));
    if (ldlt.info() == Eigen::Success && cov.allFinite() && cov.diagonal().minCoeff() > -1e-8) {
      sel.best_fit.covariance = 0.5 * (cov + cov.transpose());
      sel.best_fit.covariance_ok = true;
    } else {
      sel.best_fit.covariance =
          Eigen::MatrixXd::Constant(nu, nu, std::numeric_limits<double>::quiet_NaN());
      sel.best_fit.covariance_ok = false;
    }
  }
  return sel;
}

}  // namespace ttjm

#endif  // TTJM_ESTIMATOR_HPP
