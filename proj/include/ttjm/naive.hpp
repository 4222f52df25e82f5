#ifndef TTJM_NAIVE_HPP
#define TTJM_NAIVE_HPP

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include <ttjm/data.hpp>
#include <ttjm/likelihood.hpp>
#include <ttjm/optim.hpp>
#include <ttjm/splines.hpp>

namespace ttjm {

// Decedents-only longitudinal estimates plus full-sample Cox partial
// likelihood estimates; used both as a comparator and as starting values for
// the joint fit.
struct NaiveFit {
  // longitudinal part (group-1 subjects only)
  Eigen::VectorXd beta_hat;       // 2k1 + P spline/psi coefficients
  Eigen::MatrixXd sigma_chol_hat; // L x L
  double tau_hat = 0.0;
  Eigen::MatrixXd cov_long;       // over (beta, chol(Sigma) packed, log tau)
  double loglik_long = 0.0;
  bool long_converged = false;
  bool long_identifiable = true;

  // survival part (all subjects)
  double alpha_A_hat = 0.0;
  Eigen::VectorXd alpha_X_hat;
  Eigen::MatrixXd cov_surv;       // over (alpha_A, alpha_X)
  double loglik_surv = 0.0;
  bool surv_converged = false;
};

// Marginal Gaussian log-likelihood over group-1 subjects with retrospective
// times from the observed deaths. Parameter vector: (beta, packed chol, log tau).
class DecedentGaussianLikelihood {
 public:
  DecedentGaussianLikelihood(const Dataset& ds, const SplineBasis& basis) {
    dims_.k1 = basis.dim();
    dims_.P = ds.subjects.empty() ? 0 : static_cast<int>(ds.subjects.front().x_long.size());
    dims_.L = ds.subjects.empty() ? 0 : static_cast<int>(ds.subjects.front().z_design.size());
    for (const Subject& s : ds.subjects) {
      if (!s.event || s.efron_flipped || !s.has_measurements()) continue;
      Item it;
      it.y = outcome_vector_retrospective(s);
      it.design = detail::design_matrix(basis, s, s.obs_time);
      it.z = detail::z_matrix(s);
      items_.push_back(std::move(it));
    }
    if (items_.empty())
      throw std::invalid_argument("DecedentGaussianLikelihood: no decedents with measurements");
  }

  int n_beta() const { return dims_.n_beta(); }
  int n_chol() const { return dims_.n_chol(); }
  int dim() const { return n_beta() + n_chol() + 1; }
  int n_subjects() const { return static_cast<int>(items_.size()); }
  long n_measurements() const {
    long n = 0;
    for (const auto& it : items_) n += it.y.size();
    return n;
  }

  void unpack(const Eigen::VectorXd& v, Eigen::VectorXd& beta, Eigen::MatrixXd& chol,
              double& tau) const {
    beta = v.head(n_beta());
    chol = Eigen::MatrixXd::Zero(dims_.L, dims_.L);
    int k = n_beta();
    for (int j = 0; j < dims_.L; ++j)
      for (int i = j; i < dims_.L; ++i)
        chol(i, j) = (i == j) ? std::exp(v[k++]) : v[k++];
    tau = std::exp(v[v.size() - 1]);
  }

  Eigen::VectorXd pack(const Eigen::VectorXd& beta, const Eigen::MatrixXd& chol,
                       double tau) const {
    Eigen::VectorXd v(dim());
    v.head(n_beta()) = beta;
    int k = n_beta();
    for (int j = 0; j < dims_.L; ++j)
      for (int i = j; i < dims_.L; ++i)
        v[k++] = (i == j) ? std::log(chol(i, j)) : chol(i, j);
    v[v.size() - 1] = std::log(tau);
    return v;
  }

  double value(const Eigen::VectorXd& v) const {
    Eigen::VectorXd beta;
    Eigen::MatrixXd chol;
    double tau;
    unpack(v, beta, chol, tau);
    Eigen::MatrixXd sigma = chol * chol.transpose();
    long double acc = 0.0L;
    for (const auto& it : items_) {
      const auto n = it.y.size();
      Eigen::MatrixXd V = tau * tau * Eigen::MatrixXd::Identity(n, n) +
                          it.z * sigma * it.z.transpose();
      Eigen::LLT<Eigen::MatrixXd> llt(V);
      if (llt.info() != Eigen::Success) throw LikelihoodError("naive LMM: V not PD");
      double logdet = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
      Eigen::VectorXd r = it.y - it.design * beta;
      acc += -0.5 * (n * 1.8378770664093454836 + logdet + r.dot(llt.solve(r)));
    }
    return static_cast<double>(acc);
  }

  // OLS coefficients and pooled residual variance for starting values
  void ols_start(Eigen::VectorXd& beta, double& resid_var) const {
    long rows = n_measurements();
    Eigen::MatrixXd X(rows, n_beta());
    Eigen::VectorXd y(rows);
    long r = 0;
    for (const auto& it : items_) {
      X.middleRows(r, it.y.size()) = it.design;
      y.segment(r, it.y.size()) = it.y;
      r += it.y.size();
    }
    beta = (X.transpose() * X).ldlt().solve(X.transpose() * y);
    Eigen::VectorXd resid = y - X * beta;
    resid_var = resid.squaredNorm() / std::max<long>(1, rows - n_beta());
  }

 private:
  struct Item {
    Eigen::VectorXd y;
    Eigen::MatrixXd design;
    Eigen::MatrixXd z;
  };
  ModelDims dims_;
  std::vector<Item> items_;
};

// Breslow-ties Cox partial likelihood over (alpha_A, alpha_X); value,
// analytic gradient and Hessian.
class CoxPartialLikelihood {
 public:
  explicit CoxPartialLikelihood(const Dataset& ds) {
    const int q = ds.subjects.empty() ? 0 : static_cast<int>(ds.subjects.front().x_surv.size());
    p_ = 1 + q;
    for (const Subject& s : ds.subjects) {
      Eigen::VectorXd x(p_);
      x[0] = s.arm;
      x.tail(q) = s.x_surv;
      covs_.push_back(x);
      times_.push_back(s.obs_time);
      events_.push_back(s.event);
    }
    bool any_event = false;
    for (bool e : events_) any_event |= e;
    if (!any_event) throw std::invalid_argument("CoxPartialLikelihood: no events");
  }

  int dim() const { return p_; }

  double value(const Eigen::VectorXd& a) const {
    double v;
    Eigen::VectorXd g(p_);
    Eigen::MatrixXd H(p_, p_);
    eval(a, v, g, H, false);
    return v;
  }

  void eval(const Eigen::VectorXd& a, double& value, Eigen::VectorXd& grad,
            Eigen::MatrixXd& hess, bool with_derivs = true) const {
    // distinct death times descending sweep
    std::vector<int> order(times_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int i, int j) { return times_[i] > times_[j]; });

    std::vector<double> dts;
    for (std::size_t i = 0; i < times_.size(); ++i)
      if (events_[i]) dts.push_back(times_[i]);
    std::sort(dts.begin(), dts.end(), std::greater<>());
    dts.erase(std::unique(dts.begin(), dts.end()), dts.end());

    long double s0 = 0.0L;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p_);
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p_, p_);
    long double ll = 0.0L;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(p_);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(p_, p_);

    std::size_t w = 0;
    std::vector<int> death_count(dts.size(), 0);
    std::vector<Eigen::VectorXd> death_xsum(dts.size(), Eigen::VectorXd::Zero(p_));
    for (std::size_t i = 0; i < times_.size(); ++i) {
      if (!events_[i]) continue;
      auto it = std::lower_bound(dts.begin(), dts.end(), times_[i], std::greater<>());
      std::size_t m = static_cast<std::size_t>(it - dts.begin());
      death_count[m] += 1;
      death_xsum[m] += covs_[i];
    }
    for (std::size_t m = 0; m < dts.size(); ++m) {
      double d = dts[m];
      while (w < order.size() && times_[static_cast<std::size_t>(order[w])] >= d) {
        int i = order[w++];
        double e = std::exp(a.dot(covs_[static_cast<std::size_t>(i)]));
        s0 += e;
        if (with_derivs) {
          s1 += e * covs_[static_cast<std::size_t>(i)];
          s2 += e * covs_[static_cast<std::size_t>(i)] * covs_[static_cast<std::size_t>(i)].transpose();
        }
      }
      double dcount = death_count[m];
      ll += a.dot(death_xsum[m]) - dcount * std::log(static_cast<double>(s0));
      if (with_derivs) {
        Eigen::VectorXd xbar = s1 / static_cast<double>(s0);
        g += death_xsum[m] - dcount * xbar;
        h -= dcount * (s2 / static_cast<double>(s0) - xbar * xbar.transpose());
      }
    }
    value = static_cast<double>(ll);
    if (with_derivs) {
      grad = g;
      hess = h;
    }
  }

 private:
  int p_ = 0;
  std::vector<Eigen::VectorXd> covs_;
  std::vector<double> times_;
  std::vector<bool> events_;
};

// Newton maximization of the partial likelihood with step halving.
inline void fit_cox_partial(const Dataset& ds, NaiveFit& out) {
  CoxPartialLikelihood pl(ds);
  const int p = pl.dim();
  Eigen::VectorXd a = Eigen::VectorXd::Zero(p);
  double v;
  Eigen::VectorXd g(p);
  Eigen::MatrixXd H(p, p);
  pl.eval(a, v, g, H);
  bool converged = false;
  for (int it = 0; it < 100; ++it) {
    if (g.cwiseAbs().maxCoeff() < 1e-10) {
      converged = true;
      break;
    }
    Eigen::VectorXd step = (-H).ldlt().solve(g);
    if (!step.allFinite()) break;
    double t = 1.0;
    double v_new = v;
    Eigen::VectorXd a_new = a;
    for (int halves = 0; halves < 40; ++halves) {
      a_new = a + t * step;
      v_new = pl.value(a_new);
      if (std::isfinite(v_new) && v_new >= v - 1e-14 * std::abs(v)) break;
      t *= 0.5;
    }
    if (!(v_new > v) && g.cwiseAbs().maxCoeff() < 1e-8) {
      a = a_new;
      converged = true;
      pl.eval(a, v, g, H);
      break;
    }
    a = a_new;
    pl.eval(a, v, g, H);
    v = v_new;
  }
  // monotone likelihood / separation shows up as runaway coefficients
  if (a.cwiseAbs().maxCoeff() > 20.0) converged = false;
  out.alpha_A_hat = a[0];
  out.alpha_X_hat = a.tail(p - 1);
  out.loglik_surv = v;
  out.surv_converged = converged;
  Eigen::MatrixXd info = -H;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(info);
  if (lu.isInvertible())
    out.cov_surv = lu.inverse();
  else {
    out.cov_surv = Eigen::MatrixXd::Constant(p, p, std::numeric_limits<double>::quiet_NaN());
    out.surv_converged = false;
  }
}

// Exact marginal-Gaussian ML on group-1 subjects only.
inline void fit_naive_lmm(const Dataset& ds, const SplineBasis& basis, NaiveFit& out,
                          bool compute_covariance = true) {
  DecedentGaussianLikelihood gl(ds, basis);
  if (gl.n_subjects() < basis.dim())
    throw std::invalid_argument("fit_naive_lmm: only " + std::to_string(gl.n_subjects()) +
                                " decedents with measurements for a basis of dimension " +
                                std::to_string(basis.dim()));
  Eigen::VectorXd beta0;
  double resid_var;
  gl.ols_start(beta0, resid_var);
  resid_var = std::max(resid_var, 1e-4);
  const int L = (ds.subjects.empty() ? 0 : static_cast<int>(ds.subjects.front().z_design.size()));
  Eigen::MatrixXd chol0 = std::sqrt(resid_var / (2.0 * std::max(1, L))) *
                          Eigen::MatrixXd::Identity(L, L);
  Eigen::VectorXd x0 = gl.pack(beta0, chol0, std::sqrt(resid_var / 2.0));

  MaximizeOptions opts;
  auto fn = [&](const Eigen::VectorXd& v) { return gl.value(v); };
  MaximizeResult res = maximize_bfgs(fn, x0, opts);

  Eigen::MatrixXd chol;
  double tau;
  gl.unpack(res.x, out.beta_hat, chol, tau);
  out.sigma_chol_hat = chol;
  out.tau_hat = tau;
  out.loglik_long = res.f;
  out.long_converged = res.converged;
  if (compute_covariance) {
    Eigen::MatrixXd H = central_hessian(fn, res.x);
    Eigen::MatrixXd info = -0.5 * (H + H.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(info);
    // a one-measurement-per-subject design cannot split tau^2 from Sigma:
    // the information matrix then has a (numerically) null direction
    bool full_rank = es.eigenvalues().minCoeff() >
                     1e-8 * std::max(1.0, es.eigenvalues().maxCoeff());
    Eigen::FullPivLU<Eigen::MatrixXd> lu(info);
    if (full_rank && lu.isInvertible()) {
      out.cov_long = lu.inverse();
      out.long_identifiable = out.cov_long.diagonal().minCoeff() >= 0.0;
    } else {
      out.cov_long = Eigen::MatrixXd::Constant(gl.dim(), gl.dim(),
                                               std::numeric_limits<double>::quiet_NaN());
      out.long_identifiable = false;
    }
  }
}

inline NaiveFit fit_naive(const Dataset& ds, const SplineBasis& basis,
                          bool compute_covariance = true) {
  NaiveFit out;
  fit_naive_lmm(ds, basis, out, compute_covariance);
  fit_cox_partial(ds, out);
  return out;
}

}  // namespace ttjm

#endif  // TTJM_NAIVE_HPP
