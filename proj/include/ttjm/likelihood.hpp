#ifndef TTJM_LIKELIHOOD_HPP
#define TTJM_LIKELIHOOD_HPP

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <ttjm/data.hpp>
#include <ttjm/splines.hpp>

namespace ttjm {

struct LikelihoodError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dimensions of the parametric model after basis expansion.
struct ModelDims {
  int k1 = 0;  // spline basis dimension
  int P = 0;   // longitudinal covariates
  int Q = 0;   // survival covariates
  int L = 0;   // random-effect covariates

  int n_beta() const { return 2 * k1 + P; }
  int n_chol() const { return L * (L + 1) / 2; }
  // unconstrained vector: alpha_A, alpha_X, beta, packed chol(Sigma), log tau
  int n_unconstrained() const { return 1 + Q + n_beta() + n_chol() + 1; }
  // parameter count entering AIC/BIC: 2k1 + P + L(L+1)/2 + 1 + Q + 1
  int n_params() const { return n_beta() + n_chol() + 1 + Q + 1; }

  int off_alpha_A() const { return 0; }
  int off_alpha_X() const { return 1; }
  int off_beta() const { return 1 + Q; }
  int off_chol() const { return 1 + Q + n_beta(); }
  int off_log_tau() const { return 1 + Q + n_beta() + n_chol(); }
};

// Full parameter state theta = (alpha, beta, Sigma, tau); the baseline hazard
// is profiled out and never stored here.
struct ThetaParams {
  double alpha_A = 0.0;
  Eigen::VectorXd alpha_X;
  Eigen::VectorXd beta;        // (beta_mu, beta_A, psi_X), length 2k1 + P
  Eigen::MatrixXd sigma_chol;  // lower-triangular L x L, nonnegative diagonal
  double tau = 1.0;

  Eigen::MatrixXd sigma() const { return sigma_chol * sigma_chol.transpose(); }
};

inline Eigen::VectorXd pack_unconstrained(const ThetaParams& t, const ModelDims& d) {
  Eigen::VectorXd v(d.n_unconstrained());
  v[d.off_alpha_A()] = t.alpha_A;
  v.segment(d.off_alpha_X(), d.Q) = t.alpha_X;
  v.segment(d.off_beta(), d.n_beta()) = t.beta;
  int k = d.off_chol();
  for (int j = 0; j < d.L; ++j)
    for (int i = j; i < d.L; ++i)
      v[k++] = (i == j) ? std::log(t.sigma_chol(i, j)) : t.sigma_chol(i, j);
  v[d.off_log_tau()] = std::log(t.tau);
  if (!v.allFinite()) throw std::invalid_argument("pack_unconstrained: non-finite entries");
  return v;
}

inline ThetaParams unpack_unconstrained(const Eigen::VectorXd& v, const ModelDims& d) {
  if (v.size() != d.n_unconstrained())
    throw std::invalid_argument("unpack_unconstrained: wrong length");
  if (!v.allFinite()) throw std::invalid_argument("unpack_unconstrained: non-finite entries");
  ThetaParams t;
  t.alpha_A = v[d.off_alpha_A()];
  t.alpha_X = v.segment(d.off_alpha_X(), d.Q);
  t.beta = v.segment(d.off_beta(), d.n_beta());
  t.sigma_chol = Eigen::MatrixXd::Zero(d.L, d.L);
  int k = d.off_chol();
  for (int j = 0; j < d.L; ++j)
    for (int i = j; i < d.L; ++i)
      t.sigma_chol(i, j) = (i == j) ? std::exp(v[k++]) : v[k++];
  t.tau = std::exp(v[d.off_log_tau()]);
  return t;
}

// Profiled step baseline hazard: jumps at the ordered distinct observed death
// times, right-continuous cumulative.
struct BreslowHazard {
  std::vector<double> death_times;  // d_1 < ... < d_M
  std::vector<double> jumps;        // jump at each d_m
  std::vector<double> cumulative;   // running sums

  int M() const { return static_cast<int>(death_times.size()); }

  // Lambda~0(t) = sum of jumps at d_m <= t
  double cum_at(double t) const {
    auto it = std::upper_bound(death_times.begin(), death_times.end(), t);
    if (it == death_times.begin()) return 0.0;
    return cumulative[static_cast<std::size_t>(it - death_times.begin()) - 1];
  }

  double jump_at(double d) const {
    auto it = std::lower_bound(death_times.begin(), death_times.end(), d);
    if (it == death_times.end() || *it != d)
      throw std::invalid_argument("BreslowHazard: no jump at t=" + std::to_string(d));
    return jumps[static_cast<std::size_t>(it - death_times.begin())];
  }
};

// Jump at each distinct observed death time: reciprocal risk-set sum of
// exp(A alpha_A + Xs' alpha_X). Subjects with obs_time == d_m (death or
// censoring) are at risk at d_m.
inline BreslowHazard breslow_jumps(double alpha_A, const Eigen::VectorXd& alpha_X,
                                   const Dataset& ds) {
  BreslowHazard bh;
  for (const Subject& s : ds.subjects)
    if (s.event) bh.death_times.push_back(s.obs_time);
  std::sort(bh.death_times.begin(), bh.death_times.end());
  bh.death_times.erase(std::unique(bh.death_times.begin(), bh.death_times.end()),
                       bh.death_times.end());
  if (bh.death_times.empty()) throw LikelihoodError("breslow_jumps: no observed deaths");

  // risk sums by sweeping subjects ordered by obs_time descending
  std::vector<std::pair<double, long double>> weights;  // (obs_time, exp(eta))
  weights.reserve(ds.subjects.size());
  for (const Subject& s : ds.subjects) {
    double eta = s.arm * alpha_A + s.x_surv.dot(alpha_X);
    weights.emplace_back(s.obs_time, std::exp(static_cast<long double>(eta)));
  }
  std::sort(weights.begin(), weights.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  bh.jumps.resize(bh.M());
  bh.cumulative.resize(bh.M());
  long double risk = 0.0L;
  std::size_t w = 0;
  for (int m = bh.M() - 1; m >= 0; --m) {
    double d = bh.death_times[static_cast<std::size_t>(m)];
    while (w < weights.size() && weights[w].first >= d) risk += weights[w++].second;
    bh.jumps[static_cast<std::size_t>(m)] = static_cast<double>(1.0L / risk);
  }
  long double cum = 0.0L;
  for (int m = 0; m < bh.M(); ++m) {
    cum += bh.jumps[static_cast<std::size_t>(m)];
    bh.cumulative[static_cast<std::size_t>(m)] = static_cast<double>(cum);
  }
  return bh;
}

struct SubjectGaussian {
  Eigen::VectorXd mu;
  Eigen::MatrixXd V;
};

namespace detail {

// design row (B(t*), A * B(t*), X') for one retrospective time
inline Eigen::RowVectorXd design_row(const SplineBasis& basis, double tstar, int arm,
                                     const Eigen::VectorXd& x_long) {
  const int k1 = basis.dim();
  Eigen::RowVectorXd row(2 * k1 + x_long.size());
  Eigen::RowVectorXd b = basis.eval(tstar);
  row.segment(0, k1) = b;
  row.segment(k1, k1) = arm * b;
  row.segment(2 * k1, x_long.size()) = x_long.transpose();
  return row;
}

inline Eigen::MatrixXd design_matrix(const SplineBasis& basis, const Subject& s,
                                     double death_time) {
  std::vector<double> ts = retrospective_times(s, death_time);
  Eigen::MatrixXd D(ts.size(), 2 * basis.dim() + s.x_long.size());
  for (std::size_t j = 0; j < ts.size(); ++j)
    D.row(static_cast<Eigen::Index>(j)) = design_row(basis, ts[j], s.arm, s.x_long);
  return D;
}

inline Eigen::MatrixXd z_matrix(const Subject& s) {
  const auto n = static_cast<Eigen::Index>(s.measurements.size());
  Eigen::MatrixXd Z(n, s.z_design.size());
  for (Eigen::Index j = 0; j < n; ++j) Z.row(j) = s.z_design.transpose();
  return Z;
}

inline double log_sum_exp(const Eigen::VectorXd& v) {
  double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  long double acc = 0.0L;
  for (Eigen::Index i = 0; i < v.size(); ++i) acc += std::exp(static_cast<long double>(v[i] - mx));
  return mx + static_cast<double>(std::log(acc));
}

}  // namespace detail

// Mean vector and covariance of the measurement vector (retrospective order)
// given a death time: mu_j = X(t*_j)'beta, V = tau^2 I + Z Sigma Z'.
inline SubjectGaussian subject_gaussian(const Subject& s, double death_time,
                                        const ThetaParams& theta, const SplineBasis& basis) {
  SubjectGaussian g;
  Eigen::MatrixXd D = detail::design_matrix(basis, s, death_time);
  g.mu = D * theta.beta;
  Eigen::MatrixXd Z = detail::z_matrix(s);
  const auto n = D.rows();
  g.V = theta.tau * theta.tau * Eigen::MatrixXd::Identity(n, n) +
        Z * theta.sigma() * Z.transpose();
  return g;
}

// Group-3 correction weight W_i forcing the discrete death-time masses beyond
// C_i to total the model survivor probability at C_i.
inline double group3_weight(const Subject& s, const ThetaParams& theta, const BreslowHazard& bh) {
  if (s.event || !s.has_measurements())
    throw std::invalid_argument("group3_weight: subject not in group 3");
  double eta = s.arm * theta.alpha_A + s.x_surv.dot(theta.alpha_X);
  double ee = std::exp(eta);
  long double denom = 0.0L;
  for (int m = 0; m < bh.M(); ++m) {
    if (bh.death_times[static_cast<std::size_t>(m)] <= s.obs_time) continue;
    double logp = eta - ee * bh.cumulative[static_cast<std::size_t>(m)] +
                  std::log(bh.jumps[static_cast<std::size_t>(m)]);
    denom += std::exp(static_cast<long double>(logp));
  }
  if (denom <= 0.0L)
    throw LikelihoodError("group3_weight: empty candidate set for subject " + s.id +
                          " (was the Efron adjustment applied?)");
  double surv = std::exp(-ee * bh.cum_at(s.obs_time));
  return surv / static_cast<double>(denom);
}

struct JointLikelihoodOptions {
  double tau_floor = 0.0;  // diagnostic only; tau is log-parameterized upstream
};

// Joint log-likelihood l = l1* + l2* + wl3* + l4* with the profiled step
// baseline. Precomputes all spline design matrices (they depend only on the
// data and knots) so that repeated evaluations are linear algebra only.
class JointLikelihood {
 public:
  JointLikelihood(const Dataset& ds, const SplineBasis& basis)
      : dims_{basis.dim(),
              ds.subjects.empty() ? 0 : static_cast<int>(ds.subjects.front().x_long.size()),
              ds.subjects.empty() ? 0 : static_cast<int>(ds.subjects.front().x_surv.size()),
              ds.subjects.empty() ? 0 : static_cast<int>(ds.subjects.front().z_design.size())},
        ds_(ds) {
    if (!ds.efron_applied)
      throw std::logic_error("JointLikelihood: dataset must be Efron-adjusted");
    part_ = partition_groups(ds);

    // candidate death times are data, not parameters
    std::vector<double> dts;
    for (const Subject& s : ds.subjects)
      if (s.event) dts.push_back(s.obs_time);
    std::sort(dts.begin(), dts.end());
    dts.erase(std::unique(dts.begin(), dts.end()), dts.end());
    death_times_ = dts;

    for (int idx : part_.g1) {
      const Subject& s = ds.subjects[static_cast<std::size_t>(idx)];
      // subjects reclassified by the last-observation-as-death rule died at an
      // unknown later time; their retrospective clock is wrong, so they
      // contribute survival information only
      if (s.efron_flipped) continue;
      MeasuredSubject ms;
      ms.subject_index = idx;
      ms.y = outcome_vector_retrospective(s);
      ms.design = detail::design_matrix(basis, s, s.obs_time);
      ms.z = detail::z_matrix(s);
      g1_.push_back(std::move(ms));
    }
    for (int idx : part_.g3) {
      const Subject& s = ds.subjects[static_cast<std::size_t>(idx)];
      Group3Subject gs;
      gs.subject_index = idx;
      gs.y = outcome_vector_retrospective(s);
      gs.z = detail::z_matrix(s);
      gs.censor_time = s.obs_time;
      for (int m = 0; m < static_cast<int>(death_times_.size()); ++m)
        if (death_times_[static_cast<std::size_t>(m)] > s.obs_time)
          gs.candidates.push_back(m);
      if (gs.candidates.empty())
        throw LikelihoodError("group-3 subject " + s.id +
                              " censored beyond the last observed death; "
                              "apply the last-observation-as-death adjustment");
      const auto n = gs.y.size();
      gs.design_stack.resize(static_cast<Eigen::Index>(gs.candidates.size()) * n,
                             dims_.n_beta());
      for (std::size_t c = 0; c < gs.candidates.size(); ++c) {
        double d = death_times_[static_cast<std::size_t>(gs.candidates[c])];
        gs.design_stack.middleRows(static_cast<Eigen::Index>(c) * n, n) =
            detail::design_matrix(basis, s, d);
      }
      g3_.push_back(std::move(gs));
    }
  }

  const ModelDims& dims() const { return dims_; }
  const GroupPartition& partition() const { return part_; }

  double value(const ThetaParams& theta) const {
    const BreslowHazard& bh = breslow_cached(theta);
    const VarFactors& vf = var_cached(theta);
    long double total = 0.0L;
    total += gaussian_g1_term(theta, vf);
    total += survival_events_term(theta, bh);
    total += group3_term(theta, bh, vf);
    total += group4_term(theta, bh);
    return static_cast<double>(total);
  }

  double value_unconstrained(const Eigen::VectorXd& v) const {
    return value(unpack_unconstrained(v, dims_));
  }

  // Central-difference gradient on the unconstrained scale, step
  // 1e-6 * max(1, |v_j|). Differences are accumulated per subject so that the
  // unchanged terms cancel exactly instead of drowning in the total's
  // magnitude; the beta block exploits the quadratic dependence of the
  // Gaussian exponent for the same central differences at lower cost.
  Eigen::VectorXd gradient_unconstrained(const Eigen::VectorXd& v) const;

  // Exposed for tests: the four components at one theta.
  double loglik_observed_death(const ThetaParams& theta) const {
    const BreslowHazard& bh = breslow_cached(theta);
    const VarFactors& vf = var_cached(theta);
    return static_cast<double>(gaussian_g1_term(theta, vf) + survival_events_term(theta, bh));
  }
  double loglik_group3_weighted(const ThetaParams& theta) const {
    const BreslowHazard& bh = breslow_cached(theta);
    const VarFactors& vf = var_cached(theta);
    return static_cast<double>(group3_term(theta, bh, vf));
  }
  double loglik_group4(const ThetaParams& theta) const {
    const BreslowHazard& bh = breslow_cached(theta);
    return static_cast<double>(group4_term(theta, bh));
  }
  const std::vector<double>& candidate_death_times() const { return death_times_; }

 private:
  struct MeasuredSubject {
    int subject_index = 0;
    Eigen::VectorXd y;
    Eigen::MatrixXd design;  // n x n_beta at the observed death time
    Eigen::MatrixXd z;       // n x L
  };
  struct Group3Subject {
    int subject_index = 0;
    Eigen::VectorXd y;
    Eigen::MatrixXd z;
    double censor_time = 0.0;
    std::vector<int> candidates;   // indices into death_times_
    Eigen::MatrixXd design_stack;  // (n_candidates * n) x n_beta
  };
  struct VarFactors {
    // one factorization per measured subject (g1 then g3, in that order)
    std::vector<Eigen::LLT<Eigen::MatrixXd>> llt;
    std::vector<double> logdet;
  };

  ModelDims dims_;
  Dataset ds_;
  GroupPartition part_;
  std::vector<double> death_times_;
  std::vector<MeasuredSubject> g1_;
  std::vector<Group3Subject> g3_;

  mutable Eigen::VectorXd cached_alpha_key_;
  mutable BreslowHazard cached_bh_;
  mutable Eigen::VectorXd cached_var_key_;
  mutable VarFactors cached_vf_;

  double eta_of(const Subject& s, const ThetaParams& t) const {
    return s.arm * t.alpha_A + s.x_surv.dot(t.alpha_X);
  }

  const BreslowHazard& breslow_cached(const ThetaParams& t) const {
    Eigen::VectorXd key(1 + dims_.Q);
    key[0] = t.alpha_A;
    key.tail(dims_.Q) = t.alpha_X;
    if (cached_alpha_key_.size() != key.size() || cached_alpha_key_ != key) {
      cached_bh_ = breslow_jumps(t.alpha_A, t.alpha_X, ds_);
      cached_alpha_key_ = key;
    }
    return cached_bh_;
  }

  const VarFactors& var_cached(const ThetaParams& t) const {
    Eigen::VectorXd key(dims_.n_chol() + 1);
    int k = 0;
    for (int j = 0; j < dims_.L; ++j)
      for (int i = j; i < dims_.L; ++i) key[k++] = t.sigma_chol(i, j);
    key[k] = t.tau;
    if (cached_var_key_.size() != key.size() || cached_var_key_ != key) {
      VarFactors vf;
      Eigen::MatrixXd sigma = t.sigma();
      auto push = [&](const Eigen::MatrixXd& z) {
        const auto n = z.rows();
        Eigen::MatrixXd V = t.tau * t.tau * Eigen::MatrixXd::Identity(n, n) +
                            z * sigma * z.transpose();
        Eigen::LLT<Eigen::MatrixXd> llt(V);
        if (llt.info() != Eigen::Success)
          throw LikelihoodError("V_i factorization failed (tau -> 0 pathology?)");
        double ld = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) ld += 2.0 * std::log(llt.matrixL()(i, i));
        vf.llt.push_back(std::move(llt));
        vf.logdet.push_back(ld);
      };
      for (const auto& ms : g1_) push(ms.z);
      for (const auto& gs : g3_) push(gs.z);
      cached_vf_ = std::move(vf);
      cached_var_key_ = key;
    }
    return cached_vf_;
  }

  static constexpr double kLog2Pi = 1.8378770664093454836;

  long double gaussian_g1_term(const ThetaParams& t, const VarFactors& vf) const {
    long double acc = 0.0L;
    for (std::size_t i = 0; i < g1_.size(); ++i) {
      const auto& ms = g1_[i];
      Eigen::VectorXd r = ms.y - ms.design * t.beta;
      double quad = r.dot(vf.llt[i].solve(r));
      acc += -0.5 * (ms.y.size() * kLog2Pi + vf.logdet[i] + quad);
    }
    return acc;
  }

  long double survival_events_term(const ThetaParams& t, const BreslowHazard& bh) const {
    long double acc = 0.0L;
    for (int idx : part_.g1) acc += event_term(ds_.subjects[static_cast<std::size_t>(idx)], t, bh);
    for (int idx : part_.g2) acc += event_term(ds_.subjects[static_cast<std::size_t>(idx)], t, bh);
    return acc;
  }

  double event_term(const Subject& s, const ThetaParams& t, const BreslowHazard& bh) const {
    double eta = eta_of(s, t);
    return std::log(bh.jump_at(s.obs_time)) + eta - std::exp(eta) * bh.cum_at(s.obs_time);
  }

  long double group3_term(const ThetaParams& t, const BreslowHazard& bh,
                          const VarFactors& vf) const {
    long double acc = 0.0L;
    for (std::size_t i = 0; i < g3_.size(); ++i)
      acc += group3_subject_term(i, t, bh, vf, t.beta);
    return acc;
  }

  // wl3* contribution of one group-3 subject:
  //   -exp(eta) L0(C_i) + LSE_m(log f_m + log P_m) - LSE_m(log P_m)
  double group3_subject_term(std::size_t i, const ThetaParams& t, const BreslowHazard& bh,
                             const VarFactors& vf, const Eigen::VectorXd& beta) const {
    const auto& gs = g3_[i];
    const auto& llt = vf.llt[g1_.size() + i];
    const double logdet = vf.logdet[g1_.size() + i];
    const Subject& s = ds_.subjects[static_cast<std::size_t>(gs.subject_index)];
    double eta = eta_of(s, t);
    double ee = std::exp(eta);
    const auto n = gs.y.size();
    const auto M = static_cast<Eigen::Index>(gs.candidates.size());

    Eigen::VectorXd mu_stack = gs.design_stack * beta;
    Eigen::VectorXd logf(M), logp(M);
    for (Eigen::Index c = 0; c < M; ++c) {
      int m = gs.candidates[static_cast<std::size_t>(c)];
      Eigen::VectorXd r = gs.y - mu_stack.segment(c * n, n);
      double quad = r.dot(llt.solve(r));
      logf[c] = -0.5 * (n * kLog2Pi + logdet + quad);
      logp[c] = eta - ee * bh.cumulative[static_cast<std::size_t>(m)] +
                std::log(bh.jumps[static_cast<std::size_t>(m)]);
    }
    double mixture = detail::log_sum_exp(logf + logp);
    if (!std::isfinite(mixture))
      throw LikelihoodError("group-3 mixture underflow for subject " + s.id);
    return -ee * bh.cum_at(gs.censor_time) + mixture - detail::log_sum_exp(logp);
  }

  long double group4_term(const ThetaParams& t, const BreslowHazard& bh) const {
    long double acc = 0.0L;
    for (int idx : part_.g4) {
      const Subject& s = ds_.subjects[static_cast<std::size_t>(idx)];
      acc += -std::exp(eta_of(s, t)) * bh.cum_at(s.obs_time);
    }
    return acc;
  }
};

inline Eigen::VectorXd JointLikelihood::gradient_unconstrained(const Eigen::VectorXd& v) const {
  const ModelDims& d = dims_;
  ThetaParams theta = unpack_unconstrained(v, d);
  const BreslowHazard& bh0 = breslow_cached(theta);
  const VarFactors& vf0 = var_cached(theta);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(v.size());
  auto step_of = [&](int j) { return 1e-6 * std::max(1.0, std::abs(v[j])); };

  // ---- beta block: per-subject central differences via the quadratic form.
  // For beta' = beta + h e_j the Gaussian exponent changes by
  // -2h g_j + h^2 c_jj with g = D' V^{-1} r; the h^2 term is identical at
  // +h and -h and cancels in the central difference (it perturbs the
  // group-3 log-sum-exp below the 1e-12 level and is dropped there).
  {
    // g1 subjects: the difference is exactly linear in h
    Eigen::VectorXd beta_grad = Eigen::VectorXd::Zero(d.n_beta());
    for (std::size_t i = 0; i < g1_.size(); ++i) {
      const auto& ms = g1_[i];
      Eigen::VectorXd r = ms.y - ms.design * theta.beta;
      beta_grad += ms.design.transpose() * vf0.llt[i].solve(r);
    }
    // g3 subjects: propagate +-h through the log-sum-exp per candidate
    std::vector<Eigen::VectorXd> g3_logf(g3_.size()), g3_logp(g3_.size());
    std::vector<Eigen::MatrixXd> g3_gmat(g3_.size());  // M x n_beta, rows g_m
    for (std::size_t i = 0; i < g3_.size(); ++i) {
      const auto& gs = g3_[i];
      const auto& llt = vf0.llt[g1_.size() + i];
      const double logdet = vf0.logdet[g1_.size() + i];
      const Subject& s = ds_.subjects[static_cast<std::size_t>(gs.subject_index)];
      double eta = eta_of(s, theta);
      double ee = std::exp(eta);
      const auto n = gs.y.size();
      const auto M = static_cast<Eigen::Index>(gs.candidates.size());
      Eigen::VectorXd mu_stack = gs.design_stack * theta.beta;
      g3_logf[i].resize(M);
      g3_logp[i].resize(M);
      g3_gmat[i].resize(M, d.n_beta());
      for (Eigen::Index c = 0; c < M; ++c) {
        int m = gs.candidates[static_cast<std::size_t>(c)];
        Eigen::VectorXd r = gs.y - mu_stack.segment(c * n, n);
        Eigen::VectorXd w = llt.solve(r);
        g3_logf[i][c] = -0.5 * (n * kLog2Pi + logdet + r.dot(w));
        g3_logp[i][c] = eta - ee * bh0.cumulative[static_cast<std::size_t>(m)] +
                        std::log(bh0.jumps[static_cast<std::size_t>(m)]);
        g3_gmat[i].row(c) = (gs.design_stack.middleRows(c * n, n).transpose() * w).transpose();
      }
    }
    for (int jb = 0; jb < d.n_beta(); ++jb) {
      int j = d.off_beta() + jb;
      double h = step_of(j);
      long double diff = 0.0L;
      diff += 2.0 * h * static_cast<long double>(beta_grad[jb]);  // g1 (+h) - (-h)
      for (std::size_t i = 0; i < g3_.size(); ++i) {
        Eigen::VectorXd shift = h * g3_gmat[i].col(jb);
        double plus = detail::log_sum_exp(g3_logf[i] + shift + g3_logp[i]);
        double minus = detail::log_sum_exp(g3_logf[i] - shift + g3_logp[i]);
        diff += static_cast<long double>(plus - minus);
      }
      grad[j] = static_cast<double>(diff / (2.0 * h));
    }
  }

  // ---- alpha block: Gaussian factors are unchanged; only the survival
  // pieces and the mixture weights move. Recompute those per subject at +-h.
  {
    // cache base log f per g3 subject (independent of alpha)
    std::vector<Eigen::VectorXd> g3_logf(g3_.size());
    for (std::size_t i = 0; i < g3_.size(); ++i) {
      const auto& gs = g3_[i];
      const auto& llt = vf0.llt[g1_.size() + i];
      const double logdet = vf0.logdet[g1_.size() + i];
      const auto n = gs.y.size();
      const auto M = static_cast<Eigen::Index>(gs.candidates.size());
      Eigen::VectorXd mu_stack = gs.design_stack * theta.beta;
      g3_logf[i].resize(M);
      for (Eigen::Index c = 0; c < M; ++c) {
        Eigen::VectorXd r = gs.y - mu_stack.segment(c * n, n);
        g3_logf[i][c] = -0.5 * (n * kLog2Pi + logdet + r.dot(llt.solve(r)));
      }
    }
    auto alpha_side_value = [&](const ThetaParams& tt, std::vector<long double>& parts) {
      BreslowHazard bh = breslow_jumps(tt.alpha_A, tt.alpha_X, ds_);
      parts.clear();
      for (int idx : part_.g1) parts.push_back(event_term(ds_.subjects[static_cast<std::size_t>(idx)], tt, bh));
      for (int idx : part_.g2) parts.push_back(event_term(ds_.subjects[static_cast<std::size_t>(idx)], tt, bh));
      for (std::size_t i = 0; i < g3_.size(); ++i) {
        const auto& gs = g3_[i];
        const Subject& s = ds_.subjects[static_cast<std::size_t>(gs.subject_index)];
        double eta = eta_of(s, tt);
        double ee = std::exp(eta);
        const auto M = static_cast<Eigen::Index>(gs.candidates.size());
        Eigen::VectorXd logp(M);
        for (Eigen::Index c = 0; c < M; ++c) {
          int m = gs.candidates[static_cast<std::size_t>(c)];
          logp[c] = eta - ee * bh.cumulative[static_cast<std::size_t>(m)] +
                    std::log(bh.jumps[static_cast<std::size_t>(m)]);
        }
        parts.push_back(-ee * bh.cum_at(gs.censor_time) +
                        detail::log_sum_exp(g3_logf[i] + logp) - detail::log_sum_exp(logp));
      }
      for (int idx : part_.g4) {
        const Subject& s = ds_.subjects[static_cast<std::size_t>(idx)];
        parts.push_back(-std::exp(eta_of(s, tt)) * bh.cum_at(s.obs_time));
      }
    };
    std::vector<long double> plus, minus;
    for (int ja = 0; ja < 1 + d.Q; ++ja) {
      int j = ja;  // alpha_A then alpha_X occupy the first 1+Q slots
      double h = step_of(j);
      Eigen::VectorXd vp = v, vm = v;
      vp[j] += h;
      vm[j] -= h;
      alpha_side_value(unpack_unconstrained(vp, d), plus);
      alpha_side_value(unpack_unconstrained(vm, d), minus);
      long double diff = 0.0L;
      for (std::size_t i = 0; i < plus.size(); ++i) diff += plus[i] - minus[i];
      grad[j] = static_cast<double>(diff / (2.0 * h));
    }
  }

  // ---- variance block (chol(Sigma), log tau): full per-subject differences
  {
    auto var_side_parts = [&](const ThetaParams& tt, std::vector<long double>& parts) {
      const auto& vf = var_cached(tt);
      parts.clear();
      for (std::size_t i = 0; i < g1_.size(); ++i) {
        const auto& ms = g1_[i];
        Eigen::VectorXd r = ms.y - ms.design * tt.beta;
        parts.push_back(-0.5 * (ms.y.size() * kLog2Pi + vf.logdet[i] + r.dot(vf.llt[i].solve(r))));
      }
      for (std::size_t i = 0; i < g3_.size(); ++i)
        parts.push_back(group3_subject_term(i, tt, bh0, vf, tt.beta));
    };
    std::vector<long double> plus, minus;
    for (int jv = d.off_chol(); jv < d.n_unconstrained(); ++jv) {
      double h = step_of(jv);
      Eigen::VectorXd vp = v, vm = v;
      vp[jv] += h;
      vm[jv] -= h;
      var_side_parts(unpack_unconstrained(vp, d), plus);
      var_side_parts(unpack_unconstrained(vm, d), minus);
      long double diff = 0.0L;
      for (std::size_t i = 0; i < plus.size(); ++i) diff += plus[i] - minus[i];
      grad[jv] = static_cast<double>(diff / (2.0 * h));
    }
  }
  // restore the base-point caches for subsequent calls
  breslow_cached(theta);
  var_cached(theta);
  return grad;
}

}  // namespace ttjm

#endif  // TTJM_LIKELIHOOD_HPP
