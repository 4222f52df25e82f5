#ifndef TTJM_OPTIM_HPP
#define TTJM_OPTIM_HPP

#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include <Eigen/Dense>

namespace ttjm {

using ObjectiveFn = std::function<double(const Eigen::VectorXd&)>;
using GradientFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

// Central differences, step 1e-6 * max(1, |x_j|) unless overridden.
inline Eigen::VectorXd central_gradient(const ObjectiveFn& f, const Eigen::VectorXd& x,
                                        double rel_step = 1e-6) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x, xm = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    double h = rel_step * std::max(1.0, std::abs(x[j]));
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    g[j] = (f(xp) - f(xm)) / (2.0 * h);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return g;
}

// Central-difference Hessian, step 1e-4 * max(1, |x_j|); symmetrized by
// construction.
inline Eigen::MatrixXd central_hessian(const ObjectiveFn& f, const Eigen::VectorXd& x,
                                       double rel_step = 1e-4) {
  const auto n = x.size();
  Eigen::VectorXd h(n);
  for (Eigen::Index j = 0; j < n; ++j) h[j] = rel_step * std::max(1.0, std::abs(x[j]));
  Eigen::MatrixXd H(n, n);
  const double f0 = f(x);
  Eigen::VectorXd xt = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    xt[i] = x[i] + h[i];
    double fp = f(xt);
    xt[i] = x[i] - h[i];
    double fm = f(xt);
    xt[i] = x[i];
    H(i, i) = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      xt[i] = x[i] + h[i];
      xt[j] = x[j] + h[j];
      double fpp = f(xt);
      xt[j] = x[j] - h[j];
      double fpm = f(xt);
      xt[i] = x[i] - h[i];
      double fmm = f(xt);
      xt[j] = x[j] + h[j];
      double fmp = f(xt);
      xt[i] = x[i];
      xt[j] = x[j];
      H(i, j) = H(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
    }
  }
  return H;
}

struct MaximizeOptions {
  int max_iterations = 500;
  double grad_tol = 1e-5;      // sup-norm of the gradient
  double rel_f_tol = 1e-8;     // relative objective change
  double grad_rel_step = 1e-6;
};

struct MaximizeResult {
  Eigen::VectorXd x;
  double f = -std::numeric_limits<double>::infinity();
  bool converged = false;
  int iterations = 0;
  std::string message;
};

// BFGS maximization with backtracking line search. Objective evaluations that
// throw are treated as -inf and rejected by the line search.
inline MaximizeResult maximize_bfgs(const ObjectiveFn& f, const Eigen::VectorXd& x0,
                                    const MaximizeOptions& opts = {},
                                    const GradientFn& grad_fn = nullptr) {
  const auto n = x0.size();
  auto safe_f = [&](const Eigen::VectorXd& x) -> double {
    try {
      double v = f(x);
      return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
    } catch (const std::exception&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  auto grad = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    if (grad_fn) return grad_fn(x);
    return central_gradient(f, x, opts.grad_rel_step);
  };

  MaximizeResult res;
  res.x = x0;
  res.f = safe_f(x0);
  if (!std::isfinite(res.f)) {
    res.message = "objective not finite at the starting point";
    return res;
  }
  Eigen::VectorXd g = grad(res.x);
  Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(n, n);

  for (int it = 0; it < opts.max_iterations; ++it) {
    res.iterations = it + 1;
    double ginf = g.cwiseAbs().maxCoeff();
    if (ginf < opts.grad_tol && it > 0) {
      res.converged = true;
      res.message = "gradient tolerance reached";
      return res;
    }
    Eigen::VectorXd dir = Hinv * g;  // ascent direction
    if (dir.dot(g) <= 0.0) {
      Hinv = Eigen::MatrixXd::Identity(n, n);
      dir = g;
    }
    // backtracking Armijo
    double step = 1.0;
    const double slope = dir.dot(g);
    double f_new = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd x_new;
    bool accepted = false;
    while (step > 1e-14) {
      x_new = res.x + step * dir;
      f_new = safe_f(x_new);
      if (f_new >= res.f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      res.converged = ginf < 1e-4;
      res.message = res.converged ? "line search stalled near optimum"
                                  : "line search failed";
      return res;
    }
    Eigen::VectorXd g_new = grad(x_new);
    Eigen::VectorXd s = x_new - res.x;
    Eigen::VectorXd yv = g - g_new;  // gradient of -f increases
    double rel_change = std::abs(f_new - res.f) / (1.0 + std::abs(f_new));
    double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      // BFGS update of the inverse Hessian of -f
      Eigen::VectorXd Hy = Hinv * yv;
      double yHy = yv.dot(Hy);
      double rho = 1.0 / sy;
      Hinv += (sy + yHy) * rho * rho * (s * s.transpose()) -
              rho * (Hy * s.transpose() + s * Hy.transpose());
    }
    res.x = x_new;
    res.f = f_new;
    g = g_new;
    double ginf_new = g.cwiseAbs().maxCoeff();
    if (ginf_new < opts.grad_tol && rel_change < opts.rel_f_tol) {
      res.converged = true;
      res.message = "gradient and objective tolerances reached";
      return res;
    }
  }
  res.message = "max iterations reached";
  return res;
}

}  // namespace ttjm

#endif  // TTJM_OPTIM_HPP
