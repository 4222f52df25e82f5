#ifndef TTJM_SPLINES_HPP
#define TTJM_SPLINES_HPP

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ttjm {

// Knot set for a natural cubic basis of dimension k1: two boundary knots
// plus k1 - 2 interior knots, strictly increasing.
struct KnotVector {
  double boundary_lo = 0.0;
  double boundary_hi = 0.0;
  std::vector<double> interior;

  int k1() const { return static_cast<int>(interior.size()) + 2; }

  std::vector<double> all_knots() const {
    std::vector<double> k;
    k.reserve(interior.size() + 2);
    k.push_back(boundary_lo);
    k.insert(k.end(), interior.begin(), interior.end());
    k.push_back(boundary_hi);
    return k;
  }

  void validate() const {
    if (k1() < 2) throw std::invalid_argument("KnotVector: k1 < 2");
    double prev = boundary_lo;
    for (double k : interior) {
      if (!(prev < k)) throw std::invalid_argument("KnotVector: knots not strictly increasing");
      prev = k;
    }
    if (!(prev < boundary_hi)) throw std::invalid_argument("KnotVector: knots not strictly increasing");
  }
};

namespace detail {

// Linear-interpolation sample quantile on a sorted vector (type 7).
inline double sorted_quantile(const std::vector<double>& sorted, double p) {
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  double h = p * static_cast<double>(n - 1);
  std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo >= n - 1) return sorted[n - 1];
  double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace detail

// Boundary knots at the data range, interior knots at equally spaced sample
// quantiles (levels j/(k1-1), j = 1..k1-2). Duplicated quantiles are
// collapsed; an error is raised if that leaves fewer than k1-2 interior knots.
inline KnotVector place_knots(std::vector<double> times, int k1) {
  if (k1 < 2) throw std::invalid_argument("place_knots: k1 must be >= 2");
  if (times.empty()) throw std::invalid_argument("place_knots: empty time set");
  std::sort(times.begin(), times.end());
  std::vector<double> distinct(times);
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (static_cast<int>(distinct.size()) < k1)
    throw std::invalid_argument("place_knots: need at least k1 distinct times, have " +
                                std::to_string(distinct.size()));

  KnotVector kv;
  kv.boundary_lo = times.front();
  kv.boundary_hi = times.back();
  for (int j = 1; j <= k1 - 2; ++j) {
    double p = static_cast<double>(j) / static_cast<double>(k1 - 1);
    kv.interior.push_back(detail::sorted_quantile(times, p));
  }
  // collapse duplicates (and any quantile landing on a boundary)
  std::vector<double> cleaned;
  for (double k : kv.interior) {
    if (k <= kv.boundary_lo || k >= kv.boundary_hi) continue;
    if (!cleaned.empty() && cleaned.back() == k) continue;
    cleaned.push_back(k);
  }
  if (static_cast<int>(cleaned.size()) < k1 - 2)
    throw std::invalid_argument("place_knots: duplicate quantile knots for k1=" +
                                std::to_string(k1) + "; basis would be rank deficient");
  kv.interior = std::move(cleaned);
  kv.validate();
  return kv;
}

// Natural cubic spline basis of dimension k1. Built from the clamped cubic
// B-spline basis on the knot set with the two natural constraints
// (zero second derivative at the boundary knots) absorbed by a fixed linear
// transform. Beyond the boundary knots the basis extrapolates linearly.
class SplineBasis {
 public:
  explicit SplineBasis(KnotVector kv) : kv_(std::move(kv)) {
    kv_.validate();
    build();
  }

  int dim() const { return kv_.k1(); }
  const KnotVector& knots() const { return kv_; }

  // Row of the k1 basis values at retrospective time tstar.
  Eigen::RowVectorXd eval(double tstar) const {
    if (!std::isfinite(tstar)) throw std::invalid_argument("SplineBasis::eval: non-finite t*");
    if (tstar < kv_.boundary_lo) return lo_val_ + (tstar - kv_.boundary_lo) * lo_der_;
    if (tstar > kv_.boundary_hi) return hi_val_ + (tstar - kv_.boundary_hi) * hi_der_;
    return bspline_row(tstar, 0) * transform_;
  }

  // Entrywise integral of the basis over [a, b], exact per polynomial segment
  // (two-point Gauss-Legendre, exact for cubics; the extrapolation pieces are
  // linear).
  Eigen::VectorXd integrate(double a, double b) const {
    if (a > b) throw std::invalid_argument("SplineBasis::integrate: a > b");
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(dim());
    if (a == b) return acc.transpose();
    // breakpoints clipped to [a, b]
    std::vector<double> pts;
    pts.push_back(a);
    for (double k : kv_.all_knots())
      if (k > a && k < b) pts.push_back(k);
    pts.push_back(b);
    static const double gauss = 1.0 / std::sqrt(3.0);
    for (std::size_t s = 0; s + 1 < pts.size(); ++s) {
      double u = pts[s], v = pts[s + 1];
      double mid = 0.5 * (u + v), half = 0.5 * (v - u);
      acc += half * (eval(mid - half * gauss) + eval(mid + half * gauss));
    }
    return acc.transpose();
  }

 private:
  KnotVector kv_;
  std::vector<double> aug_;    // clamped knot vector, 4x boundary multiplicity
  Eigen::MatrixXd transform_;  // (n_bspl x k1) natural-constraint null space
  Eigen::RowVectorXd lo_val_, lo_der_, hi_val_, hi_der_;

  int n_bspl() const { return static_cast<int>(kv_.interior.size()) + 4; }

  void build() {
    aug_.clear();
    for (int i = 0; i < 4; ++i) aug_.push_back(kv_.boundary_lo);
    aug_.insert(aug_.end(), kv_.interior.begin(), kv_.interior.end());
    for (int i = 0; i < 4; ++i) aug_.push_back(kv_.boundary_hi);

    // second-derivative constraints at the two boundaries
    Eigen::MatrixXd constraints(2, n_bspl());
    constraints.row(0) = bspline_row_raw(kv_.boundary_lo, 2);
    constraints.row(1) = bspline_row_raw(kv_.boundary_hi, 2);

    Eigen::HouseholderQR<Eigen::MatrixXd> qr(constraints.transpose());
    Eigen::MatrixXd q = qr.householderQ();
    transform_ = q.rightCols(n_bspl() - 2);

    lo_val_ = bspline_row_raw(kv_.boundary_lo, 0) * transform_;
    lo_der_ = bspline_row_raw(kv_.boundary_lo, 1) * transform_;
    hi_val_ = bspline_row_raw(kv_.boundary_hi, 0) * transform_;
    hi_der_ = bspline_row_raw(kv_.boundary_hi, 1) * transform_;
  }

  Eigen::RowVectorXd bspline_row(double x, int deriv) const { return bspline_row_raw(x, deriv); }

  // All cubic B-spline basis values (or derivative of order deriv) at x,
  // Cox-de Boor recursion on the clamped knot vector.
  Eigen::RowVectorXd bspline_row_raw(double x, int deriv) const {
    const int nb = n_bspl();
    const int order = 4;
    Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(nb);
    // knot span index i with aug_[i] <= x < aug_[i+1], clamped to valid range
    int i = order - 1;
    int hi = nb - 1;  // last span start
    while (i < hi && x >= aug_[i + 1]) ++i;

    // degree-0 .. degree-(3-deriv) values via recursion, then derivative steps
    double left[4], right[4];
    double ndu[4][4];
    ndu[0][0] = 1.0;
    for (int j = 1; j < order; ++j) {
      left[j] = x - aug_[i + 1 - j];
      right[j] = aug_[i + j] - x;
      double saved = 0.0;
      for (int r = 0; r < j; ++r) {
        double den = right[r + 1] + left[j - r];
        double temp = (den != 0.0) ? ndu[r][j - 1] / den : 0.0;
        ndu[r][j] = saved + right[r + 1] * temp;
        saved = left[j - r] * temp;
      }
      ndu[j][j] = saved;
    }
    if (deriv == 0) {
      for (int r = 0; r < order; ++r) out[i - order + 1 + r] = ndu[r][order - 1];
      return out;
    }
    // derivatives via the recursive derivative formula on the 4 local splines
    int base = i - order + 1;
    for (int idx = base; idx < base + order; ++idx)
      out[idx] = bspline_deriv_single(idx, 3, deriv, x);
    return out;
  }

  // value of derivative of order `deriv` of the degree-`deg` B-spline with
  // index idx at x (recursive derivative formula)
  double bspline_deriv_single(int idx, int deg, int deriv, double x) const {
    if (idx < 0 || idx + deg + 1 >= static_cast<int>(aug_.size())) return 0.0;
    if (deriv == 0) return bspline_single(idx, deg, x);
    double d1 = aug_[idx + deg] - aug_[idx];
    double d2 = aug_[idx + deg + 1] - aug_[idx + 1];
    double a = (d1 != 0.0) ? bspline_deriv_single(idx, deg - 1, deriv - 1, x) / d1 : 0.0;
    double b = (d2 != 0.0) ? bspline_deriv_single(idx + 1, deg - 1, deriv - 1, x) / d2 : 0.0;
    return deg * (a - b);
  }

  double bspline_single(int idx, int deg, double x) const {
    if (idx < 0 || idx + deg + 1 >= static_cast<int>(aug_.size())) return 0.0;
    if (deg == 0) {
      // closed on the right at the last boundary so the clamped end evaluates to 1
      if (aug_[idx] <= x && x < aug_[idx + 1]) return 1.0;
      if (x == aug_.back() && aug_[idx] < aug_[idx + 1] && aug_[idx + 1] == aug_.back()) return 1.0;
      return 0.0;
    }
    double d1 = aug_[idx + deg] - aug_[idx];
    double d2 = aug_[idx + deg + 1] - aug_[idx + 1];
    double a = (d1 != 0.0) ? (x - aug_[idx]) / d1 * bspline_single(idx, deg - 1, x) : 0.0;
    double b = (d2 != 0.0) ? (aug_[idx + deg + 1] - x) / d2 * bspline_single(idx + 1, deg - 1, x) : 0.0;
    return a + b;
  }
};

}  // namespace ttjm

#endif  // TTJM_SPLINES_HPP
