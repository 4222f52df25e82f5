#ifndef TTJM_DATA_HPP
#define TTJM_DATA_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ttjm {

// One longitudinal observation on the prospective scale.
struct Measurement {
  double prospective_time = 0.0;  // months since enrollment
  double value = 0.0;
};

struct Subject {
  std::string id;
  int arm = 0;                // treatment indicator A_i
  Eigen::VectorXd x_long;     // P longitudinal covariates
  Eigen::VectorXd x_surv;     // Q survival covariates
  Eigen::VectorXd z_design;   // L random-effect covariates
  double obs_time = 0.0;      // death time if event, censoring time otherwise
  bool event = false;
  bool efron_flipped = false;  // event set by the last-observation-as-death rule
  std::vector<Measurement> measurements;  // sorted by prospective_time

  bool has_measurements() const { return !measurements.empty(); }
};

struct Dataset {
  std::vector<Subject> subjects;
  bool efron_applied = false;
  std::string meta;
};

// Four-way classification: observed death with/without measurements,
// censored with/without measurements. Holds indices into Dataset::subjects.
struct GroupPartition {
  std::vector<int> g1, g2, g3, g4;
  int r1() const { return static_cast<int>(g1.size()); }
  int r2() const { return static_cast<int>(g2.size()); }
  int r3() const { return static_cast<int>(g3.size()); }
  int r4() const { return static_cast<int>(g4.size()); }
};

// Treat the latest observed time as a death time regardless of censoring
// status; ties at the maximum are all converted. Idempotent.
inline Dataset apply_efron_adjustment(Dataset ds) {
  if (ds.subjects.empty()) throw std::invalid_argument("apply_efron_adjustment: empty dataset");
  double max_time = 0.0;
  for (const Subject& s : ds.subjects) max_time = std::max(max_time, s.obs_time);
  for (Subject& s : ds.subjects)
    if (s.obs_time == max_time && !s.event) {
      s.event = true;
      s.efron_flipped = true;
    }
  ds.efron_applied = true;
  return ds;
}

inline GroupPartition partition_groups(const Dataset& ds) {
  if (!ds.efron_applied)
    throw std::logic_error("partition_groups: dataset must be Efron-adjusted first");
  GroupPartition p;
  for (int i = 0; i < static_cast<int>(ds.subjects.size()); ++i) {
    const Subject& s = ds.subjects[i];
    if (s.event)
      (s.has_measurements() ? p.g1 : p.g2).push_back(i);
    else
      (s.has_measurements() ? p.g3 : p.g4).push_back(i);
  }
  return p;
}

// Retrospective times t* = death_time - t_ij, ordered so the first entry is
// the latest prospective measurement (smallest t*). The outcome vector must
// be taken in the same reversed order.
inline std::vector<double> retrospective_times(const Subject& s, double death_time) {
  std::vector<double> out;
  out.reserve(s.measurements.size());
  for (auto it = s.measurements.rbegin(); it != s.measurements.rend(); ++it) {
    if (death_time < it->prospective_time)
      throw std::invalid_argument("retrospective_times: death time " + std::to_string(death_time) +
                                  " below measurement time for subject " + s.id);
    out.push_back(death_time - it->prospective_time);
  }
  return out;
}

// Outcome vector in retrospective order (latest prospective measurement first).
inline Eigen::VectorXd outcome_vector_retrospective(const Subject& s) {
  Eigen::VectorXd y(s.measurements.size());
  int j = 0;
  for (auto it = s.measurements.rbegin(); it != s.measurements.rend(); ++it) y[j++] = it->value;
  return y;
}

struct VisitCell {
  double visit_time = 0.0;
  int arm = 0;
  int n = 0;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double lo95 = std::numeric_limits<double>::quiet_NaN();
  double hi95 = std::numeric_limits<double>::quiet_NaN();
  bool missing = true;     // no measurement fell in the window
  bool degenerate = false; // single observation, CI undefined
};

// Observed per-visit means on the prospective scale among subjects still
// under observation, normal-approximation CI.
inline std::vector<VisitCell> observed_means(const Dataset& ds,
                                             const std::vector<double>& visit_grid,
                                             double window) {
  if (window <= 0.0) throw std::invalid_argument("observed_means: window must be > 0");
  std::vector<VisitCell> cells;
  for (double v : visit_grid) {
    for (int arm = 0; arm <= 1; ++arm) {
      VisitCell cell;
      cell.visit_time = v;
      cell.arm = arm;
      double sum = 0.0, sumsq = 0.0;
      int n = 0;
      for (const Subject& s : ds.subjects) {
        if (s.arm != arm) continue;
        if (s.obs_time < v - window) continue;  // no longer under observation
        for (const Measurement& m : s.measurements) {
          if (std::abs(m.prospective_time - v) <= window) {
            sum += m.value;
            sumsq += m.value * m.value;
            ++n;
          }
        }
      }
      if (n > 0) {
        cell.missing = false;
        cell.n = n;
        cell.mean = sum / n;
        if (n > 1) {
          double var = (sumsq - n * cell.mean * cell.mean) / (n - 1);
          double se = std::sqrt(std::max(0.0, var) / n);
          cell.lo95 = cell.mean - 1.96 * se;
          cell.hi95 = cell.mean + 1.96 * se;
        } else {
          cell.degenerate = true;
          cell.lo95 = cell.hi95 = cell.mean;
        }
      }
      cells.push_back(cell);
    }
  }
  return cells;
}

}  // namespace ttjm

#endif  // TTJM_DATA_HPP
