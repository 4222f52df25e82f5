#ifndef TTJM_CSV_HPP
#define TTJM_CSV_HPP

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <ttjm/data.hpp>

namespace ttjm {

// Long-format CSV schema: one measurement per row plus one survival row per
// subject. Columns: id, arm, obs_time, event, y, t_meas, x1..xP, xs1..xsQ,
// z1..zL; survival-only rows leave y and t_meas empty.
struct CsvSchema {
  int P = 0, Q = 0, L = 0;
};

struct CsvError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end && *end == '\0';
}

// count consecutive columns named prefix1, prefix2, ...
inline int count_prefixed(const std::map<std::string, int>& cols, const std::string& prefix) {
  int n = 0;
  while (cols.count(prefix + std::to_string(n + 1))) ++n;
  return n;
}

}  // namespace detail

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw CsvError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::map<std::string, int> cols;
  {
    auto hdr = detail::split_csv_line(line);
    for (int i = 0; i < static_cast<int>(hdr.size()); ++i) cols[hdr[i]] = i;
  }
  for (const char* req : {"id", "arm", "obs_time", "event", "y", "t_meas"})
    if (!cols.count(req)) throw CsvError(path + ": missing required column '" + std::string(req) + "'");

  CsvSchema schema;
  schema.P = detail::count_prefixed(cols, "x");
  schema.Q = detail::count_prefixed(cols, "xs");
  schema.L = detail::count_prefixed(cols, "z");

  struct Pending {
    Subject subj;
    bool seen = false;
  };
  std::map<std::string, Pending> by_id;
  std::vector<std::string> order;
  std::vector<std::string> errors;
  std::set<std::pair<std::string, double>> meas_seen;

  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = detail::split_csv_line(line);
    auto get = [&](const std::string& name) -> std::string {
      int i = cols.at(name);
      return i < static_cast<int>(f.size()) ? f[i] : std::string();
    };
    auto fail = [&](const std::string& msg) {
      errors.push_back("row " + std::to_string(row) + ": " + msg);
    };

    std::string id = get("id");
    if (id.empty()) {
      fail("empty id");
      continue;
    }
    double arm, obs_time, event;
    if (!detail::parse_double(get("arm"), arm) || (arm != 0.0 && arm != 1.0)) {
      fail("arm must be 0 or 1");
      continue;
    }
    if (!detail::parse_double(get("obs_time"), obs_time) || obs_time <= 0.0) {
      fail("non-numeric or non-positive obs_time");
      continue;
    }
    if (!detail::parse_double(get("event"), event) || (event != 0.0 && event != 1.0)) {
      fail("event must be 0 or 1");
      continue;
    }

    Pending& p = by_id[id];
    if (!p.seen) {
      p.seen = true;
      order.push_back(id);
      p.subj.id = id;
      p.subj.arm = static_cast<int>(arm);
      p.subj.obs_time = obs_time;
      p.subj.event = event != 0.0;
      p.subj.x_long.resize(schema.P);
      p.subj.x_surv.resize(schema.Q);
      p.subj.z_design.resize(schema.L);
      bool cov_ok = true;
      auto read_block = [&](const std::string& prefix, Eigen::VectorXd& dst) {
        for (int j = 0; j < dst.size(); ++j) {
          double v;
          if (!detail::parse_double(get(prefix + std::to_string(j + 1)), v)) {
            fail("non-numeric " + prefix + std::to_string(j + 1));
            cov_ok = false;
            return;
          }
          dst[j] = v;
        }
      };
      read_block("x", p.subj.x_long);
      read_block("xs", p.subj.x_surv);
      read_block("z", p.subj.z_design);
      if (!cov_ok) continue;
    }

    std::string ys = get("y"), ts = get("t_meas");
    if (ys.empty() && ts.empty()) continue;  // survival-only row
    double y, t;
    if (!detail::parse_double(ys, y) || !detail::parse_double(ts, t)) {
      fail("non-numeric y or t_meas");
      continue;
    }
    if (t < 0.0) {
      fail("negative t_meas");
      continue;
    }
    if (t > p.subj.obs_time) {
      fail("measurement time " + ts + " exceeds obs_time for id " + id);
      continue;
    }
    if (!meas_seen.insert({id, t}).second) {
      fail("duplicate (id, t_meas) = (" + id + ", " + ts + ")");
      continue;
    }
    p.subj.measurements.push_back({t, y});
  }

  if (!errors.empty()) {
    std::string msg = path + ": " + std::to_string(errors.size()) + " validation error(s):";
    for (const auto& e : errors) msg += "\n  " + e;
    throw CsvError(msg);
  }

  Dataset ds;
  ds.meta = path;
  for (const std::string& id : order) {
    Subject s = std::move(by_id[id].subj);
    std::sort(s.measurements.begin(), s.measurements.end(),
              [](const Measurement& a, const Measurement& b) {
                return a.prospective_time < b.prospective_time;
              });
    ds.subjects.push_back(std::move(s));
  }
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw CsvError("cannot write " + path);
  int P = ds.subjects.empty() ? 0 : static_cast<int>(ds.subjects.front().x_long.size());
  int Q = ds.subjects.empty() ? 0 : static_cast<int>(ds.subjects.front().x_surv.size());
  int L = ds.subjects.empty() ? 0 : static_cast<int>(ds.subjects.front().z_design.size());
  out << "id,arm,obs_time,event,y,t_meas";
  for (int j = 1; j <= P; ++j) out << ",x" << j;
  for (int j = 1; j <= Q; ++j) out << ",xs" << j;
  for (int j = 1; j <= L; ++j) out << ",z" << j;
  out << "\n";
  out.precision(15);
  for (const Subject& s : ds.subjects) {
    auto covs = [&](std::ostream& o) {
      for (int j = 0; j < P; ++j) o << "," << s.x_long[j];
      for (int j = 0; j < Q; ++j) o << "," << s.x_surv[j];
      for (int j = 0; j < L; ++j) o << "," << s.z_design[j];
    };
    out << s.id << "," << s.arm << "," << s.obs_time << "," << (s.event ? 1 : 0) << ",,";
    covs(out);
    out << "\n";
    for (const Measurement& m : s.measurements) {
      out << s.id << "," << s.arm << "," << s.obs_time << "," << (s.event ? 1 : 0) << ","
          << m.value << "," << m.prospective_time;
      covs(out);
      out << "\n";
    }
  }
}

}  // namespace ttjm

#endif  // TTJM_CSV_HPP
