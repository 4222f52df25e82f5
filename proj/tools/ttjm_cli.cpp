#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <ttjm/csv.hpp>
#include <ttjm/data.hpp>
#include <ttjm/estimator.hpp>
#include <ttjm/naive.hpp>
#include <ttjm/qaly.hpp>
#include <ttjm/simulation.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ttjm;

namespace {

constexpr const char* kToolVersion = "1.0.0";

std::string timestamp_now() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[64];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void write_manifest(const fs::path& out_dir, const std::string& command, const json& args) {
  json m;
  m["command"] = command;
  m["args"] = args;
  m["tool_version"] = kToolVersion;
  m["timestamp"] = timestamp_now();
  m["output_dir"] = out_dir.string();
  std::ofstream(out_dir / "manifest.json") << m.dump(2) << "\n";
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.15g", v);
  return buf;
}

double normal_sf2(double z) {  // two-sided p-value
  return std::erfc(std::abs(z) / std::sqrt(2.0));
}

struct ParamRow {
  std::string name;
  double estimate, se;
};

// rows on the natural scale: alpha, spline betas, psi, sigma (delta from the
// log-chol diagonal; lower-triangle entries as-is), tau (delta from log tau)
std::vector<ParamRow> param_rows(const FitResult& fit) {
  const ModelDims& d = fit.dims;
  Eigen::VectorXd se = fit.covariance_ok
                           ? fit.se()
                           : Eigen::VectorXd::Constant(d.n_unconstrained(),
                                                       std::numeric_limits<double>::quiet_NaN());
  std::vector<ParamRow> rows;
  rows.push_back({"alpha_A", fit.theta_unconstrained[d.off_alpha_A()], se[d.off_alpha_A()]});
  for (int q = 0; q < d.Q; ++q)
    rows.push_back({"alpha_x" + std::to_string(q + 1), fit.theta_unconstrained[d.off_alpha_X() + q],
                    se[d.off_alpha_X() + q]});
  for (int k = 0; k < d.k1; ++k)
    rows.push_back({"beta_mu_" + std::to_string(k + 1),
                    fit.theta_unconstrained[d.off_beta() + k], se[d.off_beta() + k]});
  for (int k = 0; k < d.k1; ++k)
    rows.push_back({"beta_trt_" + std::to_string(k + 1),
                    fit.theta_unconstrained[d.off_beta() + d.k1 + k],
                    se[d.off_beta() + d.k1 + k]});
  for (int p = 0; p < d.P; ++p)
    rows.push_back({"psi_" + std::to_string(p + 1),
                    fit.theta_unconstrained[d.off_beta() + 2 * d.k1 + p],
                    se[d.off_beta() + 2 * d.k1 + p]});
  int c = d.off_chol();
  for (int j = 0; j < d.L; ++j)
    for (int i = j; i < d.L; ++i) {
      std::string name = "sigma_chol_" + std::to_string(i + 1) + std::to_string(j + 1);
      if (i == j) {
        double est = std::exp(fit.theta_unconstrained[c]);
        rows.push_back({name, est, est * se[c]});
      } else {
        rows.push_back({name, fit.theta_unconstrained[c], se[c]});
      }
      ++c;
    }
  double tau = std::exp(fit.theta_unconstrained[d.off_log_tau()]);
  rows.push_back({"tau", tau, tau * se[d.off_log_tau()]});
  return rows;
}

void write_params_csv(const fs::path& path, const FitResult& fit) {
  std::ofstream out(path);
  out << "name,estimate,se,z,p\n";
  for (const ParamRow& r : param_rows(fit)) {
    double z = r.se > 0.0 ? r.estimate / r.se : std::numeric_limits<double>::quiet_NaN();
    out << r.name << ',' << fmt(r.estimate) << ',' << fmt(r.se) << ',' << fmt(z) << ','
        << fmt(normal_sf2(z)) << "\n";
  }
}

void write_curve_csv(const fs::path& path, const CurveEstimate& ce) {
  std::ofstream out(path);
  out << "tstar,estimate,se,lo95,hi95\n";
  for (std::size_t i = 0; i < ce.grid.size(); ++i) {
    auto j = static_cast<Eigen::Index>(i);
    out << fmt(ce.grid[i]) << ',' << fmt(ce.value[j]) << ',' << fmt(ce.se[j]) << ','
        << fmt(ce.lo95[j]) << ',' << fmt(ce.hi95[j]) << "\n";
  }
}

void write_cumhaz_csv(const fs::path& path, const FitResult& fit, const Dataset& ds) {
  Eigen::VectorXd xl, xs;
  mean_covariates(ds, xl, xs);
  BreslowHazard bh = breslow_jumps(fit.theta_hat.alpha_A, fit.theta_hat.alpha_X, ds);
  std::ofstream out(path);
  out << "time,arm,cumhaz\n";
  for (int arm = 0; arm <= 1; ++arm) {
    double ee = std::exp(arm * fit.theta_hat.alpha_A + xs.dot(fit.theta_hat.alpha_X));
    for (int m = 0; m < bh.M(); ++m)
      out << fmt(bh.death_times[static_cast<std::size_t>(m)]) << ',' << arm << ','
          << fmt(ee * bh.cumulative[static_cast<std::size_t>(m)]) << "\n";
  }
}

json fit_to_json(const FitResult& fit) {
  json j;
  j["loglik"] = fit.loglik;
  j["aic"] = fit.aic;
  j["bic"] = fit.bic;
  j["k1"] = fit.k1;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["message"] = fit.message;
  j["n_subjects"] = fit.n_subjects;
  j["covariance_ok"] = fit.covariance_ok;
  j["dims"] = {{"k1", fit.dims.k1}, {"P", fit.dims.P}, {"Q", fit.dims.Q}, {"L", fit.dims.L}};
  j["knots"] = {{"boundary_lo", fit.knots.boundary_lo},
                {"boundary_hi", fit.knots.boundary_hi},
                {"interior", fit.knots.interior}};
  j["theta_unconstrained"] = std::vector<double>(
      fit.theta_unconstrained.data(), fit.theta_unconstrained.data() + fit.theta_unconstrained.size());
  if (fit.covariance_ok) {
    std::vector<std::vector<double>> cov;
    for (Eigen::Index i = 0; i < fit.covariance.rows(); ++i)
      cov.emplace_back(fit.covariance.row(i).begin(), fit.covariance.row(i).end());
    j["covariance"] = cov;
  }
  return j;
}

FitResult fit_from_json(const json& j) {
  FitResult fit;
  fit.loglik = j.at("loglik");
  fit.aic = j.at("aic");
  fit.bic = j.at("bic");
  fit.k1 = j.at("k1");
  fit.converged = j.at("converged");
  fit.iterations = j.at("iterations");
  fit.message = j.value("message", "");
  fit.n_subjects = j.at("n_subjects");
  fit.covariance_ok = j.at("covariance_ok");
  fit.dims.k1 = j.at("dims").at("k1");
  fit.dims.P = j.at("dims").at("P");
  fit.dims.Q = j.at("dims").at("Q");
  fit.dims.L = j.at("dims").at("L");
  fit.knots.boundary_lo = j.at("knots").at("boundary_lo");
  fit.knots.boundary_hi = j.at("knots").at("boundary_hi");
  fit.knots.interior = j.at("knots").at("interior").get<std::vector<double>>();
  std::vector<double> theta = j.at("theta_unconstrained").get<std::vector<double>>();
  fit.theta_unconstrained = Eigen::Map<Eigen::VectorXd>(theta.data(),
                                                        static_cast<Eigen::Index>(theta.size()));
  fit.theta_hat = unpack_unconstrained(fit.theta_unconstrained, fit.dims);
  if (fit.covariance_ok) {
    auto cov = j.at("covariance").get<std::vector<std::vector<double>>>();
    const auto n = static_cast<Eigen::Index>(cov.size());
    fit.covariance.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index c = 0; c < n; ++c)
        fit.covariance(i, c) = cov[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
  }
  return fit;
}

std::vector<double> make_grid(double lo, double hi, double step) {
  std::vector<double> g;
  for (double t = lo; t <= hi + 1e-12; t += step) g.push_back(t);
  return g;
}

int cmd_fit(const std::string& data_path, int k1, const std::string& select_range,
            const std::string& criterion, const std::string& out_dir, bool no_efron,
            double grid_max, double grid_step) {
  Dataset raw;
  try {
    raw = load_dataset(data_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  fs::create_directories(out_dir);

  Dataset ds;
  FitResult fit_res;
  json sweep = json::array();
  try {
    if (no_efron) {
      ds = raw;
      ds.efron_applied = true;  // deliberately skip the adjustment
      double max_t = 0.0;
      bool max_is_event = false;
      for (const Subject& s : ds.subjects)
        if (s.obs_time >= max_t) {
          max_t = s.obs_time;
          max_is_event = s.event;
        }
      if (!max_is_event)
        std::cerr << "warning: --no-efron with a censored maximum observation; "
                     "the group-3 likelihood may be undefined\n";
    } else {
      ds = apply_efron_adjustment(raw);
    }

    FitOptions opts;
    if (!select_range.empty()) {
      auto dots = select_range.find("..");
      if (dots == std::string::npos)
        throw std::invalid_argument("--select-knots expects MIN..MAX");
      int k_min = std::stoi(select_range.substr(0, dots));
      int k_max = std::stoi(select_range.substr(dots + 2));
      KnotCriterion crit = criterion == "bic" ? KnotCriterion::BIC : KnotCriterion::AIC;
      KnotSelection sel = select_knots(ds, k_min, k_max, crit, opts);
      fit_res = sel.best_fit;
      for (const auto& row : sel.table)
        sweep.push_back({{"k1", row.k1},
                         {"ok", row.ok},
                         {"converged", row.converged},
                         {"loglik", row.loglik},
                         {"n_params", row.n_params},
                         {"aic", row.aic},
                         {"bic", row.bic},
                         {"error", row.error}});
    } else {
      fit_res = fit(ds, k1, opts);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  std::vector<double> grid = make_grid(0.0, grid_max, grid_step);
  write_params_csv(fs::path(out_dir) / "params.csv", fit_res);
  write_curve_csv(fs::path(out_dir) / "curves_mu.csv", curve_ci(fit_res, grid, CurveKind::Mu));
  write_curve_csv(fs::path(out_dir) / "curves_trt.csv",
                  curve_ci(fit_res, grid, CurveKind::Treatment));
  write_cumhaz_csv(fs::path(out_dir) / "cumhaz.csv", fit_res, ds);

  json fj = fit_to_json(fit_res);
  if (!sweep.empty()) fj["knot_sweep"] = sweep;
  fj["data_path"] = fs::absolute(data_path).string();
  std::ofstream(fs::path(out_dir) / "fit.json") << fj.dump(2) << "\n";
  write_manifest(out_dir, "fit",
                 {{"data", fs::absolute(data_path).string()},
                  {"k1", k1},
                  {"select_knots", select_range},
                  {"criterion", criterion},
                  {"no_efron", no_efron},
                  {"grid_max", grid_max},
                  {"grid_step", grid_step}});
  if (!fit_res.converged) {
    std::cerr << "warning: fit did not converge: " << fit_res.message << "\n";
    return 2;
  }
  return 0;
}

void write_sim_report(const fs::path& out_dir, const SimConfig& cfg, const SimReport& rep) {
  {
    std::ofstream out(out_dir / "table1.csv");
    out << "model,parameter,truth,bias,pct_bias,emp_se,mean_se,cp\n";
    auto dump = [&](const char* model, const std::vector<ParamMetric>& ms) {
      for (const auto& m : ms)
        out << model << ',' << m.name << ',' << fmt(m.truth) << ',' << fmt(m.bias) << ','
            << fmt(m.pct_bias) << ',' << fmt(m.emp_se) << ',' << fmt(m.mean_se) << ','
            << fmt(m.cp) << "\n";
    };
    dump("joint", rep.params);
    dump("naive", rep.naive_params);
  }
  {
    std::ofstream out(out_dir / "curve_cp.csv");
    out << "curve,tstar,truth,mean_estimate,cp\n";
    auto dump = [&](const char* name, const CurvePanel& p) {
      for (std::size_t i = 0; i < p.grid.size(); ++i)
        out << name << ',' << fmt(p.grid[i]) << ',' << fmt(p.truth[i]) << ','
            << fmt(p.mean_est[i]) << ',' << fmt(p.cp[i]) << "\n";
    };
    dump("beta_mu", rep.curve_mu);
    dump("beta_trt", rep.curve_trt);
  }
  {
    std::ofstream out(out_dir / "width_ratio.csv");
    out << "curve,tstar,width_ratio\n";
    for (std::size_t i = 0; i < rep.curve_mu.grid.size(); ++i)
      out << "beta_mu," << fmt(rep.curve_mu.grid[i]) << ','
          << fmt(rep.curve_mu.width_ratio[i]) << "\n";
    for (std::size_t i = 0; i < rep.curve_trt.grid.size(); ++i)
      out << "beta_trt," << fmt(rep.curve_trt.grid[i]) << ','
          << fmt(rep.curve_trt.width_ratio[i]) << "\n";
  }
  {
    std::ofstream out(out_dir / "censoring.csv");
    out << "overall,g3_fraction,cbld_fraction,censor_cap,censor_scale\n";
    out << fmt(rep.censoring.overall) << ',' << fmt(rep.censoring.g3_fraction) << ','
        << fmt(rep.censoring.cbld_fraction) << ',' << fmt(cfg.censor_cap) << ','
        << fmt(cfg.censor_scale) << "\n";
  }
  {
    std::ofstream out(out_dir / "knots_hist.csv");
    out << "criterion,k1,count\n";
    for (const auto& [k, c] : rep.knots_aic) out << "aic," << k << ',' << c << "\n";
    for (const auto& [k, c] : rep.knots_bic) out << "bic," << k << ',' << c << "\n";
  }
  json s;
  s["n_reps"] = rep.n_reps;
  s["n_failed"] = rep.n_failed;
  s["valid"] = rep.valid;
  s["mean_k1_aic"] = rep.mean_k1_aic;
  s["mean_k1_bic"] = rep.mean_k1_bic;
  s["failures"] = rep.failures;
  std::ofstream(out_dir / "summary.json") << s.dump(2) << "\n";
}

int cmd_simulate(const std::string& config_path, int reps, long seed, const std::string& out_dir,
                 const std::string& scenario) {
  SimConfig cfg;
  try {
    if (!config_path.empty()) cfg = load_sim_config(config_path);
    if (seed >= 0) cfg.seed = static_cast<unsigned long>(seed);
    cfg = scenario_config(cfg, scenario);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  fs::create_directories(out_dir);
  SimReport rep = run_monte_carlo(cfg, reps);
  write_sim_report(out_dir, cfg, rep);
  write_manifest(out_dir, "simulate",
                 {{"config", config_path},
                  {"reps", reps},
                  {"seed", seed},
                  {"scenario", scenario}});
  if (!rep.valid) {
    std::cerr << "warning: more than 10% of replicates failed; report flagged invalid\n";
    return 2;
  }
  return 0;
}

int cmd_qaly(const std::string& fit_dir, const std::vector<double>& horizons, double scale,
             const std::string& out_dir) {
  FitResult fit_res;
  Dataset ds;
  try {
    std::ifstream in(fs::path(fit_dir) / "fit.json");
    if (!in) throw std::runtime_error("cannot open " + fit_dir + "/fit.json");
    json j;
    in >> j;
    fit_res = fit_from_json(j);
    ds = apply_efron_adjustment(load_dataset(j.at("data_path").get<std::string>()));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  if (!fit_res.converged) {
    std::cerr << "error: fit in " << fit_dir << " did not converge\n";
    return 2;
  }
  for (double h : horizons)
    if (h <= 0.0) {
      std::cerr << "error: horizon must be positive, got " << h << "\n";
      return 1;
    }
  fs::create_directories(out_dir);
  Eigen::VectorXd xl, xs;
  mean_covariates(ds, xl, xs);
  BreslowHazard bh = breslow_jumps(fit_res.theta_hat.alpha_A, fit_res.theta_hat.alpha_X, ds);

  std::ofstream out(fs::path(out_dir) / "qaly.csv");
  out << "horizon,arm,estimate,se,lo95,hi95,warning\n";
  for (double h : horizons) {
    for (int arm = 0; arm <= 1; ++arm) {
      QalyEstimate q = qaly_se_delta(fit_res, ds, arm, xl, xs, h, scale);
      out << fmt(h) << ',' << arm << ',' << fmt(q.estimate) << ',' << fmt(q.se) << ','
          << fmt(q.lo95) << ',' << fmt(q.hi95) << ',' << q.warning << "\n";
      std::printf("%-6g months, arm %d: %.2f (%.2f, %.2f)\n", h, arm, q.estimate, q.lo95,
                  q.hi95);
    }
    QalyEstimate d = qaly_diff(fit_res, ds, xl, xs, h, scale);
    out << fmt(h) << ",diff," << fmt(d.estimate) << ',' << fmt(d.se) << ',' << fmt(d.lo95)
        << ',' << fmt(d.hi95) << ',' << d.warning << "\n";
    std::printf("%-6g months, diff : %.2f (%.2f, %.2f)\n", h, d.estimate, d.lo95, d.hi95);
  }
  write_manifest(out_dir, "qaly",
                 {{"fit", fs::absolute(fit_dir).string()},
                  {"horizons", horizons},
                  {"scale", scale}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint terminal-trend longitudinal and survival model"};
  app.require_subcommand(1);

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "Fit the joint model to a CSV dataset");
  std::string data_path, select_range, criterion = "aic", out_dir;
  int k1 = 0;
  bool no_efron = false;
  double grid_max = 25.0, grid_step = 0.25;
  fit_cmd->add_option("--data", data_path, "input CSV")->required();
  fit_cmd->add_option("--k1", k1, "spline basis dimension");
  fit_cmd->add_option("--select-knots", select_range, "sweep range MIN..MAX");
  fit_cmd->add_option("--criterion", criterion, "aic or bic")
      ->check(CLI::IsMember({"aic", "bic"}));
  fit_cmd->add_option("--out", out_dir, "output directory")->required();
  fit_cmd->add_flag("--no-efron", no_efron,
                    "skip the last-observation-as-death adjustment (failure demo)");
  fit_cmd->add_option("--grid-max", grid_max, "curve export grid maximum");
  fit_cmd->add_option("--grid-step", grid_step, "curve export grid step");

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "Run a Monte Carlo study");
  std::string config_path, scenario = "default", sim_out;
  int reps = 1;
  long seed = -1;
  sim_cmd->add_option("--config", config_path, "SimConfig JSON");
  sim_cmd->add_option("--reps", reps, "number of replicates")->required();
  sim_cmd->add_option("--seed", seed, "base seed (overrides config)");
  sim_cmd->add_option("--out", sim_out, "output directory")->required();
  sim_cmd->add_option("--scenario", scenario, "censoring scenario")
      ->check(CLI::IsMember({"default", "enable2", "intermediate", "cbld10", "cbld12.5",
                             "cbld15"}));

  // qaly
  auto* qaly_cmd = app.add_subcommand("qaly", "Mean QALY from a saved fit");
  std::string fit_dir, qaly_out;
  std::vector<double> horizons;
  double scale = 184.0;
  qaly_cmd->add_option("--fit", fit_dir, "fit output directory")->required();
  qaly_cmd->add_option("--horizon", horizons, "horizon(s) in months")->required();
  qaly_cmd->add_option("--scale", scale, "utility scale maximum (default 184)");
  qaly_cmd->add_option("--out", qaly_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (fit_cmd->parsed()) {
      if (select_range.empty() && k1 < 2) {
        std::cerr << "error: provide --k1 >= 2 or --select-knots MIN..MAX\n";
        return 1;
      }
      return cmd_fit(data_path, k1, select_range, criterion, out_dir, no_efron, grid_max,
                     grid_step);
    }
    if (sim_cmd->parsed()) return cmd_simulate(config_path, reps, seed, sim_out, scenario);
    if (qaly_cmd->parsed()) return cmd_qaly(fit_dir, horizons, scale, qaly_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
