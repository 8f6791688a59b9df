#ifndef CPALS_EXPERIMENT_HPP_
#define CPALS_EXPERIMENT_HPP_

#include "cpals/diagnostics.hpp"
#include "cpals/problems.hpp"
#include "cpals/solver.hpp"
#include "cpals/tensor.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cpals {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ProblemSpec {
  // Either a generator description or a path to a tensor text file.
  std::optional<std::string> path;
  ProblemKind kind = ProblemKind::random_dense;
  Eigen::Index I = 10, J = 10, K = 10;
  Eigen::Index r = 10;
  double collinearity = 0.99;
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  ProblemSpec problem;
  std::vector<Algorithm> algorithms;
  double tol = 1e-12;
  std::int64_t max_iter = 50000;
  double accel_alpha = 1e-6;
  std::int64_t accel_q = 100;
  double pinv_threshold = 1e-12;
  double lambda0 = 1.0;
  double gamma = 0.99;
  double lambda_min = 1e-8;
  std::int64_t trials = 20;
  std::string output_dir = ".";

  SolverConfig solver_config(Algorithm a) const {
    SolverConfig cfg = SolverConfig::defaults(a);
    cfg.tol = tol;
    cfg.max_iter = max_iter;
    cfg.accel_alpha = accel_alpha;
    cfg.accel_q = accel_q;
    cfg.pinv_threshold = pinv_threshold;
    cfg.schedule = has_decreasing_lambda(a)
                       ? LambdaSchedule::geometric(lambda0, gamma, lambda_min)
                       : LambdaSchedule::constant(lambda0);
    return cfg;
  }
};

inline ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig cfg;
  const json& p = j.at("problem");
  if (p.contains("path")) {
    cfg.problem.path = p.at("path").get<std::string>();
  } else {
    cfg.problem.kind = problem_kind_from_string(p.at("kind").get<std::string>());
    const auto dims = p.at("dims").get<std::vector<Eigen::Index>>();
    if (dims.size() != 3) throw std::invalid_argument("problem.dims must have 3 entries");
    cfg.problem.I = dims[0];
    cfg.problem.J = dims[1];
    cfg.problem.K = dims[2];
    if (p.contains("collinearity"))
      cfg.problem.collinearity = p.at("collinearity").get<double>();
  }
  cfg.problem.r = p.at("r").get<Eigen::Index>();
  cfg.problem.seed = p.value("seed", std::uint64_t{0});
  for (const auto& name : j.at("algorithms"))
    cfg.algorithms.push_back(algorithm_from_string(name.get<std::string>()));
  if (cfg.algorithms.empty())
    throw std::invalid_argument("algorithms must be nonempty");
  if (j.contains("solver")) {
    const json& s = j.at("solver");
    cfg.tol = s.value("tol", cfg.tol);
    cfg.max_iter = s.value("max_iter", cfg.max_iter);
    cfg.accel_alpha = s.value("accel_alpha", cfg.accel_alpha);
    cfg.accel_q = s.value("accel_q", cfg.accel_q);
    cfg.pinv_threshold = s.value("pinv_threshold", cfg.pinv_threshold);
    cfg.lambda0 = s.value("lambda0", cfg.lambda0);
    cfg.gamma = s.value("gamma", cfg.gamma);
    cfg.lambda_min = s.value("lambda_min", cfg.lambda_min);
  }
  cfg.trials = j.value("trials", cfg.trials);
  if (cfg.trials < 1) throw std::invalid_argument("trials must be >= 1");
  cfg.output_dir = j.value("output_dir", cfg.output_dir);
  return cfg;
}

inline json to_json(const ExperimentConfig& cfg) {
  json p;
  if (cfg.problem.path) {
    p["path"] = *cfg.problem.path;
  } else {
    p["kind"] = to_string(cfg.problem.kind);
    p["dims"] = {cfg.problem.I, cfg.problem.J, cfg.problem.K};
    p["collinearity"] = cfg.problem.collinearity;
  }
  p["r"] = cfg.problem.r;
  p["seed"] = cfg.problem.seed;
  json algs = json::array();
  for (Algorithm a : cfg.algorithms) algs.push_back(to_string(a));
  return {{"problem", p},
          {"algorithms", algs},
          {"solver",
           {{"tol", cfg.tol},
            {"max_iter", cfg.max_iter},
            {"accel_alpha", cfg.accel_alpha},
            {"accel_q", cfg.accel_q},
            {"pinv_threshold", cfg.pinv_threshold},
            {"lambda0", cfg.lambda0},
            {"gamma", cfg.gamma},
            {"lambda_min", cfg.lambda_min}}},
          {"trials", cfg.trials},
          {"output_dir", cfg.output_dir}};
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct TrialResult {
  Algorithm algorithm = Algorithm::als;
  std::int64_t trial = 0;
  std::int64_t iterations = 0;
  RunStatus status = RunStatus::max_iter;
  double time_sec = 0.0;
  double q_fit = std::numeric_limits<double>::quiet_NaN();
  double rate_r_squared = std::numeric_limits<double>::quiet_NaN();
  std::int64_t plateau_total = 0;
};

struct AlgorithmSummary {
  Algorithm algorithm = Algorithm::als;
  double median_iterations = 0.0;
  double median_time_sec = 0.0;
  double median_q_fit = std::numeric_limits<double>::quiet_NaN();
  std::int64_t plateau_total = 0;
  std::int64_t converged = 0, hit_max_iter = 0, failed = 0;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::string input_hash;
  std::vector<TrialResult> trials;
  std::vector<AlgorithmSummary> summaries;

  bool any_failure() const {
    return std::any_of(trials.begin(), trials.end(), [](const TrialResult& t) {
      return t.status == RunStatus::numerical_failure;
    });
  }

  const AlgorithmSummary& summary(Algorithm a) const {
    for (const auto& s : summaries)
      if (s.algorithm == a) return s;
    throw std::out_of_range("no summary for algorithm " + to_string(a));
  }

  /// Timing fields are optional so callers can compare deterministic content.
  json to_json(bool include_timing = true) const {
    json jt = json::array();
    for (const TrialResult& t : trials) {
      json e = {{"algorithm", to_string(t.algorithm)},
                {"trial", t.trial},
                {"iterations", t.iterations},
                {"status", to_string(t.status)},
                {"plateau_total", t.plateau_total}};
      if (std::isfinite(t.q_fit)) {
        e["q_fit"] = t.q_fit;
        e["rate_r_squared"] = t.rate_r_squared;
      }
      if (include_timing) e["time_sec"] = t.time_sec;
      jt.push_back(e);
    }
    json js = json::array();
    for (const AlgorithmSummary& s : summaries) {
      json e = {{"algorithm", to_string(s.algorithm)},
                {"median_iterations", s.median_iterations},
                {"plateau_total", s.plateau_total},
                {"status_counts",
                 {{"converged", s.converged},
                  {"max-iter", s.hit_max_iter},
                  {"numerical-failure", s.failed}}}};
      if (std::isfinite(s.median_q_fit)) e["median_q_fit"] = s.median_q_fit;
      if (include_timing) e["median_time_sec"] = s.median_time_sec;
      js.push_back(e);
    }
    return {{"config", cpals::to_json(config)},
            {"provenance", {{"seed", config.problem.seed}, {"input_hash", input_hash}}},
            {"per_algorithm", js},
            {"trials", jt}};
  }
};

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline void fnv1a(std::uint64_t& h, const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

inline std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setfill('0') << std::setw(16) << h;
  return os.str();
}

inline std::string trace_filename(Algorithm a, std::int64_t trial) {
  return "trace_" + to_string(a) + "_" + std::to_string(trial) + ".csv";
}

}  // namespace detail

/// Schema: iter,err_sq,f_val,grad_norm,lambda,accel_applied,elapsed_ms
inline void write_trace_csv(const ConvergenceTrace& trace, std::ostream& os) {
  os << "iter,err_sq,f_val,grad_norm,lambda,accel_applied,elapsed_ms\n";
  os << std::setprecision(17);
  for (const IterRecord& rec : trace.records) {
    os << rec.n << ',' << rec.err_sq << ',' << rec.f_val << ','
       << rec.grad_norm << ',' << rec.lambda_used << ','
       << (rec.accel_applied ? 1 : 0) << ',' << rec.elapsed_sec * 1e3 << '\n';
  }
}

inline void write_trace_csv(const ConvergenceTrace& trace,
                            const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_trace_csv: cannot open " + path);
  write_trace_csv(trace, os);
}

/// Materialize the (tensor, initial guess) pair for one trial. All algorithms
/// within a trial consume this identical pair.
inline CpProblem trial_problem(const ExperimentConfig& cfg, std::int64_t trial) {
  const std::uint64_t seed = cfg.problem.seed + std::uint64_t(trial);
  if (cfg.problem.path) {
    CpProblem p;
    p.tensor = load_tensor(*cfg.problem.path);
    // Guess comes from the generator's independent substream of the seed.
    p.initial_guess =
        random_cp_problem(p.tensor.I(), p.tensor.J(), p.tensor.K(),
                          cfg.problem.r, ProblemKind::random_dense, seed)
            .initial_guess;
    return p;
  }
  return random_cp_problem(cfg.problem.I, cfg.problem.J, cfg.problem.K,
                           cfg.problem.r, cfg.problem.kind, seed,
                           cfg.problem.collinearity);
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

/**
 * Runs every algorithm on every trial (trial k regenerates the problem with
 * seed base_seed + k; the tensor and initial guess are shared across the
 * algorithms within a trial), writes trace_<alg>_<trial>.csv per run plus
 * report.json, and returns the aggregate report. Per-trial numerical
 * failures are recorded, not fatal.
 */
inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);

  ExperimentReport report;
  report.config = cfg;

  std::uint64_t hash = 0xcbf29ce484222325ULL;
  // The hash identifies the mathematical inputs; where artifacts land on
  // disk is not one of them.
  json cfg_for_hash = to_json(cfg);
  cfg_for_hash.erase("output_dir");
  const std::string cfg_echo = cfg_for_hash.dump();
  detail::fnv1a(hash, cfg_echo.data(), cfg_echo.size());

  for (std::int64_t trial = 0; trial < cfg.trials; ++trial) {
    const CpProblem problem = trial_problem(cfg, trial);
    detail::fnv1a(hash, problem.tensor.values().data(),
                  size_t(problem.tensor.size()) * sizeof(double));
    for (Algorithm a : cfg.algorithms) {
      const ConvergenceTrace trace =
          run(problem.tensor, problem.initial_guess, cfg.solver_config(a));
      write_trace_csv(trace, (fs::path(cfg.output_dir) /
                              detail::trace_filename(a, trial))
                                 .string());
      TrialResult result;
      result.algorithm = a;
      result.trial = trial;
      result.iterations = trace.iterations();
      result.status = trace.status;
      result.time_sec =
          trace.records.empty() ? 0.0 : trace.records.back().elapsed_sec;
      try {
        const auto rate = diagnostics::estimate_rate(trace);
        result.q_fit = rate.q_fit;
        result.rate_r_squared = rate.r_squared;
      } catch (const std::invalid_argument&) {
        // Trace too short for a rate fit; leave NaN.
      }
      result.plateau_total =
          diagnostics::total_plateau_length(diagnostics::detect_swamp(trace));
      report.trials.push_back(result);
    }
  }
  report.input_hash = detail::hex64(hash);

  for (Algorithm a : cfg.algorithms) {
    AlgorithmSummary s;
    s.algorithm = a;
    std::vector<double> iters, times, qfits;
    for (const TrialResult& t : report.trials) {
      if (t.algorithm != a) continue;
      switch (t.status) {
        case RunStatus::converged: ++s.converged; break;
        case RunStatus::max_iter: ++s.hit_max_iter; break;
        case RunStatus::numerical_failure: ++s.failed; break;
      }
      if (t.status == RunStatus::numerical_failure) continue;
      iters.push_back(double(t.iterations));
      times.push_back(t.time_sec);
      if (std::isfinite(t.q_fit)) qfits.push_back(t.q_fit);
      s.plateau_total += t.plateau_total;
    }
    s.median_iterations = detail::median(iters);
    s.median_time_sec = detail::median(times);
    s.median_q_fit = detail::median(qfits);
    report.summaries.push_back(s);
  }

  std::ofstream os(fs::path(cfg.output_dir) / "report.json");
  if (!os) throw std::runtime_error("run_experiment: cannot write report.json");
  os << report.to_json().dump(2) << '\n';
  return report;
}

// ---------------------------------------------------------------------------
// Timing table
// ---------------------------------------------------------------------------

/// Canonical column order mirroring the six-algorithm comparison.
inline std::vector<Algorithm> canonical_algorithm_order() {
  return {Algorithm::als,    Algorithm::als_a, Algorithm::rals,
          Algorithm::rals_a, Algorithm::rals_l, Algorithm::rals_al};
}

/**
 * Per-algorithm median wall time and iteration count, columns in the
 * canonical order. A warm-up run (first algorithm, trial 0) is executed and
 * discarded before timing. Writes timing.csv next to the traces and returns
 * the formatted table.
 */
inline std::string timing_table(const ExperimentConfig& cfg,
                                ExperimentReport* out_report = nullptr) {
  // Warm-up: one untimed run so first-touch costs do not land in trial 0.
  {
    const CpProblem problem = trial_problem(cfg, 0);
    (void)run(problem.tensor, problem.initial_guess,
              cfg.solver_config(cfg.algorithms.front()));
  }
  const ExperimentReport report = run_experiment(cfg);

  std::vector<Algorithm> ordered;
  for (Algorithm a : canonical_algorithm_order())
    if (std::find(cfg.algorithms.begin(), cfg.algorithms.end(), a) !=
        cfg.algorithms.end())
      ordered.push_back(a);

  std::ostringstream table, csv;
  table << std::left << std::setw(22) << "metric";
  csv << "metric";
  for (Algorithm a : ordered) {
    table << std::setw(12) << to_string(a);
    csv << ',' << to_string(a);
  }
  table << '\n';
  csv << '\n';
  const auto row = [&](const std::string& name, auto value_of) {
    table << std::left << std::setw(22) << name;
    csv << name;
    for (Algorithm a : ordered) {
      std::ostringstream v;
      v << std::setprecision(6) << value_of(report.summary(a));
      table << std::setw(12) << v.str();
      csv << ',' << v.str();
    }
    table << '\n';
    csv << '\n';
  };
  row("median_time_sec",
      [](const AlgorithmSummary& s) { return s.median_time_sec; });
  row("median_iterations",
      [](const AlgorithmSummary& s) { return s.median_iterations; });
  if (cfg.trials == 1)
    table << "warning: trials=1, medians equal single samples\n";

  std::ofstream os(std::filesystem::path(cfg.output_dir) / "timing.csv");
  if (!os) throw std::runtime_error("timing_table: cannot write timing.csv");
  os << csv.str();
  if (out_report) *out_report = report;
  return table.str();
}

// ---------------------------------------------------------------------------
// Tidy plot data
// ---------------------------------------------------------------------------

/// Concatenates trace CSVs into long format `algorithm,iteration,err_sq`,
/// with err_sq passed through textually (bit-exact).
inline void plot_data(const std::vector<std::string>& trace_paths,
                      std::ostream& os) {
  os << "algorithm,iteration,err_sq\n";
  for (const std::string& path : trace_paths) {
    const std::string stem = std::filesystem::path(path).stem().string();
    // trace_<alg>_<trial>
    std::string alg = stem;
    if (alg.rfind("trace_", 0) == 0) alg = alg.substr(6);
    if (const auto us = alg.rfind('_'); us != std::string::npos)
      alg = alg.substr(0, us);

    std::ifstream is(path);
    if (!is) throw std::runtime_error("plot_data: cannot open " + path);
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto c1 = line.find(',');
      const auto c2 = line.find(',', c1 + 1);
      if (c1 == std::string::npos || c2 == std::string::npos)
        throw std::runtime_error("plot_data: malformed row in " + path);
      os << alg << ',' << line.substr(0, c1) << ','
         << line.substr(c1 + 1, c2 - c1 - 1) << '\n';
    }
  }
}

inline void plot_data(const std::vector<std::string>& trace_paths,
                      const std::string& out_path) {
  std::ofstream os(out_path);
  if (!os) throw std::runtime_error("plot_data: cannot open " + out_path);
  plot_data(trace_paths, os);
}

}  // namespace cpals

#endif  // CPALS_EXPERIMENT_HPP_
