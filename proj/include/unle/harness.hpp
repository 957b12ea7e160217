#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "unle/errors.hpp"
#include "unle/metrics.hpp"
#include "unle/tasks.hpp"
#include "unle/unle.hpp"

namespace unle {

/// Everything a run needs. Every key has a default; `explicit_keys` remembers
/// what the user set so task presets never override a user choice.
struct RunConfig {
  std::string task = "two_moons";
  std::string method = "aunle";
  int budget = 1000;
  int rounds = 10;
  std::uint64_t seed = 0;
  int observation = 0;
  /// Run directory; empty means $UNLE_OUT (or ./runs) plus a name derived
  /// from the other fields.
  std::string out;
  PipelineConfig pipeline;
  /// Posterior and reference draws compared by the metrics.
  int metric_n = 1000;
  ReferenceConfig reference;
  /// Directory of cached reference posteriors; empty disables the cache.
  std::string reference_cache;

  std::set<std::string> explicit_keys;

  /// Sets one flat key ("train.max_iter", "smc.L", ...). Throws
  /// std::invalid_argument on an unknown key or a malformed value.
  void set(const std::string& key, const std::string& value);
  /// Flat key -> value map of the resolved configuration.
  nlohmann::json to_json() const;
  std::vector<std::string> keys() const;
};

/// Reads `key = value` lines (`#` starts a comment) or a flat JSON object as
/// written to config.json. Throws Error(parse_error) with the line number.
std::map<std::string, std::string> read_config_file(const std::string& path);

/// Applies task presets for keys the user did not set: Gaussian Linear
/// Uniform with a sequential method at budgets up to 1000 trains 10
/// iterations per round, Lotka-Volterra uses learning rate 0.001. AUNLE
/// always has one round.
RunConfig resolve(RunConfig cfg);

/// Default run directory under $UNLE_OUT (or ./runs).
std::filesystem::path default_run_dir(const RunConfig& cfg);

/// One row of results.csv.
struct ResultRow {
  std::string task;
  std::string method;
  int budget = 0;
  int round = 0;
  std::string metric;
  double value = 0.0;
  std::uint64_t seed = 0;
  int observation = 0;
};

const std::vector<std::string>& results_header();
void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows);
std::vector<ResultRow> read_results_csv(std::istream& in);

/// Cached reference posterior for (task, observation): loaded from
/// `cache_dir` when present, otherwise computed and published with an atomic
/// rename. The stream depends only on the task and observation, so every
/// method and seed compares against the same draws.
Eigen::MatrixXd cached_reference(const Task& task, int observation, int n,
                                 const ReferenceConfig& cfg, const std::string& cache_dir);

struct RunOutcome {
  bool ok = false;
  std::filesystem::path dir;
  std::vector<ResultRow> results;
  nlohmann::json error;  // {"kind", "message"} when !ok
};

/// Executes one pipeline and writes the run directory:
///   config.json, results.csv, and per round round_<r>/ with dataset.csv,
///   energy.ckpt, lz.ckpt (DIVI), posterior_samples.csv, metrics.json,
///   train_log.csv, sampler_diagnostics.json.
/// Failures are returned (and written to error.json), not thrown, except for
/// an invalid configuration, which throws std::invalid_argument.
RunOutcome run(const RunConfig& cfg);

struct SweepConfig {
  RunConfig base;
  std::vector<std::string> tasks{"two_moons"};
  std::vector<std::string> methods{"aunle"};
  std::vector<int> budgets{1000};
  std::vector<std::uint64_t> seeds{0};
  std::vector<int> observations{0};
  std::string out;

  /// Accepts sweep.tasks, sweep.methods, sweep.budgets, sweep.seeds and
  /// sweep.observations (comma-separated; budgets may be written 1e3), and
  /// forwards every other key to `base`.
  void set(const std::string& key, const std::string& value);
};

struct SweepOutcome {
  std::filesystem::path results_path;
  int cells = 0;
  int failures = 0;
};

/// Runs every cell of tasks x methods x budgets x observations x seeds in
/// order. Failed cells are listed in failures.csv and the sweep continues.
SweepOutcome sweep(const SweepConfig& cfg);

struct PlotDataOutcome {
  std::filesystem::path accuracy_path;
  std::filesystem::path runtime_path;
  std::size_t accuracy_rows = 0;
  std::size_t runtime_rows = 0;
};

/// Reshapes results.csv into accuracy.csv (final-round metric per task,
/// method, budget and metric, aggregated over seeds and observations) and
/// runtime.csv (minutes and fraction of total per run and component).
PlotDataOutcome emit_plot_data(const std::string& results_csv, const std::string& out_dir);

}  // namespace unle
