#include "unle/harness.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "unle/csv.hpp"
#include "unle/ebm.hpp"

namespace unle {

namespace fs = std::filesystem;
using Eigen::Index;
using Eigen::MatrixXd;

namespace {

long long parse_integer(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || used == 0 || d != std::floor(d) || std::abs(d) > 9.0e15)
    throw std::invalid_argument("'" + key + "' expects an integer, got '" + v + "'");
  return static_cast<long long>(d);
}

int parse_int(const std::string& key, const std::string& v) {
  const long long x = parse_integer(key, v);
  if (x < INT32_MIN || x > INT32_MAX) throw std::invalid_argument("'" + key + "' is out of range");
  return static_cast<int>(x);
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || used == 0 || !std::isfinite(d))
    throw std::invalid_argument("'" + key + "' expects a number, got '" + v + "'");
  return d;
}

std::uint64_t parse_seed(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw std::invalid_argument("'" + key + "' expects a non-negative integer, got '" + v + "'");
  return std::stoull(v);
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<nlohmann::json(const RunConfig&)> get;
};

template <class Get>
Field int_field(Get get) {
  return {[get](RunConfig& c, const std::string& k, const std::string& v) { get(c) = parse_int(k, v); },
          [get](const RunConfig& c) { return nlohmann::json(get(const_cast<RunConfig&>(c))); }};
}

template <class Get>
Field real_field(Get get) {
  return {[get](RunConfig& c, const std::string& k, const std::string& v) { get(c) = parse_real(k, v); },
          [get](const RunConfig& c) { return nlohmann::json(get(const_cast<RunConfig&>(c))); }};
}

template <class Get>
Field string_field(Get get) {
  return {[get](RunConfig& c, const std::string&, const std::string& v) { get(c) = v; },
          [get](const RunConfig& c) { return nlohmann::json(get(const_cast<RunConfig&>(c))); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    t["task"] = string_field([](RunConfig& c) -> std::string& { return c.task; });
    t["method"] = string_field([](RunConfig& c) -> std::string& { return c.method; });
    t["budget"] = int_field([](RunConfig& c) -> int& { return c.budget; });
    t["rounds"] = int_field([](RunConfig& c) -> int& { return c.rounds; });
    t["seed"] = {[](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_seed(k, v); },
                 [](const RunConfig& c) { return nlohmann::json(c.seed); }};
    t["observation"] = int_field([](RunConfig& c) -> int& { return c.observation; });
    t["out"] = string_field([](RunConfig& c) -> std::string& { return c.out; });

    t["train.max_iter"] = int_field([](RunConfig& c) -> int& { return c.pipeline.train.max_iter; });
    t["train.lr"] = real_field([](RunConfig& c) -> double& { return c.pipeline.train.learning_rate; });
    t["train.mode"] = {[](RunConfig& c, const std::string&, const std::string& v) {
                         c.pipeline.train.mode = train_mode_from_string(v);
                       },
                       [](const RunConfig& c) {
                         return nlohmann::json(std::string(to_string(c.pipeline.train.mode)));
                       }};
    t["train.particles"] = int_field([](RunConfig& c) -> int& { return c.pipeline.train.particles; });
    t["train.mcmc_steps"] = int_field([](RunConfig& c) -> int& { return c.pipeline.train.mcmc_steps; });
    t["train.warmup_steps"] = int_field([](RunConfig& c) -> int& { return c.pipeline.train.warmup_steps; });
    t["train.batch_size"] = int_field([](RunConfig& c) -> int& { return c.pipeline.train.batch_size; });
    t["train.init_step_size"] =
        real_field([](RunConfig& c) -> double& { return c.pipeline.train.init_step_size; });
    t["smc.L"] = int_field([](RunConfig& c) -> int& { return c.pipeline.train.smc.L; });
    t["smc.kernel_steps"] = int_field([](RunConfig& c) -> int& { return c.pipeline.train.smc.kernel_steps; });
    t["smc.resample_threshold"] =
        real_field([](RunConfig& c) -> double& { return c.pipeline.train.smc.resample_threshold; });

    t["sampler.chains"] = int_field([](RunConfig& c) -> int& { return c.pipeline.sampler.chains; });
    t["sampler.warmup"] = int_field([](RunConfig& c) -> int& { return c.pipeline.sampler.warmup; });
    t["sampler.thin"] = int_field([](RunConfig& c) -> int& { return c.pipeline.sampler.thin; });
    t["sampler.inner_steps"] = int_field([](RunConfig& c) -> int& { return c.pipeline.sampler.inner_steps; });
    t["sampler.exchange_warmup"] =
        int_field([](RunConfig& c) -> int& { return c.pipeline.sampler.exchange_warmup; });
    t["sampler.candidates"] = int_field([](RunConfig& c) -> int& { return c.pipeline.sampler.candidates; });
    t["sampler.init_step_size"] =
        real_field([](RunConfig& c) -> double& { return c.pipeline.sampler.init_step_size; });

    t["divi.n"] = int_field([](RunConfig& c) -> int& { return c.pipeline.divi.n; });
    t["divi.M"] = int_field([](RunConfig& c) -> int& { return c.pipeline.divi.M; });
    t["divi.inner_steps"] = int_field([](RunConfig& c) -> int& { return c.pipeline.divi.inner_steps; });
    t["divi.max_iter"] = int_field([](RunConfig& c) -> int& { return c.pipeline.divi.max_iter; });
    t["divi.lr"] = real_field([](RunConfig& c) -> double& { return c.pipeline.divi.learning_rate; });
    t["divi.width"] = int_field([](RunConfig& c) -> int& { return c.pipeline.divi.width; });
    t["divi.depth"] = int_field([](RunConfig& c) -> int& { return c.pipeline.divi.depth; });

    t["energy.width"] = int_field([](RunConfig& c) -> int& { return c.pipeline.energy_width; });
    t["energy.depth"] = int_field([](RunConfig& c) -> int& { return c.pipeline.energy_depth; });
    t["final_samples"] = int_field([](RunConfig& c) -> int& { return c.pipeline.final_samples; });

    t["metric.n"] = int_field([](RunConfig& c) -> int& { return c.metric_n; });
    t["reference.chains"] = int_field([](RunConfig& c) -> int& { return c.reference.chains; });
    t["reference.warmup"] = int_field([](RunConfig& c) -> int& { return c.reference.warmup; });
    t["reference.thin"] = int_field([](RunConfig& c) -> int& { return c.reference.thin; });
    t["reference.candidates"] = int_field([](RunConfig& c) -> int& { return c.reference.candidates; });
    t["reference.cache"] = string_field([](RunConfig& c) -> std::string& { return c.reference_cache; });
    return t;
  }();
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::io_error, "cannot write " + path.string());
  f << text;
  if (!f) throw Error(ErrorKind::io_error, "failed writing " + path.string());
}

template <class Fn>
std::string to_text(Fn fn) {
  std::ostringstream s;
  fn(s);
  return s.str();
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream s(v);
  std::string item;
  while (std::getline(s, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) throw std::invalid_argument("empty list '" + v + "'");
  return out;
}

nlohmann::json error_record(const std::exception& e) {
  std::string kind = "internal";
  if (const auto* u = dynamic_cast<const Error*>(&e)) kind = std::string(to_string(u->kind()));
  else if (dynamic_cast<const std::invalid_argument*>(&e)) kind = "invalid_argument";
  else if (dynamic_cast<const fs::filesystem_error*>(&e)) kind = std::string(to_string(ErrorKind::io_error));
  return {{"kind", kind}, {"message", e.what()}};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

MatrixXd first_columns(const MatrixXd& m, Index k) { return m.leftCols(std::min(k, m.cols())); }

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw std::invalid_argument("unknown configuration key '" + key + "'");
  it->second.set(*this, key, trim(value));
  explicit_keys.insert(key);
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, f] : fields()) j[k] = f.get(*this);
  return j;
}

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& kv : fields()) out.push_back(kv.first);
  return out;
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::io_error, "cannot open config file " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  const std::string text = buf.str();
  std::map<std::string, std::string> out;

  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorKind::parse_error, path + ": " + e.what());
    }
    for (const auto& [k, v] : j.items()) {
      if (v.is_string()) out[k] = v.get<std::string>();
      else if (v.is_number() || v.is_boolean()) out[k] = v.dump();
      else throw Error(ErrorKind::parse_error, path + ": value of '" + k + "' is not a scalar");
    }
    return out;
  }

  std::istringstream lines(text);
  std::string line;
  std::size_t no = 0;
  while (std::getline(lines, line)) {
    ++no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::parse_error, path + ":" + std::to_string(no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw Error(ErrorKind::parse_error, path + ":" + std::to_string(no) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

RunConfig resolve(RunConfig cfg) {
  const auto task = make_task(cfg.task);
  const Method method = method_from_string(cfg.method);
  auto user_set = [&](const std::string& k) { return cfg.explicit_keys.count(k) > 0; };
  if (method == Method::aunle) cfg.rounds = 1;
  if (cfg.rounds < 1) throw std::invalid_argument("rounds must be at least 1");
  if (cfg.budget < 1) throw std::invalid_argument("budget must be at least 1");
  if (cfg.budget < cfg.rounds)
    throw std::invalid_argument("budget (" + std::to_string(cfg.budget) + ") is smaller than rounds (" +
                                std::to_string(cfg.rounds) + ")");
  if (cfg.observation < 0) throw std::invalid_argument("observation index must be non-negative");
  if (cfg.metric_n < 0) throw std::invalid_argument("metric.n must be non-negative");
  if (cfg.task == "gaussian_linear_uniform" && method != Method::aunle && cfg.budget <= 1000 &&
      !user_set("train.max_iter"))
    cfg.pipeline.train.max_iter = 10;
  if (cfg.task == "lotka_volterra" && !user_set("train.lr")) cfg.pipeline.train.learning_rate = 0.001;
  cfg.pipeline.train.validate();
  cfg.pipeline.sampler.validate();
  cfg.pipeline.divi.validate();
  if (cfg.pipeline.energy_width < 1 || cfg.pipeline.energy_depth < 1 || cfg.pipeline.final_samples < 1)
    throw std::invalid_argument("energy.width, energy.depth and final_samples must be positive");
  return cfg;
}

fs::path default_run_dir(const RunConfig& cfg) {
  const char* env = std::getenv("UNLE_OUT");
  const fs::path root = env && *env ? fs::path(env) : fs::path("runs");
  return root / cfg.task / cfg.method / ("N" + std::to_string(cfg.budget)) /
         ("obs" + std::to_string(cfg.observation)) / ("seed" + std::to_string(cfg.seed));
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& results_header() {
  static const std::vector<std::string> h{"task",  "method", "budget",     "round", "metric",
                                          "value", "seed",   "observation"};
  return h;
}

void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
  csv::write_row(out, results_header());
  for (const auto& r : rows)
    csv::write_row(out, {r.task, r.method, std::to_string(r.budget), std::to_string(r.round), r.metric,
                         csv::format_double(r.value), std::to_string(r.seed),
                         std::to_string(r.observation)});
}

std::vector<ResultRow> read_results_csv(std::istream& in) {
  const csv::Table t = csv::read(in);
  const std::size_t c_task = t.column("task"), c_method = t.column("method"),
                    c_budget = t.column("budget"), c_round = t.column("round"),
                    c_metric = t.column("metric"), c_value = t.column("value"),
                    c_seed = t.column("seed");
  const auto obs_it = std::find(t.header.begin(), t.header.end(), "observation");
  std::vector<ResultRow> rows;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& f = t.rows[i];
    const std::size_t line = i + 2;
    auto as_int = [&](std::size_t c) {
      const double d = csv::parse_double(f[c], line);
      if (d != std::floor(d))
        throw Error(ErrorKind::parse_error, "line " + std::to_string(line) + ": expected an integer");
      return static_cast<long long>(d);
    };
    ResultRow r;
    r.task = f[c_task];
    r.method = f[c_method];
    r.budget = static_cast<int>(as_int(c_budget));
    r.round = static_cast<int>(as_int(c_round));
    r.metric = f[c_metric];
    r.value = csv::parse_double(f[c_value], line);
    r.seed = static_cast<std::uint64_t>(as_int(c_seed));
    if (obs_it != t.header.end())
      r.observation = static_cast<int>(as_int(static_cast<std::size_t>(obs_it - t.header.begin())));
    rows.push_back(std::move(r));
  }
  return rows;
}

MatrixXd cached_reference(const Task& task, int observation, int n, const ReferenceConfig& cfg,
                          const std::string& cache_dir) {
  const RandomStream rng =
      RandomStream(0x7265666572656e63ULL).child(fnv1a(task.name())).child(static_cast<std::uint64_t>(observation));
  auto compute = [&] {
    return reference_posterior(task, task.observation(observation), n, rng, cfg);
  };
  if (cache_dir.empty()) return compute();

  const fs::path dir(cache_dir);
  fs::create_directories(dir);
  const fs::path file =
      dir / (task.name() + "_obs" + std::to_string(observation) + "_n" + std::to_string(n) + "_c" +
             std::to_string(cfg.chains) + "_w" + std::to_string(cfg.warmup) + "_t" +
             std::to_string(cfg.thin) + ".csv");
  if (fs::exists(file)) {
    std::ifstream f(file, std::ios::binary);
    MatrixXd cached = read_samples_csv(f);
    if (cached.cols() == n && cached.rows() == task.theta_dim()) return cached;
  }
  const MatrixXd ref = compute();
  const fs::path tmp = file.string() + ".tmp." + std::to_string(::getpid());
  write_text(tmp, to_text([&](std::ostream& o) { write_samples_csv(o, ref); }));
  fs::rename(tmp, file);
  return ref;
}

// ---------------------------------------------------------------------------

RunOutcome run(const RunConfig& cfg_in) {
  const RunConfig cfg = resolve(cfg_in);
  RunOutcome outcome;
  outcome.dir = cfg.out.empty() ? default_run_dir(cfg) : fs::path(cfg.out);
  const auto t_start = std::chrono::steady_clock::now();

  try {
    fs::create_directories(outcome.dir);
    RunConfig written = cfg;
    written.out = outcome.dir.string();
    write_text(outcome.dir / "config.json", written.to_json().dump(2) + "\n");

    const auto task = make_task(cfg.task);
    const Method method = method_from_string(cfg.method);
    const Eigen::VectorXd x_o = task->observation(cfg.observation);
    const RandomStream root(cfg.seed);

    PipelineResult res =
        method == Method::aunle
            ? aunle(*task, cfg.budget, x_o, cfg.pipeline, root.child(0))
            : sunle(*task, cfg.budget, cfg.rounds, x_o, cfg.pipeline, method, root.child(0));

    MatrixXd reference;
    if (cfg.metric_n >= 2 && task->has_true_loglik())
      reference = cached_reference(*task, cfg.observation, cfg.metric_n, cfg.reference, cfg.reference_cache);

    auto row = [&](int round, const std::string& metric, double value) {
      outcome.results.push_back(
          {cfg.task, cfg.method, cfg.budget, round, metric, value, cfg.seed, cfg.observation});
    };

    RoundTiming total_parts;
    for (const RoundRecord& rec : res.rounds) {
      const fs::path rd = outcome.dir / ("round_" + std::to_string(rec.round));
      fs::create_directories(rd);
      write_text(rd / "dataset.csv", to_text([&](std::ostream& o) { write_dataset_csv(o, rec.data); }));
      write_text(rd / "energy.ckpt", rec.energy_checkpoint.dump() + "\n");
      if (!rec.lz_checkpoint.is_null()) write_text(rd / "lz.ckpt", rec.lz_checkpoint.dump() + "\n");
      write_text(rd / "posterior_samples.csv",
                 to_text([&](std::ostream& o) { write_samples_csv(o, rec.posterior_samples); }));
      write_text(rd / "train_log.csv", to_text([&](std::ostream& o) { write_train_log_csv(o, rec.train_log); }));
      write_text(rd / "sampler_diagnostics.json", rec.sampler_diagnostics.dump(2) + "\n");

      nlohmann::json metrics = {{"round", rec.round},
                                {"simulations", rec.data.size()},
                                {"invalid_simulations", rec.invalid_simulations},
                                {"reports", nlohmann::json::array()}};
      if (reference.cols() >= 2) {
        const Index k = std::min<Index>(rec.posterior_samples.cols(), reference.cols());
        const MatrixXd a = first_columns(rec.posterior_samples, k), b = first_columns(reference, k);
        if (k >= 100) {
          MetricReport c = c2st(a, b, root.child(1).child(static_cast<std::uint64_t>(rec.round)));
          metrics["reports"].push_back(c.to_json());
          row(rec.round, "c2st", c.value);
        }
        if (k >= 2) {
          MetricReport e = energy_distance(a, b);
          e.seed = cfg.seed;
          metrics["reports"].push_back(e.to_json());
          row(rec.round, "energy_distance", e.value);
        }
      }
      metrics["timing_seconds"] = {{"simulate", rec.timing.simulate},
                                   {"train", rec.timing.train},
                                   {"infer", rec.timing.infer}};
      write_text(rd / "metrics.json", metrics.dump(2) + "\n");
      total_parts.simulate += rec.timing.simulate;
      total_parts.train += rec.timing.train;
      total_parts.infer += rec.timing.infer;
    }

    const int last = res.rounds.empty() ? 0 : res.rounds.back().round;
    const double total = seconds_since(t_start);
    const double other = total - total_parts.simulate - total_parts.train - total_parts.infer;
    row(last, "time_simulate", total_parts.simulate / 60.0);
    row(last, "time_train", total_parts.train / 60.0);
    row(last, "time_infer", total_parts.infer / 60.0);
    row(last, "time_other", other / 60.0);
    row(last, "time_total", total / 60.0);
    write_text(outcome.dir / "results.csv",
               to_text([&](std::ostream& o) { write_results_csv(o, outcome.results); }));
    outcome.ok = true;
  } catch (const std::exception& e) {
    outcome.ok = false;
    outcome.error = error_record(e);
    std::error_code ec;
    if (fs::is_directory(outcome.dir, ec)) {
      try {
        write_text(outcome.dir / "error.json", outcome.error.dump(2) + "\n");
      } catch (const std::exception&) {
      }
    }
  }
  return outcome;
}

// ---------------------------------------------------------------------------

void SweepConfig::set(const std::string& key, const std::string& value) {
  if (key == "sweep.tasks") {
    tasks = split_list(value);
  } else if (key == "sweep.methods") {
    methods = split_list(value);
  } else if (key == "sweep.budgets") {
    budgets.clear();
    for (const auto& b : split_list(value)) budgets.push_back(parse_int(key, b));
  } else if (key == "sweep.seeds") {
    seeds.clear();
    for (const auto& s : split_list(value)) seeds.push_back(parse_seed(key, s));
  } else if (key == "sweep.observations") {
    observations.clear();
    for (const auto& o : split_list(value)) observations.push_back(parse_int(key, o));
  } else if (key == "out") {
    out = trim(value);
  } else {
    base.set(key, value);
  }
}

SweepOutcome sweep(const SweepConfig& cfg) {
  const char* env = std::getenv("UNLE_OUT");
  const fs::path root =
      !cfg.out.empty() ? fs::path(cfg.out) : (env && *env ? fs::path(env) : fs::path("runs")) / "sweep";
  fs::create_directories(root);
  const std::string cache =
      cfg.base.reference_cache.empty() ? (root / "reference_cache").string() : cfg.base.reference_cache;

  SweepOutcome outcome;
  outcome.results_path = root / "results.csv";
  std::vector<ResultRow> rows;
  std::ostringstream failures;
  csv::write_row(failures, {"task", "method", "budget", "seed", "observation", "kind", "message"});

  for (const auto& task : cfg.tasks)
    for (const auto& method : cfg.methods)
      for (int budget : cfg.budgets)
        for (int obs : cfg.observations)
          for (std::uint64_t seed : cfg.seeds) {
            ++outcome.cells;
            RunConfig c = cfg.base;
            c.task = task;
            c.method = method;
            c.budget = budget;
            c.observation = obs;
            c.seed = seed;
            c.reference_cache = cache;
            c.out = (root / task / method / ("N" + std::to_string(budget)) / ("obs" + std::to_string(obs)) /
                     ("seed" + std::to_string(seed)))
                        .string();
            nlohmann::json err;
            try {
              RunOutcome r = run(c);
              if (r.ok) rows.insert(rows.end(), r.results.begin(), r.results.end());
              else err = r.error;
            } catch (const std::exception& e) {
              err = error_record(e);
            }
            if (!err.is_null()) {
              ++outcome.failures;
              csv::write_row(failures, {task, method, std::to_string(budget), std::to_string(seed),
                                        std::to_string(obs), err["kind"].get<std::string>(),
                                        err["message"].get<std::string>()});
            }
          }

  write_text(outcome.results_path, to_text([&](std::ostream& o) { write_results_csv(o, rows); }));
  write_text(root / "failures.csv", failures.str());
  return outcome;
}

// ---------------------------------------------------------------------------

PlotDataOutcome emit_plot_data(const std::string& results_csv, const std::string& out_dir) {
  std::ifstream f(results_csv, std::ios::binary);
  if (!f) throw Error(ErrorKind::io_error, "cannot open " + results_csv);
  const std::vector<ResultRow> rows = read_results_csv(f);

  using RunKey = std::tuple<std::string, std::string, int, std::uint64_t, int>;
  auto run_key = [](const ResultRow& r) {
    return RunKey{r.task, r.method, r.budget, r.seed, r.observation};
  };
  auto is_time = [](const std::string& m) { return m.rfind("time_", 0) == 0; };

  // Final round per run and accuracy metric.
  std::map<std::pair<RunKey, std::string>, std::pair<int, double>> final_value;
  std::map<RunKey, std::map<std::string, double>> times;
  for (const auto& r : rows) {
    if (is_time(r.metric)) {
      times[run_key(r)][r.metric.substr(5)] += r.value;
      continue;
    }
    auto [it, fresh] = final_value.try_emplace({run_key(r), r.metric}, r.round, r.value);
    if (!fresh && r.round >= it->second.first) it->second = {r.round, r.value};
  }

  using GroupKey = std::tuple<std::string, std::string, int, std::string>;
  std::map<GroupKey, std::vector<double>> groups;
  for (const auto& [k, v] : final_value) {
    const auto& [task, method, budget, seed, obs] = k.first;
    groups[{task, method, budget, k.second}].push_back(v.second);
  }

  PlotDataOutcome outcome;
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  outcome.accuracy_path = dir / "accuracy.csv";
  outcome.runtime_path = dir / "runtime.csv";

  std::ostringstream acc;
  csv::write_row(acc, {"task", "method", "budget", "metric", "runs", "mean", "median", "min", "max"});
  for (auto& [k, vals] : groups) {
    std::sort(vals.begin(), vals.end());
    const std::size_t n = vals.size();
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(n);
    const double median = n % 2 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
    const auto& [task, method, budget, metric] = k;
    csv::write_row(acc, {task, method, std::to_string(budget), metric, std::to_string(n),
                         csv::format_double(mean), csv::format_double(median),
                         csv::format_double(vals.front()), csv::format_double(vals.back())});
    ++outcome.accuracy_rows;
  }

  std::ostringstream rt;
  csv::write_row(rt, {"task", "method", "budget", "seed", "observation", "component", "minutes", "fraction"});
  for (const auto& [k, parts] : times) {
    const auto& [task, method, budget, seed, obs] = k;
    const auto total_it = parts.find("total");
    double total = 0.0;
    if (total_it != parts.end()) {
      total = total_it->second;
    } else {
      for (const auto& [name, minutes] : parts) total += minutes;
    }
    for (const char* component : {"simulate", "train", "infer", "other"}) {
      const auto it = parts.find(component);
      if (it == parts.end()) continue;
      csv::write_row(rt, {task, method, std::to_string(budget), std::to_string(seed), std::to_string(obs),
                          component, csv::format_double(it->second),
                          csv::format_double(total > 0.0 ? it->second / total : 0.0)});
      ++outcome.runtime_rows;
    }
  }

  write_text(outcome.accuracy_path, acc.str());
  write_text(outcome.runtime_path, rt.str());
  return outcome;
}

}  // namespace unle
