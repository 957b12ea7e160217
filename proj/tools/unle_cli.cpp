#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "unle/harness.hpp"

namespace {

// Flags with a dedicated spelling; each maps onto the flat config key of the
// same name.
const std::vector<std::string> kRunFlags{
    "task",           "method",           "budget",          "rounds",
    "seed",           "observation",      "out",             "train.max_iter",
    "train.lr",       "train.mode",       "smc.L",           "smc.kernel_steps",
    "sampler.chains", "sampler.inner_steps", "metric.n",
};

struct Overrides {
  std::string config_file;
  std::map<std::string, std::string> flags;
  std::vector<std::string> sets;
};

void add_override_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_file, "flat key = value file (or a written config.json)");
  for (const auto& key : kRunFlags) cmd->add_option("--" + key, o.flags[key]);
  cmd->add_option("--set", o.sets, "extra key=value settings, e.g. --set divi.M=10")->take_all();
}

template <class Config>
void apply(Config& cfg, const Overrides& o) {
  if (!o.config_file.empty())
    for (const auto& [k, v] : unle::read_config_file(o.config_file)) cfg.set(k, v);
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  for (const auto& [k, v] : o.flags)
    if (!v.empty()) cfg.set(k, v);
}

int report_error(const nlohmann::json& err) {
  std::cerr << nlohmann::json{{"error", err}}.dump() << "\n";
  return 1;
}

int report_exception(const std::exception& e) {
  std::string kind = "invalid_argument";
  if (const auto* u = dynamic_cast<const unle::Error*>(&e)) kind = std::string(unle::to_string(u->kind()));
  return report_error({{"kind", kind}, {"message", e.what()}});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unnormalized neural likelihood estimation"};
  app.require_subcommand(1);

  Overrides run_o;
  CLI::App* run_cmd = app.add_subcommand("run", "train and sample one pipeline, write a run directory");
  add_override_flags(run_cmd, run_o);

  Overrides sweep_o;
  std::string tasks, methods, budgets, seeds, observations;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "run a grid of tasks x methods x budgets x seeds");
  add_override_flags(sweep_cmd, sweep_o);
  sweep_cmd->add_option("--tasks", tasks, "comma-separated task names");
  sweep_cmd->add_option("--methods", methods, "comma-separated methods");
  sweep_cmd->add_option("--budgets", budgets, "comma-separated budgets (1e3 accepted)");
  sweep_cmd->add_option("--seeds", seeds, "comma-separated seeds");
  sweep_cmd->add_option("--observations", observations, "comma-separated observation indices");

  std::string results_path, plot_out = ".";
  CLI::App* plot_cmd = app.add_subcommand("plot-data", "reshape results.csv into tidy plotting tables");
  plot_cmd->add_option("--results", results_path, "results.csv to read")->required();
  plot_cmd->add_option("--out", plot_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      unle::RunConfig cfg;
      apply(cfg, run_o);
      const unle::RunOutcome r = unle::run(cfg);
      if (!r.ok) return report_error(r.error);
      std::cout << r.dir.string() << "\n";
      return 0;
    }
    if (*sweep_cmd) {
      unle::SweepConfig cfg;
      apply(cfg, sweep_o);
      if (!tasks.empty()) cfg.set("sweep.tasks", tasks);
      if (!methods.empty()) cfg.set("sweep.methods", methods);
      if (!budgets.empty()) cfg.set("sweep.budgets", budgets);
      if (!seeds.empty()) cfg.set("sweep.seeds", seeds);
      if (!observations.empty()) cfg.set("sweep.observations", observations);
      const unle::SweepOutcome s = unle::sweep(cfg);
      std::cout << s.results_path.string() << "\n";
      std::cerr << s.cells << " cells, " << s.failures << " failed\n";
      return s.failures == 0 ? 0 : 3;
    }
    const unle::PlotDataOutcome p = unle::emit_plot_data(results_path, plot_out);
    std::cout << p.accuracy_path.string() << "\n" << p.runtime_path.string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    return report_exception(e);
  }
}
