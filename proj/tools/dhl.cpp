// dhl: reproducible experiment harness for the degenerate heat laboratory.
// One subcommand per experiment; every run writes a manifest with content
// hashes so identical config + seed reproduces identical artifacts.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "dhl/calibrate.hpp"
#include "dhl/config.hpp"
#include "dhl/runner.hpp"

namespace {

constexpr int kExitPass = 0;
constexpr int kExitAuditFailure = 1;
constexpr int kExitConfigError = 2;
constexpr int kExitRuntimeError = 3;

struct GlobalOpts {
  std::string config_path;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
  bool strict = false;
};

std::string default_out_root() {
  if (const char* env = std::getenv("DHL_OUT_ROOT")) return env;
  return "runs";
}

int run_experiment(dhl::Experiment exp, const GlobalOpts& g) {
  nlohmann::json doc = nlohmann::json::object();
  if (!g.config_path.empty()) {
    std::ifstream is(g.config_path);
    if (!is) {
      std::cerr << "error: cannot open config " << g.config_path << "\n";
      return kExitConfigError;
    }
    try {
      is >> doc;
    } catch (const std::exception& ex) {
      std::cerr << "error: config is not valid JSON: " << ex.what() << "\n";
      return kExitConfigError;
    }
  }
  doc["experiment"] = dhl::to_string(exp);
  if (g.seed_set) doc["seed"] = g.seed;
  if (g.threads > 0) doc["threads"] = g.threads;
  if (!g.out.empty())
    doc["out"] = g.out;
  else if (!doc.contains("out"))
    doc["out"] = default_out_root() + "/" + dhl::to_string(exp);

  dhl::RunConfig cfg;
  try {
    cfg = dhl::parse_config(doc, g.strict);
  } catch (const dhl::ValidationError& ex) {
    std::cerr << "configuration error:\n" << ex.what() << "\n";
    return kExitConfigError;
  }

  try {
    auto manifest = dhl::run(cfg);
    std::cout << (manifest.pass ? "PASS" : "FAIL") << " " << dhl::to_string(exp)
              << " -> " << cfg.out << "\n";
    for (const auto& flag : manifest.flags) std::cout << "  flag: " << flag << "\n";
    return manifest.pass ? kExitPass : kExitAuditFailure;
  } catch (const dhl::SolverError& ex) {
    std::cerr << "solver error in " << dhl::to_string(exp) << ": " << ex.what() << "\n";
    return kExitRuntimeError;
  } catch (const std::exception& ex) {
    std::cerr << "error in " << dhl::to_string(exp) << ": " << ex.what() << "\n";
    return kExitRuntimeError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"degenerate heat laboratory: environments, Dirichlet forms, "
               "heat kernels, functional-inequality and Harnack audits, and "
               "the local-CLT convergence experiment"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config_path, "JSON run configuration")
      ->envname("DHL_CONFIG");
  app.add_option("--out", g.out, "output directory (default $DHL_OUT_ROOT/<experiment>)");
  auto* seed_opt = app.add_option("--seed", g.seed, "override the config seed");
  app.add_option("--threads", g.threads, "worker threads for independent sub-runs");
  app.add_flag("--strict", g.strict, "reject unknown config keys (default on)");

  int exit_code = kExitPass;
  for (auto exp : {dhl::Experiment::env_gen, dhl::Experiment::inequality_audit,
                   dhl::Experiment::harnack, dhl::Experiment::log_audit,
                   dhl::Experiment::oscillation, dhl::Experiment::diagonal,
                   dhl::Experiment::clt_sweep, dhl::Experiment::full_pipeline}) {
    auto* sub = app.add_subcommand(dhl::to_string(exp), "run this experiment");
    sub->fallthrough();
    sub->callback([&g, &exit_code, exp, seed_opt]() {
      g.seed_set = seed_opt->count() > 0;
      exit_code = run_experiment(exp, g);
    });
  }

  auto* plot = app.add_subcommand("plot", "emit gnuplot scripts for a results directory");
  std::string plot_dir;
  plot->add_option("dir", plot_dir, "results directory")->required();
  plot->callback([&plot_dir, &exit_code]() {
    try {
      auto written = dhl::emit_plot_data(plot_dir);
      for (auto& f : written) std::cout << "wrote " << plot_dir << "/" << f << "\n";
    } catch (const std::exception& ex) {
      std::cerr << "plot: " << ex.what() << "\n";
      exit_code = kExitRuntimeError;
    }
  });

  auto* cal = app.add_subcommand(
      "calibrate", "regenerate the frozen calibration file (maintenance)");
  std::string cal_out = "data/calibration_d2.json";
  cal->add_option("--out", cal_out, "output path");
  cal->callback([&cal_out, &exit_code]() {
    try {
      auto j = dhl::calibrate_d2();
      std::ofstream os(cal_out);
      os << j.dump(2) << "\n";
      std::cout << "wrote " << cal_out << "\n";
    } catch (const std::exception& ex) {
      std::cerr << "calibrate: " << ex.what() << "\n";
      exit_code = kExitRuntimeError;
    }
  });

  CLI11_PARSE(app, argc, argv);
  return exit_code;
}
