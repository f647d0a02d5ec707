// qnet: batch front end for simulating infinite-server queueing networks and
// recovering their parameters from Poisson-sampled population data.
//
// Subcommands: simulate, moments, estimate, experiment.
// Exit codes: 0 success, 2 config/validation error, 3 simulation failure,
// 4 estimation finished without convergence.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "qnet/experiments.hpp"
#include "qnet/io.hpp"

namespace fs = std::filesystem;
using qnet::Json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitSimulation = 3;
constexpr int kExitNotConverged = 4;

struct CommonOptions {
  std::string config_path;
  std::string params_path;
  std::string out_dir = ".";
  std::uint64_t seed = 1;
  int jobs = 1;
  double beta = 5.0;
  std::int64_t m = 1000;
  int runs = 1;
  std::string mode = "known";
  double burnin = -1.0;
  bool full = false;
  bool keep_true = false;

  Json config;  // parsed --config document, if any
};

void add_common_flags(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--config", opt.config_path, "JSON run configuration");
  cmd->add_option("--seed", opt.seed, "master seed");
  cmd->add_option("--jobs", opt.jobs, "worker count for replications");
  cmd->add_option("--out", opt.out_dir, "output directory");
  cmd->add_option("--m", opt.m, "number of sampling epochs");
  cmd->add_option("--R", opt.runs, "number of replications");
  cmd->add_option("--beta", opt.beta, "Poisson sampling rate");
  cmd->add_option("--mode", opt.mode, "estimation mode: known|parametric|modelfree|withp");
  cmd->add_option("--burnin", opt.burnin, "start empty and discard [0, T] instead of stationary init");
  cmd->add_flag("--full", opt.full, "run experiments at paper scale");
}

// --config values fill in anything the command line did not set explicitly.
void merge_config(const CLI::App* cmd, CommonOptions& opt) {
  if (opt.config_path.empty()) return;
  opt.config = Json::parse(qnet::io_detail::read_file(opt.config_path));
  if (opt.config.contains("version") && opt.config.at("version").get<int>() != 1)
    throw std::invalid_argument("unsupported config schema version");
  auto take = [&](const char* flag, const char* key, auto& slot) {
    using T = std::decay_t<decltype(slot)>;
    if (cmd->count(flag) == 0 && opt.config.contains(key)) slot = opt.config.at(key).get<T>();
  };
  take("--seed", "seed", opt.seed);
  take("--jobs", "jobs", opt.jobs);
  take("--out", "out", opt.out_dir);
  take("--m", "m", opt.m);
  take("--R", "R", opt.runs);
  take("--beta", "beta", opt.beta);
  take("--mode", "mode", opt.mode);
  take("--burnin", "burnin", opt.burnin);
  if (opt.config.contains("params_path") && opt.params_path.empty())
    opt.params_path = opt.config.at("params_path").get<std::string>();
}

qnet::NetworkParams load_run_params(const CommonOptions& opt) {
  if (!opt.params_path.empty()) {
    if (!fs::exists(opt.params_path))
      throw std::invalid_argument("params file does not exist: " + opt.params_path);
    return qnet::load_params(opt.params_path);
  }
  if (opt.config.contains("params")) return qnet::params_from_json(opt.config.at("params"));
  throw std::invalid_argument("no network parameters given (use --params or config)");
}

qnet::SolverOptions solver_options(const CommonOptions& opt) {
  qnet::SolverOptions s;
  s.seed = opt.seed;
  if (opt.config.contains("solver")) {
    const auto& j = opt.config.at("solver");
    if (j.contains("starts")) s.starts = j.at("starts").get<int>();
    if (j.contains("max_iterations")) s.max_iterations = j.at("max_iterations").get<int>();
    if (j.contains("gradient_tol")) s.gradient_tol = j.at("gradient_tol").get<double>();
    if (j.contains("lambda_cap")) s.projection.lambda_cap = j.at("lambda_cap").get<double>();
  }
  return s;
}

int cmd_simulate(const CLI::App* cmd, CommonOptions& opt) {
  merge_config(cmd, opt);
  qnet::NetworkParams params = load_run_params(opt);
  if (opt.m < 2) throw std::invalid_argument("m must be at least 2");
  const auto report = qnet::validate(params, qnet::EstimationMode::KnownServices);
  if (!report.passed("shape") || !report.passed("q_entries_in_unit_interval") ||
      !report.passed("sub_stochastic_rows") || !report.passed("drain"))
    throw std::invalid_argument("network parameters fail validation");

  qnet::SimulateOptions sim;
  sim.keep_true_counts = opt.keep_true;
  if (opt.burnin >= 0.0) sim.burnin = opt.burnin;
  try {
    fs::create_directories(opt.out_dir);
    std::vector<qnet::ObservationLog> logs =
        qnet::replicate(params, opt.beta, opt.m, opt.runs, opt.seed, sim, opt.jobs);
    for (int r = 0; r < opt.runs; ++r) {
      const std::string stem =
          opt.runs == 1 ? "observations" : "observations_run" + std::to_string(r + 1);
      qnet::write_log(logs[r], fs::path(opt.out_dir) / (stem + ".csv"));
    }
  } catch (const std::exception& e) {
    std::cerr << "simulation failed: " << e.what() << "\n";
    return kExitSimulation;
  }
  return kExitOk;
}

int cmd_moments(const CLI::App* cmd, CommonOptions& opt) {
  merge_config(cmd, opt);
  qnet::NetworkParams params = load_run_params(opt);
  const qnet::MomentSet ms = qnet::observed_moments(params, opt.beta, true);
  qnet::write_moments(ms, opt.out_dir);
  return kExitOk;
}

int cmd_estimate(const CLI::App* cmd, CommonOptions& opt, const std::string& log_path,
                 const std::string& moments_path) {
  merge_config(cmd, opt);
  qnet::NetworkParams model = load_run_params(opt);
  const qnet::EstimationMode mode = qnet::mode_from_name(opt.mode);

  qnet::ThetaSpace space;
  space.n = model.n;
  space.mode = mode;
  space.services = model.services;
  space.p = model.p;

  std::optional<qnet::MomentSet> moments;
  double beta = opt.beta;
  if (!moments_path.empty()) {
    if (!fs::exists(moments_path))
      throw std::invalid_argument("moments file does not exist: " + moments_path);
    moments = qnet::read_moments(moments_path);
    if (cmd->count("--beta") == 0) beta = moments->beta;
  }

  std::optional<qnet::ObservationLog> log;
  if (!log_path.empty()) {
    if (!fs::exists(log_path))
      throw std::invalid_argument("log file does not exist: " + log_path);
    log = qnet::read_log(log_path);
    if (log->n() != model.n)
      throw std::invalid_argument("log and model disagree on the station count");
    if (cmd->count("--beta") == 0) beta = log->beta;
  }
  if (!log && !moments) throw std::invalid_argument("estimate needs --log or --moments");
  space.beta = beta;

  const qnet::SolverOptions opts = solver_options(opt);
  qnet::EstimationResult result;
  if (log) {
    result = qnet::estimate(*log, space, opts);
  } else {
    result = qnet::estimate_least_squares(*moments, space, opts);
  }
  qnet::write_result(result, opt.out_dir);
  return result.converged ? kExitOk : kExitNotConverged;
}

int cmd_experiment(const CLI::App* cmd, CommonOptions& opt, const std::string& name,
                   const std::string& topology) {
  merge_config(cmd, opt);
  const fs::path out = opt.out_dir;
  if (name == "experiment-1") {
    const int runs = cmd->count("--R") ? opt.runs : (opt.full ? 1000 : 30);
    const std::int64_t m = cmd->count("--m") ? opt.m : 250000;
    const double beta = cmd->count("--beta") ? opt.beta : 5.0;
    qnet::run_experiment1(qnet::topology_from_name(topology), runs, m, beta, opt.seed,
                          opt.jobs, out);
  } else if (name == "experiment-2") {
    std::vector<std::int64_t> ms =
        opt.full ? std::vector<std::int64_t>{100000, 500000, 1000000, 2000000, 3000000}
                 : std::vector<std::int64_t>{20000, 100000, 500000};
    if (cmd->count("--m")) ms = {opt.m};
    const double beta = cmd->count("--beta") ? opt.beta : 5.0;
    qnet::run_experiment2(ms, beta, opt.seed, out);
  } else if (name == "experiment-3") {
    const std::int64_t m = cmd->count("--m") ? opt.m : (opt.full ? 2000000 : 500000);
    const double beta = cmd->count("--beta") ? opt.beta : 10.0;
    qnet::run_experiment3(m, beta, opt.seed, out);
  } else if (name == "experiment-4") {
    const std::int64_t m = cmd->count("--m") ? opt.m : (opt.full ? 2000000 : 1000000);
    const double beta = cmd->count("--beta") ? opt.beta : 3.0;
    qnet::run_experiment4(m, beta, opt.seed, out);
  } else {
    throw std::invalid_argument("unknown experiment: " + name);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"infinite-server queueing network simulation and inference"};
  app.require_subcommand(1);

  CommonOptions opt;
  std::string log_path, moments_path, experiment_name, topology = "line";

  auto* sim = app.add_subcommand("simulate", "simulate a network and write an observation log");
  add_common_flags(sim, opt);
  sim->add_option("--params", opt.params_path, "network parameters JSON");
  sim->add_flag("--keep-true", opt.keep_true, "retain the uncensored counts");

  auto* mom = app.add_subcommand("moments", "write analytic moments for a parameter point");
  add_common_flags(mom, opt);
  mom->add_option("--params", opt.params_path, "network parameters JSON");

  auto* est = app.add_subcommand("estimate", "estimate parameters from a log or moment files");
  add_common_flags(est, opt);
  est->add_option("--params,--model", opt.params_path,
                  "model structure JSON (services family, known values, p)");
  est->add_option("--log", log_path, "observation log CSV (sidecar JSON alongside)");
  est->add_option("--moments", moments_path, "moment set JSON (alternative to --log)");

  auto* exp = app.add_subcommand("experiment", "run one of the packaged studies");
  add_common_flags(exp, opt);
  exp->add_option("--name", experiment_name, "experiment-1 | experiment-2 | experiment-3 | experiment-4")
      ->required();
  exp->add_option("--topology", topology, "experiment-1 topology: line|circle|symcircle|cliques");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(sim, opt);
    if (mom->parsed()) return cmd_moments(mom, opt);
    if (est->parsed()) return cmd_estimate(est, opt, log_path, moments_path);
    if (exp->parsed()) return cmd_experiment(exp, opt, experiment_name, topology);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Json::parse_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}
