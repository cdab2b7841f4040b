#include "qtm/experiment.hpp"

#include "qtm/parallel.hpp"
#include "qtm/random.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace qtm {

namespace {

void check_keys(const Json& j, const std::string& path, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError((path.empty() ? std::string("config") : path) + " must be an object");
  for (const auto& item : j.items())
    if (!allowed.count(item.key()))
      throw ConfigError((path.empty() ? item.key() : path + "." + item.key()) + " is not a recognized field");
}

const Json& null_json() {
  static const Json null;
  return null;
}

const Json& member(const Json& j, const std::string& key) { return j.contains(key) ? j.at(key) : null_json(); }

std::vector<double> number_list(const Json& j, const std::string& path) {
  const Eigen::VectorXd v = vector_from_json(j, path);
  if (v.size() == 0) throw ConfigError(path + " must be nonempty");
  return {v.data(), v.data() + v.size()};
}

Json read_json_file(const std::string& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + what + " " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(what + " " + path + " is not valid JSON: " + e.what());
  }
}

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

} // namespace

ExperimentConfig parse_config(const Json& j) {
  check_keys(j, "", {"instance_id", "problem", "distribution", "beliefs", "solver", "diagnostics", "oracle", "sweep",
                     "seed", "output_dir"});
  ExperimentConfig config;
  if (j.contains("instance_id")) {
    if (!j.at("instance_id").is_string()) throw ConfigError("instance_id must be a string");
    config.instance_id = j.at("instance_id").get<std::string>();
  }
  if (!j.contains("problem")) throw ConfigError("problem is required");
  config.problem = problem_from_json(j.at("problem"));
  if (!j.contains("distribution")) throw ConfigError("distribution is required");
  config.distribution = distribution_from_json(j.at("distribution"));
  try {
    validate(config.distribution, config.problem.u_max);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("distribution: ") + e.what());
  }
  if (dimension(config.distribution) != config.problem.m)
    throw ConfigError("distribution dimension differs from problem.m");
  if (!member(j, "beliefs").is_null()) {
    config.beliefs = beliefs_from_json(j.at("beliefs"));
    try {
      config.beliefs->validate(config.problem.m, config.problem.u_max);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("beliefs: ") + e.what());
    }
  }
  config.solver = solver_from_json(member(j, "solver"));
  const Json& warm = member(member(j, "solver"), "warm_start");
  if (!warm.is_null()) {
    if (!warm.is_string()) throw ConfigError("solver.warm_start must be a path string");
    config.warm_start = warm.get<std::string>();
  }
  config.diagnostics = diagnostics_from_json(member(j, "diagnostics"));
  config.oracle = oracle_config_from_json(member(j, "oracle"));
  if (!member(j, "sweep").is_null()) {
    const Json& s = j.at("sweep");
    check_keys(s, "sweep", {"n", "c"});
    SweepSpec sweep;
    for (double n : number_list(member(s, "n").is_null() ? Json::array({config.problem.n}) : s.at("n"), "sweep.n")) {
      if (n != static_cast<double>(static_cast<int>(n)) || n < 1) throw ConfigError("sweep.n entries must be integers >= 1");
      sweep.n.push_back(static_cast<int>(n));
    }
    for (double c : number_list(member(s, "c").is_null() ? Json::array({config.problem.c}) : s.at("c"), "sweep.c")) {
      if (!(c > 0.0)) throw ConfigError("sweep.c entries must be positive");
      sweep.c.push_back(c);
    }
    config.sweep = std::move(sweep);
  }
  if (j.contains("seed")) {
    const Json& seed = j.at("seed");
    if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<long long>() >= 0))
      throw ConfigError("seed must be a nonnegative integer");
    config.seed = seed.get<std::uint64_t>();
  }
  if (j.contains("output_dir")) {
    if (!j.at("output_dir").is_string()) throw ConfigError("output_dir must be a string");
    config.output_dir = j.at("output_dir").get<std::string>();
  }
  return config;
}

ExperimentConfig load_config(const std::string& path) { return parse_config(read_json_file(path, "config file")); }

Json resolved_config(const ExperimentConfig& config) {
  Json solver = to_json(config.solver);
  solver["warm_start"] = config.warm_start ? Json(*config.warm_start) : Json(nullptr);
  Json sweep = nullptr;
  if (config.sweep) sweep = {{"n", config.sweep->n}, {"c", config.sweep->c}};
  return {{"instance_id", config.instance_id},
          {"problem", to_json(config.problem)},
          {"distribution", to_json(config.distribution)},
          {"beliefs", config.beliefs ? to_json(*config.beliefs) : Json(nullptr)},
          {"solver", solver},
          {"diagnostics", to_json(config.diagnostics)},
          {"oracle", to_json(config.oracle)},
          {"sweep", sweep},
          {"seed", config.seed},
          {"output_dir", config.output_dir}};
}

std::string config_hash(const ExperimentConfig& config) { return hex64(fnv1a(resolved_config(config).dump())); }

std::uint64_t cell_seed(std::uint64_t master, int n, double c) {
  std::uint64_t h = hash_combine(master, static_cast<std::uint64_t>(n));
  h = hash_combine(h, hash_double(c));
  return hash_combine(h, fnv1a("cell"));
}

bool SolveOutcome::converged() const { return equilibrium ? equilibrium->converged : beliefs && beliefs->converged; }

double SolveOutcome::foc_residual() const {
  if (equilibrium) return equilibrium->foc_residual;
  double worst = 0.0;
  if (beliefs)
    for (const auto& g : beliefs->groups) worst = std::max(worst, g.equilibrium.foc_residual);
  return worst;
}

namespace {

SolverConfig solver_for(const ExperimentConfig& config, std::uint64_t seed, int workers) {
  SolverConfig solver = config.solver;
  solver.seed = derive_seed(seed, "solver");
  solver.workers = workers;
  if (config.warm_start) {
    const Json doc = read_json_file(*config.warm_start, "warm start file");
    if (!doc.contains("result") || doc.at("result").is_null())
      throw ConfigError("warm start file " + *config.warm_start + " has no result block");
    solver.warm_start = strategy_from_json(doc.at("result").at("strategy"), "warm_start.result.strategy");
  }
  return solver;
}

} // namespace

SolveOutcome solve_instance(const ExperimentConfig& config, const ProblemSpec& spec, std::uint64_t seed, int workers) {
  const SolverConfig solver = solver_for(config, seed, workers);
  SolveOutcome outcome;
  if (config.beliefs) {
    outcome.beliefs = solve_with_beliefs(
        spec, config.distribution, *config.beliefs, solver,
        SimulationOptions{config.diagnostics.trials, derive_seed(seed, "beliefs"), workers});
  } else {
    outcome.equilibrium = solve_equilibrium(spec, config.distribution, solver);
  }
  return outcome;
}

DiagnosticsReport diagnose_instance(const ExperimentConfig& config, const ProblemSpec& spec,
                                    const SolveOutcome& outcome, std::uint64_t seed, int workers) {
  const std::uint64_t diag_seed = derive_seed(seed, "diagnostics");
  if (outcome.equilibrium) {
    SolverConfig solver = config.solver;
    solver.seed = derive_seed(seed, "solver");
    return diagnose(*outcome.equilibrium, spec, config.distribution, config.diagnostics, solver, diag_seed, workers);
  }
  Population population;
  for (const auto& g : outcome.beliefs->groups) population.push_back(PopulationGroup{g.size, g.equilibrium.strategy});
  return diagnose_population(population, spec, config.distribution, config.diagnostics, diag_seed, workers);
}

namespace {

Json document_header(const ExperimentConfig& config, const char* command) {
  return {{"tool", kToolName},
          {"version", kToolVersion},
          {"command", command},
          {"config_hash", config_hash(config)},
          {"config", resolved_config(config)}};
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\n") == std::string::npos) return text;
  std::string out = "\"";
  for (char ch : text) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string csv_preamble(const ExperimentConfig& config) {
  return std::string("# ") + kToolName + " " + kToolVersion + "\n# config " + resolved_config(config).dump() + "\n" +
         kReportCsvHeader + "\n";
}

std::string csv_row(const ExperimentConfig& config, const ProblemSpec& spec, std::uint64_t seed,
                    const SolveOutcome* outcome, const DiagnosticsReport* report, const std::string& status) {
  std::ostringstream row;
  row << csv_field(config.instance_id) << ',' << spec.n << ',' << spec.m << ',' << format_number(spec.c) << ','
      << seed << ',';
  if (outcome) {
    row << (outcome->converged() ? "true" : "false") << ',' << format_number(outcome->foc_residual()) << ',';
  } else {
    row << ",,";
  }
  if (report) {
    row << format_number(report->efficiency.efficiency_prob) << ',' << format_number(report->theorem1.beta_estimate)
        << ',' << format_number(report->extremes.frequency) << ',' << format_number(report->extremes.bound) << ','
        << format_number(report->efficiency.theta) << ',' << format_number(report->efficiency.xi) << ','
        << format_number(report->efficiency.welfare_qtm) << ',' << format_number(report->efficiency.welfare_opt) << ','
        << format_number(report->plurality.welfare) << ',';
  } else {
    row << ",,,,,,,,,";
  }
  row << csv_field(status) << '\n';
  return row.str();
}

std::string output_path(const ExperimentConfig& config, const std::string& name) {
  return (std::filesystem::path(config.output_dir) / name).string();
}

ExperimentConfig prepare(const std::string& config_path, const RunOptions& options) {
  if (options.workers < 1) throw ConfigError("--workers must be at least 1");
  ExperimentConfig config = load_config(config_path);
  if (options.seed) config.seed = *options.seed;
  return config;
}

// Returns true when strict mode should stop the run.
bool assumption_gate(const ExperimentConfig& config, const RunOptions& options, std::vector<std::string>& warnings,
                     std::ostream& err) {
  const DistributionSummary summary = summarize(config.distribution, config.problem.u_max);
  if (!summary.assumption1_ok) warnings.push_back("alternative means are not strictly ordered");
  for (std::size_t j = 0; j < summary.assumption2.size(); ++j)
    if (!summary.assumption2[j].pass)
      warnings.push_back("alternative " + std::to_string(j) + " axis condition: " + summary.assumption2[j].explanation);
  for (const auto& w : warnings) err << (options.strict ? "error: " : "warning: ") << w << "\n";
  return options.strict && !warnings.empty();
}

template <typename Body>
int guarded(std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
  } catch (const OracleLimitError& e) {
    err << "oracle limit: " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
  }
  return kExitConfigError;
}

} // namespace

int run_solve(const std::string& config_path, const RunOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig config = prepare(config_path, options);
    std::vector<std::string> warnings;
    if (assumption_gate(config, options, warnings, err)) return int{kExitAssumptionViolation};
    const SolveOutcome outcome = solve_instance(config, config.problem, config.seed, options.workers);

    Json doc = document_header(config, "solve");
    doc["summary"] = to_json(summarize(config.distribution, config.problem.u_max));
    doc["warnings"] = warnings;
    doc["result"] = outcome.equilibrium ? to_json(*outcome.equilibrium) : Json(nullptr);
    doc["beliefs"] = outcome.beliefs ? to_json(*outcome.beliefs) : Json(nullptr);
    const std::string path = output_path(config, "result.json");
    write_file_atomic(path, dump(doc));

    out << "solve: converged=" << (outcome.converged() ? "true" : "false")
        << " foc_residual=" << format_number(outcome.foc_residual()) << " -> " << path << "\n";
    if (!outcome.converged()) {
      if (outcome.equilibrium) err << "not converged: " << outcome.equilibrium->message << "\n";
      return int{kExitNotConverged};
    }
    return int{kExitOk};
  });
}

int run_diagnose(const std::string& config_path, const RunOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig config = prepare(config_path, options);
    std::vector<std::string> warnings;
    if (assumption_gate(config, options, warnings, err)) return int{kExitAssumptionViolation};
    const std::string result_path = options.result_path.value_or(output_path(config, "result.json"));
    const Json doc = read_json_file(result_path, "result file");
    if (!doc.contains("config_hash") || doc.at("config_hash") != config_hash(config))
      throw ConfigError("result file " + result_path + " was produced by a different config (hash mismatch)");

    SolveOutcome outcome;
    if (config.beliefs) {
      BeliefsResult beliefs;
      const std::vector<int> sizes = config.beliefs->group_sizes(config.problem.n);
      const Json& groups = doc.at("beliefs").at("groups");
      for (std::size_t g = 0; g < groups.size(); ++g) {
        beliefs.groups.push_back(BeliefGroupResult{config.beliefs->groups[g].fraction, sizes[g],
                                                   equilibrium_from_json(groups[g].at("equilibrium"),
                                                                         "beliefs.groups.equilibrium")});
      }
      beliefs.converged = doc.at("beliefs").at("converged").get<bool>();
      outcome.beliefs = std::move(beliefs);
    } else {
      outcome.equilibrium = equilibrium_from_json(doc.at("result"));
    }
    const DiagnosticsReport report = diagnose_instance(config, config.problem, outcome, config.seed, options.workers);
    const std::string status = outcome.converged() ? "ok" : "not_converged";

    Json json = document_header(config, "diagnose");
    json["converged"] = outcome.converged();
    json["foc_residual"] = outcome.foc_residual();
    json["status"] = status;
    json["report"] = to_json(report);
    const std::string json_path = output_path(config, "report.json");
    const std::string csv_path = output_path(config, "report.csv");
    write_file_atomic(json_path, dump(json));
    write_file_atomic(csv_path, csv_preamble(config) + csv_row(config, config.problem, config.seed, &outcome, &report, status));
    out << "diagnose: efficiency_prob=" << format_number(report.efficiency.efficiency_prob)
        << " beta_estimate=" << format_number(report.theorem1.beta_estimate) << " -> " << csv_path << "\n";
    return int{kExitOk};
  });
}

int run_sweep(const std::string& config_path, const RunOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig config = prepare(config_path, options);
    if (!config.sweep) throw ConfigError("sweep is required for the sweep command");
    std::vector<std::string> warnings;
    if (assumption_gate(config, options, warnings, err)) return int{kExitAssumptionViolation};

    std::vector<int> ns = config.sweep->n;
    std::vector<double> cs = config.sweep->c;
    std::sort(ns.begin(), ns.end());
    ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
    std::sort(cs.begin(), cs.end());
    cs.erase(std::unique(cs.begin(), cs.end()), cs.end());

    struct Cell {
      ProblemSpec spec;
      std::uint64_t seed = 0;
      std::optional<SolveOutcome> outcome;
      std::optional<DiagnosticsReport> report;
      std::string status;
    };
    std::vector<Cell> cells;
    for (int n : ns)
      for (double c : cs) {
        Cell cell;
        cell.spec = config.problem;
        cell.spec.n = n;
        cell.spec.c = c;
        cell.seed = cell_seed(config.seed, n, c);
        cells.push_back(std::move(cell));
      }

    const int inner_workers = std::max(1, options.workers / static_cast<int>(cells.size()));
    parallel_for(cells.size(), options.workers, [&](std::size_t i) {
      Cell& cell = cells[i];
      try {
        cell.outcome = solve_instance(config, cell.spec, cell.seed, inner_workers);
        cell.report = diagnose_instance(config, cell.spec, *cell.outcome, cell.seed, inner_workers);
        cell.status = cell.outcome->converged() ? "ok" : "not_converged";
      } catch (const std::exception& e) {
        cell.status = std::string("error: ") + e.what();
      }
    });

    std::string csv = csv_preamble(config);
    Json cell_docs = Json::array();
    bool all_completed = true;
    for (const auto& cell : cells) {
      csv += csv_row(config, cell.spec, cell.seed, cell.outcome ? &*cell.outcome : nullptr,
                     cell.report ? &*cell.report : nullptr, cell.status);
      Json doc = {{"n", cell.spec.n}, {"c", cell.spec.c}, {"seed", cell.seed}, {"status", cell.status}};
      doc["result"] = cell.outcome && cell.outcome->equilibrium ? to_json(*cell.outcome->equilibrium) : Json(nullptr);
      doc["beliefs"] = cell.outcome && cell.outcome->beliefs ? to_json(*cell.outcome->beliefs) : Json(nullptr);
      doc["report"] = cell.report ? to_json(*cell.report) : Json(nullptr);
      cell_docs.push_back(std::move(doc));
      if (!cell.outcome) {
        all_completed = false;
        err << "cell n=" << cell.spec.n << " c=" << format_number(cell.spec.c) << " failed: " << cell.status << "\n";
      }
    }
    Json json = document_header(config, "sweep");
    json["cells"] = cell_docs;
    const std::string csv_path = output_path(config, "sweep.csv");
    write_file_atomic(output_path(config, "sweep.json"), dump(json));
    write_file_atomic(csv_path, csv);
    out << "sweep: " << cells.size() << " cells -> " << csv_path << "\n";
    return all_completed ? int{kExitOk} : int{kExitConfigError};
  });
}

int run_oracle(const std::string& config_path, const RunOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig config = prepare(config_path, options);
    if (config.beliefs) throw ConfigError("the oracle does not support beliefs");
    const auto* dist = std::get_if<DiscreteTypes>(&config.distribution);
    if (!dist) throw ConfigError("the oracle needs a discrete distribution");
    check_oracle_limits(config.problem, *dist);
    std::vector<std::string> warnings;
    if (assumption_gate(config, options, warnings, err)) return int{kExitAssumptionViolation};

    const ProblemSpec& spec = config.problem;
    const OracleEquilibrium oracle = oracle_equilibrium(spec, *dist, config.oracle);
    const SolverConfig solver = solver_for(config, config.seed, options.workers);
    const EquilibriumResult eq = solve_equilibrium(spec, config.distribution, solver);
    const OpponentField field = build_field(oracle.strategy, spec, config.distribution, solver);

    double oracle_foc = 0.0;
    for (Eigen::Index t = 0; t < dist->values.rows(); ++t)
      oracle_foc = std::max(oracle_foc, foc_residual(dist->values.row(t).transpose(),
                                                     oracle.strategy.votes.row(t).transpose(), field, spec));
    const auto& solved = std::get<TabularStrategy>(eq.strategy);
    const double tolerance = std::max(1e-3, oracle.resolution);
    Json per_type = Json::array();
    double max_discrepancy = 0.0;
    for (Eigen::Index t = 0; t < dist->values.rows(); ++t) {
      const double d = (oracle.strategy.votes.row(t) - solved.votes.row(t)).cwiseAbs().maxCoeff();
      max_discrepancy = std::max(max_discrepancy, d);
      per_type.push_back({{"type", vector_to_json(dist->values.row(t).transpose())},
                          {"oracle", vector_to_json(oracle.strategy.votes.row(t).transpose())},
                          {"solver", vector_to_json(solved.votes.row(t).transpose())},
                          {"discrepancy", d}});
    }

    Json doc = document_header(config, "oracle");
    doc["warnings"] = warnings;
    doc["oracle"] = to_json(oracle);
    doc["oracle"]["foc_residual"] = oracle_foc;
    doc["oracle"]["outcome"] = to_json(oracle_outcome_distribution(Strategy{oracle.strategy}, spec, *dist, config.oracle));
    doc["result"] = to_json(eq);
    doc["comparison"] = {{"per_type", per_type},
                         {"max_discrepancy", max_discrepancy},
                         {"tolerance", tolerance},
                         {"within_tolerance", max_discrepancy <= tolerance}};
    const std::string path = output_path(config, "oracle.json");
    write_file_atomic(path, dump(doc));
    out << "oracle: max_discrepancy=" << format_number(max_discrepancy)
        << " oracle_foc_residual=" << format_number(oracle_foc) << " -> " << path << "\n";
    if (!oracle.converged || !eq.converged) {
      err << "not converged:" << (oracle.converged ? "" : (oracle.cycling ? " oracle cycling" : " oracle"))
          << (eq.converged ? "" : " solver") << "\n";
      return int{kExitNotConverged};
    }
    return int{kExitOk};
  });
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Numerical lab for the quadratic transfers mechanism", kToolName};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  RunOptions options;
  std::string result_path;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--seed", seed, "master seed, overrides the config");
    sub->add_option("--workers", options.workers, "worker threads (results do not depend on it)")
        ->check(CLI::PositiveNumber);
    sub->add_flag("--strict", options.strict, "treat assumption violations as fatal");
  };
  CLI::App* solve = app.add_subcommand("solve", "compute the symmetric equilibrium; writes result.json");
  CLI::App* diag = app.add_subcommand("diagnose", "sampling diagnostics; writes report.json and report.csv");
  CLI::App* sweep = app.add_subcommand("sweep", "solve and diagnose every (n, c) cell; writes sweep.csv");
  CLI::App* oracle = app.add_subcommand("oracle", "brute-force cross-check; writes oracle.json");
  for (CLI::App* sub : {solve, diag, sweep, oracle}) add_common(sub);
  diag->add_option("--result", result_path, "result.json to diagnose (default: <output_dir>/result.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? int{kExitOk} : int{kExitConfigError};
  }
  for (CLI::App* sub : {solve, diag, sweep, oracle})
    if (sub->count("--seed")) options.seed = seed;
  if (!result_path.empty()) options.result_path = result_path;

  if (*solve) return run_solve(config_path, options, out, err);
  if (*diag) return run_diagnose(config_path, options, out, err);
  if (*sweep) return run_sweep(config_path, options, out, err);
  return run_oracle(config_path, options, out, err);
}

} // namespace qtm
