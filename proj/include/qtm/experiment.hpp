#ifndef QTM_EXPERIMENT_HPP
#define QTM_EXPERIMENT_HPP

// Experiment configuration and the solve / diagnose / sweep / oracle
// commands behind the `qtm` executable.

#include "qtm/beliefs.hpp"
#include "qtm/diagnostics.hpp"
#include "qtm/equilibrium.hpp"
#include "qtm/oracle.hpp"
#include "qtm/serialize.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace qtm {

inline constexpr const char* kToolName = "qtm";
inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitConfigError = 1, kExitNotConverged = 2, kExitAssumptionViolation = 3 };

struct SweepSpec {
  std::vector<int> n;
  std::vector<double> c;
};

struct ExperimentConfig {
  std::string instance_id = "instance";
  ProblemSpec problem;
  TypeDistribution distribution;
  std::optional<BeliefProfile> beliefs;
  SolverConfig solver;                    // seed is derived per run
  std::optional<std::string> warm_start;  // path to a result.json
  DiagnosticsConfig diagnostics;
  OracleConfig oracle;
  std::optional<SweepSpec> sweep;
  std::uint64_t seed = 0;
  std::string output_dir = "qtm_out";
};

/// Throws ConfigError naming the offending field.
ExperimentConfig parse_config(const Json& j);
ExperimentConfig load_config(const std::string& path);

/// The config with every default filled in; this is what output files embed.
Json resolved_config(const ExperimentConfig& config);
/// 16 hex digits of FNV-1a over the canonical dump of resolved_config.
std::string config_hash(const ExperimentConfig& config);

/// Seed of sweep cell (n, c).
std::uint64_t cell_seed(std::uint64_t master, int n, double c);

/// Equilibrium of one instance: a single symmetric equilibrium, or one per
/// belief group when the config has beliefs.
struct SolveOutcome {
  std::optional<EquilibriumResult> equilibrium;
  std::optional<BeliefsResult> beliefs;

  bool converged() const;
  double foc_residual() const;
};

SolveOutcome solve_instance(const ExperimentConfig& config, const ProblemSpec& spec, std::uint64_t seed, int workers);
DiagnosticsReport diagnose_instance(const ExperimentConfig& config, const ProblemSpec& spec,
                                    const SolveOutcome& outcome, std::uint64_t seed, int workers);

inline constexpr const char* kReportCsvHeader =
    "instance_id,n,m,c,seed,converged,foc_residual,efficiency_prob,beta_estimate,extremes_freq,extremes_bound,"
    "theta,xi,welfare_qtm,welfare_opt,welfare_plurality,status";

struct RunOptions {
  std::optional<std::uint64_t> seed; // overrides the config seed
  int workers = 1;
  bool strict = false;
  std::optional<std::string> result_path; // diagnose only
};

int run_solve(const std::string& config_path, const RunOptions& options, std::ostream& out, std::ostream& err);
int run_diagnose(const std::string& config_path, const RunOptions& options, std::ostream& out, std::ostream& err);
int run_sweep(const std::string& config_path, const RunOptions& options, std::ostream& out, std::ostream& err);
int run_oracle(const std::string& config_path, const RunOptions& options, std::ostream& out, std::ostream& err);

/// Entry point of the executable; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace qtm

#endif // QTM_EXPERIMENT_HPP
