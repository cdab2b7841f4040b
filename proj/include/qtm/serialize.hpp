#ifndef QTM_SERIALIZE_HPP
#define QTM_SERIALIZE_HPP

// JSON encodings of problems, distributions, strategies and reports. Matrices
// are arrays of rows. Parsing is strict: unknown keys and wrong types raise
// ConfigError with the dotted path of the offending field.

#include "qtm/beliefs.hpp"
#include "qtm/diagnostics.hpp"
#include "qtm/equilibrium.hpp"
#include "qtm/oracle.hpp"
#include "qtm/preferences.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <stdexcept>
#include <string>

namespace qtm {

using Json = nlohmann::json;

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

Json matrix_to_json(const Eigen::MatrixXd& x);
Json vector_to_json(const Eigen::VectorXd& x);
Eigen::MatrixXd matrix_from_json(const Json& j, const std::string& path);
Eigen::VectorXd vector_from_json(const Json& j, const std::string& path);

Json to_json(const ProblemSpec& spec);
ProblemSpec problem_from_json(const Json& j, const std::string& path = "problem");

Json to_json(const TypeDistribution& dist);
TypeDistribution distribution_from_json(const Json& j, const std::string& path = "distribution");

Json to_json(const BeliefProfile& beliefs);
BeliefProfile beliefs_from_json(const Json& j, const std::string& path = "beliefs");

/// Solver fields only; the seed and warm start are set by the caller.
Json to_json(const SolverConfig& config);
SolverConfig solver_from_json(const Json& j, const std::string& path = "solver");

Json to_json(const DiagnosticsConfig& config);
DiagnosticsConfig diagnostics_from_json(const Json& j, const std::string& path = "diagnostics");

Json to_json(const OracleConfig& config);
OracleConfig oracle_config_from_json(const Json& j, const std::string& path = "oracle");

Json to_json(const Strategy& strategy);
Strategy strategy_from_json(const Json& j, const std::string& path = "strategy");

Json to_json(const DistributionSummary& summary);
Json to_json(const EquilibriumResult& result);
EquilibriumResult equilibrium_from_json(const Json& j, const std::string& path = "result");

Json to_json(const DiagnosticsReport& report);
Json to_json(const BeliefsResult& result);
Json to_json(const OracleEquilibrium& oracle);
Json to_json(const OutcomeDistribution& outcome);

/// Number formatting shared by JSON and CSV: shortest round-trip form,
/// "nan"/"inf" for non-finite values.
std::string format_number(double x);

/// Writes to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::string& path, const std::string& contents);

} // namespace qtm

#endif // QTM_SERIALIZE_HPP
