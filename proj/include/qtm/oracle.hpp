#ifndef QTM_ORACLE_HPP
#define QTM_ORACLE_HPP

// Brute-force reference computations for tiny discrete instances. Opponent
// profiles are enumerated one agent at a time and best responses are found by
// grid search, so nothing here shares numerics with the equilibrium solver.

#include "qtm/equilibrium.hpp"
#include "qtm/mechanism.hpp"
#include "qtm/preferences.hpp"

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace qtm {

class OracleLimitError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

struct OracleConfig {
  int grid_points_per_axis = 401; // odd, so 0 is a grid point
  int refinement_rounds = 3;      // each shrinks the search window 10x around the incumbent
  double enumeration_cap = 1e7;   // ordered opponent profiles
  int max_iterations = 200;

  void validate() const;
};

inline constexpr int kOracleMaxAlternatives = 3;
inline constexpr int kOracleMaxSupport = 3;
inline constexpr int kOracleMaxAgents = 12;

/// Throws OracleLimitError unless m, the support size and n are within the
/// oracle's limits.
void check_oracle_limits(const ProblemSpec& spec, const DiscreteTypes& dist);

/// E[W^i | u, a] with the n-1 opponents playing `strategy`, by enumerating
/// every ordered opponent profile.
double oracle_expected_utility(const TypeVector& u, const VoteVector& a, const Strategy& strategy,
                               const ProblemSpec& spec, const DiscreteTypes& dist,
                               const OracleConfig& config = {});

/// Max-norm spacing of the finest grid searched by oracle_best_response.
double oracle_grid_resolution(const ProblemSpec& spec, const OracleConfig& config);

/// Grid-search maximizer of the expected utility over votes summing to zero
/// (adding t to every vote leaves the lottery unchanged and costs more).
VoteVector oracle_best_response(const TypeVector& u, const Strategy& strategy, const ProblemSpec& spec,
                                const DiscreteTypes& dist, const OracleConfig& config = {});

struct OracleEquilibrium {
  TabularStrategy strategy;
  int iterations = 0;
  bool converged = false;
  bool cycling = false;
  double last_change = 0.0;
  double resolution = 0.0;
};

/// Simultaneous best-response iteration from the zero strategy.
OracleEquilibrium oracle_equilibrium(const ProblemSpec& spec, const DiscreteTypes& dist,
                                     const OracleConfig& config = {});

struct OutcomeDistribution {
  Eigen::VectorXd expected_q;    // E[Q_j]
  double argmax_agreement = 0.0; // P(argmax_j Q_j == utilitarian argmax)
  double efficiency_prob = 0.0;  // E[Q at the utilitarian argmax]
  double total_weight = 0.0;     // enumerated probability mass
};

/// Exact expectations over all n-agent type profiles.
OutcomeDistribution oracle_outcome_distribution(const Strategy& strategy, const ProblemSpec& spec,
                                                const DiscreteTypes& dist, const OracleConfig& config = {});

} // namespace qtm

#endif // QTM_ORACLE_HPP
