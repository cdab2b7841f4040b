#ifndef QTM_BELIEFS_HPP
#define QTM_BELIEFS_HPP

// Populations whose groups hold different beliefs about the type
// distribution. Each group plays the symmetric equilibrium of the game it
// believes it is in; outcomes are then sampled from the true distribution.

#include "qtm/diagnostics.hpp"
#include "qtm/equilibrium.hpp"
#include "qtm/preferences.hpp"

#include <Eigen/Dense>

#include <vector>

namespace qtm {

struct BeliefGroupResult {
  double fraction = 0.0;
  int size = 0;
  EquilibriumResult equilibrium;
};

struct BeliefsResult {
  std::vector<BeliefGroupResult> groups;
  bool converged = false;          // every group converged
  EfficiencyReport efficiency;     // against the true distribution
  Eigen::VectorXd win_frequency;   // realized lottery outcomes per alternative
  DistributionSummary true_summary;
};

BeliefsResult solve_with_beliefs(const ProblemSpec& spec, const TypeDistribution& true_dist,
                                 const BeliefProfile& beliefs, const SolverConfig& config,
                                 const SimulationOptions& simulation);

} // namespace qtm

#endif // QTM_BELIEFS_HPP
