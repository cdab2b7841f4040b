#include "qtm/beliefs.hpp"

#include <stdexcept>
#include <string>

namespace qtm {

BeliefsResult solve_with_beliefs(const ProblemSpec& spec, const TypeDistribution& true_dist,
                                 const BeliefProfile& beliefs, const SolverConfig& config,
                                 const SimulationOptions& simulation) {
  spec.validate();
  validate(true_dist, spec.u_max);
  beliefs.validate(spec.m, spec.u_max);
  if (dimension(true_dist) != spec.m) throw std::invalid_argument("distribution dimension differs from problem.m");

  BeliefsResult out;
  out.converged = true;
  const std::vector<int> sizes = beliefs.group_sizes(spec.n);
  Population population;
  for (std::size_t g = 0; g < beliefs.groups.size(); ++g) {
    BeliefGroupResult group{beliefs.groups[g].fraction, sizes[g], solve_equilibrium(spec, beliefs.groups[g].belief, config)};
    out.converged = out.converged && group.equilibrium.converged;
    // A tabular strategy only covers the believed support.
    if (const auto* tab = std::get_if<TabularStrategy>(&group.equilibrium.strategy)) {
      const auto* truth = std::get_if<DiscreteTypes>(&true_dist);
      if (!truth) throw std::invalid_argument("belief group " + std::to_string(g) + " is discrete but the true distribution is not");
      for (Eigen::Index t = 0; t < truth->values.rows(); ++t)
        if (tab->find(truth->values.row(t).transpose()) < 0)
          throw std::invalid_argument("belief group " + std::to_string(g) + " has no strategy for true support atom " +
                                      std::to_string(t));
    }
    population.push_back(PopulationGroup{group.size, group.equilibrium.strategy});
    out.groups.push_back(std::move(group));
  }

  out.true_summary = summarize(true_dist, spec.u_max);
  const SimulatedProfiles sim = simulate_profiles(population, spec, true_dist, simulation);
  out.efficiency = efficiency_report(sim, out.true_summary, spec, nullptr);
  out.win_frequency = Eigen::VectorXd::Zero(spec.m);
  for (int k : sim.drawn) out.win_frequency(k) += 1.0;
  if (sim.trials() > 0) out.win_frequency /= static_cast<double>(sim.trials());
  return out;
}

} // namespace qtm
