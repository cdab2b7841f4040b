#include "qtm/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

namespace qtm {

void OracleConfig::validate() const {
  if (grid_points_per_axis < 3 || grid_points_per_axis % 2 == 0)
    throw std::invalid_argument("oracle grid_points_per_axis must be odd and at least 3");
  if (refinement_rounds < 0) throw std::invalid_argument("oracle refinement_rounds must be nonnegative");
  if (!(enumeration_cap > 0.0)) throw std::invalid_argument("oracle enumeration_cap must be positive");
  if (max_iterations < 1) throw std::invalid_argument("oracle max_iterations must be positive");
}

void check_oracle_limits(const ProblemSpec& spec, const DiscreteTypes& dist) {
  if (spec.m > kOracleMaxAlternatives)
    throw OracleLimitError("oracle needs m <= " + std::to_string(kOracleMaxAlternatives));
  if (dist.values.rows() > kOracleMaxSupport)
    throw OracleLimitError("oracle needs at most " + std::to_string(kOracleMaxSupport) + " support types");
  if (spec.n > kOracleMaxAgents) throw OracleLimitError("oracle needs n <= " + std::to_string(kOracleMaxAgents));
}

namespace {

// Walks every ordered profile of `agents` draws from the support and sums
// the probability of each type-count vector.
std::map<std::vector<int>, double> count_classes(const DiscreteTypes& dist, int agents, double cap) {
  const int s = static_cast<int>(dist.values.rows());
  if (std::pow(static_cast<double>(s), agents) > cap)
    throw OracleLimitError("oracle enumeration of " + std::to_string(s) + "^" + std::to_string(agents) +
                           " profiles exceeds the cap");
  std::map<std::vector<int>, double> classes;
  std::vector<int> digits(static_cast<std::size_t>(agents), 0);
  while (true) {
    double weight = 1.0;
    std::vector<int> counts(static_cast<std::size_t>(s), 0);
    for (int d : digits) {
      weight *= dist.probabilities(d);
      ++counts[static_cast<std::size_t>(d)];
    }
    classes[counts] += weight;
    int pos = 0;
    while (pos < agents && ++digits[static_cast<std::size_t>(pos)] == s) digits[static_cast<std::size_t>(pos++)] = 0;
    if (pos == agents) break;
  }
  return classes;
}

Eigen::MatrixXd support_votes(const Strategy& strategy, const ProblemSpec& spec, const DiscreteTypes& dist) {
  Eigen::MatrixXd votes(dist.values.rows(), spec.m);
  for (Eigen::Index t = 0; t < dist.values.rows(); ++t)
    votes.row(t) = votes_for(strategy, dist.values.row(t).transpose(), spec).transpose();
  return votes;
}

struct OpponentAtom {
  double weight;
  VoteTotals totals;
  double squared_votes;
};

std::vector<OpponentAtom> opponent_atoms(const Strategy& strategy, const ProblemSpec& spec, const DiscreteTypes& dist,
                                         const OracleConfig& config) {
  const Eigen::MatrixXd votes = support_votes(strategy, spec, dist);
  std::vector<OpponentAtom> atoms;
  for (const auto& [counts, weight] : count_classes(dist, spec.n - 1, config.enumeration_cap)) {
    OpponentAtom atom{weight, VoteTotals::Zero(spec.m), 0.0};
    for (std::size_t t = 0; t < counts.size(); ++t) {
      const auto row = static_cast<Eigen::Index>(t);
      atom.totals += counts[t] * votes.row(row).transpose();
      atom.squared_votes += counts[t] * votes.row(row).squaredNorm();
    }
    atoms.push_back(std::move(atom));
  }
  return atoms;
}

double atom_utility(const TypeVector& u, const VoteVector& a, const std::vector<OpponentAtom>& atoms,
                    const ProblemSpec& spec) {
  double value = 0.0;
  for (const auto& atom : atoms) {
    value += atom.weight * select_probs(atom.totals + a).dot(u);
    if (spec.n > 1) value += atom.weight * spec.c * atom.squared_votes / (spec.n - 1);
  }
  return value - spec.c * a.squaredNorm();
}

} // namespace

double oracle_expected_utility(const TypeVector& u, const VoteVector& a, const Strategy& strategy,
                               const ProblemSpec& spec, const DiscreteTypes& dist, const OracleConfig& config) {
  spec.validate();
  config.validate();
  const Eigen::MatrixXd votes = support_votes(strategy, spec, dist);
  double total = 0.0;
  for (const auto& [counts, weight] : count_classes(dist, spec.n - 1, config.enumeration_cap)) {
    VoteProfile others(spec.n - 1, spec.m);
    Eigen::Index row = 0;
    for (std::size_t t = 0; t < counts.size(); ++t)
      for (int k = 0; k < counts[t]; ++k) others.row(row++) = votes.row(static_cast<Eigen::Index>(t));
    total += weight * payoff(u, a, others, spec).total;
  }
  return total;
}

double oracle_grid_resolution(const ProblemSpec& spec, const OracleConfig& config) {
  // The last vote is minus the sum of the others, so its spacing is m-1 steps.
  return (spec.m - 1) * 2.0 * vote_box_bound(spec) / (config.grid_points_per_axis - 1) /
         std::pow(10.0, config.refinement_rounds);
}

VoteVector oracle_best_response(const TypeVector& u, const Strategy& strategy, const ProblemSpec& spec,
                                const DiscreteTypes& dist, const OracleConfig& config) {
  spec.validate();
  config.validate();
  if (spec.m > kOracleMaxAlternatives)
    throw OracleLimitError("oracle needs m <= " + std::to_string(kOracleMaxAlternatives));
  const auto atoms = opponent_atoms(strategy, spec, dist, config);
  const double bound = vote_box_bound(spec);
  const int free = spec.m - 1;
  const int g = config.grid_points_per_axis;

  Eigen::VectorXd center = Eigen::VectorXd::Zero(free);
  double half_width = bound;
  VoteVector best = VoteVector::Zero(spec.m);
  double best_value = atom_utility(u, best, atoms, spec);
  for (int round = 0; round <= config.refinement_rounds; ++round) {
    std::vector<int> idx(static_cast<std::size_t>(free), 0);
    while (true) {
      VoteVector a(spec.m);
      bool inside = true;
      for (int d = 0; d < free; ++d) {
        a(d) = center(d) + half_width * (2.0 * idx[static_cast<std::size_t>(d)] / (g - 1) - 1.0);
        inside = inside && std::abs(a(d)) <= bound;
      }
      a(spec.m - 1) = -a.head(free).sum();
      inside = inside && std::abs(a(spec.m - 1)) <= bound;
      if (inside) {
        const double value = atom_utility(u, a, atoms, spec);
        if (value > best_value) {
          best_value = value;
          best = a;
        }
      }
      int pos = 0;
      while (pos < free && ++idx[static_cast<std::size_t>(pos)] == g) idx[static_cast<std::size_t>(pos++)] = 0;
      if (pos == free) break;
    }
    center = best.head(free);
    half_width /= 10.0;
  }
  return best;
}

OracleEquilibrium oracle_equilibrium(const ProblemSpec& spec, const DiscreteTypes& dist, const OracleConfig& config) {
  spec.validate();
  config.validate();
  validate(TypeDistribution{dist}, spec.u_max);
  check_oracle_limits(spec, dist);
  OracleEquilibrium out;
  out.resolution = oracle_grid_resolution(spec, config);
  out.strategy.types = dist.values;
  out.strategy.votes = Eigen::MatrixXd::Zero(dist.values.rows(), spec.m);
  std::vector<Eigen::MatrixXd> history{out.strategy.votes};
  for (int it = 1; it <= config.max_iterations; ++it) {
    Eigen::MatrixXd next(dist.values.rows(), spec.m);
    const Strategy current{out.strategy};
    for (Eigen::Index t = 0; t < dist.values.rows(); ++t)
      next.row(t) = oracle_best_response(dist.values.row(t).transpose(), current, spec, dist, config).transpose();
    out.last_change = (next - out.strategy.votes).cwiseAbs().maxCoeff();
    out.strategy.votes = next;
    out.iterations = it;
    if (out.last_change < out.resolution) {
      out.converged = true;
      break;
    }
    for (std::size_t h = 0; h + 1 < history.size(); ++h)
      if ((history[h] - next).cwiseAbs().maxCoeff() < out.resolution) out.cycling = true;
    if (out.cycling) break;
    history.push_back(next);
  }
  return out;
}

OutcomeDistribution oracle_outcome_distribution(const Strategy& strategy, const ProblemSpec& spec,
                                                const DiscreteTypes& dist, const OracleConfig& config) {
  spec.validate();
  config.validate();
  const Eigen::MatrixXd votes = support_votes(strategy, spec, dist);
  OutcomeDistribution out;
  out.expected_q = Eigen::VectorXd::Zero(spec.m);
  for (const auto& [counts, weight] : count_classes(dist, spec.n, config.enumeration_cap)) {
    VoteTotals totals = VoteTotals::Zero(spec.m);
    Eigen::VectorXd welfare = Eigen::VectorXd::Zero(spec.m);
    for (std::size_t t = 0; t < counts.size(); ++t) {
      const auto row = static_cast<Eigen::Index>(t);
      totals += counts[t] * votes.row(row).transpose();
      welfare += counts[t] * dist.values.row(row).transpose();
    }
    const SelectionProbs q = select_probs(totals);
    const auto opt = argmax(welfare);
    out.expected_q += weight * q;
    out.efficiency_prob += weight * q(opt);
    if (argmax(q) == opt) out.argmax_agreement += weight;
    out.total_weight += weight;
  }
  return out;
}

} // namespace qtm
