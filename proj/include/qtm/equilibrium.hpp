#ifndef QTM_EQUILIBRIUM_HPP
#define QTM_EQUILIBRIUM_HPP

// Symmetric pure-strategy Bayes-Nash equilibria of the quadratic transfers
// mechanism, computed by damped best-response iteration on the first-order
// conditions
//
//     2c a_j = sum_{k != j} (u_j - u_k) r_jk(a),   r_jk(a) = E[Q_j(a) Q_k(a)],
//
// where the expectation runs over the vote totals of the other n-1 agents.

#include "qtm/mechanism.hpp"
#include "qtm/preferences.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <variant>

namespace qtm {

/// One vote vector per support type: row t of `votes` is the vote of type
/// row t of `types`.
struct TabularStrategy {
  Eigen::MatrixXd types;
  Eigen::MatrixXd votes;

  /// Row whose type equals u (tolerance 1e-9), or -1.
  Eigen::Index find(const TypeVector& u) const;
};

/// Votes a_j(u) = (1/2c) sum_{k != j} (u_j - u_k) pi_jk: linear in the
/// values, with a common pivotality matrix pi (symmetric, zero diagonal).
struct LinearPivotality {
  Eigen::MatrixXd pi;
};

using Strategy = std::variant<TabularStrategy, LinearPivotality>;

/// Matrix L with a(u) = L u for a linear-pivotality strategy.
Eigen::MatrixXd linear_vote_map(const Eigen::MatrixXd& pi, double c);

/// Vote of an agent with values u; throws if a tabular strategy has no row
/// for u.
VoteVector votes_for(const Strategy& strategy, const TypeVector& u, const ProblemSpec& spec);

const char* representation_name(const Strategy& strategy);

struct SolverConfig {
  double damping = 0.5;
  double inner_tol = 1e-10;
  double outer_tol = 1e-6;
  double foc_tol = 1e-6;        // tabular: converged requires FOC residual <= foc_tol
  double linear_foc_tol = 0.05; // linear pivotality: threshold relative to u_max
  int max_inner = 200;
  int max_outer = 500;
  int max_halvings = 5;
  long n_mc = 100000;
  double exact_atom_cap = 1e6;
  std::uint64_t seed = 0;
  bool field_refresh = true;
  int probe_types = 32;
  int workers = 1; // execution only; never affects results
  std::optional<Strategy> warm_start;

  void validate() const;
};

/// Distribution of the other agents' vote totals V^{-i}, as weighted atoms.
/// The atoms keep a strategy-independent statistic of the opponents' types
/// (counts per support type, or summed values), so the same draws serve
/// every iteration of the solver.
struct OpponentField {
  enum class Kind { exact_multinomial, monte_carlo };
  enum class Statistic { type_counts, type_sums };

  Kind kind = Kind::exact_multinomial;
  Statistic statistic = Statistic::type_counts;
  Eigen::VectorXd weights;    // sums to 1
  Eigen::MatrixXd statistics; // atoms x s (counts) or atoms x m (sums)
  Eigen::MatrixXd support;    // type_counts: support values, s x m
  Eigen::MatrixXd own_types;  // type_sums: one own-type draw per atom
  Eigen::MatrixXd totals;     // atoms x m

  Eigen::Index atoms() const { return weights.size(); }
  /// Recomputes the totals for a new strategy from the stored statistics.
  void refresh(const Strategy& strategy, const ProblemSpec& spec);
};

/// Number of opponent type-count vectors, C(n-2+s, s-1).
double multinomial_atom_count(int opponents, int support_size);

OpponentField build_field(const Strategy& strategy, const ProblemSpec& spec, const TypeDistribution& dist,
                          const SolverConfig& config, int iteration = 0);

/// r_jk(a) = E[Q_j(a) Q_k(a)] over the field.
Eigen::MatrixXd estimate_rjk(const VoteVector& a, const OpponentField& field);

struct PivotalityEstimate {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd se; // zero for exact expectations
};

/// r_jk(a) with Monte Carlo standard errors.
PivotalityEstimate estimate_rjk_with_se(const VoteVector& a, const OpponentField& field);

/// q_k(a) = E[Q_k(a)] over the field.
Eigen::VectorXd expected_selection(const VoteVector& a, const OpponentField& field);

/// Right-hand side of the first-order condition, sum_k (u_j - u_k) r_jk(a).
Eigen::VectorXd foc_rhs(const TypeVector& u, const VoteVector& a, const OpponentField& field);

/// max_j |2c a_j - sum_k (u_j - u_k) r_jk(a)|.
double foc_residual(const TypeVector& u, const VoteVector& a, const OpponentField& field, const ProblemSpec& spec);

struct BestResponse {
  VoteVector votes;
  int iterations = 0;
  bool converged = false;
  double damping = 0.0;
};

/// Damped fixed-point iteration a <- (1-l) a + l rhs(a)/2c from `start`
/// (zero by default). The damping halves whenever successive updates flip
/// direction, at most config.max_halvings times.
BestResponse best_response(const TypeVector& u, const OpponentField& field, const ProblemSpec& spec,
                           const SolverConfig& config, const std::optional<VoteVector>& start = std::nullopt);

struct EquilibriumResult {
  Strategy strategy;
  Eigen::MatrixXd pivotality;    // E(Q_j Q_k)
  Eigen::MatrixXd pivotality_se; // zero under exact enumeration
  double foc_residual = 0.0;
  double foc_threshold = 0.0;
  int outer_iterations = 0;
  bool converged = false;
  double final_damping = 0.0;
  // 2c/m - max_j sum_{k != j} |grad r_jk|; positive means the best response
  // map is a contraction at the solution.
  double contraction_margin = 0.0;
  OpponentField::Kind field_kind = OpponentField::Kind::exact_multinomial;
  Eigen::Index field_atoms = 0;
  std::string message;
};

/// Unconditional E(Q_j Q_k) and standard errors for a strategy.
PivotalityEstimate unconditional_pivotality(const Strategy& strategy, const OpponentField& field,
                                            const TypeDistribution& dist, const ProblemSpec& spec);

/// Types at which the first-order conditions are checked: the support of a
/// discrete distribution, or config.probe_types deterministic draws.
Eigen::MatrixXd probe_types(const TypeDistribution& dist, const SolverConfig& config);

/// Tabular strategies for discrete distributions, linear pivotality for
/// continuous ones.
EquilibriumResult solve_equilibrium(const ProblemSpec& spec, const TypeDistribution& dist,
                                    const SolverConfig& config);

} // namespace qtm

#endif // QTM_EQUILIBRIUM_HPP
