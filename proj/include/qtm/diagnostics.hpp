#ifndef QTM_DIAGNOSTICS_HPP
#define QTM_DIAGNOSTICS_HPP

// Sampling experiments around a computed equilibrium: concentration of the
// selection lottery on the top-mean alternative, sign pattern of the extreme
// vote totals, pivotality ratios and aggregate vote bounds, welfare, and the
// sincere-plurality baseline.
//
// "Alternative 1" below means the alternative with the largest mean value
// (summary.sort_permutation[0]); "alternative m" the smallest.

#include "qtm/equilibrium.hpp"
#include "qtm/preferences.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace qtm {

/// Agents [offset, offset + size) follow `strategy`.
struct PopulationGroup {
  int size = 0;
  Strategy strategy;
};
using Population = std::vector<PopulationGroup>;

Population symmetric_population(const Strategy& strategy, int n);

struct SimulationOptions {
  long trials = 100000;
  std::uint64_t seed = 0;
  int workers = 1;
};

/// One simulated profile. Trial i is generated from its own generator keyed
/// by (seed, i).
struct ProfileDraw {
  Eigen::MatrixXd types; // n x m
  VoteTotals totals;
  SelectionProbs probs;
  Eigen::VectorXd welfare; // sum_i u^i_j
  int utilitarian = 0;     // argmax of welfare, lowest index on ties
  int drawn = 0;           // realized outcome of the lottery
};

ProfileDraw simulate_profile(const Population& population, const ProblemSpec& spec, const TypeDistribution& dist,
                             std::uint64_t seed, long trial);

/// Per-trial results of `trials` profiles, rows indexed by trial.
struct SimulatedProfiles {
  Eigen::MatrixXd totals;
  Eigen::MatrixXd probs;
  Eigen::MatrixXd welfare;
  std::vector<int> utilitarian;
  std::vector<int> drawn;

  long trials() const { return static_cast<long>(totals.rows()); }
};

SimulatedProfiles simulate_profiles(const Population& population, const ProblemSpec& spec,
                                    const TypeDistribution& dist, const SimulationOptions& options);

inline constexpr int kConcentrationGridPoints = 101;

struct Theorem1Check {
  double beta_estimate = 1.0;    // smallest beta on a 1e-3 grid with P(Q_1 <= 1 - beta) <= beta
  double beta_se = 0.0;          // binomial standard error at beta_estimate
  double winner_epsilon = 1.0;   // same rule applied to max_j Q_j
  Eigen::VectorXd winner_concentration; // empirical CDF of max_j Q_j on 0, 0.01, ..., 1
  std::vector<std::string> warnings;
};

Theorem1Check theorem1_check(const SimulatedProfiles& sim, const DistributionSummary& summary);

struct ExtremesCheck {
  double frequency = 0.0; // P(V_m < 0 < V_1)
  double bound = 0.0;     // 1 - 2m exp(-(Delta/u_max)^2 n / 32)
};

double extremes_bound(int m, int n, double delta, double u_max);
ExtremesCheck extremes_check(const SimulatedProfiles& sim, const DistributionSummary& summary, const ProblemSpec& spec);

struct Lemma1Check {
  double min_ratio = 0.0; // min over probes and j != k of r_jk(a) / E(Q_j Q_k)
  double max_ratio = 0.0;
  double band_lo = 0.0;   // exp(-16 / sqrt(c))
  double band_hi = 0.0;
  bool inside = false;
};

/// Probe votes are drawn uniformly from the vote box.
Lemma1Check lemma1_check(const EquilibriumResult& eq, const OpponentField& field, const ProblemSpec& spec,
                         int probe_count, std::uint64_t seed);

/// max over probe types and j != k of |r_jk(a(u)) / E(Q_j Q_k) - 1|.
double measured_delta_n(const EquilibriumResult& eq, const OpponentField& field, const Eigen::MatrixXd& probes,
                        const ProblemSpec& spec);

struct EfficiencyReport {
  double efficiency_prob = 0.0;     // mean Q at the realized utilitarian argmax
  double realized_efficiency = 0.0; // frequency of drawn outcome == utilitarian argmax
  double argmax_agreement = 0.0;    // frequency of argmax_k Q_k == utilitarian argmax
  double conditioning_prob = 0.0;   // P(utilitarian argmax is alternative 1)
  Eigen::VectorXd expected_q;       // mean Q per alternative
  double welfare_qtm = 0.0;         // mean sum_k Q_k W_k
  double welfare_opt = 0.0;         // mean max_k W_k
  double theta = 0.0;               // n max_{j != k} E(Q_j Q_k)
  double xi = 0.0;                  // n max_{j >= 2} E(Q_1 Q_j)
};

EfficiencyReport efficiency_report(const SimulatedProfiles& sim, const DistributionSummary& summary,
                                   const ProblemSpec& spec, const Eigen::MatrixXd* pivotality);

struct PluralityReport {
  double efficiency_prob = 0.0;  // frequency of winner == utilitarian argmax
  Eigen::VectorXd win_frequency; // per alternative
  double welfare = 0.0;          // mean W at the winner
};

/// Sincere plurality: every agent votes for her favourite (uniform
/// tie-break), the modal alternative wins (uniform tie-break).
PluralityReport plurality_baseline(const ProblemSpec& spec, const TypeDistribution& dist, const SimulationOptions& options);

struct VoteBoundsCheck {
  double epsilon = 0.0;
  double delta_n = 0.0;
  double violation_frequency = 0.0;
  double cap = 0.0; // 2m exp(-2n (epsilon/u_max)^2)
  bool vacuous = false;
};

/// Fraction of trials violating either aggregate bound on 2c V_j / n, with
/// the pivotality-ratio deviation delta_n measured rather than assumed.
VoteBoundsCheck vote_bounds_check(const SimulatedProfiles& sim, const DistributionSummary& summary,
                                  const ProblemSpec& spec, const Eigen::MatrixXd& pivotality, double delta_n,
                                  double epsilon);

struct DiagnosticsConfig {
  long trials = 100000;
  int probe_count = 64;
  std::optional<double> epsilon; // defaults to Delta / 8

  void validate() const;
};

struct DiagnosticsReport {
  DistributionSummary summary;
  Eigen::MatrixXd pivotality;
  Eigen::MatrixXd pivotality_se;
  Theorem1Check theorem1;
  ExtremesCheck extremes;
  std::optional<Lemma1Check> lemma1;
  EfficiencyReport efficiency;
  PluralityReport plurality;
  std::optional<VoteBoundsCheck> vote_bounds;
  std::vector<std::string> warnings;
};

/// Sampling diagnostics for an arbitrary population (for instance groups
/// holding different beliefs). Pivotality-based entries stay empty and
/// theta, xi are NaN.
DiagnosticsReport diagnose_population(const Population& population, const ProblemSpec& spec,
                                      const TypeDistribution& dist, const DiagnosticsConfig& config,
                                      std::uint64_t seed, int workers);

DiagnosticsReport diagnose(const EquilibriumResult& eq, const ProblemSpec& spec, const TypeDistribution& dist,
                           const DiagnosticsConfig& config, const SolverConfig& solver, std::uint64_t seed, int workers);

} // namespace qtm

#endif // QTM_DIAGNOSTICS_HPP
