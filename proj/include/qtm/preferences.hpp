#ifndef QTM_PREFERENCES_HPP
#define QTM_PREFERENCES_HPP

// Type distributions, their summaries, and sampling.

#include "qtm/mechanism.hpp"
#include "qtm/random.hpp"

#include <Eigen/Dense>

#include <string>
#include <variant>
#include <vector>

namespace qtm {

/// Finitely many types. Row t of `values` has probability probabilities(t).
struct DiscreteTypes {
  Eigen::VectorXd probabilities;
  Eigen::MatrixXd values;

  int support_size() const { return static_cast<int>(values.rows()); }
};

/// One coordinate's law on [0, u_max].
struct Marginal {
  enum class Kind { uniform, beta, point };
  Kind kind = Kind::uniform;
  double lo = 0.0;    // uniform / beta lower end
  double hi = 1.0;    // uniform / beta upper end
  double alpha = 1.0; // beta shape
  double beta = 1.0;  // beta shape
  double value = 0.0; // point mass location

  static Marginal uniform(double lo, double hi) { return {Kind::uniform, lo, hi, 1.0, 1.0, 0.0}; }
  static Marginal beta_on(double alpha, double beta, double lo, double hi) {
    return {Kind::beta, lo, hi, alpha, beta, 0.0};
  }
  static Marginal point(double v) { return {Kind::point, v, v, 1.0, 1.0, v}; }

  double mean() const;
  double sample(Rng& rng) const;
  /// Whether the law puts positive mass on [x - radius, x + radius].
  bool has_mass_near(double x, double radius) const;
};

/// Independent coordinates, each drawn from its own marginal.
struct IndependentMarginals {
  std::vector<Marginal> coordinates;
};

using TypeDistribution = std::variant<DiscreteTypes, IndependentMarginals>;

int dimension(const TypeDistribution& dist);
bool is_discrete(const TypeDistribution& dist);
const DiscreteTypes& as_discrete(const TypeDistribution& dist);

/// Throws std::invalid_argument on malformed distributions.
void validate(const TypeDistribution& dist, double u_max);

/// Two-type distribution: types (3,2,0) with probability p and (0,2,3)
/// otherwise. Alternative 2 is utilitarian for almost every profile when p
/// is near 1/2, while sincere plurality never picks it.
DiscreteTypes three_two_zero_instance(double p);

Eigen::VectorXd means(const TypeDistribution& dist);

/// n i.i.d. draws, one per row.
Eigen::MatrixXd sample_types(const TypeDistribution& dist, int n, Rng& rng);

/// Support indices of n i.i.d. draws from a discrete distribution.
std::vector<int> sample_type_indices(const DiscreteTypes& dist, int n, Rng& rng);

struct Assumption2Verdict {
  bool pass = false;
  std::string explanation;
};

struct DistributionSummary {
  Eigen::VectorXd means;
  double delta = 0.0;                // smallest gap between adjacent sorted means
  std::vector<int> sort_permutation; // sort_permutation[r] = alternative ranked r by mean (descending)
  bool assumption1_ok = false;       // all means pairwise distinct (tolerance 1e-9)
  std::vector<Assumption2Verdict> assumption2;

  bool assumption2_ok() const;
};

inline constexpr double kMeanTieTolerance = 1e-9;
inline constexpr double kAxisNeighborhood = 0.05; // fraction of u_max

DistributionSummary summarize(const TypeDistribution& dist, double u_max);

/// Marginal utility of wealth, g'(w).
struct MarginalUtility {
  enum class Kind { linear, log, power };
  Kind kind = Kind::linear;
  double gamma = 1.0; // power utility g(w) = w^gamma

  double operator()(double wealth) const;
};

/// Money-metric values u / g'(w) for an agent whose utility over wealth is
/// concave. Callers rescale u_max accordingly.
TypeVector risk_adjusted_values(const TypeVector& u, double wealth, const MarginalUtility& marginal_utility);

struct BeliefGroup {
  double fraction = 1.0;
  TypeDistribution belief;
};

/// Subpopulations, each convinced that its own belief is common knowledge.
struct BeliefProfile {
  std::vector<BeliefGroup> groups;

  void validate(int m, double u_max) const;
  /// Number of agents in each group out of n (largest remainder rounding).
  std::vector<int> group_sizes(int n) const;
};

} // namespace qtm

#endif // QTM_PREFERENCES_HPP
