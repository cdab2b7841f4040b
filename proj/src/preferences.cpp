#include "qtm/preferences.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace qtm {

double Marginal::mean() const {
  switch (kind) {
  case Kind::uniform: return 0.5 * (lo + hi);
  case Kind::beta: return lo + (hi - lo) * alpha / (alpha + beta);
  case Kind::point: return value;
  }
  return 0.0;
}

double Marginal::sample(Rng& rng) const {
  switch (kind) {
  case Kind::uniform: {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(rng);
  }
  case Kind::beta: {
    std::gamma_distribution<double> ga(alpha, 1.0);
    std::gamma_distribution<double> gb(beta, 1.0);
    const double x = ga(rng);
    const double y = gb(rng);
    return lo + (hi - lo) * x / (x + y);
  }
  case Kind::point: return value;
  }
  return 0.0;
}

bool Marginal::has_mass_near(double x, double radius) const {
  if (kind == Kind::point) return std::abs(value - x) <= radius;
  // uniform and beta both have positive density on the open interval (lo, hi)
  return lo < x + radius && hi > x - radius;
}

int dimension(const TypeDistribution& dist) {
  if (const auto* d = std::get_if<DiscreteTypes>(&dist)) return static_cast<int>(d->values.cols());
  return static_cast<int>(std::get<IndependentMarginals>(dist).coordinates.size());
}

bool is_discrete(const TypeDistribution& dist) { return std::holds_alternative<DiscreteTypes>(dist); }

const DiscreteTypes& as_discrete(const TypeDistribution& dist) {
  const auto* d = std::get_if<DiscreteTypes>(&dist);
  if (!d) throw std::invalid_argument("a discrete type distribution is required");
  return *d;
}

void validate(const TypeDistribution& dist, double u_max) {
  const double slack = 1e-12 * std::max(1.0, u_max);
  if (const auto* d = std::get_if<DiscreteTypes>(&dist)) {
    if (d->values.rows() == 0) throw std::invalid_argument("distribution support is empty");
    if (d->probabilities.size() != d->values.rows())
      throw std::invalid_argument("distribution probabilities and support differ in length");
    if ((d->probabilities.array() <= 0.0).any())
      throw std::invalid_argument("distribution probabilities must be positive");
    if (std::abs(d->probabilities.sum() - 1.0) > 1e-12)
      throw std::invalid_argument("distribution probabilities must sum to 1");
    if (!d->values.allFinite() || (d->values.array() < -slack).any() || (d->values.array() > u_max + slack).any())
      throw std::invalid_argument("distribution support values must lie in [0, u_max]");
    return;
  }
  const auto& marg = std::get<IndependentMarginals>(dist);
  if (marg.coordinates.empty()) throw std::invalid_argument("distribution has no marginals");
  for (const auto& c : marg.coordinates) {
    switch (c.kind) {
    case Marginal::Kind::beta:
      if (!(c.alpha > 0.0) || !(c.beta > 0.0)) throw std::invalid_argument("beta shapes must be positive");
      [[fallthrough]];
    case Marginal::Kind::uniform:
      if (!(c.lo < c.hi)) throw std::invalid_argument("marginal requires lo < hi");
      if (c.lo < -slack || c.hi > u_max + slack)
        throw std::invalid_argument("marginal support must lie in [0, u_max]");
      break;
    case Marginal::Kind::point:
      if (c.value < -slack || c.value > u_max + slack)
        throw std::invalid_argument("point mass must lie in [0, u_max]");
      break;
    }
  }
}

DiscreteTypes three_two_zero_instance(double p) {
  DiscreteTypes d;
  d.probabilities = Eigen::Vector2d(p, 1.0 - p);
  d.values.resize(2, 3);
  d.values << 3.0, 2.0, 0.0, 0.0, 2.0, 3.0;
  return d;
}

Eigen::VectorXd means(const TypeDistribution& dist) {
  if (const auto* d = std::get_if<DiscreteTypes>(&dist)) return d->values.transpose() * d->probabilities;
  const auto& marg = std::get<IndependentMarginals>(dist);
  Eigen::VectorXd mu(static_cast<Eigen::Index>(marg.coordinates.size()));
  for (std::size_t j = 0; j < marg.coordinates.size(); ++j) mu(static_cast<Eigen::Index>(j)) = marg.coordinates[j].mean();
  return mu;
}

std::vector<int> sample_type_indices(const DiscreteTypes& dist, int n, Rng& rng) {
  std::discrete_distribution<int> pick(dist.probabilities.data(), dist.probabilities.data() + dist.probabilities.size());
  std::vector<int> out(static_cast<std::size_t>(std::max(0, n)));
  for (auto& t : out) t = pick(rng);
  return out;
}

Eigen::MatrixXd sample_types(const TypeDistribution& dist, int n, Rng& rng) {
  const int m = dimension(dist);
  Eigen::MatrixXd out(std::max(0, n), m);
  if (const auto* d = std::get_if<DiscreteTypes>(&dist)) {
    const auto idx = sample_type_indices(*d, n, rng);
    for (int i = 0; i < n; ++i) out.row(i) = d->values.row(idx[static_cast<std::size_t>(i)]);
    return out;
  }
  const auto& marg = std::get<IndependentMarginals>(dist);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out(i, j) = marg.coordinates[static_cast<std::size_t>(j)].sample(rng);
  return out;
}

bool DistributionSummary::assumption2_ok() const {
  return std::all_of(assumption2.begin(), assumption2.end(), [](const auto& v) { return v.pass; });
}

namespace {

// Axis condition for alternative j: positive probability near t e_j for some t > 0.
Assumption2Verdict axis_verdict(const TypeDistribution& dist, int j, double u_max) {
  const double radius = kAxisNeighborhood * u_max;
  std::ostringstream why;
  if (const auto* d = std::get_if<DiscreteTypes>(&dist)) {
    for (Eigen::Index t = 0; t < d->values.rows(); ++t) {
      const Eigen::VectorXd x = d->values.row(t).transpose();
      const double off_axis = std::sqrt(std::max(0.0, x.squaredNorm() - x(j) * x(j)));
      if (x(j) > 0.0 && off_axis <= radius) {
        why << "support atom " << t << " lies within " << radius << " of the axis of alternative " << j;
        return {true, why.str()};
      }
    }
    why << "fails/not verifiable: no support atom within " << radius << " of t*e_" << j << " for t > 0";
    return {false, why.str()};
  }
  const auto& marg = std::get<IndependentMarginals>(dist);
  const int m = static_cast<int>(marg.coordinates.size());
  const double per_axis = radius / std::sqrt(static_cast<double>(std::max(1, m - 1)));
  const auto& own = marg.coordinates[static_cast<std::size_t>(j)];
  const bool own_positive = own.kind == Marginal::Kind::point ? own.value > 0.0 : own.hi > 0.0;
  if (!own_positive) {
    why << "coordinate " << j << " has no mass above 0";
    return {false, why.str()};
  }
  for (int k = 0; k < m; ++k) {
    if (k == j) continue;
    if (!marg.coordinates[static_cast<std::size_t>(k)].has_mass_near(0.0, per_axis)) {
      why << "coordinate " << k << " has no mass within " << per_axis << " of 0";
      return {false, why.str()};
    }
  }
  why << "independent marginals put positive mass near the axis of alternative " << j;
  return {true, why.str()};
}

} // namespace

DistributionSummary summarize(const TypeDistribution& dist, double u_max) {
  DistributionSummary s;
  s.means = means(dist);
  const int m = static_cast<int>(s.means.size());
  s.sort_permutation.resize(static_cast<std::size_t>(m));
  std::iota(s.sort_permutation.begin(), s.sort_permutation.end(), 0);
  std::stable_sort(s.sort_permutation.begin(), s.sort_permutation.end(),
                   [&](int a, int b) { return s.means(a) > s.means(b); });
  s.delta = std::numeric_limits<double>::infinity();
  for (int r = 0; r + 1 < m; ++r) {
    const double gap = s.means(s.sort_permutation[static_cast<std::size_t>(r)]) -
                       s.means(s.sort_permutation[static_cast<std::size_t>(r + 1)]);
    s.delta = std::min(s.delta, gap);
  }
  if (m < 2) s.delta = 0.0;
  s.assumption1_ok = s.delta > kMeanTieTolerance;
  for (int j = 0; j < m; ++j) s.assumption2.push_back(axis_verdict(dist, j, u_max));
  return s;
}

double MarginalUtility::operator()(double wealth) const {
  switch (kind) {
  case Kind::linear: return 1.0;
  case Kind::log: return 1.0 / wealth;
  case Kind::power: return gamma * std::pow(wealth, gamma - 1.0);
  }
  return 1.0;
}

TypeVector risk_adjusted_values(const TypeVector& u, double wealth, const MarginalUtility& marginal_utility) {
  if (!(wealth > 0.0)) throw std::invalid_argument("wealth must be positive");
  const double g = marginal_utility(wealth);
  if (!(g > 0.0) || !std::isfinite(g)) throw std::invalid_argument("marginal utility of wealth must be positive");
  return u / g;
}

void BeliefProfile::validate(int m, double u_max) const {
  if (groups.empty()) throw std::invalid_argument("beliefs.groups must be nonempty");
  double total = 0.0;
  for (const auto& g : groups) {
    if (g.fraction < 0.0 || g.fraction > 1.0) throw std::invalid_argument("belief fraction must lie in [0, 1]");
    total += g.fraction;
    qtm::validate(g.belief, u_max);
    if (dimension(g.belief) != m) throw std::invalid_argument("belief distribution dimension differs from problem.m");
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("belief fractions must sum to 1");
}

std::vector<int> BeliefProfile::group_sizes(int n) const {
  std::vector<int> sizes(groups.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  int assigned = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double exact = groups[g].fraction * n;
    sizes[g] = static_cast<int>(std::floor(exact));
    assigned += sizes[g];
    remainders.emplace_back(exact - sizes[g], g);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < n && r < remainders.size(); ++r, ++assigned) ++sizes[remainders[r].second];
  return sizes;
}

} // namespace qtm
