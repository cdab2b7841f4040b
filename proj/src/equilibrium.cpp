#include "qtm/equilibrium.hpp"

#include "qtm/parallel.hpp"
#include "qtm/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace qtm {

Eigen::Index TabularStrategy::find(const TypeVector& u) const {
  for (Eigen::Index t = 0; t < types.rows(); ++t)
    if (types.cols() == u.size() && (types.row(t).transpose() - u).cwiseAbs().maxCoeff() <= 1e-9) return t;
  return -1;
}

Eigen::MatrixXd linear_vote_map(const Eigen::MatrixXd& pi, double c) {
  Eigen::MatrixXd off = pi;
  off.diagonal().setZero();
  Eigen::MatrixXd map = -off;
  map.diagonal() = off.rowwise().sum();
  return map / (2.0 * c);
}

VoteVector votes_for(const Strategy& strategy, const TypeVector& u, const ProblemSpec& spec) {
  if (const auto* tab = std::get_if<TabularStrategy>(&strategy)) {
    const Eigen::Index t = tab->find(u);
    if (t < 0) throw std::invalid_argument("type is not in the tabular strategy's support");
    return tab->votes.row(t).transpose();
  }
  return linear_vote_map(std::get<LinearPivotality>(strategy).pi, spec.c) * u;
}

const char* representation_name(const Strategy& strategy) {
  return std::holds_alternative<TabularStrategy>(strategy) ? "tabular" : "linear_pivotality";
}

void SolverConfig::validate() const {
  if (!(damping > 0.0 && damping <= 1.0)) throw std::invalid_argument("solver.damping must lie in (0, 1]");
  if (!(inner_tol > 0.0)) throw std::invalid_argument("solver.inner_tol must be positive");
  if (!(outer_tol > 0.0)) throw std::invalid_argument("solver.outer_tol must be positive");
  if (!(foc_tol > 0.0)) throw std::invalid_argument("solver.foc_tol must be positive");
  if (!(linear_foc_tol > 0.0)) throw std::invalid_argument("solver.linear_foc_tol must be positive");
  if (max_inner < 1) throw std::invalid_argument("solver.max_inner must be positive");
  if (max_outer < 1) throw std::invalid_argument("solver.max_outer must be positive");
  if (max_halvings < 0) throw std::invalid_argument("solver.max_halvings must be nonnegative");
  if (n_mc < 1) throw std::invalid_argument("solver.n_mc must be positive");
  if (!(exact_atom_cap >= 1.0)) throw std::invalid_argument("solver.exact_atom_cap must be >= 1");
  if (probe_types < 1) throw std::invalid_argument("solver.probe_types must be positive");
}

// ---------------------------------------------------------------------------
// Opponent field

double multinomial_atom_count(int opponents, int support_size) {
  // C(opponents + s - 1, s - 1)
  double count = 1.0;
  for (int i = 1; i < support_size; ++i) count = count * (opponents + i) / i;
  return std::round(count);
}

namespace {

// All count vectors of length s summing to total, in lexicographic order.
std::vector<std::vector<int>> compositions(int total, int parts) {
  std::vector<std::vector<int>> out;
  std::vector<int> current(static_cast<std::size_t>(parts), 0);
  auto recurse = [&](auto&& self, int index, int remaining) -> void {
    if (index == parts - 1) {
      current[static_cast<std::size_t>(index)] = remaining;
      out.push_back(current);
      return;
    }
    for (int k = 0; k <= remaining; ++k) {
      current[static_cast<std::size_t>(index)] = k;
      self(self, index + 1, remaining - k);
    }
  };
  recurse(recurse, 0, total);
  return out;
}

void fill_exact(OpponentField& field, const DiscreteTypes& dist, int opponents) {
  const int s = dist.support_size();
  const auto counts = compositions(opponents, s);
  const double log_norm = std::lgamma(opponents + 1.0);
  std::vector<double> weights;
  std::vector<const std::vector<int>*> kept;
  weights.reserve(counts.size());
  for (const auto& k : counts) {
    double lw = log_norm;
    for (int t = 0; t < s; ++t) {
      const int kt = k[static_cast<std::size_t>(t)];
      lw += kt * std::log(dist.probabilities(t)) - std::lgamma(kt + 1.0);
    }
    const double w = std::exp(lw);
    if (w > 0.0) { // atoms that underflow contribute nothing
      weights.push_back(w);
      kept.push_back(&k);
    }
  }
  field.weights = Eigen::Map<Eigen::VectorXd>(weights.data(), static_cast<Eigen::Index>(weights.size()));
  field.statistics.resize(static_cast<Eigen::Index>(kept.size()), s);
  for (std::size_t a = 0; a < kept.size(); ++a)
    for (int t = 0; t < s; ++t) field.statistics(static_cast<Eigen::Index>(a), t) = (*kept[a])[static_cast<std::size_t>(t)];
}

void fill_monte_carlo_counts(OpponentField& field, const DiscreteTypes& dist, int opponents, long draws,
                             std::uint64_t stream, int workers) {
  const int s = dist.support_size();
  field.weights = Eigen::VectorXd::Constant(draws, 1.0 / static_cast<double>(draws));
  field.statistics.resize(draws, s);
  parallel_for(static_cast<std::size_t>(draws), workers, [&](std::size_t i) {
    Rng rng = indexed_rng(stream, i);
    // conditional binomials give a multinomial count vector
    int remaining = opponents;
    double mass_left = 1.0;
    for (int t = 0; t < s; ++t) {
      int k = remaining;
      if (t + 1 < s && remaining > 0) {
        const double p = std::clamp(dist.probabilities(t) / mass_left, 0.0, 1.0);
        std::binomial_distribution<int> bin(remaining, p);
        k = bin(rng);
      }
      field.statistics(static_cast<Eigen::Index>(i), t) = k;
      remaining -= k;
      mass_left -= dist.probabilities(t);
    }
  });
}

void fill_monte_carlo_sums(OpponentField& field, const TypeDistribution& dist, int opponents, long draws,
                           std::uint64_t stream, int workers) {
  const int m = dimension(dist);
  field.weights = Eigen::VectorXd::Constant(draws, 1.0 / static_cast<double>(draws));
  field.statistics.resize(draws, m);
  field.own_types.resize(draws, m);
  parallel_for(static_cast<std::size_t>(draws), workers, [&](std::size_t i) {
    Rng rng = indexed_rng(stream, i);
    const Eigen::MatrixXd draw = sample_types(dist, opponents + 1, rng);
    field.own_types.row(static_cast<Eigen::Index>(i)) = draw.row(0);
    field.statistics.row(static_cast<Eigen::Index>(i)) = draw.bottomRows(opponents).colwise().sum();
  });
}

} // namespace

void OpponentField::refresh(const Strategy& strategy, const ProblemSpec& spec) {
  if (statistic == Statistic::type_counts) {
    Eigen::MatrixXd per_type;
    if (const auto* tab = std::get_if<TabularStrategy>(&strategy)) {
      if (tab->votes.rows() != statistics.cols())
        throw std::invalid_argument("tabular strategy size differs from the field's support");
      per_type = tab->votes;
    } else {
      per_type = support * linear_vote_map(std::get<LinearPivotality>(strategy).pi, spec.c).transpose();
    }
    totals = statistics * per_type;
    return;
  }
  const auto* lin = std::get_if<LinearPivotality>(&strategy);
  if (!lin) throw std::invalid_argument("a tabular strategy requires a discrete type distribution");
  totals = statistics * linear_vote_map(lin->pi, spec.c).transpose();
}

OpponentField build_field(const Strategy& strategy, const ProblemSpec& spec, const TypeDistribution& dist,
                          const SolverConfig& config, int iteration) {
  const int opponents = spec.n - 1;
  const std::uint64_t stream = config.field_refresh
                                   ? derive_seed(config.seed, "field")
                                   : hash_combine(derive_seed(config.seed, "field"), static_cast<std::uint64_t>(iteration));
  OpponentField field;
  if (const auto* d = std::get_if<DiscreteTypes>(&dist)) {
    field.statistic = OpponentField::Statistic::type_counts;
    field.support = d->values;
    if (multinomial_atom_count(opponents, d->support_size()) <= config.exact_atom_cap) {
      field.kind = OpponentField::Kind::exact_multinomial;
      fill_exact(field, *d, opponents);
    } else {
      field.kind = OpponentField::Kind::monte_carlo;
      fill_monte_carlo_counts(field, *d, opponents, config.n_mc, stream, config.workers);
    }
  } else {
    if (std::holds_alternative<TabularStrategy>(strategy))
      throw std::invalid_argument("a tabular strategy requires a discrete type distribution");
    field.kind = OpponentField::Kind::monte_carlo;
    field.statistic = OpponentField::Statistic::type_sums;
    fill_monte_carlo_sums(field, dist, opponents, config.n_mc, stream, config.workers);
  }
  field.refresh(strategy, spec);
  return field;
}

// ---------------------------------------------------------------------------
// Pivotality

namespace {

Eigen::MatrixXd probs_at(const VoteVector& a, const OpponentField& field) {
  if (a.size() != field.totals.cols()) throw DimensionError("vote vector and field differ in dimension");
  return select_probs_rowwise(field.totals.rowwise() + a.transpose());
}

} // namespace

Eigen::MatrixXd estimate_rjk(const VoteVector& a, const OpponentField& field) {
  const Eigen::MatrixXd q = probs_at(a, field);
  return q.transpose() * (field.weights.asDiagonal() * q);
}

PivotalityEstimate estimate_rjk_with_se(const VoteVector& a, const OpponentField& field) {
  const Eigen::MatrixXd q = probs_at(a, field);
  PivotalityEstimate est;
  est.mean = q.transpose() * (field.weights.asDiagonal() * q);
  const Eigen::Index m = q.cols();
  est.se = Eigen::MatrixXd::Zero(m, m);
  if (field.kind == OpponentField::Kind::monte_carlo && field.atoms() > 1) {
    const double count = static_cast<double>(field.atoms());
    for (Eigen::Index j = 0; j < m; ++j)
      for (Eigen::Index k = 0; k < m; ++k) {
        const Eigen::ArrayXd prod = q.col(j).array() * q.col(k).array();
        const double var = (prod - est.mean(j, k)).square().sum() / (count - 1.0);
        est.se(j, k) = std::sqrt(var / count);
      }
  }
  return est;
}

Eigen::VectorXd expected_selection(const VoteVector& a, const OpponentField& field) {
  return probs_at(a, field).transpose() * field.weights;
}

Eigen::VectorXd foc_rhs(const TypeVector& u, const VoteVector& a, const OpponentField& field) {
  const Eigen::MatrixXd r = estimate_rjk(a, field);
  // sum_k (u_j - u_k) r_jk = u_j * rowsum_j - (r u)_j; the k = j term cancels.
  return u.cwiseProduct(r.rowwise().sum()) - r * u;
}

double foc_residual(const TypeVector& u, const VoteVector& a, const OpponentField& field, const ProblemSpec& spec) {
  return (2.0 * spec.c * a - foc_rhs(u, a, field)).cwiseAbs().maxCoeff();
}

namespace {

inline constexpr int kMaxPolishIterations = 500;
inline constexpr int kPolishPatience = 20;

// Direction-flip detector shared by the inner and outer damped iterations.

class DampingSchedule {
public:
  DampingSchedule(double initial, int max_halvings) : damping_(initial), halvings_left_(max_halvings) {}

  double damping() const { return damping_; }
  bool exhausted() const { return exhausted_; }

  // Feed the undamped update.
  template <typename Derived>
  void observe(const Eigen::MatrixBase<Derived>& step) {
    const double norm = step.norm();
    if (previous_norm_ > 0.0 && norm > 0.0) {
      const double cosine = step.cwiseProduct(previous_).sum() / (norm * previous_norm_);
      flips_ = cosine < -0.5 ? flips_ + 1 : 0;
      if (flips_ >= 2) {
        flips_ = 0;
        if (halvings_left_ == 0) {
          exhausted_ = true;
        } else {
          --halvings_left_;
          damping_ *= 0.5;
        }
      }
    }
    previous_ = step;
    previous_norm_ = norm;
  }

private:
  double damping_;
  int halvings_left_;
  int flips_ = 0;
  bool exhausted_ = false;
  Eigen::MatrixXd previous_;
  double previous_norm_ = 0.0;
};

} // namespace

BestResponse best_response(const TypeVector& u, const OpponentField& field, const ProblemSpec& spec,
                           const SolverConfig& config, const std::optional<VoteVector>& start) {
  const Eigen::Index m = field.totals.cols();
  if (u.size() != m) throw DimensionError("type vector and field differ in dimension");
  const double bound = vote_box_bound(spec);
  BestResponse br;
  br.votes = start ? *start : VoteVector::Zero(m);
  check_vote_box(br.votes, spec);
  DampingSchedule schedule(config.damping, config.max_halvings);
  for (int it = 1; it <= config.max_inner; ++it) {
    const VoteVector target = foc_rhs(u, br.votes, field) / (2.0 * spec.c);
    const VoteVector step = target - br.votes;
    schedule.observe(step);
    VoteVector next = br.votes + schedule.damping() * step;
    next = next.cwiseMax(-bound).cwiseMin(bound);
    const double change = (next - br.votes).cwiseAbs().maxCoeff();
    br.votes = next;
    br.iterations = it;
    if (change <= config.inner_tol) {
      br.converged = true;
      break;
    }
    if (schedule.exhausted()) break;
  }
  br.damping = schedule.damping();
  check_vote_box(br.votes, spec);
  return br;
}

// ---------------------------------------------------------------------------
// Equilibrium

PivotalityEstimate unconditional_pivotality(const Strategy& strategy, const OpponentField& field,
                                            const TypeDistribution& dist, const ProblemSpec& spec) {
  const Eigen::Index m = field.totals.cols();
  PivotalityEstimate est{Eigen::MatrixXd::Zero(m, m), Eigen::MatrixXd::Zero(m, m)};
  if (const auto* d = std::get_if<DiscreteTypes>(&dist)) {
    // own type integrated exactly; field may itself be exact or sampled
    for (Eigen::Index t = 0; t < d->values.rows(); ++t) {
      const auto r = estimate_rjk_with_se(votes_for(strategy, d->values.row(t).transpose(), spec), field);
      est.mean += d->probabilities(t) * r.mean;
      est.se += d->probabilities(t) * r.se; // conservative: ignores cancellation across types
    }
    return est;
  }
  // continuous: pair atom i's own-type draw with its opponents
  const Eigen::MatrixXd own_votes = field.own_types * linear_vote_map(std::get<LinearPivotality>(strategy).pi, spec.c).transpose();
  const Eigen::MatrixXd q = select_probs_rowwise(field.totals + own_votes);
  est.mean = q.transpose() * (field.weights.asDiagonal() * q);
  const double count = static_cast<double>(field.atoms());
  if (count > 1)
    for (Eigen::Index j = 0; j < m; ++j)
      for (Eigen::Index k = 0; k < m; ++k) {
        const Eigen::ArrayXd prod = q.col(j).array() * q.col(k).array();
        est.se(j, k) = std::sqrt((prod - est.mean(j, k)).square().sum() / (count - 1.0) / count);
      }
  return est;
}

Eigen::MatrixXd probe_types(const TypeDistribution& dist, const SolverConfig& config) {
  if (const auto* d = std::get_if<DiscreteTypes>(&dist)) return d->values;
  Rng rng = indexed_rng(derive_seed(config.seed, "probes"), 0);
  return sample_types(dist, config.probe_types, rng);
}

namespace {

// 2c/m - max_j sum_{k != j} |grad_a r_jk(a)|, with
// d r_jk / d a_l = E[Q_j Q_k (1{j=l} + 1{k=l} - 2 Q_l)].
double contraction_margin_at(const VoteVector& a, const OpponentField& field, const ProblemSpec& spec) {
  const Eigen::MatrixXd q = probs_at(a, field);
  const Eigen::Index m = q.cols();
  double worst = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    double sum = 0.0;
    for (Eigen::Index k = 0; k < m; ++k) {
      if (k == j) continue;
      const Eigen::ArrayXd qjqk = field.weights.array() * q.col(j).array() * q.col(k).array();
      Eigen::VectorXd grad(m);
      for (Eigen::Index l = 0; l < m; ++l) {
        const double indicator = (l == j ? 1.0 : 0.0) + (l == k ? 1.0 : 0.0);
        grad(l) = (qjqk * (indicator - 2.0 * q.col(l).array())).sum();
      }
      sum += grad.norm();
    }
    worst = std::max(worst, sum);
  }
  return 2.0 * spec.c / static_cast<double>(spec.m) - worst;
}

struct Measured {
  double residual = 0.0;
  double margin = std::numeric_limits<double>::infinity();
};

Measured measure(const Strategy& strategy, const OpponentField& field, const Eigen::MatrixXd& probes,
                 const ProblemSpec& spec, int workers) {
  std::vector<Measured> per(static_cast<std::size_t>(probes.rows()));
  parallel_for(per.size(), workers, [&](std::size_t t) {
    const TypeVector u = probes.row(static_cast<Eigen::Index>(t)).transpose();
    const VoteVector a = votes_for(strategy, u, spec);
    per[t].residual = foc_residual(u, a, field, spec);
    per[t].margin = contraction_margin_at(a, field, spec);
  });
  Measured out;
  for (const auto& p : per) {
    out.residual = std::max(out.residual, p.residual);
    out.margin = std::min(out.margin, p.margin);
  }
  return out;
}

EquilibriumResult solve_tabular(const ProblemSpec& spec, const DiscreteTypes& dist, const SolverConfig& config) {
  const Eigen::Index s = dist.values.rows();
  TabularStrategy strategy{dist.values, Eigen::MatrixXd::Zero(s, spec.m)};
  if (config.warm_start) {
    const auto* warm = std::get_if<TabularStrategy>(&*config.warm_start);
    if (!warm) throw std::invalid_argument("warm start must be a tabular strategy for a discrete distribution");
    for (Eigen::Index t = 0; t < s; ++t) {
      const Eigen::Index row = warm->find(dist.values.row(t).transpose());
      if (row < 0) throw std::invalid_argument("warm start does not cover every support type");
      strategy.votes.row(t) = warm->votes.row(row);
    }
    check_vote_box(strategy.votes.reshaped(), spec);
  }

  EquilibriumResult result;
  OpponentField field = build_field(strategy, spec, dist, config, 0);
  result.field_kind = field.kind;
  result.field_atoms = field.atoms();
  DampingSchedule schedule(config.damping, config.max_halvings);
  bool inner_failed = false;

  // Undamped update: best responses to the field of the current strategy.
  auto best_responses = [&](int it) {
    if (!config.field_refresh) field = build_field(strategy, spec, dist, config, it);
    field.refresh(strategy, spec);
    Eigen::MatrixXd responses(s, spec.m);
    std::vector<char> ok(static_cast<std::size_t>(s), 1);
    parallel_for(static_cast<std::size_t>(s), config.workers, [&](std::size_t t) {
      const auto row = static_cast<Eigen::Index>(t);
      const BestResponse br = best_response(dist.values.row(row).transpose(), field, spec, config,
                                            VoteVector(strategy.votes.row(row).transpose()));
      responses.row(row) = br.votes.transpose();
      ok[t] = br.converged ? 1 : 0;
    });
    inner_failed = std::find(ok.begin(), ok.end(), 0) != ok.end();
    return Eigen::MatrixXd(responses - strategy.votes);
  };

  double change = std::numeric_limits<double>::infinity();
  int it = 1;
  for (; it <= config.max_outer; ++it) {
    const Eigen::MatrixXd step = best_responses(it);
    schedule.observe(step);
    strategy.votes += schedule.damping() * step;
    change = schedule.damping() * step.cwiseAbs().maxCoeff();
    result.outer_iterations = it;

    if (change <= config.outer_tol && !inner_failed) {
      field.refresh(strategy, spec);
      const Measured m = measure(strategy, field, dist.values, spec, config.workers);
      if (m.residual <= config.foc_tol) {
        result.converged = true;
        break;
      }
    }
    if (schedule.exhausted()) break;
  }

  // Keep iterating while the updates still shrink, so that the answer does
  // not depend on where the tolerances happened to cut the iteration off.
  if (result.converged && config.field_refresh) {
    // The step norm need not decrease monotonically, so stop only after a
    // stretch without a new minimum and keep the best iterate seen.
    const double floor = 1e-14 * vote_box_bound(spec);
    Eigen::MatrixXd best = strategy.votes;
    double best_change = std::numeric_limits<double>::infinity();
    int stale = 0;
    for (int extra = 0; extra < kMaxPolishIterations && stale < kPolishPatience; ++extra) {
      const Eigen::MatrixXd step = best_responses(++it);
      if (inner_failed) break;
      const double size = step.cwiseAbs().maxCoeff();
      if (size < best_change) {
        best = strategy.votes;
        best_change = size;
        stale = 0;
        if (size <= floor) break;
      } else {
        ++stale;
      }
      strategy.votes += schedule.damping() * step;
    }
    strategy.votes = best;
  }

  field.refresh(strategy, spec);
  const Measured final_measure = measure(strategy, field, dist.values, spec, config.workers);
  result.foc_residual = final_measure.residual;
  result.contraction_margin = final_measure.margin;
  result.foc_threshold = config.foc_tol;
  result.final_damping = schedule.damping();
  result.strategy = strategy;
  const auto piv = unconditional_pivotality(result.strategy, field, dist, spec);
  result.pivotality = piv.mean;
  result.pivotality_se = piv.se;
  if (result.converged) {
    result.message = "converged";
  } else if (schedule.exhausted()) {
    result.message = "oscillation persisted after the damping was halved " + std::to_string(config.max_halvings) + " times";
  } else if (inner_failed) {
    result.message = "best response did not converge within max_inner";
  } else {
    result.message = "max_outer reached";
  }
  return result;
}

EquilibriumResult solve_linear(const ProblemSpec& spec, const TypeDistribution& dist, const SolverConfig& config) {
  const int m = spec.m;
  LinearPivotality strategy{Eigen::MatrixXd::Zero(m, m)};
  if (config.warm_start) {
    const auto* warm = std::get_if<LinearPivotality>(&*config.warm_start);
    if (!warm || warm->pi.rows() != m || warm->pi.cols() != m)
      throw std::invalid_argument("warm start must be an m x m pivotality matrix");
    strategy = *warm;
  }

  EquilibriumResult result;
  OpponentField field = build_field(strategy, spec, dist, config, 0);
  result.field_kind = field.kind;
  result.field_atoms = field.atoms();
  DampingSchedule schedule(config.damping, config.max_halvings);

  for (int it = 1; it <= config.max_outer; ++it) {
    if (!config.field_refresh) field = build_field(strategy, spec, dist, config, it);
    field.refresh(strategy, spec);
    Eigen::MatrixXd target = unconditional_pivotality(strategy, field, dist, spec).mean;
    target.diagonal().setZero();
    const Eigen::MatrixXd step = target - strategy.pi;
    schedule.observe(step);
    strategy.pi += schedule.damping() * step;
    const double change = schedule.damping() * step.cwiseAbs().maxCoeff();
    result.outer_iterations = it;
    if (change <= config.outer_tol) {
      result.converged = true;
      break;
    }
    if (schedule.exhausted()) break;
  }

  field.refresh(strategy, spec);
  const Measured measured = measure(strategy, field, probe_types(dist, config), spec, config.workers);
  result.foc_residual = measured.residual;
  result.contraction_margin = measured.margin;
  result.foc_threshold = config.linear_foc_tol * spec.u_max;
  result.final_damping = schedule.damping();
  result.strategy = strategy;
  const auto piv = unconditional_pivotality(result.strategy, field, dist, spec);
  result.pivotality = piv.mean;
  result.pivotality_se = piv.se;
  if (result.converged && result.foc_residual > result.foc_threshold) {
    result.converged = false;
    result.message = "pivotality matrix is stationary but the linear approximation misses the first-order "
                     "conditions by more than the threshold";
  } else if (result.converged) {
    result.message = "converged";
  } else if (schedule.exhausted()) {
    result.message = "oscillation persisted after the damping was halved " + std::to_string(config.max_halvings) + " times";
  } else {
    result.message = "max_outer reached";
  }
  return result;
}

} // namespace

EquilibriumResult solve_equilibrium(const ProblemSpec& spec, const TypeDistribution& dist, const SolverConfig& config) {
  spec.validate();
  config.validate();
  validate(dist, spec.u_max);
  if (dimension(dist) != spec.m) throw std::invalid_argument("distribution dimension differs from problem.m");
  if (const auto* d = std::get_if<DiscreteTypes>(&dist)) return solve_tabular(spec, *d, config);
  return solve_linear(spec, dist, config);
}

} // namespace qtm
