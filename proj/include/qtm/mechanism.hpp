#ifndef QTM_MECHANISM_HPP
#define QTM_MECHANISM_HPP

// Quadratic transfers mechanism primitives.
//
// Agents buy signed votes a_j for every alternative at cost c * a_j^2, the
// collected costs are shared equally among the other n-1 agents, and the
// outcome is drawn from the softmax of the vote totals. Everything in this
// header is a pure function of its arguments.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace qtm {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Domain aliases; all are length-m column vectors.
using TypeVector = Eigen::VectorXd;     // values u_j in [0, u_max]
using VoteVector = Eigen::VectorXd;     // votes a_j in the vote box
using VoteTotals = Eigen::VectorXd;     // V_j = sum_i a^i_j
using SelectionProbs = Eigen::VectorXd; // Q_k, softmax of the totals

// Rows are agents, columns are alternatives.
using VoteProfile = Eigen::MatrixXd;

class DimensionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class VoteBoxError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

struct ProblemSpec {
  int m = 2;          // alternatives
  int n = 1;          // agents
  double c = 1.0;     // cost per squared vote
  double u_max = 1.0; // values live in [0, u_max]

  void validate() const {
    if (m < 2) throw std::invalid_argument("problem.m must be >= 2");
    if (n < 1) throw std::invalid_argument("problem.n must be >= 1");
    if (!(c > 0.0) || !std::isfinite(c)) throw std::invalid_argument("problem.c must be positive");
    if (!(u_max > 0.0) || !std::isfinite(u_max)) throw std::invalid_argument("problem.u_max must be positive");
  }
};

/// Largest useful vote magnitude: buying more than sqrt(u_max / c) votes on
/// any alternative costs more than the largest possible value difference.
inline double vote_box_bound(const ProblemSpec& spec) { return std::sqrt(spec.u_max / spec.c); }

/// Throws VoteBoxError if any |a_j| exceeds the vote box (relative slack 1e-12).
template <typename Derived>
void check_vote_box(const Eigen::MatrixBase<Derived>& votes, const ProblemSpec& spec) {
  const double bound = vote_box_bound(spec);
  const double limit = bound * (1.0 + 1e-12);
  for (Eigen::Index j = 0; j < votes.size(); ++j) {
    const double v = static_cast<double>(votes(j));
    if (!std::isfinite(v) || std::abs(v) > limit) {
      throw VoteBoxError("vote " + std::to_string(v) + " on alternative " + std::to_string(j) +
                         " outside vote box +/-" + std::to_string(bound));
    }
  }
}

/// Column-wise sum of a vote profile.
template <typename Derived>
Vector<typename Derived::Scalar> tally(const Eigen::MatrixBase<Derived>& profile) {
  return profile.colwise().sum().transpose();
}

inline VoteTotals tally(const std::vector<VoteVector>& profile) {
  if (profile.empty()) throw DimensionError("tally of an empty profile has no dimension");
  VoteTotals totals = VoteTotals::Zero(profile.front().size());
  for (const auto& a : profile) {
    if (a.size() != totals.size()) throw DimensionError("vote vectors differ in length");
    totals += a;
  }
  return totals;
}

/// Softmax of the vote totals, shifted by the maximum so that large totals
/// do not overflow.
template <typename Derived>
Vector<typename Derived::Scalar> select_probs(const Eigen::MatrixBase<Derived>& totals) {
  using Scalar = typename Derived::Scalar;
  Vector<Scalar> q = (totals.array() - totals.maxCoeff()).exp().matrix();
  q /= q.sum();
  return q;
}

/// Row-wise softmax: each row of `totals` is one vote-total vector.
template <typename Derived>
Matrix<typename Derived::Scalar> select_probs_rowwise(const Eigen::MatrixBase<Derived>& totals) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> q = (totals.colwise() - totals.rowwise().maxCoeff()).array().exp().matrix();
  q.array().colwise() /= q.rowwise().sum().array();
  return q;
}

/// Q^i(a): the selection probabilities if agent i votes `a` against the
/// others' totals `v_minus`.
template <typename DerivedA, typename DerivedV>
Vector<typename DerivedA::Scalar> select_probs_given_own_vote(const Eigen::MatrixBase<DerivedA>& a,
                                                              const Eigen::MatrixBase<DerivedV>& v_minus) {
  if (a.size() != v_minus.size()) throw DimensionError("own vote and opponent totals differ in length");
  return select_probs(a + v_minus);
}

template <typename DerivedA, typename DerivedV>
Vector<typename DerivedA::Scalar> select_probs_given_own_vote(const Eigen::MatrixBase<DerivedA>& a,
                                                              const Eigen::MatrixBase<DerivedV>& v_minus,
                                                              const ProblemSpec& spec) {
  check_vote_box(a, spec);
  return select_probs_given_own_vote(a, v_minus);
}

/// Jacobian of Q^i(a) with respect to the own vote: entry (j, k) is dQ_k/da_j,
/// which is Q_j (1 - Q_j) on the diagonal and -Q_j Q_k elsewhere.
template <typename DerivedA, typename DerivedV>
Matrix<typename DerivedA::Scalar> selection_derivatives(const Eigen::MatrixBase<DerivedA>& a,
                                                        const Eigen::MatrixBase<DerivedV>& v_minus) {
  using Scalar = typename DerivedA::Scalar;
  const Vector<Scalar> q = select_probs_given_own_vote(a, v_minus);
  Matrix<Scalar> d = -q * q.transpose();
  d.diagonal() += q;
  return d;
}

struct PayoffBreakdown {
  double choice_value = 0.0; // sum_k Q_k u_k
  double own_cost = 0.0;     // c * sum_k a_k^2
  double rebate = 0.0;       // equal share of the others' costs
  double total = 0.0;        // choice_value - own_cost + rebate
};

/// Realized utility of an agent with values `u` voting `a` while the other
/// agents vote the rows of `others` (n-1 rows, or none when n = 1).
template <typename DerivedU, typename DerivedA, typename DerivedO>
PayoffBreakdown payoff(const Eigen::MatrixBase<DerivedU>& u, const Eigen::MatrixBase<DerivedA>& a,
                       const Eigen::MatrixBase<DerivedO>& others, const ProblemSpec& spec) {
  const Eigen::Index m = a.size();
  if (u.size() != m) throw DimensionError("type and vote vectors differ in length");
  if (spec.n == 1 && others.rows() != 0) throw DimensionError("n = 1 leaves no room for other agents");
  if (others.rows() != spec.n - 1) throw DimensionError("payoff needs exactly n-1 other vote vectors");
  if (others.rows() > 0 && others.cols() != m) throw DimensionError("other agents' votes differ in length");

  VoteTotals v_minus = VoteTotals::Zero(m);
  if (others.rows() > 0) v_minus = tally(others);
  const SelectionProbs q = select_probs_given_own_vote(a, v_minus);

  PayoffBreakdown out;
  out.choice_value = q.dot(u);
  out.own_cost = spec.c * a.squaredNorm();
  if (others.rows() > 0) out.rebate = spec.c / static_cast<double>(spec.n - 1) * others.squaredNorm();
  out.total = out.choice_value - out.own_cost + out.rebate;
  return out;
}

/// Payoffs of every agent in a full profile; row i of `types` and `votes`
/// belong to agent i.
inline std::vector<PayoffBreakdown> profile_payoffs(const Eigen::MatrixXd& types, const VoteProfile& votes,
                                                    const ProblemSpec& spec) {
  if (types.rows() != votes.rows() || types.cols() != votes.cols())
    throw DimensionError("types and votes must have identical shapes");
  if (votes.rows() != spec.n) throw DimensionError("profile must have n rows");
  const Eigen::Index n = votes.rows();
  const VoteTotals totals = tally(votes);
  const SelectionProbs q = select_probs(totals);
  const double total_cost = spec.c * votes.squaredNorm();

  std::vector<PayoffBreakdown> out(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& p = out[static_cast<std::size_t>(i)];
    p.choice_value = q.dot(types.row(i).transpose());
    p.own_cost = spec.c * votes.row(i).squaredNorm();
    if (n > 1) p.rebate = (total_cost - p.own_cost) / static_cast<double>(n - 1);
    p.total = p.choice_value - p.own_cost + p.rebate;
  }
  return out;
}

/// Samples an alternative index k with probability Q_k.
template <typename Derived, typename Rng>
Eigen::Index draw_outcome(const Eigen::MatrixBase<Derived>& q, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double x = unit(rng);
  double cumulative = 0.0;
  for (Eigen::Index k = 0; k + 1 < q.size(); ++k) {
    cumulative += static_cast<double>(q(k));
    if (x < cumulative) return k;
  }
  return q.size() - 1;
}

/// Index of the largest entry; ties resolve to the lowest index.
template <typename Derived>
Eigen::Index argmax(const Eigen::MatrixBase<Derived>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < v.size(); ++k)
    if (v(k) > v(best)) best = k;
  return best;
}

} // namespace qtm

#endif // QTM_MECHANISM_HPP
