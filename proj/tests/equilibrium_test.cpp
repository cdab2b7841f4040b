#include "qtm/beliefs.hpp"
#include "qtm/equilibrium.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>

using namespace qtm;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Root of f on [lo, hi] by plain bisection; f(lo) and f(hi) differ in sign.
double bisect(const std::function<double(double)>& f, double lo, double hi) {
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    ((f(lo) < 0) == (f(mid) < 0) ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

DiscreteTypes single_atom(const Eigen::VectorXd& u) {
  DiscreteTypes d;
  d.probabilities = Eigen::VectorXd::Ones(1);
  d.values = u.transpose();
  return d;
}

DiscreteTypes two_types(double p, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  DiscreteTypes d;
  d.probabilities = Eigen::Vector2d(p, 1 - p);
  d.values.resize(2, a.size());
  d.values.row(0) = a.transpose();
  d.values.row(1) = b.transpose();
  return d;
}

const TabularStrategy& table(const EquilibriumResult& r) { return std::get<TabularStrategy>(r.strategy); }

} // namespace

TEST_CASE("solver config validation") {
  SolverConfig c;
  CHECK_NOTHROW(c.validate());
  c.damping = 0.0;
  CHECK_THROWS_WITH(c.validate(), doctest::Contains("solver.damping"));
}

TEST_CASE("opponent field construction") {
  const ProblemSpec split{3, 300, 1.0, 3.0};
  const TypeDistribution d1{three_two_zero_instance(0.501)};
  const TabularStrategy zero{three_two_zero_instance(0.501).values, Eigen::MatrixXd::Zero(2, 3)};
  const OpponentField f1 = build_field(zero, split, d1, SolverConfig{});
  CHECK(f1.kind == OpponentField::Kind::exact_multinomial);
  CHECK(f1.atoms() == 300);
  CHECK(f1.weights.sum() == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(multinomial_atom_count(299, 2) == doctest::Approx(300));
  CHECK(multinomial_atom_count(10, 3) == doctest::Approx(66));

  const ProblemSpec two{2, 2, 1.0, 1.0};
  const DiscreteTypes atom = single_atom(Eigen::Vector2d(1, 0));
  const TabularStrategy fixed{atom.values, Eigen::RowVector2d(0.1, -0.1)};
  const OpponentField f2 = build_field(fixed, two, TypeDistribution{atom}, SolverConfig{});
  CHECK(f2.atoms() == 1);
  CHECK(f2.totals.row(0).transpose().isApprox(Eigen::Vector2d(0.1, -0.1)));

  IndependentMarginals im;
  im.coordinates = {Marginal::uniform(0, 1), Marginal::uniform(0, 0.5)};
  SolverConfig mc;
  mc.n_mc = 2000;
  mc.seed = 4;
  const LinearPivotality lp{Eigen::Matrix2d{{0, 0.2}, {0.2, 0}}};
  const OpponentField a = build_field(lp, ProblemSpec{2, 50, 1.0, 1.0}, TypeDistribution{im}, mc);
  const OpponentField b = build_field(lp, ProblemSpec{2, 50, 1.0, 1.0}, TypeDistribution{im}, mc);
  CHECK(a.kind == OpponentField::Kind::monte_carlo);
  CHECK(a.atoms() == 2000);
  CHECK(a.totals == b.totals);
}

TEST_CASE("pivotality estimates") {
  const ProblemSpec two{2, 2, 1.0, 1.0};
  const DiscreteTypes atom = single_atom(Eigen::Vector2d(1, 0));
  const OpponentField f = build_field(TabularStrategy{atom.values, Eigen::RowVector2d(0.1, -0.1)}, two,
                                      TypeDistribution{atom}, SolverConfig{});
  const Eigen::MatrixXd r = estimate_rjk(Eigen::Vector2d::Zero(), f);
  CHECK(r(0, 1) == doctest::Approx(sigmoid(0.2) * (1 - sigmoid(0.2))).epsilon(1e-14));
  CHECK(r(0, 1) == doctest::Approx(0.24752).epsilon(1e-4));

  const ProblemSpec split{3, 30, 1.0, 3.0};
  const DiscreteTypes d = three_two_zero_instance(0.4);
  const OpponentField g = build_field(TabularStrategy{d.values, Eigen::MatrixXd{{0.1, 0.05, -0.15}, {-0.2, 0.0, 0.2}}},
                                      split, TypeDistribution{d}, SolverConfig{});
  const Eigen::Vector3d a(0.3, -0.1, 0.05);
  const Eigen::MatrixXd rr = estimate_rjk(a, g);
  CHECK(rr.isApprox(rr.transpose(), 1e-15));
  for (int j = 0; j < 3; ++j)
    for (int k = 0; k < 3; ++k)
      if (j != k) {
        CHECK(rr(j, k) > 0);
        CHECK(rr(j, k) <= 0.25);
      }
  CHECK(estimate_rjk(a + Eigen::Vector3d::Constant(0.4), g).isApprox(rr, 1e-12));
  // off-diagonal row sums equal E[Q_j (1 - Q_j)]
  const Eigen::VectorXd q = expected_selection(a, g);
  CHECK(q.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("best response against a fixed field") {
  const ProblemSpec spec{2, 2, 1.0, 1.0};
  const DiscreteTypes atom = single_atom(Eigen::Vector2d(1, 0));
  const OpponentField zero_field =
      build_field(TabularStrategy{atom.values, Eigen::RowVector2d::Zero()}, spec, TypeDistribution{atom}, SolverConfig{});

  CHECK(best_response(Eigen::Vector2d(0.4, 0.4), zero_field, spec, SolverConfig{}).votes.isZero());

  // a = (x, -x): 2x = s(2x)(1 - s(2x))
  const double x = bisect([](double t) { return 2 * t - sigmoid(2 * t) * (1 - sigmoid(2 * t)); }, 0.0, 0.5);
  CHECK(x == doctest::Approx(0.1231).epsilon(1e-3));
  const BestResponse br = best_response(Eigen::Vector2d(1, 0), zero_field, spec, SolverConfig{});
  CHECK(br.converged);
  CHECK(br.votes(0) == doctest::Approx(x).epsilon(1e-8));
  CHECK(br.votes(1) == doctest::Approx(-x).epsilon(1e-8));

  // homogeneity: (u, c) -> (2u, 2c)
  const ProblemSpec doubled{2, 2, 2.0, 2.0};
  const BestResponse br2 = best_response(Eigen::Vector2d(2, 0), zero_field, doubled, SolverConfig{});
  CHECK((br2.votes - br.votes).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("single-atom equilibrium matches the scalar fixed point") {
  const ProblemSpec spec{2, 2, 1.0, 1.0};
  const DiscreteTypes atom = single_atom(Eigen::Vector2d(1, 0));
  const EquilibriumResult eq = solve_equilibrium(spec, TypeDistribution{atom}, SolverConfig{});
  REQUIRE(eq.converged);
  // both agents vote (x, -x), so totals are (2x, -2x) and Q_1 = s(4x)
  const double x = bisect([](double t) { return 2 * t - sigmoid(4 * t) * (1 - sigmoid(4 * t)); }, 0.0, 0.5);
  CHECK(table(eq).votes(0, 0) == doctest::Approx(x).epsilon(1e-7));
  CHECK(table(eq).votes(0, 1) == doctest::Approx(-x).epsilon(1e-7));
  CHECK(eq.foc_residual <= 1e-8);
  CHECK(eq.field_kind == OpponentField::Kind::exact_multinomial);
}

TEST_CASE("equilibrium symmetries") {
  const ProblemSpec spec{3, 40, 1.0, 3.0};
  const DiscreteTypes d = three_two_zero_instance(0.55);
  const EquilibriumResult eq = solve_equilibrium(spec, TypeDistribution{d}, SolverConfig{});
  REQUIRE(eq.converged);
  CHECK(eq.foc_residual <= 1e-6);

  SUBCASE("relabeling alternatives relabels the equilibrium") {
    const Eigen::Vector3i perm(2, 0, 1); // new column j is old column perm(j)
    DiscreteTypes p = d;
    for (int j = 0; j < 3; ++j) p.values.col(j) = d.values.col(perm(j));
    const EquilibriumResult eqp = solve_equilibrium(spec, TypeDistribution{p}, SolverConfig{});
    REQUIRE(eqp.converged);
    for (int j = 0; j < 3; ++j)
      CHECK((table(eqp).votes.col(j) - table(eq).votes.col(perm(j))).cwiseAbs().maxCoeff() < 1e-6);
  }

  SUBCASE("scale equivalence") {
    for (double s : {0.5, 2.0, 3.0}) {
      DiscreteTypes scaled = d;
      scaled.values *= s;
      const EquilibriumResult eqs =
          solve_equilibrium(ProblemSpec{3, 40, s * spec.c, s * spec.u_max}, TypeDistribution{scaled}, SolverConfig{});
      REQUIRE(eqs.converged);
      CHECK((table(eqs).votes - table(eq).votes).cwiseAbs().maxCoeff() < 1e-9);
    }
  }

  SUBCASE("worker count does not change the answer") {
    SolverConfig many;
    many.workers = 4;
    const EquilibriumResult eq4 = solve_equilibrium(spec, TypeDistribution{d}, many);
    CHECK(table(eq4).votes == table(eq).votes);
    CHECK(eq4.pivotality == eq.pivotality);
  }
}

TEST_CASE("two-alternative equilibria are odd under value swaps") {
  const ProblemSpec spec{2, 5, 1.0, 1.0};
  const DiscreteTypes d = two_types(0.5, Eigen::Vector2d(1, 0.2), Eigen::Vector2d(0.2, 1));
  const EquilibriumResult eq = solve_equilibrium(spec, TypeDistribution{d}, SolverConfig{});
  REQUIRE(eq.converged);
  const Eigen::MatrixXd& v = table(eq).votes;
  CHECK(v(0, 0) == doctest::Approx(v(1, 1)).epsilon(1e-9));
  CHECK(v(0, 1) == doctest::Approx(v(1, 0)).epsilon(1e-9));
  CHECK(v(0, 0) == doctest::Approx(-v(0, 1)).epsilon(1e-9));
}

TEST_CASE("Monte Carlo pivotality agrees with exact enumeration") {
  const ProblemSpec spec{3, 60, 1.0, 3.0};
  const DiscreteTypes d = three_two_zero_instance(0.6);
  const TabularStrategy s{d.values, Eigen::MatrixXd{{0.05, 0.02, -0.07}, {-0.06, 0.01, 0.05}}};
  const OpponentField exact = build_field(s, spec, TypeDistribution{d}, SolverConfig{});
  const Eigen::Vector3d a(0.04, 0.0, -0.04);
  const Eigen::MatrixXd truth = estimate_rjk(a, exact);
  for (long n_mc : {1000L, 10000L, 100000L}) {
    SolverConfig mc;
    mc.exact_atom_cap = 1;
    mc.n_mc = n_mc;
    mc.seed = 99;
    const OpponentField field = build_field(s, spec, TypeDistribution{d}, mc);
    CHECK(field.kind == OpponentField::Kind::monte_carlo);
    const PivotalityEstimate est = estimate_rjk_with_se(a, field);
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k)
        if (j != k) CHECK(std::abs(est.mean(j, k) - truth(j, k)) <= 4 * est.se(j, k));
  }
}

TEST_CASE("forced non-convergence is reported") {
  SolverConfig one;
  one.max_outer = 1;
  const EquilibriumResult eq = solve_equilibrium(ProblemSpec{3, 100, 1.0, 3.0}, TypeDistribution{three_two_zero_instance(0.51)}, one);
  CHECK_FALSE(eq.converged);
  CHECK_FALSE(eq.message.empty());
}

TEST_CASE("contraction margin is positive for a large population") {
  const EquilibriumResult eq =
      solve_equilibrium(ProblemSpec{3, 300, 1.0, 3.0}, TypeDistribution{three_two_zero_instance(0.501)}, SolverConfig{});
  REQUIRE(eq.converged);
  CHECK(eq.contraction_margin > 0);
  CHECK(eq.foc_residual <= 1e-6);
}

TEST_CASE("linear pivotality for continuous types") {
  IndependentMarginals im;
  im.coordinates = {Marginal::uniform(0.2, 1.0), Marginal::uniform(0.0, 0.8), Marginal::beta_on(2, 2, 0, 1)};
  SolverConfig cfg;
  cfg.n_mc = 5000;
  cfg.seed = 3;
  const ProblemSpec spec{3, 50, 1.0, 1.0};
  const EquilibriumResult eq = solve_equilibrium(spec, TypeDistribution{im}, cfg);
  CHECK(eq.converged);
  const auto& pi = std::get<LinearPivotality>(eq.strategy).pi;
  CHECK(pi.isApprox(pi.transpose()));
  CHECK(pi.diagonal().isZero());
  CHECK((pi.array() >= 0).all());
  CHECK((pi.array() <= 1).all());
  CHECK(eq.foc_residual <= eq.foc_threshold);
  // induced votes stay in the box at the corners of the value cube
  for (int corner = 0; corner < 8; ++corner) {
    Eigen::Vector3d u;
    for (int j = 0; j < 3; ++j) u(j) = (corner >> j) & 1;
    CHECK(votes_for(eq.strategy, u, spec).cwiseAbs().maxCoeff() <= vote_box_bound(spec));
  }
}

TEST_CASE("beliefs") {
  const ProblemSpec spec{2, 20, 1.0, 1.0};
  const DiscreteTypes truth = two_types(0.6, Eigen::Vector2d(1, 0.2), Eigen::Vector2d(0.1, 0.9));
  const SimulationOptions sim{20000, 8, 2};

  SUBCASE("shared correct beliefs reproduce the plain equilibrium") {
    BeliefProfile bp{{BeliefGroup{1.0, TypeDistribution{truth}}}};
    const BeliefsResult r = solve_with_beliefs(spec, TypeDistribution{truth}, bp, SolverConfig{}, sim);
    const EquilibriumResult eq = solve_equilibrium(spec, TypeDistribution{truth}, SolverConfig{});
    CHECK(table(r.groups[0].equilibrium).votes == table(eq).votes);
    CHECK(r.converged);
  }

  SUBCASE("groups agreeing on the favourite do no worse than the weaker belief") {
    auto belief = [&](double p) { return TypeDistribution{two_types(p, truth.values.row(0).transpose(), truth.values.row(1).transpose())}; };
    const BeliefsResult lo = solve_with_beliefs(spec, TypeDistribution{truth}, BeliefProfile{{BeliefGroup{1.0, belief(0.7)}}}, SolverConfig{}, sim);
    const BeliefsResult hi = solve_with_beliefs(spec, TypeDistribution{truth}, BeliefProfile{{BeliefGroup{1.0, belief(0.9)}}}, SolverConfig{}, sim);
    const BeliefsResult mix = solve_with_beliefs(
        spec, TypeDistribution{truth}, BeliefProfile{{BeliefGroup{0.5, belief(0.7)}, BeliefGroup{0.5, belief(0.9)}}},
        SolverConfig{}, sim);
    CHECK(mix.groups.size() == 2);
    CHECK(mix.groups[0].size + mix.groups[1].size == 20);
    CHECK(mix.efficiency.expected_q(0) >= std::min(lo.efficiency.expected_q(0), hi.efficiency.expected_q(0)));
  }

  SUBCASE("true types outside a believed support are rejected") {
    const DiscreteTypes other = two_types(0.5, Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1));
    BeliefProfile bp{{BeliefGroup{1.0, TypeDistribution{other}}}};
    CHECK_THROWS_AS(solve_with_beliefs(spec, TypeDistribution{truth}, bp, SolverConfig{}, sim), std::invalid_argument);
  }
}
