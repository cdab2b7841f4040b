#include "qtm/diagnostics.hpp"

#include "qtm/parallel.hpp"
#include "qtm/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace qtm {

Population symmetric_population(const Strategy& strategy, int n) { return {PopulationGroup{n, strategy}}; }

namespace {

// Per-group vote lookup: by support index for discrete types, a linear map
// otherwise.
struct PreparedPopulation {
  std::vector<int> group_of_agent;
  std::vector<Eigen::MatrixXd> support_votes; // discrete: s x m per group
  std::vector<Eigen::MatrixXd> linear_maps;   // continuous: m x m per group
};

PreparedPopulation prepare(const Population& population, const ProblemSpec& spec, const TypeDistribution& dist) {
  PreparedPopulation p;
  int total = 0;
  for (std::size_t g = 0; g < population.size(); ++g) {
    if (population[g].size < 0) throw std::invalid_argument("population group size must be nonnegative");
    total += population[g].size;
    p.group_of_agent.insert(p.group_of_agent.end(), static_cast<std::size_t>(population[g].size), static_cast<int>(g));
  }
  if (total != spec.n) throw std::invalid_argument("population group sizes must add up to n");
  for (const auto& group : population) {
    if (const auto* d = std::get_if<DiscreteTypes>(&dist)) {
      Eigen::MatrixXd votes(d->values.rows(), spec.m);
      for (Eigen::Index t = 0; t < d->values.rows(); ++t)
        votes.row(t) = votes_for(group.strategy, d->values.row(t).transpose(), spec).transpose();
      p.support_votes.push_back(std::move(votes));
    } else {
      const auto* lin = std::get_if<LinearPivotality>(&group.strategy);
      if (!lin) throw std::invalid_argument("continuous types need a linear-pivotality strategy");
      p.linear_maps.push_back(linear_vote_map(lin->pi, spec.c));
    }
  }
  return p;
}

ProfileDraw draw_profile(const PreparedPopulation& pop, const ProblemSpec& spec, const TypeDistribution& dist,
                         std::uint64_t seed, long trial) {
  Rng rng = indexed_rng(seed, static_cast<std::uint64_t>(trial));
  ProfileDraw out;
  out.totals = VoteTotals::Zero(spec.m);
  if (const auto* d = std::get_if<DiscreteTypes>(&dist)) {
    const auto idx = sample_type_indices(*d, spec.n, rng);
    out.types.resize(spec.n, spec.m);
    for (int i = 0; i < spec.n; ++i) {
      const int t = idx[static_cast<std::size_t>(i)];
      out.types.row(i) = d->values.row(t);
      out.totals += pop.support_votes[static_cast<std::size_t>(pop.group_of_agent[static_cast<std::size_t>(i)])].row(t).transpose();
    }
  } else {
    out.types = sample_types(dist, spec.n, rng);
    for (int i = 0; i < spec.n; ++i)
      out.totals += pop.linear_maps[static_cast<std::size_t>(pop.group_of_agent[static_cast<std::size_t>(i)])] *
                    out.types.row(i).transpose();
  }
  out.probs = select_probs(out.totals);
  out.welfare = out.types.colwise().sum().transpose();
  out.utilitarian = static_cast<int>(argmax(out.welfare));
  out.drawn = static_cast<int>(draw_outcome(out.probs, rng));
  return out;
}

} // namespace

ProfileDraw simulate_profile(const Population& population, const ProblemSpec& spec, const TypeDistribution& dist,
                             std::uint64_t seed, long trial) {
  return draw_profile(prepare(population, spec, dist), spec, dist, seed, trial);
}

SimulatedProfiles simulate_profiles(const Population& population, const ProblemSpec& spec,
                                    const TypeDistribution& dist, const SimulationOptions& options) {
  if (options.trials < 0) throw std::invalid_argument("trials must be nonnegative");
  const PreparedPopulation pop = prepare(population, spec, dist);
  SimulatedProfiles sim;
  sim.totals.resize(options.trials, spec.m);
  sim.probs.resize(options.trials, spec.m);
  sim.welfare.resize(options.trials, spec.m);
  sim.utilitarian.resize(static_cast<std::size_t>(options.trials));
  sim.drawn.resize(static_cast<std::size_t>(options.trials));
  parallel_for(static_cast<std::size_t>(options.trials), options.workers, [&](std::size_t i) {
    const auto row = static_cast<Eigen::Index>(i);
    const ProfileDraw d = draw_profile(pop, spec, dist, options.seed, static_cast<long>(i));
    sim.totals.row(row) = d.totals.transpose();
    sim.probs.row(row) = d.probs.transpose();
    sim.welfare.row(row) = d.welfare.transpose();
    sim.utilitarian[i] = d.utilitarian;
    sim.drawn[i] = d.drawn;
  });
  return sim;
}

namespace {

// Smallest b on the 1e-3 grid with P(X <= 1 - b) <= b.
double concentration_level(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const double count = static_cast<double>(x.size());
  for (int k = 0; k <= 1000; ++k) {
    const double b = k / 1000.0;
    const double below = static_cast<double>(std::upper_bound(x.begin(), x.end(), 1.0 - b) - x.begin());
    if (below / count <= b) return b;
  }
  return 1.0;
}

} // namespace

Theorem1Check theorem1_check(const SimulatedProfiles& sim, const DistributionSummary& summary) {
  Theorem1Check out;
  out.winner_concentration = Eigen::VectorXd::Zero(kConcentrationGridPoints);
  if (!summary.assumption1_ok)
    out.warnings.push_back("alternative means are not distinct; no alternative is expected to concentrate");
  const long trials = sim.trials();
  if (trials == 0) return out;
  const int top = summary.sort_permutation.front();
  std::vector<double> q1(static_cast<std::size_t>(trials));
  std::vector<double> qmax(static_cast<std::size_t>(trials));
  for (long i = 0; i < trials; ++i) {
    q1[static_cast<std::size_t>(i)] = sim.probs(i, top);
    qmax[static_cast<std::size_t>(i)] = sim.probs.row(i).maxCoeff();
  }
  out.beta_estimate = concentration_level(q1);
  out.beta_se = std::sqrt(out.beta_estimate * (1.0 - out.beta_estimate) / static_cast<double>(trials));
  out.winner_epsilon = concentration_level(qmax);
  std::sort(qmax.begin(), qmax.end());
  for (int g = 0; g < kConcentrationGridPoints; ++g) {
    const double x = g / static_cast<double>(kConcentrationGridPoints - 1);
    out.winner_concentration(g) =
        static_cast<double>(std::upper_bound(qmax.begin(), qmax.end(), x) - qmax.begin()) / static_cast<double>(trials);
  }
  return out;
}

double extremes_bound(int m, int n, double delta, double u_max) {
  const double d = delta / u_max;
  return 1.0 - 2.0 * m * std::exp(-d * d * n / 32.0);
}

ExtremesCheck extremes_check(const SimulatedProfiles& sim, const DistributionSummary& summary, const ProblemSpec& spec) {
  ExtremesCheck out;
  out.bound = extremes_bound(spec.m, spec.n, summary.delta, spec.u_max);
  if (sim.trials() == 0) return out;
  const int top = summary.sort_permutation.front();
  const int bottom = summary.sort_permutation.back();
  long hits = 0;
  for (long i = 0; i < sim.trials(); ++i)
    if (sim.totals(i, bottom) < 0.0 && 0.0 < sim.totals(i, top)) ++hits;
  out.frequency = static_cast<double>(hits) / static_cast<double>(sim.trials());
  return out;
}

Lemma1Check lemma1_check(const EquilibriumResult& eq, const OpponentField& field, const ProblemSpec& spec,
                         int probe_count, std::uint64_t seed) {
  Lemma1Check out;
  out.band_hi = std::exp(16.0 / std::sqrt(spec.c));
  out.band_lo = 1.0 / out.band_hi;
  out.min_ratio = std::numeric_limits<double>::infinity();
  out.max_ratio = -std::numeric_limits<double>::infinity();
  const double bound = vote_box_bound(spec);
  for (int p = 0; p < probe_count; ++p) {
    Rng rng = indexed_rng(seed, static_cast<std::uint64_t>(p));
    std::uniform_real_distribution<double> box(-bound, bound);
    VoteVector a(spec.m);
    for (int j = 0; j < spec.m; ++j) a(j) = box(rng);
    const Eigen::MatrixXd r = estimate_rjk(a, field);
    for (int j = 0; j < spec.m; ++j)
      for (int k = 0; k < spec.m; ++k) {
        if (j == k) continue;
        const double ratio = r(j, k) / eq.pivotality(j, k);
        out.min_ratio = std::min(out.min_ratio, ratio);
        out.max_ratio = std::max(out.max_ratio, ratio);
      }
  }
  out.inside = probe_count == 0 || (out.min_ratio >= out.band_lo && out.max_ratio <= out.band_hi);
  return out;
}

double measured_delta_n(const EquilibriumResult& eq, const OpponentField& field, const Eigen::MatrixXd& probes,
                        const ProblemSpec& spec) {
  double worst = 0.0;
  for (Eigen::Index t = 0; t < probes.rows(); ++t) {
    const Eigen::MatrixXd r = estimate_rjk(votes_for(eq.strategy, probes.row(t).transpose(), spec), field);
    for (int j = 0; j < spec.m; ++j)
      for (int k = 0; k < spec.m; ++k)
        if (j != k) worst = std::max(worst, std::abs(r(j, k) / eq.pivotality(j, k) - 1.0));
  }
  return worst;
}

EfficiencyReport efficiency_report(const SimulatedProfiles& sim, const DistributionSummary& summary,
                                   const ProblemSpec& spec, const Eigen::MatrixXd* pivotality) {
  EfficiencyReport out;
  out.expected_q = Eigen::VectorXd::Zero(spec.m);
  const long trials = sim.trials();
  const int top = summary.sort_permutation.front();
  if (trials > 0) {
    double eff = 0.0, realized = 0.0, agreement = 0.0, conditioning = 0.0, w_qtm = 0.0, w_opt = 0.0;
    for (long i = 0; i < trials; ++i) {
      const int opt = sim.utilitarian[static_cast<std::size_t>(i)];
      eff += sim.probs(i, opt);
      realized += sim.drawn[static_cast<std::size_t>(i)] == opt ? 1.0 : 0.0;
      agreement += argmax(sim.probs.row(i)) == opt ? 1.0 : 0.0;
      conditioning += opt == top ? 1.0 : 0.0;
      w_qtm += sim.probs.row(i).dot(sim.welfare.row(i));
      w_opt += sim.welfare(i, opt);
    }
    const double t = static_cast<double>(trials);
    out.efficiency_prob = eff / t;
    out.realized_efficiency = realized / t;
    out.argmax_agreement = agreement / t;
    out.conditioning_prob = conditioning / t;
    out.welfare_qtm = w_qtm / t;
    out.welfare_opt = w_opt / t;
    out.expected_q = sim.probs.colwise().mean().transpose();
  }
  out.theta = std::numeric_limits<double>::quiet_NaN();
  out.xi = std::numeric_limits<double>::quiet_NaN();
  if (pivotality) {
    double theta = 0.0, xi = 0.0;
    for (int j = 0; j < spec.m; ++j)
      for (int k = 0; k < spec.m; ++k)
        if (j != k) theta = std::max(theta, (*pivotality)(j, k));
    for (int j = 0; j < spec.m; ++j)
      if (j != top) xi = std::max(xi, (*pivotality)(top, j));
    out.theta = spec.n * theta;
    out.xi = spec.n * xi;
  }
  return out;
}

namespace {

template <typename Derived>
int argmax_random_tie(const Eigen::MatrixBase<Derived>& v, Rng& rng) {
  const double best = v.maxCoeff();
  std::vector<int> ties;
  for (Eigen::Index k = 0; k < v.size(); ++k)
    if (v(k) == best) ties.push_back(static_cast<int>(k));
  if (ties.size() == 1) return ties.front();
  std::uniform_int_distribution<std::size_t> pick(0, ties.size() - 1);
  return ties[pick(rng)];
}

} // namespace

PluralityReport plurality_baseline(const ProblemSpec& spec, const TypeDistribution& dist, const SimulationOptions& options) {
  PluralityReport out;
  out.win_frequency = Eigen::VectorXd::Zero(spec.m);
  const auto trials = static_cast<std::size_t>(std::max(0L, options.trials));
  std::vector<int> winner(trials), optimum(trials);
  std::vector<double> welfare(trials);
  parallel_for(trials, options.workers, [&](std::size_t i) {
    Rng rng = indexed_rng(options.seed, i);
    const Eigen::MatrixXd types = sample_types(dist, spec.n, rng);
    Eigen::VectorXd ballots = Eigen::VectorXd::Zero(spec.m);
    for (int a = 0; a < spec.n; ++a) ballots(argmax_random_tie(types.row(a).transpose(), rng)) += 1.0;
    const Eigen::VectorXd w = types.colwise().sum().transpose();
    winner[i] = argmax_random_tie(ballots, rng);
    optimum[i] = static_cast<int>(argmax(w));
    welfare[i] = w(winner[i]);
  });
  if (trials == 0) return out;
  double eff = 0.0, total = 0.0;
  for (std::size_t i = 0; i < trials; ++i) {
    out.win_frequency(winner[i]) += 1.0;
    eff += winner[i] == optimum[i] ? 1.0 : 0.0;
    total += welfare[i];
  }
  const double t = static_cast<double>(trials);
  out.win_frequency /= t;
  out.efficiency_prob = eff / t;
  out.welfare = total / t;
  return out;
}

VoteBoundsCheck vote_bounds_check(const SimulatedProfiles& sim, const DistributionSummary& summary,
                                  const ProblemSpec& spec, const Eigen::MatrixXd& pivotality, double delta_n,
                                  double epsilon) {
  const double delta = summary.delta;
  if (!(delta > 0.0)) throw std::invalid_argument("vote bounds need strictly ordered means");
  if (!(epsilon > 0.0) || epsilon > delta / 4.0 + 1e-15)
    throw std::invalid_argument("epsilon must lie in (0, Delta/4]");
  VoteBoundsCheck out;
  out.epsilon = epsilon;
  out.delta_n = delta_n;
  const double e = epsilon / spec.u_max;
  out.cap = 2.0 * spec.m * std::exp(-2.0 * spec.n * e * e);
  out.vacuous = out.cap >= 1.0;

  const int m = spec.m;
  const auto& perm = summary.sort_permutation;
  const double shrink = 1.0 - 3.0 * delta_n / delta;
  const double grow = 1.0 + 5.0 * delta_n / delta;
  Eigen::VectorXd upper = Eigen::VectorXd::Zero(m), lower = Eigen::VectorXd::Zero(m);
  for (int r = 0; r < m; ++r) {
    const int j = perm[static_cast<std::size_t>(r)];
    for (int q = 0; q < m; ++q) {
      if (q == r) continue;
      const int k = perm[static_cast<std::size_t>(q)];
      const double gap = summary.means(j) - summary.means(k);
      const double piv = pivotality(j, k);
      if (q < r) {
        upper(r) += shrink * (gap + 2.0 * epsilon) * piv;
        lower(r) += grow * (gap - 2.0 * epsilon) * piv;
      } else {
        upper(r) += grow * (gap + 2.0 * epsilon) * piv;
        lower(r) += shrink * (gap - 2.0 * epsilon) * piv;
      }
    }
  }
  long violations = 0;
  for (long i = 0; i < sim.trials(); ++i) {
    bool ok = true;
    for (int r = 0; r < m && ok; ++r) {
      const double scaled = 2.0 * spec.c * sim.totals(i, perm[static_cast<std::size_t>(r)]) / spec.n;
      ok = lower(r) <= scaled && scaled <= upper(r);
    }
    if (!ok) ++violations;
  }
  if (sim.trials() > 0) out.violation_frequency = static_cast<double>(violations) / static_cast<double>(sim.trials());
  return out;
}

void DiagnosticsConfig::validate() const {
  if (trials < 0) throw std::invalid_argument("diagnostics.trials must be nonnegative");
  if (probe_count < 0) throw std::invalid_argument("diagnostics.probe_count must be nonnegative");
  if (epsilon && !(*epsilon > 0.0)) throw std::invalid_argument("diagnostics.epsilon must be positive");
}

namespace {

void sampling_diagnostics(DiagnosticsReport& report, const SimulatedProfiles& sim, const ProblemSpec& spec, const TypeDistribution& dist, const DiagnosticsConfig& config,
                          const Eigen::MatrixXd* pivotality, std::uint64_t seed, int workers) {
  report.theorem1 = theorem1_check(sim, report.summary);
  report.extremes = extremes_check(sim, report.summary, spec);
  report.efficiency = efficiency_report(sim, report.summary, spec, pivotality);
  report.plurality = plurality_baseline(spec, dist, SimulationOptions{config.trials, derive_seed(seed, "plurality"), workers});
}

DiagnosticsReport start_report(const ProblemSpec& spec, const TypeDistribution& dist) {
  DiagnosticsReport report;
  report.summary = summarize(dist, spec.u_max);
  if (!report.summary.assumption1_ok) report.warnings.push_back("alternative means are not strictly ordered");
  for (std::size_t j = 0; j < report.summary.assumption2.size(); ++j)
    if (!report.summary.assumption2[j].pass)
      report.warnings.push_back("alternative " + std::to_string(j) + " axis condition: " +
                                report.summary.assumption2[j].explanation);
  return report;
}

} // namespace

DiagnosticsReport diagnose_population(const Population& population, const ProblemSpec& spec,
                                      const TypeDistribution& dist, const DiagnosticsConfig& config,
                                      std::uint64_t seed, int workers) {
  config.validate();
  DiagnosticsReport report = start_report(spec, dist);
  const SimulatedProfiles sim =
      simulate_profiles(population, spec, dist, SimulationOptions{config.trials, derive_seed(seed, "profiles"), workers});
  sampling_diagnostics(report, sim, spec, dist, config, nullptr, seed, workers);
  return report;
}

DiagnosticsReport diagnose(const EquilibriumResult& eq, const ProblemSpec& spec, const TypeDistribution& dist,
                           const DiagnosticsConfig& config, const SolverConfig& solver, std::uint64_t seed, int workers) {
  config.validate();
  DiagnosticsReport report = start_report(spec, dist);
  report.pivotality = eq.pivotality;
  report.pivotality_se = eq.pivotality_se;
  if (!eq.converged) report.warnings.insert(report.warnings.begin(), "equilibrium did not converge: " + eq.message);

  const Population population = symmetric_population(eq.strategy, spec.n);
  const SimulatedProfiles sim =
      simulate_profiles(population, spec, dist, SimulationOptions{config.trials, derive_seed(seed, "profiles"), workers});
  sampling_diagnostics(report, sim, spec, dist, config, &eq.pivotality, seed, workers);

  SolverConfig field_config = solver;
  field_config.workers = workers;
  const OpponentField field = build_field(eq.strategy, spec, dist, field_config);
  report.lemma1 = lemma1_check(eq, field, spec, config.probe_count, derive_seed(seed, "lemma1"));
  const double delta_n = measured_delta_n(eq, field, probe_types(dist, solver), spec);
  if (report.summary.assumption1_ok) {
    const double eps = config.epsilon.value_or(report.summary.delta / 8.0);
    report.vote_bounds = vote_bounds_check(sim, report.summary, spec, eq.pivotality, delta_n, eps);
  }
  return report;
}

} // namespace qtm
