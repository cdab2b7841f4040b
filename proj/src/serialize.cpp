#include "qtm/serialize.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

namespace qtm {

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }
std::string join(const std::string& path, std::size_t index) { return path + "[" + std::to_string(index) + "]"; }

double number_at(const Json& j, const std::string& path) {
  if (j.is_number()) return j.get<double>();
  // non-finite numbers are written as strings
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  throw ConfigError(path + " must be a number");
}

long long integer_at(const Json& j, const std::string& path) {
  if (j.is_number_integer()) return j.get<long long>();
  if (j.is_number_float()) {
    const double x = j.get<double>();
    if (std::isfinite(x) && x == std::floor(x) && std::abs(x) < 9e15) return static_cast<long long>(x);
  }
  throw ConfigError(path + " must be an integer");
}

// Reads the members of one JSON object and rejects keys nobody asked for.
class Fields {
public:
  Fields(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError((path_.empty() ? std::string("config") : path_) + " must be an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const Json& at(const std::string& key) {
    if (!has(key)) throw ConfigError(join(path_, key) + " is required");
    return j_.at(key);
  }
  std::string path(const std::string& key) const { return join(path_, key); }

  double number(const std::string& key) { return number_at(at(key), path(key)); }
  double number(const std::string& key, double fallback) { return has(key) ? number(key) : fallback; }
  long long integer(const std::string& key) { return integer_at(at(key), path(key)); }
  long long integer(const std::string& key, long long fallback) { return has(key) ? integer(key) : fallback; }
  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    if (!j_.at(key).is_boolean()) throw ConfigError(path(key) + " must be a boolean");
    return j_.at(key).get<bool>();
  }
  std::string string(const std::string& key) {
    const Json& v = at(key);
    if (!v.is_string()) throw ConfigError(path(key) + " must be a string");
    return v.get<std::string>();
  }
  std::string string(const std::string& key, const std::string& fallback) { return has(key) ? string(key) : fallback; }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError(join(path_, item.key()) + " is not a recognized field");
  }

private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Fn>
auto rethrow_as_config_error(Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

Json number_json(double x) { return std::isfinite(x) ? Json(x) : Json(format_number(x)); }

} // namespace

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return Json(x).dump();
}

Json matrix_to_json(const Eigen::MatrixXd& x) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < x.cols(); ++c) row.push_back(number_json(x(r, c)));
    rows.push_back(std::move(row));
  }
  return rows;
}

Json vector_to_json(const Eigen::VectorXd& x) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < x.size(); ++i) out.push_back(number_json(x(i)));
  return out;
}

Eigen::VectorXd vector_from_json(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path + " must be an array of numbers");
  Eigen::VectorXd out(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) out(static_cast<Eigen::Index>(i)) = number_at(j[i], join(path, i));
  return out;
}

Eigen::MatrixXd matrix_from_json(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path + " must be an array of rows");
  if (j.empty()) return Eigen::MatrixXd(0, 0);
  const Eigen::VectorXd first = vector_from_json(j[0], join(path, std::size_t{0}));
  Eigen::MatrixXd out(static_cast<Eigen::Index>(j.size()), first.size());
  for (std::size_t r = 0; r < j.size(); ++r) {
    const Eigen::VectorXd row = vector_from_json(j[r], join(path, r));
    if (row.size() != first.size()) throw ConfigError(join(path, r) + " has a different length than the first row");
    out.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return out;
}

Json to_json(const ProblemSpec& spec) { return {{"m", spec.m}, {"n", spec.n}, {"c", spec.c}, {"u_max", spec.u_max}}; }

ProblemSpec problem_from_json(const Json& j, const std::string& path) {
  Fields f(j, path);
  ProblemSpec spec;
  spec.m = static_cast<int>(f.integer("m"));
  spec.n = static_cast<int>(f.integer("n"));
  spec.c = f.number("c");
  spec.u_max = f.number("u_max", 1.0);
  f.finish();
  rethrow_as_config_error([&] { spec.validate(); });
  return spec;
}

namespace {

Json marginal_to_json(const Marginal& m) {
  switch (m.kind) {
  case Marginal::Kind::uniform: return {{"kind", "uniform"}, {"lo", m.lo}, {"hi", m.hi}};
  case Marginal::Kind::beta:
    return {{"kind", "beta"}, {"alpha", m.alpha}, {"beta", m.beta}, {"lo", m.lo}, {"hi", m.hi}};
  case Marginal::Kind::point: return {{"kind", "point"}, {"value", m.value}};
  }
  return {};
}

Marginal marginal_from_json(const Json& j, const std::string& path) {
  Fields f(j, path);
  const std::string kind = f.string("kind");
  Marginal m;
  if (kind == "uniform") {
    m.kind = Marginal::Kind::uniform;
    m.lo = f.number("lo");
    m.hi = f.number("hi");
  } else if (kind == "beta") {
    m.kind = Marginal::Kind::beta;
    m.alpha = f.number("alpha");
    m.beta = f.number("beta");
    m.lo = f.number("lo", 0.0);
    m.hi = f.number("hi", 1.0);
  } else if (kind == "point") {
    m.kind = Marginal::Kind::point;
    m.value = f.number("value");
  } else {
    throw ConfigError(f.path("kind") + " must be one of uniform, beta, point");
  }
  f.finish();
  return m;
}

} // namespace

Json to_json(const TypeDistribution& dist) {
  if (const auto* d = std::get_if<DiscreteTypes>(&dist)) {
    Json support = Json::array();
    for (Eigen::Index t = 0; t < d->values.rows(); ++t)
      support.push_back({{"p", d->probabilities(t)}, {"u", vector_to_json(d->values.row(t).transpose())}});
    return {{"type", "discrete"}, {"support", support}};
  }
  Json marginals = Json::array();
  for (const auto& m : std::get<IndependentMarginals>(dist).coordinates) marginals.push_back(marginal_to_json(m));
  return {{"type", "independent"}, {"marginals", marginals}};
}

TypeDistribution distribution_from_json(const Json& j, const std::string& path) {
  Fields f(j, path);
  const std::string type = f.string("type");
  TypeDistribution out;
  if (type == "discrete") {
    const Json& support = f.at("support");
    const std::string spath = f.path("support");
    if (!support.is_array() || support.empty()) throw ConfigError(spath + " must be a nonempty array");
    DiscreteTypes d;
    d.probabilities.resize(static_cast<Eigen::Index>(support.size()));
    for (std::size_t t = 0; t < support.size(); ++t) {
      Fields atom(support[t], join(spath, t));
      d.probabilities(static_cast<Eigen::Index>(t)) = atom.number("p");
      const Eigen::VectorXd u = vector_from_json(atom.at("u"), atom.path("u"));
      if (t == 0) d.values.resize(static_cast<Eigen::Index>(support.size()), u.size());
      if (u.size() != d.values.cols()) throw ConfigError(atom.path("u") + " has the wrong length");
      d.values.row(static_cast<Eigen::Index>(t)) = u.transpose();
      atom.finish();
    }
    out = std::move(d);
  } else if (type == "independent") {
    const Json& marginals = f.at("marginals");
    if (!marginals.is_array() || marginals.empty()) throw ConfigError(f.path("marginals") + " must be a nonempty array");
    IndependentMarginals im;
    for (std::size_t k = 0; k < marginals.size(); ++k)
      im.coordinates.push_back(marginal_from_json(marginals[k], join(f.path("marginals"), k)));
    out = std::move(im);
  } else {
    throw ConfigError(f.path("type") + " must be discrete or independent");
  }
  f.finish();
  return out;
}

Json to_json(const BeliefProfile& beliefs) {
  Json groups = Json::array();
  for (const auto& g : beliefs.groups) groups.push_back({{"fraction", g.fraction}, {"distribution", to_json(g.belief)}});
  return {{"groups", groups}};
}

BeliefProfile beliefs_from_json(const Json& j, const std::string& path) {
  Fields f(j, path);
  const Json& groups = f.at("groups");
  if (!groups.is_array() || groups.empty()) throw ConfigError(f.path("groups") + " must be a nonempty array");
  BeliefProfile out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    Fields gf(groups[g], join(f.path("groups"), g));
    BeliefGroup group;
    group.fraction = gf.number("fraction");
    group.belief = distribution_from_json(gf.at("distribution"), gf.path("distribution"));
    gf.finish();
    out.groups.push_back(std::move(group));
  }
  f.finish();
  return out;
}

Json to_json(const SolverConfig& c) {
  return {{"damping", c.damping},         {"inner_tol", c.inner_tol},       {"outer_tol", c.outer_tol},
          {"foc_tol", c.foc_tol},         {"linear_foc_tol", c.linear_foc_tol}, {"max_inner", c.max_inner},
          {"max_outer", c.max_outer},     {"max_halvings", c.max_halvings}, {"n_mc", c.n_mc},
          {"exact_atom_cap", c.exact_atom_cap}, {"field_refresh", c.field_refresh}, {"probe_types", c.probe_types}};
}

SolverConfig solver_from_json(const Json& j, const std::string& path) {
  SolverConfig c;
  if (j.is_null()) return c;
  Fields f(j, path);
  c.damping = f.number("damping", c.damping);
  c.inner_tol = f.number("inner_tol", c.inner_tol);
  c.outer_tol = f.number("outer_tol", c.outer_tol);
  c.foc_tol = f.number("foc_tol", c.foc_tol);
  c.linear_foc_tol = f.number("linear_foc_tol", c.linear_foc_tol);
  c.max_inner = static_cast<int>(f.integer("max_inner", c.max_inner));
  c.max_outer = static_cast<int>(f.integer("max_outer", c.max_outer));
  c.max_halvings = static_cast<int>(f.integer("max_halvings", c.max_halvings));
  c.n_mc = static_cast<long>(f.integer("n_mc", c.n_mc));
  c.exact_atom_cap = f.number("exact_atom_cap", c.exact_atom_cap);
  c.field_refresh = f.boolean("field_refresh", c.field_refresh);
  c.probe_types = static_cast<int>(f.integer("probe_types", c.probe_types));
  f.has("warm_start"); // a path; resolved by the experiment layer
  f.finish();
  rethrow_as_config_error([&] { c.validate(); });
  return c;
}

Json to_json(const DiagnosticsConfig& c) {
  return {{"trials", c.trials}, {"probe_count", c.probe_count}, {"epsilon", c.epsilon ? Json(*c.epsilon) : Json(nullptr)}};
}

DiagnosticsConfig diagnostics_from_json(const Json& j, const std::string& path) {
  DiagnosticsConfig c;
  if (j.is_null()) return c;
  Fields f(j, path);
  c.trials = static_cast<long>(f.integer("trials", c.trials));
  c.probe_count = static_cast<int>(f.integer("probe_count", c.probe_count));
  if (f.has("epsilon") && !j.at("epsilon").is_null()) c.epsilon = f.number("epsilon");
  f.finish();
  rethrow_as_config_error([&] { c.validate(); });
  return c;
}

Json to_json(const OracleConfig& c) {
  return {{"grid_points_per_axis", c.grid_points_per_axis},
          {"refinement_rounds", c.refinement_rounds},
          {"enumeration_cap", c.enumeration_cap},
          {"max_iterations", c.max_iterations}};
}

OracleConfig oracle_config_from_json(const Json& j, const std::string& path) {
  OracleConfig c;
  if (j.is_null()) return c;
  Fields f(j, path);
  c.grid_points_per_axis = static_cast<int>(f.integer("grid_points_per_axis", c.grid_points_per_axis));
  c.refinement_rounds = static_cast<int>(f.integer("refinement_rounds", c.refinement_rounds));
  c.enumeration_cap = f.number("enumeration_cap", c.enumeration_cap);
  c.max_iterations = static_cast<int>(f.integer("max_iterations", c.max_iterations));
  f.finish();
  rethrow_as_config_error([&] { c.validate(); });
  return c;
}

Json to_json(const Strategy& strategy) {
  if (const auto* t = std::get_if<TabularStrategy>(&strategy))
    return {{"representation", "tabular"}, {"types", matrix_to_json(t->types)}, {"votes", matrix_to_json(t->votes)}};
  return {{"representation", "linear_pivotality"}, {"pi", matrix_to_json(std::get<LinearPivotality>(strategy).pi)}};
}

Strategy strategy_from_json(const Json& j, const std::string& path) {
  Fields f(j, path);
  const std::string rep = f.string("representation");
  Strategy out;
  if (rep == "tabular") {
    TabularStrategy t;
    t.types = matrix_from_json(f.at("types"), f.path("types"));
    t.votes = matrix_from_json(f.at("votes"), f.path("votes"));
    if (t.types.rows() != t.votes.rows() || t.types.cols() != t.votes.cols())
      throw ConfigError(path + " types and votes differ in shape");
    out = std::move(t);
  } else if (rep == "linear_pivotality") {
    out = LinearPivotality{matrix_from_json(f.at("pi"), f.path("pi"))};
  } else {
    throw ConfigError(f.path("representation") + " must be tabular or linear_pivotality");
  }
  f.finish();
  return out;
}

Json to_json(const DistributionSummary& s) {
  Json a2 = Json::array();
  for (const auto& v : s.assumption2) a2.push_back({{"pass", v.pass}, {"explanation", v.explanation}});
  return {{"means", vector_to_json(s.means)},
          {"delta", number_json(s.delta)},
          {"sort_permutation", s.sort_permutation},
          {"assumption1_ok", s.assumption1_ok},
          {"assumption2", a2}};
}

namespace {

const char* field_kind_name(OpponentField::Kind kind) {
  return kind == OpponentField::Kind::exact_multinomial ? "exact_multinomial" : "monte_carlo";
}

} // namespace

Json to_json(const EquilibriumResult& r) {
  return {{"strategy", to_json(r.strategy)},
          {"pivotality", matrix_to_json(r.pivotality)},
          {"pivotality_se", matrix_to_json(r.pivotality_se)},
          {"foc_residual", number_json(r.foc_residual)},
          {"foc_threshold", number_json(r.foc_threshold)},
          {"outer_iterations", r.outer_iterations},
          {"converged", r.converged},
          {"final_damping", r.final_damping},
          {"contraction_margin", number_json(r.contraction_margin)},
          {"field_kind", field_kind_name(r.field_kind)},
          {"field_atoms", r.field_atoms},
          {"message", r.message}};
}

EquilibriumResult equilibrium_from_json(const Json& j, const std::string& path) {
  Fields f(j, path);
  EquilibriumResult r;
  r.strategy = strategy_from_json(f.at("strategy"), f.path("strategy"));
  r.pivotality = matrix_from_json(f.at("pivotality"), f.path("pivotality"));
  r.pivotality_se = matrix_from_json(f.at("pivotality_se"), f.path("pivotality_se"));
  r.foc_residual = f.number("foc_residual");
  r.foc_threshold = f.number("foc_threshold");
  r.outer_iterations = static_cast<int>(f.integer("outer_iterations"));
  const Json& conv = f.at("converged");
  if (!conv.is_boolean()) throw ConfigError(f.path("converged") + " must be a boolean");
  r.converged = conv.get<bool>();
  r.final_damping = f.number("final_damping");
  r.contraction_margin = f.number("contraction_margin");
  const std::string kind = f.string("field_kind");
  if (kind != "exact_multinomial" && kind != "monte_carlo")
    throw ConfigError(f.path("field_kind") + " must be exact_multinomial or monte_carlo");
  r.field_kind = kind == "exact_multinomial" ? OpponentField::Kind::exact_multinomial : OpponentField::Kind::monte_carlo;
  r.field_atoms = static_cast<Eigen::Index>(f.integer("field_atoms"));
  r.message = f.string("message", "");
  f.finish();
  return r;
}

Json to_json(const DiagnosticsReport& r) {
  Json out;
  out["summary"] = to_json(r.summary);
  out["pivotality"] = matrix_to_json(r.pivotality);
  out["pivotality_se"] = matrix_to_json(r.pivotality_se);
  out["theorem1"] = {{"beta_estimate", r.theorem1.beta_estimate},
                     {"beta_se", r.theorem1.beta_se},
                     {"winner_epsilon", r.theorem1.winner_epsilon},
                     {"winner_concentration", vector_to_json(r.theorem1.winner_concentration)},
                     {"warnings", r.theorem1.warnings}};
  out["extremes"] = {{"frequency", r.extremes.frequency}, {"bound", r.extremes.bound}};
  out["lemma1"] = r.lemma1 ? Json{{"min_ratio", number_json(r.lemma1->min_ratio)},
                                  {"max_ratio", number_json(r.lemma1->max_ratio)},
                                  {"band_lo", r.lemma1->band_lo},
                                  {"band_hi", r.lemma1->band_hi},
                                  {"inside", r.lemma1->inside}}
                           : Json(nullptr);
  const auto& e = r.efficiency;
  out["efficiency"] = {{"efficiency_prob", e.efficiency_prob},
                       {"realized_efficiency", e.realized_efficiency},
                       {"argmax_agreement", e.argmax_agreement},
                       {"conditioning_prob", e.conditioning_prob},
                       {"expected_q", vector_to_json(e.expected_q)},
                       {"welfare_qtm", e.welfare_qtm},
                       {"welfare_opt", e.welfare_opt},
                       {"theta", number_json(e.theta)},
                       {"xi", number_json(e.xi)}};
  out["plurality"] = {{"efficiency_prob", r.plurality.efficiency_prob},
                      {"win_frequency", vector_to_json(r.plurality.win_frequency)},
                      {"welfare", r.plurality.welfare}};
  out["vote_bounds"] = r.vote_bounds ? Json{{"epsilon", r.vote_bounds->epsilon},
                                            {"delta_n", r.vote_bounds->delta_n},
                                            {"violation_frequency", r.vote_bounds->violation_frequency},
                                            {"cap", r.vote_bounds->cap},
                                            {"vacuous", r.vote_bounds->vacuous}}
                                     : Json(nullptr);
  out["warnings"] = r.warnings;
  return out;
}

Json to_json(const BeliefsResult& r) {
  Json groups = Json::array();
  for (const auto& g : r.groups)
    groups.push_back({{"fraction", g.fraction}, {"size", g.size}, {"equilibrium", to_json(g.equilibrium)}});
  return {{"groups", groups},
          {"converged", r.converged},
          {"true_summary", to_json(r.true_summary)},
          {"expected_q", vector_to_json(r.efficiency.expected_q)},
          {"win_frequency", vector_to_json(r.win_frequency)},
          {"efficiency_prob", r.efficiency.efficiency_prob},
          {"realized_efficiency", r.efficiency.realized_efficiency},
          {"welfare_qtm", r.efficiency.welfare_qtm},
          {"welfare_opt", r.efficiency.welfare_opt}};
}

Json to_json(const OracleEquilibrium& o) {
  return {{"strategy", to_json(Strategy{o.strategy})},
          {"iterations", o.iterations},
          {"converged", o.converged},
          {"cycling", o.cycling},
          {"last_change", o.last_change},
          {"resolution", o.resolution}};
}

Json to_json(const OutcomeDistribution& o) {
  return {{"expected_q", vector_to_json(o.expected_q)},
          {"argmax_agreement", o.argmax_agreement},
          {"efficiency_prob", o.efficiency_prob},
          {"total_weight", o.total_weight}};
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << contents;
    out.flush();
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  fs::rename(tmp, target);
}

} // namespace qtm
