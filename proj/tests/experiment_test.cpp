#include "qtm/experiment.hpp"

#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

using namespace qtm;
namespace fs = std::filesystem;

namespace {

// Fresh directory per test case, removed on scope exit.
class Scratch {
public:
  Scratch() {
    static std::atomic<int> counter{0};
    dir_ = fs::temp_directory_path() /
           ("qtm_experiment_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(dir_, ec);
  }
  fs::path operator/(const std::string& name) const { return dir_ / name; }

  // Writes the config with output_dir pointing inside the scratch directory.
  std::string config(Json j, const std::string& name = "config.json", const std::string& out = "out") const {
    j["output_dir"] = (dir_ / out).string();
    const fs::path path = dir_ / name;
    std::ofstream(path) << j.dump(2);
    return path.string();
  }

private:
  fs::path dir_;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "qtm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

Json small_binary(double p = 0.7) {
  return Json::parse(R"({
    "instance_id": "binary",
    "problem": {"m": 2, "n": 5, "c": 1.0, "u_max": 1.0},
    "distribution": {"type": "discrete", "support": [
      {"p": 0.7, "u": [1.0, 0.2]},
      {"p": 0.3, "u": [0.1, 0.9]}]},
    "diagnostics": {"trials": 2000, "probe_count": 8},
    "seed": 17
  })")
      .patch(Json::array({{{"op", "replace"}, {"path", "/distribution/support/0/p"}, {"value", p}},
                          {{"op", "replace"}, {"path", "/distribution/support/1/p"}, {"value", 1.0 - p}}}));
}

std::vector<std::string> data_lines(const std::string& csv) {
  std::vector<std::string> rows;
  std::istringstream in(csv);
  for (std::string line; std::getline(in, line);)
    if (!line.empty() && line[0] != '#') rows.push_back(line);
  return rows;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::istringstream in(line);
  for (std::string cell; std::getline(in, cell, ',');) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

} // namespace

TEST_CASE("config parsing") {
  const Json good = small_binary();
  const ExperimentConfig config = parse_config(good);
  CHECK(config.problem.n == 5);
  CHECK(config.seed == 17);
  CHECK(config.diagnostics.trials == 2000);
  CHECK(!config.beliefs);
  CHECK(parse_config(resolved_config(config)).seed == 17);
  CHECK(config_hash(parse_config(resolved_config(config))) == config_hash(config));

  auto rejects = [&](Json j, const std::string& field) {
    try {
      parse_config(j);
      FAIL("accepted an invalid config; expected an error naming " << field);
    } catch (const ConfigError& e) {
      CHECK_MESSAGE(std::string(e.what()).find(field) != std::string::npos, e.what());
    }
  };
  Json j = good;
  j["problem"]["c"] = 0.0;
  rejects(j, "problem.c");
  j = good;
  j["problem"]["c"] = -1.0;
  rejects(j, "problem.c");
  j = good;
  j["problme"] = 1;
  rejects(j, "problme");
  j = good;
  j["solver"] = {{"dampng", 0.5}};
  rejects(j, "solver.dampng");
  j = good;
  j["distribution"]["support"][0]["u"] = {1.0, 2.0};
  rejects(j, "distribution");
  j = good;
  j["distribution"]["support"][1]["u"] = {0.1, 0.9, 0.3};
  rejects(j, "distribution.support[1].u");
  j = good;
  j["seed"] = -3;
  rejects(j, "seed");
  j = good;
  j["sweep"] = {{"c", {1.0, 0.0}}};
  rejects(j, "sweep.c");
  j = good;
  j.erase("problem");
  rejects(j, "problem");
}

TEST_CASE("cell seeds") {
  CHECK(cell_seed(1, 300, 1.0) == cell_seed(1, 300, 1.0));
  CHECK(cell_seed(1, 300, 1.0) != cell_seed(1, 300, 2.0));
  CHECK(cell_seed(1, 300, 1.0) != cell_seed(1, 301, 1.0));
  CHECK(cell_seed(1, 300, 1.0) != cell_seed(2, 300, 1.0));
}

TEST_CASE("cli exit codes for bad input") {
  Scratch scratch;
  CHECK(cli({"solve", "--config", (scratch / "missing.json").string()}).code == kExitConfigError);
  std::ofstream(scratch / "broken.json") << "{ not json";
  const Run broken = cli({"solve", "--config", (scratch / "broken.json").string()});
  CHECK(broken.code == kExitConfigError);
  CHECK(broken.err.find("not valid JSON") != std::string::npos);

  Json j = small_binary();
  j["problem"]["c"] = 0;
  const Run bad = cli({"solve", "--config", scratch.config(j)});
  CHECK(bad.code == kExitConfigError);
  CHECK(bad.err.find("problem.c") != std::string::npos);
  CHECK(!fs::exists(scratch / "out" / "result.json"));

  CHECK(cli({"solve"}).code == kExitConfigError);
  CHECK(cli({"frobnicate", "--config", scratch.config(small_binary())}).code == kExitConfigError);
  CHECK(cli({"solve", "--config", scratch.config(small_binary()), "--workers", "0"}).code == kExitConfigError);
  CHECK(cli({"sweep", "--config", scratch.config(small_binary())}).code == kExitConfigError); // no sweep block
}

TEST_CASE("solve then diagnose") {
  Scratch scratch;
  const std::string path = scratch.config(small_binary());
  const Run solved = cli({"solve", "--config", path});
  REQUIRE(solved.code == kExitOk);
  const Json result = Json::parse(slurp(scratch / "out" / "result.json"));
  CHECK(result.at("tool") == "qtm");
  CHECK(result.at("command") == "solve");
  CHECK(result.at("config_hash") == config_hash(load_config(path)));
  CHECK(result.at("result").at("converged") == true);
  CHECK(result.at("result").at("foc_residual").get<double>() <= 1e-6);
  const Json& strategy = result.at("result").at("strategy");
  CHECK(strategy.at("representation") == "tabular");
  CHECK(strategy.at("votes").size() == 2);
  CHECK(strategy.at("votes")[0].size() == 2);
  CHECK(result.at("beliefs").is_null());

  const Run diagnosed = cli({"diagnose", "--config", path});
  REQUIRE(diagnosed.code == kExitOk);
  const Json report = Json::parse(slurp(scratch / "out" / "report.json"));
  CHECK(report.at("status") == "ok");
  const double eff = report.at("report").at("efficiency").at("efficiency_prob").get<double>();
  CHECK(eff > 0.5);
  CHECK(eff <= 1.0);

  const std::string csv = slurp(scratch / "out" / "report.csv");
  CHECK(csv.rfind("# qtm ", 0) == 0);
  const auto rows = data_lines(csv);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == kReportCsvHeader);
  const auto cells = split(rows[1]);
  REQUIRE(cells.size() == split(kReportCsvHeader).size());
  CHECK(cells[0] == "binary");
  CHECK(cells[1] == "5");
  CHECK(cells[2] == "2");
  CHECK(cells[4] == "17");
  CHECK(cells[5] == "true");
  CHECK(cells.back() == "ok");
}

TEST_CASE("diagnose rejects results from another config") {
  Scratch scratch;
  const std::string path = scratch.config(small_binary());
  REQUIRE(cli({"solve", "--config", path}).code == kExitOk);
  // --seed changes the resolved config and therefore its hash
  const Run other_seed = cli({"diagnose", "--config", path, "--seed", "18"});
  CHECK(other_seed.code == kExitConfigError);
  CHECK(other_seed.err.find("hash") != std::string::npos);

  const std::string changed = scratch.config(small_binary(0.6), "changed.json");
  CHECK(cli({"diagnose", "--config", changed, "--result", (scratch / "out" / "result.json").string()}).code ==
        kExitConfigError);
  CHECK(cli({"diagnose", "--config", path, "--result", (scratch / "nowhere.json").string()}).code == kExitConfigError);
}

TEST_CASE("non-convergence exits with 2 and still writes the result") {
  Scratch scratch;
  Json j = small_binary();
  j["solver"] = {{"max_outer", 1}};
  const Run r = cli({"solve", "--config", scratch.config(j)});
  CHECK(r.code == kExitNotConverged);
  const Json result = Json::parse(slurp(scratch / "out" / "result.json"));
  CHECK(result.at("result").at("converged") == false);
  CHECK(result.at("result").at("message") == "max_outer reached");
}

TEST_CASE("outputs are byte-identical across repeats and worker counts") {
  Scratch scratch;
  const Json j = small_binary();
  std::vector<std::string> results, reports, csvs;
  for (int workers : {1, 4, 1}) {
    const std::string out = "out" + std::to_string(results.size());
    const std::string path = scratch.config(j, out + ".json", out);
    REQUIRE(cli({"solve", "--config", path, "--workers", std::to_string(workers)}).code == kExitOk);
    REQUIRE(cli({"diagnose", "--config", path, "--workers", std::to_string(workers)}).code == kExitOk);
    results.push_back(slurp(scratch / out / "result.json"));
    reports.push_back(slurp(scratch / out / "report.json"));
    csvs.push_back(slurp(scratch / out / "report.csv"));
  }
  // output_dir differs, and it is part of the embedded config
  auto strip = [](std::string s, const std::string& dir) {
    for (std::size_t at; (at = s.find(dir)) != std::string::npos;) s.erase(at, dir.size());
    return s;
  };
  for (std::size_t k = 1; k < results.size(); ++k) {
    const std::string a = (scratch / "out0").string(), b = (scratch / ("out" + std::to_string(k))).string();
    CHECK(strip(Json::parse(results[k]).at("result").dump(), b) == strip(Json::parse(results[0]).at("result").dump(), a));
    CHECK(strip(Json::parse(reports[k]).at("report").dump(), b) == strip(Json::parse(reports[0]).at("report").dump(), a));
    CHECK(split(data_lines(csvs[k])[1]) == split(data_lines(csvs[0])[1]));
  }

  // same directory, same config: the files themselves are identical
  const std::string path = scratch.config(j, "same.json", "same");
  REQUIRE(cli({"solve", "--config", path, "--workers", "1"}).code == kExitOk);
  REQUIRE(cli({"diagnose", "--config", path, "--workers", "1"}).code == kExitOk);
  const std::string first_result = slurp(scratch / "same" / "result.json");
  const std::string first_csv = slurp(scratch / "same" / "report.csv");
  REQUIRE(cli({"solve", "--config", path, "--workers", "8"}).code == kExitOk);
  REQUIRE(cli({"diagnose", "--config", path, "--workers", "8"}).code == kExitOk);
  CHECK(slurp(scratch / "same" / "result.json") == first_result);
  CHECK(slurp(scratch / "same" / "report.csv") == first_csv);

  // a different seed changes the sampled diagnostics
  const std::string other = scratch.config(j, "other.json", "other");
  REQUIRE(cli({"solve", "--config", other, "--seed", "99"}).code == kExitOk);
  REQUIRE(cli({"diagnose", "--config", other, "--seed", "99"}).code == kExitOk);
  CHECK(split(data_lines(slurp(scratch / "other" / "report.csv"))[1])[4] == "99");
}

TEST_CASE("sweep") {
  Scratch scratch;
  Json j = small_binary();
  j["sweep"] = {{"n", {7, 5, 7}}, {"c", {1.0}}};
  const Run r = cli({"sweep", "--config", scratch.config(j), "--workers", "2"});
  REQUIRE(r.code == kExitOk);
  const auto rows = data_lines(slurp(scratch / "out" / "sweep.csv"));
  REQUIRE(rows.size() == 3);
  const auto a = split(rows[1]), b = split(rows[2]);
  CHECK(a[1] == "5");
  CHECK(b[1] == "7");
  CHECK(a[4] == std::to_string(cell_seed(17, 5, 1.0)));
  CHECK(b[4] == std::to_string(cell_seed(17, 7, 1.0)));
  CHECK(a[4] != b[4]);
  CHECK(a.back() == "ok");
  CHECK(b.back() == "ok");
  const Json doc = Json::parse(slurp(scratch / "out" / "sweep.json"));
  CHECK(doc.at("cells").size() == 2);
}

TEST_CASE("oracle command") {
  Scratch scratch;
  Json j = small_binary();
  j["problem"]["n"] = 3;
  const Run r = cli({"oracle", "--config", scratch.config(j)});
  REQUIRE(r.code == kExitOk);
  const Json doc = Json::parse(slurp(scratch / "out" / "oracle.json"));
  CHECK(doc.at("comparison").at("within_tolerance") == true);
  CHECK(doc.at("comparison").at("max_discrepancy").get<double>() <= 1e-3);
  CHECK(doc.at("oracle").at("foc_residual").get<double>() <= 1e-3);

  Json wide = Json::parse(R"({
    "problem": {"m": 4, "n": 3, "c": 1.0},
    "distribution": {"type": "discrete", "support": [{"p": 1.0, "u": [1.0, 0.7, 0.3, 0.0]}]}
  })");
  const Run limit = cli({"oracle", "--config", scratch.config(wide, "wide.json")});
  CHECK(limit.code == kExitConfigError);
  CHECK(limit.err.find("oracle limit") != std::string::npos);

  Json continuous = Json::parse(R"({
    "problem": {"m": 2, "n": 3, "c": 1.0},
    "distribution": {"type": "independent", "marginals": [{"kind": "uniform", "lo": 0, "hi": 1},
                                                          {"kind": "point", "value": 0.3}]}
  })");
  CHECK(cli({"oracle", "--config", scratch.config(continuous, "continuous.json")}).code == kExitConfigError);
}

TEST_CASE("strict mode") {
  Scratch scratch;
  // mirror-image types with equal weight: the means tie
  Json j = small_binary(0.5);
  j["distribution"]["support"][1]["u"] = {0.2, 1.0};
  const std::string path = scratch.config(j);
  const Run strict = cli({"solve", "--config", path, "--strict"});
  CHECK(strict.code == kExitAssumptionViolation);
  CHECK(strict.err.find("error:") != std::string::npos);
  CHECK(!fs::exists(scratch / "out" / "result.json"));

  const Run lenient = cli({"solve", "--config", path});
  CHECK(lenient.code == kExitOk);
  CHECK(lenient.err.find("warning:") != std::string::npos);
  const Json result = Json::parse(slurp(scratch / "out" / "result.json"));
  CHECK(!result.at("warnings").empty());
}

TEST_CASE("warm start") {
  Scratch scratch;
  const std::string cold = scratch.config(small_binary(), "cold.json", "cold");
  REQUIRE(cli({"solve", "--config", cold}).code == kExitOk);
  Json j = small_binary();
  j["solver"] = {{"warm_start", (scratch / "cold" / "result.json").string()}};
  REQUIRE(cli({"solve", "--config", scratch.config(j, "warm.json", "warm")}).code == kExitOk);
  const Json a = Json::parse(slurp(scratch / "cold" / "result.json")).at("result");
  const Json b = Json::parse(slurp(scratch / "warm" / "result.json")).at("result");
  CHECK(b.at("outer_iterations").get<int>() <= a.at("outer_iterations").get<int>());
  const auto va = a.at("strategy").at("votes"), vb = b.at("strategy").at("votes");
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t k = 0; k < 2; ++k) CHECK(vb[t][k].get<double>() == doctest::Approx(va[t][k].get<double>()).epsilon(1e-8));

  j["solver"] = {{"warm_start", (scratch / "nothing.json").string()}};
  CHECK(cli({"solve", "--config", scratch.config(j, "bad_warm.json")}).code == kExitConfigError);
}

TEST_CASE("beliefs run") {
  Scratch scratch;
  Json j = small_binary();
  j["beliefs"] = Json::parse(R"({"groups": [{"fraction": 1.0, "distribution": {"type": "discrete", "support": [
      {"p": 0.9, "u": [1.0, 0.2]}, {"p": 0.1, "u": [0.1, 0.9]}]}}]})");
  const std::string path = scratch.config(j);
  REQUIRE(cli({"solve", "--config", path}).code == kExitOk);
  const Json result = Json::parse(slurp(scratch / "out" / "result.json"));
  CHECK(result.at("result").is_null());
  CHECK(result.at("beliefs").at("groups").size() == 1);
  REQUIRE(cli({"diagnose", "--config", path}).code == kExitOk);
  CHECK(data_lines(slurp(scratch / "out" / "report.csv")).size() == 2);
}
