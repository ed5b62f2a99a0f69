#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bdkf/linalg.hpp"
#include "bdkf/serialization.hpp"
#include "cli.hpp"

namespace fs = std::filesystem;
using bdkf::Json;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run bdkf_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = bdkf::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

struct TempDir {
  TempDir() {
    path = fs::temp_directory_path() / ("bdkf_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path path;
  static inline int counter = 0;
};

fs::path write_config(const fs::path& dir, const Json& j) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump();
  return p;
}

}  // namespace

TEST_CASE("simulate") {
  TempDir a, b;
  const Json cfg = {{"system", {{"generator", "identical_chain"}, {"beta", 0.1}, {"n", 3}}}, {"horizon", 10}};
  const fs::path conf = write_config(a.path, cfg);
  for (const TempDir* d : {&a, &b}) {
    const Run r = bdkf_run({"simulate", "--config", conf.string(), "--seed", "7", "--out", d->path.string()});
    REQUIRE(r.code == 0);
  }
  const std::string ta = slurp(a.path / "trajectory.csv"), tb = slurp(b.path / "trajectory.csv");
  CHECK(lines(ta) == 11);
  CHECK(ta == tb);
  CHECK(ta.rfind("step,x_0,", 0) == 0);
  const Json side = Json::parse(slurp(a.path / "trajectory.json"));
  CHECK(side["seed"] == 7);
  CHECK(side["config"]["command"] == "simulate");

  const Json missing = {{"system", {{"generator", "identical_chain"}, {"beta", 0.1}}}, {"horizon", 10}};
  const Run bad = bdkf_run({"simulate", "--config", write_config(b.path, missing).string(), "--out", b.path.string()});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("\"n\"") != std::string::npos);
}

TEST_CASE("config errors") {
  TempDir d;
  CHECK(bdkf_run({"decouple", "--config", write_config(d.path, {{"bogus", 1}}).string(), "--out", d.path.string()})
            .code == 2);
  CHECK(bdkf_run({"decouple", "--config", write_config(d.path, {{"command", "bench"}}).string()}).code == 2);
  CHECK(bdkf_run({"decouple", "--seeds", "2", "--out", d.path.string()}).code == 2);
  CHECK(bdkf_run({"nope"}).code == 2);
  CHECK(bdkf_run({"simulate", "--out", d.path.string()}).code == 2);
  CHECK(bdkf_run({"--help"}).code == 0);
}

TEST_CASE("decouple") {
  TempDir d;
  const Run r = bdkf_run({"decouple", "--beta", "0.1", "--n", "2", "--out", d.path.string()});
  REQUIRE(r.code == 0);
  const std::string csv = slurp(d.path / "decoupling.csv");
  CHECK(lines(csv) == 2);
  CHECK(csv.rfind("beta,n,dist_P0,dist_P,dist_P0_full,converged\n", 0) == 0);
  CHECK(csv.find("nan") == std::string::npos);
  CHECK(csv.find(",true\n") != std::string::npos);

  const Json grid = {{"betas", {0.1, 0.5}}, {"ns", {2, 4, 8}}, {"true_error", false}};
  REQUIRE(bdkf_run({"decouple", "--config", write_config(d.path, grid).string(), "--out", d.path.string()}).code == 0);
  CHECK(lines(slurp(d.path / "decoupling.csv")) == 7);

  // a cell that cannot converge stays in the table and the run succeeds
  const Json tight = {{"betas", {0.1}}, {"ns", {2}}, {"max_iter", 2}};
  REQUIRE(bdkf_run({"decouple", "--config", write_config(d.path, tight).string(), "--out", d.path.string()}).code == 0);
  CHECK(slurp(d.path / "decoupling.csv").find(",false\n") != std::string::npos);
}

TEST_CASE("steady") {
  TempDir d;
  const Json cfg = {{"system", {{"generator", "identical_chain"}, {"beta", 0.1}, {"n", 8}}}};
  const Run r = bdkf_run({"steady", "--config", write_config(d.path, cfg).string(), "--out", d.path.string()});
  REQUIRE(r.code == 0);
  const Json j = Json::parse(slurp(d.path / "steady.json"));
  for (const char* key : {"P_minus", "P_tilde_minus", "P_minus_decoupled", "prop2"}) CHECK(j.contains(key));
  const bdkf::DenseMat P = bdkf::matrix_from_json(j["P_minus_decoupled"], "P_minus_decoupled");
  const bdkf::DenseMat Pt = bdkf::matrix_from_json(j["P_tilde_minus"], "P_tilde_minus");
  CHECK(bdkf::min_sym_eig(Pt - P) >= -1e-8 * bdkf::spectral_norm(P));

  const Run flags = bdkf_run({"steady", "--config", write_config(d.path, cfg).string(), "--n", "2", "--out",
                              d.path.string()});
  REQUIRE(flags.code == 0);
  CHECK(Json::parse(slurp(d.path / "steady.json"))["P_minus"].size() == 4);
}

TEST_CASE("speckle and bench row counts") {
  TempDir d;
  const Json sp = {{"n_pixels", 16}, {"r_modes", 3}};
  const Run r = bdkf_run({"speckle", "--config", write_config(d.path, sp).string(), "--seeds", "2", "--horizon", "50",
                          "--out", d.path.string()});
  REQUIRE(r.code == 0);
  CHECK(lines(slurp(d.path / "speckle.csv")) == 1 + 2 * 50 * 3);
  const Json side = Json::parse(slurp(d.path / "speckle.json"));
  CHECK(side["config"]["seeds"].size() == 2);

  const Json b = {{"ns_fast", {16, 32}}, {"ns_full", Json::array()}, {"reps", 5}, {"min_rep_seconds", 0.001}};
  REQUIRE(bdkf_run({"bench", "--config", write_config(d.path, b).string(), "--out", d.path.string()}).code == 0);
  const std::string csv = slurp(d.path / "bench.csv");
  CHECK(lines(csv) == 3);
  CHECK(csv.find("full_kf") == std::string::npos);
}
