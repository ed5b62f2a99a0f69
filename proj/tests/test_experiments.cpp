#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bdkf/experiments.hpp"
#include "oracles.hpp"

using namespace bdkf;
using oracle::Mat;

TEST_CASE("parallel_for visits every index and rethrows") {
  for (int threads : {1, 3}) {
    std::vector<int> hit(50, 0);
    parallel_for(50, threads, [&](Index i) { hit[i] += 1; });
    for (int h : hit) CHECK(h == 1);
    CHECK_THROWS_AS(parallel_for(10, threads,
                                 [](Index i) {
                                   if (i == 7) throw ValidationError("seven");
                                 }),
                    ValidationError);
  }
}

TEST_CASE("decoupling study") {
  DecouplingOptions o;
  o.betas = {0.0};
  o.ns = {1};
  const auto one = decoupling_study(o);
  REQUIRE(one.size() == 1);
  CHECK(one[0].converged);
  CHECK(one[0].dist_P <= 1e-9);
  CHECK(one[0].dist_P0 == doctest::Approx(one[0].dist_P0_full).epsilon(1e-6));

  o.betas = {0.1, 1.0};
  o.ns = {2, 4, 8};
  const auto rows = decoupling_study(o);
  REQUIRE(rows.size() == 6);
  CHECK(rows[0].beta == 0.1);
  CHECK(rows[3].beta == 1.0);
  CHECK(rows[2].n == 8);

  // dense oracle for one cell (update-step covariances)
  const CoupledSystem s = make_identical_chain(1.0, 4);
  const DenseModel d = dense_stack(s);
  const DenseSteadyState full = solve_dare(d.F, d.H, d.Q, d.R);
  const BlockModel m = to_block_model(s);
  const Mat Pt = oracle::embed(solve_bd_dare(m).P_plus);
  const Subsystem& b = s.subsystems[0];
  const Mat P0i = solve_dare(b.F, b.H, b.V, b.R).P_plus;
  Mat P0 = Mat::Zero(8, 8);
  for (int i = 0; i < 4; ++i) P0.block(2 * i, 2 * i, 2, 2) = P0i;
  CHECK(rows[4].dist_P == doctest::Approx((Pt - full.P_plus).norm() / 4).epsilon(1e-6));
  CHECK(rows[4].dist_P0 == doctest::Approx((Pt - P0).norm() / 4).epsilon(1e-6));
  CHECK(rows[4].dist_P0_full == doctest::Approx((full.P_plus - P0).norm() / 4).epsilon(1e-6));

  // threads do not change results
  o.threads = 2;
  const auto par = decoupling_study(o);
  for (size_t i = 0; i < rows.size(); ++i) CHECK(par[i].dist_P == rows[i].dist_P);

  // cells above the dense cap report NaN for the full-filter columns
  o.ns = {4, 8};
  o.full_kf_n_cap = 4;
  const auto capped = decoupling_study(o);
  CHECK(std::isfinite(capped[0].dist_P));
  CHECK(std::isnan(capped[1].dist_P));
  CHECK(std::isfinite(capped[1].dist_P0));

  // a cell that cannot converge is reported, not thrown
  o.ns = {2};
  o.steady.max_iter = 2;
  const auto bad = decoupling_study(o);
  CHECK(!bad[0].converged);
  CHECK(std::isnan(bad[0].dist_P));
  CHECK(!bad[0].error.empty());
}

TEST_CASE("critical beta") {
  std::vector<DecouplingRow> rows;
  auto add = [&](double beta, Index n, double d) {
    DecouplingRow r;
    r.beta = beta;
    r.n = n;
    r.dist_P = d;
    rows.push_back(r);
  };
  add(0.1, 32, 1.0);
  add(0.1, 64, 0.5);
  add(2.0, 32, 1.0);
  add(2.0, 64, 1.1);
  CHECK(critical_beta(rows, 32) == 2.0);
  rows.pop_back();
  add(2.0, 64, 0.9);
  CHECK(std::isnan(critical_beta(rows, 32)));
}

TEST_CASE("speckle study") {
  SpeckleOptions o;
  o.n_pixels = 16;
  o.r_modes = 3;
  o.horizon = 12;
  o.seeds = {4};
  const auto a = speckle_study(o), b = speckle_study(o);
  REQUIRE(a.size() == 36);
  CHECK(a[0].filter == "full");
  CHECK(a[12].filter == "bd");
  CHECK(a[24].filter == "banded");
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].mse == b[i].mse);
    CHECK(a[i].step == b[i].step);
  }

  // a static field tracked from the exact estimate stays exact
  o.drift_scale = 0.0;
  o.init_error = 0.0;
  for (const auto& r : speckle_study(o)) CHECK(r.mse <= 1e-12);

  o.run_full = false;
  CHECK(speckle_study(o).size() == 24);

  const SpeckleSummary s = summarize_speckle(a, 12);
  CHECK(s.steady_mse_full > 0.0);
  double sum = 0.0;
  for (Index k = 6; k < 12; ++k) sum += a[12 + k].mse;
  CHECK(s.steady_mse_bd == doctest::Approx(sum / 6).epsilon(1e-12));
}

TEST_CASE("scaling benchmark") {
  BenchOptions o;
  o.ns_fast = {16, 32};
  o.ns_full = {};
  o.reps = 5;
  o.min_rep_seconds = 0.001;
  const BenchResult r = scaling_benchmark(o);
  REQUIRE(r.rows.size() == 2);
  for (const auto& row : r.rows) {
    CHECK(row.filter == "bdkf_fast");
    CHECK(row.median_step_time_s > 0.0);
  }
  CHECK(std::isnan(r.slope_full));
  CHECK(std::isfinite(r.slope_fast));

  CHECK(loglog_slope({1, 10, 100}, {2, 20, 200}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(loglog_slope({1, 2, 4}, {1, 8, 64}) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(std::isnan(loglog_slope({1}, {1})));
}

TEST_CASE("monte carlo error covariance") {
  const CoupledSystem s = make_random_system(2, 1, 2, 2, 0.8, {13});
  const DenseModel d = dense_stack(s);
  const DenseSteadyState ss = solve_dare(d.F, d.H, d.Q, d.R);
  MonteCarloOptions o;
  o.trials = 1000;
  o.horizon = 60;
  const Mat mc = monte_carlo_error(s, o, {17});
  CHECK(oracle::rel(mc, ss.P_plus) <= 0.15);

  const CoupledSystem chain = make_identical_chain(0.1, 16);
  const BlockModel m = to_block_model(chain);
  const DenseModel dc = dense_stack(chain);
  const BdSteadyState bd = solve_bd_dare(m);
  const Mat truth = true_error_cov(dc.F, dc.H, dc.Q, dc.R, bd.gain.to_dense());
  o.backend = EkfBackend::bd_fast;
  const Mat mcb = monte_carlo_error(chain, o, {19});
  CHECK(oracle::rel(oracle::D(mcb, 2), oracle::D(truth, 2)) <= 0.15);

  CoupledSystem quiet = s;
  quiet.U.setZero();
  for (auto& b : quiet.subsystems) b.V.setZero();
  o.backend = EkfBackend::banded;
  o.gain = GainSource::recursive;
  o.trials = 50;
  o.horizon = 10;
  CHECK(monte_carlo_error(quiet, o, {1}).norm() <= 1e-20);
}

TEST_CASE("csv output") {
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(NAN) == "nan");
  CHECK(format_double(-INFINITY) == "-inf");

  DecouplingRow r;
  r.beta = 0.1;
  r.n = 2;
  r.dist_P0 = 1.0;
  r.dist_P = 2.0;
  r.dist_P0_full = NAN;
  r.converged = true;
  const std::string csv = decoupling_csv({r});
  CHECK(csv == std::string(kDecouplingHeader) + "\n0.10000000000000001,2,1,2,nan,true\n");
  CHECK(speckle_csv({}) == std::string(kSpeckleHeader) + "\n");
  CHECK(bench_csv({}).rfind(kBenchHeader, 0) == 0);

  const auto dir = std::filesystem::temp_directory_path() / "bdkf_test_csv";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "x.csv").string();
  write_file_atomic(path, "abc\n");
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == "abc\n");
  std::filesystem::remove_all(dir);
}
