#pragma once

// Desk-scale studies: the decoupling sweep over (beta, n) on the identical
// chain, a synthetic speckle-tracking comparison of the three EKFs, step-time
// scaling, and Monte Carlo error covariances.
//
// Every study is a pure function of its options (seeds included); only the
// recorded wall times vary between runs.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bdkf/filters.hpp"
#include "bdkf/model.hpp"
#include "bdkf/steady_state.hpp"

namespace bdkf {

using ProgressFn = std::function<void(const std::string&)>;

// Runs fn(0..count-1) on up to `threads` threads (1 = inline). The first
// exception thrown by any task is rethrown after all threads have joined.
void parallel_for(Index count, int threads, const std::function<void(Index)>& fn);

int default_thread_count();

// ---- decoupling sweep ------------------------------------------------------

struct DecouplingOptions {
  std::vector<double> betas{0.1, 0.5, 1.0, 1.5, 2.0, 5.0, 10.0};
  std::vector<Index> ns{2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048};
  Index full_kf_n_cap = 256;
  SteadyOptions steady;
  bool true_error = true;  // true_error_cov of the BD gain, n <= full_kf_n_cap
  int threads = 1;
  ProgressFn progress;
};

struct DecouplingRow {
  double beta = 0.0;
  Index n = 0;
  double dist_P0 = 0.0;       // ||P~ - P0||_F / n
  double dist_P = 0.0;        // ||P~ - P||_F / n   (NaN above the cap)
  double dist_P0_full = 0.0;  // ||P0 - P||_F / n   (NaN above the cap)
  double dist_true_P0 = 0.0;  // ||Sigma_bd - P0||_F / n (NaN when not computed)
  Index iterations_bd = 0;
  Index iterations_full = 0;
  bool converged = false;
  std::string error;  // failure message of a non-converged cell
};

// One row per (beta, n) in beta-major order. P0 = P_+(V) per sub-system,
// P~ = block-diagonal fixed point and P = full fixed point with
// Q = V + G U G^T. A cell that fails to converge is reported with
// converged = false and NaN distances.
std::vector<DecouplingRow> decoupling_study(const DecouplingOptions& opts);

// Smallest beta of the sweep whose dist_P does not decrease over the
// largest dense n values (from n_from up), or NaN if every beta decreases.
double critical_beta(const std::vector<DecouplingRow>& rows, Index n_from);

// ---- speckle tracking ------------------------------------------------------

struct SpeckleOptions {
  Index n_pixels = 256;
  Index r_modes = 6;
  Index horizon = 400;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  double drift_scale = 2.0;   // std of each drift-mode coefficient per step
  double photon_scale = 4.0;  // mean speckle intensity per pixel (photons)
  double probe_factor = 10.0; // probe intensity / mean speckle intensity
  double init_error = 0.3;    // std of the initial estimate error, relative to the field std
  double intensity_floor = kDefaultPoissonFloor;
  bool run_full = true;
  int threads = 1;
  ProgressFn progress;
};

struct SpeckleRow {
  std::uint64_t seed = 0;
  Index step = 0;
  std::string filter;  // full | bd | banded
  double mse = 0.0;    // sum_p |E~_p - E_p|^2 / n_pixels
  double step_time_s = 0.0;
};

struct SpeckleSummary {
  // Mean over seeds of the per-seed mean mse over steps >= horizon / 2.
  double steady_mse_full = 0.0;
  double steady_mse_bd = 0.0;
  double steady_mse_banded = 0.0;
  // Mean over all steps and seeds.
  double step_time_full = 0.0;
  double step_time_bd = 0.0;
  double step_time_banded = 0.0;
};

// One simulated photon stream per seed, consumed by every filter arm.
struct SpeckleTrajectory {
  std::vector<std::vector<std::complex<double>>> fields;  // true field at each step
  std::vector<std::vector<double>> counts;
  std::vector<std::vector<std::complex<double>>> probes;  // probe used at each step
  Vec x_init;                                             // initial estimate
  double p_init = 0.0;                                    // initial variance per component
};

SpeckleTrajectory simulate_speckle(const SpeckleSystem& sys, const SpeckleOptions& opts,
                                   std::uint64_t seed);

// Rows ordered by seed, then filter (full, bd, banded), then step.
std::vector<SpeckleRow> speckle_study(const SpeckleOptions& opts);
SpeckleSummary summarize_speckle(const std::vector<SpeckleRow>& rows, Index horizon);

// ---- step-time scaling -----------------------------------------------------

struct BenchOptions {
  std::vector<Index> ns_fast{256, 512, 1024, 2048, 4096, 8192};
  std::vector<Index> ns_full{32, 64, 128, 256};
  std::vector<Index> rs{4};
  Index c = 2;
  Index d = 1;
  Index reps = 7;
  double min_rep_seconds = 0.02;   // steps per repetition are raised until one takes this long
  std::uint64_t seed = 1;
  ProgressFn progress;
};

struct BenchRow {
  std::string filter;  // bdkf_fast | full_kf
  Index n = 0;
  Index r = 0;
  double median_step_time_s = 0.0;
  Index reps = 0;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  // Least-squares slope of log(time) against log(n), per filter (at the
  // first r for the fast filter); NaN with fewer than two sizes.
  double slope_fast = 0.0;
  double slope_full = 0.0;
};

// Timed sections always run serially.
BenchResult scaling_benchmark(const BenchOptions& opts);

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

// ---- Monte Carlo error -----------------------------------------------------

enum class GainSource {
  steady,     // fixed steady-state gain of the backend
  recursive,  // the backend's own time-varying recursion from P0
};

struct MonteCarloOptions {
  EkfBackend backend = EkfBackend::full;
  GainSource gain = GainSource::steady;
  Index trials = 1000;
  Index horizon = 200;
  double p0_scale = 0.0;  // initial covariance p0_scale * I, estimate error drawn to match
  SteadyOptions steady;
  int threads = 1;
};

// Sample covariance of x~_K - x_K at the final step over independent trials.
DenseMat monte_carlo_error(const CoupledSystem& sys, const MonteCarloOptions& opts,
                           const RngSpec& rng);

// ---- output ----------------------------------------------------------------

inline constexpr const char* kDecouplingHeader = "beta,n,dist_P0,dist_P,dist_P0_full,converged";
inline constexpr const char* kSpeckleHeader = "seed,step,filter,mse,step_time_s";
inline constexpr const char* kBenchHeader = "filter,n,r,median_step_time_s,reps";

// %.17g, with nan/inf spelled "nan", "inf", "-inf".
std::string format_double(double v);

std::string decoupling_csv(const std::vector<DecouplingRow>& rows);
std::string speckle_csv(const std::vector<SpeckleRow>& rows);
std::string bench_csv(const std::vector<BenchRow>& rows);

// Writes to a temporary file in the same directory, then renames.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace bdkf
