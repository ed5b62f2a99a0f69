#include "bdkf/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>
#include <unistd.h>

#include "bdkf/linalg.hpp"

namespace bdkf {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(const ProgressFn& fn, const std::string& msg) {
  if (fn) fn(msg);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

int default_thread_count() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

void parallel_for(Index count, int threads, const std::function<void(Index)>& fn) {
  if (count <= 0) return;
  const Index workers = std::min<Index>(std::max(threads, 1), count);
  if (workers == 1) {
    for (Index i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<Index> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto work = [&] {
    for (Index i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (Index t = 0; t < workers; ++t) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---- decoupling sweep ------------------------------------------------------

namespace {

DecouplingRow decoupling_cell(double beta, Index n, const DecouplingOptions& opts) {
  DecouplingRow row;
  row.beta = beta;
  row.n = n;
  row.dist_P = row.dist_P0_full = row.dist_true_P0 = kNaN;

  const BlockModel model = to_block_model(make_identical_chain(beta, n));
  BlockModel uncoupled = model;
  uncoupled.dyn.U.setZero();
  const double scale = 1.0 / static_cast<double>(n);

  SteadyOptions bd_opts = opts.steady;
  bd_opts.analysis_state_cap = 0;  // no dense closed loop needed here
  const BlockDiagMat P0 = banded_steady(uncoupled, opts.steady).P_plus;
  const BdSteadyState bd = solve_bd_dare(model, bd_opts);
  row.iterations_bd = bd.iterations;
  row.dist_P0 = block_fro_distance(bd.P_plus, P0) * scale;

  if (n <= opts.full_kf_n_cap) {
    const DenseModel dense = dense_stack(model);
    const DenseSteadyState full = solve_dare(dense.F, dense.H, dense.Q, dense.R, opts.steady);
    row.iterations_full = full.iterations;
    row.dist_P = block_fro_distance(bd.P_plus, full.P_plus) * scale;
    row.dist_P0_full = block_fro_distance(P0, full.P_plus) * scale;
    if (opts.true_error) {
      try {
        const DenseMat sigma =
            true_error_cov(dense.F, dense.H, dense.Q, dense.R, bd.gain.to_dense(), opts.steady);
        row.dist_true_P0 = block_fro_distance(sigma, P0) * scale;
      } catch (const DomainError&) {
        // unstable closed loop: the BD filter diverges, no steady error
      }
    }
  }
  row.converged = true;
  return row;
}

}  // namespace

std::vector<DecouplingRow> decoupling_study(const DecouplingOptions& opts) {
  if (!std::is_sorted(opts.ns.begin(), opts.ns.end()))
    throw ValidationError("decoupling_study: ns must be ascending");
  for (Index n : opts.ns)
    if (n < 1) throw ValidationError("decoupling_study: every n must be >= 1");

  const Index nn = static_cast<Index>(opts.ns.size());
  const Index cells = static_cast<Index>(opts.betas.size()) * nn;
  std::vector<DecouplingRow> rows(static_cast<size_t>(cells));
  std::mutex progress_mutex;
  parallel_for(cells, opts.threads, [&](Index cell) {
    const double beta = opts.betas[cell / nn];
    const Index n = opts.ns[cell % nn];
    const auto t0 = Clock::now();
    DecouplingRow& row = rows[cell];
    try {
      row = decoupling_cell(beta, n, opts);
    } catch (const ConvergenceError& e) {
      row = DecouplingRow{beta, n, kNaN, kNaN, kNaN, kNaN, 0, 0, false, ""};
      std::ostringstream msg;
      msg << "beta=" << beta << " n=" << n << ": " << e.what();
      row.error = msg.str();
    } catch (const SingularityError& e) {
      row = DecouplingRow{beta, n, kNaN, kNaN, kNaN, kNaN, 0, 0, false, ""};
      std::ostringstream msg;
      msg << "beta=" << beta << " n=" << n << ": " << e.what();
      row.error = msg.str();
    }
    if (opts.progress) {
      std::ostringstream msg;
      msg << "decouple beta=" << beta << " n=" << n;
      if (row.converged)
        msg << " dist_P0=" << row.dist_P0 << " dist_P=" << row.dist_P;
      else
        msg << " FAILED: " << row.error;
      msg << " (" << seconds_since(t0) << " s)";
      std::lock_guard<std::mutex> lock(progress_mutex);
      opts.progress(msg.str());
    }
  });
  return rows;
}

double critical_beta(const std::vector<DecouplingRow>& rows, Index n_from) {
  std::vector<double> betas;
  for (const auto& r : rows)
    if (std::find(betas.begin(), betas.end(), r.beta) == betas.end()) betas.push_back(r.beta);
  std::sort(betas.begin(), betas.end());
  for (double beta : betas) {
    const DecouplingRow* first = nullptr;
    const DecouplingRow* last = nullptr;
    for (const auto& r : rows) {
      if (r.beta != beta || r.n < n_from || !std::isfinite(r.dist_P)) continue;
      if (!first || r.n < first->n) first = &r;
      if (!last || r.n > last->n) last = &r;
    }
    if (first && last && first != last && last->dist_P >= first->dist_P) return beta;
  }
  return kNaN;
}

// ---- speckle tracking ------------------------------------------------------

SpeckleTrajectory simulate_speckle(const SpeckleSystem& speckle, const SpeckleOptions& opts,
                                   std::uint64_t seed) {
  const CoupledSystem& sys = speckle.system;
  const Index n = sys.n();
  if (opts.horizon < 1) throw ValidationError("speckle: horizon must be >= 1");
  if (opts.photon_scale <= 0.0) throw ValidationError("speckle: photon_scale must be > 0");
  if (opts.probe_factor < 0.0 || opts.init_error < 0.0)
    throw ValidationError("speckle: probe_factor and init_error must be >= 0");

  const RngSpec base{seed};
  Rng truth(derive_stream(base, 1));
  Rng photons(derive_stream(base, 2));
  Rng init(derive_stream(base, 3));
  Rng probe_rng(derive_stream(base, 4));

  const double field_std = std::sqrt(0.5 * opts.photon_scale);
  const DenseMat u_factor = psd_factor(sys.U);
  std::vector<DenseMat> v_factor(static_cast<size_t>(n));
  for (Index p = 0; p < n; ++p) v_factor[p] = psd_factor(sys.subsystems[p].V);

  SpeckleTrajectory traj;
  Vec x(2 * n);
  for (Index p = 0; p < 2 * n; ++p) x(p) = field_std * truth.normal();
  const double init_std = opts.init_error * field_std;
  traj.x_init = x;
  for (Index p = 0; p < 2 * n; ++p) traj.x_init(p) += init_std * init.normal();
  traj.p_init = init_std * init_std;

  // Four probes: one random phase pattern rotated by successive quarter turns.
  const double amplitude = std::sqrt(opts.probe_factor * opts.photon_scale);
  std::vector<std::vector<std::complex<double>>> probe_set(4, std::vector<std::complex<double>>(n));
  for (Index p = 0; p < n; ++p) {
    const double phase = 2.0 * M_PI * probe_rng.uniform();
    std::complex<double> v = std::polar(amplitude, phase);
    for (auto& probe : probe_set) {
      probe[p] = v;
      v *= std::complex<double>(0.0, 1.0);
    }
  }

  traj.fields.reserve(static_cast<size_t>(opts.horizon));
  traj.counts.reserve(static_cast<size_t>(opts.horizon));
  traj.probes.reserve(static_cast<size_t>(opts.horizon));
  for (Index k = 0; k < opts.horizon; ++k) {
    const Vec u = u_factor * truth.normal_vec(sys.r);
    for (Index p = 0; p < n; ++p) {
      const Vec v = v_factor[p] * truth.normal_vec(2);
      x.segment(2 * p, 2) += v + sys.subsystems[p].G * u;
    }
    auto field = field_from_state(x);
    const auto& probe = probe_set[k % 4];
    std::vector<double> counts(static_cast<size_t>(n));
    for (Index p = 0; p < n; ++p)
      counts[p] = static_cast<double>(photons.poisson(std::norm(field[p] + probe[p])));
    traj.fields.push_back(std::move(field));
    traj.counts.push_back(std::move(counts));
    traj.probes.push_back(probe);
  }
  return traj;
}

namespace {

double field_mse(const Vec& x, const std::vector<std::complex<double>>& E) {
  double s = 0.0;
  for (size_t p = 0; p < E.size(); ++p) {
    const std::complex<double> est(x(2 * p), x(2 * p + 1));
    s += std::norm(est - E[p]);
  }
  return s / static_cast<double>(E.size());
}

}  // namespace

std::vector<SpeckleRow> speckle_study(const SpeckleOptions& opts) {
  if (opts.run_full && opts.n_pixels > 1024)
    throw ValidationError("speckle: the full EKF arm needs n_pixels <= 1024");
  const SpeckleSystem speckle = make_speckle_system(opts.n_pixels, opts.r_modes, opts.drift_scale);
  const BlockModel model = to_block_model(speckle.system);
  const DenseModel dense = opts.run_full ? dense_stack(model) : DenseModel{};
  const Index n = model.n();
  const Index horizon = opts.horizon;

  const std::vector<std::string> tags =
      opts.run_full ? std::vector<std::string>{"full", "bd", "banded"}
                    : std::vector<std::string>{"bd", "banded"};
  const Index per_seed = static_cast<Index>(tags.size()) * horizon;
  std::vector<SpeckleRow> rows(opts.seeds.size() * static_cast<size_t>(per_seed));
  std::mutex progress_mutex;

  parallel_for(static_cast<Index>(opts.seeds.size()), opts.threads, [&](Index s) {
    const std::uint64_t seed = opts.seeds[s];
    const SpeckleTrajectory traj = simulate_speckle(speckle, opts, seed);
    SpeckleRow* out = rows.data() + s * per_seed;
    for (const auto& tag : tags) {
      const auto t_arm = Clock::now();
      if (tag == "full") {
        DenseFilterState st{traj.x_init, traj.p_init * DenseMat::Identity(2 * n, 2 * n), 0};
        for (Index k = 0; k < horizon; ++k) {
          const auto t0 = Clock::now();
          st = ekf_poisson_step(st, dense, traj.probes[k], traj.counts[k], opts.intensity_floor);
          *out++ = {seed, k, tag, field_mse(st.x, traj.fields[k]), seconds_since(t0)};
        }
      } else {
        const EkfBackend backend = tag == "bd" ? EkfBackend::bd_fast : EkfBackend::banded;
        BdFilterState st{traj.x_init, BlockDiagMat::identity(n, 2, traj.p_init), 0};
        for (Index k = 0; k < horizon; ++k) {
          const auto t0 = Clock::now();
          st = ekf_poisson_step(st, model.dyn, traj.probes[k], traj.counts[k], backend,
                                opts.intensity_floor);
          *out++ = {seed, k, tag, field_mse(st.x, traj.fields[k]), seconds_since(t0)};
        }
      }
      if (opts.progress) {
        std::ostringstream msg;
        msg << "speckle seed=" << seed << " filter=" << tag << " (" << seconds_since(t_arm) << " s)";
        std::lock_guard<std::mutex> lock(progress_mutex);
        opts.progress(msg.str());
      }
    }
  });
  return rows;
}

SpeckleSummary summarize_speckle(const std::vector<SpeckleRow>& rows, Index horizon) {
  struct Acc {
    std::vector<std::pair<std::uint64_t, std::pair<double, Index>>> per_seed;  // seed -> (sum, count)
    double time = 0.0;
    Index steps = 0;
  };
  std::map<std::string, Acc> acc;
  for (const auto& r : rows) {
    Acc& a = acc[r.filter];
    a.time += r.step_time_s;
    ++a.steps;
    if (r.step < horizon / 2) continue;
    auto it = std::find_if(a.per_seed.begin(), a.per_seed.end(),
                           [&](const auto& e) { return e.first == r.seed; });
    if (it == a.per_seed.end()) {
      a.per_seed.push_back({r.seed, {0.0, 0}});
      it = a.per_seed.end() - 1;
    }
    it->second.first += r.mse;
    ++it->second.second;
  }
  auto steady = [&](const std::string& tag) {
    auto it = acc.find(tag);
    if (it == acc.end() || it->second.per_seed.empty()) return kNaN;
    double s = 0.0;
    for (const auto& e : it->second.per_seed) s += e.second.first / static_cast<double>(e.second.second);
    return s / static_cast<double>(it->second.per_seed.size());
  };
  auto time = [&](const std::string& tag) {
    auto it = acc.find(tag);
    return it == acc.end() || it->second.steps == 0 ? kNaN
                                                    : it->second.time / static_cast<double>(it->second.steps);
  };
  SpeckleSummary out;
  out.steady_mse_full = steady("full");
  out.steady_mse_bd = steady("bd");
  out.steady_mse_banded = steady("banded");
  out.step_time_full = time("full");
  out.step_time_bd = time("bd");
  out.step_time_banded = time("banded");
  return out;
}

// ---- step-time scaling -----------------------------------------------------

namespace {

// Median seconds per call of `step` over `reps` repetitions, after one
// warmup call. Each repetition runs enough calls to last min_seconds.
template <class Step>
double time_steps(Step&& step, Index reps, double min_seconds) {
  auto t0 = Clock::now();
  step();
  const double one = std::max(seconds_since(t0), 1e-9);
  const Index calls = std::max<Index>(1, static_cast<Index>(std::ceil(min_seconds / one)));
  std::vector<double> times;
  for (Index rep = 0; rep < reps; ++rep) {
    t0 = Clock::now();
    for (Index i = 0; i < calls; ++i) step();
    times.push_back(seconds_since(t0) / static_cast<double>(calls));
  }
  return median(times);
}

}  // namespace

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("loglog_slope: length mismatch");
  if (x.size() < 2) return kNaN;
  const double m = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

BenchResult scaling_benchmark(const BenchOptions& opts) {
  if (opts.reps < 5) throw ValidationError("bench: reps must be >= 5");
  if (opts.rs.empty()) throw ValidationError("bench: rs must not be empty");
  BenchResult out;
  const RngSpec base{opts.seed};
  std::vector<double> fast_n, fast_t, full_n, full_t;

  for (Index r : opts.rs) {
    for (Index n : opts.ns_fast) {
      const BlockModel model =
          to_block_model(make_random_system(opts.c, opts.d, r, n, 0.95, derive_stream(base, n)));
      Rng rng(derive_stream(base, 1000000 + n));
      const Vec y = rng.normal_vec(n * opts.d);
      BdFilterState st{Vec::Zero(n * opts.c), BlockDiagMat::identity(n, opts.c), 0};
      const double t = time_steps([&] { st = bdkf_fast_step(st, model, y).state; }, opts.reps,
                                  opts.min_rep_seconds);
      out.rows.push_back({"bdkf_fast", n, r, t, opts.reps});
      if (r == opts.rs.front()) {
        fast_n.push_back(static_cast<double>(n));
        fast_t.push_back(t);
      }
      report(opts.progress, "bench bdkf_fast n=" + std::to_string(n) + " r=" + std::to_string(r) +
                                " " + format_double(t) + " s/step");
    }
  }
  const Index r = opts.rs.front();
  for (Index n : opts.ns_full) {
    const DenseModel model =
        dense_stack(make_random_system(opts.c, opts.d, r, n, 0.95, derive_stream(base, n)));
    Rng rng(derive_stream(base, 1000000 + n));
    const Vec y = rng.normal_vec(n * opts.d);
    DenseFilterState st{Vec::Zero(n * opts.c), DenseMat::Identity(n * opts.c, n * opts.c), 0};
    const double t = time_steps([&] { st = full_kf_step(st, model, y); }, opts.reps, opts.min_rep_seconds);
    out.rows.push_back({"full_kf", n, r, t, opts.reps});
    full_n.push_back(static_cast<double>(n));
    full_t.push_back(t);
    report(opts.progress, "bench full_kf n=" + std::to_string(n) + " " + format_double(t) + " s/step");
  }
  out.slope_fast = loglog_slope(fast_n, fast_t);
  out.slope_full = loglog_slope(full_n, full_t);
  return out;
}

// ---- Monte Carlo error -----------------------------------------------------

DenseMat monte_carlo_error(const CoupledSystem& sys, const MonteCarloOptions& opts, const RngSpec& rng) {
  if (opts.trials < 2) throw ValidationError("monte_carlo_error: trials must be >= 2");
  if (opts.horizon < 1) throw ValidationError("monte_carlo_error: horizon must be >= 1");
  if (opts.p0_scale < 0.0) throw ValidationError("monte_carlo_error: p0_scale must be >= 0");
  const BlockModel model = to_block_model(sys);
  const Index nx = model.n() * model.c();
  const bool need_dense = opts.backend == EkfBackend::full;
  const DenseModel dense = need_dense ? dense_stack(model) : DenseModel{};

  // Fixed-gain update x <- F x + K (y - H F x), one closure per backend.
  std::function<Vec(const Vec&)> apply_gain;
  if (opts.gain == GainSource::steady) {
    switch (opts.backend) {
      case EkfBackend::full: {
        auto K = std::make_shared<DenseMat>(
            solve_dare(dense.F, dense.H, dense.Q, dense.R, opts.steady).K);
        apply_gain = [K](const Vec& z) { return Vec(*K * z); };
        break;
      }
      case EkfBackend::bd_fast: {
        SteadyOptions so = opts.steady;
        so.analysis_state_cap = 0;
        auto gain = std::make_shared<FactoredGain>(solve_bd_dare(model, so).gain);
        apply_gain = [gain](const Vec& z) { return gain->apply(z); };
        break;
      }
      case EkfBackend::banded: {
        auto K = std::make_shared<BlockDiagMat>(banded_steady(model, opts.steady).K);
        apply_gain = [K](const Vec& z) { return K->apply(z); };
        break;
      }
    }
  }

  std::vector<Vec> errors(static_cast<size_t>(opts.trials));
  const double p0_std = std::sqrt(opts.p0_scale);
  parallel_for(opts.trials, opts.threads, [&](Index t) {
    const RngSpec trial = derive_stream(rng, static_cast<std::uint64_t>(t));
    Rng init(derive_stream(trial, 0));
    const Vec x0 = p0_std * init.normal_vec(nx);
    const Trajectory traj = simulate(sys, opts.horizon, x0, derive_stream(trial, 1));
    const Index last = opts.horizon - 1;
    auto y_at = [&](Index k) { return Vec(traj.measurements.row(k).transpose()); };

    Vec x;
    if (opts.gain == GainSource::steady) {
      x = Vec::Zero(nx);
      for (Index k = 1; k <= last; ++k) {
        const Vec xp = model.dyn.F.apply(x);
        x = xp + apply_gain(y_at(k) - model.meas.H.apply(xp));
      }
    } else if (opts.backend == EkfBackend::full) {
      DenseFilterState st{Vec::Zero(nx), opts.p0_scale * DenseMat::Identity(nx, nx), 0};
      for (Index k = 1; k <= last; ++k) st = full_kf_step(st, dense, y_at(k));
      x = st.x;
    } else {
      BdFilterState st{Vec::Zero(nx), BlockDiagMat::identity(model.n(), model.c(), opts.p0_scale), 0};
      for (Index k = 1; k <= last; ++k)
        st = opts.backend == EkfBackend::bd_fast ? bdkf_fast_step(st, model, y_at(k)).state
                                                 : banded_kf_step(st, model, y_at(k));
      x = st.x;
    }
    errors[t] = x - traj.states.row(last).transpose();
  });

  Vec mean = Vec::Zero(nx);
  for (const auto& e : errors) mean += e;
  mean /= static_cast<double>(opts.trials);
  DenseMat cov = DenseMat::Zero(nx, nx);
  for (const auto& e : errors) {
    const Vec c = e - mean;
    cov.noalias() += c * c.transpose();
  }
  return cov / static_cast<double>(opts.trials - 1);
}

// ---- output ----------------------------------------------------------------

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string decoupling_csv(const std::vector<DecouplingRow>& rows) {
  std::string s = std::string(kDecouplingHeader) + "\n";
  for (const auto& r : rows)
    s += format_double(r.beta) + "," + std::to_string(r.n) + "," + format_double(r.dist_P0) + "," +
         format_double(r.dist_P) + "," + format_double(r.dist_P0_full) + "," +
         (r.converged ? "true" : "false") + "\n";
  return s;
}

std::string speckle_csv(const std::vector<SpeckleRow>& rows) {
  std::string s = std::string(kSpeckleHeader) + "\n";
  for (const auto& r : rows)
    s += std::to_string(r.seed) + "," + std::to_string(r.step) + "," + r.filter + "," +
         format_double(r.mse) + "," + format_double(r.step_time_s) + "\n";
  return s;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string s = std::string(kBenchHeader) + "\n";
  for (const auto& r : rows)
    s += r.filter + "," + std::to_string(r.n) + "," + std::to_string(r.r) + "," +
         format_double(r.median_step_time_s) + "," + std::to_string(r.reps) + "\n";
  return s;
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    f << contents;
    f.flush();
    if (!f) throw std::runtime_error("write to " + tmp.string() + " failed");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw std::runtime_error("cannot rename " + tmp.string() + " to " + path + ": " + ec.message());
  }
}

}  // namespace bdkf
