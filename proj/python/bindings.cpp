#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "bdkf/experiments.hpp"
#include "bdkf/filters.hpp"
#include "bdkf/serialization.hpp"
#include "bdkf/steady_state.hpp"

namespace py = pybind11;
using namespace bdkf;

namespace {

using Blocks = py::array_t<double, py::array::c_style | py::array::forcecast>;

// BlockDiagMat <-> numpy array of shape (n, rows, cols); the storage layouts agree.
Blocks to_numpy(const BlockDiagMat& m) {
  Blocks out({m.n(), m.block_rows(), m.block_cols()});
  std::copy(m.raw().begin(), m.raw().end(), out.mutable_data());
  return out;
}

BlockDiagMat from_numpy(const Blocks& a) {
  if (a.ndim() != 3) throw ShapeError("expected a block array of shape (n, rows, cols)");
  BlockDiagMat m(a.shape(0), a.shape(1), a.shape(2));
  std::copy(a.data(), a.data() + a.size(), m.raw().begin());
  return m;
}

Vec as_vec(const Eigen::Ref<const Vec>& v) { return v; }

SteadyOptions steady_opts(double tol, Index max_iter) {
  SteadyOptions s;
  s.tol = tol;
  s.max_iter = max_iter;
  return s;
}

py::dict prop2_dict(const Prop2Report& r) {
  py::dict alpha;
  alpha["alpha1"] = r.alpha_max.a1;
  alpha["alpha2"] = r.alpha_max.a2;
  alpha["alpha3"] = r.alpha_max.a3;
  alpha["alpha4"] = r.alpha_max.a4;
  alpha["alpha5"] = r.alpha_max.a5;
  alpha["bauer_fike"] = r.alpha_max.bauer_fike;
  alpha["rho"] = r.alpha_max.rho;
  py::dict d;
  d["part1_condition_ok"] = std::vector<bool>(r.part1_condition_ok.begin(), r.part1_condition_ok.end());
  d["part1_bound"] = r.part1_bound;
  d["part1_measured"] = r.part1_measured;
  d["part2_condition_ok"] = r.part2_condition_ok;
  d["part2_bound_P"] = r.part2_bound_P;
  d["part2_bound_Fc"] = r.part2_bound_Fc;
  d["part2_bound_P_simple"] = r.part2_bound_P_simple;
  d["measured_dP_full"] = r.measured_dP_full;
  d["measured_dP_bd"] = r.measured_dP_bd;
  d["measured_dFc_full"] = r.measured_dFc_full;
  d["measured_dFc_bd"] = r.measured_dFc_bd;
  d["alpha_max"] = alpha;
  d["eta"] = r.eta;
  d["bauer_fike_norm"] = r.bauer_fike_norm;
  return d;
}

EkfBackend backend_from(const std::string& name) {
  if (name == "full") return EkfBackend::full;
  if (name == "bd") return EkfBackend::bd_fast;
  if (name == "banded") return EkfBackend::banded;
  throw ValidationError("backend must be one of full, bd, banded");
}

}  // namespace

PYBIND11_MODULE(_bdkf, m) {
  m.doc() = "Block-diagonal Kalman filter core";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<SingularityError>(m, "SingularityError", PyExc_ArithmeticError);
  py::register_exception<ConvergenceError>(m, "ConvergenceError", PyExc_RuntimeError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ArithmeticError);

  py::class_<CoupledSystem>(m, "CoupledSystem")
      .def_property_readonly("n", &CoupledSystem::n)
      .def_readonly("c", &CoupledSystem::c)
      .def_readonly("d", &CoupledSystem::d)
      .def_readonly("r", &CoupledSystem::r)
      .def_readonly("U", &CoupledSystem::U)
      .def("subsystem",
           [](const CoupledSystem& s, Index i) {
             if (i < 0 || i >= s.n()) throw py::index_error("sub-system index out of range");
             const Subsystem& b = s.subsystems[i];
             py::dict d;
             d["F"] = b.F;
             d["H"] = b.H;
             d["V"] = b.V;
             d["R"] = b.R;
             d["G"] = b.G;
             return d;
           })
      .def("to_json", [](const CoupledSystem& s) { return system_to_json(s).dump(); })
      .def("dense", [](const CoupledSystem& s) {
        const DenseModel dm = dense_stack(s);
        py::dict d;
        d["F"] = dm.F;
        d["H"] = dm.H;
        d["V"] = dm.V;
        d["R"] = dm.R;
        d["G"] = dm.G;
        d["Q"] = dm.Q;
        return d;
      });

  m.def("system_from_json", [](const std::string& text) { return system_from_json(Json::parse(text)); });
  m.def("identical_chain", &make_identical_chain, py::arg("beta"), py::arg("n"));
  m.def(
      "random_system",
      [](Index c, Index d, Index r, Index n, double cap, std::uint64_t seed) {
        return make_random_system(c, d, r, n, cap, RngSpec{seed});
      },
      py::arg("c"), py::arg("d"), py::arg("r"), py::arg("n"), py::arg("spectral_radius_cap") = 0.95,
      py::arg("seed") = 0);
  m.def("scale_coupling", &scale_coupling, py::arg("system"), py::arg("factor"));
  m.def("without_coupling", &without_coupling, py::arg("system"));

  m.def(
      "simulate",
      [](const CoupledSystem& s, Index horizon, std::optional<Vec> x0, std::uint64_t seed) {
        const Trajectory t = simulate(s, horizon, x0 ? *x0 : Vec::Zero(s.n() * s.c), RngSpec{seed});
        py::dict d;
        d["states"] = t.states;
        d["inputs"] = t.inputs;
        d["measurements"] = t.measurements;
        return d;
      },
      py::arg("system"), py::arg("horizon"), py::arg("x0") = py::none(), py::arg("seed") = 0);

  // One-step filters. Block-diagonal covariances are (n, c, c) arrays.
  m.def(
      "bd_fast_step",
      [](const CoupledSystem& s, const Eigen::Ref<const Vec>& x, const Blocks& P,
         const Eigen::Ref<const Vec>& y) {
        const BlockModel bm = to_block_model(s);
        const FastStepResult r = bdkf_fast_step({as_vec(x), from_numpy(P), 0}, bm, as_vec(y));
        const InputPosterior post = coupling_posterior(r.work, r.work.innovation);
        py::dict d;
        d["x"] = r.state.x;
        d["P"] = to_numpy(r.state.P);
        d["innovation"] = r.work.innovation;
        d["u_mean"] = post.mu;
        d["u_cov"] = post.sigma;
        return d;
      },
      py::arg("system"), py::arg("x"), py::arg("P"), py::arg("y"));
  m.def(
      "bd_naive_step",
      [](const CoupledSystem& s, const Eigen::Ref<const Vec>& x, const Blocks& P,
         const Eigen::Ref<const Vec>& y) {
        const NaiveStepResult r = bdkf_naive_step({as_vec(x), from_numpy(P), 0}, to_block_model(s), as_vec(y));
        return py::make_tuple(r.state.x, to_numpy(r.state.P), r.gain);
      },
      py::arg("system"), py::arg("x"), py::arg("P"), py::arg("y"));
  m.def(
      "banded_step",
      [](const CoupledSystem& s, const Eigen::Ref<const Vec>& x, const Blocks& P,
         const Eigen::Ref<const Vec>& y) {
        const BdFilterState r = banded_kf_step({as_vec(x), from_numpy(P), 0}, to_block_model(s), as_vec(y));
        return py::make_tuple(r.x, to_numpy(r.P));
      },
      py::arg("system"), py::arg("x"), py::arg("P"), py::arg("y"));
  m.def(
      "full_kf_step",
      [](const Eigen::Ref<const Vec>& x, const DenseMat& P, const DenseMat& F, const DenseMat& H,
         const DenseMat& Q, const DenseMat& R, const Eigen::Ref<const Vec>& y) {
        const DenseFilterState r = full_kf_step({as_vec(x), P, 0}, F, H, Q, R, as_vec(y));
        return py::make_tuple(r.x, r.P);
      },
      py::arg("x"), py::arg("P"), py::arg("F"), py::arg("H"), py::arg("Q"), py::arg("R"), py::arg("y"));

  m.def(
      "solve_dare",
      [](const DenseMat& F, const DenseMat& H, const DenseMat& Q, const DenseMat& R, double tol,
         Index max_iter) {
        const DenseSteadyState s = solve_dare(F, H, Q, R, steady_opts(tol, max_iter));
        py::dict d;
        d["P_minus"] = s.P_minus;
        d["P_plus"] = s.P_plus;
        d["K"] = s.K;
        d["F_c"] = s.F_c;
        d["iterations"] = s.iterations;
        d["warnings"] = s.warnings;
        return d;
      },
      py::arg("F"), py::arg("H"), py::arg("Q"), py::arg("R"), py::arg("tol") = 1e-11,
      py::arg("max_iter") = 200000);
  m.def(
      "solve_bd_dare",
      [](const CoupledSystem& s, double tol, Index max_iter) {
        const BlockModel bm = to_block_model(s);
        const BdSteadyState r = solve_bd_dare(bm, steady_opts(tol, max_iter));
        py::dict d;
        d["P_plus"] = to_numpy(r.P_plus);
        d["L"] = to_numpy(r.L);
        d["iterations"] = r.iterations;
        d["warnings"] = r.warnings;
        if (bm.n() * bm.c() <= SteadyOptions{}.analysis_state_cap) {
          d["P_minus"] = r.P_minus_dense(bm.dyn);
          d["K"] = r.gain.to_dense();
        }
        return d;
      },
      py::arg("system"), py::arg("tol") = 1e-11, py::arg("max_iter") = 200000);
  m.def(
      "prop2_analysis",
      [](const CoupledSystem& s, double tol) {
        SteadyOptions o;
        o.tol = tol;
        return prop2_dict(prop2_analysis(s, o).report);
      },
      py::arg("system"), py::arg("tol") = 1e-11);
  m.def(
      "true_error_cov",
      [](const DenseMat& F, const DenseMat& H, const DenseMat& Q, const DenseMat& R, const DenseMat& K) {
        return true_error_cov(F, H, Q, R, K);
      },
      py::arg("F"), py::arg("H"), py::arg("Q"), py::arg("R"), py::arg("K"));

  m.def(
      "decoupling_study",
      [](std::vector<double> betas, std::vector<Index> ns, Index cap, bool true_error, int threads) {
        DecouplingOptions o;
        o.betas = std::move(betas);
        o.ns = std::move(ns);
        o.full_kf_n_cap = cap;
        o.true_error = true_error;
        o.threads = threads;
        std::vector<DecouplingRow> rows;
        {
          py::gil_scoped_release release;
          rows = decoupling_study(o);
        }
        py::list out;
        for (const auto& r : rows) {
          py::dict d;
          d["beta"] = r.beta;
          d["n"] = r.n;
          d["dist_P0"] = r.dist_P0;
          d["dist_P"] = r.dist_P;
          d["dist_P0_full"] = r.dist_P0_full;
          d["dist_true_P0"] = r.dist_true_P0;
          d["converged"] = r.converged;
          out.append(d);
        }
        return out;
      },
      py::arg("betas"), py::arg("ns"), py::arg("full_kf_n_cap") = 256, py::arg("true_error") = false,
      py::arg("threads") = 1);
  m.def(
      "speckle_study",
      [](Index n_pixels, Index r_modes, Index horizon, std::vector<std::uint64_t> seeds, double drift_scale,
         double photon_scale, bool run_full) {
        SpeckleOptions o;
        o.n_pixels = n_pixels;
        o.r_modes = r_modes;
        o.horizon = horizon;
        o.seeds = std::move(seeds);
        o.drift_scale = drift_scale;
        o.photon_scale = photon_scale;
        o.run_full = run_full;
        std::vector<SpeckleRow> rows;
        {
          py::gil_scoped_release release;
          rows = speckle_study(o);
        }
        return speckle_csv(rows);
      },
      py::arg("n_pixels") = 256, py::arg("r_modes") = 6, py::arg("horizon") = 400,
      py::arg("seeds") = std::vector<std::uint64_t>{1}, py::arg("drift_scale") = SpeckleOptions{}.drift_scale,
      py::arg("photon_scale") = SpeckleOptions{}.photon_scale, py::arg("run_full") = true,
      "Runs the study and returns the CSV text.");
  m.def(
      "monte_carlo_error",
      [](const CoupledSystem& s, const std::string& backend, bool steady_gain, Index trials, Index horizon,
         std::uint64_t seed) {
        MonteCarloOptions o;
        o.backend = backend_from(backend);
        o.gain = steady_gain ? GainSource::steady : GainSource::recursive;
        o.trials = trials;
        o.horizon = horizon;
        py::gil_scoped_release release;
        return monte_carlo_error(s, o, RngSpec{seed});
      },
      py::arg("system"), py::arg("backend") = "full", py::arg("steady_gain") = true, py::arg("trials") = 1000,
      py::arg("horizon") = 200, py::arg("seed") = 0);
  m.def("loglog_slope", &loglog_slope, py::arg("x"), py::arg("y"));
}
