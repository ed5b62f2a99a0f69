#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "bdkf/experiments.hpp"
#include "bdkf/serialization.hpp"
#include "bdkf/steady_state.hpp"

namespace bdkf::cli {

namespace {

namespace fs = std::filesystem;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Flags {
  std::string config;
  std::string out = ".";
  std::uint64_t seed = 0;
  int threads = 0;
  double beta = 0.0;
  Index n = 0;
  Index horizon = 0;
  Index seeds = 0;
  double tol = 0.0;
  std::set<std::string> given;  // flags present on the command line

  bool has(const std::string& name) const { return given.contains(name); }
};

struct Context {
  std::string command;
  Flags flags;
  Json cfg;  // defaults merged with the config file and flags
  int threads = 1;
  fs::path out_dir;
  std::ostream& out;
  std::ostream& err;
};

Json load_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path);
  try {
    return Json::parse(f);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
}

Json command_defaults(const std::string& cmd) {
  if (cmd == "simulate") return {{"system", nullptr}, {"horizon", 100}, {"seed", 0}, {"x0", nullptr}};
  if (cmd == "decouple") {
    DecouplingOptions d;
    return {{"betas", d.betas},     {"ns", d.ns},
            {"full_kf_n_cap", d.full_kf_n_cap}, {"tol", d.steady.tol},
            {"max_iter", d.steady.max_iter},    {"true_error", d.true_error},
            {"seed", 0}};
  }
  if (cmd == "speckle") {
    SpeckleOptions s;
    return {{"n_pixels", s.n_pixels},         {"r_modes", s.r_modes},
            {"horizon", s.horizon},           {"seeds", s.seeds.size()},
            {"seed", s.seeds.front()},        {"drift_scale", s.drift_scale},
            {"photon_scale", s.photon_scale}, {"probe_factor", s.probe_factor},
            {"init_error", s.init_error},     {"intensity_floor", s.intensity_floor},
            {"run_full", s.run_full}};
  }
  if (cmd == "bench") {
    BenchOptions b;
    return {{"ns_fast", b.ns_fast}, {"ns_full", b.ns_full}, {"rs", b.rs},
            {"c", b.c},             {"d", b.d},             {"reps", b.reps},
            {"min_rep_seconds", b.min_rep_seconds},         {"seed", b.seed}};
  }
  if (cmd == "steady") {
    SteadyOptions s;
    return {{"system", nullptr}, {"tol", s.tol}, {"max_iter", s.max_iter}, {"seed", 0}};
  }
  throw ConfigError("unknown command " + cmd);
}

// Defaults, then the config file, then flags. Unknown keys are rejected.
Json resolve_config(const std::string& cmd, const Flags& flags) {
  Json cfg = command_defaults(cmd);
  if (!flags.config.empty()) {
    const Json file = load_json_file(flags.config);
    if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
    for (const auto& [key, value] : file.items()) {
      if (key == "command") {
        if (value != cmd) throw ConfigError("config file is for command " + value.dump() + ", not " + cmd);
        continue;
      }
      if (key == "threads") continue;  // recorded in sidecars, never affects results
      if (!cfg.contains(key)) throw ConfigError("unknown config key \"" + key + "\" for " + cmd);
      cfg[key] = value;
    }
  }
  auto unsupported = [&](const std::string& flag) {
    throw ConfigError("flag --" + flag + " does not apply to " + cmd);
  };
  if (flags.has("seed")) cfg["seed"] = flags.seed;
  if (flags.has("tol")) {
    if (!cfg.contains("tol")) unsupported("tol");
    cfg["tol"] = flags.tol;
  }
  if (flags.has("horizon")) {
    if (!cfg.contains("horizon")) unsupported("horizon");
    cfg["horizon"] = flags.horizon;
  }
  if (flags.has("seeds")) {
    if (cmd != "speckle") unsupported("seeds");
    cfg["seeds"] = flags.seeds;
  }
  if (flags.has("beta") || flags.has("n")) {
    if (cmd == "decouple") {
      if (flags.has("beta")) cfg["betas"] = Json::array({flags.beta});
      if (flags.has("n")) cfg["ns"] = Json::array({flags.n});
    } else if (cmd == "simulate" || cmd == "steady") {
      Json& sys = cfg["system"];
      if (!sys.is_object() || !sys.contains("generator"))
        throw ConfigError("--beta/--n apply only to a generator system spec");
      if (flags.has("beta")) sys["beta"] = flags.beta;
      if (flags.has("n")) sys["n"] = flags.n;
    } else if (cmd == "speckle" && !flags.has("beta")) {
      cfg["n_pixels"] = flags.n;
    } else if (cmd == "bench" && !flags.has("beta")) {
      cfg["ns_fast"] = Json::array({flags.n});
    } else {
      unsupported(flags.has("beta") ? "beta" : "n");
    }
  }
  return cfg;
}

template <typename T>
T get(const Json& cfg, const std::string& key) {
  try {
    return cfg.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError("config key \"" + key + "\" has the wrong type or is missing");
  }
}

CoupledSystem load_system(Json& cfg) {
  Json& spec = cfg["system"];
  if (spec.is_null()) throw ConfigError("missing required field \"system\"");
  if (spec.is_string()) spec = load_json_file(spec.get<std::string>());
  return system_from_json(spec);
}

Json sidecar(const Context& ctx) {
  Json j;
  j["command"] = ctx.command;
  j["config"] = ctx.cfg;
  j["config"]["command"] = ctx.command;
  j["seed"] = ctx.cfg.at("seed");
  j["threads"] = ctx.threads;
  return j;
}

void write_outputs(const Context& ctx, const std::string& stem, const std::string& csv, const Json& side) {
  write_file_atomic((ctx.out_dir / (stem + ".csv")).string(), csv);
  write_file_atomic((ctx.out_dir / (stem + ".json")).string(), side.dump(2) + "\n");
  ctx.err << "wrote " << (ctx.out_dir / (stem + ".csv")).string() << "\n";
}

SteadyOptions steady_options(const Json& cfg) {
  SteadyOptions s;
  s.tol = get<double>(cfg, "tol");
  s.max_iter = get<Index>(cfg, "max_iter");
  if (!(s.tol > 0.0)) throw ConfigError("tol must be > 0");
  if (s.max_iter < 1) throw ConfigError("max_iter must be >= 1");
  return s;
}

ProgressFn progress_to(std::ostream& err) {
  return [&err](const std::string& msg) { err << msg << std::endl; };
}

int cmd_simulate(Context& ctx) {
  const CoupledSystem sys = load_system(ctx.cfg);
  const Index horizon = get<Index>(ctx.cfg, "horizon");
  const Index nx = sys.n() * sys.c;
  Vec x0 = Vec::Zero(nx);
  if (!ctx.cfg["x0"].is_null()) {
    const auto v = get<std::vector<double>>(ctx.cfg, "x0");
    if (static_cast<Index>(v.size()) != nx) throw ConfigError("x0 must have length n*c");
    x0 = Eigen::Map<const Vec>(v.data(), nx);
  }
  const Trajectory traj = simulate(sys, horizon, x0, RngSpec{get<std::uint64_t>(ctx.cfg, "seed")});

  std::string csv = "step";
  for (Index a = 0; a < traj.states.cols(); ++a) csv += ",x_" + std::to_string(a);
  for (Index a = 0; a < traj.measurements.cols(); ++a) csv += ",y_" + std::to_string(a);
  for (Index a = 0; a < traj.inputs.cols(); ++a) csv += ",u_" + std::to_string(a);
  csv += "\n";
  for (Index k = 0; k < horizon; ++k) {
    csv += std::to_string(k);
    for (Index a = 0; a < traj.states.cols(); ++a) csv += "," + format_double(traj.states(k, a));
    for (Index a = 0; a < traj.measurements.cols(); ++a) csv += "," + format_double(traj.measurements(k, a));
    for (Index a = 0; a < traj.inputs.cols(); ++a) csv += "," + format_double(traj.inputs(k, a));
    csv += "\n";
  }
  write_outputs(ctx, "trajectory", csv, sidecar(ctx));
  return kExitOk;
}

int cmd_decouple(Context& ctx) {
  DecouplingOptions o;
  o.betas = get<std::vector<double>>(ctx.cfg, "betas");
  o.ns = get<std::vector<Index>>(ctx.cfg, "ns");
  o.full_kf_n_cap = get<Index>(ctx.cfg, "full_kf_n_cap");
  o.true_error = get<bool>(ctx.cfg, "true_error");
  o.steady = steady_options(ctx.cfg);
  o.threads = ctx.threads;
  o.progress = progress_to(ctx.err);
  const auto rows = decoupling_study(o);

  Json side = sidecar(ctx);
  Json extra = Json::array();
  for (const auto& r : rows) {
    Json e = {{"beta", r.beta},
              {"n", r.n},
              {"iterations_bd", r.iterations_bd},
              {"iterations_full", r.iterations_full},
              {"converged", r.converged}};
    if (std::isfinite(r.dist_true_P0)) e["dist_true_P0"] = r.dist_true_P0;
    if (!r.error.empty()) e["error"] = r.error;
    extra.push_back(std::move(e));
  }
  side["rows"] = std::move(extra);
  const double critical = critical_beta(rows, 32);
  side["critical_beta"] = std::isfinite(critical) ? Json(critical) : Json(nullptr);
  write_outputs(ctx, "decoupling", decoupling_csv(rows), side);
  return kExitOk;
}

int cmd_speckle(Context& ctx) {
  SpeckleOptions o;
  o.n_pixels = get<Index>(ctx.cfg, "n_pixels");
  o.r_modes = get<Index>(ctx.cfg, "r_modes");
  o.horizon = get<Index>(ctx.cfg, "horizon");
  o.drift_scale = get<double>(ctx.cfg, "drift_scale");
  o.photon_scale = get<double>(ctx.cfg, "photon_scale");
  o.probe_factor = get<double>(ctx.cfg, "probe_factor");
  o.init_error = get<double>(ctx.cfg, "init_error");
  o.intensity_floor = get<double>(ctx.cfg, "intensity_floor");
  o.run_full = get<bool>(ctx.cfg, "run_full");
  const Json& seeds = ctx.cfg.at("seeds");
  if (seeds.is_array()) {
    o.seeds = get<std::vector<std::uint64_t>>(ctx.cfg, "seeds");
  } else {
    const auto count = get<Index>(ctx.cfg, "seeds");
    if (count < 1) throw ConfigError("seeds must be >= 1");
    const auto base = get<std::uint64_t>(ctx.cfg, "seed");
    o.seeds.clear();
    for (Index s = 0; s < count; ++s) o.seeds.push_back(base + static_cast<std::uint64_t>(s));
    ctx.cfg["seeds"] = o.seeds;  // the sidecar records the explicit list
  }
  o.threads = ctx.threads;
  o.progress = progress_to(ctx.err);
  const auto rows = speckle_study(o);
  const SpeckleSummary s = summarize_speckle(rows, o.horizon);

  Json side = sidecar(ctx);
  auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  side["summary"] = {{"steady_mse_full", num(s.steady_mse_full)},
                     {"steady_mse_bd", num(s.steady_mse_bd)},
                     {"steady_mse_banded", num(s.steady_mse_banded)},
                     {"step_time_full", num(s.step_time_full)},
                     {"step_time_bd", num(s.step_time_bd)},
                     {"step_time_banded", num(s.step_time_banded)}};
  write_outputs(ctx, "speckle", speckle_csv(rows), side);
  return kExitOk;
}

int cmd_bench(Context& ctx) {
  BenchOptions o;
  o.ns_fast = get<std::vector<Index>>(ctx.cfg, "ns_fast");
  o.ns_full = get<std::vector<Index>>(ctx.cfg, "ns_full");
  o.rs = get<std::vector<Index>>(ctx.cfg, "rs");
  o.c = get<Index>(ctx.cfg, "c");
  o.d = get<Index>(ctx.cfg, "d");
  o.reps = get<Index>(ctx.cfg, "reps");
  o.min_rep_seconds = get<double>(ctx.cfg, "min_rep_seconds");
  o.seed = get<std::uint64_t>(ctx.cfg, "seed");
  o.progress = progress_to(ctx.err);
  const BenchResult res = scaling_benchmark(o);

  Json side = sidecar(ctx);
  auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  side["slope_bdkf_fast"] = num(res.slope_fast);
  side["slope_full_kf"] = num(res.slope_full);
  write_outputs(ctx, "bench", bench_csv(res.rows), side);
  return kExitOk;
}

Json alphas_to_json(const AlphaConstants& a) {
  return {{"alpha1", a.a1}, {"alpha2", a.a2}, {"alpha3", a.a3}, {"alpha4", a.a4},
          {"alpha5", a.a5}, {"bauer_fike", a.bauer_fike}, {"rho", a.rho}};
}

Json prop2_to_json(const Prop2Report& r) {
  auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  Json bounds = Json::array();
  for (double b : r.part1_bound) bounds.push_back(num(b));
  std::vector<bool> ok(r.part1_condition_ok.begin(), r.part1_condition_ok.end());
  return {{"part1", {{"condition_ok", ok}, {"bound", bounds}, {"measured", r.part1_measured}}},
          {"part2",
           {{"condition_ok", r.part2_condition_ok},
            {"bound_P", num(r.part2_bound_P)},
            {"bound_Fc", num(r.part2_bound_Fc)},
            {"bound_P_simple", r.part2_bound_P_simple},
            {"measured_dP_full", r.measured_dP_full},
            {"measured_dP_bd", r.measured_dP_bd},
            {"measured_dFc_full", r.measured_dFc_full},
            {"measured_dFc_bd", r.measured_dFc_bd}}},
          {"alpha_max", alphas_to_json(r.alpha_max)},
          {"eta", r.eta},
          {"bauer_fike_norm", r.bauer_fike_norm}};
}

int cmd_steady(Context& ctx) {
  const CoupledSystem sys = load_system(ctx.cfg);
  const SteadyOptions so = steady_options(ctx.cfg);
  const Prop2Analysis a = prop2_analysis(sys, so);
  const BlockModel model = to_block_model(sys);

  Json j = sidecar(ctx);
  j["P_minus"] = matrix_to_json(a.full_coupled.P_minus);
  j["P_plus"] = matrix_to_json(a.full_coupled.P_plus);
  j["P_tilde_minus"] = matrix_to_json(a.bd_coupled.P_minus_dense(model.dyn));
  j["P_tilde_plus"] = block_diag_to_json(a.bd_coupled.P_plus);
  j["P_banded_plus"] = block_diag_to_json(a.banded.P_plus);
  j["P_minus_decoupled"] = matrix_to_json(a.uncoupled.P_minus.to_dense());
  j["iterations"] = {{"full", a.full_coupled.iterations}, {"bd", a.bd_coupled.iterations}};
  Json warnings = a.full_coupled.warnings;
  for (const auto& w : a.bd_coupled.warnings) warnings.push_back(w);
  j["warnings"] = warnings;
  j["coupling"] = {{"C", matrix_to_json(a.coupling.C)}, {"eps", a.coupling.eps}, {"eta", a.coupling.eta}};
  j["prop2"] = prop2_to_json(a.report);
  for (const auto& w : warnings) ctx.err << "warning: " << w.get<std::string>() << "\n";
  write_file_atomic((ctx.out_dir / "steady.json").string(), j.dump(2) + "\n");
  ctx.err << "wrote " << (ctx.out_dir / "steady.json").string() << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Block-diagonal Kalman filter experiments", "bdkf"};
  app.require_subcommand(1);
  Flags flags;
  // Every subcommand binds the same flag set; only one is parsed.
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--out", flags.out, "output directory");
    sub->add_option("--seed", flags.seed, "random seed");
    sub->add_option("--threads", flags.threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--beta", flags.beta, "chain parameter beta");
    sub->add_option("--n", flags.n, "number of sub-systems")->check(CLI::PositiveNumber);
    sub->add_option("--horizon", flags.horizon, "steps")->check(CLI::PositiveNumber);
    sub->add_option("--seeds", flags.seeds, "number of seeds")->check(CLI::PositiveNumber);
    sub->add_option("--tol", flags.tol, "fixed-point tolerance")->check(CLI::PositiveNumber);
  };
  std::vector<std::pair<std::string, CLI::App*>> subs;
  for (const char* name : {"simulate", "decouple", "speckle", "bench", "steady"}) {
    CLI::App* sub = app.add_subcommand(name);
    add_common(sub);
    subs.emplace_back(name, sub);
  }
  subs[0].second->description("simulate a trajectory of a coupled system");
  subs[1].second->description("decoupling sweep over beta and n");
  subs[2].second->description("speckle tracking with the full, block-diagonal and banded EKFs");
  subs[3].second->description("step-time scaling benchmark");
  subs[4].second->description("steady states and perturbation bounds");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  std::string command;
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  for (auto& [name, sub] : subs) {
    if (!sub->parsed()) continue;
    command = name;
    for (const char* opt : {"seed", "threads", "beta", "n", "horizon", "seeds", "tol"})
      if (sub->count(std::string("--") + opt) > 0) flags.given.insert(opt);
  }

  try {
    Json cfg = resolve_config(command, flags);
    const int threads = flags.has("threads") ? flags.threads : default_thread_count();
    std::error_code ec;
    fs::create_directories(flags.out, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + flags.out + ": " + ec.message());
    Context ctx{command, flags, std::move(cfg), threads, fs::path(flags.out), out, err};
    if (command == "simulate") return cmd_simulate(ctx);
    if (command == "decouple") return cmd_decouple(ctx);
    if (command == "speckle") return cmd_speckle(ctx);
    if (command == "bench") return cmd_bench(ctx);
    return cmd_steady(ctx);
  } catch (const ConfigError& e) {
    err << "bdkf " << command << ": config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {  // ValidationError, ShapeError
    err << "bdkf " << command << ": config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Json::exception& e) {
    err << "bdkf " << command << ": config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ConvergenceError& e) {
    err << "bdkf " << command << ": numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const SingularityError& e) {
    err << "bdkf " << command << ": numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const DomainError& e) {
    err << "bdkf " << command << ": numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "bdkf " << command << ": error: " << e.what() << "\n";
    return kExitError;
  }
}

}  // namespace bdkf::cli
