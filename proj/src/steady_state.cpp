#include "bdkf/steady_state.hpp"

#include <cmath>
#include <deque>
#include <limits>

#include "bdkf/linalg.hpp"

namespace bdkf {

namespace {

constexpr size_t kResidualTail = 10;

class ResidualHistory {
 public:
  void push(double r) {
    tail_.push_back(r);
    if (tail_.size() > kResidualTail) tail_.pop_front();
  }
  std::vector<double> tail() const { return {tail_.begin(), tail_.end()}; }
  double last() const { return tail_.empty() ? std::numeric_limits<double>::infinity() : tail_.back(); }

 private:
  std::deque<double> tail_;
};

[[noreturn]] void fail_convergence(const char* op, Index iters, const ResidualHistory& h) {
  throw ConvergenceError(std::string(op) + ": no convergence after " + std::to_string(iters) +
                             " iterations (residual " + std::to_string(h.last()) + ")",
                         h.last(), h.tail());
}

DenseMat joseph(const DenseMat& P_pred, const DenseMat& K, const DenseMat& H, const DenseMat& R) {
  DenseMat IKH = -K * H;
  IKH.diagonal().array() += 1.0;
  DenseMat P = IKH * P_pred * IKH.transpose();
  P.noalias() += K * R * K.transpose();
  return symmetrized(P);
}

DenseMat gain_for(const DenseMat& P_pred, const DenseMat& H, const DenseMat& R, const char* op) {
  DenseMat S = H * P_pred * H.transpose() + R;
  Eigen::LLT<DenseMat> llt(S);
  if (llt.info() != Eigen::Success)
    throw SingularityError(std::string(op) + ": innovation covariance is not positive-definite");
  return llt.solve(H * P_pred).transpose();
}

DenseMat closed_loop(const DenseMat& K, const DenseMat& H, const DenseMat& F) {
  DenseMat IKH = -K * H;
  IKH.diagonal().array() += 1.0;
  return IKH * F;
}

void check_detectable(const DenseMat& F, const DenseMat& H, std::vector<std::string>& warnings,
                      const std::string& where) {
  if (!is_detectable(F, H)) warnings.push_back(where + ": [F, H] is not numerically detectable");
}

bool same_subsystem(const BlockModel& m, Index a, Index b) {
  return m.dyn.F.block(a) == m.dyn.F.block(b) && m.dyn.V.block(a) == m.dyn.V.block(b) &&
         m.dyn.G.block(a) == m.dyn.G.block(b) && m.meas.H.block(a) == m.meas.H.block(b) &&
         m.meas.R.block(a) == m.meas.R.block(b);
}

// ||L + G U G^T||_F for block-diagonal L without forming the dense matrix.
double structured_norm(const BlockDiagMat& L, const TallBlockMat& G, const SmallMat& U) {
  double cross = 0.0;
  for (Index i = 0; i < L.n(); ++i)
    cross += (G.block(i).transpose() * L.block(i) * G.block(i) * U).trace();
  const double gug = coupling_noise_norm(G, U);
  const double sq = L.frobenius_norm() * L.frobenius_norm() + 2.0 * cross + gug * gug;
  return std::sqrt(std::max(sq, 0.0));
}

}  // namespace

DenseSteadyState solve_dare(const DenseMat& F, const DenseMat& H, const DenseMat& Q,
                            const DenseMat& R, const SteadyOptions& opts, const DenseMat* P0) {
  const Index nx = F.rows();
  if (F.cols() != nx || H.cols() != nx || Q.rows() != nx || Q.cols() != nx ||
      R.rows() != H.rows() || R.cols() != H.rows())
    throw ShapeError("solve_dare: shape mismatch");
  if (P0 && (P0->rows() != nx || P0->cols() != nx)) throw ShapeError("solve_dare: P0 shape mismatch");

  DenseSteadyState out;
  if (nx <= opts.analysis_state_cap) check_detectable(F, H, out.warnings, "solve_dare");

  DenseMat P = P0 ? *P0 : Q;
  DenseMat P_pred_prev;
  ResidualHistory history;
  for (Index it = 1; it <= opts.max_iter; ++it) {
    DenseMat P_pred = Q;
    P_pred.noalias() += F * P * F.transpose();
    P_pred = symmetrized(P_pred);
    if (it > 1) {
      const double scale = std::max(P_pred.norm(), std::numeric_limits<double>::min());
      history.push((P_pred - P_pred_prev).norm() / scale);
      if (history.last() <= opts.tol) {
        out.K = gain_for(P_pred, H, R, "solve_dare");
        out.P_plus = joseph(P_pred, out.K, H, R);
        out.F_c = closed_loop(out.K, H, F);
        out.P_minus = std::move(P_pred);
        out.iterations = it;
        out.residual = history.last();
        out.converged = true;
        return out;
      }
    }
    const DenseMat K = gain_for(P_pred, H, R, "solve_dare");
    P = joseph(P_pred, K, H, R);
    P_pred_prev = std::move(P_pred);
  }
  fail_convergence("solve_dare", opts.max_iter, history);
}

DenseMat BdSteadyState::P_minus_dense(const BlockDynamics& dyn) const {
  const DenseMat G = dyn.G.to_dense();
  DenseMat P = L.to_dense();
  P.noalias() += G * dyn.U * G.transpose();
  return P;
}

BdSteadyState solve_bd_dare(const BlockModel& model, const SteadyOptions& opts, const BlockDiagMat* P0) {
  const Index n = model.n();
  const Index c = model.c();
  BdSteadyState out;
  for (Index i = 0; i < n; ++i) {
    if (i > 0 && same_subsystem(model, i, i - 1)) continue;
    check_detectable(model.dyn.F.block(i), model.meas.H.block(i), out.warnings,
                     "solve_bd_dare: sub-system " + std::to_string(i));
  }

  BlockDiagMat P;
  if (P0) {
    if (P0->n() != n || P0->block_rows() != c || P0->block_cols() != c)
      throw ShapeError("solve_bd_dare: P0 shape mismatch");
    P = *P0;
  } else {
    P = BlockDiagMat(n, c, c);
    for (Index i = 0; i < n; ++i) {
      const auto G = model.dyn.G.block(i);
      P.block(i) = model.dyn.V.block(i) + G * model.dyn.U * G.transpose();
    }
  }

  BlockDiagMat L_prev;
  ResidualHistory history;
  for (Index it = 1; it <= opts.max_iter; ++it) {
    CovarianceUpdate cu = bd_covariance_update(P, model.dyn, model.meas);
    if (it > 1) {
      const double scale = std::max(structured_norm(cu.work.L(), model.dyn.G, model.dyn.U),
                                    std::numeric_limits<double>::min());
      history.push(block_fro_distance(cu.work.L(), L_prev) / scale);
      if (history.last() <= opts.tol) {
        out.P_plus = std::move(cu.P);
        out.L = cu.work.L();
        out.gain = std::move(cu.work.gain);
        out.iterations = it;
        out.residual = history.last();
        out.converged = true;
        if (n * c <= opts.analysis_state_cap)
          out.F_c = closed_loop(out.gain.to_dense(), model.meas.H.to_dense(), model.dyn.F.to_dense());
        return out;
      }
    }
    L_prev = cu.work.L();
    P = std::move(cu.P);
  }
  fail_convergence("solve_bd_dare", opts.max_iter, history);
}

BandedSteadyState banded_steady(const BlockModel& model, const SteadyOptions& opts) {
  const Index n = model.n();
  const Index c = model.c();
  const Index d = model.d();
  BandedSteadyState out{BlockDiagMat(n, c, c), BlockDiagMat(n, c, c), BlockDiagMat(n, c, d),
                        BlockDiagMat(n, c, c), 0, true};
  for (Index i = 0; i < n; ++i) {
    if (i > 0 && same_subsystem(model, i, i - 1)) {
      out.P_minus.block(i) = out.P_minus.block(i - 1);
      out.P_plus.block(i) = out.P_plus.block(i - 1);
      out.K.block(i) = out.K.block(i - 1);
      out.F_c.block(i) = out.F_c.block(i - 1);
      continue;
    }
    const auto G = model.dyn.G.block(i);
    const DenseMat Q = model.dyn.V.block(i) + G * model.dyn.U * G.transpose();
    const DenseSteadyState s =
        solve_dare(model.dyn.F.block(i), model.meas.H.block(i), Q, model.meas.R.block(i), opts);
    out.P_minus.block(i) = s.P_minus;
    out.P_plus.block(i) = s.P_plus;
    out.K.block(i) = s.K;
    out.F_c.block(i) = s.F_c;
    out.max_iterations = std::max(out.max_iterations, s.iterations);
  }
  return out;
}

double riccati_residual(const DenseMat& F, const DenseMat& H, const DenseMat& Q, const DenseMat& R,
                        const DenseMat& P_minus, Index block) {
  const DenseMat S = H * P_minus * H.transpose() + R;
  Eigen::LLT<DenseMat> llt(S);
  if (llt.info() != Eigen::Success)
    throw SingularityError("riccati_residual: innovation covariance is not positive-definite");
  const DenseMat HP = H * P_minus;
  DenseMat inner = P_minus - HP.transpose() * llt.solve(HP);
  if (block > 0) inner = project_D(inner, block).to_dense();
  const DenseMat rhs = F * inner * F.transpose() + Q;
  return (rhs - P_minus).norm() / std::max(P_minus.norm(), std::numeric_limits<double>::min());
}

double coupling_noise_norm(const TallBlockMat& G, const SmallMat& U) {
  const SmallMat GtG = tall_reduce(G, BlockDiagMat::identity(G.n(), G.block_rows()));
  const SmallMat M = GtG * U;
  return std::sqrt(std::max((M * M).trace(), 0.0));
}

CouplingSummary compute_C(const BlockModel& model, const BlockDiagMat& P_banded_plus) {
  const Index n = model.n();
  const Index r = model.r();
  if (P_banded_plus.n() != n || P_banded_plus.block_rows() != model.c())
    throw ShapeError("compute_C: covariance shape mismatch");
  SmallMat N = SmallMat::Zero(r, r);
  for (Index i = 0; i < n; ++i) {
    const auto F = model.dyn.F.block(i);
    const auto H = model.meas.H.block(i);
    const auto G = model.dyn.G.block(i);
    const DenseMat L = F * P_banded_plus.block(i) * F.transpose() + model.dyn.V.block(i);
    const DenseMat M = H * L * H.transpose() + model.meas.R.block(i);
    Eigen::LLT<DenseMat> llt(M);
    if (llt.info() != Eigen::Success)
      throw SingularityError("compute_C: block " + std::to_string(i) + " is not positive-definite",
                             static_cast<long>(i));
    const DenseMat HG = H * G;
    N.noalias() += HG.transpose() * llt.solve(HG);
  }
  SmallMat I_UN = model.dyn.U * N;
  I_UN.diagonal().array() += 1.0;
  Eigen::FullPivLU<SmallMat> lu(I_UN);
  if (!lu.isInvertible()) throw SingularityError("compute_C: (I + U N) is singular");

  CouplingSummary out;
  out.C = symmetrized(lu.solve(model.dyn.U));
  out.eps.resize(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const auto G = model.dyn.G.block(i);
    out.eps[i] = (G * out.C * G.transpose()).norm();
  }
  out.eta = coupling_noise_norm(model.dyn.G, model.dyn.U);
  return out;
}

AlphaConstants alpha_constants(const Subsystem& s, const SmallMat& P) {
  const Index c = s.F.rows();
  const DenseMat S = s.H * P * s.H.transpose() + s.R;
  Eigen::LLT<DenseMat> llt(S);
  if (llt.info() != Eigen::Success)
    throw SingularityError("alpha_constants: innovation covariance is not positive-definite");
  const DenseMat K = P * s.H.transpose() * llt.solve(DenseMat::Identity(S.rows(), S.rows()));
  const DenseMat Fc = closed_loop(K, s.H, s.F);

  AlphaConstants a;
  a.rho = spectral_radius(Fc);
  if (a.rho >= 1.0) throw DomainError("alpha_constants: closed loop is not stable");
  a.a1 = 1.0 / (1.0 - a.rho * a.rho);
  a.a2 = spectral_norm(Fc);

  Eigen::LLT<DenseMat> r_llt(s.R);
  if (r_llt.info() != Eigen::Success)
    throw SingularityError("alpha_constants: R is not positive-definite");
  DenseMat info = DenseMat::Identity(c, c) + P * s.H.transpose() * r_llt.solve(s.H);
  a.a3 = spectral_norm(info.inverse());
  const DenseMat HtSinvH = s.H.transpose() * llt.solve(s.H);
  a.a4 = spectral_norm(HtSinvH * s.F);
  a.a5 = spectral_norm(HtSinvH);
  a.bauer_fike = eigenvector_condition(Fc);
  return a;
}

Prop2Report prop2_bounds(const std::vector<AlphaConstants>& alphas, const CouplingSummary& coupling) {
  if (alphas.size() != coupling.eps.size())
    throw ShapeError("prop2_bounds: one set of constants per sub-system required");
  Prop2Report rep;
  const double inf = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < alphas.size(); ++i) {
    const AlphaConstants& a = alphas[i];
    const double eps = coupling.eps[i];
    const double x = a.a3 * a.a4 * eps;
    const double gain = a.a1 * (2.0 * a.a2 + x) * x;
    const bool ok = gain < 1.0 && a.rho + a.bauer_fike * x < 1.0;
    rep.part1_condition_ok.push_back(ok);
    rep.part1_bound.push_back(gain < 1.0 ? a.a1 * a.a2 * a.a2 * eps / (1.0 - gain) : inf);
    rep.part1_measured.push_back(0.0);

    auto& m = rep.alpha_max;
    m.a1 = std::max(m.a1, a.a1);
    m.a2 = std::max(m.a2, a.a2);
    m.a3 = std::max(m.a3, a.a3);
    m.a4 = std::max(m.a4, a.a4);
    m.a5 = std::max(m.a5, a.a5);
    m.bauer_fike = std::max(m.bauer_fike, a.bauer_fike);
    m.rho = std::max(m.rho, a.rho);
  }

  const auto& m = rep.alpha_max;
  rep.eta = coupling.eta;
  const double disc = 4.0 * m.a1 * m.a1 * m.a2 * m.a2 * m.a5 * rep.eta;
  rep.part2_condition_ok = disc < 1.0;
  // (1 - sqrt(1 - 4ab)) / (2b) with a = a1 eta, b = a1 a2^2 a5, in the
  // cancellation-free form 2a / (1 + sqrt(1 - 4ab)).
  rep.part2_bound_P = rep.part2_condition_ok ? 2.0 * m.a1 * rep.eta / (1.0 + std::sqrt(1.0 - disc)) : inf;
  rep.part2_bound_Fc = m.a3 * m.a4 * rep.part2_bound_P;
  rep.part2_bound_P_simple = 2.0 * m.a1 * rep.eta;
  return rep;
}

Prop2Analysis prop2_analysis(const CoupledSystem& sys, const SteadyOptions& opts) {
  Prop2Analysis out;
  const BlockModel model = to_block_model(sys);
  BlockModel uncoupled_model = model;
  uncoupled_model.dyn.U.setZero();

  out.uncoupled = banded_steady(uncoupled_model, opts);
  out.banded = banded_steady(model, opts);
  out.coupling = compute_C(model, out.banded.P_plus);
  out.alphas.reserve(static_cast<size_t>(sys.n()));
  for (Index i = 0; i < sys.n(); ++i) {
    if (i > 0 && same_subsystem(model, i, i - 1)) {
      out.alphas.push_back(out.alphas.back());
      continue;
    }
    out.alphas.push_back(alpha_constants(sys.subsystems[i], out.uncoupled.P_minus.block(i)));
  }
  out.report = prop2_bounds(out.alphas, out.coupling);

  SteadyOptions dense_opts = opts;
  dense_opts.analysis_state_cap = std::max(opts.analysis_state_cap, sys.n() * sys.c);
  out.bd_coupled = solve_bd_dare(model, dense_opts);
  const DenseModel dense = dense_stack(model);
  out.full_coupled = solve_dare(dense.F, dense.H, dense.Q, dense.R, dense_opts);

  auto& rep = out.report;
  for (Index i = 0; i < sys.n(); ++i)
    rep.part1_measured[i] = (out.bd_coupled.P_plus.block(i) - out.uncoupled.P_plus.block(i)).norm();
  const DenseMat P_minus_V = out.uncoupled.P_minus.to_dense();
  const DenseMat Fc_V = out.uncoupled.F_c.to_dense();
  rep.measured_dP_full = (out.full_coupled.P_minus - P_minus_V).norm();
  rep.measured_dP_bd = (out.bd_coupled.P_minus_dense(model.dyn) - P_minus_V).norm();
  rep.measured_dFc_full = (out.full_coupled.F_c - Fc_V).norm();
  rep.measured_dFc_bd = (*out.bd_coupled.F_c - Fc_V).norm();
  return out;
}

DenseMat true_error_cov(const DenseMat& F, const DenseMat& H, const DenseMat& Q, const DenseMat& R,
                        const DenseMat& K, const SteadyOptions& opts) {
  const Index nx = F.rows();
  if (K.rows() != nx || K.cols() != H.rows() || H.cols() != nx || Q.rows() != nx ||
      R.rows() != H.rows())
    throw ShapeError("true_error_cov: shape mismatch");
  if (nx > kDenseStateLimit) throw ValidationError("true_error_cov: state dimension too large");

  DenseMat IKH = -K * H;
  IKH.diagonal().array() += 1.0;
  const DenseMat A = IKH * F;
  const double rho = spectral_radius(A);
  if (rho >= 1.0)
    throw DomainError("true_error_cov: closed loop (I - K H) F is unstable (spectral radius " +
                      std::to_string(rho) + ")");

  // S <- A S A^T + W with A = (I-KH) F and W = (I-KH) Q (I-KH)^T + K R K^T.
  DenseMat W = IKH * Q * IKH.transpose();
  W.noalias() += K * R * K.transpose();
  W = symmetrized(W);
  DenseMat S = W;
  ResidualHistory history;
  for (Index it = 1; it <= opts.max_iter; ++it) {
    DenseMat next = W;
    next.noalias() += A * S * A.transpose();
    next = symmetrized(next);
    history.push((next - S).norm() / std::max(next.norm(), std::numeric_limits<double>::min()));
    S = std::move(next);
    if (history.last() <= opts.tol) return S;
  }
  fail_convergence("true_error_cov", opts.max_iter, history);
}

}  // namespace bdkf
