#include "bdkf/filters.hpp"

#include <string>

namespace bdkf {

namespace {

using Eigen::Dynamic;
using Eigen::RowMajor;

// Stack-allocated per-block temporaries.
using BlockTmp = Eigen::Matrix<double, Dynamic, Dynamic, RowMajor, kMaxBlockDim, kMaxBlockDim>;
using TallTmp = Eigen::Matrix<double, Dynamic, Dynamic, RowMajor, kMaxBlockDim, kMaxInputDim>;
using BlockVec = Eigen::Matrix<double, Dynamic, 1, 0, kMaxBlockDim, 1>;

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

void check_block_model(const BlockDynamics& dyn, const BlockMeasurement& meas, const char* op) {
  const Index n = dyn.F.n();
  const Index c = dyn.F.block_rows();
  const Index d = meas.H.block_rows();
  const Index r = dyn.G.cols();
  const std::string tag = std::string(op) + ": ";
  require(dyn.F.block_cols() == c, tag + "F blocks must be square");
  require(dyn.V.n() == n && dyn.V.block_rows() == c && dyn.V.block_cols() == c, tag + "V shape");
  require(dyn.G.n() == n && dyn.G.block_rows() == c, tag + "G shape");
  require(dyn.U.rows() == r && dyn.U.cols() == r, tag + "U shape");
  require(meas.H.n() == n && meas.H.block_cols() == c, tag + "H shape");
  require(meas.R.n() == n && meas.R.block_rows() == d && meas.R.block_cols() == d, tag + "R shape");
}

void check_state(const Vec& x, const BlockDiagMat& P, const BlockDynamics& dyn, const char* op) {
  const std::string tag = std::string(op) + ": ";
  require(x.size() == dyn.F.rows(), tag + "state length mismatch");
  require(P.n() == dyn.F.n() && P.block_rows() == dyn.F.block_rows() &&
              P.block_cols() == dyn.F.block_rows(),
          tag + "covariance shape mismatch");
}

void check_small_dims(Index c, Index d, Index r, const char* op) {
  if (c > kMaxBlockDim || d > kMaxBlockDim || r > kMaxInputDim)
    throw ShapeError(std::string(op) + ": block dimensions exceed compiled limits (c, d <= " +
                     std::to_string(kMaxBlockDim) + ", r <= " + std::to_string(kMaxInputDim) + ")");
}

template <typename M>
void symmetrize_in_place(M&& m) {
  for (Index a = 0; a < m.rows(); ++a)
    for (Index b = a + 1; b < m.cols(); ++b) {
      const double avg = 0.5 * (m(a, b) + m(b, a));
      m(a, b) = avg;
      m(b, a) = avg;
    }
}

SingularityError not_pd(const char* op, const char* what, Index block) {
  return SingularityError(std::string(op) + ": " + what + " block " + std::to_string(block) +
                              " is not positive-definite",
                          static_cast<long>(block));
}

// y - H F x, and F x.
std::pair<Vec, Vec> predict_and_innovate(const Vec& x, const BlockDiagMat& F, const BlockDiagMat& H,
                                         const Vec& y) {
  Vec x_pred = F.apply(x);
  Vec innovation = y - H.apply(x_pred);
  return {std::move(x_pred), std::move(innovation)};
}

}  // namespace

Vec FactoredGain::project_input(const Vec& z) const { return MinvHG.apply_transpose(z); }

Vec FactoredGain::apply(const Vec& z) const {
  const Index n = L.n();
  const Index c = L.block_rows();
  const Index d = HtMinv.block_cols();
  require(z.size() == n * d, "FactoredGain::apply: vector length mismatch");
  const Vec s = project_input(z);
  const Vec t1 = C1 * s;
  const Vec t3 = C3 * s;
  Vec out(n * c);
  for (Index i = 0; i < n; ++i) {
    BlockVec w = HtMinv.block(i).lazyProduct(z.segment(i * d, d));
    out.segment(i * c, c) = L.block(i).lazyProduct(w) - B.block(i).lazyProduct(t1) -
                            G.block(i).lazyProduct(t3);
  }
  return out;
}

DenseMat FactoredGain::to_dense() const {
  const DenseMat Gd = G.to_dense();
  DenseMat left = L.to_dense();
  left.noalias() -= B.to_dense() * C1 * Gd.transpose();
  left.noalias() -= Gd * C3 * Gd.transpose();
  return left * HtMinv.to_dense();
}

DenseFilterState full_kf_step(const DenseFilterState& st, const DenseMat& F, const DenseMat& H,
                              const DenseMat& Q, const DenseMat& R, const Vec& y) {
  const Index nx = F.rows();
  const Index ny = H.rows();
  require(F.cols() == nx && st.x.size() == nx && st.P.rows() == nx && st.P.cols() == nx,
          "full_kf_step: state/transition shape mismatch");
  require(H.cols() == nx && Q.rows() == nx && Q.cols() == nx && R.rows() == ny && R.cols() == ny &&
              y.size() == ny,
          "full_kf_step: model shape mismatch");

  const bool identity_F = F.isIdentity(0.0);
  Vec x_pred = identity_F ? st.x : Vec(F * st.x);
  DenseMat P_pred = Q;
  if (identity_F) {
    P_pred += st.P;
  } else {
    P_pred.noalias() += F * st.P * F.transpose();
  }
  P_pred = 0.5 * (P_pred + P_pred.transpose()).eval();

  const DenseMat HP = H * P_pred;
  DenseMat S = R;
  S.noalias() += HP * H.transpose();
  Eigen::LLT<DenseMat> llt(S);
  if (llt.info() != Eigen::Success)
    throw SingularityError("full_kf_step: innovation covariance is not positive-definite");
  const DenseMat K = llt.solve(HP).transpose();

  DenseFilterState out;
  out.k = st.k + 1;
  out.x = x_pred + K * (y - H * x_pred);

  DenseMat IKH = -K * H;
  IKH.diagonal().array() += 1.0;
  out.P.noalias() = IKH * P_pred * IKH.transpose();
  out.P.noalias() += K * R * K.transpose();
  out.P = 0.5 * (out.P + out.P.transpose()).eval();
  return out;
}

DenseFilterState full_kf_step(const DenseFilterState& st, const DenseModel& model, const Vec& y) {
  return full_kf_step(st, model.F, model.H, model.Q, model.R, y);
}

BdFilterState banded_kf_step(const BdFilterState& st, const BlockDynamics& dyn,
                             const BlockMeasurement& meas, const Vec& y) {
  check_block_model(dyn, meas, "banded_kf_step");
  check_state(st.x, st.P, dyn, "banded_kf_step");
  const Index n = dyn.F.n();
  const Index c = dyn.F.block_rows();
  const Index d = meas.H.block_rows();
  const Index r = dyn.G.cols();
  check_small_dims(c, d, r, "banded_kf_step");
  require(y.size() == n * d, "banded_kf_step: measurement length mismatch");

  BdFilterState out{Vec(n * c), BlockDiagMat(n, c, c), st.k + 1};
  for (Index i = 0; i < n; ++i) {
    const auto F = dyn.F.block(i);
    const auto H = meas.H.block(i);
    const auto G = dyn.G.block(i);
    TallTmp GU = G.lazyProduct(dyn.U);
    BlockTmp FP = F.lazyProduct(st.P.block(i));
    BlockTmp P_pred = FP.lazyProduct(F.transpose()) + dyn.V.block(i) + GU.lazyProduct(G.transpose());
    symmetrize_in_place(P_pred);
    BlockTmp HP = H.lazyProduct(P_pred);
    BlockTmp S = HP.lazyProduct(H.transpose()) + meas.R.block(i);
    Eigen::LLT<BlockTmp> llt(S);
    if (llt.info() != Eigen::Success) throw not_pd("banded_kf_step", "innovation covariance", i);
    BlockTmp Kt = llt.solve(HP);  // (P_pred H^T S^{-1})^T
    BlockVec x_pred = F.lazyProduct(st.x.segment(i * c, c));
    BlockVec e = y.segment(i * d, d) - H.lazyProduct(x_pred);
    out.x.segment(i * c, c) = x_pred + Kt.transpose().lazyProduct(e);
    auto P = out.P.block(i);
    P = P_pred - Kt.transpose().lazyProduct(HP);
    symmetrize_in_place(P);
  }
  return out;
}

NaiveStepResult bdkf_naive_step(const BdFilterState& st, const BlockDynamics& dyn,
                                const BlockMeasurement& meas, const Vec& y) {
  check_block_model(dyn, meas, "bdkf_naive_step");
  check_state(st.x, st.P, dyn, "bdkf_naive_step");
  const DenseMat F = dyn.F.to_dense();
  const DenseMat H = meas.H.to_dense();
  const DenseMat G = dyn.G.to_dense();
  require(y.size() == H.rows(), "bdkf_naive_step: measurement length mismatch");

  DenseMat P_pred = dyn.V.to_dense();
  P_pred.noalias() += F * st.P.to_dense() * F.transpose();
  P_pred.noalias() += G * dyn.U * G.transpose();
  DenseMat S = meas.R.to_dense();
  S.noalias() += H * P_pred * H.transpose();
  Eigen::LLT<DenseMat> llt(S);
  if (llt.info() != Eigen::Success)
    throw SingularityError("bdkf_naive_step: innovation covariance is not positive-definite");
  DenseMat K = llt.solve(H * P_pred).transpose();

  DenseMat IKH = -K * H;
  IKH.diagonal().array() += 1.0;
  const DenseMat P_post = IKH * P_pred;

  NaiveStepResult out;
  out.state.k = st.k + 1;
  const Vec x_pred = F * st.x;
  out.state.x = x_pred + K * (y - H * x_pred);
  out.state.P = project_D(P_post, dyn.F.block_rows());
  out.state.P.symmetrize();
  out.gain = std::move(K);
  return out;
}

CovarianceUpdate bd_covariance_update(const BlockDiagMat& P_prev, const BlockDynamics& dyn,
                                      const BlockMeasurement& meas) {
  check_block_model(dyn, meas, "bdkf_fast_step");
  const Index n = dyn.F.n();
  const Index c = dyn.F.block_rows();
  const Index d = meas.H.block_rows();
  const Index r = dyn.G.cols();
  check_small_dims(c, d, r, "bdkf_fast_step");
  require(P_prev.n() == n && P_prev.block_rows() == c && P_prev.block_cols() == c,
          "bdkf_fast_step: covariance shape mismatch");

  CovarianceUpdate out{BlockDiagMat(n, c, c), {}};
  FastStepWork& w = out.work;
  FactoredGain& g = w.gain;
  g.L = BlockDiagMat(n, c, c);
  g.HtMinv = BlockDiagMat(n, c, d);
  g.B = TallBlockMat(n, c, r);
  g.G = dyn.G;
  g.MinvHG = TallBlockMat(n, d, r);
  w.M = BlockDiagMat(n, d, d);
  w.A = BlockDiagMat(n, c, c);
  w.N = SmallMat::Zero(r, r);

  // Per-block pass: L, M, A, B, M^{-1} H G and the reduction N.
  for (Index i = 0; i < n; ++i) {
    const auto F = dyn.F.block(i);
    const auto H = meas.H.block(i);
    const auto G = dyn.G.block(i);
    auto L = g.L.block(i);
    auto M = w.M.block(i);

    BlockTmp FP = F.lazyProduct(P_prev.block(i));
    L = FP.lazyProduct(F.transpose()) + dyn.V.block(i);
    symmetrize_in_place(L);
    BlockTmp HL = H.lazyProduct(L);  // d x c; also (L H^T)^T
    M = HL.lazyProduct(H.transpose()) + meas.R.block(i);
    symmetrize_in_place(M);

    Eigen::LLT<BlockTmp> llt{BlockTmp(M)};
    if (llt.info() != Eigen::Success) throw not_pd("bdkf_fast_step", "M", i);

    TallTmp HG = H.lazyProduct(G);
    auto Y = g.MinvHG.block(i);
    Y = llt.solve(HG);
    w.N.noalias() += HG.transpose().lazyProduct(Y);

    BlockTmp MinvH = llt.solve(BlockTmp(H));
    g.HtMinv.block(i) = MinvH.transpose();
    g.B.block(i) = HL.transpose().lazyProduct(Y);
    BlockTmp MinvHL = llt.solve(HL);
    auto A = w.A.block(i);
    A = L - HL.transpose().lazyProduct(MinvHL);
    symmetrize_in_place(A);
  }
  symmetrize_in_place(w.N);

  // r x r algebra. C1 = (U^{-1} + N)^{-1} is evaluated as (I + U N)^{-1} U,
  // which stays defined for singular U; I + U N is always invertible for PSD U, N.
  const SmallMat& U = dyn.U;
  SmallMat I_UN = U * w.N;
  I_UN.diagonal().array() += 1.0;
  Eigen::FullPivLU<SmallMat> lu(I_UN);
  if (!lu.isInvertible())
    throw SingularityError("bdkf_fast_step: (I + U N) is singular; U or N is not PSD");
  g.C1 = lu.solve(U);
  symmetrize_in_place(g.C1);
  w.C2 = U * (w.N * g.C1 * w.N - w.N) * U + U;
  symmetrize_in_place(w.C2);
  g.C3 = U * w.N * g.C1 - U;

  // Diagonal blocks of A + B C1 B^T + G C2 G^T + G C3 B^T + B C3^T G^T,
  // grouped as A + (B C1 + G C3) B^T + (G C2 + B C3^T) G^T.
  const SmallMat C3t = g.C3.transpose();
  for (Index i = 0; i < n; ++i) {
    const auto B = g.B.block(i);
    const auto G = dyn.G.block(i);
    TallTmp T1 = B.lazyProduct(g.C1) + G.lazyProduct(g.C3);
    TallTmp T2 = G.lazyProduct(w.C2) + B.lazyProduct(C3t);
    auto P = out.P.block(i);
    P = w.A.block(i) + T1.lazyProduct(B.transpose()) + T2.lazyProduct(G.transpose());
    symmetrize_in_place(P);
  }
  return out;
}

FastStepResult bdkf_fast_step(const BdFilterState& st, const BlockDynamics& dyn,
                              const BlockMeasurement& meas, const Vec& y) {
  check_state(st.x, st.P, dyn, "bdkf_fast_step");
  require(y.size() == meas.H.rows(), "bdkf_fast_step: measurement length mismatch");
  CovarianceUpdate cu = bd_covariance_update(st.P, dyn, meas);
  auto [x_pred, innovation] = predict_and_innovate(st.x, dyn.F, meas.H, y);

  FastStepResult out;
  out.state.k = st.k + 1;
  out.state.x = x_pred + cu.work.gain.apply(innovation);
  out.state.P = std::move(cu.P);
  out.work = std::move(cu.work);
  out.work.innovation = std::move(innovation);
  return out;
}

InputPosterior coupling_posterior(const FastStepWork& work, const Vec& innovation) {
  require(innovation.size() == work.gain.MinvHG.rows(),
          "coupling_posterior: innovation length mismatch");
  return {-work.gain.C3 * work.gain.project_input(innovation), work.gain.C1};
}

PoissonLinearization ekf_linearize_poisson(std::span<const std::complex<double>> E,
                                           std::span<const std::complex<double>> dE, double floor) {
  require(E.size() == dE.size(), "ekf_linearize_poisson: field/probe length mismatch");
  if (!(floor > 0.0)) throw ValidationError("ekf_linearize_poisson: floor must be > 0");
  const Index n = static_cast<Index>(E.size());
  PoissonLinearization out{BlockDiagMat(n, 1, 2), BlockDiagMat(n, 1, 1), Vec(n)};
  for (Index i = 0; i < n; ++i) {
    const std::complex<double> total = E[i] + dE[i];
    const double intensity = std::norm(total);
    auto H = out.H.block(i);
    H(0, 0) = 2.0 * total.real();
    H(0, 1) = 2.0 * total.imag();
    out.R.block(i)(0, 0) = std::max(intensity, floor);
    out.y_hat(i) = intensity;
  }
  return out;
}

std::vector<std::complex<double>> field_from_state(const Vec& x) {
  require(x.size() % 2 == 0, "field_from_state: state length must be even");
  std::vector<std::complex<double>> E(static_cast<size_t>(x.size() / 2));
  for (size_t i = 0; i < E.size(); ++i) E[i] = {x(2 * i), x(2 * i + 1)};
  return E;
}

Vec state_from_field(std::span<const std::complex<double>> E) {
  Vec x(static_cast<Index>(2 * E.size()));
  for (size_t i = 0; i < E.size(); ++i) {
    x(2 * i) = E[i].real();
    x(2 * i + 1) = E[i].imag();
  }
  return x;
}

namespace {

// Pseudo-measurement y_eff with y_eff - H x_pred = counts - y_hat.
Vec effective_measurement(const PoissonLinearization& lin, const Vec& x_pred,
                          std::span<const double> counts) {
  const Vec y = Eigen::Map<const Vec>(counts.data(), static_cast<Index>(counts.size()));
  return y - lin.y_hat + lin.H.apply(x_pred);
}

}  // namespace

BdFilterState ekf_poisson_step(const BdFilterState& st, const BlockDynamics& dyn,
                               std::span<const std::complex<double>> dE,
                               std::span<const double> counts, EkfBackend backend, double floor) {
  require(dyn.F.block_rows() == 2, "ekf_poisson_step: speckle model needs c = 2");
  require(static_cast<Index>(counts.size()) == dyn.F.n(), "ekf_poisson_step: counts length mismatch");
  const Vec x_pred = dyn.F.apply(st.x);
  const auto E = field_from_state(x_pred);
  const PoissonLinearization lin = ekf_linearize_poisson(E, dE, floor);
  const BlockMeasurement meas{lin.H, lin.R};
  const Vec y_eff = effective_measurement(lin, x_pred, counts);
  switch (backend) {
    case EkfBackend::banded:
      return banded_kf_step(st, dyn, meas, y_eff);
    case EkfBackend::bd_fast:
      return bdkf_fast_step(st, dyn, meas, y_eff).state;
    case EkfBackend::full:
      break;
  }
  throw ValidationError("ekf_poisson_step: the full backend takes a DenseFilterState");
}

DenseFilterState ekf_poisson_step(const DenseFilterState& st, const DenseModel& model,
                                  std::span<const std::complex<double>> dE,
                                  std::span<const double> counts, double floor) {
  require(static_cast<Index>(counts.size()) * 2 == model.F.rows(),
          "ekf_poisson_step: counts length mismatch");
  const bool identity_F = model.F.isIdentity(0.0);
  const Vec x_pred = identity_F ? st.x : Vec(model.F * st.x);
  const auto E = field_from_state(x_pred);
  const PoissonLinearization lin = ekf_linearize_poisson(E, dE, floor);
  const Vec y_eff = effective_measurement(lin, x_pred, counts);
  return full_kf_step(st, model.F, lin.H.to_dense(), model.Q, lin.R.to_dense(), y_eff);
}

}  // namespace bdkf
