#pragma once

// One-step filter updates for the coupled system.
//
//   full_kf_step      dense Kalman filter on the stacked system (O((nc)^3))
//   banded_kf_step    block-diagonal projection at the predict step; the
//                     sub-systems decouple and the coupling information is lost
//   bdkf_naive_step   block-diagonal projection at the update step, evaluated
//                     with dense matrices (reference semantics)
//   bdkf_fast_step    the same filter evaluated in O(n r^2) through the
//                     low-rank structure of G U G^T
//
// All step functions are pure: they return a new state.

#include <complex>
#include <span>

#include "bdkf/blockstruct.hpp"
#include "bdkf/model.hpp"

namespace bdkf {

// Largest block dimensions (c, d) and input dimension r handled by the
// block-structured steps; per-block temporaries live on the stack.
inline constexpr Index kMaxBlockDim = 8;
inline constexpr Index kMaxInputDim = 64;

struct BdFilterState {
  Vec x;           // n c
  BlockDiagMat P;  // c x c blocks
  Index k = 0;
};

struct DenseFilterState {
  Vec x;
  DenseMat P;
  Index k = 0;
};

// The block-diagonal filter's gain
//
//   K = (L - B C1 G^T - G C3 G^T) H^T M^{-1}
//
// kept in factored form; apply() costs O(n r).
struct FactoredGain {
  BlockDiagMat L;       // c x c: F P F^T + V
  BlockDiagMat HtMinv;  // c x d: H_i^T M_i^{-1}
  TallBlockMat B;       // c x r: L H^T M^{-1} H G
  TallBlockMat G;       // c x r
  TallBlockMat MinvHG;  // d x r: M^{-1} H G
  SmallMat C1;
  SmallMat C3;

  // K z for a stacked measurement-space vector z.
  Vec apply(const Vec& z) const;
  // G^T H^T M^{-1} z.
  Vec project_input(const Vec& z) const;
  DenseMat to_dense() const;
};

// Intermediate quantities of one block-diagonal update.
struct FastStepWork {
  BlockDiagMat M;  // d x d: H L H^T + R
  BlockDiagMat A;  // c x c: L - L H^T M^{-1} H L
  SmallMat N;      // G^T H^T M^{-1} H G
  SmallMat C2;
  FactoredGain gain;  // holds L, B, C1, C3
  Vec innovation;     // y - H F x (empty for covariance-only updates)

  const BlockDiagMat& L() const { return gain.L; }
  const TallBlockMat& B() const { return gain.B; }
  const SmallMat& C1() const { return gain.C1; }
  const SmallMat& C3() const { return gain.C3; }
};

struct InputPosterior {
  Vec mu;          // r
  SmallMat sigma;  // r x r
};

// Dense Kalman step; the covariance update uses the Joseph form. Throws
// SingularityError if the innovation covariance is not positive-definite.
DenseFilterState full_kf_step(const DenseFilterState& st, const DenseMat& F, const DenseMat& H,
                              const DenseMat& Q, const DenseMat& R, const Vec& y);
DenseFilterState full_kf_step(const DenseFilterState& st, const DenseModel& model, const Vec& y);

BdFilterState banded_kf_step(const BdFilterState& st, const BlockDynamics& dyn,
                             const BlockMeasurement& meas, const Vec& y);
inline BdFilterState banded_kf_step(const BdFilterState& st, const BlockModel& m, const Vec& y) {
  return banded_kf_step(st, m.dyn, m.meas, y);
}

struct NaiveStepResult {
  BdFilterState state;
  DenseMat gain;  // n c x n d
};

NaiveStepResult bdkf_naive_step(const BdFilterState& st, const BlockDynamics& dyn,
                                const BlockMeasurement& meas, const Vec& y);
inline NaiveStepResult bdkf_naive_step(const BdFilterState& st, const BlockModel& m, const Vec& y) {
  return bdkf_naive_step(st, m.dyn, m.meas, y);
}

struct CovarianceUpdate {
  BlockDiagMat P;  // updated block-diagonal covariance
  FastStepWork work;
};

// Covariance half of bdkf_fast_step: P_{k-1|k-1} -> P_{k|k}.
CovarianceUpdate bd_covariance_update(const BlockDiagMat& P, const BlockDynamics& dyn,
                                      const BlockMeasurement& meas);

struct FastStepResult {
  BdFilterState state;
  FastStepWork work;
};

FastStepResult bdkf_fast_step(const BdFilterState& st, const BlockDynamics& dyn,
                              const BlockMeasurement& meas, const Vec& y);
inline FastStepResult bdkf_fast_step(const BdFilterState& st, const BlockModel& m, const Vec& y) {
  return bdkf_fast_step(st, m.dyn, m.meas, y);
}

// Posterior of the coupling input driving the step that produced `work`:
// mu = -C3 G^T H^T M^{-1} innovation, sigma = C1.
InputPosterior coupling_posterior(const FastStepWork& work, const Vec& innovation);

// Linearization of y ~ Poisson(|E + dE|^2) around the field E, per pixel.
struct PoissonLinearization {
  BlockDiagMat H;  // 1 x 2 blocks: 2 [Re(E+dE), Im(E+dE)]
  BlockDiagMat R;  // 1 x 1 blocks: max(|E+dE|^2, floor)
  Vec y_hat;       // |E+dE|^2
};

inline constexpr double kDefaultPoissonFloor = 1.0;

PoissonLinearization ekf_linearize_poisson(std::span<const std::complex<double>> E,
                                           std::span<const std::complex<double>> dE,
                                           double floor = kDefaultPoissonFloor);

// Field vector [Re E_0, Im E_0, Re E_1, ...] <-> complex samples.
std::vector<std::complex<double>> field_from_state(const Vec& x);
Vec state_from_field(std::span<const std::complex<double>> E);

enum class EkfBackend { full, banded, bd_fast };

// One EKF step for photon-count measurements. The measurement model is
// linearized at the prediction F x; the chosen linear step then runs with
// innovation counts - y_hat. `dyn` comes from a speckle system (c = 2, d = 1).
BdFilterState ekf_poisson_step(const BdFilterState& st, const BlockDynamics& dyn,
                               std::span<const std::complex<double>> dE,
                               std::span<const double> counts, EkfBackend backend,
                               double floor = kDefaultPoissonFloor);
// Full-EKF backend; `model` supplies F and Q, its H and R are ignored.
DenseFilterState ekf_poisson_step(const DenseFilterState& st, const DenseModel& model,
                                  std::span<const std::complex<double>> dE,
                                  std::span<const double> counts,
                                  double floor = kDefaultPoissonFloor);

}  // namespace bdkf
