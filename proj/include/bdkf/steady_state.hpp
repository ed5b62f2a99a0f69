#pragma once

// Fixed-point analysis of the time-invariant filters: Riccati fixed points of
// the full, block-diagonal and banded filters, the coupling matrix C, the
// perturbation constants and bounds relating coupled to uncoupled steady
// states, and the true error covariance of a filter run with a fixed gain.
//
// Every fixed point is found by iterating the filter's own covariance
// recursion; there is no algebraic DARE solver here because the projected
// recursion has none.

#include <optional>
#include <string>
#include <vector>

#include "bdkf/filters.hpp"
#include "bdkf/model.hpp"

namespace bdkf {

struct SteadyOptions {
  double tol = 1e-11;        // relative change of the predict covariance
  Index max_iter = 200000;
  Index analysis_state_cap = 1024;  // dense closed-loop matrices only up to this n*c
};

struct DenseSteadyState {
  DenseMat P_minus;  // predict-step fixed point
  DenseMat P_plus;   // update-step fixed point (Joseph form)
  DenseMat K;        // P_minus H^T (H P_minus H^T + R)^{-1}
  DenseMat F_c;      // (I - K H) F
  Index iterations = 0;
  double residual = 0.0;
  bool converged = false;
  std::vector<std::string> warnings;
};

// Iterates the Kalman covariance recursion from P_{0|0} = P0 (default Q).
// Throws ConvergenceError after max_iter iterations.
DenseSteadyState solve_dare(const DenseMat& F, const DenseMat& H, const DenseMat& Q,
                            const DenseMat& R, const SteadyOptions& opts = {},
                            const DenseMat* P0 = nullptr);

// Fixed point of the block-diagonal filter with Q = V + G U G^T, found by
// iterating the O(n r^2) covariance update. The predict covariance is kept
// in its structured form L + G U G^T.
struct BdSteadyState {
  BlockDiagMat P_plus;  // block-diagonal update-step fixed point
  BlockDiagMat L;       // block-diagonal part of the predict fixed point
  FactoredGain gain;
  std::optional<DenseMat> F_c;  // (I - K H) F, when n c <= analysis_state_cap
  Index iterations = 0;
  double residual = 0.0;
  bool converged = false;
  std::vector<std::string> warnings;

  // L + G U G^T as a dense matrix.
  DenseMat P_minus_dense(const BlockDynamics& dyn) const;
};

// P0 is the initial block-diagonal P_{0|0}; default D{Q}.
BdSteadyState solve_bd_dare(const BlockModel& model, const SteadyOptions& opts = {},
                            const BlockDiagMat* P0 = nullptr);

// Per-sub-system steady states with process noise V^(i) + G^(i) U G^(i)T.
struct BandedSteadyState {
  BlockDiagMat P_minus;
  BlockDiagMat P_plus;
  BlockDiagMat K;    // c x d blocks
  BlockDiagMat F_c;  // c x c blocks
  Index max_iterations = 0;
  bool converged = false;
};

BandedSteadyState banded_steady(const BlockModel& model, const SteadyOptions& opts = {});

// Relative residual of the Riccati equation
//   P = F (P - P H^T (H P H^T + R)^{-1} H P) F^T + Q,
// with the bracket projected onto its c x c diagonal blocks when block > 0.
double riccati_residual(const DenseMat& F, const DenseMat& H, const DenseMat& Q, const DenseMat& R,
                        const DenseMat& P_minus, Index block = 0);

struct CouplingSummary {
  SmallMat C;            // r x r
  std::vector<double> eps;  // ||G^(i) C G^(i)T||_F per sub-system
  double eta = 0.0;      // ||G U G^T||_F
};

// C = (U^{-1} + G^T H^T (H (F P F^T + V) H^T + R)^{-1} H G)^{-1} for the
// banded update-step covariance P, evaluated as (I + U N)^{-1} U.
CouplingSummary compute_C(const BlockModel& model, const BlockDiagMat& P_banded_plus);

// ||G U G^T||_F in O(n r^2).
double coupling_noise_norm(const TallBlockMat& G, const SmallMat& U);

struct AlphaConstants {
  double a1 = 0.0;  // 1 / (1 - rho(F_c)^2)
  double a2 = 0.0;  // ||F_c||_2
  double a3 = 0.0;  // ||(I + P H^T R^{-1} H)^{-1}||_2
  double a4 = 0.0;  // ||H^T (H P H^T + R)^{-1} H F||_2
  double a5 = 0.0;  // ||H^T (H P H^T + R)^{-1} H||_2
  double bauer_fike = 0.0;  // 2-norm condition number of the eigenvectors of F_c
  double rho = 0.0;         // spectral radius of F_c
};

inline constexpr const char* kBauerFikeNorm = "2-norm eigenvector condition number";

// Constants of sub-system `s` around its uncoupled predict covariance
// P_minus_V. Throws DomainError for an unstable or defective closed loop.
AlphaConstants alpha_constants(const Subsystem& s, const SmallMat& P_minus_V);

struct Prop2Report {
  // Per-block bound on the update-step covariance difference.
  std::vector<bool> part1_condition_ok;
  std::vector<double> part1_bound;
  std::vector<double> part1_measured;  // ||block_i(P~_+(V+GUG^T)) - block_i(P_+(V))||_F

  // Global bounds on predict covariance and closed-loop differences.
  bool part2_condition_ok = false;
  double part2_bound_P = 0.0;
  double part2_bound_Fc = 0.0;
  double part2_bound_P_simple = 0.0;  // 2 a1 eta
  double measured_dP_full = 0.0;      // ||P_-(V+GUG^T) - P_-(V)||_F
  double measured_dP_bd = 0.0;        // ||P~_-(V+GUG^T) - P_-(V)||_F
  double measured_dFc_full = 0.0;
  double measured_dFc_bd = 0.0;

  // Maxima over sub-systems used by the second part.
  AlphaConstants alpha_max;
  double eta = 0.0;
  std::string bauer_fike_norm = kBauerFikeNorm;
};

// Bound formulas only; the measured fields are left at zero.
Prop2Report prop2_bounds(const std::vector<AlphaConstants>& alphas, const CouplingSummary& coupling);

// Full pipeline on a system: uncoupled and coupled steady states (dense
// full KF, block-diagonal, banded), C, the constants, the bounds and the
// measured differences. Dense, so limited to analysis-scale n.
struct Prop2Analysis {
  Prop2Report report;
  CouplingSummary coupling;
  std::vector<AlphaConstants> alphas;
  DenseSteadyState full_coupled;
  BdSteadyState bd_coupled;
  BandedSteadyState uncoupled;
  BandedSteadyState banded;
};

Prop2Analysis prop2_analysis(const CoupledSystem& sys, const SteadyOptions& opts = {});

// Steady update-step error covariance of a filter using the fixed gain K:
//   S <- (I - K H)(F S F^T + Q)(I - K H)^T + K R K^T.
// Throws DomainError when (I - K H) F is not stable.
DenseMat true_error_cov(const DenseMat& F, const DenseMat& H, const DenseMat& Q, const DenseMat& R,
                        const DenseMat& K, const SteadyOptions& opts = {});

}  // namespace bdkf
