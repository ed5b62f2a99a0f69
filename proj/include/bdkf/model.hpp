#pragma once

// n linear sub-systems driven by a shared r-dimensional Gaussian input:
//
//   x_{k+1}^(i) = F^(i) x_k^(i) + v_k^(i) + G^(i) u_k
//   y_k^(i)     = H^(i) x_k^(i) + w_k^(i)
//
// with v ~ N(0, V^(i)), w ~ N(0, R^(i)), u ~ N(0, U). Matrices are
// time-invariant for a given system.

#include <vector>

#include "bdkf/blockstruct.hpp"
#include "bdkf/random.hpp"

namespace bdkf {

struct Subsystem {
  SmallMat F;  // c x c
  SmallMat H;  // d x c
  SmallMat V;  // c x c
  SmallMat R;  // d x d
  SmallMat G;  // c x r
};

struct CoupledSystem {
  std::vector<Subsystem> subsystems;
  SmallMat U;  // r x r
  Index c = 0;
  Index d = 0;
  Index r = 0;

  Index n() const noexcept { return static_cast<Index>(subsystems.size()); }

  // Checks shapes and that U, V^(i), R^(i) are symmetric PSD. Throws ValidationError.
  void validate() const;
};

// Block-structured views of a system, as consumed by the filters. The
// measurement half is separate because the EKF relinearizes it every step.
struct BlockDynamics {
  BlockDiagMat F;  // c x c blocks
  BlockDiagMat V;  // c x c blocks
  TallBlockMat G;  // c x r blocks
  SmallMat U;      // r x r
};

struct BlockMeasurement {
  BlockDiagMat H;  // d x c blocks
  BlockDiagMat R;  // d x d blocks
};

struct BlockModel {
  BlockDynamics dyn;
  BlockMeasurement meas;

  Index n() const noexcept { return dyn.F.n(); }
  Index c() const noexcept { return dyn.F.block_rows(); }
  Index d() const noexcept { return meas.H.block_rows(); }
  Index r() const noexcept { return dyn.G.cols(); }
};

BlockModel to_block_model(const CoupledSystem& sys);

// Stacked full-system matrices, for the dense reference filters.
struct DenseModel {
  DenseMat F, H, V, R, G;
  DenseMat Q;  // V + G U G^T
  SmallMat U;
};

inline constexpr Index kDenseStateLimit = 10000;

// Dense block-diagonal embeddings plus Q. Refuses n*c > kDenseStateLimit
// unless allow_large is set.
DenseModel dense_stack(const CoupledSystem& sys, bool allow_large = false);
DenseModel dense_stack(const BlockModel& model, bool allow_large = false);

struct Trajectory {
  Index horizon = 0;
  RowMatrix states;        // K x (n c), row k is x_k
  RowMatrix inputs;        // K x r, row k is u_k (drives x_{k+1})
  RowMatrix measurements;  // K x (n d), row k is y_k
};

// Draw order per step k: w_k for every sub-system, then u_k, then v_k for
// every sub-system.
Trajectory simulate(const CoupledSystem& sys, Index horizon, const Vec& x0, const RngSpec& rng);

// n copies of F = [[0.9, beta], [0, 0.9]], H = [1 1], V = I, R = [1],
// G = [1 1]^T, with U = [1].
CoupledSystem make_identical_chain(double beta, Index n);

// Random test instance: each F^(i) is a Gaussian matrix rescaled to spectral
// radius `spectral_radius_cap`; V = AA^T + 0.1I, R = BB^T + 0.1I,
// U = CC^T + 0.1I; H, G Gaussian.
CoupledSystem make_random_system(Index c, Index d, Index r, Index n, double spectral_radius_cap,
                                 const RngSpec& rng);

// Speckle drift model: one pixel per sub-system with state [Re E, Im E],
// F = I, V = 1e-4 drift_scale^2 I, U = drift_scale^2 I_r. The r input
// columns are smooth 2-D polynomial modes on the pixel grid, orthonormal over
// pixels; the first ceil(r/2) drive Re E and the rest drive Im E.
struct SpeckleSystem {
  CoupledSystem system;
  DenseMat modes;  // n_pixels x (number of distinct spatial modes)
  Index grid_width = 0;
};

inline constexpr Index kSpeckleMaxDegree = 6;

SpeckleSystem make_speckle_system(Index n_pixels, Index r_modes, double drift_scale);

// Same system with U multiplied by `factor`.
CoupledSystem scale_coupling(CoupledSystem sys, double factor);

// Copy with every G^(i) set to zero (r unchanged).
CoupledSystem without_coupling(CoupledSystem sys);

}  // namespace bdkf
