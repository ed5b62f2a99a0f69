#pragma once

// Block-structured dense linear algebra for n small blocks.
//
// A BlockDiagMat stores the n diagonal blocks of an (n*brows) x (n*bcols)
// matrix; a TallBlockMat stores n stacked brows x r blocks sharing the same
// column count. Both keep all blocks row-major in a single contiguous buffer
// so the per-block loops in the filters walk memory linearly.

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "bdkf/errors.hpp"

namespace bdkf {

using Index = Eigen::Index;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Small r x r / per-block matrices and full-system dense matrices share the
// same Eigen type; the alias names carry the role.
using SmallMat = Eigen::MatrixXd;
using DenseMat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

using BlockRef = Eigen::Map<RowMatrix>;
using ConstBlockRef = Eigen::Map<const RowMatrix>;

namespace detail {

class BlockStorage {
 public:
  BlockStorage() = default;
  BlockStorage(Index n, Index brows, Index bcols);

  Index n() const noexcept { return n_; }
  Index block_rows() const noexcept { return brows_; }
  Index block_cols() const noexcept { return bcols_; }

  BlockRef block(Index i) { return {data_.data() + i * stride(), brows_, bcols_}; }
  ConstBlockRef block(Index i) const { return {data_.data() + i * stride(), brows_, bcols_}; }

  std::span<double> raw() noexcept { return data_; }
  std::span<const double> raw() const noexcept { return data_; }

  void set_zero();

 protected:
  Index stride() const noexcept { return brows_ * bcols_; }

  Index n_ = 0;
  Index brows_ = 0;
  Index bcols_ = 0;
  std::vector<double> data_;
};

}  // namespace detail

class BlockDiagMat : public detail::BlockStorage {
 public:
  BlockDiagMat() = default;
  BlockDiagMat(Index n, Index brows, Index bcols) : BlockStorage(n, brows, bcols) {}

  static BlockDiagMat identity(Index n, Index c, double scale = 1.0);
  // Replicates `block` n times.
  static BlockDiagMat repeat(const SmallMat& block, Index n);
  static BlockDiagMat from_blocks(std::span<const SmallMat> blocks);

  Index rows() const noexcept { return n_ * brows_; }
  Index cols() const noexcept { return n_ * bcols_; }

  DenseMat to_dense() const;
  // y = A x for a stacked vector x.
  Vec apply(const Vec& x) const;
  // y = A^T x.
  Vec apply_transpose(const Vec& x) const;
  BlockDiagMat transpose() const;
  // P <- (P + P^T)/2 on every block (square blocks only).
  void symmetrize();
  double frobenius_norm() const;
};

class TallBlockMat : public detail::BlockStorage {
 public:
  TallBlockMat() = default;
  TallBlockMat(Index n, Index brows, Index cols) : BlockStorage(n, brows, cols) {}

  static TallBlockMat repeat(const SmallMat& block, Index n);
  static TallBlockMat from_blocks(std::span<const SmallMat> blocks);

  Index rows() const noexcept { return n_ * brows_; }
  Index cols() const noexcept { return bcols_; }

  DenseMat to_dense() const;
  // T u, stacked.
  Vec apply(const Vec& u) const;
  // T^T x = sum_i T_i^T x_i.
  Vec apply_transpose(const Vec& x) const;
};

// Diagonal c x c blocks of a square dense matrix; off-diagonal blocks dropped.
BlockDiagMat project_D(const DenseMat& m, Index c);

// Block i of the result is A_i P_i A_i^T.
BlockDiagMat bd_sandwich(const BlockDiagMat& a, const BlockDiagMat& p);

// Block-diagonal product A B.
BlockDiagMat bd_multiply(const BlockDiagMat& a, const BlockDiagMat& b);

// Solves M_i X_i = RHS_i per block with a Cholesky factorization. Throws
// SingularityError naming the first block that is not positive-definite.
TallBlockMat bd_chol_solve(const BlockDiagMat& m, const TallBlockMat& rhs);
BlockDiagMat bd_chol_solve(const BlockDiagMat& m, const BlockDiagMat& rhs);
Vec bd_chol_solve(const BlockDiagMat& m, const Vec& rhs);

// sum_i T_i^T W_i T_i, summed in block order.
SmallMat tall_reduce(const TallBlockMat& t, const BlockDiagMat& w);

// Frobenius norm of a - b; block-diagonal operands are embedded (zero
// off-diagonal blocks) when compared against a dense matrix.
double block_fro_distance(const BlockDiagMat& a, const BlockDiagMat& b);
double block_fro_distance(const BlockDiagMat& a, const DenseMat& b);
double block_fro_distance(const DenseMat& a, const BlockDiagMat& b);
double block_fro_distance(const DenseMat& a, const DenseMat& b);

}  // namespace bdkf
