#include "bdkf/blockstruct.hpp"

#include <cmath>
#include <string>

namespace bdkf {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace

namespace detail {

BlockStorage::BlockStorage(Index n, Index brows, Index bcols)
    : n_(n), brows_(brows), bcols_(bcols), data_(static_cast<size_t>(n * brows * bcols), 0.0) {
  require(n >= 0 && brows >= 0 && bcols >= 0, "block dimensions must be non-negative");
}

void BlockStorage::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

}  // namespace detail

BlockDiagMat BlockDiagMat::identity(Index n, Index c, double scale) {
  BlockDiagMat out(n, c, c);
  for (Index i = 0; i < n; ++i) out.block(i).diagonal().setConstant(scale);
  return out;
}

BlockDiagMat BlockDiagMat::repeat(const SmallMat& block, Index n) {
  BlockDiagMat out(n, block.rows(), block.cols());
  for (Index i = 0; i < n; ++i) out.block(i) = block;
  return out;
}

BlockDiagMat BlockDiagMat::from_blocks(std::span<const SmallMat> blocks) {
  require(!blocks.empty(), "from_blocks: need at least one block");
  BlockDiagMat out(static_cast<Index>(blocks.size()), blocks[0].rows(), blocks[0].cols());
  for (Index i = 0; i < out.n(); ++i) {
    require(blocks[i].rows() == out.brows_ && blocks[i].cols() == out.bcols_,
            "from_blocks: inconsistent block shapes");
    out.block(i) = blocks[i];
  }
  return out;
}

DenseMat BlockDiagMat::to_dense() const {
  DenseMat out = DenseMat::Zero(rows(), cols());
  for (Index i = 0; i < n_; ++i) out.block(i * brows_, i * bcols_, brows_, bcols_) = block(i);
  return out;
}

Vec BlockDiagMat::apply(const Vec& x) const {
  require(x.size() == cols(), "BlockDiagMat::apply: vector length mismatch");
  Vec y(rows());
  for (Index i = 0; i < n_; ++i)
    y.segment(i * brows_, brows_).noalias() = block(i) * x.segment(i * bcols_, bcols_);
  return y;
}

Vec BlockDiagMat::apply_transpose(const Vec& x) const {
  require(x.size() == rows(), "BlockDiagMat::apply_transpose: vector length mismatch");
  Vec y(cols());
  for (Index i = 0; i < n_; ++i)
    y.segment(i * bcols_, bcols_).noalias() =
        block(i).transpose() * x.segment(i * brows_, brows_);
  return y;
}

BlockDiagMat BlockDiagMat::transpose() const {
  BlockDiagMat out(n_, bcols_, brows_);
  for (Index i = 0; i < n_; ++i) out.block(i) = block(i).transpose();
  return out;
}

void BlockDiagMat::symmetrize() {
  require(brows_ == bcols_, "symmetrize: blocks must be square");
  for (Index i = 0; i < n_; ++i) {
    auto b = block(i);
    for (Index r = 0; r < brows_; ++r)
      for (Index c = r + 1; c < bcols_; ++c) {
        const double avg = 0.5 * (b(r, c) + b(c, r));
        b(r, c) = avg;
        b(c, r) = avg;
      }
  }
}

double BlockDiagMat::frobenius_norm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return std::sqrt(s);
}

TallBlockMat TallBlockMat::repeat(const SmallMat& block, Index n) {
  TallBlockMat out(n, block.rows(), block.cols());
  for (Index i = 0; i < n; ++i) out.block(i) = block;
  return out;
}

TallBlockMat TallBlockMat::from_blocks(std::span<const SmallMat> blocks) {
  require(!blocks.empty(), "from_blocks: need at least one block");
  TallBlockMat out(static_cast<Index>(blocks.size()), blocks[0].rows(), blocks[0].cols());
  for (Index i = 0; i < out.n(); ++i) {
    require(blocks[i].rows() == out.brows_ && blocks[i].cols() == out.bcols_,
            "from_blocks: inconsistent block shapes");
    out.block(i) = blocks[i];
  }
  return out;
}

DenseMat TallBlockMat::to_dense() const {
  DenseMat out(rows(), cols());
  for (Index i = 0; i < n_; ++i) out.middleRows(i * brows_, brows_) = block(i);
  return out;
}

Vec TallBlockMat::apply(const Vec& u) const {
  require(u.size() == bcols_, "TallBlockMat::apply: vector length mismatch");
  Vec y(rows());
  for (Index i = 0; i < n_; ++i) y.segment(i * brows_, brows_).noalias() = block(i) * u;
  return y;
}

Vec TallBlockMat::apply_transpose(const Vec& x) const {
  require(x.size() == rows(), "TallBlockMat::apply_transpose: vector length mismatch");
  Vec y = Vec::Zero(bcols_);
  for (Index i = 0; i < n_; ++i)
    y.noalias() += block(i).transpose() * x.segment(i * brows_, brows_);
  return y;
}

BlockDiagMat project_D(const DenseMat& m, Index c) {
  require(c >= 1, "project_D: block size must be positive");
  require(m.rows() == m.cols(), "project_D: matrix must be square");
  require(m.rows() % c == 0, "project_D: size not divisible by block size");
  const Index n = m.rows() / c;
  BlockDiagMat out(n, c, c);
  for (Index i = 0; i < n; ++i) out.block(i) = m.block(i * c, i * c, c, c);
  return out;
}

BlockDiagMat bd_sandwich(const BlockDiagMat& a, const BlockDiagMat& p) {
  require(a.n() == p.n(), "bd_sandwich: block count mismatch");
  require(p.block_rows() == p.block_cols(), "bd_sandwich: P blocks must be square");
  require(a.block_cols() == p.block_rows(), "bd_sandwich: incompatible block shapes");
  BlockDiagMat out(a.n(), a.block_rows(), a.block_rows());
  for (Index i = 0; i < a.n(); ++i)
    out.block(i).noalias() = a.block(i) * p.block(i) * a.block(i).transpose();
  return out;
}

BlockDiagMat bd_multiply(const BlockDiagMat& a, const BlockDiagMat& b) {
  require(a.n() == b.n(), "bd_multiply: block count mismatch");
  require(a.block_cols() == b.block_rows(), "bd_multiply: incompatible block shapes");
  BlockDiagMat out(a.n(), a.block_rows(), b.block_cols());
  for (Index i = 0; i < a.n(); ++i) out.block(i).noalias() = a.block(i) * b.block(i);
  return out;
}

namespace {

template <typename Rhs, typename Out>
void chol_solve_blocks(const BlockDiagMat& m, const Rhs& rhs, Out& out) {
  require(m.block_rows() == m.block_cols(), "bd_chol_solve: blocks must be square");
  require(m.n() == rhs.n(), "bd_chol_solve: block count mismatch");
  require(m.block_cols() == rhs.block_rows(), "bd_chol_solve: incompatible block shapes");
  for (Index i = 0; i < m.n(); ++i) {
    Eigen::LLT<RowMatrix> llt(m.block(i));
    if (llt.info() != Eigen::Success)
      throw SingularityError("bd_chol_solve: block " + std::to_string(i) +
                                 " is not positive-definite",
                             static_cast<long>(i));
    out.block(i) = llt.solve(rhs.block(i));
  }
}

}  // namespace

TallBlockMat bd_chol_solve(const BlockDiagMat& m, const TallBlockMat& rhs) {
  TallBlockMat out(rhs.n(), rhs.block_rows(), rhs.cols());
  chol_solve_blocks(m, rhs, out);
  return out;
}

BlockDiagMat bd_chol_solve(const BlockDiagMat& m, const BlockDiagMat& rhs) {
  BlockDiagMat out(rhs.n(), rhs.block_rows(), rhs.block_cols());
  chol_solve_blocks(m, rhs, out);
  return out;
}

Vec bd_chol_solve(const BlockDiagMat& m, const Vec& rhs) {
  require(rhs.size() == m.rows(), "bd_chol_solve: vector length mismatch");
  TallBlockMat r(m.n(), m.block_rows(), 1);
  std::copy(rhs.data(), rhs.data() + rhs.size(), r.raw().begin());
  const TallBlockMat x = bd_chol_solve(m, r);
  return Eigen::Map<const Vec>(x.raw().data(), rhs.size());
}

SmallMat tall_reduce(const TallBlockMat& t, const BlockDiagMat& w) {
  require(t.n() == w.n(), "tall_reduce: block count mismatch");
  require(w.block_rows() == w.block_cols(), "tall_reduce: weight blocks must be square");
  require(w.block_cols() == t.block_rows(), "tall_reduce: incompatible block shapes");
  SmallMat acc = SmallMat::Zero(t.cols(), t.cols());
  for (Index i = 0; i < t.n(); ++i)
    acc.noalias() += t.block(i).transpose() * w.block(i) * t.block(i);
  return acc;
}

double block_fro_distance(const BlockDiagMat& a, const BlockDiagMat& b) {
  require(a.n() == b.n() && a.block_rows() == b.block_rows() && a.block_cols() == b.block_cols(),
          "block_fro_distance: shape mismatch");
  double s = 0.0;
  const auto ra = a.raw();
  const auto rb = b.raw();
  for (size_t k = 0; k < ra.size(); ++k) {
    const double d = ra[k] - rb[k];
    s += d * d;
  }
  return std::sqrt(s);
}

double block_fro_distance(const BlockDiagMat& a, const DenseMat& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "block_fro_distance: shape mismatch");
  const Index br = a.block_rows();
  const Index bc = a.block_cols();
  double s = 0.0;
  for (Index i = 0; i < a.n(); ++i) {
    const auto rows = b.middleRows(i * br, br);
    s += rows.leftCols(i * bc).squaredNorm();
    s += (a.block(i) - rows.middleCols(i * bc, bc)).squaredNorm();
    s += rows.rightCols(b.cols() - (i + 1) * bc).squaredNorm();
  }
  return std::sqrt(s);
}

double block_fro_distance(const DenseMat& a, const BlockDiagMat& b) { return block_fro_distance(b, a); }

double block_fro_distance(const DenseMat& a, const DenseMat& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "block_fro_distance: shape mismatch");
  return (a - b).norm();
}

}  // namespace bdkf
