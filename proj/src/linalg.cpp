#include "bdkf/linalg.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <complex>

namespace bdkf {

double min_sym_eig(const DenseMat& m) {
  if (m.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<DenseMat> es(symmetrized(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double spectral_radius(const DenseMat& m) {
  if (m.rows() != m.cols()) throw ShapeError("spectral_radius: matrix must be square");
  if (m.size() == 0) return 0.0;
  Eigen::EigenSolver<DenseMat> es(m, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

double spectral_norm(const DenseMat& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<DenseMat> svd(m);
  return svd.singularValues()(0);
}

bool is_symmetric_psd(const DenseMat& m, double tol) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.norm());
  if ((m - m.transpose()).norm() > tol * scale) return false;
  return min_sym_eig(m) >= -tol * scale;
}

DenseMat psd_factor(const DenseMat& m) {
  Eigen::SelfAdjointEigenSolver<DenseMat> es(symmetrized(m));
  const Vec root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

Index observability_rank(const DenseMat& F, const DenseMat& H, double rel_tol) {
  const Index c = F.rows();
  DenseMat obs(H.rows() * c, c);
  DenseMat hf = H;
  for (Index k = 0; k < c; ++k) {
    obs.middleRows(k * H.rows(), H.rows()) = hf;
    hf = hf * F;
  }
  Eigen::JacobiSVD<DenseMat> svd(obs);
  const Vec& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  Index rank = 0;
  for (Index k = 0; k < s.size(); ++k)
    if (s(k) > rel_tol * s(0)) ++rank;
  return rank;
}

bool is_detectable(const DenseMat& F, const DenseMat& H, double rel_tol) {
  using CMat = Eigen::MatrixXcd;
  const Index c = F.rows();
  Eigen::EigenSolver<DenseMat> es(F, false);
  for (Index k = 0; k < c; ++k) {
    const std::complex<double> lambda = es.eigenvalues()(k);
    if (std::abs(lambda) < 1.0) continue;
    CMat pbh(c + H.rows(), c);
    pbh.topRows(c) = lambda * CMat::Identity(c, c) - F.cast<std::complex<double>>();
    pbh.bottomRows(H.rows()) = H.cast<std::complex<double>>();
    Eigen::JacobiSVD<CMat> svd(pbh);
    const auto& s = svd.singularValues();
    if (s(0) == 0.0 || s(c - 1) <= rel_tol * s(0)) return false;
  }
  return true;
}

double eigenvector_condition(const DenseMat& m, double defective_threshold) {
  if (m.rows() != m.cols()) throw ShapeError("eigenvector_condition: matrix must be square");
  if ((m * m.transpose() - m.transpose() * m).norm() <= 1e-14 * std::max(1.0, m.squaredNorm()))
    return 1.0;
  Eigen::EigenSolver<DenseMat> es(m, true);
  Eigen::MatrixXcd vecs = es.eigenvectors();
  for (Index k = 0; k < vecs.cols(); ++k) vecs.col(k).normalize();
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(vecs);
  const auto& s = svd.singularValues();
  const double smin = s(s.size() - 1);
  if (smin <= 0.0 || s(0) / smin > defective_threshold)
    throw DomainError(
        "eigenvector_condition: matrix is numerically defective; the Bauer-Fike constant "
        "is undefined");
  return s(0) / smin;
}

}  // namespace bdkf
