#pragma once

// Dense helpers shared by the model, filters and steady-state analysis.

#include "bdkf/blockstruct.hpp"

namespace bdkf {

inline DenseMat symmetrized(const DenseMat& m) { return 0.5 * (m + m.transpose()); }

// Smallest eigenvalue of the symmetric part of m.
double min_sym_eig(const DenseMat& m);

// max |lambda(m)| for a square matrix.
double spectral_radius(const DenseMat& m);

// Largest singular value.
double spectral_norm(const DenseMat& m);

// True when m is symmetric and its smallest eigenvalue is >= -tol * max(1, ||m||_2).
bool is_symmetric_psd(const DenseMat& m, double tol = 1e-12);

// Returns S with S S^T = m for symmetric PSD m (eigenvalues clamped at 0).
DenseMat psd_factor(const DenseMat& m);

// Rank of the observability matrix [H; HF; ...; HF^{c-1}] using the singular
// value threshold rel_tol * sigma_max.
Index observability_rank(const DenseMat& F, const DenseMat& H, double rel_tol = 1e-8);

// PBH test on the eigenvalues of F with |lambda| >= 1.
bool is_detectable(const DenseMat& F, const DenseMat& H, double rel_tol = 1e-8);

// 2-norm condition number of the (unit-column) eigenvector matrix of m; 1
// for normal matrices. Throws DomainError when m is numerically defective.
double eigenvector_condition(const DenseMat& m, double defective_threshold = 1e10);

}  // namespace bdkf
