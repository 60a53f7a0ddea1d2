// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef CMVP_LINALG_HPP
#define CMVP_LINALG_HPP

#include <vector>

#include <Eigen/Dense>

#include "cmvp/error.hpp"

namespace cmvp {

// Column-major everywhere; the wire formats rely on it.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr double kOrthonormalTol = 1e-10;

bool all_finite(const Matrix& a) noexcept;

/// Flip column signs so that the entry of largest magnitude is positive
/// (lowest row index wins among exact ties). Returns the applied signs.
Vector canonicalize_signs(Matrix& columns);

/// Column-orthonormal d x r matrix. Construction validates orthonormality
/// and, unless told otherwise, applies the sign convention above.
class OrthonormalBasis {
 public:
  OrthonormalBasis() = default;
  explicit OrthonormalBasis(Matrix columns, bool canonicalize = true);

  /// Leading r columns of the d x d identity.
  static OrthonormalBasis coordinate(Index ambient_dim, Index subspace_dim);

  const Matrix& matrix() const noexcept { return columns_; }
  Index ambient_dim() const noexcept { return columns_.rows(); }
  Index dim() const noexcept { return columns_.cols(); }

  /// max |U^T U - I|.
  static double orthonormality_error(const Matrix& columns);

 private:
  Matrix columns_;
};

struct SingularTriple {
  OrthonormalBasis u;
  Vector singular_values;  // non-increasing
  Matrix v;                // signs follow u so that A = U diag(s) V^T
};

/// Deterministic thin SVD (r = min(rows, cols) triples).
SingularTriple thin_svd(const Matrix& a);

/// Leading p left singular vectors.
OrthonormalBasis truncate_basis(const SingularTriple& svd, Index p);

class ProjectionOperator {
 public:
  ProjectionOperator() = default;
  explicit ProjectionOperator(const OrthonormalBasis& basis);

  static ProjectionOperator identity(Index dim);
  static ProjectionOperator zero(Index dim);

  const Matrix& matrix() const noexcept { return projector_; }
  Index dim() const noexcept { return projector_.rows(); }
  Index rank() const noexcept { return rank_; }

  /// (I - P) z
  Matrix residual(const Matrix& z) const;

 private:
  ProjectionOperator(Matrix projector, Index rank)
      : projector_(std::move(projector)), rank_(rank) {}

  Matrix projector_;
  Index rank_ = 0;
};

inline ProjectionOperator projector_from_basis(const OrthonormalBasis& basis) {
  return ProjectionOperator(basis);
}

/// Principal angles in ascending order, min(r1, r2) of them.
std::vector<double> principal_angles(const OrthonormalBasis& u1, const OrthonormalBasis& u2);

/// ||sin Theta||_2 for subspaces of equal dimension.
double grassmann_distance(const OrthonormalBasis& u1, const OrthonormalBasis& u2);

double spectral_norm(const Matrix& a);

/// Largest |eigenvalue| of a symmetric matrix.
double symmetric_spectral_norm(const Matrix& a);

/// Orthonormal basis of the column space of a, numerical rank by the usual
/// max(rows, cols) * eps * sigma_max cutoff.
OrthonormalBasis range_basis(const Matrix& a);

/// log det of a symmetric positive definite matrix via Cholesky.
double log_det_spd(const Matrix& a);

}  // namespace cmvp

#endif  // CMVP_LINALG_HPP
