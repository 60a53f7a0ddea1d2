// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmvp/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace cmvp {

bool all_finite(const Matrix& a) noexcept { return a.allFinite(); }

Vector canonicalize_signs(Matrix& columns) {
  Vector signs = Vector::Ones(columns.cols());
  for (Index j = 0; j < columns.cols(); ++j) {
    Index best = 0;
    double best_abs = -1.0;
    for (Index i = 0; i < columns.rows(); ++i) {
      const double a = std::abs(columns(i, j));
      if (a > best_abs) {
        best_abs = a;
        best = i;
      }
    }
    if (columns.rows() > 0 && columns(best, j) < 0.0) {
      columns.col(j) = -columns.col(j);
      signs(j) = -1.0;
    }
  }
  return signs;
}

double OrthonormalBasis::orthonormality_error(const Matrix& columns) {
  if (columns.cols() == 0) return 0.0;
  const Matrix gram = columns.transpose() * columns;
  return (gram - Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
}

OrthonormalBasis::OrthonormalBasis(Matrix columns, bool canonicalize)
    : columns_(std::move(columns)) {
  require(all_finite(columns_), ErrorCode::kInvalidMatrix, "basis has non-finite entries");
  require(columns_.cols() <= columns_.rows(), ErrorCode::kNotOrthonormal,
          "more basis columns than ambient dimension");
  const double err = orthonormality_error(columns_);
  if (err > kOrthonormalTol) {
    std::ostringstream msg;
    msg << "columns not orthonormal: max |U^T U - I| = " << err;
    fail(ErrorCode::kNotOrthonormal, msg.str());
  }
  if (canonicalize) canonicalize_signs(columns_);
}

OrthonormalBasis OrthonormalBasis::coordinate(Index ambient_dim, Index subspace_dim) {
  require(subspace_dim >= 0 && subspace_dim <= ambient_dim, ErrorCode::kInvalidTruncation,
          "coordinate basis dimension out of range");
  return OrthonormalBasis(Matrix::Identity(ambient_dim, subspace_dim));
}

SingularTriple thin_svd(const Matrix& a) {
  require(a.rows() >= 1 && a.cols() >= 1, ErrorCode::kInvalidMatrix, "thin_svd of empty matrix");
  require(all_finite(a), ErrorCode::kInvalidMatrix, "thin_svd input has non-finite entries");

  Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Matrix u = svd.matrixU();
  Matrix v = svd.matrixV();
  Vector s = svd.singularValues();

  if (svd.info() != Eigen::Success || !u.allFinite() || !v.allFinite() || !s.allFinite()) {
    std::ostringstream msg;
    msg << "SVD did not converge for " << a.rows() << "x" << a.cols() << " matrix, ||A||_F = "
        << a.norm();
    if (s.size() > 0 && s.allFinite()) {
      msg << ", sigma_max = " << s(0) << ", sigma_min = " << s(s.size() - 1);
    }
    fail(ErrorCode::kNumericalFailure, msg.str());
  }

  const Vector signs = canonicalize_signs(u);
  v = v * signs.asDiagonal();

  SingularTriple out;
  out.u = OrthonormalBasis(std::move(u), /*canonicalize=*/false);
  out.singular_values = std::move(s);
  out.v = std::move(v);
  return out;
}

OrthonormalBasis truncate_basis(const SingularTriple& svd, Index p) {
  if (p < 1 || p > svd.u.dim()) {
    std::ostringstream msg;
    msg << "truncation rank " << p << " outside [1, " << svd.u.dim() << "]";
    fail(ErrorCode::kInvalidTruncation, msg.str());
  }
  return OrthonormalBasis(svd.u.matrix().leftCols(p), /*canonicalize=*/false);
}

ProjectionOperator::ProjectionOperator(const OrthonormalBasis& basis)
    : projector_(basis.matrix() * basis.matrix().transpose()), rank_(basis.dim()) {
  // U U^T is symmetric in exact arithmetic; make it bitwise symmetric.
  projector_ = 0.5 * (projector_ + projector_.transpose()).eval();
}

ProjectionOperator ProjectionOperator::identity(Index dim) {
  return ProjectionOperator(Matrix::Identity(dim, dim), dim);
}

ProjectionOperator ProjectionOperator::zero(Index dim) {
  return ProjectionOperator(Matrix::Zero(dim, dim), 0);
}

Matrix ProjectionOperator::residual(const Matrix& z) const {
  require(z.rows() == dim(), ErrorCode::kDimensionMismatch, "projector/feature dimension mismatch");
  return z - projector_ * z;
}

std::vector<double> principal_angles(const OrthonormalBasis& u1, const OrthonormalBasis& u2) {
  require(u1.ambient_dim() == u2.ambient_dim(), ErrorCode::kDimensionMismatch,
          "principal_angles: ambient dimensions differ");
  const Index count = std::min(u1.dim(), u2.dim());
  std::vector<double> angles;
  if (count == 0) return angles;
  const Matrix cross = u1.matrix().transpose() * u2.matrix();
  Eigen::JacobiSVD<Matrix> svd(cross);
  const Vector& cosines = svd.singularValues();
  angles.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) {
    const double c = std::clamp(cosines(i), 0.0, 1.0);
    angles.push_back(std::acos(c));
  }
  std::sort(angles.begin(), angles.end());
  return angles;
}

double grassmann_distance(const OrthonormalBasis& u1, const OrthonormalBasis& u2) {
  require(u1.ambient_dim() == u2.ambient_dim(), ErrorCode::kDimensionMismatch,
          "grassmann_distance: ambient dimensions differ");
  require(u1.dim() == u2.dim(), ErrorCode::kDimensionMismatch,
          "grassmann_distance: subspace dimensions differ");
  if (u1.dim() == 0) return 0.0;
  // Sines of the principal angles are the singular values of (I - U1 U1^T) U2.
  const Matrix& a = u1.matrix();
  const Matrix off = u2.matrix() - a * (a.transpose() * u2.matrix());
  return std::min(1.0, spectral_norm(off));
}

double spectral_norm(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(a);
  return svd.singularValues()(0);
}

double symmetric_spectral_norm(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(a, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

OrthonormalBasis range_basis(const Matrix& a) {
  const SingularTriple svd = thin_svd(a);
  const double sigma_max = svd.singular_values.size() > 0 ? svd.singular_values(0) : 0.0;
  const double cutoff = static_cast<double>(std::max(a.rows(), a.cols())) *
                        std::numeric_limits<double>::epsilon() * sigma_max;
  Index rank = 0;
  while (rank < svd.singular_values.size() && svd.singular_values(rank) > cutoff) ++rank;
  return OrthonormalBasis(svd.u.matrix().leftCols(rank), /*canonicalize=*/false);
}

double log_det_spd(const Matrix& a) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) {
    fail(ErrorCode::kNumericalFailure, "Cholesky failed: matrix not positive definite");
  }
  const auto diag = llt.matrixLLT().diagonal();
  double sum = 0.0;
  for (Index i = 0; i < diag.size(); ++i) sum += std::log(diag(i));
  return 2.0 * sum;
}

}  // namespace cmvp
