// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmvp/coding_rate.hpp"

#include <cmath>
#include <sstream>

namespace cmvp {

FeatureMatrix::FeatureMatrix(Matrix columns) : columns_(std::move(columns)) {
  require(all_finite(columns_), ErrorCode::kInvalidMatrix, "features have non-finite entries");
  for (Index j = 0; j < columns_.cols(); ++j) {
    const double n = columns_.col(j).norm();
    if (std::abs(n - 1.0) > kUnitNormTol) {
      std::ostringstream msg;
      msg << "feature column " << j << " has norm " << n << ", expected 1";
      fail(ErrorCode::kInvalidMatrix, msg.str());
    }
  }
}

FeatureMatrix FeatureMatrix::normalized(Matrix columns) {
  require(all_finite(columns), ErrorCode::kInvalidMatrix, "features have non-finite entries");
  for (Index j = 0; j < columns.cols(); ++j) {
    const double n = columns.col(j).norm();
    require(n > 0.0, ErrorCode::kNumericalFailure, "cannot normalize a zero feature column");
    columns.col(j) /= n;
  }
  return FeatureMatrix(std::move(columns));
}

MembershipPartition::MembershipPartition(std::vector<int> labels, int class_count)
    : labels_(std::move(labels)), class_count_(class_count) {
  require(class_count_ >= 1, ErrorCode::kInvalidPartition, "class count must be positive");
  members_.resize(static_cast<std::size_t>(class_count_));
  for (std::size_t j = 0; j < labels_.size(); ++j) {
    const int k = labels_[j];
    if (k < 0 || k >= class_count_) {
      std::ostringstream msg;
      msg << "label " << k << " of sample " << j << " outside [0, " << class_count_ << ")";
      fail(ErrorCode::kInvalidPartition, msg.str());
    }
    members_[static_cast<std::size_t>(k)].push_back(static_cast<Index>(j));
  }
}

Matrix MembershipPartition::select(const Matrix& z, int k) const {
  require(z.cols() == sample_count(), ErrorCode::kDimensionMismatch,
          "partition/feature sample count mismatch");
  const auto& idx = members(k);
  Matrix out(z.rows(), static_cast<Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) out.col(static_cast<Index>(c)) = z.col(idx[c]);
  return out;
}

void RateConfig::validate() const {
  require(epsilon_sq > 0.0 && std::isfinite(epsilon_sq), ErrorCode::kInvalidArgument,
          "epsilon_sq must be positive");
}

namespace {

void check_features(const Matrix& z, const RateConfig& cfg) {
  cfg.validate();
  require(all_finite(z), ErrorCode::kInvalidMatrix, "features have non-finite entries");
  if (cfg.feature_dim != 0 && z.rows() != cfg.feature_dim) {
    fail(ErrorCode::kDimensionMismatch, "feature dimension does not match rate config");
  }
}

// 1/2 logdet(I + scale * Z Z^T) without validation.
double half_logdet(const Matrix& z, double scale, bool feature_gram) {
  if (z.cols() == 0) return 0.0;
  if (feature_gram) {
    Matrix g = Matrix::Identity(z.rows(), z.rows());
    g.selfadjointView<Eigen::Lower>().rankUpdate(z, scale);
    g.triangularView<Eigen::StrictlyUpper>() = g.transpose();
    return 0.5 * log_det_spd(g);
  }
  Matrix g = Matrix::Identity(z.cols(), z.cols());
  g.selfadjointView<Eigen::Lower>().rankUpdate(z.transpose(), scale);
  g.triangularView<Eigen::StrictlyUpper>() = g.transpose();
  return 0.5 * log_det_spd(g);
}

double half_logdet(const Matrix& z, double scale) {
  return half_logdet(z, scale, z.rows() <= z.cols());
}

// scale * (I + scale Z Z^T)^{-1} Z, the gradient of half_logdet.
Matrix half_logdet_gradient(const Matrix& z, double scale) {
  if (z.cols() == 0) return Matrix(z.rows(), 0);
  if (z.rows() <= z.cols()) {
    Matrix g = Matrix::Identity(z.rows(), z.rows());
    g.selfadjointView<Eigen::Lower>().rankUpdate(z, scale);
    Eigen::LLT<Matrix> llt(g.selfadjointView<Eigen::Lower>());
    require(llt.info() == Eigen::Success, ErrorCode::kNumericalFailure,
            "Cholesky of I + a Z Z^T failed");
    return scale * llt.solve(z);
  }
  // Push-through identity: (I + a Z Z^T)^{-1} Z = Z (I + a Z^T Z)^{-1}.
  Matrix g = Matrix::Identity(z.cols(), z.cols());
  g.selfadjointView<Eigen::Lower>().rankUpdate(z.transpose(), scale);
  Eigen::LLT<Matrix> llt(g.selfadjointView<Eigen::Lower>());
  require(llt.info() == Eigen::Success, ErrorCode::kNumericalFailure,
          "Cholesky of I + a Z^T Z failed");
  return scale * llt.solve(z.transpose()).transpose();
}

double rate_scale(Index d, Index m, double epsilon_sq) {
  return static_cast<double>(d) / (static_cast<double>(m) * epsilon_sq);
}

void check_projectors(const Matrix& z, const MembershipPartition& part,
                      std::span<const ProjectionOperator> projectors) {
  require(static_cast<int>(projectors.size()) == part.class_count(),
          ErrorCode::kDimensionMismatch, "need one projector per class");
  for (const auto& p : projectors) {
    require(p.dim() == z.rows(), ErrorCode::kDimensionMismatch,
            "projector dimension does not match features");
  }
}

}  // namespace

double coding_rate_form(const Matrix& z, const RateConfig& cfg, bool feature_gram) {
  check_features(z, cfg);
  require(z.cols() >= 1, ErrorCode::kInvalidMatrix, "coding_rate needs at least one sample");
  return half_logdet(z, rate_scale(z.rows(), z.cols(), cfg.epsilon_sq), feature_gram);
}

double coding_rate(const Matrix& z, const RateConfig& cfg) {
  check_features(z, cfg);
  require(z.cols() >= 1, ErrorCode::kInvalidMatrix, "coding_rate needs at least one sample");
  return half_logdet(z, rate_scale(z.rows(), z.cols(), cfg.epsilon_sq));
}

double class_coding_rate(const Matrix& z, const MembershipPartition& part, const RateConfig& cfg) {
  check_features(z, cfg);
  require(z.cols() >= 1 && z.cols() == part.sample_count(), ErrorCode::kInvalidPartition,
          "partition does not cover the features");
  const double m = static_cast<double>(z.cols());
  double total = 0.0;
  for (int k = 0; k < part.class_count(); ++k) {
    const Index mk = part.count(k);
    if (mk == 0) continue;
    const Matrix zk = part.select(z, k);
    total += (static_cast<double>(mk) / m) * half_logdet(zk, rate_scale(z.rows(), mk, cfg.epsilon_sq));
  }
  return total;
}

double mcr2_objective(const Matrix& z, const MembershipPartition& part, const RateConfig& cfg) {
  return coding_rate(z, cfg) - class_coding_rate(z, part, cfg);
}

double projection_penalty(std::span<const Matrix> z_by_class,
                          std::span<const ProjectionOperator> projectors) {
  require(z_by_class.size() == projectors.size(), ErrorCode::kDimensionMismatch,
          "need one projector per class block");
  double total = 0.0;
  for (std::size_t k = 0; k < z_by_class.size(); ++k) {
    total += projectors[k].residual(z_by_class[k]).squaredNorm();
  }
  return total;
}

double projection_penalty(const Matrix& z, const MembershipPartition& part,
                          std::span<const ProjectionOperator> projectors) {
  check_projectors(z, part, projectors);
  std::vector<Matrix> blocks;
  blocks.reserve(static_cast<std::size_t>(part.class_count()));
  for (int k = 0; k < part.class_count(); ++k) blocks.push_back(part.select(z, k));
  return projection_penalty(blocks, projectors);
}

LocalLossValue local_loss(const Matrix& z, const MembershipPartition& part,
                          std::span<const ProjectionOperator> projectors, double lambda,
                          const RateConfig& cfg) {
  check_projectors(z, part, projectors);
  LocalLossValue v;
  v.rate_expand = coding_rate(z, cfg);
  v.rate_compress = class_coding_rate(z, part, cfg);
  v.projection_penalty = projection_penalty(z, part, projectors);
  v.lambda = lambda;
  v.total = v.rate_compress - v.rate_expand + lambda * v.projection_penalty;
  return v;
}

Matrix local_loss_gradient(const Matrix& z, const MembershipPartition& part,
                           std::span<const ProjectionOperator> projectors, double lambda,
                           const RateConfig& cfg) {
  check_features(z, cfg);
  check_projectors(z, part, projectors);
  require(z.cols() >= 1 && z.cols() == part.sample_count(), ErrorCode::kInvalidPartition,
          "partition does not cover the features");

  const Index d = z.rows();
  const Index m = z.cols();
  Matrix grad = -half_logdet_gradient(z, rate_scale(d, m, cfg.epsilon_sq));

  for (int k = 0; k < part.class_count(); ++k) {
    const Index mk = part.count(k);
    if (mk == 0) continue;
    const Matrix zk = part.select(z, k);
    Matrix gk = (static_cast<double>(mk) / static_cast<double>(m)) *
                half_logdet_gradient(zk, rate_scale(d, mk, cfg.epsilon_sq));
    if (lambda != 0.0) gk += (2.0 * lambda) * projectors[static_cast<std::size_t>(k)].residual(zk);
    const auto& idx = part.members(k);
    for (std::size_t c = 0; c < idx.size(); ++c) grad.col(idx[c]) += gk.col(static_cast<Index>(c));
  }
  require(grad.allFinite(), ErrorCode::kNumericalFailure, "non-finite loss gradient");
  return grad;
}

}  // namespace cmvp
