// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef CMVP_CODING_RATE_HPP
#define CMVP_CODING_RATE_HPP

#include <span>
#include <vector>

#include "cmvp/linalg.hpp"

namespace cmvp {

inline constexpr double kUnitNormTol = 1e-8;

/// d x m features with unit-norm columns. The rate functionals below take
/// plain matrices since projected features are not unit norm.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  explicit FeatureMatrix(Matrix columns);

  /// Scales every column to unit norm first.
  static FeatureMatrix normalized(Matrix columns);

  const Matrix& matrix() const noexcept { return columns_; }
  Index feature_dim() const noexcept { return columns_.rows(); }
  Index sample_count() const noexcept { return columns_.cols(); }

 private:
  Matrix columns_;
};

/// Hard class assignment; the per-class index lists stand in for Pi_k.
class MembershipPartition {
 public:
  MembershipPartition() = default;
  MembershipPartition(std::vector<int> labels, int class_count);

  int class_count() const noexcept { return class_count_; }
  Index sample_count() const noexcept { return static_cast<Index>(labels_.size()); }
  const std::vector<int>& labels() const noexcept { return labels_; }
  /// tr(Pi_k)
  Index count(int k) const { return static_cast<Index>(members_.at(static_cast<std::size_t>(k)).size()); }
  const std::vector<Index>& members(int k) const { return members_.at(static_cast<std::size_t>(k)); }

  /// Columns of z belonging to class k, in sample order.
  Matrix select(const Matrix& z, int k) const;

 private:
  std::vector<int> labels_;
  int class_count_ = 0;
  std::vector<std::vector<Index>> members_;
};

struct RateConfig {
  double epsilon_sq = 0.5;
  Index feature_dim = 0;  // 0: take from the features

  void validate() const;
};

struct LocalLossValue {
  double rate_expand = 0.0;      // R(Z)
  double rate_compress = 0.0;    // R^c(Z | Pi)
  double projection_penalty = 0.0;
  double lambda = 0.0;
  double total = 0.0;            // R^c - R + lambda * penalty
};

/// 1/2 logdet(I + d/(m eps^2) Z Z^T), evaluated on the smaller Gram.
double coding_rate(const Matrix& z, const RateConfig& cfg);

/// Same quantity with an explicit choice of the d x d (true) or m x m form.
double coding_rate_form(const Matrix& z, const RateConfig& cfg, bool feature_gram);

double class_coding_rate(const Matrix& z, const MembershipPartition& part, const RateConfig& cfg);

/// R - R^c. Training minimizes its negation.
double mcr2_objective(const Matrix& z, const MembershipPartition& part, const RateConfig& cfg);

double projection_penalty(std::span<const Matrix> z_by_class,
                          std::span<const ProjectionOperator> projectors);

double projection_penalty(const Matrix& z, const MembershipPartition& part,
                          std::span<const ProjectionOperator> projectors);

LocalLossValue local_loss(const Matrix& z, const MembershipPartition& part,
                          std::span<const ProjectionOperator> projectors, double lambda,
                          const RateConfig& cfg);

/// d/dZ of local_loss(...).total, d x m.
Matrix local_loss_gradient(const Matrix& z, const MembershipPartition& part,
                           std::span<const ProjectionOperator> projectors, double lambda,
                           const RateConfig& cfg);

}  // namespace cmvp

#endif  // CMVP_CODING_RATE_HPP
