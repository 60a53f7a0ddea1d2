// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef CMVP_THEORY_HPP
#define CMVP_THEORY_HPP

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cmvp/coding_rate.hpp"
#include "cmvp/linalg.hpp"
#include "cmvp/synth_data.hpp"

namespace cmvp {

/// ||(I - P) Z||_F^2
double residual_energy(const Matrix& z, const ProjectionOperator& projector);

/// Per-class residuals ||(I - P_k) Z_k||_F^2, one entry per class.
std::vector<double> residual_energy_per_class(const Matrix& z, const MembershipPartition& part,
                                              std::span<const ProjectionOperator> projectors);

/// Block projection: column j replaced by P_{label(j)} z_j.
Matrix project_by_class(const Matrix& z, const MembershipPartition& part,
                        std::span<const ProjectionOperator> projectors);

inline constexpr double kBoundRelTol = 1e-8;

/// MCR^2 change under the block projection against the residual-energy bound
/// (d / (m eps^2)) * (eps_total + sum_k eps_k).
struct TraceBoundReport {
  double objective = 0.0;            // M(Z)
  double projected_objective = 0.0;  // M(P~ Z)
  double difference = 0.0;           // |M(Z) - M(P~ Z)|
  double residual = 0.0;             // eps_i
  std::vector<double> residual_per_class;
  double bound = 0.0;
  double slack = 0.0;                // bound - difference

  double relative_slack() const;
  bool holds() const { return slack >= -kBoundRelTol * std::max(1.0, bound); }
};

TraceBoundReport check_trace_bound(const Matrix& z, const MembershipPartition& part,
                                   std::span<const ProjectionOperator> projectors,
                                   const RateConfig& cfg);

struct MonotonicityReport {
  double rate = 0.0;            // R(Z)
  double projected_rate = 0.0;  // R(P Z)
  std::vector<double> class_rate;            // R(Z_k) per class (empty without partition)
  std::vector<double> projected_class_rate;  // R(P Z_k)
  bool holds = true;
};

inline constexpr double kMonotonicityTol = 1e-10;

/// R(P Z) <= R(Z) + tol, and the same for every class block when a partition is given.
MonotonicityReport check_rate_monotonicity(const Matrix& z, const ProjectionOperator& projector,
                                           const RateConfig& cfg,
                                           const MembershipPartition* part = nullptr);

/// Random instances for certifying the two inequalities above.
struct CertificationInstance {
  Matrix features;
  MembershipPartition partition;
  std::vector<ProjectionOperator> projectors;
  /// Single projector for the monotonicity check.
  ProjectionOperator projector;
};

struct CertificationLimits {
  Index max_dim = 16;
  Index max_samples = 64;
  int max_classes = 4;
};

/// Unit-norm Gaussian features, random labels, independent random projectors
/// of rank in [0, d - 1].
CertificationInstance random_certification_instance(std::uint64_t seed,
                                                    const CertificationLimits& limits = {});

struct CertificationSummary {
  int instances = 0;
  int violations = 0;
  double worst_relative_slack = 0.0;  // trace bound: min slack / max(1, bound)
  double worst_excess = 0.0;          // monotonicity: max R(PZ) - R(Z) over all checks
};

CertificationSummary certify_trace_bound(int instances, std::uint64_t seed,
                                         const RateConfig& cfg = {},
                                         const CertificationLimits& limits = {});
CertificationSummary certify_rate_monotonicity(int instances, std::uint64_t seed,
                                               const RateConfig& cfg = {},
                                               const CertificationLimits& limits = {});

/// Rotate `basis` along a random geodesic so that every principal angle to
/// the original equals arcsin(sin_theta).
OrthonormalBasis perturb_basis(const OrthonormalBasis& basis, double sin_theta, std::uint64_t seed);

struct ConsistencyTrial {
  double noise = 0.0;        // prescribed max_i Delta_i
  double measured_max_delta = 0.0;
  double distance = 0.0;     // d_Gr(range(U_fuse), S*)
  double bound = 0.0;        // C * max_i Delta_i
  bool within_bound = true;
};

struct ConsistencyReport {
  std::vector<double> noise_grid;
  std::vector<ConsistencyTrial> trials;   // level-major
  std::vector<double> median_distance;    // per level
  std::vector<double> max_distance;       // per level
  double beta = 0.0;                      // smallest sigma_R(M) across trials
  double lipschitz = 0.0;                 // sup ||sin Theta|| / Delta_i
  double constant = 0.0;                  // sqrt(2N) L / beta, worst across trials
  double slope = 0.0;                     // least squares slope of log median vs log noise
  int violations = 0;
  double projector_formula_gap = 0.0;     // max |d_Gr - ||P_S - P_T||_2| over trials
};

struct ConsistencyParams {
  int agents = 4;
  Index ambient_dim = 32;
  Index global_dim = 8;
  std::vector<Index> agent_ranks{4, 4, 4, 4};
  std::vector<double> noise_grid{1e-3, 3e-3, 1e-2, 3e-2, 1e-1};
  int trials = 50;
  std::uint64_t seed = 0;
  double beta_min = kDefaultBetaMin;
};

ConsistencyReport fusion_consistency_experiment(const ConsistencyParams& params);

/// One line per trial plus a summary table.
std::string format_consistency_report(const ConsistencyReport& report);

}  // namespace cmvp

#endif  // CMVP_THEORY_HPP
