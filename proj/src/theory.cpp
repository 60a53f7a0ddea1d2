// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmvp/theory.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "cmvp/fusion.hpp"
#include "cmvp/rng.hpp"

namespace cmvp {

namespace {

void check_class_projectors(const Matrix& z, const MembershipPartition& part,
                            std::span<const ProjectionOperator> projectors) {
  require(static_cast<int>(projectors.size()) == part.class_count(),
          ErrorCode::kDimensionMismatch, "need one projector per class");
  require(z.cols() == part.sample_count(), ErrorCode::kDimensionMismatch,
          "partition/feature sample count mismatch");
  for (const auto& p : projectors) {
    require(p.dim() == z.rows(), ErrorCode::kDimensionMismatch, "projector dimension mismatch");
  }
}

Matrix random_orthonormal(Rng& rng, Index rows, Index cols) {
  if (cols == 0) return Matrix(rows, 0);
  Eigen::HouseholderQR<Matrix> qr(rng.gaussian(rows, cols));
  return qr.householderQ() * Matrix::Identity(rows, cols);
}

ProjectionOperator random_projector(Rng& rng, Index dim, Index rank) {
  if (rank == 0) return ProjectionOperator::zero(dim);
  return ProjectionOperator(OrthonormalBasis(random_orthonormal(rng, dim, rank)));
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

double residual_energy(const Matrix& z, const ProjectionOperator& projector) {
  return projector.residual(z).squaredNorm();
}

std::vector<double> residual_energy_per_class(const Matrix& z, const MembershipPartition& part,
                                              std::span<const ProjectionOperator> projectors) {
  check_class_projectors(z, part, projectors);
  std::vector<double> out;
  out.reserve(projectors.size());
  for (int k = 0; k < part.class_count(); ++k) {
    out.push_back(residual_energy(part.select(z, k), projectors[static_cast<std::size_t>(k)]));
  }
  return out;
}

Matrix project_by_class(const Matrix& z, const MembershipPartition& part,
                        std::span<const ProjectionOperator> projectors) {
  check_class_projectors(z, part, projectors);
  Matrix out(z.rows(), z.cols());
  for (Index j = 0; j < z.cols(); ++j) {
    const int k = part.labels()[static_cast<std::size_t>(j)];
    out.col(j) = projectors[static_cast<std::size_t>(k)].matrix() * z.col(j);
  }
  return out;
}

double TraceBoundReport::relative_slack() const { return slack / std::max(1.0, bound); }

TraceBoundReport check_trace_bound(const Matrix& z, const MembershipPartition& part,
                                   std::span<const ProjectionOperator> projectors,
                                   const RateConfig& cfg) {
  TraceBoundReport rep;
  const Matrix projected = project_by_class(z, part, projectors);
  rep.objective = mcr2_objective(z, part, cfg);
  rep.projected_objective = mcr2_objective(projected, part, cfg);
  rep.difference = std::abs(rep.objective - rep.projected_objective);
  rep.residual = (z - projected).squaredNorm();
  rep.residual_per_class = residual_energy_per_class(z, part, projectors);

  double class_sum = 0.0;
  for (double e : rep.residual_per_class) class_sum += e;
  const double scale = static_cast<double>(z.rows()) /
                       (static_cast<double>(z.cols()) * cfg.epsilon_sq);
  rep.bound = scale * rep.residual + scale * class_sum;
  rep.slack = rep.bound - rep.difference;
  return rep;
}

MonotonicityReport check_rate_monotonicity(const Matrix& z, const ProjectionOperator& projector,
                                           const RateConfig& cfg,
                                           const MembershipPartition* part) {
  require(projector.dim() == z.rows(), ErrorCode::kDimensionMismatch,
          "projector dimension mismatch");
  MonotonicityReport rep;
  rep.rate = coding_rate(z, cfg);
  rep.projected_rate = coding_rate(projector.matrix() * z, cfg);
  rep.holds = rep.projected_rate <= rep.rate + kMonotonicityTol;
  if (part) {
    for (int k = 0; k < part->class_count(); ++k) {
      if (part->count(k) == 0) {
        rep.class_rate.push_back(0.0);
        rep.projected_class_rate.push_back(0.0);
        continue;
      }
      const Matrix zk = part->select(z, k);
      const double r = coding_rate(zk, cfg);
      const double rp = coding_rate(projector.matrix() * zk, cfg);
      rep.class_rate.push_back(r);
      rep.projected_class_rate.push_back(rp);
      rep.holds = rep.holds && rp <= r + kMonotonicityTol;
    }
  }
  return rep;
}

CertificationInstance random_certification_instance(std::uint64_t seed,
                                                    const CertificationLimits& limits) {
  require(limits.max_dim >= 2 && limits.max_samples >= 1 && limits.max_classes >= 1,
          ErrorCode::kInvalidArgument, "certification limits too small");
  Rng rng(seed);
  const Index d = 2 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(limits.max_dim - 1)));
  const Index m = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(limits.max_samples)));
  const int classes = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(limits.max_classes)));

  std::vector<int> labels(static_cast<std::size_t>(m));
  for (auto& label : labels) label = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));

  CertificationInstance inst;
  inst.features = FeatureMatrix::normalized(rng.gaussian(d, m)).matrix();
  inst.partition = MembershipPartition(std::move(labels), classes);
  for (int k = 0; k < classes; ++k) {
    const auto rank = static_cast<Index>(rng.below(static_cast<std::uint64_t>(d)));
    inst.projectors.push_back(random_projector(rng, d, rank));
  }
  inst.projector = random_projector(rng, d, static_cast<Index>(rng.below(static_cast<std::uint64_t>(d + 1))));
  return inst;
}

CertificationSummary certify_trace_bound(int instances, std::uint64_t seed, const RateConfig& cfg,
                                         const CertificationLimits& limits) {
  CertificationSummary out;
  out.worst_relative_slack = std::numeric_limits<double>::infinity();
  for (int t = 0; t < instances; ++t) {
    const auto inst = random_certification_instance(derive_seed(seed, static_cast<std::uint64_t>(t)), limits);
    const auto rep = check_trace_bound(inst.features, inst.partition, inst.projectors, cfg);
    ++out.instances;
    if (!rep.holds()) ++out.violations;
    out.worst_relative_slack = std::min(out.worst_relative_slack, rep.relative_slack());
  }
  return out;
}

CertificationSummary certify_rate_monotonicity(int instances, std::uint64_t seed,
                                               const RateConfig& cfg,
                                               const CertificationLimits& limits) {
  CertificationSummary out;
  out.worst_excess = -std::numeric_limits<double>::infinity();
  for (int t = 0; t < instances; ++t) {
    const auto inst = random_certification_instance(derive_seed(seed, static_cast<std::uint64_t>(t)), limits);
    ++out.instances;
    bool ok = true;
    const auto whole = check_rate_monotonicity(inst.features, inst.projector, cfg, &inst.partition);
    ok = ok && whole.holds;
    out.worst_excess = std::max(out.worst_excess, whole.projected_rate - whole.rate);
    for (std::size_t k = 0; k < whole.class_rate.size(); ++k) {
      out.worst_excess = std::max(out.worst_excess, whole.projected_class_rate[k] - whole.class_rate[k]);
    }
    // Class blocks under their own projectors.
    for (int k = 0; k < inst.partition.class_count(); ++k) {
      if (inst.partition.count(k) == 0) continue;
      const auto rep = check_rate_monotonicity(inst.partition.select(inst.features, k),
                                               inst.projectors[static_cast<std::size_t>(k)], cfg);
      ok = ok && rep.holds;
      out.worst_excess = std::max(out.worst_excess, rep.projected_rate - rep.rate);
    }
    if (!ok) ++out.violations;
  }
  return out;
}

OrthonormalBasis perturb_basis(const OrthonormalBasis& basis, double sin_theta, std::uint64_t seed) {
  require(sin_theta >= 0.0 && sin_theta <= 1.0, ErrorCode::kInvalidArgument,
          "sin_theta must lie in [0, 1]");
  const Index d = basis.ambient_dim();
  const Index r = basis.dim();
  require(2 * r <= d, ErrorCode::kDimensionMismatch, "no room for an orthogonal perturbation");
  if (sin_theta == 0.0) return basis;

  Rng rng(seed);
  const Matrix& u = basis.matrix();
  Matrix g = rng.gaussian(d, r);
  // Two passes of projection keep the complement numerically orthogonal.
  g -= u * (u.transpose() * g);
  g -= u * (u.transpose() * g);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(d, r);
  q -= u * (u.transpose() * q);
  Eigen::HouseholderQR<Matrix> qr2(q);
  q = qr2.householderQ() * Matrix::Identity(d, r);

  const double cos_theta = std::sqrt(std::max(0.0, 1.0 - sin_theta * sin_theta));
  return OrthonormalBasis(cos_theta * u + sin_theta * q, /*canonicalize=*/false);
}

ConsistencyReport fusion_consistency_experiment(const ConsistencyParams& params) {
  require(params.agents >= 1 && params.trials >= 1, ErrorCode::kInvalidCount,
          "need at least one agent and one trial");
  require(params.agent_ranks.size() == static_cast<std::size_t>(params.agents),
          ErrorCode::kInvalidCount, "need one rank per agent");
  ConsistencyReport rep;
  rep.noise_grid = params.noise_grid;
  rep.beta = std::numeric_limits<double>::infinity();
  const double root_2n = std::sqrt(2.0 * params.agents);

  std::vector<double> log_noise, log_median;
  for (std::size_t level = 0; level < params.noise_grid.size(); ++level) {
    const double noise = params.noise_grid[level];
    std::vector<double> distances;
    for (int trial = 0; trial < params.trials; ++trial) {
      const std::uint64_t trial_seed =
          derive_seed(params.seed, level * 1000003ull + static_cast<std::uint64_t>(trial));
      const GroundTruth gt = generate_ground_truth(params.ambient_dim, {params.global_dim},
                                                   params.agents, params.agent_ranks, trial_seed,
                                                   params.beta_min);
      rep.beta = std::min(rep.beta, gt.beta);

      std::vector<BasisMessage> messages;
      double max_delta = 0.0;
      double lipschitz = 0.0;
      for (int i = 0; i < params.agents; ++i) {
        const auto& truth = gt.agent_bases[static_cast<std::size_t>(i)];
        BasisMessage msg;
        msg.agent_id = static_cast<std::uint32_t>(i);
        msg.basis = perturb_basis(truth, noise, derive_seed(trial_seed, 77 + static_cast<std::uint64_t>(i)));
        msg.singular_values = Vector::Ones(msg.basis.dim());
        const double delta = grassmann_distance(msg.basis, truth);
        max_delta = std::max(max_delta, delta);
        if (noise > 0.0) lipschitz = std::max(lipschitz, delta / noise);
        messages.push_back(std::move(msg));
      }
      rep.lipschitz = std::max(rep.lipschitz, lipschitz);

      const FusedBasis fused = fuse_bases(concatenate_bases(messages), params.global_dim);
      ConsistencyTrial t;
      t.noise = noise;
      t.measured_max_delta = max_delta;
      t.distance = grassmann_distance(fused.basis, gt.global_basis);
      const double constant = root_2n * std::max(lipschitz, noise > 0.0 ? 0.0 : 1.0) / gt.beta;
      rep.constant = std::max(rep.constant, constant);
      t.bound = constant * noise;
      // Exact recovery is the bound at zero noise; allow SVD round-off only.
      t.within_bound = noise > 0.0 ? t.distance <= t.bound : t.distance <= 1e-10;
      if (!t.within_bound) ++rep.violations;

      const Matrix proj_diff = ProjectionOperator(fused.basis).matrix() -
                               ProjectionOperator(gt.global_basis).matrix();
      rep.projector_formula_gap =
          std::max(rep.projector_formula_gap, std::abs(symmetric_spectral_norm(proj_diff) - t.distance));

      distances.push_back(t.distance);
      rep.trials.push_back(t);
    }
    rep.median_distance.push_back(median(distances));
    rep.max_distance.push_back(*std::max_element(distances.begin(), distances.end()));
    if (noise > 0.0 && rep.median_distance.back() > 0.0) {
      log_noise.push_back(std::log(noise));
      log_median.push_back(std::log(rep.median_distance.back()));
    }
  }

  if (log_noise.size() >= 2) {
    const double n = static_cast<double>(log_noise.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < log_noise.size(); ++i) {
      mx += log_noise[i];
      my += log_median[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < log_noise.size(); ++i) {
      sxy += (log_noise[i] - mx) * (log_median[i] - my);
      sxx += (log_noise[i] - mx) * (log_noise[i] - mx);
    }
    rep.slope = sxy / sxx;
  }
  return rep;
}

std::string format_consistency_report(const ConsistencyReport& report) {
  std::ostringstream out;
  out << std::setprecision(6);
  for (std::size_t i = 0; i < report.trials.size(); ++i) {
    const auto& t = report.trials[i];
    out << "trial " << i << " noise=" << t.noise << " max_delta=" << t.measured_max_delta
        << " d_gr=" << t.distance << " bound=" << t.bound << (t.within_bound ? " ok" : " VIOLATED")
        << '\n';
  }
  out << "noise        median_d_gr  max_d_gr\n";
  for (std::size_t l = 0; l < report.noise_grid.size(); ++l) {
    out << std::setw(12) << report.noise_grid[l] << ' ' << std::setw(12) << report.median_distance[l]
        << ' ' << std::setw(12) << report.max_distance[l] << '\n';
  }
  out << "beta=" << report.beta << " L=" << report.lipschitz << " C=" << report.constant
      << " slope=" << report.slope << " violations=" << report.violations
      << " projector_gap=" << report.projector_formula_gap << '\n';
  return out.str();
}

}  // namespace cmvp
