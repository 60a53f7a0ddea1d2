// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef CMVP_METRICS_HPP
#define CMVP_METRICS_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmvp/linalg.hpp"

namespace cmvp {

/// One agent's features with the metadata the evaluation needs.
struct LabeledFeatures {
  Matrix features;  // d x m, unit-norm columns
  std::vector<int> labels;
  std::vector<std::uint32_t> object_ids;
};

struct SampleKey {
  int label = 0;
  std::uint32_t object_id = 0;
  int agent = 0;
  Index column = 0;

  friend bool operator==(const SampleKey&, const SampleKey&) = default;
};

struct SimilarityMatrix {
  Matrix values;                // m x m
  std::vector<SampleKey> order; // row/column meaning
};

/// Pooled Gram matrix of all agents' features, rows sorted by (class, object, agent).
SimilarityMatrix cosine_similarity_matrix(std::span<const LabeledFeatures> agents);

struct BlockCosine {
  double within_class = 0.0;  // mean |cos| over distinct same-class pairs
  double cross_class = 0.0;   // mean |cos| over different-class pairs
};

BlockCosine block_cosine_stats(const SimilarityMatrix& sim);

struct Classification {
  std::vector<int> predicted;
  double accuracy = 0.0;  // against `truth` when given, else 0
};

/// argmax_k ||P_k z||^2 per column, lowest class index among exact ties.
Classification nearest_subspace_classify(const Matrix& z,
                                         std::span<const ProjectionOperator> projectors,
                                         const std::vector<int>* truth = nullptr);

struct ViewStatistics {
  std::optional<double> sis;  // empty when no object is seen by two agents
  double dis = 0.0;
  double fisher_ratio = 0.0;  // +inf when the within-class scatter vanishes
};

ViewStatistics sis_dis_fisher(std::span<const LabeledFeatures> agents);

/// Requires at least one object observed by two agents.
double same_object_similarity(std::span<const LabeledFeatures> agents);

/// Sine of the largest principal angle between `sub` and its nearest
/// equal-dimension subspace inside range(fused); sub.dim() <= fused.dim().
double containment_distance(const OrthonormalBasis& fused, const OrthonormalBasis& sub);

struct EvalSummary {
  double acc = 0.0;
  std::optional<double> sis;
  double dis = 0.0;
  double fisher_ratio = 0.0;
  BlockCosine cosine;
  std::vector<double> class_subspace_distance;  // per class, averaged over agents
  std::vector<bool> fused_rank_deficient;
};

struct CostConfig {
  std::uint64_t agents = 0;
  std::uint64_t feature_dim = 0;
  std::uint64_t total_samples = 0;  // M = sum_i m_i
  std::vector<std::uint64_t> local_rank;  // p_k
  std::vector<std::uint64_t> fused_rank;  // P_k
};

/// sum_k (M d p_k + N d p_k P_k), exact.
std::uint64_t fusion_cost_estimate(const CostConfig& cfg);

/// Wall-clock seconds of one round of local truncated SVDs and fusions on
/// random features of the configured shape.
double measure_fusion_seconds(const CostConfig& cfg, std::uint64_t seed);

/// Writes `<prefix>.txt` (comma-separated values) and `<prefix>.ppm` (binary
/// P6, blue-white-red over [-1, 1]).
void export_heatmap(const SimilarityMatrix& sim, const std::string& prefix);
std::vector<std::uint8_t> heatmap_ppm(const Matrix& values);
std::string heatmap_text(const Matrix& values);
Matrix import_heatmap_text(const std::string& path);

}  // namespace cmvp

#endif  // CMVP_METRICS_HPP
