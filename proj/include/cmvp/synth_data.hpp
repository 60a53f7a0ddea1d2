// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef CMVP_SYNTH_DATA_HPP
#define CMVP_SYNTH_DATA_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cmvp/coding_rate.hpp"
#include "cmvp/linalg.hpp"

namespace cmvp {

/// Global discriminative subspace S* = range(U*) made of K mutually
/// orthogonal class blocks, plus each agent's population subspace
/// U_i* = U* O_i.
struct GroundTruth {
  OrthonormalBasis global_basis;      // d x R
  std::vector<Index> class_dims;      // sums to R
  std::vector<Matrix> coverage;       // O_i, R x r_i, orthonormal columns
  std::vector<OrthonormalBasis> agent_bases;
  double beta = 0.0;                  // sigma_R([O_1 ... O_N])
  int attempts = 0;

  Index ambient_dim() const noexcept { return global_basis.ambient_dim(); }
  Index global_dim() const noexcept { return global_basis.dim(); }
  int class_count() const noexcept { return static_cast<int>(class_dims.size()); }
  int agent_count() const noexcept { return static_cast<int>(coverage.size()); }
  Index class_offset(int k) const;
  OrthonormalBasis class_basis(int k) const;
  Matrix coverage_matrix() const;
};

inline constexpr double kDefaultBetaMin = 0.2;
inline constexpr int kCoverageAttempts = 100;

GroundTruth generate_ground_truth(Index d, const std::vector<Index>& class_dims, int agent_count,
                                  const std::vector<Index>& agent_ranks, std::uint64_t seed,
                                  double beta_min = kDefaultBetaMin);

struct AgentSamples {
  Matrix samples;                         // view_dim x m_i
  std::vector<int> labels;                // per sample
  std::vector<std::uint32_t> object_ids;  // alignment index

  Index view_dim() const noexcept { return samples.rows(); }
  Index sample_count() const noexcept { return samples.cols(); }
};

struct MultiViewDataset {
  int class_count = 0;
  std::vector<int> object_labels;  // indexed by object id
  std::vector<AgentSamples> agents;

  int agent_count() const noexcept { return static_cast<int>(agents.size()); }
  std::size_t object_count() const noexcept { return object_labels.size(); }
  void validate() const;
};

struct DatasetParams {
  Index objects_per_class = 40;
  Index view_dim = 0;          // 0: same as the ground-truth ambient dimension
  double noise_sigma = 0.0;
  bool identity_views = false; // A_i = I (requires view_dim == d)
};

/// Latent objects s_t = B_k c with c ~ N(0, I / dim_k); agent i observes
/// x = A_i s_t + eta. Objects are numbered class-major.
MultiViewDataset generate_dataset(const GroundTruth& gt, const DatasetParams& params,
                                  std::uint64_t seed);

/// Moves the last `holdout_per_class` objects of every class (and all their
/// views) into the second dataset.
std::pair<MultiViewDataset, MultiViewDataset> split_holdout(const MultiViewDataset& ds,
                                                            Index holdout_per_class);

MembershipPartition membership_from_labels(const std::vector<int>& labels, int class_count);

// Columnar binary file, little-endian:
//   "MCRD" | u16 version=1 | u32 N | u32 K | u32 object_count | object_count x u32 labels
//   then per agent: u32 view_dim | u32 m | view_dim*m f64 column-major
//                   | m x u32 labels | m x u32 object ids
void save_dataset(const MultiViewDataset& ds, const std::string& path);
MultiViewDataset load_dataset(const std::string& path);
std::vector<std::uint8_t> encode_dataset(const MultiViewDataset& ds);
MultiViewDataset decode_dataset(const std::vector<std::uint8_t>& bytes);

/// One file per agent, one sample per row: features..., label, object id.
/// Separators: comma, semicolon, tab or spaces. Lines starting with '#' are skipped.
AgentSamples read_delimited_agent(const std::string& path);
MultiViewDataset load_delimited_dataset(const std::vector<std::string>& agent_paths,
                                        int class_count);

}  // namespace cmvp

#endif  // CMVP_SYNTH_DATA_HPP
