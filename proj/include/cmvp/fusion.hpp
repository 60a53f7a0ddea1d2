// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef CMVP_FUSION_HPP
#define CMVP_FUSION_HPP

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cmvp/linalg.hpp"

namespace cmvp {

/// Truncated class basis exchanged between agents after every round.
struct BasisMessage {
  std::uint32_t agent_id = 0;
  std::uint32_t class_id = 0;
  std::uint32_t round = 0;
  OrthonormalBasis basis;
  Vector singular_values;  // the p retained values, diagnostic only
};

/// agent_id used when a fused basis is written with the message format.
inline constexpr std::uint32_t kFusedAgentId = 0xFFFFFFFFu;

struct FusionConfig {
  Index feature_dim = 0;
  std::vector<Index> local_rank;  // p_k per class
  std::vector<Index> fused_rank;  // P_k per class

  static FusionConfig uniform(Index feature_dim, int class_count, Index p, Index fused_p);
  void validate(int agent_count) const;
};

struct LocalBasis {
  OrthonormalBasis basis;
  Vector singular_values;
};

/// Leading p left singular vectors of one class's features (d x m_k).
LocalBasis extract_local_basis(const Matrix& z_k, Index p);

/// [U_1, ..., U_N] in agent_id order.
Matrix concatenate_bases(std::span<const BasisMessage> messages);

struct FusedBasis {
  OrthonormalBasis basis;
  Vector singular_values;     // leading P singular values of the concatenation
  bool rank_deficient = false;
};

FusedBasis fuse_bases(const Matrix& concat, Index fused_rank);

std::vector<ProjectionOperator> build_projectors(std::span<const OrthonormalBasis> fused);

// Wire format, little-endian:
//   "MCRB" | u16 version=1 | u32 agent_id | u32 class_id | u32 round | u32 d | u32 p
//   | d*p f64 column-major | p f64 singular values
inline constexpr std::uint16_t kBasisFormatVersion = 1;
inline constexpr std::size_t kBasisHeaderBytes = 4 + 2 + 5 * 4;

std::size_t serialized_size(Index d, Index p);
std::vector<std::uint8_t> serialize_basis(const BasisMessage& msg);

/// Parses exactly one message; trailing bytes are an error.
BasisMessage deserialize_basis(std::span<const std::uint8_t> bytes);

/// Parses one message from the front of bytes and reports bytes consumed.
BasisMessage deserialize_basis_prefix(std::span<const std::uint8_t> bytes, std::size_t& consumed);

/// Concatenated messages until end of input.
std::vector<BasisMessage> deserialize_basis_stream(std::span<const std::uint8_t> bytes);

void write_basis_file(const std::string& path, std::span<const BasisMessage> messages);
std::vector<BasisMessage> read_basis_file(const std::string& path);

}  // namespace cmvp

#endif  // CMVP_FUSION_HPP
