// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmvp/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "byte_io.hpp"

namespace cmvp {

FusionConfig FusionConfig::uniform(Index feature_dim, int class_count, Index p, Index fused_p) {
  FusionConfig cfg;
  cfg.feature_dim = feature_dim;
  cfg.local_rank.assign(static_cast<std::size_t>(class_count), p);
  cfg.fused_rank.assign(static_cast<std::size_t>(class_count), fused_p);
  return cfg;
}

void FusionConfig::validate(int agent_count) const {
  require(feature_dim >= 1, ErrorCode::kConfigError, "feature_dim must be positive");
  require(agent_count >= 1, ErrorCode::kConfigError, "need at least one agent");
  require(local_rank.size() == fused_rank.size() && !local_rank.empty(), ErrorCode::kConfigError,
          "per-class ranks must cover every class");
  for (std::size_t k = 0; k < local_rank.size(); ++k) {
    const Index p = local_rank[k];
    const Index fused_p = fused_rank[k];
    if (p < 1 || p > feature_dim || fused_p < 1 ||
        fused_p > std::min<Index>(agent_count * p, feature_dim)) {
      std::ostringstream msg;
      msg << "class " << k << ": need 1 <= p_k <= d and 1 <= P_k <= min(N p_k, d), got p_k=" << p
          << " P_k=" << fused_p << " d=" << feature_dim << " N=" << agent_count;
      fail(ErrorCode::kConfigError, msg.str());
    }
  }
}

LocalBasis extract_local_basis(const Matrix& z_k, Index p) {
  require(z_k.cols() > 0, ErrorCode::kEmptyClass, "class has no samples this round");
  if (p < 1 || p > std::min(z_k.rows(), z_k.cols())) {
    std::ostringstream msg;
    msg << "local rank " << p << " outside [1, min(d=" << z_k.rows() << ", m_k=" << z_k.cols()
        << ")]";
    fail(ErrorCode::kInvalidTruncation, msg.str());
  }
  const SingularTriple svd = thin_svd(z_k);
  return LocalBasis{truncate_basis(svd, p), svd.singular_values.head(p)};
}

Matrix concatenate_bases(std::span<const BasisMessage> messages) {
  require(!messages.empty(), ErrorCode::kInconsistentMessages, "no messages to concatenate");
  std::vector<const BasisMessage*> order;
  order.reserve(messages.size());
  for (const auto& m : messages) order.push_back(&m);
  std::sort(order.begin(), order.end(),
            [](const BasisMessage* a, const BasisMessage* b) { return a->agent_id < b->agent_id; });

  const BasisMessage& first = *order.front();
  Index total_cols = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const BasisMessage& m = *order[i];
    if (m.class_id != first.class_id || m.round != first.round ||
        m.basis.ambient_dim() != first.basis.ambient_dim()) {
      fail(ErrorCode::kInconsistentMessages, "messages mix classes, rounds or dimensions");
    }
    if (i > 0 && order[i - 1]->agent_id == m.agent_id) {
      fail(ErrorCode::kInconsistentMessages, "duplicate agent_id in message set");
    }
    total_cols += m.basis.dim();
  }

  Matrix concat(first.basis.ambient_dim(), total_cols);
  Index col = 0;
  for (const BasisMessage* m : order) {
    concat.middleCols(col, m->basis.dim()) = m->basis.matrix();
    col += m->basis.dim();
  }
  return concat;
}

FusedBasis fuse_bases(const Matrix& concat, Index fused_rank) {
  if (fused_rank < 1 || fused_rank > std::min(concat.rows(), concat.cols())) {
    std::ostringstream msg;
    msg << "fused rank " << fused_rank << " outside [1, " << std::min(concat.rows(), concat.cols())
        << "]";
    fail(ErrorCode::kInvalidTruncation, msg.str());
  }
  const SingularTriple svd = thin_svd(concat);
  FusedBasis out;
  out.basis = truncate_basis(svd, fused_rank);
  out.singular_values = svd.singular_values.head(fused_rank);
  const double sigma_max = svd.singular_values(0);
  const double cutoff = static_cast<double>(std::max(concat.rows(), concat.cols())) *
                        std::numeric_limits<double>::epsilon() * sigma_max;
  out.rank_deficient = !(svd.singular_values(fused_rank - 1) > cutoff);
  return out;
}

std::vector<ProjectionOperator> build_projectors(std::span<const OrthonormalBasis> fused) {
  std::vector<ProjectionOperator> out;
  out.reserve(fused.size());
  for (const auto& b : fused) out.push_back(projector_from_basis(b));
  return out;
}

std::size_t serialized_size(Index d, Index p) {
  return kBasisHeaderBytes + static_cast<std::size_t>(d * p) * 8 + static_cast<std::size_t>(p) * 8;
}

std::vector<std::uint8_t> serialize_basis(const BasisMessage& msg) {
  const Index d = msg.basis.ambient_dim();
  const Index p = msg.basis.dim();
  require(msg.singular_values.size() == p, ErrorCode::kInvalidArgument,
          "message needs one singular value per basis column");
  require(d <= std::numeric_limits<std::uint32_t>::max(), ErrorCode::kInvalidArgument,
          "dimension exceeds format limit");

  detail::ByteWriter w(serialized_size(d, p));
  w.raw("MCRB");
  w.u16(kBasisFormatVersion);
  w.u32(msg.agent_id);
  w.u32(msg.class_id);
  w.u32(msg.round);
  w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(p));
  const Matrix& u = msg.basis.matrix();
  for (Index j = 0; j < p; ++j)
    for (Index i = 0; i < d; ++i) w.f64(u(i, j));
  for (Index j = 0; j < p; ++j) w.f64(msg.singular_values(j));
  return std::move(w.bytes());
}

BasisMessage deserialize_basis_prefix(std::span<const std::uint8_t> bytes, std::size_t& consumed) {
  constexpr auto kCorrupt = ErrorCode::kCorruptMessage;
  detail::ByteReader r(bytes, kCorrupt);
  r.expect_tag("MCRB");
  const std::uint16_t version = r.u16();
  if (version != kBasisFormatVersion) {
    fail(kCorrupt, "unsupported basis format version " + std::to_string(version));
  }
  BasisMessage msg;
  msg.agent_id = r.u32();
  msg.class_id = r.u32();
  msg.round = r.u32();
  const std::uint32_t d = r.u32();
  const std::uint32_t p = r.u32();
  require(d >= 1 && p >= 1 && p <= d, kCorrupt, "invalid basis shape in header");
  r.need_items(static_cast<std::uint64_t>(d) * p + p, 8);

  Matrix u(d, p);
  for (std::uint32_t j = 0; j < p; ++j)
    for (std::uint32_t i = 0; i < d; ++i) u(i, j) = r.f64();
  Vector s(p);
  for (std::uint32_t j = 0; j < p; ++j) s(j) = r.f64();
  require(u.allFinite() && s.allFinite(), kCorrupt, "non-finite entries in basis payload");
  require((s.array() >= 0.0).all(), kCorrupt, "negative singular value in payload");

  if (OrthonormalBasis::orthonormality_error(u) > kOrthonormalTol) {
    fail(kCorrupt, "payload basis is not orthonormal");
  }
  // Keep the transmitted bits; the sender already applied its sign convention.
  msg.basis = OrthonormalBasis(std::move(u), /*canonicalize=*/false);
  msg.singular_values = std::move(s);
  consumed = r.position();
  return msg;
}

BasisMessage deserialize_basis(std::span<const std::uint8_t> bytes) {
  std::size_t consumed = 0;
  BasisMessage msg = deserialize_basis_prefix(bytes, consumed);
  require(consumed == bytes.size(), ErrorCode::kCorruptMessage, "trailing bytes after message");
  return msg;
}

std::vector<BasisMessage> deserialize_basis_stream(std::span<const std::uint8_t> bytes) {
  std::vector<BasisMessage> out;
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    std::size_t consumed = 0;
    out.push_back(deserialize_basis_prefix(bytes.subspan(offset), consumed));
    offset += consumed;
  }
  return out;
}

void write_basis_file(const std::string& path, std::span<const BasisMessage> messages) {
  std::vector<std::uint8_t> all;
  for (const auto& m : messages) {
    const auto bytes = serialize_basis(m);
    all.insert(all.end(), bytes.begin(), bytes.end());
  }
  detail::write_file_bytes(path, all);
}

std::vector<BasisMessage> read_basis_file(const std::string& path) {
  return deserialize_basis_stream(detail::read_file_bytes(path));
}

}  // namespace cmvp
