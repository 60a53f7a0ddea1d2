// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cstring>
#include <filesystem>

#include <gtest/gtest.h>

#include "cmvp/error.hpp"
#include "cmvp/fusion.hpp"
#include "test_util.hpp"

namespace cmvp {
namespace {

using test::gaussian;
using test::random_orthonormal;

using test::code_of;

BasisMessage message(std::uint32_t agent, std::uint32_t cls, std::uint32_t round, const Matrix& u) {
  BasisMessage m;
  m.agent_id = agent;
  m.class_id = cls;
  m.round = round;
  m.basis = OrthonormalBasis(u);
  m.singular_values = Vector::LinSpaced(u.cols(), static_cast<double>(u.cols()), 1.0);
  return m;
}

Matrix coordinate_cols(Index d, std::initializer_list<Index> rows) {
  Matrix u = Matrix::Zero(d, static_cast<Index>(rows.size()));
  Index j = 0;
  for (Index r : rows) u(r, j++) = 1.0;
  return u;
}

TEST(ExtractLocalBasis, ExactRankIsLossless) {
  const Matrix truth = random_orthonormal(1, 6, 2);
  const Matrix z = truth * gaussian(2, 2, 9);
  const auto local = extract_local_basis(z, 2);
  EXPECT_LE(grassmann_distance(local.basis, OrthonormalBasis(truth)), 1e-10);
  EXPECT_EQ(local.singular_values.size(), 2);
}

TEST(ExtractLocalBasis, NoisyRankFive) {
  const Matrix truth = random_orthonormal(3, 12, 5);
  const Matrix z = truth * gaussian(4, 5, 30) + 1e-6 * gaussian(5, 12, 30);
  EXPECT_LE(grassmann_distance(extract_local_basis(z, 5).basis, OrthonormalBasis(truth)), 1e-4);
}

TEST(ExtractLocalBasis, Errors) {
  EXPECT_EQ(code_of([] { extract_local_basis(Matrix(4, 0), 1); }), ErrorCode::kEmptyClass);
  EXPECT_EQ(code_of([] { extract_local_basis(Matrix::Ones(4, 2), 3); }), ErrorCode::kInvalidTruncation);
  EXPECT_EQ(code_of([] { extract_local_basis(Matrix::Ones(4, 2), 0); }), ErrorCode::kInvalidTruncation);
}

TEST(Concatenate, OrderAndShape) {
  const Matrix u0 = random_orthonormal(10, 8, 3);
  const Matrix u1 = random_orthonormal(11, 8, 3);
  const Matrix u2 = random_orthonormal(12, 8, 3);
  std::vector<BasisMessage> msgs{message(2, 0, 1, u2), message(0, 0, 1, u0), message(1, 0, 1, u1)};
  const Matrix c = concatenate_bases(msgs);
  ASSERT_EQ(c.cols(), 9);
  EXPECT_EQ(c.leftCols(3), msgs[1].basis.matrix());
  EXPECT_EQ(c.middleCols(3, 3), msgs[2].basis.matrix());
  EXPECT_EQ(c.rightCols(3), msgs[0].basis.matrix());
  const std::vector<BasisMessage> one{msgs[0]};
  EXPECT_EQ(concatenate_bases(one), msgs[0].basis.matrix());
}

TEST(Concatenate, Inconsistent) {
  const Matrix u = random_orthonormal(1, 5, 2);
  const std::vector<BasisMessage> mixed_class{message(0, 0, 1, u), message(1, 1, 1, u)};
  const std::vector<BasisMessage> mixed_round{message(0, 0, 1, u), message(1, 0, 2, u)};
  const std::vector<BasisMessage> mixed_dim{message(0, 0, 1, u), message(1, 0, 1, random_orthonormal(2, 6, 2))};
  const std::vector<BasisMessage> dup{message(0, 0, 1, u), message(0, 0, 1, u)};
  for (const auto* set : {&mixed_class, &mixed_round, &mixed_dim, &dup})
    EXPECT_EQ(code_of([&] { concatenate_bases(*set); }), ErrorCode::kInconsistentMessages);
  EXPECT_EQ(code_of([] { concatenate_bases(std::vector<BasisMessage>{}); }), ErrorCode::kInconsistentMessages);
}

TEST(Fuse, RedundancyRemoved) {
  const Matrix u = coordinate_cols(5, {0, 1});
  std::vector<BasisMessage> msgs;
  for (std::uint32_t i = 0; i < 3; ++i) msgs.push_back(message(i, 0, 0, u));
  const Matrix c = concatenate_bases(msgs);
  EXPECT_EQ(range_basis(c).dim(), 2);
  const auto fused = fuse_bases(c, 2);
  EXPECT_LE(grassmann_distance(fused.basis, OrthonormalBasis(u)), 1e-12);
  EXPECT_FALSE(fused.rank_deficient);
  EXPECT_NEAR(fused.singular_values(0), std::sqrt(3.0), 1e-12);
}

TEST(Fuse, ComplementaryUnion) {
  std::vector<BasisMessage> msgs{message(0, 0, 0, coordinate_cols(4, {0})), message(1, 0, 0, coordinate_cols(4, {1}))};
  const auto fused = fuse_bases(concatenate_bases(msgs), 2);
  EXPECT_LE(grassmann_distance(fused.basis, OrthonormalBasis::coordinate(4, 2)), 1e-12);
}

TEST(Fuse, RankDeficientIsFlaggedAndPadded) {
  const Matrix u = coordinate_cols(5, {0});
  std::vector<BasisMessage> msgs{message(0, 0, 0, u), message(1, 0, 0, u)};
  const auto fused = fuse_bases(concatenate_bases(msgs), 2);
  EXPECT_TRUE(fused.rank_deficient);
  EXPECT_EQ(fused.basis.dim(), 2);
  EXPECT_LE(OrthonormalBasis::orthonormality_error(fused.basis.matrix()), 1e-10);
  EXPECT_EQ(code_of([&] { fuse_bases(concatenate_bases(msgs), 3); }), ErrorCode::kInvalidTruncation);
}

TEST(Fuse, Properties) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::vector<BasisMessage> msgs;
    for (std::uint32_t i = 0; i < 4; ++i) msgs.push_back(message(i, 0, 3, random_orthonormal(seed * 10 + i, 12, 3)));
    const Matrix c = concatenate_bases(msgs);
    const auto fused = fuse_bases(c, 5);
    EXPECT_LE(OrthonormalBasis::orthonormality_error(fused.basis.matrix()), 1e-10);
    // range(fused) inside range(concat)
    const OrthonormalBasis span = range_basis(c);
    const Matrix outside = fused.basis.matrix() - span.matrix() * (span.matrix().transpose() * fused.basis.matrix());
    EXPECT_LE(outside.norm(), 1e-8);
    // agent order does not change the subspace
    std::vector<BasisMessage> perm{msgs[2], msgs[0], msgs[3], msgs[1]};
    for (std::uint32_t i = 0; i < 4; ++i) perm[i].agent_id = i;
    const auto fused_perm = fuse_bases(concatenate_bases(perm), 5);
    EXPECT_LE(grassmann_distance(fused.basis, fused_perm.basis), 1e-8);
    // refusing the fused basis with itself is idempotent
    std::vector<BasisMessage> self{message(0, 0, 0, fused.basis.matrix()), message(1, 0, 0, fused.basis.matrix())};
    EXPECT_LE(grassmann_distance(fuse_bases(concatenate_bases(self), 5).basis, fused.basis), 1e-8);
  }
}

TEST(FusionConfig, Validation) {
  EXPECT_NO_THROW(FusionConfig::uniform(64, 10, 10, 16).validate(6));
  EXPECT_EQ(code_of([] { FusionConfig::uniform(8, 2, 9, 4).validate(2); }), ErrorCode::kConfigError);
  EXPECT_EQ(code_of([] { FusionConfig::uniform(8, 2, 2, 5).validate(2); }), ErrorCode::kConfigError);
  EXPECT_EQ(code_of([] { FusionConfig::uniform(8, 2, 4, 9).validate(3); }), ErrorCode::kConfigError);
}

TEST(Projectors, Built) {
  const std::vector<OrthonormalBasis> bases{OrthonormalBasis::coordinate(3, 1), OrthonormalBasis::coordinate(3, 2)};
  const auto p = build_projectors(bases);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[1].rank(), 2);
  EXPECT_NEAR(p[0].matrix().trace(), 1.0, 1e-15);
}

TEST(Serialization, RoundTripBitExact) {
  auto msg = message(7, 3, 42, random_orthonormal(77, 64, 10));
  msg.singular_values = Vector::Random(10).cwiseAbs();
  const auto bytes = serialize_basis(msg);
  EXPECT_EQ(bytes.size(), serialized_size(64, 10));
  EXPECT_EQ(bytes.size(), 26u + 64u * 10u * 8u + 10u * 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MCRB");
  const auto back = deserialize_basis(bytes);
  EXPECT_EQ(back.agent_id, 7u);
  EXPECT_EQ(back.class_id, 3u);
  EXPECT_EQ(back.round, 42u);
  EXPECT_EQ(0, std::memcmp(back.basis.matrix().data(), msg.basis.matrix().data(), 64 * 10 * sizeof(double)));
  EXPECT_EQ(0, std::memcmp(back.singular_values.data(), msg.singular_values.data(), 10 * sizeof(double)));
}

TEST(Serialization, LittleEndianHeader) {
  const auto bytes = serialize_basis(message(0x01020304u, 5, 6, coordinate_cols(3, {2})));
  EXPECT_EQ(bytes[4], 1);  // version low byte
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[6], 0x04);
  EXPECT_EQ(bytes[9], 0x01);
}

TEST(Serialization, CorruptRejected) {
  const auto good = serialize_basis(message(1, 2, 3, random_orthonormal(5, 6, 2)));
  auto expect_corrupt = [](std::vector<std::uint8_t> b) {
    EXPECT_EQ(code_of([&] { deserialize_basis(b); }), ErrorCode::kCorruptMessage);
  };
  for (std::size_t cut = 0; cut < good.size(); cut += 7) expect_corrupt({good.begin(), good.begin() + static_cast<long>(cut)});
  auto bad = good;
  bad[0] = 'X';
  expect_corrupt(bad);
  bad = good;
  bad[4] = 2;
  expect_corrupt(bad);
  bad = good;
  bad.push_back(0);
  expect_corrupt(bad);
  bad = good;
  const double nan = std::nan("");
  std::memcpy(bad.data() + 26, &nan, 8);
  expect_corrupt(bad);
  bad = good;
  const double big = 3.0;
  std::memcpy(bad.data() + 26, &big, 8);
  expect_corrupt(bad);
  bad = good;
  const double neg = -1.0;
  std::memcpy(bad.data() + bad.size() - 8, &neg, 8);
  expect_corrupt(bad);
  bad = good;
  bad[22] = 0xFF;  // p far larger than the payload
  expect_corrupt(bad);
}

TEST(Serialization, StreamAndFile) {
  std::vector<BasisMessage> msgs;
  for (std::uint32_t i = 0; i < 5; ++i) msgs.push_back(message(i, i % 2, 9, random_orthonormal(i, 7, 1 + i % 3)));
  const auto path = (std::filesystem::temp_directory_path() / "cmvp_stream_test.mcrb").string();
  write_basis_file(path, msgs);
  const auto back = read_basis_file(path);
  ASSERT_EQ(back.size(), msgs.size());
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    EXPECT_EQ(back[i].agent_id, msgs[i].agent_id);
    EXPECT_EQ(back[i].basis.matrix(), msgs[i].basis.matrix());
  }
  std::filesystem::remove(path);
  EXPECT_EQ(code_of([&] { read_basis_file(path); }), ErrorCode::kIoError);
}

}  // namespace
}  // namespace cmvp
