// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "cmvp/error.hpp"
#include "cmvp/linalg.hpp"
#include "test_util.hpp"

namespace cmvp {
namespace {

using test::gaussian;
using test::random_orthonormal;

using test::code_of;

TEST(ThinSvd, IdentityGivesIdentityFactors) {
  const auto svd = thin_svd(Matrix::Identity(3, 3));
  EXPECT_TRUE(svd.u.matrix().isApprox(Matrix::Identity(3, 3)));
  EXPECT_TRUE(svd.v.isApprox(Matrix::Identity(3, 3)));
  EXPECT_TRUE(svd.singular_values.isApprox(Vector::Ones(3)));
}

TEST(ThinSvd, DiagonalSingularValues) {
  Matrix a = Matrix::Zero(3, 3);
  a.diagonal() << 3.0, 2.0, 0.0;
  const auto svd = thin_svd(a);
  EXPECT_NEAR(svd.singular_values(0), 3.0, 1e-14);
  EXPECT_NEAR(svd.singular_values(1), 2.0, 1e-14);
  EXPECT_NEAR(svd.singular_values(2), 0.0, 1e-14);
}

TEST(ThinSvd, RandomReconstructionAndOrthogonality) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const Index rows = 1 + static_cast<Index>(rng.below(32));
    const Index cols = 1 + static_cast<Index>(rng.below(32));
    const Matrix a = rng.gaussian(rows, cols);
    const auto svd = thin_svd(a);
    const Index r = std::min(rows, cols);
    ASSERT_EQ(svd.u.dim(), r);
    ASSERT_EQ(svd.v.cols(), r);
    const Matrix rec = svd.u.matrix() * svd.singular_values.asDiagonal() * svd.v.transpose();
    EXPECT_LE((a - rec).norm(), 1e-8 * std::max(1.0, a.norm())) << "seed " << seed;
    EXPECT_LE(OrthonormalBasis::orthonormality_error(svd.u.matrix()), 1e-10);
    EXPECT_LE(OrthonormalBasis::orthonormality_error(svd.v), 1e-10);
    for (Index i = 1; i < r; ++i) EXPECT_GE(svd.singular_values(i - 1), svd.singular_values(i));
    EXPECT_GE(svd.singular_values.minCoeff(), 0.0);
  }
}

TEST(ThinSvd, SignCanonicalAndBitDeterministic) {
  const Matrix a = gaussian(7, 6, 4);
  const auto s1 = thin_svd(a);
  const auto s2 = thin_svd(a);
  EXPECT_EQ(0, std::memcmp(s1.u.matrix().data(), s2.u.matrix().data(), sizeof(double) * 24));
  for (Index j = 0; j < s1.u.dim(); ++j) {
    Index arg = 0;
    s1.u.matrix().col(j).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(s1.u.matrix()(arg, j), 0.0);
  }
  // flipping the input's sign flips V only
  const auto neg = thin_svd(-a);
  EXPECT_TRUE(neg.u.matrix().isApprox(s1.u.matrix(), 1e-12));
  EXPECT_TRUE(neg.v.isApprox(-s1.v, 1e-12));
}

TEST(ThinSvd, RejectsNonFinite) {
  Matrix a = Matrix::Ones(2, 2);
  a(0, 1) = std::nan("");
  EXPECT_EQ(code_of([&] { thin_svd(a); }), ErrorCode::kInvalidMatrix);
  a(0, 1) = INFINITY;
  EXPECT_EQ(code_of([&] { thin_svd(a); }), ErrorCode::kInvalidMatrix);
  EXPECT_EQ(code_of([&] { thin_svd(Matrix(0, 3)); }), ErrorCode::kInvalidMatrix);
}

TEST(TruncateBasis, FullAndLeading) {
  Matrix a = Matrix::Zero(4, 4);
  a.diagonal() << 1.0, 3.0, 0.0, 2.0;
  const auto svd = thin_svd(a);
  const auto full = truncate_basis(svd, 4);
  EXPECT_TRUE(full.matrix().isApprox(svd.u.matrix()));
  const auto top2 = truncate_basis(svd, 2);
  // sigma = 3 lives on e2, sigma = 2 on e4
  EXPECT_NEAR(top2.matrix()(1, 0), 1.0, 1e-14);
  EXPECT_NEAR(top2.matrix()(3, 1), 1.0, 1e-14);
}

TEST(TruncateBasis, TieBrokenByColumnOrderConsistently) {
  Matrix a = Matrix::Zero(3, 3);
  a.diagonal() << 2.0, 2.0, 1.0;
  const auto first = truncate_basis(thin_svd(a), 1);
  for (int rep = 0; rep < 5; ++rep) {
    const auto again = truncate_basis(thin_svd(a), 1);
    EXPECT_EQ(first.matrix(), again.matrix());
  }
  // The kept column is one of the tied directions.
  EXPECT_NEAR(first.matrix()(2, 0), 0.0, 1e-14);
}

TEST(TruncateBasis, OutOfRange) {
  const auto svd = thin_svd(gaussian(1, 4, 3));
  EXPECT_EQ(code_of([&] { truncate_basis(svd, 0); }), ErrorCode::kInvalidTruncation);
  EXPECT_EQ(code_of([&] { truncate_basis(svd, 4); }), ErrorCode::kInvalidTruncation);
}

TEST(OrthonormalBasis, RejectsNonOrthonormal) {
  Matrix m(2, 2);
  m << 1.0, 0.1, 0.0, 1.0;
  EXPECT_EQ(code_of([&] { OrthonormalBasis b(m); }), ErrorCode::kNotOrthonormal);
  EXPECT_EQ(code_of([&] { OrthonormalBasis b(Matrix::Identity(2, 3)); }), ErrorCode::kNotOrthonormal);
}

TEST(Projector, CoordinatePlane) {
  const ProjectionOperator p(OrthonormalBasis::coordinate(4, 2));
  Matrix expect = Matrix::Zero(4, 4);
  expect(0, 0) = expect(1, 1) = 1.0;
  EXPECT_EQ(p.matrix(), expect);
  EXPECT_EQ(p.rank(), 2);
}

TEST(Projector, DiagonalLineHandOracle) {
  Matrix u(2, 1);
  u << std::sqrt(0.5), std::sqrt(0.5);
  const ProjectionOperator p(OrthonormalBasis{u});
  EXPECT_NEAR(p.matrix()(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(p.matrix()(0, 1), 0.5, 1e-15);
  EXPECT_NEAR(p.matrix()(1, 0), 0.5, 1e-15);
  EXPECT_NEAR(p.matrix()(1, 1), 0.5, 1e-15);
}

TEST(Projector, IdempotentSymmetricTrace) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Index d = 2 + static_cast<Index>(seed % 10);
    const Index r = 1 + static_cast<Index>(seed % static_cast<std::uint64_t>(d));
    const ProjectionOperator p(OrthonormalBasis(random_orthonormal(seed, d, r)));
    const Matrix& m = p.matrix();
    EXPECT_LE((m * m - m).norm(), 1e-10);
    EXPECT_LE((m - m.transpose()).norm(), 1e-14);
    EXPECT_NEAR(m.trace(), static_cast<double>(r), 1e-8);
  }
}

TEST(Projector, RangeContainedInInput) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix a = gaussian(seed, 8, 3) * gaussian(seed + 100, 3, 6);  // rank 3
    const ProjectionOperator p(truncate_basis(thin_svd(a), 3));
    Eigen::JacobiSVD<Matrix> full(a, Eigen::ComputeFullU);
    const Matrix null = full.matrixU().rightCols(5);  // orthogonal to range(A)
    EXPECT_LE((p.matrix() * null).norm(), 1e-8);
  }
}

TEST(PrincipalAngles, BasicCases) {
  const auto e1 = OrthonormalBasis::coordinate(2, 1);
  Matrix e2m(2, 1);
  e2m << 0.0, 1.0;
  const OrthonormalBasis e2(e2m);
  EXPECT_NEAR(principal_angles(e1, e1).at(0), 0.0, 1e-12);
  EXPECT_NEAR(principal_angles(e1, e2).at(0), std::numbers::pi / 2, 1e-12);
  Matrix rot(3, 1);
  rot << std::cos(0.3), std::sin(0.3), 0.0;
  EXPECT_NEAR(principal_angles(OrthonormalBasis::coordinate(3, 1), OrthonormalBasis(rot)).at(0), 0.3, 1e-12);
}

TEST(PrincipalAngles, UnequalDimsAndMismatch) {
  const auto a = OrthonormalBasis(random_orthonormal(3, 6, 2));
  const auto b = OrthonormalBasis(random_orthonormal(4, 6, 4));
  const auto angles = principal_angles(a, b);
  ASSERT_EQ(angles.size(), 2u);
  EXPECT_LE(angles[0], angles[1]);
  EXPECT_EQ(code_of([&] { principal_angles(a, OrthonormalBasis::coordinate(5, 2)); }),
            ErrorCode::kDimensionMismatch);
}

TEST(GrassmannDistance, BasicCases) {
  const auto e1 = OrthonormalBasis::coordinate(2, 1);
  Matrix e2m(2, 1);
  e2m << 0.0, 1.0;
  EXPECT_NEAR(grassmann_distance(e1, e1), 0.0, 1e-15);
  EXPECT_NEAR(grassmann_distance(e1, OrthonormalBasis(e2m)), 1.0, 1e-15);
  Matrix rot(2, 1);
  rot << std::cos(0.3), std::sin(0.3);
  const OrthonormalBasis r(rot);
  EXPECT_NEAR(grassmann_distance(e1, r), std::sin(0.3), 1e-12);
  EXPECT_NEAR(grassmann_distance(e1, r), test::projector_distance(e1.matrix(), r.matrix()), 1e-12);
  EXPECT_EQ(code_of([&] { grassmann_distance(e1, OrthonormalBasis::coordinate(2, 2)); }),
            ErrorCode::kDimensionMismatch);
}

TEST(GrassmannDistance, MatchesProjectorFormAndLargestAngle) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Index d = 3 + static_cast<Index>(seed % 12);
    const Index r = 1 + static_cast<Index>(seed % static_cast<std::uint64_t>(d - 1));
    const OrthonormalBasis a(random_orthonormal(seed, d, r));
    const OrthonormalBasis b(random_orthonormal(seed + 1000, d, r));
    const double dist = grassmann_distance(a, b);
    EXPECT_NEAR(dist, test::projector_distance(a.matrix(), b.matrix()), 1e-8);
    EXPECT_NEAR(dist, std::sin(principal_angles(a, b).back()), 1e-8);
  }
}

TEST(GrassmannDistance, SymmetricAndTriangle) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const OrthonormalBasis a(random_orthonormal(seed, 7, 3));
    const OrthonormalBasis b(random_orthonormal(seed + 1, 7, 3));
    const OrthonormalBasis c(random_orthonormal(seed + 2, 7, 3));
    EXPECT_NEAR(grassmann_distance(a, b), grassmann_distance(b, a), 1e-12);
    EXPECT_LE(grassmann_distance(a, c), grassmann_distance(a, b) + grassmann_distance(b, c) + 1e-8);
  }
}

TEST(GrassmannDistance, AccurateNearZero) {
  const OrthonormalBasis a(random_orthonormal(5, 10, 3));
  Matrix b = a.matrix();
  b.col(0) = std::cos(1e-9) * a.matrix().col(0);
  // add a tiny tilt orthogonal to span(a)
  Matrix q = random_orthonormal(6, 10, 10);
  Vector n = q.col(0) - a.matrix() * (a.matrix().transpose() * q.col(0));
  n.normalize();
  b.col(0) += std::sin(1e-9) * n;
  EXPECT_NEAR(grassmann_distance(a, OrthonormalBasis(b)), 1e-9, 1e-15);
}

TEST(LogDet, MatchesEigenvalues) {
  const Matrix g = gaussian(9, 5, 5);
  const Matrix spd = g * g.transpose() + Matrix::Identity(5, 5);
  Eigen::SelfAdjointEigenSolver<Matrix> es(spd);
  EXPECT_NEAR(log_det_spd(spd), es.eigenvalues().array().log().sum(), 1e-10);
  EXPECT_EQ(code_of([&] { log_det_spd(-Matrix::Identity(2, 2)); }), ErrorCode::kNumericalFailure);
}

TEST(RangeBasis, NumericalRank) {
  const Matrix a = gaussian(2, 9, 2) * gaussian(3, 2, 5);
  const auto basis = range_basis(a);
  EXPECT_EQ(basis.dim(), 2);
  EXPECT_EQ(range_basis(Matrix::Zero(3, 3)).dim(), 0);
}

}  // namespace
}  // namespace cmvp
