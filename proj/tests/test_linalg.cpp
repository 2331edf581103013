#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace qnsim;
using namespace qnsim::testing;

namespace {

// Random sparse SPD matrix: a banded Laplacian-like part plus a positive diagonal.
SpMatrix random_spd(Rng& rng, int n) {
    std::vector<Triplet> t;
    for (int i = 0; i < n; ++i) {
        t.emplace_back(i, i, rng.uniform(0.1, 2.0));
        for (int j : {i + 1, i + 3}) {
            if (j >= n) continue;
            const double w = rng.uniform(0.0, 5.0);
            t.emplace_back(i, i, w);
            t.emplace_back(j, j, w);
            t.emplace_back(i, j, -w);
            t.emplace_back(j, i, -w);
        }
    }
    SpMatrix a(n, n);
    a.setFromTriplets(t.begin(), t.end());
    return a;
}

} // namespace

TEST(Factorization, SolvesRandomSpdSystems) {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = rng.integer(4, 80);
        const SpMatrix a = random_spd(rng, n);
        const Factorization f = factorize_spd(a);
        const Positions b = rng.positions(n, 10.0);
        const Positions x = solve_prefactored(f, b);
        EXPECT_LT((a * x - b).norm() / b.norm(), 1e-12);
    }
}

TEST(Factorization, CountsEveryFactorization) {
    Rng rng(2);
    const long before = factorization_count();
    const Factorization f = factorize_spd(random_spd(rng, 10));
    for (int i = 0; i < 5; ++i) solve_prefactored(f, rng.positions(10, 1.0));
    EXPECT_EQ(factorization_count(), before + 1);
}

TEST(Factorization, RejectsIndefiniteMatrix) {
    SpMatrix a(2, 2);
    a.insert(0, 0) = 1.0;
    a.insert(1, 1) = -1.0;
    EXPECT_THROW(factorize_spd(a), FactorizationError);
}

TEST(Factorization, RejectsMismatchedRightHandSide) {
    Rng rng(3);
    const Factorization f = factorize_spd(random_spd(rng, 6));
    EXPECT_THROW(solve_prefactored(f, rng.positions(5, 1.0)), DimensionError);
    EXPECT_THROW(Factorization().solve(Eigen::VectorXd::Zero(3)), DimensionError);
}

TEST(RotationVariantSvd, ReconstructsWithProperRotations) {
    Rng rng(4);
    for (int i = 0; i < 1000; ++i) {
        const Mat3 f = rng.matrix(2.0);
        const RotVarSVD s = svd_rv(f);
        EXPECT_NEAR(s.U.determinant(), 1.0, 1e-12);
        EXPECT_NEAR(s.V.determinant(), 1.0, 1e-12);
        EXPECT_LT((s.U * s.sigma.asDiagonal() * s.V.transpose() - f).norm(), 1e-12 * std::max(1.0, f.norm()));
        EXPECT_GE(s.sigma(0), s.sigma(1));
        EXPECT_GE(s.sigma(1), std::abs(s.sigma(2)));
        EXPECT_EQ(s.sigma(2) < 0.0, f.determinant() < 0.0);
    }
}

TEST(RotationVariantSvd, ReflectionGoesToLastSingularValue) {
    const Mat3 f = Vec3(-1.0, 2.0, 3.0).asDiagonal();
    const RotVarSVD s = svd_rv(f);
    EXPECT_NEAR(s.sigma(0), 3.0, 1e-14);
    EXPECT_NEAR(s.sigma(1), 2.0, 1e-14);
    EXPECT_NEAR(s.sigma(2), -1.0, 1e-14);
}

TEST(RotationVariantSvd, ClampsTinySingularValues) {
    const RotVarSVD s = svd_rv(Mat3::Zero());
    for (int i = 0; i < 3; ++i) EXPECT_EQ(std::abs(s.sigma(i)), kMinSingularValue);
    Mat3 bad = Mat3::Identity();
    bad(1, 2) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(svd_rv(bad), DomainError);
}

TEST(NearestRotation, IsOrthogonalAndFixesRotations) {
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const Mat3 r = nearest_rotation(rng.matrix(1.0));
        EXPECT_LT((r * r.transpose() - Mat3::Identity()).norm(), 1e-12);
        EXPECT_NEAR(r.determinant(), 1.0, 1e-12);
        EXPECT_LT((nearest_rotation(r) - r).norm(), 1e-12);
    }
}

TEST(NearestRotation, ExtractsRotationFromStretch) {
    const Mat3 rz = Eigen::AngleAxisd(M_PI / 6.0, Vec3::UnitZ()).toRotationMatrix();
    const Mat3 f = rz * Vec3(2.0, 1.0, 1.0).asDiagonal();
    EXPECT_LT((nearest_rotation(f) - rz).norm(), 1e-12);
}

TEST(TraceDot, MatchesFlattenedDotProduct) {
    Rng rng(6);
    const Positions a = rng.positions(7, 1.0), b = rng.positions(7, 1.0);
    EXPECT_NEAR(trace_dot(a, b), (a.transpose() * b).trace(), 1e-13);
}
