#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace qnsim;
using namespace qnsim::testing;

namespace {

Vec3 random_stretches(Rng& rng) { return Vec3(rng.uniform(0.6, 1.5), rng.uniform(0.6, 1.5), rng.uniform(0.6, 1.5)); }

MaterialParams params(double mu, double lambda) {
    MaterialParams p;
    p.mu = mu;
    p.lambda = lambda;
    p.kappa1 = mu;
    p.kappa2 = 0.5 * mu;
    return p;
}

} // namespace

TEST(Materials, RestStateIsEnergyAndStressFree) {
    for (const auto& m : all_builtin_materials()) {
        EXPECT_NEAR(vl_energy(*m, Vec3::Ones()), 0.0, 1e-14) << m->name;
        EXPECT_LT(vl_stress(*m, Vec3::Ones()).norm(), 1e-12) << m->name;
        EXPECT_GT(m->k_fit, 0.0) << m->name;
    }
}

TEST(Materials, StressMatchesFiniteDifferences) {
    Rng rng(1);
    for (const auto& m : all_builtin_materials())
        for (int i = 0; i < 200; ++i) {
            const Vec3 s = random_stretches(rng);
            Vec3 fd;
            for (int c = 0; c < 3; ++c) {
                Vec3 sp = s, sm = s;
                sp(c) += 1e-6;
                sm(c) -= 1e-6;
                fd(c) = (vl_energy(*m, sp) - vl_energy(*m, sm)) / 2e-6;
            }
            EXPECT_LT((vl_stress(*m, s) - fd).norm(), 1e-6 * std::max(1.0, fd.norm())) << m->name;
        }
}

TEST(Materials, IsotropicUnderStretchPermutation) {
    Rng rng(2);
    for (const auto& m : all_builtin_materials())
        for (int i = 0; i < 50; ++i) {
            const Vec3 s = random_stretches(rng);
            const Vec3 p(s(2), s(0), s(1));
            EXPECT_NEAR(vl_energy(*m, s), vl_energy(*m, p), 1e-12 * std::max(1.0, std::abs(vl_energy(*m, s))));
        }
}

TEST(Materials, NeoHookeanMatchesClosedForm) {
    const double mu = 3.0, la = 7.0;
    const MaterialModel m = make_builtin("neohookean", params(mu, la));
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        const Vec3 s = random_stretches(rng);
        const double j = s.prod(), lj = std::log(j);
        const double psi = 0.5 * mu * (s.squaredNorm() - 3.0) - mu * lj + 0.5 * la * lj * lj;
        EXPECT_NEAR(vl_energy(m, s), psi, 1e-12 * std::max(1.0, std::abs(psi)));
        for (int c = 0; c < 3; ++c) {
            const double dpsi = mu * s(c) - mu / s(c) + la * lj / s(c);
            EXPECT_NEAR(vl_stress(m, s)(c), dpsi, 1e-12 * std::max(1.0, std::abs(dpsi)));
        }
    }
}

TEST(Materials, CorotatedMatchesClosedForm) {
    const double mu = 2.0, la = 5.0;
    const MaterialModel m = make_builtin("corotated", params(mu, la));
    Rng rng(4);
    for (int i = 0; i < 100; ++i) {
        const Vec3 s = random_stretches(rng);
        const double psi = mu * (s - Vec3::Ones()).squaredNorm() + 0.5 * la * std::pow(s.sum() - 3.0, 2);
        EXPECT_NEAR(vl_energy(m, s), psi, 1e-12 * std::max(1.0, psi));
    }
    EXPECT_NEAR(m.k_fit, 2.0 * mu + la, 1e-9);
}

TEST(Materials, StvkMatchesClosedForm) {
    const double mu = 2.0, la = 5.0;
    const MaterialModel m = make_builtin("stvk", params(mu, la));
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        const Vec3 s = random_stretches(rng);
        const Vec3 e = 0.5 * (s.cwiseProduct(s) - Vec3::Ones());
        const double psi = mu * e.squaredNorm() + 0.5 * la * e.sum() * e.sum();
        EXPECT_NEAR(vl_energy(m, s), psi, 1e-12 * std::max(1.0, psi));
    }
}

TEST(Materials, PolynomialStiffnessFit) {
    for (double mu : {1.0, 50.0, 1e6}) {
        const MaterialModel m = make_builtin("polynomial", params(mu, 0.0));
        EXPECT_NEAR(m.k_fit / (0.6 * mu), 1.0, 0.01);
        EXPECT_NEAR(vl_energy(m, Vec3(1.5, 1.0, 1.0)), mu * std::pow(0.5, 4), 1e-9 * mu);
    }
}

TEST(Materials, SplinePresetsStiffenTheirSide) {
    const MaterialParams p = params(1.0, 4.0);
    const MaterialModel nh = make_builtin("neohookean", p);
    MaterialParams pa = p, pb = p;
    pa.preset = "A";
    pb.preset = "B";
    const MaterialModel a = make_builtin("spline", pa), b = make_builtin("spline", pb);
    const Vec3 comp(0.7, 1.0, 1.0), tens(1.3, 1.0, 1.0);
    EXPECT_GT(vl_energy(a, comp), vl_energy(nh, comp));
    EXPECT_NEAR(vl_energy(a, tens), vl_energy(nh, tens), 1e-12);
    EXPECT_GT(vl_energy(b, tens), vl_energy(nh, tens));
    EXPECT_NEAR(vl_energy(b, comp), vl_energy(nh, comp), 1e-12);
}

TEST(Materials, HermiteSplineInterpolatesCubicsExactly) {
    auto f = [](double x) { return 2.0 * x * x * x - x + 0.5; };
    auto df = [](double x) { return 6.0 * x * x - 1.0; };
    const HermiteSpline s = HermiteSpline::sample({0.0, 0.3, 1.0, 2.0}, f, df);
    for (double x = 0.0; x <= 2.0; x += 0.01) {
        EXPECT_NEAR(s.value(x), f(x), 1e-12);
        EXPECT_NEAR(s.derivative(x), df(x), 1e-11);
    }
    EXPECT_NEAR(s.value(3.0), f(2.0) + df(2.0), 1e-12);
    EXPECT_THROW(HermiteSpline({{0, 0, 0}, {0, 1, 0}}), ValidationError);
    EXPECT_THROW(HermiteSpline({{0, 0, 0}}), ValidationError);
}

TEST(Materials, ValidationErrors) {
    try {
        make_builtin("banana", params(1, 1));
        FAIL();
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        for (const auto& n : builtin_material_names()) EXPECT_NE(msg.find(n), std::string::npos) << n;
    }
    EXPECT_THROW(make_builtin("neohookean", params(-1, 1)), ValidationError);
    EXPECT_THROW(make_builtin("spline", params(1, 1)), ValidationError);
    MaterialParams p = params(1, 1);
    p.preset = "C";
    EXPECT_THROW(make_builtin("spline", p), ValidationError);
    // Stress-free rest state is required of user splines.
    MaterialParams u;
    u.spline_a = HermiteSpline::sample({0.5, 1.0, 1.5}, [](double x) { return x; }, [](double) { return 1.0; });
    EXPECT_THROW(make_builtin("spline", u), ValidationError);
    MaterialParams bad_fit = params(1, 1);
    bad_fit.fit = {1.2, 1.5};
    EXPECT_THROW(make_builtin("corotated", bad_fit), ValidationError);
}

TEST(Materials, DomainErrorsOnNonFiniteInput) {
    const MaterialModel m = make_builtin("neohookean", params(1, 1));
    EXPECT_THROW(vl_energy(m, Vec3(std::nan(""), 1, 1)), DomainError);
    EXPECT_THROW(vl_stress(m, Vec3(1, std::numeric_limits<double>::infinity(), 1)), DomainError);
}

TEST(Materials, ElementGradientMatchesFiniteDifferences) {
    Rng rng(6);
    const TetMesh mesh = box_tet_mesh(1, 1, 1, 1.0);
    const DiffOperator op = tet_operator(mesh.rest, mesh.tets[0]);
    for (const auto& m : all_builtin_materials())
        for (int i = 0; i < 20; ++i) {
            const Positions x = mesh.rest + rng.positions(mesh.num_vertices(), 0.15);
            const ElementEval ev = element_energy_gradient(*m, op, mesh.volumes[0], x);
            for (int a = 0; a < 4; ++a)
                for (int c = 0; c < 3; ++c) {
                    Positions xp = x, xm = x;
                    xp(op.vertices[static_cast<std::size_t>(a)], c) += 1e-6;
                    xm(op.vertices[static_cast<std::size_t>(a)], c) -= 1e-6;
                    const double fd = (element_energy_gradient(*m, op, mesh.volumes[0], xp).energy -
                                       element_energy_gradient(*m, op, mesh.volumes[0], xm).energy) / 2e-6;
                    EXPECT_NEAR(ev.gradient(a, c), fd, 1e-6 * std::max(1.0, ev.gradient.norm())) << m->name;
                }
        }
}

TEST(Materials, EnergyInvariantUnderRigidMotion) {
    Rng rng(7);
    const TetMesh mesh = box_tet_mesh(1, 1, 1, 1.0);
    const DiffOperator op = tet_operator(mesh.rest, mesh.tets[2]);
    for (const auto& m : all_builtin_materials())
        for (int i = 0; i < 20; ++i) {
            const Mat3 r = nearest_rotation(rng.matrix(1.0));
            const Positions x = (mesh.rest * r.transpose()).rowwise() + Eigen::RowVector3d::Random();
            const ElementEval ev = element_energy_gradient(*m, op, 1.0, x);
            EXPECT_NEAR(ev.energy, 0.0, 1e-10) << m->name;
            EXPECT_LT(ev.gradient.norm(), 1e-8) << m->name;
        }
}
