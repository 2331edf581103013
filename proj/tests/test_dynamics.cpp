#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace qnsim;
using namespace qnsim::testing;

namespace {

SpringNetwork two_point_spring(double k, double len) {
    SpringNetwork net;
    net.rest.resize(2, 3);
    net.rest << 0, 0, 0, len, 0, 0;
    net.springs.push_back({0, 1, len, k});
    return net;
}

// Two vertices with unit mass each; a spring network needs faces for mass lumping, so the
// system is assembled by hand here.
SimSystem spring_system(double k, double len, const SystemOptions& opt = {}) {
    const SpringNetwork net = two_point_spring(k, len);
    SimSystem sys;
    sys.rest = net.rest;
    sys.masses = Eigen::VectorXd::Ones(2);
    Element el;
    el.kind = ElementKind::spring;
    el.op = spring_operator(net.springs[0]);
    el.weight = k;
    el.rest_length = len;
    sys.elements.push_back(el);
    detail::finalize_system(sys, opt);
    return sys;
}

SimSystem tet_box(const std::string& mat, const SystemOptions& opt = {}, int nx = 2) {
    MaterialParams p;
    p.mu = 1e3;
    p.lambda = 4e3;
    p.kappa1 = 1e3;
    p.kappa2 = 500;
    return build_system(box_tet_mesh(nx, 1, 1, 0.1), TetMaterial(material(mat, p)), opt);
}

} // namespace

TEST(Assembly, SpringLaplacianOracle) {
    const SimSystem sys = spring_system(3.0, 2.0);
    const Eigen::MatrixXd l = Eigen::MatrixXd(sys.L);
    Eigen::Matrix2d expected;
    expected << 3, -3, -3, 3;
    EXPECT_LT((l - expected).norm(), 1e-15);
    EXPECT_EQ(sys.pd_rows, 1);
}

TEST(Assembly, LaplacianAnnihilatesTranslationsAndIsSymmetric) {
    SystemOptions opt;
    opt.aniso = {{0, Vec3::UnitX(), 10.0}, {3, Vec3(0, 0.6, 0.8), 5.0}};
    for (const SimSystem& sys : {tet_box("neohookean", opt), build_system(cloth_grid(4, 3, 1.0, 7.0), 0.2, {})}) {
        const Eigen::MatrixXd l(sys.L);
        EXPECT_LT((l - l.transpose()).norm(), 1e-12 * l.norm());
        EXPECT_LT((l * Eigen::VectorXd::Ones(l.rows())).norm(), 1e-10 * l.norm());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(l);
        EXPECT_GT(es.eigenvalues().minCoeff(), -1e-9 * l.norm());
    }
}

TEST(Assembly, WeightsUseFittedStiffness) {
    MaterialParams p;
    p.mu = 10.0;
    const auto poly = material("polynomial", p);
    const TetMesh mesh = box_tet_mesh(1, 1, 1, 1.0);
    const SimSystem sys = build_system(mesh, TetMaterial(poly), {});
    for (std::size_t e = 0; e < sys.elements.size(); ++e) {
        EXPECT_DOUBLE_EQ(sys.elements[e].weight, mesh.volumes[e] * poly->k_fit);
        EXPECT_NEAR(sys.elements[e].weight / (mesh.volumes[e] * 6.0), 1.0, 0.01);
    }
    EXPECT_EQ(sys.pd_rows, 0);
    EXPECT_DOUBLE_EQ(sys.collision_weight, 10.0 * sys.elements[0].weight);
}

TEST(Assembly, FixedVerticesAreEliminated) {
    SystemOptions opt;
    opt.fixed = {0, 2};
    const SimSystem sys = tet_box("corotated", opt);
    EXPECT_EQ(sys.num_free(), sys.num_vertices() - 2);
    EXPECT_EQ(sys.system_free.rows(), sys.num_free());
    EXPECT_EQ(sys.system_coupling.cols(), 2);
    EXPECT_EQ(sys.free_index[0], -1);
    EXPECT_EQ(sys.free_index[1], 0);

    SystemOptions all;
    for (int v = 0; v < 8; ++v) all.fixed.push_back(v);
    EXPECT_THROW(build_system(box_tet_mesh(1, 1, 1, 1.0), TetMaterial(ArapMaterial{1.0}), SystemOptions{all}), ValidationError);
    SystemOptions tmp = all;
    tmp.fixed = {-1};
    EXPECT_THROW(tet_box("corotated", tmp), ValidationError);
}

TEST(Assembly, ValidatesOptions) {
    SystemOptions bad_h;
    bad_h.h = 0.0;
    EXPECT_THROW(tet_box("corotated", bad_h), ValidationError);
    SystemOptions bad_aniso;
    bad_aniso.aniso = {{0, Vec3(1, 1, 0), 1.0}};
    EXPECT_THROW(tet_box("corotated", bad_aniso), ValidationError);
    bad_aniso.aniso = {{999, Vec3::UnitX(), 1.0}};
    EXPECT_THROW(tet_box("corotated", bad_aniso), ValidationError);
    SystemOptions bad_w;
    bad_w.collision_weight = -1.0;
    EXPECT_THROW(tet_box("corotated", bad_w), ValidationError);
    EXPECT_THROW(build_system(box_tet_mesh(1, 1, 1, 1.0), std::vector<TetMaterial>(2, ArapMaterial{1.0}), {}), DimensionError);
}

TEST(Assembly, FactorizesOnce) {
    const long before = factorization_count();
    const SimSystem sys = tet_box("stvk");
    EXPECT_EQ(factorization_count(), before + 1);
    const Eigen::MatrixXd a(sys.system_free);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
}

TEST(Inertia, TargetCases) {
    SystemOptions opt;
    opt.gravity = Vec3(0, -10, 0);
    opt.h = 0.1;
    opt.fixed = {1};
    const SimSystem sys = spring_system(1.0, 1.0, opt);
    SimState st = make_state(sys);
    st.q.row(0) << 1, 2, 3;
    st.q_prev.row(0) << 0, 2, 3;
    st.targets.row(1) << 5, 5, 5;
    const Positions y = inertia_target(st, sys);
    EXPECT_LT((y.row(0) - Eigen::RowVector3d(2, 2 - 0.1, 3)).norm(), 1e-14);
    EXPECT_LT((y.row(1) - Eigen::RowVector3d(5, 5, 5)).norm(), 1e-15);
}

TEST(Objective, MatchesPerTermOracle) {
    const SimSystem sys = spring_system(4.0, 1.0);
    SimState st = make_state(sys);
    st.y.row(1) << 1.5, 0, 0;
    Positions x = sys.rest;
    x.row(1) << 2.0, 0, 0;
    const double inertia = 0.5 / (sys.h * sys.h) * 0.25;
    const double spring = 0.5 * 4.0 * 1.0;
    EXPECT_NEAR(objective(sys, st, x), inertia + spring, 1e-12);
}

TEST(Objective, GradientMatchesFiniteDifferences) {
    Rng rng(1);
    SystemOptions opt;
    opt.gravity = Vec3(0, -9.81, 0);
    opt.fixed = {0};
    opt.aniso = {{1, Vec3::UnitY(), 300.0}};
    for (const char* m : {"corotated", "neohookean", "mooney_rivlin"}) {
        const SimSystem sys = tet_box(m, opt);
        for (int i = 0; i < 10; ++i) {
            SimState st = make_state(sys);
            st.y = sys.rest + rng.positions(sys.num_vertices(), 0.01);
            const Positions x = sys.rest + rng.positions(sys.num_vertices(), 0.02);
            const Positions g = gradient(sys, st, x);
            EXPECT_LT(rel_diff(g, fd_gradient(sys, st, x, 1e-7)), 1e-6) << m;
            EXPECT_EQ(g.row(0).norm(), 0.0);
        }
    }
}

TEST(Objective, ElasticForcesConserveMomentum) {
    Rng rng(2);
    for (const char* m : {"stvk", "polynomial"}) {
        const SimSystem sys = tet_box(m);
        SimState st = make_state(sys);
        const Positions x = sys.rest + rng.positions(sys.num_vertices(), 0.02);
        st.y = x;   // inertia term vanishes
        const Positions g = gradient(sys, st, x);
        EXPECT_LT(g.colwise().sum().norm(), 1e-9 * g.norm()) << m;
        // Angular momentum: sum x_i x f_i = 0 for rotation-invariant energies.
        Vec3 torque = Vec3::Zero();
        for (Eigen::Index v = 0; v < x.rows(); ++v) torque += Vec3(x.row(v)).cross(Vec3(g.row(v)));
        EXPECT_LT(torque.norm(), 1e-9 * g.norm()) << m;
    }
}

TEST(Projection, ArapRotationAndSpringLength) {
    Element arap;
    arap.kind = ElementKind::arap;
    const Mat3 rz = Eigen::AngleAxisd(M_PI / 6.0, Vec3::UnitZ()).toRotationMatrix();
    const Mat3 f = rz * Vec3(2, 1, 1).asDiagonal();
    const DiffOperator::Result p = project_element(arap, f.transpose());
    EXPECT_LT((p.transpose() - rz).norm(), 1e-12);

    Element spring;
    spring.kind = ElementKind::spring;
    spring.rest_length = 1.0;
    DiffOperator::Result e(1, 3);
    e << 2, 0, 0;
    const DiffOperator::Result ps = project_element(spring, e);
    EXPECT_LT((ps - Eigen::RowVector3d(1, 0, 0)).norm(), 1e-15);
    e.setZero();
    EXPECT_THROW(project_element(spring, e), DomainError);
}

TEST(GlobalStep, MatchesZeroGradientOfFrozenProjectionObjective) {
    Rng rng(3);
    SystemOptions opt;
    opt.fixed = {0, 5};
    const SimSystem sys = build_system(box_tet_mesh(2, 2, 1, 0.2), TetMaterial(ArapMaterial{500.0}), opt);
    for (int i = 0; i < 5; ++i) {
        SimState st = make_state(sys);
        st.y = sys.rest + rng.positions(sys.num_vertices(), 0.05);
        const Positions p = project_constraints(sys, sys.rest + rng.positions(sys.num_vertices(), 0.05));
        const Positions x = global_step(sys, st, p);
        // Gradient of |x-y|_M^2/(2h^2) + 1/2 tr(x^T L x) - tr(x^T J p) over free rows.
        Positions g = (sys.masses.asDiagonal() * (x - st.y)) / (sys.h * sys.h) + sys.L * x - sys.J * p;
        g = free_rows(sys, g);
        EXPECT_LT(g.norm(), 1e-9 * (sys.J * p).norm());
        for (int v : {0, 5}) EXPECT_EQ(x.row(v), st.y.row(v));
    }
}

TEST(GlobalStep, PdGradientIdentity) {
    // For projective elements: grad E = L x - J p(x).
    Rng rng(4);
    const SimSystem sys = build_system(cloth_grid(3, 3, 1.0, 20.0), 0.1, {});
    SimState st = make_state(sys);
    const Positions x = sys.rest + rng.positions(sys.num_vertices(), 0.1);
    st.y = x;
    const Positions g = gradient(sys, st, x);
    EXPECT_LT(rel_diff(g, sys.L * x - sys.J * project_constraints(sys, x)), 1e-12);
}

TEST(Collisions, ColliderQueries) {
    const SurfaceQuery s = query_collider(SphereObstacle{Vec3::Zero(), 1.0}, Vec3(0.8, 0, 0));
    EXPECT_NEAR(s.distance, -0.2, 1e-15);
    EXPECT_LT((s.point - Vec3(1, 0, 0)).norm(), 1e-15);
    EXPECT_LT((s.normal - Vec3(1, 0, 0)).norm(), 1e-15);

    const SurfaceQuery h = query_collider(HalfSpace{Vec3(0, 1, 0), Vec3(0, 2, 0)}, Vec3(3, 0.5, 1));
    EXPECT_NEAR(h.distance, -0.5, 1e-15);
    EXPECT_LT((h.point - Vec3(3, 1, 1)).norm(), 1e-15);

    const SurfaceQuery t = query_collider(TorusObstacle{Vec3::Zero(), Vec3::UnitY(), 2.0, 0.5}, Vec3(2.1, 0.2, 0));
    EXPECT_NEAR(t.distance, std::hypot(0.1, 0.2) - 0.5, 1e-14);
    EXPECT_GT(query_collider(TorusObstacle{Vec3::Zero(), Vec3::UnitY(), 2.0, 0.5}, Vec3::Zero()).distance, 0.0);
}

TEST(Collisions, AddRefreshAndSeparate) {
    SystemOptions opt;
    opt.colliders = {HalfSpace{Vec3::Zero(), Vec3::UnitY()}};
    opt.collision_weight = 100.0;
    const SimSystem sys = spring_system(1.0, 1.0, opt);
    SimState st = make_state(sys);
    Positions x = sys.rest;
    x(0, 1) = -0.1;
    CollisionUpdate up = update_collisions(sys, st, x);
    ASSERT_EQ(st.collisions.size(), 1u);
    EXPECT_EQ(up.added, 1);
    EXPECT_EQ(st.collisions[0].vertex, 0);
    EXPECT_DOUBLE_EQ(st.collisions[0].weight, 100.0);
    EXPECT_NEAR(collision_energy(st.collisions[0], x), 100.0 * 0.01, 1e-14);

    // Still inside but moving outward relative to q: the constraint stays.
    st.q(0, 1) = -0.2;
    up = update_collisions(sys, st, x);
    EXPECT_EQ(st.collisions.size(), 1u);
    EXPECT_EQ(up.added + up.removed, 0);

    // Outside and moving outward: dropped, reported with its normal velocity.
    x(0, 1) = 0.05;
    up = update_collisions(sys, st, x);
    EXPECT_TRUE(st.collisions.empty());
    EXPECT_EQ(up.removed, 1);
    EXPECT_NEAR(up.min_removed_normal_velocity, 0.25 / sys.h, 1e-9);
}

TEST(Collisions, ConstraintsStayOutOfSystemMatrix) {
    SystemOptions a, b;
    b.colliders = {HalfSpace{Vec3(0, 0.05, 0), Vec3::UnitY()}};
    const SimSystem s1 = tet_box("corotated", a), s2 = tet_box("corotated", b);
    EXPECT_EQ((Eigen::MatrixXd(s1.system_free) - Eigen::MatrixXd(s2.system_free)).norm(), 0.0);
    SimState st = make_state(s2);
    update_collisions(s2, st, s2.rest);
    EXPECT_FALSE(st.collisions.empty());
    EXPECT_DOUBLE_EQ(max_penetration(s2, s2.rest), 0.05);
}
