#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "qnsim/errors.hpp"
#include "qnsim/linalg.hpp"
#include "qnsim/materials.hpp"
#include "qnsim/mesh.hpp"
#include "qnsim/types.hpp"

namespace qnsim {

enum class ElementKind { valanis_landel, arap, spring };

/// Material assignment for one tet.
using TetMaterial = std::variant<std::shared_ptr<const MaterialModel>, ArapMaterial>;

/// Fiber reinforcement kappa/2 (|F d| - 1)^2 on one element; d is a rest-space unit vector.
struct AnisoTerm {
    int element = 0;
    Vec3 direction = Vec3::UnitX();
    double kappa = 0.0;
};

struct HalfSpace {
    Vec3 point = Vec3::Zero();
    Vec3 normal = Vec3::UnitY();
};

/// Solid ball obstacle.
struct SphereObstacle {
    Vec3 center = Vec3::Zero();
    double radius = 1.0;
};

/// Solid torus obstacle around `axis` through `center`.
struct TorusObstacle {
    Vec3 center = Vec3::Zero();
    Vec3 axis = Vec3::UnitY();
    double major_radius = 1.0;
    double minor_radius = 0.25;
};

using Collider = std::variant<HalfSpace, SphereObstacle, TorusObstacle>;

/// Penalty term w ((x_v - point) . normal)^2 for one colliding vertex.
struct CollisionConstraint {
    int vertex = 0;
    Vec3 point = Vec3::Zero();
    Vec3 normal = Vec3::UnitY();
    double weight = 0.0;
};

/// Signed distance and closest surface point of an analytic collider; negative inside.
struct SurfaceQuery {
    double distance = 0.0;
    Vec3 point = Vec3::Zero();
    Vec3 normal = Vec3::UnitY();
};

inline SurfaceQuery query_collider(const Collider& c, const Vec3& x) {
    return std::visit(
        [&](const auto& col) -> SurfaceQuery {
            using T = std::decay_t<decltype(col)>;
            if constexpr (std::is_same_v<T, HalfSpace>) {
                const Vec3 n = col.normal.normalized();
                const double d = (x - col.point).dot(n);
                return {d, x - d * n, n};
            } else if constexpr (std::is_same_v<T, SphereObstacle>) {
                Vec3 r = x - col.center;
                const double len = r.norm();
                const Vec3 n = len > 0.0 ? Vec3(r / len) : Vec3::UnitY();
                return {len - col.radius, col.center + col.radius * n, n};
            } else {
                const Vec3 a = col.axis.normalized();
                const Vec3 v = x - col.center;
                Vec3 radial = v - v.dot(a) * a;
                if (radial.norm() == 0.0) radial = a.unitOrthogonal();
                const Vec3 ring = col.center + col.major_radius * radial.normalized();
                const Vec3 r = x - ring;
                const double len = r.norm();
                const Vec3 n = len > 0.0 ? Vec3(r / len) : a;
                return {len - col.minor_radius, ring + col.minor_radius * n, n};
            }
        },
        c);
}

using LocalPositions = Eigen::Matrix<double, Eigen::Dynamic, 3, 0, 4, 3>;

struct Element {
    ElementKind kind = ElementKind::valanis_landel;
    DiffOperator op;
    double volume = 0.0;       // rest volume (tets)
    double weight = 0.0;       // w_i in L
    double rest_length = 0.0;  // springs
    int material = -1;         // index into SimSystem::materials
    int pd_row = -1;           // first row of this element in the stacked projections
    std::vector<std::pair<Vec3, double>> fibers;  // (direction, kappa)
};

struct SystemOptions {
    double h = 1.0 / 30.0;
    Vec3 gravity = Vec3::Zero();
    std::vector<int> fixed;
    std::vector<AnisoTerm> aniso;
    std::vector<Collider> colliders;
    std::optional<double> collision_weight;   // default 10 * max element weight
};

/// Assembled Backward-Euler problem. Immutable after build_system.
struct SimSystem {
    Positions rest;
    Eigen::VectorXd masses;
    double h = 1.0 / 30.0;
    Vec3 gravity = Vec3::Zero();
    std::vector<std::shared_ptr<const MaterialModel>> materials;
    std::vector<Element> elements;
    std::vector<Collider> colliders;
    double collision_weight = 0.0;
    std::vector<Triangle> faces;   // surface triangles for export

    SpMatrix L;       // sum w_i G_i^T G_i (+ anisotropy), n x n
    SpMatrix J;       // sum w_i G_i^T S_i over projective elements, n x pd_rows
    Eigen::Index pd_rows = 0;

    std::vector<char> is_fixed;
    std::vector<int> free_vertices;
    std::vector<int> free_index;   // -1 for fixed vertices
    SpMatrix system_free;          // (M/h^2 + L) restricted to free vertices
    SpMatrix system_coupling;      // (M/h^2 + L) free rows x fixed columns (global fixed index order)
    Factorization sysfact;
    double length_scale = 1.0;     // mean element edge length

    Eigen::Index num_vertices() const { return rest.rows(); }
    Eigen::Index num_free() const { return static_cast<Eigen::Index>(free_vertices.size()); }
};

/// Per-frame state. `targets` holds the prescribed positions of fixed vertices for the frame
/// being solved; other rows are ignored.
struct SimState {
    Positions q;
    Positions q_prev;
    Positions y;
    Positions targets;
    std::vector<CollisionConstraint> collisions;
};

inline SimState make_state(const SimSystem& sys) {
    SimState s;
    s.q = sys.rest;
    s.q_prev = sys.rest;
    s.y = sys.rest;
    s.targets = sys.rest;
    return s;
}

namespace detail {

inline void add_local_block(std::vector<Triplet>& trips, const DiffOperator& op, double w) {
    const Eigen::MatrixXd k = w * op.block.transpose() * op.block;
    for (std::size_t a = 0; a < op.vertices.size(); ++a)
        for (std::size_t b = 0; b < op.vertices.size(); ++b)
            trips.emplace_back(op.vertices[a], op.vertices[b], k(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)));
}

inline double mean_edge_length(const std::vector<Element>& els, const Positions& rest) {
    double sum = 0.0;
    long count = 0;
    for (const Element& e : els)
        for (std::size_t a = 0; a < e.op.vertices.size(); ++a)
            for (std::size_t b = a + 1; b < e.op.vertices.size(); ++b) {
                sum += (rest.row(e.op.vertices[a]) - rest.row(e.op.vertices[b])).norm();
                ++count;
            }
    return count ? sum / static_cast<double>(count) : 1.0;
}

/// Shared assembly once elements, masses and rest state are in place.
inline void finalize_system(SimSystem& sys, const SystemOptions& opt) {
    const Eigen::Index n = sys.num_vertices();
    if (!(opt.h > 0.0)) throw ValidationError("time step h must be positive");
    sys.h = opt.h;
    sys.gravity = opt.gravity;
    sys.colliders = opt.colliders;

    for (const AnisoTerm& t : opt.aniso) {
        if (t.element < 0 || t.element >= static_cast<int>(sys.elements.size()))
            throw ValidationError("anisotropy term references element " + std::to_string(t.element) + " out of range");
        Element& el = sys.elements[static_cast<std::size_t>(t.element)];
        if (el.kind == ElementKind::spring) throw ValidationError("anisotropy terms apply to tets only");
        if (!(t.kappa >= 0.0)) throw ValidationError("anisotropy kappa must be >= 0");
        if (std::abs(t.direction.norm() - 1.0) > 1e-9) throw ValidationError("anisotropy direction must be a unit vector");
        el.fibers.emplace_back(t.direction, t.kappa);
    }

    std::vector<Triplet> lt, jt;
    double max_w = 0.0;
    for (Element& el : sys.elements) {
        detail::add_local_block(lt, el.op, el.weight);
        max_w = std::max(max_w, el.weight);
        for (const auto& [dir, kappa] : el.fibers) detail::add_local_block(lt, el.op, el.volume * kappa);
        if (el.kind != ElementKind::valanis_landel) {
            el.pd_row = static_cast<int>(sys.pd_rows);
            for (Eigen::Index r = 0; r < el.op.block.rows(); ++r)
                for (std::size_t a = 0; a < el.op.vertices.size(); ++a)
                    jt.emplace_back(el.op.vertices[a], sys.pd_rows + r, el.weight * el.op.block(r, static_cast<Eigen::Index>(a)));
            sys.pd_rows += el.op.block.rows();
        }
    }
    sys.L.resize(n, n);
    sys.L.setFromTriplets(lt.begin(), lt.end());
    sys.J.resize(n, sys.pd_rows);
    sys.J.setFromTriplets(jt.begin(), jt.end());

    if (opt.collision_weight) {
        if (!(*opt.collision_weight > 0.0)) throw ValidationError("collision weight must be positive");
        sys.collision_weight = *opt.collision_weight;
    } else {
        sys.collision_weight = 10.0 * max_w;
    }

    sys.is_fixed.assign(static_cast<std::size_t>(n), 0);
    for (int v : opt.fixed) {
        if (v < 0 || v >= n) throw ValidationError("fixed vertex " + std::to_string(v) + " out of range");
        sys.is_fixed[static_cast<std::size_t>(v)] = 1;
    }
    sys.free_index.assign(static_cast<std::size_t>(n), -1);
    std::vector<int> fixed_index(static_cast<std::size_t>(n), -1);
    int nf = 0, nc = 0;
    for (int v = 0; v < n; ++v) {
        if (sys.is_fixed[static_cast<std::size_t>(v)]) {
            fixed_index[static_cast<std::size_t>(v)] = nc++;
        } else {
            sys.free_index[static_cast<std::size_t>(v)] = nf++;
            sys.free_vertices.push_back(v);
        }
    }
    if (nf == 0) throw ValidationError("all vertices are fixed");

    SpMatrix a = sys.L;
    for (Eigen::Index v = 0; v < n; ++v) a.coeffRef(v, v) += sys.masses(v) / (sys.h * sys.h);
    a.makeCompressed();
    std::vector<Triplet> ff, fc;
    for (Eigen::Index col = 0; col < a.outerSize(); ++col)
        for (SpMatrix::InnerIterator it(a, col); it; ++it) {
            const int r = sys.free_index[static_cast<std::size_t>(it.row())];
            if (r < 0) continue;
            const int c = sys.free_index[static_cast<std::size_t>(it.col())];
            if (c >= 0)
                ff.emplace_back(r, c, it.value());
            else
                fc.emplace_back(r, fixed_index[static_cast<std::size_t>(it.col())], it.value());
        }
    sys.system_free.resize(nf, nf);
    sys.system_free.setFromTriplets(ff.begin(), ff.end());
    sys.system_coupling.resize(nf, nc);
    sys.system_coupling.setFromTriplets(fc.begin(), fc.end());
    try {
        sys.sysfact = factorize_spd(sys.system_free);
    } catch (const FactorizationError& e) {
        throw FactorizationError(std::string("build_system: M/h^2 + L is not SPD: ") + e.what());
    }
    sys.length_scale = mean_edge_length(sys.elements, sys.rest);
}

} // namespace detail

/// Assembles a tet system. Valanis-Landel tets use w = V k_fit, ARAP tets w = V k.
inline SimSystem build_system(const TetMesh& mesh, const std::vector<TetMaterial>& per_tet,
                              const SystemOptions& opt) {
    if (per_tet.size() != mesh.tets.size()) throw DimensionError("build_system: need one material per tet");
    SimSystem sys;
    sys.rest = mesh.rest;
    sys.masses = lumped_masses(mesh);
    sys.faces = boundary_faces(mesh);
    std::vector<double> k(per_tet.size());
    for (std::size_t e = 0; e < per_tet.size(); ++e) {
        if (const auto* vl = std::get_if<std::shared_ptr<const MaterialModel>>(&per_tet[e])) {
            if (!*vl) throw ValidationError("null material for tet " + std::to_string(e));
            if (!((*vl)->k_fit > 0.0)) throw ValidationError("material '" + (*vl)->name + "' has no fitted stiffness");
            k[e] = (*vl)->k_fit;
        } else {
            k[e] = std::get<ArapMaterial>(per_tet[e]).stiffness;
            if (!(k[e] > 0.0)) throw ValidationError("ARAP stiffness must be positive");
        }
    }
    Operators ops = build_diff_operators(mesh, k);
    sys.elements.reserve(per_tet.size());
    for (std::size_t e = 0; e < per_tet.size(); ++e) {
        Element el;
        el.op = std::move(ops.ops[e]);
        el.volume = mesh.volumes[e];
        el.weight = ops.weights[e];
        if (const auto* vl = std::get_if<std::shared_ptr<const MaterialModel>>(&per_tet[e])) {
            el.kind = ElementKind::valanis_landel;
            auto it = std::find(sys.materials.begin(), sys.materials.end(), *vl);
            if (it == sys.materials.end()) {
                sys.materials.push_back(*vl);
                it = sys.materials.end() - 1;
            }
            el.material = static_cast<int>(it - sys.materials.begin());
        } else {
            el.kind = ElementKind::arap;
        }
        sys.elements.push_back(std::move(el));
    }
    detail::finalize_system(sys, opt);
    return sys;
}

inline SimSystem build_system(const TetMesh& mesh, const TetMaterial& material, const SystemOptions& opt) {
    return build_system(mesh, std::vector<TetMaterial>(mesh.tets.size(), material), opt);
}

/// Assembles a mass-spring system with masses lumped from the triangle areas.
inline SimSystem build_system(const SpringNetwork& net, double areal_density, const SystemOptions& opt) {
    if (!opt.aniso.empty()) throw ValidationError("anisotropy terms apply to tets only");
    SimSystem sys;
    sys.rest = net.rest;
    sys.masses = lumped_masses(net, areal_density);
    sys.faces = net.faces;
    Operators ops = build_diff_operators(net);
    for (std::size_t e = 0; e < net.springs.size(); ++e) {
        Element el;
        el.kind = ElementKind::spring;
        el.op = std::move(ops.ops[e]);
        el.weight = ops.weights[e];
        el.rest_length = net.springs[e].rest_length;
        sys.elements.push_back(std::move(el));
    }
    detail::finalize_system(sys, opt);
    return sys;
}

/// y = 2 q_l - q_{l-1} + h^2 g; fixed vertices get their prescribed targets.
inline Positions inertia_target(const SimState& state, const SimSystem& sys) {
    Positions y = 2.0 * state.q - state.q_prev;
    y.rowwise() += (sys.h * sys.h * sys.gravity).transpose();
    for (Eigen::Index v = 0; v < y.rows(); ++v)
        if (sys.is_fixed[static_cast<std::size_t>(v)]) y.row(v) = state.targets.row(v);
    return y;
}

inline LocalPositions gather(const Element& el, const Positions& x) {
    LocalPositions loc(static_cast<Eigen::Index>(el.op.vertices.size()), 3);
    for (std::size_t a = 0; a < el.op.vertices.size(); ++a) loc.row(static_cast<Eigen::Index>(a)) = x.row(el.op.vertices[a]);
    return loc;
}

/// Projection of one element's deformation measure onto its constraint manifold.
inline DiffOperator::Result project_element(const Element& el, const DiffOperator::Result& gx) {
    if (el.kind == ElementKind::arap) return nearest_rotation(gx);
    if (el.kind == ElementKind::spring) {
        const double len = gx.norm();
        if (!(len > 0.0)) throw DomainError("zero-length spring edge cannot be projected");
        return el.rest_length * gx / len;
    }
    throw Error("project_element: element has no projection");
}

struct LocalEval {
    double energy = 0.0;
    LocalPositions gradient;
};

/// Energy and gradient (w.r.t. the element's vertex rows) of one element, including fibers.
inline LocalEval evaluate_element(const SimSystem& sys, const Element& el, const LocalPositions& xloc) {
    const DiffOperator::Result gx = el.op.block * xloc;
    LocalEval out;
    out.gradient = LocalPositions::Zero(xloc.rows(), 3);
    switch (el.kind) {
    case ElementKind::valanis_landel: {
        const MaterialModel& m = *sys.materials[static_cast<std::size_t>(el.material)];
        const RotVarSVD svd = svd_rv(gx.transpose());
        out.energy = el.volume * vl_energy(m, svd.sigma);
        const Mat3 piola = svd.U * vl_stress(m, svd.sigma).asDiagonal() * svd.V.transpose();
        out.gradient = el.volume * el.op.block.transpose() * piola.transpose();
        break;
    }
    case ElementKind::arap:
    case ElementKind::spring: {
        const DiffOperator::Result r = gx - project_element(el, gx);
        out.energy = 0.5 * el.weight * r.squaredNorm();
        out.gradient = el.weight * el.op.block.transpose() * r;
        break;
    }
    }
    if (!el.fibers.empty()) {
        const Mat3 f = gx.transpose();
        for (const auto& [dir, kappa] : el.fibers) {
            const Vec3 u = f * dir;
            const double len = u.norm();
            out.energy += el.volume * 0.5 * kappa * (len - 1.0) * (len - 1.0);
            if (len > 0.0) {
                const Mat3 dpsi = el.volume * kappa * (len - 1.0) / len * u * dir.transpose();
                out.gradient += el.op.block.transpose() * dpsi.transpose();
            }
        }
    }
    return out;
}

inline double collision_energy(const CollisionConstraint& c, const Positions& x) {
    const double d = (x.row(c.vertex).transpose() - c.point).dot(c.normal);
    return c.weight * d * d;
}

/// g(x) = tr((x-y)^T M (x-y)) / (2h^2) + E(x), using state.y and state.collisions.
inline double objective(const SimSystem& sys, const SimState& state, const Positions& x) {
    double g = 0.0;
    const double inv_h2 = 1.0 / (sys.h * sys.h);
    for (Eigen::Index v = 0; v < x.rows(); ++v) g += 0.5 * inv_h2 * sys.masses(v) * (x.row(v) - state.y.row(v)).squaredNorm();
    for (const Element& el : sys.elements) g += evaluate_element(sys, el, gather(el, x)).energy;
    for (const CollisionConstraint& c : state.collisions) g += collision_energy(c, x);
    return g;
}

/// Gradient of the objective; rows of fixed vertices are zero.
inline Positions gradient(const SimSystem& sys, const SimState& state, const Positions& x) {
    const double inv_h2 = 1.0 / (sys.h * sys.h);
    Positions grad = inv_h2 * (sys.masses.asDiagonal() * (x - state.y));
    for (const Element& el : sys.elements) {
        const LocalEval ev = evaluate_element(sys, el, gather(el, x));
        for (std::size_t a = 0; a < el.op.vertices.size(); ++a) grad.row(el.op.vertices[a]) += ev.gradient.row(static_cast<Eigen::Index>(a));
    }
    for (const CollisionConstraint& c : state.collisions) {
        const double d = (x.row(c.vertex).transpose() - c.point).dot(c.normal);
        grad.row(c.vertex) += 2.0 * c.weight * d * c.normal.transpose();
    }
    for (Eigen::Index v = 0; v < x.rows(); ++v)
        if (sys.is_fixed[static_cast<std::size_t>(v)]) grad.row(v).setZero();
    return grad;
}

/// Stacked projections p(x) of all projective elements (pd_rows x 3).
inline Positions project_constraints(const SimSystem& sys, const Positions& x) {
    Positions p = Positions::Zero(sys.pd_rows, 3);
    for (const Element& el : sys.elements) {
        if (el.pd_row < 0) continue;
        p.middleRows(el.pd_row, el.op.block.rows()) = project_element(el, el.op.apply(x));
    }
    return p;
}

/// Solution of the global step for fixed projections p:
/// (M/h^2 + L) x = J p + M y / h^2 over free vertices, fixed vertices at state.y.
inline Positions global_step(const SimSystem& sys, const SimState& state, const Positions& p) {
    const double inv_h2 = 1.0 / (sys.h * sys.h);
    const Positions rhs_full = sys.J * p + inv_h2 * (sys.masses.asDiagonal() * state.y);
    Positions rhs(sys.num_free(), 3), fixed_pos(sys.system_coupling.cols(), 3);
    for (Eigen::Index v = 0, c = 0; v < sys.num_vertices(); ++v) {
        const int f = sys.free_index[static_cast<std::size_t>(v)];
        if (f >= 0)
            rhs.row(f) = rhs_full.row(v);
        else
            fixed_pos.row(c++) = state.y.row(v);
    }
    rhs -= sys.system_coupling * fixed_pos;
    const Positions xf = solve_prefactored(sys.sysfact, rhs);
    Positions x = state.y;
    for (Eigen::Index f = 0; f < sys.num_free(); ++f) x.row(sys.free_vertices[static_cast<std::size_t>(f)]) = xf.row(f);
    return x;
}

struct CollisionUpdate {
    int added = 0;
    int removed = 0;
    /// Smallest separating normal velocity among dropped constraints (+inf when none were dropped).
    double min_removed_normal_velocity = std::numeric_limits<double>::infinity();
};

/// Drops constraints whose vertex separates, (x - q_l)/h . n >= 0, then gives every penetrating
/// vertex a constraint at its closest surface point. A penetrating vertex stays constrained even
/// while it moves outward; constraints on vertices that left the collider persist until they
/// separate.
inline CollisionUpdate update_collisions(const SimSystem& sys, SimState& state, const Positions& x) {
    CollisionUpdate up;
    if (sys.colliders.empty() && state.collisions.empty()) return up;
    std::vector<char> had(static_cast<std::size_t>(sys.num_vertices()), 0);
    std::vector<int> slot(static_cast<std::size_t>(sys.num_vertices()), -1);
    std::vector<CollisionConstraint> next;
    std::vector<double> removed_vn;
    next.reserve(state.collisions.size());
    for (const CollisionConstraint& c : state.collisions) {
        had[static_cast<std::size_t>(c.vertex)] = 1;
        const double vn = (x.row(c.vertex) - state.q.row(c.vertex)).dot(c.normal.transpose()) / sys.h;
        if (vn >= 0.0) {
            removed_vn.push_back(vn);
            continue;
        }
        slot[static_cast<std::size_t>(c.vertex)] = static_cast<int>(next.size());
        next.push_back(c);
    }
    std::size_t revived = 0;
    for (int v = 0; v < sys.num_vertices(); ++v) {
        if (sys.is_fixed[static_cast<std::size_t>(v)]) continue;
        const Vec3 p = x.row(v).transpose();
        for (const Collider& col : sys.colliders) {
            const SurfaceQuery q = query_collider(col, p);
            if (q.distance >= 0.0) continue;
            const CollisionConstraint c{v, q.point, q.normal, sys.collision_weight};
            if (slot[static_cast<std::size_t>(v)] >= 0) {
                next[static_cast<std::size_t>(slot[static_cast<std::size_t>(v)])] = c;
            } else {
                slot[static_cast<std::size_t>(v)] = static_cast<int>(next.size());
                next.push_back(c);
                if (had[static_cast<std::size_t>(v)])
                    ++revived;
                else
                    ++up.added;
            }
            break;
        }
    }
    up.removed = static_cast<int>(removed_vn.size() - revived);
    if (up.removed > 0)
        for (double vn : removed_vn) up.min_removed_normal_velocity = std::min(up.min_removed_normal_velocity, vn);
    state.collisions = std::move(next);
    return up;
}

/// Largest penetration depth over all free vertices and colliders (0 when none penetrate).
inline double max_penetration(const SimSystem& sys, const Positions& x) {
    double depth = 0.0;
    for (int v = 0; v < sys.num_vertices(); ++v)
        for (const Collider& col : sys.colliders) depth = std::max(depth, -query_collider(col, x.row(v).transpose()).distance);
    return depth;
}

} // namespace qnsim
