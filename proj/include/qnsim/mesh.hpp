#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qnsim/errors.hpp"
#include "qnsim/types.hpp"

namespace qnsim {

using Tet = std::array<int, 4>;
using Triangle = std::array<int, 3>;

struct TetMesh {
    Positions rest;             // meters
    std::vector<Tet> tets;      // positively oriented
    std::vector<double> volumes;
    double density = 1000.0;    // kg/m^3

    Eigen::Index num_vertices() const { return rest.rows(); }
};

struct Spring {
    int i = 0;
    int j = 0;
    double rest_length = 0.0;
    double stiffness = 0.0;
};

struct SpringNetwork {
    Positions rest;
    std::vector<Spring> springs;
    std::vector<Triangle> faces;   // kept for mass lumping and export

    Eigen::Index num_vertices() const { return rest.rows(); }
};

/// Per-element linear map from stacked vertex positions to the element's deformation measure.
/// Applied to an n x 3 position block it yields block * x[vertices], i.e. F^T (3 x 3) for a
/// tetrahedron and the edge vector (1 x 3) for a spring.
struct DiffOperator {
    using Block = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 3, 4>;
    using Result = Eigen::Matrix<double, Eigen::Dynamic, 3, 0, 3, 3>;

    std::vector<int> vertices;
    Block block;

    Result apply(const Positions& x) const {
        Result r = Result::Zero(block.rows(), 3);
        for (std::size_t a = 0; a < vertices.size(); ++a)
            r += block.col(static_cast<Eigen::Index>(a)) * x.row(vertices[a]);
        return r;
    }
};

inline double signed_tet_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    Mat3 e;
    e.col(0) = b - a;
    e.col(1) = c - a;
    e.col(2) = d - a;
    return e.determinant() / 6.0;
}

/// Validates indices, reorients inverted tets (swaps the last two indices) and computes volumes.
inline TetMesh make_tet_mesh(Positions rest, std::vector<Tet> tets, double density) {
    if (rest.rows() < 4) throw ValidationError("tet mesh needs at least 4 vertices");
    if (!(density > 0.0)) throw ValidationError("density must be positive");
    TetMesh m;
    m.rest = std::move(rest);
    m.density = density;
    m.tets = std::move(tets);
    m.volumes.reserve(m.tets.size());
    const auto n = static_cast<int>(m.rest.rows());
    for (std::size_t e = 0; e < m.tets.size(); ++e) {
        Tet& t = m.tets[e];
        for (int v : t)
            if (v < 0 || v >= n)
                throw ValidationError("tet " + std::to_string(e) + " references vertex " +
                                      std::to_string(v) + " out of range");
        double vol = signed_tet_volume(m.rest.row(t[0]), m.rest.row(t[1]), m.rest.row(t[2]),
                                       m.rest.row(t[3]));
        const double scale = std::pow((m.rest.row(t[1]) - m.rest.row(t[0])).norm(), 3);
        if (std::abs(vol) <= 1e-14 * scale || vol == 0.0)
            throw ValidationError("tet " + std::to_string(e) + " has zero rest volume");
        if (vol < 0.0) {
            std::swap(t[2], t[3]);
            vol = -vol;
        }
        m.volumes.push_back(vol);
    }
    return m;
}

namespace detail {

/// Reads non-empty, non-comment lines, remembering their 1-based line numbers.
struct LineReader {
    std::ifstream in;
    std::string file;
    std::size_t line_no = 0;

    explicit LineReader(const std::filesystem::path& path) : in(path), file(path.string()) {
        if (!in) throw ParseError(file, 0, "cannot open file");
    }

    bool next(std::istringstream& out) {
        std::string line;
        while (std::getline(in, line)) {
            ++line_no;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            out.clear();
            out.str(line);
            return true;
        }
        return false;
    }

    [[noreturn]] void fail(const std::string& what) const { throw ParseError(file, line_no, what); }
};

} // namespace detail

/// Loads a TetGen .node/.ele pair. Indices may be 0- or 1-based (taken from the first node).
inline TetMesh load_tet_mesh(const std::filesystem::path& node_file,
                             const std::filesystem::path& ele_file, double density) {
    detail::LineReader nodes(node_file);
    std::istringstream ls;
    if (!nodes.next(ls)) nodes.fail("missing header");
    long n = 0, dim = 0;
    if (!(ls >> n >> dim) || n < 0) nodes.fail("bad header, expected 'n dim attr bnd'");
    if (dim != 3) nodes.fail("only 3D node files are supported");

    Positions rest(n, 3);
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    long base = -1;
    for (long k = 0; k < n; ++k) {
        if (!nodes.next(ls)) nodes.fail("unexpected end of file, expected " + std::to_string(n) + " nodes");
        long idx = 0;
        double x = 0, y = 0, z = 0;
        if (!(ls >> idx >> x >> y >> z)) nodes.fail("bad node row, expected 'idx x y z'");
        if (base < 0) base = (idx == 0) ? 0 : 1;
        const long v = idx - base;
        if (v < 0 || v >= n || seen[static_cast<std::size_t>(v)]) nodes.fail("bad or duplicate node index");
        seen[static_cast<std::size_t>(v)] = 1;
        rest.row(v) << x, y, z;
    }
    if (base < 0) base = 0;

    detail::LineReader eles(ele_file);
    if (!eles.next(ls)) eles.fail("missing header");
    long m = 0, per = 0;
    if (!(ls >> m >> per) || m < 0) eles.fail("bad header, expected 'm nodes_per_tet attr'");
    if (per != 4) eles.fail("only 4-node tetrahedra are supported");
    std::vector<Tet> tets;
    tets.reserve(static_cast<std::size_t>(m));
    for (long k = 0; k < m; ++k) {
        if (!eles.next(ls)) eles.fail("unexpected end of file, expected " + std::to_string(m) + " tets");
        long idx = 0;
        std::array<long, 4> v{};
        if (!(ls >> idx >> v[0] >> v[1] >> v[2] >> v[3])) eles.fail("bad tet row, expected 'idx i0 i1 i2 i3'");
        Tet t{};
        for (int a = 0; a < 4; ++a) {
            const long vi = v[static_cast<std::size_t>(a)] - base;
            if (vi < 0 || vi >= n) eles.fail("node index out of range");
            t[static_cast<std::size_t>(a)] = static_cast<int>(vi);
        }
        tets.push_back(t);
    }
    try {
        return make_tet_mesh(std::move(rest), std::move(tets), density);
    } catch (const ValidationError& e) {
        throw ParseError(ele_file.string(), 0, e.what());
    }
}

inline void write_tetgen(const TetMesh& mesh, const std::filesystem::path& node_file,
                         const std::filesystem::path& ele_file) {
    std::ofstream node(node_file), ele(ele_file);
    if (!node || !ele) throw Error("cannot write TetGen files next to " + node_file.string());
    node.precision(17);
    node << mesh.rest.rows() << " 3 0 0\n";
    for (Eigen::Index i = 0; i < mesh.rest.rows(); ++i)
        node << i << ' ' << mesh.rest(i, 0) << ' ' << mesh.rest(i, 1) << ' ' << mesh.rest(i, 2) << '\n';
    ele << mesh.tets.size() << " 4 0\n";
    for (std::size_t e = 0; e < mesh.tets.size(); ++e) {
        const Tet& t = mesh.tets[e];
        ele << e << ' ' << t[0] << ' ' << t[1] << ' ' << t[2] << ' ' << t[3] << '\n';
    }
}

/// Builds a spring network from triangles: one spring per unique edge, rest length from `rest`.
inline SpringNetwork make_spring_network(Positions rest, std::vector<Triangle> faces, double stiffness) {
    if (!(stiffness > 0.0)) throw ValidationError("spring stiffness must be positive");
    SpringNetwork net;
    net.rest = std::move(rest);
    net.faces = std::move(faces);
    std::set<std::pair<int, int>> edges;
    const auto n = static_cast<int>(net.rest.rows());
    for (const Triangle& f : net.faces) {
        for (int a = 0; a < 3; ++a) {
            int i = f[static_cast<std::size_t>(a)], j = f[static_cast<std::size_t>((a + 1) % 3)];
            if (i < 0 || i >= n || j < 0 || j >= n) throw ValidationError("face index out of range");
            if (i > j) std::swap(i, j);
            if (i == j) throw ValidationError("degenerate face with repeated vertex");
            if (!edges.insert({i, j}).second) continue;
            const double len = (net.rest.row(j) - net.rest.row(i)).norm();
            if (!(len > 0.0)) throw ValidationError("zero-length spring between vertices " +
                                                    std::to_string(i) + " and " + std::to_string(j));
            net.springs.push_back({i, j, len, stiffness});
        }
    }
    return net;
}

/// Loads an OBJ triangle mesh (`v` and `f` records; polygons are fan-triangulated).
inline SpringNetwork load_obj_springs(const std::filesystem::path& path, double stiffness) {
    detail::LineReader in(path);
    std::vector<Vec3> verts;
    std::vector<Triangle> faces;
    std::istringstream ls;
    while (in.next(ls)) {
        std::string tag;
        ls >> tag;
        if (tag == "v") {
            Vec3 p;
            if (!(ls >> p.x() >> p.y() >> p.z())) in.fail("bad vertex record");
            verts.push_back(p);
        } else if (tag == "f") {
            std::vector<int> poly;
            std::string tok;
            while (ls >> tok) {
                long idx = 0;
                try {
                    idx = std::stol(tok.substr(0, tok.find('/')));
                } catch (const std::exception&) {
                    in.fail("bad face index '" + tok + "'");
                }
                if (idx < 0) idx += static_cast<long>(verts.size()) + 1;
                if (idx < 1) in.fail("face index out of range");
                poly.push_back(static_cast<int>(idx - 1));
            }
            if (poly.size() < 3) in.fail("face with fewer than 3 vertices");
            for (std::size_t k = 1; k + 1 < poly.size(); ++k) faces.push_back({poly[0], poly[k], poly[k + 1]});
        }
    }
    Positions rest(static_cast<Eigen::Index>(verts.size()), 3);
    for (std::size_t i = 0; i < verts.size(); ++i) rest.row(static_cast<Eigen::Index>(i)) = verts[i];
    try {
        return make_spring_network(std::move(rest), std::move(faces), stiffness);
    } catch (const ValidationError& e) {
        throw ParseError(path.string(), 0, e.what());
    }
}

inline void write_obj(const Positions& x, std::span<const Triangle> faces, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    char buf[96];
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", x(i, 0), x(i, 1), x(i, 2));
        out << buf;
    }
    for (const Triangle& f : faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
    if (!out) throw Error("write failed: " + path.string());
}

/// Diagonal of the lumped mass matrix: each tet gives density * V / 4 to its vertices.
inline Eigen::VectorXd lumped_masses(const TetMesh& mesh) {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(mesh.num_vertices());
    for (std::size_t e = 0; e < mesh.tets.size(); ++e)
        for (int v : mesh.tets[e]) m(v) += mesh.density * mesh.volumes[e] / 4.0;
    for (Eigen::Index i = 0; i < m.size(); ++i)
        if (!(m(i) > 0.0)) throw ValidationError("vertex " + std::to_string(i) + " is isolated (zero mass)");
    return m;
}

/// Lumped masses of a triangle surface: each face gives areal_density * area / 3 to its corners.
inline Eigen::VectorXd lumped_masses(const SpringNetwork& net, double areal_density) {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(net.num_vertices());
    for (const Triangle& f : net.faces) {
        const Vec3 a = net.rest.row(f[0]), b = net.rest.row(f[1]), c = net.rest.row(f[2]);
        const double area = 0.5 * (b - a).cross(c - a).norm();
        for (int v : f) m(v) += areal_density * area / 3.0;
    }
    for (Eigen::Index i = 0; i < m.size(); ++i)
        if (!(m(i) > 0.0)) throw ValidationError("vertex " + std::to_string(i) + " is isolated (zero mass)");
    return m;
}

/// Deformation-gradient operator of one tet: F^T = block * x[t].
inline DiffOperator tet_operator(const Positions& rest, const Tet& t) {
    Mat3 dm;
    for (int c = 0; c < 3; ++c) dm.col(c) = (rest.row(t[static_cast<std::size_t>(c + 1)]) - rest.row(t[0])).transpose();
    const double det = dm.determinant();
    if (!(std::abs(det) > 0.0) || !std::isfinite(det)) throw ValidationError("degenerate rest tet");
    const Mat3 dm_inv = dm.inverse();
    Eigen::Matrix<double, 4, 3> d;
    d.row(0) = -dm_inv.colwise().sum();
    d.bottomRows<3>() = dm_inv;
    DiffOperator op;
    op.vertices.assign(t.begin(), t.end());
    op.block = d.transpose();
    return op;
}

inline DiffOperator spring_operator(const Spring& s) {
    DiffOperator op;
    op.vertices = {s.i, s.j};
    op.block.resize(1, 2);
    op.block << -1.0, 1.0;
    return op;
}

struct Operators {
    std::vector<DiffOperator> ops;
    std::vector<double> weights;
};

/// Operators and weights w_i = V_i * k_i for a tet mesh, given one stiffness per tet.
inline Operators build_diff_operators(const TetMesh& mesh, std::span<const double> stiffness) {
    if (stiffness.size() != mesh.tets.size())
        throw DimensionError("build_diff_operators: need one stiffness per tet");
    Operators out;
    out.ops.reserve(mesh.tets.size());
    out.weights.reserve(mesh.tets.size());
    for (std::size_t e = 0; e < mesh.tets.size(); ++e) {
        out.ops.push_back(tet_operator(mesh.rest, mesh.tets[e]));
        out.weights.push_back(mesh.volumes[e] * stiffness[e]);
    }
    return out;
}

/// Operators x_j - x_i and weights w_i = k_i for a spring network.
inline Operators build_diff_operators(const SpringNetwork& net) {
    Operators out;
    for (const Spring& s : net.springs) {
        out.ops.push_back(spring_operator(s));
        out.weights.push_back(s.stiffness);
    }
    return out;
}

/// Faces of a tet mesh that belong to exactly one tet, oriented outward.
inline std::vector<Triangle> boundary_faces(const TetMesh& mesh) {
    std::map<std::array<int, 3>, std::pair<Triangle, int>> count;
    for (const Tet& t : mesh.tets) {
        const std::array<Triangle, 4> faces{{{t[1], t[2], t[3]}, {t[0], t[3], t[2]},
                                             {t[0], t[1], t[3]}, {t[0], t[2], t[1]}}};
        for (const Triangle& f : faces) {
            std::array<int, 3> key = f;
            std::sort(key.begin(), key.end());
            auto [it, inserted] = count.try_emplace(key, f, 0);
            ++it->second.second;
        }
    }
    std::vector<Triangle> out;
    for (const auto& [key, entry] : count)
        if (entry.second == 1) out.push_back(entry.first);
    return out;
}

} // namespace qnsim
