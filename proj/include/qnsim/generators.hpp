#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <vector>

#include "qnsim/mesh.hpp"

namespace qnsim {

/// Regular grid of cells, each split into 6 tets around its main diagonal. `keep(i, j, k)`
/// selects cells; vertices not used by any kept cell are dropped.
template <typename Keep>
TetMesh grid_tet_mesh(int nx, int ny, int nz, const Vec3& origin, double cell, double density, Keep keep) {
    std::map<std::array<int, 3>, int> index;
    std::vector<Vec3> verts;
    std::vector<Tet> tets;
    auto vertex = [&](int i, int j, int k) {
        auto [it, inserted] = index.try_emplace({i, j, k}, static_cast<int>(verts.size()));
        if (inserted) verts.push_back(origin + cell * Vec3(i, j, k));
        return it->second;
    };
    static constexpr std::array<std::array<int, 3>, 6> perms{
        {{1, 2, 4}, {1, 4, 2}, {2, 1, 4}, {2, 4, 1}, {4, 1, 2}, {4, 2, 1}}};
    for (int k = 0; k < nz; ++k)
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i) {
                if (!keep(i, j, k)) continue;
                std::array<int, 8> c{};
                for (int b = 0; b < 8; ++b) c[static_cast<std::size_t>(b)] = vertex(i + (b & 1), j + ((b >> 1) & 1), k + ((b >> 2) & 1));
                for (const auto& p : perms)
                    tets.push_back({c[0], c[static_cast<std::size_t>(p[0])], c[static_cast<std::size_t>(p[0] | p[1])], c[7]});
            }
    Positions rest(static_cast<Eigen::Index>(verts.size()), 3);
    for (std::size_t v = 0; v < verts.size(); ++v) rest.row(static_cast<Eigen::Index>(v)) = verts[v];
    return make_tet_mesh(std::move(rest), std::move(tets), density);
}

/// Axis-aligned box of nx*ny*nz cubes of edge `cell`, starting at `origin`.
inline TetMesh box_tet_mesh(int nx, int ny, int nz, double cell, const Vec3& origin = Vec3::Zero(),
                            double density = 1000.0) {
    return grid_tet_mesh(nx, ny, nz, origin, cell, density, [](int, int, int) { return true; });
}

/// Voxelized ball: cells of a (cells x cells x cells) grid whose centers lie inside the radius.
inline TetMesh sphere_tet_mesh(double radius, int cells, const Vec3& center = Vec3::Zero(),
                               double density = 1000.0) {
    const double h = 2.0 * radius / cells;
    const Vec3 origin = center - Vec3::Constant(radius);
    return grid_tet_mesh(cells, cells, cells, origin, h, density, [&](int i, int j, int k) {
        const Vec3 c = origin + h * Vec3(i + 0.5, j + 0.5, k + 0.5);
        return (c - center).norm() <= radius;
    });
}

/// Square cloth in the xz-plane with nx*ny quads, each split into two triangles.
inline SpringNetwork cloth_grid(int nx, int ny, double size, double stiffness, double height = 0.0) {
    Positions rest((nx + 1) * (ny + 1), 3);
    for (int j = 0; j <= ny; ++j)
        for (int i = 0; i <= nx; ++i)
            rest.row(j * (nx + 1) + i) << size * i / nx, height, size * j / ny;
    std::vector<Triangle> faces;
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            const int a = j * (nx + 1) + i, b = a + 1, c = a + nx + 1, d = c + 1;
            faces.push_back({a, c, b});
            faces.push_back({b, c, d});
        }
    return make_spring_network(std::move(rest), std::move(faces), stiffness);
}

} // namespace qnsim
