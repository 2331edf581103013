#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace qnsim {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// n x 3 block of per-vertex vectors (positions, gradients, directions). Row i is vertex i.
using Positions = Eigen::Matrix<double, Eigen::Dynamic, 3>;

using SpMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/// Frobenius inner product tr(a^T b) of two n x 3 blocks.
inline double trace_dot(const Positions& a, const Positions& b) {
    return (a.array() * b.array()).sum();
}

} // namespace qnsim
