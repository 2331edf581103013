#pragma once

#include <atomic>
#include <cmath>
#include <memory>
#include <string>

#include <Eigen/Dense>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseCholesky>

#include "qnsim/errors.hpp"
#include "qnsim/types.hpp"

namespace qnsim {

namespace detail {
inline std::atomic<long>& factorization_counter() {
    static std::atomic<long> counter{0};
    return counter;
}
} // namespace detail

/// Number of sparse factorizations performed by this process so far.
inline long factorization_count() { return detail::factorization_counter().load(); }

/// Cholesky factor of a sparse SPD matrix. Immutable; copies share the factor and
/// concurrent solves are safe.
class Factorization {
public:
    using Solver = Eigen::SimplicialLLT<SpMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>;

    Factorization() = default;

    Eigen::Index size() const { return solver_ ? n_ : 0; }
    bool valid() const { return static_cast<bool>(solver_); }

    /// Solves A X = B column by column. B may have any number of columns.
    template <typename Derived>
    Eigen::Matrix<double, Eigen::Dynamic, Derived::ColsAtCompileTime>
    solve(const Eigen::MatrixBase<Derived>& rhs) const {
        if (!solver_) throw DimensionError("solve against an empty factorization");
        if (rhs.rows() != n_)
            throw DimensionError("right-hand side has " + std::to_string(rhs.rows()) +
                                 " rows, factorization has " + std::to_string(n_));
        return solver_->solve(rhs.derived());
    }

private:
    friend Factorization factorize_spd(const SpMatrix& a);

    std::shared_ptr<const Solver> solver_;
    Eigen::Index n_ = 0;
};

/// Factors a symmetric positive definite matrix once. AMD ordering is deterministic for a
/// fixed sparsity pattern.
inline Factorization factorize_spd(const SpMatrix& a) {
    if (a.rows() != a.cols())
        throw DimensionError("factorize_spd: matrix is not square");
    auto solver = std::make_shared<Factorization::Solver>();
    solver->compute(a);
    ++detail::factorization_counter();
    if (solver->info() != Eigen::Success)
        throw FactorizationError("factorize_spd: matrix is not positive definite (pivot failure)");
    Factorization f;
    f.solver_ = std::move(solver);
    f.n_ = a.rows();
    return f;
}

/// Solves against a prefactored system, one column per spatial coordinate.
inline Positions solve_prefactored(const Factorization& f, const Positions& rhs) {
    return f.solve(rhs);
}

/// SVD with U, V proper rotations. A reflection, if present, is carried by sigma(2).
struct RotVarSVD {
    Mat3 U;
    Vec3 sigma;
    Mat3 V;
};

inline constexpr double kMinSingularValue = 1e-10;

/// Rotation-variant SVD of a 3x3 matrix. sigma(0) >= sigma(1) >= |sigma(2)|; sigma(2) is
/// negative exactly when det(F) < 0. Magnitudes below kMinSingularValue are clamped.
inline RotVarSVD svd_rv(const Mat3& f) {
    if (!f.allFinite()) throw DomainError("svd_rv: non-finite input matrix");

    Eigen::JacobiSVD<Mat3> svd(f, Eigen::ComputeFullU | Eigen::ComputeFullV);
    RotVarSVD out{svd.matrixU(), svd.singularValues(), svd.matrixV()};

    if (out.U.determinant() < 0.0) {
        out.U.col(2) *= -1.0;
        out.sigma(2) *= -1.0;
    }
    if (out.V.determinant() < 0.0) {
        out.V.col(2) *= -1.0;
        out.sigma(2) *= -1.0;
    }
    for (int i = 0; i < 3; ++i) {
        if (std::abs(out.sigma(i)) < kMinSingularValue)
            out.sigma(i) = std::signbit(out.sigma(i)) ? -kMinSingularValue : kMinSingularValue;
    }
    return out;
}

/// Nearest rotation to F in the Frobenius norm.
inline Mat3 nearest_rotation(const Mat3& f) {
    const RotVarSVD s = svd_rv(f);
    return s.U * s.V.transpose();
}

} // namespace qnsim
