#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "qnsim/dynamics.hpp"
#include "qnsim/errors.hpp"
#include "qnsim/linalg.hpp"
#include "qnsim/types.hpp"

namespace qnsim {

enum class SolverKind { pd_qn, lbfgs, chebyshev, newton };
enum class LbfgsInit { system_matrix, scaled_identity, rest_pose_hessian };

inline std::string to_string(SolverKind k) {
    switch (k) {
    case SolverKind::pd_qn: return "pd_qn";
    case SolverKind::lbfgs: return "lbfgs";
    case SolverKind::chebyshev: return "chebyshev";
    case SolverKind::newton: return "newton";
    }
    return "?";
}

inline SolverKind parse_solver_kind(const std::string& s) {
    for (SolverKind k : {SolverKind::pd_qn, SolverKind::lbfgs, SolverKind::chebyshev, SolverKind::newton})
        if (to_string(k) == s) return k;
    throw ValidationError("unknown solver '" + s + "' (valid: pd_qn, lbfgs, chebyshev, newton)");
}

inline std::string to_string(LbfgsInit k) {
    switch (k) {
    case LbfgsInit::system_matrix: return "system_matrix";
    case LbfgsInit::scaled_identity: return "scaled_identity";
    case LbfgsInit::rest_pose_hessian: return "rest_pose_hessian";
    }
    return "?";
}

inline LbfgsInit parse_lbfgs_init(const std::string& s) {
    for (LbfgsInit k : {LbfgsInit::system_matrix, LbfgsInit::scaled_identity, LbfgsInit::rest_pose_hessian})
        if (to_string(k) == s) return k;
    throw ValidationError("unknown lbfgs_init '" + s + "' (valid: system_matrix, scaled_identity, rest_pose_hessian)");
}

struct SolverConfig {
    SolverKind kind = SolverKind::lbfgs;
    int iterations = 10;
    int m = 5;
    double gamma = 0.3;
    double alpha_init = 2.0;
    double alpha_shrink = 0.5;
    double min_alpha = 1e-12;
    double rho = 0.9;
    int S = 10;
    LbfgsInit lbfgs_init = LbfgsInit::system_matrix;
    bool line_search = true;

    void validate() const {
        if (!(gamma > 0.0 && gamma < 1.0)) throw ValidationError("gamma must lie in (0, 1)");
        if (m < 0) throw ValidationError("m must be >= 0");
        if (!(rho >= 0.0 && rho < 1.0)) throw ValidationError("rho must lie in [0, 1)");
        if (iterations < 1) throw ValidationError("iterations must be >= 1");
        if (!(alpha_init > 0.0)) throw ValidationError("alpha_init must be positive");
        if (!(alpha_shrink > 0.0 && alpha_shrink < 1.0)) throw ValidationError("alpha_shrink must lie in (0, 1)");
        if (S < 0) throw ValidationError("S must be >= 0");
    }
};

// ---------------------------------------------------------------------------------------------
// Free-DOF helpers

inline Positions gather_free(const SimSystem& sys, const Positions& full) {
    Positions out(sys.num_free(), 3);
    for (Eigen::Index f = 0; f < sys.num_free(); ++f) out.row(f) = full.row(sys.free_vertices[static_cast<std::size_t>(f)]);
    return out;
}

inline Positions scatter_free(const SimSystem& sys, const Positions& free) {
    Positions out = Positions::Zero(sys.num_vertices(), 3);
    for (Eigen::Index f = 0; f < sys.num_free(); ++f) out.row(sys.free_vertices[static_cast<std::size_t>(f)]) = free.row(f);
    return out;
}

inline Eigen::VectorXd flatten_free(const SimSystem& sys, const Positions& full) {
    Eigen::VectorXd v(3 * sys.num_free());
    for (Eigen::Index f = 0; f < sys.num_free(); ++f)
        for (int c = 0; c < 3; ++c) v(3 * f + c) = full(sys.free_vertices[static_cast<std::size_t>(f)], c);
    return v;
}

inline Positions unflatten_free(const SimSystem& sys, const Eigen::VectorXd& v) {
    Positions out = Positions::Zero(sys.num_vertices(), 3);
    for (Eigen::Index f = 0; f < sys.num_free(); ++f)
        for (int c = 0; c < 3; ++c) out(sys.free_vertices[static_cast<std::size_t>(f)], c) = v(3 * f + c);
    return out;
}

// ---------------------------------------------------------------------------------------------
// Directions

/// d = -(M/h^2 + L)^{-1} grad over free vertices.
inline Positions direction_pd_qn(const SimSystem& sys, const Positions& grad) {
    return scatter_free(sys, solve_prefactored(sys.sysfact, gather_free(sys, -grad)));
}

struct LbfgsPair {
    Positions s;
    Positions t;
    double rho = 0.0;   // tr(t^T s)
};

class LbfgsHistory {
public:
    explicit LbfgsHistory(int m = 5) : m_(m) {
        if (m < 0) throw ValidationError("m must be >= 0");
    }

    /// Stores (s, t) unless the window is empty or the pair fails the curvature guard.
    bool push(Positions s, Positions t) {
        if (m_ == 0) return false;
        const double rho = trace_dot(t, s);
        if (!(rho > 1e-12 * s.norm() * t.norm())) return false;
        if (static_cast<int>(pairs_.size()) == m_) pairs_.pop_front();
        pairs_.push_back({std::move(s), std::move(t), rho});
        return true;
    }

    void clear() { pairs_.clear(); }
    std::size_t size() const { return pairs_.size(); }
    int capacity() const { return m_; }
    /// Oldest first.
    const LbfgsPair& operator[](std::size_t i) const { return pairs_[i]; }
    const LbfgsPair& newest() const { return pairs_.back(); }

private:
    int m_;
    std::deque<LbfgsPair> pairs_;
};

/// Assembles the 3n_f x 3n_f Newton Hessian (defined below).
inline SpMatrix newton_hessian(const SimSystem& sys, const SimState& state, const Positions& x);

/// Initial inverse-Hessian approximation A0^{-1} for the two-loop recursion.
class InitialHessian {
public:
    InitialHessian(const SimSystem& sys, LbfgsInit kind) : sys_(&sys), kind_(kind) {
        if (kind == LbfgsInit::rest_pose_hessian) {
            SimState rest = make_state(sys);
            rest_fact_ = factorize_spd(newton_hessian(sys, rest, sys.rest));
        } else if (kind == LbfgsInit::scaled_identity) {
            // Fallback scale for an empty history: inverse of the mean mass term.
            double mean_mass = 0.0;
            for (int v : sys.free_vertices) mean_mass += sys.masses(v);
            mean_mass /= static_cast<double>(sys.free_vertices.size());
            fallback_scale_ = sys.h * sys.h / mean_mass;
        }
    }

    LbfgsInit kind() const { return kind_; }

    Positions apply(const Positions& q, const LbfgsHistory& history) const {
        switch (kind_) {
        case LbfgsInit::system_matrix:
            return scatter_free(*sys_, solve_prefactored(sys_->sysfact, gather_free(*sys_, q)));
        case LbfgsInit::scaled_identity: {
            double scale = fallback_scale_;
            if (history.size()) {
                const LbfgsPair& p = history.newest();
                scale = p.rho / p.t.squaredNorm();
            }
            return scale * q;
        }
        case LbfgsInit::rest_pose_hessian:
            return unflatten_free(*sys_, rest_fact_.solve(flatten_free(*sys_, q)));
        }
        return q;
    }

private:
    const SimSystem* sys_;
    LbfgsInit kind_;
    Factorization rest_fact_;
    double fallback_scale_ = 1.0;
};

/// Two-loop recursion with trace inner products on n x 3 blocks.
inline Positions direction_lbfgs(const LbfgsHistory& history, const Positions& grad, const InitialHessian& a0) {
    Positions q = -grad;
    const std::size_t k = history.size();
    std::vector<double> alpha(k);
    for (std::size_t i = k; i-- > 0;) {
        const LbfgsPair& p = history[i];
        alpha[i] = trace_dot(p.s, q) / p.rho;
        q -= alpha[i] * p.t;
    }
    Positions r = a0.apply(q, history);
    for (std::size_t i = 0; i < k; ++i) {
        const LbfgsPair& p = history[i];
        const double beta = trace_dot(p.t, r) / p.rho;
        r += (alpha[i] - beta) * p.s;
    }
    return r;
}

/// Chebyshev weight for iteration k (1-based).
inline double chebyshev_omega(int k, double omega_prev, const SolverConfig& cfg) {
    if (k < cfg.S) return 1.0;
    if (k == cfg.S) return 2.0 / (2.0 - cfg.rho * cfg.rho);
    return 4.0 / (4.0 - cfg.rho * cfg.rho * omega_prev);
}

/// Returns (d, omega) with d = omega (x_k + q - x_{k-1}) + x_{k-1} - x_k.
inline std::pair<Positions, double> direction_chebyshev(const Positions& x_k, const Positions& x_km1, const Positions& q,
                                                        int k, double omega_prev, const SolverConfig& cfg) {
    const double omega = chebyshev_omega(k, omega_prev, cfg);
    if (omega == 1.0) return {q, omega};
    return {omega * (x_k + q - x_km1) + x_km1 - x_k, omega};
}

/// Projects a symmetric matrix to eigenvalues >= floor.
inline Eigen::MatrixXd project_psd(const Eigen::MatrixXd& h, double floor = 1e-8) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (h + h.transpose()));
    const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(floor);
    return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

/// Element Hessian (3m x 3m, dof 3a+c) by central differences of the analytic element gradient.
inline Eigen::MatrixXd element_hessian(const SimSystem& sys, const Element& el, const LocalPositions& xloc) {
    const Eigen::Index m = xloc.rows();
    const double step = 1e-6 * sys.length_scale;
    Eigen::MatrixXd h(3 * m, 3 * m);
    for (Eigen::Index a = 0; a < m; ++a)
        for (int c = 0; c < 3; ++c) {
            LocalPositions xp = xloc, xm = xloc;
            xp(a, c) += step;
            xm(a, c) -= step;
            const LocalPositions gp = evaluate_element(sys, el, xp).gradient;
            const LocalPositions gm = evaluate_element(sys, el, xm).gradient;
            for (Eigen::Index b = 0; b < m; ++b)
                for (int e = 0; e < 3; ++e) h(3 * b + e, 3 * a + c) = (gp(b, e) - gm(b, e)) / (2.0 * step);
        }
    return 0.5 * (h + h.transpose());
}

inline SpMatrix newton_hessian(const SimSystem& sys, const SimState& state, const Positions& x) {
    std::vector<Triplet> trips;
    const double inv_h2 = 1.0 / (sys.h * sys.h);
    for (Eigen::Index f = 0; f < sys.num_free(); ++f)
        for (int c = 0; c < 3; ++c)
            trips.emplace_back(3 * f + c, 3 * f + c, sys.masses(sys.free_vertices[static_cast<std::size_t>(f)]) * inv_h2);
    for (const Element& el : sys.elements) {
        const Eigen::MatrixXd he = project_psd(element_hessian(sys, el, gather(el, x)));
        for (std::size_t a = 0; a < el.op.vertices.size(); ++a) {
            const int fa = sys.free_index[static_cast<std::size_t>(el.op.vertices[a])];
            if (fa < 0) continue;
            for (std::size_t b = 0; b < el.op.vertices.size(); ++b) {
                const int fb = sys.free_index[static_cast<std::size_t>(el.op.vertices[b])];
                if (fb < 0) continue;
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j)
                        trips.emplace_back(3 * fa + i, 3 * fb + j,
                                           he(3 * static_cast<Eigen::Index>(a) + i, 3 * static_cast<Eigen::Index>(b) + j));
            }
        }
    }
    for (const CollisionConstraint& col : state.collisions) {
        const int f = sys.free_index[static_cast<std::size_t>(col.vertex)];
        if (f < 0) continue;
        const Mat3 hc = 2.0 * col.weight * col.normal * col.normal.transpose();
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) trips.emplace_back(3 * f + i, 3 * f + j, hc(i, j));
    }
    SpMatrix hs(3 * sys.num_free(), 3 * sys.num_free());
    hs.setFromTriplets(trips.begin(), trips.end());
    return hs;
}

/// Newton step with per-element definiteness fix; refactors at every call.
inline Positions direction_newton(const SimSystem& sys, const SimState& state, const Positions& x, const Positions& grad) {
    const Factorization f = factorize_spd(newton_hessian(sys, state, x));
    return unflatten_free(sys, f.solve(Eigen::VectorXd(-flatten_free(sys, grad))));
}

inline Positions direction_newton(const SimSystem& sys, const SimState& state, const Positions& x) {
    return direction_newton(sys, state, x, gradient(sys, state, x));
}

// ---------------------------------------------------------------------------------------------
// Line search

struct LineSearchResult {
    double alpha = 0.0;
    Positions x;
    double g = 0.0;
    int trials = 0;
};

/// Backtracking: alpha = alpha_init, then repeat { alpha *= shrink; try } until
/// g(x + alpha d) <= g_x + gamma alpha dd. Without line search the first trial is accepted.
template <typename Objective>
LineSearchResult backtrack(Objective&& g, const Positions& x, const Positions& d, double g_x, double dd,
                           const SolverConfig& cfg) {
    LineSearchResult r;
    r.alpha = cfg.alpha_init;
    for (;;) {
        r.alpha *= cfg.alpha_shrink;
        if (r.alpha < cfg.min_alpha)
            throw StagnationError("line search step fell below " + std::to_string(cfg.min_alpha) +
                                  " after " + std::to_string(r.trials) + " trials");
        r.x = x + r.alpha * d;
        r.g = g(r.x);
        ++r.trials;
        if (!cfg.line_search) return r;
        if (r.g <= g_x + cfg.gamma * r.alpha * dd) return r;
    }
}

inline LineSearchResult line_search(const SimSystem& sys, const SimState& state, const Positions& x, const Positions& d,
                                    double g_x, const Positions& grad_x, const SolverConfig& cfg) {
    const double dd = trace_dot(grad_x, d);
    if (!(dd < 0.0)) throw DomainError("line search needs a descent direction");
    return backtrack([&](const Positions& z) { return objective(sys, state, z); }, x, d, g_x, dd, cfg);
}

// ---------------------------------------------------------------------------------------------
// Frame solve

inline double relative_error(double g_k, double g_0, double g_star) {
    if (!(g_0 > g_star + 1e-15)) throw DomainError("relative error undefined: g_0 <= g_star (degenerate frame)");
    return (g_k - g_star) / (g_0 - g_star);
}

struct IterationRecord {
    double g = 0.0;                // objective after the step
    double g_before = 0.0;         // objective at the iterate the step started from
    double alpha = 0.0;            // accepted step (0 when no step was taken)
    double dir_deriv = 0.0;        // tr(grad^T d)
    int ls_trials = 0;
    double cum_ms = 0.0;
    double grad_norm = 0.0;        // at the iterate the step started from
    bool fallback = false;         // ascent direction replaced by the pd_qn direction
    bool armijo = true;            // accepted step satisfies the sufficient-decrease test
    int collisions = 0;            // active constraints during the iteration
};

struct ConvergenceRecord {
    double g0 = 0.0;               // objective at x_1 = y
    std::vector<IterationRecord> iterations;
    int collisions_added = 0;
    int collisions_removed = 0;
    double min_removed_normal_velocity = std::numeric_limits<double>::infinity();
};

struct FrameResult {
    SimState next;
    ConvergenceRecord record;
};

/// Per-simulation solver; owns the optional rest-pose factorization. One instance per system.
class FrameSolver {
public:
    FrameSolver(const SimSystem& sys, SolverConfig cfg)
        : sys_(&sys), cfg_(cfg), a0_(make_init(sys, cfg)) {
        cfg_.validate();
    }

    const SolverConfig& config() const { return cfg_; }

    /// Runs cfg.iterations outer iterations from x_1 = y. With grad_tol > 0, stops early once
    /// |grad| <= grad_tol * |grad(x_1)| or no further decrease is representable.
    FrameResult solve(const SimState& state, double grad_tol = 0.0) const {
        using clock = std::chrono::steady_clock;
        const auto t0 = clock::now();
        const SimSystem& sys = *sys_;

        FrameResult out;
        SimState& st = out.next;
        st = state;
        st.y = inertia_target(state, sys);
        Positions x = st.y;
        Positions x_prev = x, grad_prev;
        double omega = 1.0, grad_scale = 0.0;
        LbfgsHistory history(cfg_.m);
        ConvergenceRecord& rec = out.record;

        for (int k = 1; k <= cfg_.iterations; ++k) {
            const std::vector<CollisionConstraint> before = st.collisions;
            const CollisionUpdate cu = update_collisions(sys, st, x);
            rec.collisions_added += cu.added;
            rec.collisions_removed += cu.removed;
            rec.min_removed_normal_velocity = std::min(rec.min_removed_normal_velocity, cu.min_removed_normal_velocity);
            const bool changed = !same_constraints(before, st.collisions);

            IterationRecord it;
            const double gx = objective(sys, st, x);
            const Positions grad = gradient(sys, st, x);
            if (k == 1) rec.g0 = gx;
            it.g_before = gx;
            it.grad_norm = grad.norm();
            it.collisions = static_cast<int>(st.collisions.size());
            if (!std::isfinite(gx) || !grad.allFinite()) throw DivergenceError(context(k) + "non-finite objective or gradient");
            if (k == 1) grad_scale = it.grad_norm;

            if (k > 1 && cfg_.kind == SolverKind::lbfgs) {
                const Positions gp = changed ? gradient(sys, st, x_prev) : grad_prev;
                history.push(x - x_prev, grad - gp);
            }

            if (grad_tol > 0.0 && it.grad_norm <= grad_tol * grad_scale) break;

            Positions d;
            switch (cfg_.kind) {
            case SolverKind::pd_qn: d = direction_pd_qn(sys, grad); break;
            case SolverKind::lbfgs: d = direction_lbfgs(history, grad, a0_); break;
            case SolverKind::chebyshev: {
                auto [dc, w] = direction_chebyshev(x, x_prev, direction_pd_qn(sys, grad), k, omega, cfg_);
                d = std::move(dc);
                omega = w;
                break;
            }
            case SolverKind::newton: d = direction_newton(sys, st, x, grad); break;
            }
            double dd = trace_dot(grad, d);
            if (!(dd < 0.0) && cfg_.kind != SolverKind::pd_qn) {
                d = direction_pd_qn(sys, grad);
                dd = trace_dot(grad, d);
                it.fallback = true;
            }
            it.dir_deriv = dd;

            // Converging to a tolerance: once the predicted decrease is below what g can
            // resolve, further steps only chase roundoff in the gradient.
            if (grad_tol > 0.0 && -dd <= 100.0 * std::numeric_limits<double>::epsilon() * std::abs(gx)) {
                it.g = gx;
                it.cum_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
                rec.iterations.push_back(it);
                break;
            }

            bool stepped = false;
            // Steps below position roundoff cannot change the objective measurably.
            const bool tiny_step = d.cwiseAbs().maxCoeff() <= 1e-10 * sys.length_scale;
            if (dd < 0.0 && !tiny_step) {
                try {
                    // Trial points outside a material's domain are rejected like any other
                    // insufficient decrease.
                    auto trial = [&](const Positions& z) {
                        try {
                            return objective(sys, st, z);
                        } catch (const DomainError& e) {
                            if (!cfg_.line_search) throw DivergenceError(context(k) + e.what());
                            return std::numeric_limits<double>::infinity();
                        }
                    };
                    LineSearchResult ls = backtrack(trial, x, d, gx, dd, cfg_);
                    if (!cfg_.line_search && (!std::isfinite(ls.g) || !ls.x.allFinite()))
                        throw DivergenceError(context(k) + "objective became non-finite without line search");
                    it.alpha = ls.alpha;
                    it.ls_trials = ls.trials;
                    it.g = ls.g;
                    it.armijo = ls.g <= gx + cfg_.gamma * ls.alpha * dd;
                    x_prev = x;
                    x = std::move(ls.x);
                    stepped = true;
                } catch (const StagnationError& e) {
                    // Expected decrease below what the objective can resolve: the iterate is
                    // converged to roundoff.
                    if (-dd > 1e-8 * std::abs(gx))
                        throw StagnationError(context(k) + e.what());
                    for (double a = cfg_.alpha_init * cfg_.alpha_shrink; a >= cfg_.min_alpha; a *= cfg_.alpha_shrink) ++it.ls_trials;
                }
            }
            if (!stepped) {
                it.g = gx;
                x_prev = x;
            }
            grad_prev = grad;
            it.cum_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
            rec.iterations.push_back(it);
            if (!stepped && grad_tol > 0.0) break;
        }

        st.q_prev = state.q;
        st.q = x;
        return out;
    }

private:
    static InitialHessian make_init(const SimSystem& sys, const SolverConfig& cfg) {
        return InitialHessian(sys, cfg.kind == SolverKind::lbfgs ? cfg.lbfgs_init : LbfgsInit::system_matrix);
    }

    static bool same_constraints(const std::vector<CollisionConstraint>& a, const std::vector<CollisionConstraint>& b) {
        if (a.size() != b.size()) return false;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (a[i].vertex != b[i].vertex || a[i].point != b[i].point || a[i].normal != b[i].normal ||
                a[i].weight != b[i].weight)
                return false;
        return true;
    }

    std::string context(int k) const { return "iteration " + std::to_string(k) + " (" + to_string(cfg_.kind) + "): "; }

    const SimSystem* sys_;
    SolverConfig cfg_;
    InitialHessian a0_;
};

inline FrameResult simulate_frame(const SimSystem& sys, const SimState& state, const SolverConfig& cfg) {
    return FrameSolver(sys, cfg).solve(state);
}

struct ReferenceSolution {
    double g_star = 0.0;
    Positions x;
    int iterations = 0;
};

/// Newton baseline iterated to |grad| < tol * |grad(x_1)|, at most max_iterations.
inline ReferenceSolution newton_reference(const SimSystem& sys, const SimState& state, double tol = 1e-10,
                                          int max_iterations = 200) {
    SolverConfig cfg;
    cfg.kind = SolverKind::newton;
    cfg.iterations = max_iterations;
    const FrameResult r = FrameSolver(sys, cfg).solve(state, tol);
    ReferenceSolution out;
    out.x = r.next.q;
    out.iterations = static_cast<int>(r.record.iterations.size());
    out.g_star = r.record.g0;
    for (const IterationRecord& it : r.record.iterations) out.g_star = std::min(out.g_star, it.g);
    return out;
}

/// Estimates the spectral radius of the pd_qn fixed-point map from the decay of successive
/// step lengths |x_{k+1} - x_k| on one frame. Result is clamped to [0, 0.999].
inline double estimate_spectral_radius(const SimSystem& sys, const SimState& state, int iterations = 30) {
    SolverConfig cfg;
    cfg.kind = SolverKind::pd_qn;
    cfg.iterations = 1;
    SimState st = state;
    st.y = inertia_target(state, sys);
    Positions x = st.y;
    std::vector<double> steps;
    for (int k = 0; k < iterations; ++k) {
        update_collisions(sys, st, x);
        const Positions grad = gradient(sys, st, x);
        const Positions d = direction_pd_qn(sys, grad);
        const double dd = trace_dot(grad, d);
        if (!(dd < 0.0)) break;
        LineSearchResult ls;
        try {
            ls = backtrack([&](const Positions& z) { return objective(sys, st, z); }, x, d, objective(sys, st, x), dd, cfg);
        } catch (const StagnationError&) {
            break;
        }
        const double len = (ls.x - x).norm();
        if (!(len > 0.0)) break;
        steps.push_back(len);
        x = std::move(ls.x);
    }
    if (steps.size() < 4) return 0.0;
    // Geometric mean of the ratios over the second half, where the slowest mode dominates.
    const std::size_t first = steps.size() / 2;
    const double rho = std::pow(steps.back() / steps[first - 1], 1.0 / static_cast<double>(steps.size() - first));
    return std::clamp(rho, 0.0, 0.999);
}

} // namespace qnsim
