#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "qnsim/dynamics.hpp"
#include "qnsim/errors.hpp"
#include "qnsim/mesh.hpp"
#include "qnsim/scenario.hpp"
#include "qnsim/solvers.hpp"

namespace qnsim {

struct FrameReport {
    int frame = 0;
    ConvergenceRecord record;
    std::optional<double> g_star;      // recorded frames only
    std::vector<double> rel_errors;    // NaN where undefined
    double wall_ms = 0.0;
    double max_penetration = 0.0;
    double max_displacement = 0.0;     // from rest
};

struct BenchmarkReport {
    std::vector<FrameReport> frames;
    std::vector<Positions> states;     // q after each frame, when kept
    double rho = 0.0;                  // Chebyshev estimate actually used

    std::size_t rows() const {
        std::size_t r = 0;
        for (const FrameReport& f : frames) r += f.record.iterations.size();
        return r;
    }

    double average_ls_trials() const {
        double trials = 0.0;
        for (const FrameReport& f : frames)
            for (const IterationRecord& it : f.record.iterations) trials += it.ls_trials;
        return rows() ? trials / static_cast<double>(rows()) : 0.0;
    }

    double mean_frame_ms() const {
        double t = 0.0;
        for (const FrameReport& f : frames) t += f.wall_ms;
        return frames.empty() ? 0.0 : t / static_cast<double>(frames.size());
    }

    /// Final relative error of every recorded frame with a defined value.
    std::vector<double> final_rel_errors() const {
        std::vector<double> out;
        for (const FrameReport& f : frames)
            if (!f.rel_errors.empty() && std::isfinite(f.rel_errors.back())) out.push_back(f.rel_errors.back());
        return out;
    }
};

/// Relative errors of a frame's iterations against g_star. g_star is lowered to the smallest
/// value seen so that roundoff in the reference never yields negative errors.
inline std::vector<double> relative_errors(const ConvergenceRecord& rec, double g_star) {
    double gs = std::min(g_star, rec.g0);
    for (const IterationRecord& it : rec.iterations) gs = std::min(gs, it.g);
    std::vector<double> out;
    for (const IterationRecord& it : rec.iterations) {
        if (rec.g0 > gs + 1e-15)
            out.push_back(relative_error(it.g, rec.g0, gs));
        else
            out.push_back(std::numeric_limits<double>::quiet_NaN());
    }
    return out;
}

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline void write_csv(const BenchmarkReport& report, const fs::path& path, bool timing = true) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::FILE* f = std::fopen(path.string().c_str(), "w");
    if (!f) throw Error("cannot write " + path.string());
    std::fprintf(f, "frame,iteration,g,rel_error,ls_trials,cum_ms\n");
    for (const FrameReport& fr : report.frames)
        for (std::size_t k = 0; k < fr.record.iterations.size(); ++k) {
            const IterationRecord& it = fr.record.iterations[k];
            char rel[40] = "";
            if (k < fr.rel_errors.size() && std::isfinite(fr.rel_errors[k])) std::snprintf(rel, sizeof rel, "%.17g", fr.rel_errors[k]);
            std::fprintf(f, "%d,%zu,%.17g,%s,%d,%.3f\n", fr.frame, k + 1, it.g, rel, it.ls_trials, timing ? it.cum_ms : 0.0);
        }
    if (std::fclose(f) != 0) throw Error("error writing " + path.string());
}

inline fs::path frame_path(const fs::path& dir, int frame) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04d.obj", frame);
    return dir / name;
}

/// Writes frame_0000.obj, frame_0001.obj, ... into dir.
inline void export_frames(const std::vector<Positions>& states, const std::vector<Triangle>& faces, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
    for (std::size_t f = 0; f < states.size(); ++f) write_obj(states[f], faces, frame_path(dir, static_cast<int>(f)));
}

struct RunOptions {
    bool keep_states = false;
    bool write_outputs = true;
    double divergence_factor = 100.0;   // displacement bound in bounding-box diagonals
};

/// Simulates all frames of a scenario, computing Newton references on recorded frames.
inline BenchmarkReport run(const Scenario& sc, const RunOptions& opt = {}) {
    Scene scene = build_scene(sc);
    const SimSystem& sys = scene.system;
    SolverConfig cfg = sc.solver;
    SimState state = scene.initial;
    BenchmarkReport report;
    if (sc.rho_auto) {
        SimState probe = state;
        scene.set_targets(probe, sc.h);
        cfg.rho = estimate_spectral_radius(sys, probe);
    }
    report.rho = cfg.rho;
    const FrameSolver solver(sys, cfg);
    const bool export_obj = opt.write_outputs && !sc.outputs.obj_dir.empty();
    if (export_obj) fs::create_directories(sc.outputs.obj_dir);

    for (int f = 0; f < sc.frames; ++f) {
        scene.set_targets(state, (f + 1) * sc.h);
        FrameReport fr;
        fr.frame = f;
        try {
            if (sc.is_recorded(f)) fr.g_star = newton_reference(sys, state).g_star;
            FrameResult res = solver.solve(state);
            fr.record = std::move(res.record);
            state = std::move(res.next);
        } catch (const Error&) {
            rethrow_with_context("frame " + std::to_string(f) + ": ");
        }
        if (fr.g_star) fr.rel_errors = relative_errors(fr.record, *fr.g_star);
        fr.wall_ms = fr.record.iterations.empty() ? 0.0 : fr.record.iterations.back().cum_ms;
        fr.max_penetration = max_penetration(sys, state.q);
        fr.max_displacement = (state.q - sys.rest).rowwise().norm().maxCoeff();
        if (!state.q.allFinite() || fr.max_displacement > opt.divergence_factor * scene.bbox_diagonal)
            throw DivergenceError("frame " + std::to_string(f) + ": simulation diverged (max displacement " +
                                  std::to_string(fr.max_displacement) + " m)");
        if (export_obj) write_obj(state.q, sys.faces, frame_path(sc.outputs.obj_dir, f));
        if (opt.keep_states) report.states.push_back(state.q);
        report.frames.push_back(std::move(fr));
    }
    if (opt.write_outputs && !sc.outputs.csv.empty()) write_csv(report, sc.outputs.csv, sc.outputs.timing);
    return report;
}

/// Largest vertex distance between x and rest after the best rigid alignment of x onto rest.
inline double aligned_max_distance(const Positions& x, const Positions& rest) {
    const Eigen::RowVector3d cx = x.colwise().mean(), cr = rest.colwise().mean();
    const Positions a = x.rowwise() - cx, b = rest.rowwise() - cr;
    const Mat3 h = a.transpose() * b;
    Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    const Mat3 r = svd.matrixV() * d * svd.matrixU().transpose();
    const Positions aligned = a * r.transpose();
    return (aligned - b).rowwise().norm().maxCoeff();
}

struct SolverTrial {
    std::string label;
    SolverConfig config;
};

/// Final relative error of each trial on one frame, with a shared Newton reference.
struct FrameComparison {
    int frame = 0;
    double g_star = 0.0;
    std::vector<std::vector<double>> rel_errors;   // per trial, per iteration
};

/// Replays a reference trajectory and, at each listed frame, runs every trial from the same
/// pre-frame state. The trajectory itself is advanced with `driver`.
inline std::vector<FrameComparison> compare_on_trajectory(const Scenario& sc, const SolverConfig& driver,
                                                          const std::vector<SolverTrial>& trials,
                                                          const std::vector<int>& frames) {
    Scene scene = build_scene(sc);
    const SimSystem& sys = scene.system;
    const FrameSolver drive(sys, driver);
    std::vector<FrameSolver> solvers;
    for (const SolverTrial& t : trials) solvers.emplace_back(sys, t.config);
    SimState state = scene.initial;
    std::vector<FrameComparison> out;
    const int last = frames.empty() ? -1 : *std::max_element(frames.begin(), frames.end());
    for (int f = 0; f <= last; ++f) {
        scene.set_targets(state, (f + 1) * sc.h);
        if (std::find(frames.begin(), frames.end(), f) != frames.end()) {
            FrameComparison cmp;
            cmp.frame = f;
            std::vector<ConvergenceRecord> recs;
            for (const FrameSolver& s : solvers) recs.push_back(s.solve(state).record);
            cmp.g_star = newton_reference(sys, state).g_star;
            for (const ConvergenceRecord& r : recs) cmp.g_star = std::min(cmp.g_star, r.g0);
            for (const ConvergenceRecord& r : recs)
                for (const IterationRecord& it : r.iterations) cmp.g_star = std::min(cmp.g_star, it.g);
            for (const ConvergenceRecord& r : recs) cmp.rel_errors.push_back(relative_errors(r, cmp.g_star));
            out.push_back(std::move(cmp));
        }
        state = drive.solve(state).next;
    }
    return out;
}

} // namespace qnsim
