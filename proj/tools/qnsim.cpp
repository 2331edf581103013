// Command-line driver: run scenarios, compare solvers, write bundled assets.

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qnsim/qnsim.hpp"

namespace {

using namespace qnsim;

struct Overrides {
    std::string scenario;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string solver;
    std::optional<int> iterations;
    bool no_timing = false;
};

Scenario prepare(const Overrides& o) {
    Scenario sc = load_scenario(o.scenario);
    if (o.seed) {
        sc.seed = *o.seed;
        sc.initial.seed.reset();
    }
    if (!o.solver.empty()) sc.solver.kind = parse_solver_kind(o.solver);
    if (o.iterations) sc.solver.iterations = *o.iterations;
    sc.solver.validate();
    if (o.no_timing) sc.outputs.timing = false;
    if (!o.out.empty()) {
        const fs::path dir = o.out;
        sc.outputs.csv = dir / (sc.outputs.csv.empty() ? fs::path("convergence.csv") : sc.outputs.csv.filename());
        if (!sc.outputs.obj_dir.empty()) sc.outputs.obj_dir = dir / sc.outputs.obj_dir.filename();
    }
    return sc;
}

void print_summary(const std::string& label, const BenchmarkReport& r, bool header) {
    if (header) std::printf("%-12s %8s %10s %12s %14s %12s\n", "solver", "frames", "ls/iter", "ms/frame", "median_relerr", "max_penetr");
    double pen = 0.0;
    for (const FrameReport& f : r.frames) pen = std::max(pen, f.max_penetration);
    const double med = median(r.final_rel_errors());
    std::printf("%-12s %8zu %10.3f %12.3f %14.4g %12.4g\n", label.c_str(), r.frames.size(), r.average_ls_trials(),
                r.mean_frame_ms(), med, pen);
}

int simulate(const Overrides& o) {
    const Scenario sc = prepare(o);
    const BenchmarkReport r = run(sc);
    print_summary(to_string(sc.solver.kind), r, true);
    if (!sc.outputs.csv.empty()) std::printf("csv: %s\n", sc.outputs.csv.string().c_str());
    return 0;
}

int compare(const Overrides& o, const std::string& solvers) {
    Scenario base = prepare(o);
    std::vector<SolverKind> kinds;
    std::stringstream ss(solvers);
    for (std::string s; std::getline(ss, s, ',');)
        if (!s.empty()) kinds.push_back(parse_solver_kind(s));
    const fs::path dir = o.out.empty() ? base.base_dir : fs::path(o.out);
    bool header = true;
    for (SolverKind k : kinds) {
        Scenario sc = base;
        sc.solver.kind = k;
        sc.outputs.csv = dir / (to_string(k) + ".csv");
        sc.outputs.obj_dir.clear();
        print_summary(to_string(k), run(sc), header);
        header = false;
    }
    return 0;
}

int generate_assets(const std::string& dir) {
    fs::create_directories(dir);
    const TetMesh bar = box_tet_mesh(12, 4, 4, 0.05);
    write_tetgen(bar, fs::path(dir) / "bar.node", fs::path(dir) / "bar.ele");
    const TetMesh ball = sphere_tet_mesh(0.1, 9);
    write_tetgen(ball, fs::path(dir) / "sphere.node", fs::path(dir) / "sphere.ele");
    const SpringNetwork cloth = cloth_grid(20, 20, 1.0, 1.0);
    write_obj(cloth.rest, cloth.faces, fs::path(dir) / "cloth.obj");
    std::printf("bar: %zu tets, sphere: %zu tets, cloth: %zu springs\n", bar.tets.size(), ball.tets.size(),
                cloth.springs.size());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quasi-Newton Projective Dynamics simulator"};
    app.require_subcommand(1);

    Overrides sim;
    auto add_common = [](CLI::App* cmd, Overrides& o) {
        cmd->add_option("scenario", o.scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
        cmd->add_option("--out", o.out, "Output directory (overrides csv/obj locations)");
        cmd->add_option("--seed", o.seed, "Random seed");
        cmd->add_option("--solver", o.solver, "pd_qn | lbfgs | chebyshev | newton");
        cmd->add_option("--iterations", o.iterations, "Iterations per frame");
        cmd->add_flag("--no-timing", o.no_timing, "Write cum_ms as 0 for reproducible CSVs");
    };
    CLI::App* simulate_cmd = app.add_subcommand("simulate", "Run one scenario");
    add_common(simulate_cmd, sim);

    Overrides cmp;
    std::string solvers = "pd_qn,chebyshev,lbfgs";
    CLI::App* compare_cmd = app.add_subcommand("compare", "Run one scenario with several solvers");
    add_common(compare_cmd, cmp);
    compare_cmd->add_option("--solvers", solvers, "Comma-separated solver list");

    std::string asset_dir = "assets";
    CLI::App* assets_cmd = app.add_subcommand("generate-assets", "Write the bundled bar, sphere and cloth meshes");
    assets_cmd->add_option("dir", asset_dir, "Output directory");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*simulate_cmd) return simulate(sim);
        if (*compare_cmd) return compare(cmp, solvers);
        if (*assets_cmd) return generate_assets(asset_dir);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "qnsim: error: %s\n", e.what());
        return 1;
    }
    return 0;
}
