#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qnsim/dynamics.hpp"
#include "qnsim/errors.hpp"
#include "qnsim/generators.hpp"
#include "qnsim/materials.hpp"
#include "qnsim/mesh.hpp"
#include "qnsim/solvers.hpp"

namespace qnsim {

namespace fs = std::filesystem;

struct MeshSpec {
    std::string type = "box";   // tetgen | obj | box | sphere | cloth
    fs::path node, ele, path;
    double density = 1000.0;          // kg/m^3 (tets)
    double areal_density = 0.1;       // kg/m^2 (springs)
    double stiffness = 0.0;           // springs
    std::array<int, 3> cells{6, 2, 2};
    double cell_size = 0.05;
    Vec3 origin = Vec3::Zero();
    double radius = 0.1;
    int resolution = 9;
    double size = 1.0;
    double height = 0.0;
};

struct MaterialSpec {
    std::string type = "neohookean";  // builtin name, "arap", or "spring"
    MaterialParams params;
    double stiffness = 0.0;           // arap
};

struct FixedMotion {
    enum class Kind { fixed, rotate, oscillate, translate };
    Kind kind = Kind::fixed;
    Vec3 axis = Vec3::UnitX();
    Vec3 center = Vec3::Zero();
    double rate = 0.0;                // rad/s
    Vec3 direction = Vec3::UnitY();
    double amplitude = 0.0;           // m
    double frequency = 0.0;           // Hz
    Vec3 velocity = Vec3::Zero();     // m/s

    /// Prescribed position at time t of a vertex that rests at p.
    Vec3 apply(const Vec3& p, double t) const {
        switch (kind) {
        case Kind::fixed: return p;
        case Kind::rotate: return center + Eigen::AngleAxisd(rate * t, axis.normalized()) * (p - center);
        case Kind::oscillate: return p + amplitude * std::sin(2.0 * M_PI * frequency * t) * direction;
        case Kind::translate: return p + t * velocity;
        }
        return p;
    }
};

struct FixedGroup {
    std::vector<int> indices;
    std::optional<std::pair<Vec3, Vec3>> box;   // inclusive min/max corners
    FixedMotion motion;
};

struct AnisotropySpec {
    Vec3 direction = Vec3::UnitX();
    double kappa = 0.0;
};

struct InitialSpec {
    bool random = false;
    std::optional<std::uint64_t> seed;
    double magnitude = 0.0;            // m
    double relative_magnitude = 0.0;   // fraction of the bounding-box diagonal
    Vec3 velocity = Vec3::Zero();
};

struct OutputSpec {
    fs::path csv;
    fs::path obj_dir;
    std::vector<int> record_frames;
    bool record_all = false;
    bool timing = true;
};

struct Scenario {
    fs::path base_dir;
    MeshSpec mesh;
    MaterialSpec material;
    SolverConfig solver;
    bool rho_auto = false;
    double h = 1.0 / 30.0;
    int frames = 1;
    Vec3 gravity = Vec3(0.0, -9.81, 0.0);
    std::vector<FixedGroup> fixed;
    std::vector<Collider> colliders;
    std::optional<double> collision_weight;
    std::optional<AnisotropySpec> anisotropy;
    InitialSpec initial;
    OutputSpec outputs;
    std::uint64_t seed = 0;

    bool is_recorded(int frame) const {
        if (outputs.record_all) return true;
        for (int f : outputs.record_frames)
            if (f == frame) return true;
        return false;
    }
};

namespace detail {

using json = nlohmann::json;

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ValidationError("'" + where + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) {
            std::string valid;
            for (const char* a : allowed) valid += (valid.empty() ? "" : ", ") + std::string(a);
            throw ValidationError("unknown key '" + (where.empty() ? "" : where + ".") + it.key() + "' (valid: " + valid + ")");
        }
    }
}

inline std::string key_path(const std::string& where, const char* key) { return where.empty() ? key : where + "." + key; }

template <typename T>
T get(const json& j, const char* key, const std::string& where, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError("key '" + key_path(where, key) + "' has the wrong type");
    }
}

template <typename T>
T require_key(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw ValidationError("missing required key '" + key_path(where, key) + "'");
    return get<T>(j, key, where, T{});
}

inline Vec3 vec3(const json& j, const char* key, const std::string& where, const Vec3& fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() || !v[2].is_number())
        throw ValidationError("key '" + key_path(where, key) + "' must be an array of 3 numbers");
    return Vec3(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
}

inline Vec3 unit(const Vec3& v, const std::string& what) {
    if (!(v.norm() > 0.0)) throw ValidationError("'" + what + "' must be a nonzero vector");
    return v.normalized();
}

inline HermiteSpline parse_spline(const json& j, const std::string& where) {
    check_keys(j, {"knots"}, where);
    const json& k = j.contains("knots") ? j.at("knots") : throw ValidationError("missing required key '" + where + ".knots'");
    if (!k.is_array()) throw ValidationError("'" + where + ".knots' must be an array of [x, y, dy] triples");
    std::vector<HermiteSpline::Knot> knots;
    for (const json& e : k) {
        if (!e.is_array() || e.size() != 3) throw ValidationError("'" + where + ".knots' entries must be [x, y, dy]");
        knots.push_back({e[0].get<double>(), e[1].get<double>(), e[2].get<double>()});
    }
    return HermiteSpline(std::move(knots));
}

inline MeshSpec parse_mesh(const json& j, const fs::path& base) {
    const std::string w = "mesh";
    if (!j.is_object()) throw ValidationError("'mesh' must be an object");
    MeshSpec m;
    m.type = require_key<std::string>(j, "type", w);
    auto resolve = [&](const char* key) {
        fs::path p = require_key<std::string>(j, key, w);
        return p.is_absolute() ? p : base / p;
    };
    if (m.type == "tetgen") {
        check_keys(j, {"type", "node", "ele", "density"}, w);
        m.node = resolve("node");
        m.ele = resolve("ele");
    } else if (m.type == "obj") {
        check_keys(j, {"type", "path", "stiffness", "areal_density"}, w);
        m.path = resolve("path");
        m.stiffness = require_key<double>(j, "stiffness", w);
    } else if (m.type == "box") {
        check_keys(j, {"type", "cells", "cell_size", "origin", "density"}, w);
        m.cells = get<std::array<int, 3>>(j, "cells", w, m.cells);
        m.cell_size = get<double>(j, "cell_size", w, m.cell_size);
        m.origin = vec3(j, "origin", w, m.origin);
    } else if (m.type == "sphere") {
        check_keys(j, {"type", "radius", "resolution", "center", "density"}, w);
        m.radius = get<double>(j, "radius", w, m.radius);
        m.resolution = get<int>(j, "resolution", w, m.resolution);
        m.origin = vec3(j, "center", w, m.origin);
    } else if (m.type == "cloth") {
        check_keys(j, {"type", "cells", "size", "height", "stiffness", "areal_density"}, w);
        const auto c = get<std::array<int, 2>>(j, "cells", w, {20, 20});
        m.cells = {c[0], c[1], 0};
        m.size = get<double>(j, "size", w, m.size);
        m.height = get<double>(j, "height", w, m.height);
        m.stiffness = require_key<double>(j, "stiffness", w);
    } else {
        throw ValidationError("unknown mesh type '" + m.type + "' (valid: tetgen, obj, box, sphere, cloth)");
    }
    m.density = get<double>(j, "density", w, m.density);
    m.areal_density = get<double>(j, "areal_density", w, m.areal_density);
    if (!(m.density > 0.0)) throw ValidationError("'mesh.density' must be positive");
    if (!(m.areal_density > 0.0)) throw ValidationError("'mesh.areal_density' must be positive");
    return m;
}

inline MaterialSpec parse_material(const json& j) {
    const std::string w = "material";
    check_keys(j, {"type", "mu", "lambda", "kappa1", "kappa2", "preset", "spline_a", "spline_b", "spline_c",
                   "fit_interval", "stiffness"},
               w);
    MaterialSpec m;
    m.type = require_key<std::string>(j, "type", w);
    m.params.mu = get<double>(j, "mu", w, 0.0);
    m.params.lambda = get<double>(j, "lambda", w, 0.0);
    m.params.kappa1 = get<double>(j, "kappa1", w, 0.0);
    m.params.kappa2 = get<double>(j, "kappa2", w, 0.0);
    m.params.preset = get<std::string>(j, "preset", w, "");
    if (j.contains("spline_a")) m.params.spline_a = parse_spline(j.at("spline_a"), w + ".spline_a");
    if (j.contains("spline_b")) m.params.spline_b = parse_spline(j.at("spline_b"), w + ".spline_b");
    if (j.contains("spline_c")) m.params.spline_c = parse_spline(j.at("spline_c"), w + ".spline_c");
    const auto fit = get<std::array<double, 2>>(j, "fit_interval", w, {0.5, 1.5});
    m.params.fit = {fit[0], fit[1]};
    m.stiffness = get<double>(j, "stiffness", w, 0.0);
    if (m.type == "arap" || m.type == "spring") {
        if (m.type == "arap" && !(m.stiffness > 0.0)) throw ValidationError("'material.stiffness' must be positive for arap");
        return m;
    }
    const auto& names = builtin_material_names();
    if (std::find(names.begin(), names.end(), m.type) == names.end()) {
        std::string valid;
        for (const auto& n : names) valid += n + ", ";
        throw ValidationError("unknown material type '" + m.type + "' (valid: " + valid + "arap, spring)");
    }
    return m;
}

inline void parse_solver(const json& j, Scenario& s) {
    const std::string w = "solver";
    check_keys(j, {"kind", "iterations", "m", "gamma", "alpha_init", "alpha_shrink", "rho", "S", "lbfgs_init",
                   "line_search"},
               w);
    SolverConfig& c = s.solver;
    if (j.contains("kind")) c.kind = parse_solver_kind(get<std::string>(j, "kind", w, ""));
    c.iterations = get<int>(j, "iterations", w, c.iterations);
    c.m = get<int>(j, "m", w, c.m);
    c.gamma = get<double>(j, "gamma", w, c.gamma);
    c.alpha_init = get<double>(j, "alpha_init", w, c.alpha_init);
    c.alpha_shrink = get<double>(j, "alpha_shrink", w, c.alpha_shrink);
    if (j.contains("rho") && j.at("rho").is_string()) {
        if (j.at("rho").get<std::string>() != "auto") throw ValidationError("'solver.rho' must be a number or \"auto\"");
        s.rho_auto = true;
    } else {
        c.rho = get<double>(j, "rho", w, c.rho);
    }
    c.S = get<int>(j, "S", w, c.S);
    if (j.contains("lbfgs_init")) c.lbfgs_init = parse_lbfgs_init(get<std::string>(j, "lbfgs_init", w, ""));
    c.line_search = get<bool>(j, "line_search", w, c.line_search);
    try {
        c.validate();
    } catch (const ValidationError& e) {
        throw ValidationError(std::string("solver: ") + e.what());
    }
}

inline FixedMotion parse_motion(const json& j, const std::string& w) {
    FixedMotion m;
    const std::string type = require_key<std::string>(j, "type", w);
    if (type == "static") {
        check_keys(j, {"type"}, w);
    } else if (type == "rotate") {
        check_keys(j, {"type", "axis", "center", "rate"}, w);
        m.kind = FixedMotion::Kind::rotate;
        m.axis = unit(vec3(j, "axis", w, m.axis), w + ".axis");
        m.center = vec3(j, "center", w, m.center);
        m.rate = require_key<double>(j, "rate", w);
    } else if (type == "oscillate") {
        check_keys(j, {"type", "direction", "amplitude", "frequency"}, w);
        m.kind = FixedMotion::Kind::oscillate;
        m.direction = unit(vec3(j, "direction", w, m.direction), w + ".direction");
        m.amplitude = require_key<double>(j, "amplitude", w);
        m.frequency = require_key<double>(j, "frequency", w);
    } else if (type == "translate") {
        check_keys(j, {"type", "velocity"}, w);
        m.kind = FixedMotion::Kind::translate;
        m.velocity = vec3(j, "velocity", w, m.velocity);
    } else {
        throw ValidationError("unknown motion type '" + type + "' (valid: static, rotate, oscillate, translate)");
    }
    return m;
}

inline Collider parse_collider(const json& j, const std::string& w) {
    const std::string type = require_key<std::string>(j, "type", w);
    if (type == "plane") {
        check_keys(j, {"type", "point", "normal"}, w);
        return HalfSpace{vec3(j, "point", w, Vec3::Zero()), unit(vec3(j, "normal", w, Vec3::UnitY()), w + ".normal")};
    }
    if (type == "sphere") {
        check_keys(j, {"type", "center", "radius"}, w);
        SphereObstacle s{vec3(j, "center", w, Vec3::Zero()), require_key<double>(j, "radius", w)};
        if (!(s.radius > 0.0)) throw ValidationError("'" + w + ".radius' must be positive");
        return s;
    }
    if (type == "torus") {
        check_keys(j, {"type", "center", "axis", "major_radius", "minor_radius"}, w);
        TorusObstacle t{vec3(j, "center", w, Vec3::Zero()), unit(vec3(j, "axis", w, Vec3::UnitY()), w + ".axis"),
                        require_key<double>(j, "major_radius", w), require_key<double>(j, "minor_radius", w)};
        if (!(t.minor_radius > 0.0 && t.major_radius > t.minor_radius))
            throw ValidationError("'" + w + "' needs major_radius > minor_radius > 0");
        return t;
    }
    throw ValidationError("unknown collider type '" + type + "' (valid: plane, sphere, torus)");
}

} // namespace detail

/// Parses and validates a scenario document. Relative paths resolve against base_dir.
inline Scenario parse_scenario(const nlohmann::json& j, const fs::path& base_dir) {
    using namespace detail;
    check_keys(j, {"mesh", "material", "solver", "h", "frames", "gravity", "fixed", "colliders", "collision_weight",
                   "anisotropy", "initial", "outputs", "seed"},
               "");
    Scenario s;
    s.base_dir = base_dir;
    if (!j.contains("mesh")) throw ValidationError("missing required key 'mesh'");
    s.mesh = parse_mesh(j.at("mesh"), base_dir);
    const bool springs = s.mesh.type == "obj" || s.mesh.type == "cloth";
    if (j.contains("material")) {
        s.material = parse_material(j.at("material"));
    } else if (springs) {
        s.material.type = "spring";
    } else {
        throw ValidationError("missing required key 'material'");
    }
    if (springs != (s.material.type == "spring"))
        throw ValidationError(springs ? "spring meshes take material type 'spring' (stiffness comes from 'mesh.stiffness')"
                                      : "material type 'spring' needs an obj or cloth mesh");
    if (j.contains("solver")) parse_solver(j.at("solver"), s);
    s.h = get<double>(j, "h", "", s.h);
    if (!(s.h > 0.0)) throw ValidationError("'h' must be positive");
    s.frames = get<int>(j, "frames", "", s.frames);
    if (s.frames < 0) throw ValidationError("'frames' must be >= 0");
    s.gravity = vec3(j, "gravity", "", s.gravity);
    s.seed = get<std::uint64_t>(j, "seed", "", s.seed);

    if (j.contains("fixed")) {
        const json& fx = j.at("fixed");
        if (!fx.is_array()) throw ValidationError("'fixed' must be an array of groups");
        for (std::size_t i = 0; i < fx.size(); ++i) {
            const std::string w = "fixed[" + std::to_string(i) + "]";
            check_keys(fx[i], {"indices", "box", "motion"}, w);
            FixedGroup g;
            g.indices = get<std::vector<int>>(fx[i], "indices", w, {});
            if (fx[i].contains("box")) {
                const json& b = fx[i].at("box");
                check_keys(b, {"min", "max"}, w + ".box");
                g.box = std::make_pair(vec3(b, "min", w + ".box", Vec3::Zero()), vec3(b, "max", w + ".box", Vec3::Zero()));
            }
            if (g.indices.empty() && !g.box) throw ValidationError("'" + w + "' needs 'indices' or 'box'");
            if (fx[i].contains("motion")) g.motion = parse_motion(fx[i].at("motion"), w + ".motion");
            s.fixed.push_back(std::move(g));
        }
    }
    if (j.contains("colliders")) {
        const json& cs = j.at("colliders");
        if (!cs.is_array()) throw ValidationError("'colliders' must be an array");
        for (std::size_t i = 0; i < cs.size(); ++i) s.colliders.push_back(parse_collider(cs[i], "colliders[" + std::to_string(i) + "]"));
    }
    if (j.contains("collision_weight")) {
        s.collision_weight = get<double>(j, "collision_weight", "", 0.0);
        if (!(*s.collision_weight > 0.0)) throw ValidationError("'collision_weight' must be positive");
    }
    if (j.contains("anisotropy")) {
        const json& a = j.at("anisotropy");
        check_keys(a, {"direction", "kappa"}, "anisotropy");
        AnisotropySpec an;
        an.direction = unit(vec3(a, "direction", "anisotropy", an.direction), "anisotropy.direction");
        an.kappa = require_key<double>(a, "kappa", "anisotropy");
        if (!(an.kappa >= 0.0)) throw ValidationError("'anisotropy.kappa' must be >= 0");
        if (springs) throw ValidationError("'anisotropy' applies to tet meshes only");
        s.anisotropy = an;
    }
    if (j.contains("initial")) {
        const json& in = j.at("initial");
        check_keys(in, {"type", "seed", "magnitude", "relative_magnitude", "velocity"}, "initial");
        const std::string type = get<std::string>(in, "type", "initial", "none");
        if (type == "random") {
            s.initial.random = true;
        } else if (type != "none") {
            throw ValidationError("unknown initial type '" + type + "' (valid: none, random)");
        }
        if (in.contains("seed")) s.initial.seed = get<std::uint64_t>(in, "seed", "initial", 0);
        s.initial.magnitude = get<double>(in, "magnitude", "initial", 0.0);
        s.initial.relative_magnitude = get<double>(in, "relative_magnitude", "initial", 0.0);
        if (s.initial.magnitude < 0.0 || s.initial.relative_magnitude < 0.0)
            throw ValidationError("'initial' magnitudes must be >= 0");
        s.initial.velocity = vec3(in, "velocity", "initial", Vec3::Zero());
    }
    if (j.contains("outputs")) {
        const json& o = j.at("outputs");
        check_keys(o, {"csv", "obj_dir", "record_frames", "timing"}, "outputs");
        auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };
        if (o.contains("csv")) s.outputs.csv = resolve(get<std::string>(o, "csv", "outputs", ""));
        if (o.contains("obj_dir")) s.outputs.obj_dir = resolve(get<std::string>(o, "obj_dir", "outputs", ""));
        if (o.contains("record_frames")) {
            if (o.at("record_frames").is_string()) {
                if (o.at("record_frames").get<std::string>() != "all")
                    throw ValidationError("'outputs.record_frames' must be a list of frame indices or \"all\"");
                s.outputs.record_all = true;
            } else {
                s.outputs.record_frames = get<std::vector<int>>(o, "record_frames", "outputs", {});
            }
        }
        s.outputs.timing = get<bool>(o, "timing", "outputs", true);
    }
    return s;
}

inline Scenario load_scenario(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string(), 0, "cannot open scenario file");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string(), 0, e.what());
    }
    try {
        return parse_scenario(j, path.parent_path());
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

/// Instantiated scenario: assembled system, initial state and per-vertex motion of fixed vertices.
struct Scene {
    SimSystem system;
    SimState initial;
    std::vector<int> motion_of;            // group index per vertex, -1 if free
    std::vector<FixedMotion> motions;
    double bbox_diagonal = 0.0;

    /// Sets state.targets to the prescribed fixed positions at time t.
    void set_targets(SimState& state, double t) const {
        for (Eigen::Index v = 0; v < system.num_vertices(); ++v) {
            const int g = motion_of[static_cast<std::size_t>(v)];
            if (g >= 0) state.targets.row(v) = motions[static_cast<std::size_t>(g)].apply(system.rest.row(v).transpose(), t).transpose();
        }
    }
};

inline double bounding_box_diagonal(const Positions& x) {
    return (x.colwise().maxCoeff() - x.colwise().minCoeff()).norm();
}

inline Scene build_scene(const Scenario& s) {
    Scene scene;
    const MeshSpec& m = s.mesh;
    std::optional<TetMesh> tets;
    std::optional<SpringNetwork> springs;
    if (m.type == "tetgen") {
        tets = load_tet_mesh(m.node, m.ele, m.density);
    } else if (m.type == "box") {
        tets = box_tet_mesh(m.cells[0], m.cells[1], m.cells[2], m.cell_size, m.origin, m.density);
    } else if (m.type == "sphere") {
        tets = sphere_tet_mesh(m.radius, m.resolution, m.origin, m.density);
    } else if (m.type == "obj") {
        springs = load_obj_springs(m.path, m.stiffness);
    } else {
        springs = cloth_grid(m.cells[0], m.cells[1], m.size, m.stiffness, m.height);
    }
    const Positions& rest = tets ? tets->rest : springs->rest;
    const Eigen::Index n = rest.rows();

    SystemOptions opt;
    opt.h = s.h;
    opt.gravity = s.gravity;
    opt.colliders = s.colliders;
    opt.collision_weight = s.collision_weight;
    scene.motion_of.assign(static_cast<std::size_t>(n), -1);
    for (std::size_t g = 0; g < s.fixed.size(); ++g) {
        const FixedGroup& grp = s.fixed[g];
        scene.motions.push_back(grp.motion);
        for (int v : grp.indices) {
            if (v < 0 || v >= n) throw ValidationError("fixed index " + std::to_string(v) + " out of range");
            scene.motion_of[static_cast<std::size_t>(v)] = static_cast<int>(g);
        }
        if (grp.box) {
            int hits = 0;
            for (Eigen::Index v = 0; v < n; ++v) {
                const Vec3 p = rest.row(v).transpose();
                if ((p.array() >= grp.box->first.array()).all() && (p.array() <= grp.box->second.array()).all()) {
                    scene.motion_of[static_cast<std::size_t>(v)] = static_cast<int>(g);
                    ++hits;
                }
            }
            if (hits == 0) throw ValidationError("fixed[" + std::to_string(g) + "].box selects no vertices");
        }
    }
    for (Eigen::Index v = 0; v < n; ++v)
        if (scene.motion_of[static_cast<std::size_t>(v)] >= 0) opt.fixed.push_back(static_cast<int>(v));

    if (tets) {
        if (s.anisotropy)
            for (std::size_t e = 0; e < tets->tets.size(); ++e)
                opt.aniso.push_back({static_cast<int>(e), s.anisotropy->direction, s.anisotropy->kappa});
        TetMaterial mat;
        if (s.material.type == "arap")
            mat = ArapMaterial{s.material.stiffness};
        else
            mat = std::make_shared<const MaterialModel>(make_builtin(s.material.type, s.material.params));
        scene.system = build_system(*tets, mat, opt);
    } else {
        scene.system = build_system(*springs, m.areal_density, opt);
    }
    scene.bbox_diagonal = bounding_box_diagonal(rest);

    SimState st = make_state(scene.system);
    if (s.initial.random) {
        const double mag = s.initial.magnitude + s.initial.relative_magnitude * scene.bbox_diagonal;
        std::mt19937_64 rng(s.initial.seed.value_or(s.seed));
        std::uniform_real_distribution<double> u(-mag, mag);
        for (Eigen::Index v = 0; v < n; ++v) {
            Vec3 dv;
            for (int c = 0; c < 3; ++c) dv(c) = u(rng);
            if (!scene.system.is_fixed[static_cast<std::size_t>(v)]) st.q.row(v) += dv.transpose();
        }
    }
    st.q_prev = st.q;
    for (Eigen::Index v = 0; v < n; ++v)
        if (!scene.system.is_fixed[static_cast<std::size_t>(v)]) st.q_prev.row(v) -= s.h * s.initial.velocity.transpose();
    st.y = st.q;
    scene.initial = std::move(st);
    return scene;
}

} // namespace qnsim
