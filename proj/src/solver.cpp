#include "divreg/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>

#include "divreg/error.hpp"
#include "json.hpp"

namespace divreg {

namespace {

double inf_norm(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double residual(const SparseRowMatrix &a, std::span<const double> theta) {
    if (a.rows() == 0) return 0.0;
    const Eigen::Map<const Eigen::VectorXd> t(theta.data(), static_cast<Eigen::Index>(theta.size()));
    return (a * t).cwiseAbs().maxCoeff();
}

struct Pair {
    std::vector<double> s, y;
    double rho;
};

} // namespace

void SolverConfig::validate() const {
    if (max_iterations < 0) throw ConfigError("max_iterations must be non-negative");
    if (!(gradient_tolerance > 0.0) || !(function_tolerance >= 0.0)) throw ConfigError("solver tolerances must be positive");
    if (!(sufficient_decrease > 0.0 && sufficient_decrease < 1.0)) throw ConfigError("sufficient-decrease constant must lie in (0, 1)");
    if (!(backtracking_factor > 0.0 && backtracking_factor < 1.0)) throw ConfigError("backtracking factor must lie in (0, 1)");
    if (max_backtracks < 1 || history < 1) throw ConfigError("max_backtracks and history must be positive");
    if (!(initial_step > 0.0) || !(feasibility > 0.0)) throw ConfigError("initial step and feasibility must be positive");
    if (pyramid_levels < 1) throw ConfigError("pyramid_levels must be at least 1");
}

std::string to_string(StopReason r) {
    switch (r) {
    case StopReason::gradient_tolerance: return "gradient_tolerance";
    case StopReason::function_tolerance: return "function_tolerance";
    case StopReason::max_iterations: return "max_iterations";
    default: return "line_search_failure";
    }
}

SolveResult solve_constrained(const ObjectiveFunction &f, const SparseRowMatrix &a, std::vector<double> theta,
                              const SolverConfig &cfg) {
    cfg.validate();
    const std::size_t n = theta.size();
    if (static_cast<std::size_t>(a.cols()) != n) throw ShapeError("constraint matrix and parameter vector sizes differ");
    const NullSpaceProjector proj(a);
    SolveResult out;
    SolverReport &rep = out.report;

    const double r0 = residual(a, theta);
    if (r0 > cfg.feasibility) throw SolverError("infeasible start: constraint residual " + std::to_string(r0));

    // Tangent vectors (gradients, directions) are projected to a tolerance relative to their size.
    auto tangent = [&](std::vector<double> &v) {
        proj.project_in_place(v, std::max(cfg.feasibility, 1e-12 * inf_norm(v)));
    };

    std::vector<double> grad(n), pg(n);
    auto evaluate = [&](const std::vector<double> &t, std::vector<double> &g) {
        ++rep.evaluations;
        rep.max_residual = std::max(rep.max_residual, residual(a, t));
        return f(t, g);
    };
    double value = evaluate(theta, grad);
    pg = grad;
    tangent(pg);
    rep.trace.push_back({0, value, inf_norm(pg), residual(a, theta), 0.0, rep.evaluations});

    std::deque<Pair> memory;
    std::vector<double> dir(n), trial(n), trial_grad(n), trial_pg(n), q(n);
    bool done = false;
    int iter = 0;
    while (!done) {
        if (inf_norm(pg) <= cfg.gradient_tolerance) {
            rep.reason = StopReason::gradient_tolerance;
            break;
        }
        if (iter >= cfg.max_iterations) {
            rep.reason = StopReason::max_iterations;
            break;
        }
        ++iter;

        // Two-loop recursion on projected quantities.
        q = pg;
        std::vector<double> alpha(memory.size());
        for (std::size_t m = memory.size(); m-- > 0;) {
            alpha[m] = memory[m].rho * dot(memory[m].s, q);
            for (std::size_t i = 0; i < n; ++i) q[i] -= alpha[m] * memory[m].y[i];
        }
        double gamma;
        if (memory.empty()) {
            gamma = cfg.initial_step / inf_norm(pg);
        } else {
            const auto &last = memory.back();
            gamma = dot(last.s, last.y) / dot(last.y, last.y);
        }
        for (double &x : q) x *= gamma;
        for (std::size_t m = 0; m < memory.size(); ++m) {
            const double beta = memory[m].rho * dot(memory[m].y, q);
            for (std::size_t i = 0; i < n; ++i) q[i] += (alpha[m] - beta) * memory[m].s[i];
        }
        for (std::size_t i = 0; i < n; ++i) dir[i] = -q[i];
        tangent(dir);
        double slope = dot(pg, dir);
        if (!(slope < 0.0)) {
            memory.clear();
            for (std::size_t i = 0; i < n; ++i) dir[i] = -pg[i] * cfg.initial_step / inf_norm(pg);
            slope = dot(pg, dir);
        }

        double step = 1.0;
        bool accepted = false;
        double trial_value = 0.0;
        for (int b = 0; b < cfg.max_backtracks; ++b, step *= cfg.backtracking_factor) {
            for (std::size_t i = 0; i < n; ++i) trial[i] = theta[i] + step * dir[i];
            if (residual(a, trial) > 1e-2 * cfg.feasibility) proj.project_in_place(trial, cfg.feasibility);
            trial_value = evaluate(trial, trial_grad);
            if (std::isfinite(trial_value) && trial_value <= value + cfg.sufficient_decrease * step * slope) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            if (!memory.empty()) {
                // Retry from steepest descent before giving up.
                memory.clear();
                --iter;
                continue;
            }
            rep.reason = StopReason::line_search_failure;
            rep.line_search_warning = true;
            break;
        }

        trial_pg = trial_grad;
        tangent(trial_pg);
        Pair p{std::vector<double>(n), std::vector<double>(n), 0.0};
        for (std::size_t i = 0; i < n; ++i) {
            p.s[i] = trial[i] - theta[i];
            p.y[i] = trial_pg[i] - pg[i];
        }
        const double sy = dot(p.s, p.y);
        if (sy > 1e-12 * std::sqrt(dot(p.s, p.s) * dot(p.y, p.y))) {
            p.rho = 1.0 / sy;
            memory.push_back(std::move(p));
            if (static_cast<int>(memory.size()) > cfg.history) memory.pop_front();
        }

        const double previous = value;
        theta.swap(trial);
        grad.swap(trial_grad);
        pg.swap(trial_pg);
        value = trial_value;
        rep.trace.push_back({iter, value, inf_norm(pg), residual(a, theta), step, rep.evaluations});
        if (previous - value < cfg.function_tolerance * std::max(1.0, std::abs(value))) {
            rep.reason = inf_norm(pg) <= cfg.gradient_tolerance ? StopReason::gradient_tolerance : StopReason::function_tolerance;
            done = true;
        }
    }
    rep.final_objective = value;
    rep.final_residual = residual(a, theta);
    out.theta = std::move(theta);
    return out;
}

SolveResult solve_constrained(const ObjectiveFunction &f, const ConstraintSystem &system, std::vector<double> theta0,
                              const SolverConfig &cfg) {
    return solve_constrained(f, system.matrix, std::move(theta0), cfg);
}

namespace {

nlohmann::json to_json(const SolverReport &r) {
    nlohmann::json trace = nlohmann::json::array();
    for (const auto &it : r.trace) {
        trace.push_back({{"iteration", it.iteration},
                         {"objective", it.objective},
                         {"projected_gradient_norm", it.projected_gradient_norm},
                         {"constraint_residual", it.constraint_residual},
                         {"step", it.step},
                         {"evaluations", it.evaluations}});
    }
    return {{"reason", to_string(r.reason)},
            {"converged", r.converged()},
            {"line_search_warning", r.line_search_warning},
            {"final_objective", r.final_objective},
            {"final_residual", r.final_residual},
            {"max_residual", r.max_residual},
            {"evaluations", r.evaluations},
            {"trace", std::move(trace)}};
}

} // namespace

std::string solver_report_json(const SolverReport &report, int indent) { return to_json(report).dump(indent); }

std::string registration_report_json(const RegistrationReport &report, int indent) {
    nlohmann::json levels = nlohmann::json::array();
    for (const auto &l : report.levels) {
        levels.push_back({{"level", l.level},
                          {"factor", l.factor},
                          {"image_dims", l.image_dims},
                          {"grid_cells", l.grid_cells},
                          {"constraints", l.constraints},
                          {"seconds", l.seconds},
                          {"solver", to_json(l.solver)}});
    }
    const nlohmann::json j = {{"reason", to_string(report.reason)},
                              {"final_residual", report.final_residual},
                              {"degenerate_similarity", report.degenerate_similarity},
                              {"seconds", report.seconds},
                              {"levels", std::move(levels)}};
    return j.dump(indent);
}

ControlGrid pyramid_grid(const VoxelGeometry &fixed, double spacing, int levels) {
    if (!(spacing > 0.0)) throw ConfigError("grid spacing must be positive");
    if (levels < 1 || levels > 8) throw ConfigError("pyramid levels must lie in [1, 8]");
    return ControlGrid::covering(fixed, spacing, 2, 1 << (levels - 1));
}

RegistrationResult register_pyramid(const Image3D &moving, const Image3D &fixed, const MaskRegion *mask,
                                    const ObjectiveConfig &obj, const SolverConfig &solver, const PyramidSetup &setup) {
    const auto t0 = std::chrono::steady_clock::now();
    obj.validate();
    solver.validate();
    setup.euler.validate();
    if (!same_frame(moving.geometry(), fixed.geometry())) throw GeometryError("moving and fixed images differ in geometry");
    const bool constrained = setup.constrained && !setup.classical;
    if (constrained) {
        if (!mask) throw ConfigError("a constrained registration needs a mask");
        if (mask->empty()) throw ConfigError("the incompressibility mask is empty");
        if (!same_frame(mask->geometry(), fixed.geometry())) throw GeometryError("mask and images differ in geometry");
    }

    const int levels = solver.pyramid_levels;
    if (!setup.level_iterations.empty()) {
        if (setup.level_iterations.size() != static_cast<std::size_t>(levels))
            throw ConfigError("level_iterations needs one entry per pyramid level (" + std::to_string(levels) + ")");
        for (int n : setup.level_iterations)
            if (n < 1) throw ConfigError("level_iterations entries must be positive");
    }
    const ControlGrid finest = pyramid_grid(fixed.geometry(), setup.grid_spacing, levels);
    std::vector<ControlGrid> grids{finest};
    for (int l = 1; l < levels; ++l) grids.push_back(grids.back().coarsened());

    RegistrationReport report;
    std::optional<SplineSVF> field;
    for (int l = levels - 1; l >= 0; --l) {
        const auto tl = std::chrono::steady_clock::now();
        const int factor = 1 << l;
        const Image3D mov = factor > 1 ? downsample(moving, factor) : moving;
        const Image3D fix = factor > 1 ? downsample(fixed, factor) : fixed;
        const ControlGrid &grid = grids[static_cast<std::size_t>(l)];

        SplineSVF layout = setup.classical ? SplineSVF(ClassicalSVF(grid)) : SplineSVF(DivConformingSVF(grid));
        if (field) layout = refine(*field);
        const ConstraintSystem sys = constrained ? assemble_constraints(grid, *mask)
                                                 : empty_constraints(grid, layout.parameter_count());
        std::vector<double> theta(layout.parameters().begin(), layout.parameters().end());
        if (!sys.empty()) NullSpaceProjector(sys.matrix).project_in_place(theta, solver.feasibility);

        ObjectiveConfig level_obj = obj;
        RegistrationObjective objective(mov, fix, layout, level_obj, setup.euler);
        bool degenerate = false;
        auto fn = [&](std::span<const double> t, std::span<double> g) {
            const double v = objective.evaluate(t, g);
            degenerate = degenerate || objective.last_terms().degenerate;
            return v;
        };
        SolverConfig level_solver = solver;
        if (!setup.level_iterations.empty())
            level_solver.max_iterations = setup.level_iterations[static_cast<std::size_t>(levels - 1 - l)];
        SolveResult res = solve_constrained(fn, sys, std::move(theta), level_solver);
        layout.set_parameters(res.theta);
        field = std::move(layout);

        LevelReport lr;
        lr.level = l;
        lr.factor = factor;
        lr.image_dims = fix.geometry().dims;
        lr.grid_cells = grid.cells();
        lr.constraints = sys.rows();
        lr.solver = std::move(res.report);
        lr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - tl).count();
        report.degenerate_similarity = report.degenerate_similarity || degenerate;
        report.levels.push_back(std::move(lr));
    }
    report.final_residual = report.levels.back().solver.final_residual;
    report.reason = report.levels.back().solver.reason;
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(*field), std::move(report)};
}

} // namespace divreg
