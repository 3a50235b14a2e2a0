#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "divreg/constraint.hpp"
#include "divreg/objective.hpp"

namespace divreg {

struct SolverConfig {
    int max_iterations = 100;         // per pyramid level
    double gradient_tolerance = 1e-6; // on the infinity norm of the projected gradient
    double function_tolerance = 1e-9; // relative decrease between accepted iterates
    double sufficient_decrease = 1e-4;
    double backtracking_factor = 0.5;
    int max_backtracks = 30;
    int history = 7;
    double initial_step = 1.0;   // largest coefficient change of the first trial step
    double feasibility = 1e-10;  // bound on |A theta|_inf for every iterate
    int pyramid_levels = 3;

    void validate() const;
};

enum class StopReason { gradient_tolerance, function_tolerance, max_iterations, line_search_failure };
std::string to_string(StopReason r);

struct IterationRecord {
    int iteration = 0;
    double objective = 0.0;
    double projected_gradient_norm = 0.0; // infinity norm
    double constraint_residual = 0.0;     // infinity norm of A theta
    double step = 0.0;                    // accepted step length
    int evaluations = 0;                  // cumulative objective evaluations
};

struct SolverReport {
    StopReason reason = StopReason::max_iterations;
    std::vector<IterationRecord> trace; // entry 0 is the starting point
    double final_objective = 0.0;
    double final_residual = 0.0;
    double max_residual = 0.0; // over every evaluated iterate
    int evaluations = 0;
    bool line_search_warning = false;

    bool converged() const { return reason == StopReason::gradient_tolerance || reason == StopReason::function_tolerance; }
};

// f(theta, grad): returns the value and writes the gradient when grad is non-empty.
using ObjectiveFunction = std::function<double(std::span<const double>, std::span<double>)>;

struct SolveResult {
    std::vector<double> theta;
    SolverReport report;
};

/// Limited-memory BFGS restricted to ker A: gradients and search directions are projected
/// orthogonally onto the null space, so every iterate stays feasible.
/// SolverError when theta0 violates the constraints by more than cfg.feasibility.
SolveResult solve_constrained(const ObjectiveFunction &f, const SparseRowMatrix &a, std::vector<double> theta0,
                              const SolverConfig &cfg);
SolveResult solve_constrained(const ObjectiveFunction &f, const ConstraintSystem &system, std::vector<double> theta0,
                              const SolverConfig &cfg);

struct PyramidSetup {
    double grid_spacing = 5.0; // finest knot spacing in mm
    bool constrained = true;   // divergence-free on the mask; otherwise no constraints
    bool classical = false;    // cubic classical field (always unconstrained)
    EulerConfig euler{};
    // Iteration limit per level, coarsest first; empty uses SolverConfig::max_iterations
    // everywhere. Otherwise one positive entry per pyramid level.
    std::vector<int> level_iterations;
};

struct LevelReport {
    int level = 0; // 0 is the finest
    int factor = 1;
    Index3 image_dims{};
    Index3 grid_cells{};
    std::size_t constraints = 0;
    SolverReport solver;
    double seconds = 0.0;
};

struct RegistrationReport {
    std::vector<LevelReport> levels; // coarse to fine
    double final_residual = 0.0;
    StopReason reason = StopReason::max_iterations;
    bool degenerate_similarity = false;
    double seconds = 0.0;
};

struct RegistrationResult {
    SplineSVF field;
    RegistrationReport report;
};

/// Coarse-to-fine registration of `moving` onto `fixed`. Each level smooths and downsamples
/// the images, coarsens the knot grid by the same factor, prolongs the previous level's
/// field by exact refinement and reassembles the constraints from the full-resolution mask.
/// ConfigError when a constrained run gets no mask or an empty one.
RegistrationResult register_pyramid(const Image3D &moving, const Image3D &fixed, const MaskRegion *mask,
                                    const ObjectiveConfig &obj, const SolverConfig &solver, const PyramidSetup &setup);

// JSON documents (iteration, objective, projected-gradient norm, constraint residual, ...).
std::string solver_report_json(const SolverReport &report, int indent = 2);
std::string registration_report_json(const RegistrationReport &report, int indent = 2);

// The finest control grid register_pyramid uses for these images.
ControlGrid pyramid_grid(const VoxelGeometry &fixed, double spacing, int levels);

} // namespace divreg
