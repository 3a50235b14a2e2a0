#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "divreg/field.hpp"

namespace divreg {

class MaskRegion;

// Only forward Euler is implemented; scaling-and-squaring is reserved.
enum class Integrator { euler, scaling_and_squaring };

struct EulerConfig {
    int steps = 64; // a power of two
    Integrator integrator = Integrator::euler;
    int threads = 0; // 0: DIVREG_THREADS or hardware concurrency

    // ConfigError for a non-power-of-two step count, UnsupportedOperation for a reserved integrator.
    void validate() const;
    double tau() const { return 1.0 / steps; }
    static EulerConfig with_log2_steps(int k, int threads = 0);
};

/// Displacements (mm) at the voxel centers of a geometry, with a flag per voxel marking
/// trajectories that left the control grid box at some Euler step.
struct DeformationField {
    VoxelGeometry geometry;
    std::vector<Vec3> displacement;
    std::vector<std::uint8_t> out_of_domain;

    explicit DeformationField(const VoxelGeometry &g = {})
        : geometry(g), displacement(g.voxel_count(), Vec3::Zero()), out_of_domain(g.voxel_count(), 0) {}
    std::size_t flagged_count() const;
    bool is_identity() const;
};

struct TrajectoryEnd {
    Vec3 point;
    bool left_domain = false;
    double determinant = 1.0;          // product of per-step determinants
    double min_step_determinant = 1.0; // smallest det(I + tau J) along the way
};

// Forward Euler trajectory from p; the determinant product is tracked when asked.
TrajectoryEnd integrate_trajectory(const FieldEvaluator &ev, const Vec3 &p, int steps, bool with_determinant);

DeformationField exponential_euler(const SplineSVF &field, const EulerConfig &cfg, const VoxelGeometry &out);

struct DeterminantMap {
    Image3D determinant;                 // NaN where the trajectory left the domain
    std::vector<std::uint8_t> out_of_domain;
    double min_step_determinant = 1.0;   // over unflagged trajectories
};

// Chain product of det(I + tau J_v) along every voxel-center trajectory.
DeterminantMap jacobian_determinant_map(const SplineSVF &field, const EulerConfig &cfg, const VoxelGeometry &out);

// det(I + grad u) with central differences in mm (one-sided on the border). NaN at flagged voxels.
Image3D finite_difference_determinant(const DeformationField &def);

struct DeterminantStats {
    double mae = 0.0;         // mean |det - 1|
    double max_abs_dev = 0.0; // max |det - 1|
    double min = 0.0;
    double max = 0.0;
    std::size_t count = 0;    // finite values used
    std::size_t excluded = 0; // NaN (flagged) values skipped
};
// Statistics over finite determinants, optionally only inside a mask.
DeterminantStats determinant_stats(const Image3D &det, const MaskRegion *mask = nullptr);
Image3D log_determinant(const Image3D &det);

// Samples img at x + u(x) for every voxel center x. The deformation must share img's frame.
Image3D warp_image(const Image3D &img, const DeformationField &def, Interpolation interp,
                   std::optional<double> padding = std::nullopt, Boundary boundary = Boundary::pad);

struct PointTransport {
    std::vector<Vec3> points;
    std::vector<std::uint8_t> out_of_domain;
};
PointTransport warp_points(const std::vector<Vec3> &points, const SplineSVF &field, const EulerConfig &cfg);

// Largest |exp(v)(exp(-v)(x)) - x| over voxel centers whose trajectories stay in the grid box.
double inverse_consistency_residual(const SplineSVF &field, const EulerConfig &cfg, const VoxelGeometry &g);

} // namespace divreg
