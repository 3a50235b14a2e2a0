#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Sparse>

#include "divreg/field.hpp"

namespace divreg {

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Binary voxel mask marking the incompressible region.
class MaskRegion {
  public:
    MaskRegion() = default;
    explicit MaskRegion(VoxelGeometry geometry);
    MaskRegion(VoxelGeometry geometry, std::vector<std::uint8_t> occupancy);
    // Voxels with intensity above `threshold` are in the mask.
    static MaskRegion from_image(const Image3D &image, double threshold = 0.5);

    const VoxelGeometry &geometry() const { return geometry_; }
    bool at(int i, int j, int k) const { return occupancy_[geometry_.linear(i, j, k)] != 0; }
    bool operator[](std::size_t idx) const { return occupancy_[idx] != 0; }
    void set(int i, int j, int k, bool value = true) { occupancy_[geometry_.linear(i, j, k)] = value ? 1 : 0; }
    std::span<const std::uint8_t> occupancy() const { return occupancy_; }
    std::size_t count() const;
    bool empty() const { return count() == 0; }
    Image3D to_image() const;

  private:
    VoxelGeometry geometry_{};
    std::vector<std::uint8_t> occupancy_;
};

// Storage indices (on the divergence lattice) of the divergence basis functions whose open
// support box overlaps some masked voxel box with positive volume. Sorted by linear index.
// GeometryError when the mask domain is not inside the grid box.
std::vector<Index3> active_index_set(const ControlGrid &grid, const MaskRegion &mask);

/// Sparse linear equality system A theta = 0 over the parameter vector of a
/// divergence-conforming field; row r is psi at active_indices[r].
struct ConstraintSystem {
    ControlGrid grid;
    std::vector<Index3> active_indices;
    SparseRowMatrix matrix;

    std::size_t rows() const { return static_cast<std::size_t>(matrix.rows()); }
    std::size_t cols() const { return static_cast<std::size_t>(matrix.cols()); }
    bool empty() const { return matrix.rows() == 0; }
    std::vector<double> residual(std::span<const double> theta) const;
    double max_residual(std::span<const double> theta) const;
};

// IndexError for indices outside the divergence lattice.
ConstraintSystem assemble_constraints(const ControlGrid &grid, const std::vector<Index3> &indices);
ConstraintSystem assemble_constraints(const ControlGrid &grid, const MaskRegion &mask);
// System with no rows (unconstrained optimisation).
ConstraintSystem empty_constraints(const ControlGrid &grid, std::size_t parameter_count);

/// Orthogonal projector onto ker A, applied as v - A^T (A A^T)^+ A v with a
/// Jacobi-preconditioned conjugate gradient on A A^T and a few refinement sweeps.
class NullSpaceProjector {
  public:
    explicit NullSpaceProjector(const SparseRowMatrix &a, double tolerance = 1e-12, int max_refinements = 4);

    // SolverError if the constraint residual cannot be driven below `feasibility`.
    std::vector<double> project(std::span<const double> v, double feasibility = 1e-10) const;
    void project_in_place(std::span<double> v, double feasibility = 1e-10) const;
    const SparseRowMatrix &matrix() const { return a_; }
    int last_iterations() const { return last_iterations_; }

  private:
    SparseRowMatrix a_;
    Eigen::SparseMatrix<double> normal_;
    double tolerance_;
    int max_refinements_;
    mutable int last_iterations_ = 0;
};

// Closest feasible point to theta0 in the Euclidean coefficient norm.
std::vector<double> project_divergence_free(std::span<const double> theta0, const ConstraintSystem &system);
DivConformingSVF project_divergence_free(const DivConformingSVF &field, const ConstraintSystem &system);

// Rows evaluating the analytic divergence of `field`'s basis at the given points.
SparseRowMatrix pointwise_divergence_matrix(const SplineSVF &field, const std::vector<Vec3> &points);
// Knot positions u_j for j = 0..n on every axis.
std::vector<Vec3> grid_knots(const ControlGrid &grid);
// Closest classical field whose divergence vanishes at every knot of its grid.
ClassicalSVF project_classical_at_knots(const ClassicalSVF &field);

/// Divergence bound diagnostics for a conforming field over a mask: the largest |psi| over
/// the active set bounds |div v| on the mask, and the sampled maximum shows how tight it is.
struct DivergenceReport {
    double max_abs_psi = 0.0;
    double max_abs_divergence = 0.0; // over the sampled points
    std::size_t samples = 0;
    std::size_t active_indices = 0;
    bool bound_holds() const { return max_abs_divergence <= max_abs_psi * (1.0 + 1e-9) + 1e-15; }
};
// Points are drawn uniformly inside the masked voxel boxes.
double sample_max_divergence(const SplineSVF &field, const MaskRegion &mask, std::size_t samples,
                             std::uint64_t seed = 0);
DivergenceReport divergence_check(const SplineSVF &field, const MaskRegion &mask, std::size_t samples,
                                  std::uint64_t seed = 0);

// "row col value" per nonzero, 17 significant digits.
void write_triplets(const ConstraintSystem &system, std::ostream &out);
// "row i j k" with knot multi-indices, one line per row.
void write_index_manifest(const ConstraintSystem &system, std::ostream &out);

} // namespace divreg
