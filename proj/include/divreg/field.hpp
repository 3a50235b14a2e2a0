#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "divreg/grid.hpp"

namespace divreg {

// One scalar tensor-product spline inside the parameter vector.
struct ComponentBasis {
    Index3 orders{};
    Lattice lattice{};
    std::size_t offset = 0; // index of the first coefficient in the parameter vector
};

/// Stationary velocity field written as three tensor-product B-spline components over a
/// ControlGrid. Coefficients are velocities in mm per unit time.
///
/// The parameter vector is the concatenation [phi_X | phi_Y | phi_Z], each array stored
/// x-fastest over its own lattice of storage indices (knot index + order along each axis).
///
/// A classical field uses the same order on every axis for every component. A
/// divergence-conforming field uses order k + 1 along the component's own axis and order
/// k across it, so that its divergence is an order-k scalar spline.
class SplineSVF {
  public:
    enum class Kind { classical, divergence_conforming };

    // `classical_order` is ignored for divergence-conforming fields.
    SplineSVF(Kind kind, ControlGrid grid, int classical_order = 3);

    Kind kind() const { return kind_; }
    bool is_divergence_conforming() const { return kind_ == Kind::divergence_conforming; }
    const ControlGrid &grid() const { return grid_; }
    const ComponentBasis &component(int c) const { return components_[static_cast<std::size_t>(c)]; }
    // Order of the classical basis, or of the divergence spline for conforming fields.
    int order() const { return order_; }

    std::size_t parameter_count() const { return theta_.size(); }
    std::span<const double> parameters() const { return theta_; }
    std::span<double> parameters() { return theta_; }
    // ShapeError when the length differs from parameter_count().
    void set_parameters(std::span<const double> theta);

    double coefficient(int c, int i, int j, int k) const {
        const auto &b = components_[static_cast<std::size_t>(c)];
        return theta_[b.offset + b.lattice.index(i, j, k)];
    }
    double &coefficient(int c, int i, int j, int k) {
        const auto &b = components_[static_cast<std::size_t>(c)];
        return theta_[b.offset + b.lattice.index(i, j, k)];
    }

    // Lattice of the divergence coefficients psi (order k on every axis). Conforming only.
    Lattice divergence_lattice() const;

  private:
    Kind kind_;
    ControlGrid grid_;
    int order_;
    std::array<ComponentBasis, 3> components_;
    std::vector<double> theta_;
};

class DivConformingSVF : public SplineSVF {
  public:
    explicit DivConformingSVF(ControlGrid grid) : SplineSVF(Kind::divergence_conforming, std::move(grid)) {}
    DivConformingSVF(ControlGrid grid, std::span<const double> theta);
    // Throws UnsupportedOperation if `field` is not divergence-conforming.
    explicit DivConformingSVF(const SplineSVF &field);
};

class ClassicalSVF : public SplineSVF {
  public:
    explicit ClassicalSVF(ControlGrid grid, int order = 3) : SplineSVF(Kind::classical, std::move(grid), order) {}
    ClassicalSVF(ControlGrid grid, std::span<const double> theta, int order = 3);
    explicit ClassicalSVF(const SplineSVF &field);
};

// Velocity at p. DomainError when p lies outside the grid box.
Vec3 eval_velocity(const SplineSVF &field, const Vec3 &p);

// Divergence through the order-k divergence spline with coefficients psi.
// UnsupportedOperation for classical fields, DomainError outside the grid box.
double eval_divergence(const SplineSVF &field, const Vec3 &p);

// J(r, c) = d v_r / d x_c, from the derivative recurrence along each axis.
Mat3 eval_jacobian(const SplineSVF &field, const Vec3 &p);

// psi_i = (phiX_i - phiX_{i-e_x}) / dx + (phiY_i - phiY_{i-e_y}) / dy + (phiZ_i - phiZ_{i-e_z}) / dz
// for every storage index i of the divergence lattice. Conforming fields only.
std::vector<double> divergence_coefficients(const SplineSVF &field);
double divergence_coefficient(const SplineSVF &field, int i, int j, int k);

std::vector<double> coefficient_vector(const SplineSVF &field);
// Field of the same kind and grid as `like` carrying `theta`; ShapeError on length mismatch.
SplineSVF from_coefficient_vector(const SplineSVF &like, std::span<const double> theta);

SplineSVF scaled(const SplineSVF &field, double factor);

// Exact dyadic subdivision onto grid().refined(); the represented field is unchanged on the box.
SplineSVF refine(const SplineSVF &field);

/// Basis windows of every (axis, order) pair a field uses, evaluated at one point.
struct PointStencil {
    std::array<std::array<BasisWindow, 4>, 3> window{}; // [axis][order]
};

/// Unchecked evaluation kernel shared by the flow, the metrics and the constraint code.
///
/// Points outside the grid box are allowed: the components continue as the natural
/// spline over the valid basis functions and vanish beyond their supports. The evaluator
/// reads the field's coefficients at call time and must not outlive it.
class FieldEvaluator {
  public:
    explicit FieldEvaluator(const SplineSVF &field);

    // derivatives: 0 values, 1 first derivatives, 2 second derivatives.
    void prepare(const Vec3 &p, int derivatives, PointStencil &stencil) const;

    Vec3 velocity(const PointStencil &s) const;
    void velocity_jacobian(const PointStencil &s, Vec3 &v, Mat3 &jacobian) const;
    // Hessian of each component (needs derivatives = 2).
    std::array<Mat3, 3> hessians(const PointStencil &s) const;

    // grad[theta index] += sum_c weight[c] * (basis of component c at the stencil point).
    void scatter(const PointStencil &s, const Vec3 &weight, std::span<double> grad) const;
    // grad += sum_c sum_ab weight[c](a, b) * d^2 basis_c / dx_a dx_b (needs derivatives = 2).
    void scatter_hessian(const PointStencil &s, const std::array<Mat3, 3> &weight, std::span<double> grad) const;

    const SplineSVF &field() const { return *field_; }

  private:
    const SplineSVF *field_;
    std::array<std::array<bool, 4>, 3> used_{};
};

} // namespace divreg
