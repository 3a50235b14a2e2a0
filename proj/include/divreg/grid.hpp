#pragma once

#include <array>
#include <cstddef>

#include "divreg/bspline.hpp"
#include "divreg/image.hpp"

namespace divreg {

// Shape of one coefficient array, x-fastest.
struct Lattice {
    Index3 size{0, 0, 0};

    std::size_t count() const {
        return static_cast<std::size_t>(size[0]) * static_cast<std::size_t>(size[1]) * static_cast<std::size_t>(size[2]);
    }
    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(k) * static_cast<std::size_t>(size[1]) + static_cast<std::size_t>(j)) *
                   static_cast<std::size_t>(size[0]) +
               static_cast<std::size_t>(i);
    }
    Index3 unravel(std::size_t idx) const {
        const auto nx = static_cast<std::size_t>(size[0]);
        const auto ny = static_cast<std::size_t>(size[1]);
        return {static_cast<int>(idx % nx), static_cast<int>((idx / nx) % ny), static_cast<int>(idx / (nx * ny))};
    }
    bool contains(int i, int j, int k) const {
        return i >= 0 && j >= 0 && k >= 0 && i < size[0] && j < size[1] && k < size[2];
    }
    friend bool operator==(const Lattice &, const Lattice &) = default;
};

/// Regular knot lattice over the box [lower(), upper()] shared by all velocity components.
///
/// The divergence order k is the order of the scalar spline the divergence of a
/// divergence-conforming field lives in; the components use order k + 1 along their own
/// axis and k across. Component orders are capped at 3, so k = 2 is the only admissible
/// value for the divergence lemma (k >= 2).
class ControlGrid {
  public:
    explicit ControlGrid(std::array<KnotAxis, 3> axes, int divergence_order = 2);

    // Each axis gets the smallest number of cells (a multiple of cell_multiple, and more than
    // k + 1) whose span covers the box; any excess span is centered on the box.
    static ControlGrid covering(const Vec3 &lower, const Vec3 &upper, double spacing, int divergence_order = 2,
                                int cell_multiple = 1);
    static ControlGrid covering(const VoxelGeometry &geometry, double spacing, int divergence_order = 2,
                                int cell_multiple = 1);

    const KnotAxis &axis(int d) const { return axes_[static_cast<std::size_t>(d)]; }
    const std::array<KnotAxis, 3> &axes() const { return axes_; }
    SplineOrder divergence_order() const { return SplineOrder(k_); }
    Index3 cells() const { return {axes_[0].cells(), axes_[1].cells(), axes_[2].cells()}; }
    Vec3 spacing() const { return {axes_[0].spacing(), axes_[1].spacing(), axes_[2].spacing()}; }
    Vec3 lower() const { return {axes_[0].begin(), axes_[1].begin(), axes_[2].begin()}; }
    Vec3 upper() const { return {axes_[0].end(), axes_[1].end(), axes_[2].end()}; }
    bool contains(const Vec3 &p) const;

    // Lattice of basis functions with the given per-axis orders.
    Lattice lattice(const Index3 &orders) const;

    // Same box with half the spacing and twice the cells.
    ControlGrid refined() const;
    // Same box with twice the spacing; requires even cell counts.
    ControlGrid coarsened() const;

    friend bool operator==(const ControlGrid &, const ControlGrid &) = default;

  private:
    std::array<KnotAxis, 3> axes_;
    int k_;
};

} // namespace divreg
