#include "divreg/grid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace divreg {

ControlGrid::ControlGrid(std::array<KnotAxis, 3> axes, int divergence_order) : axes_(axes), k_(divergence_order) {
    if (divergence_order < 2 || divergence_order + 1 > 3) {
        throw ConfigError("divergence order must satisfy 2 <= k and k + 1 <= 3 (got " + std::to_string(divergence_order) +
                          ")");
    }
    for (const auto &ax : axes_) {
        if (ax.cells() <= k_ + 1) {
            throw ConfigError("control grid needs more than k + 1 = " + std::to_string(k_ + 1) + " cells per axis, got " +
                              std::to_string(ax.cells()));
        }
    }
}

ControlGrid ControlGrid::covering(const Vec3 &lower, const Vec3 &upper, double spacing, int divergence_order,
                                  int cell_multiple) {
    if (!(spacing > 0.0)) throw ConfigError("grid spacing must be positive");
    if (cell_multiple < 1) throw ConfigError("cell multiple must be >= 1");
    std::array<KnotAxis, 3> axes{KnotAxis(1.0, 1), KnotAxis(1.0, 1), KnotAxis(1.0, 1)};
    for (int d = 0; d < 3; ++d) {
        const double extent = upper[d] - lower[d];
        if (!(extent > 0.0)) throw GeometryError("grid box must have positive extent");
        // Tolerate round-off so an exact multiple of the spacing does not gain a cell.
        int cells = static_cast<int>(std::ceil(extent / spacing - 1e-9));
        cells = std::max(cells, (divergence_order + 2) * cell_multiple);
        cells = (cells + cell_multiple - 1) / cell_multiple * cell_multiple;
        // Any overhang beyond the box is split evenly between both ends.
        const double overhang = cells * spacing - extent;
        const double origin = overhang > 1e-9 * spacing ? lower[d] - 0.5 * overhang : lower[d];
        axes[static_cast<std::size_t>(d)] = KnotAxis(spacing, cells, origin);
    }
    return ControlGrid(axes, divergence_order);
}

ControlGrid ControlGrid::covering(const VoxelGeometry &geometry, double spacing, int divergence_order,
                                  int cell_multiple) {
    geometry.validate();
    return covering(geometry.lower(), geometry.upper(), spacing, divergence_order, cell_multiple);
}

bool ControlGrid::contains(const Vec3 &p) const {
    for (int d = 0; d < 3; ++d) {
        if (!(p[d] >= axes_[d].begin() && p[d] <= axes_[d].end())) return false;
    }
    return true;
}

Lattice ControlGrid::lattice(const Index3 &orders) const {
    Lattice l;
    for (int d = 0; d < 3; ++d) l.size[d] = axes_[d].basis_count(SplineOrder(orders[d]));
    return l;
}

ControlGrid ControlGrid::refined() const {
    std::array<KnotAxis, 3> axes = axes_;
    for (auto &ax : axes) ax = KnotAxis(0.5 * ax.spacing(), 2 * ax.cells(), ax.origin());
    return ControlGrid(axes, k_);
}

ControlGrid ControlGrid::coarsened() const {
    std::array<KnotAxis, 3> axes = axes_;
    for (auto &ax : axes) {
        if (ax.cells() % 2 != 0) throw ConfigError("cannot coarsen a grid with an odd cell count");
        ax = KnotAxis(2.0 * ax.spacing(), ax.cells() / 2, ax.origin());
    }
    return ControlGrid(axes, k_);
}

} // namespace divreg
