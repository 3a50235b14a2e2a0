#pragma once

#include <random>
#include <vector>

#include "divreg/field.hpp"

namespace divreg::testing {

inline ControlGrid unit_grid(int cells, double spacing = 1.0, double origin = 0.0) {
    return ControlGrid({KnotAxis(spacing, cells, origin), KnotAxis(spacing, cells, origin), KnotAxis(spacing, cells, origin)});
}

inline void randomize(SplineSVF &field, std::uint64_t seed, double amplitude = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, amplitude);
    for (double &x : field.parameters()) x = n(rng);
}

inline Vec3 random_point(const ControlGrid &grid, std::mt19937_64 &rng) {
    Vec3 p;
    for (int d = 0; d < 3; ++d) {
        std::uniform_real_distribution<double> u(grid.axis(d).begin(), grid.axis(d).end());
        p[d] = u(rng);
    }
    return p;
}

// Exhaustive evaluation over every basis function of every component, one knot basis
// call per factor. Independent of the windowed evaluator.
inline Vec3 brute_force_velocity(const SplineSVF &field, const Vec3 &p) {
    Vec3 v = Vec3::Zero();
    const auto &grid = field.grid();
    for (int c = 0; c < 3; ++c) {
        const auto &b = field.component(c);
        const SplineOrder ox(b.orders[0]), oy(b.orders[1]), oz(b.orders[2]);
        for (int k = 0; k < b.lattice.size[2]; ++k)
            for (int j = 0; j < b.lattice.size[1]; ++j)
                for (int i = 0; i < b.lattice.size[0]; ++i) {
                    const double w = eval_knot_basis(grid.axis(0), grid.axis(0).knot_index(i, ox), ox, p[0]) *
                                     eval_knot_basis(grid.axis(1), grid.axis(1).knot_index(j, oy), oy, p[1]) *
                                     eval_knot_basis(grid.axis(2), grid.axis(2).knot_index(k, oz), oz, p[2]);
                    v[c] += w * field.coefficient(c, i, j, k);
                }
    }
    return v;
}

// Divergence-conforming field with every psi exactly zero (up to rounding): phi_Y and
// phi_Z random, phi_X integrated along x from a random first slab.
inline SplineSVF divergence_free_field(const ControlGrid &grid, std::uint64_t seed, double amplitude = 1.0) {
    SplineSVF f(SplineSVF::Kind::divergence_conforming, grid);
    randomize(f, seed, amplitude);
    const Lattice psi = f.divergence_lattice();
    const Vec3 h = grid.spacing();
    for (int k = 0; k < psi.size[2]; ++k)
        for (int j = 0; j < psi.size[1]; ++j)
            for (int i = 0; i < psi.size[0]; ++i) {
                const double rest = (f.coefficient(1, i, j + 1, k) - f.coefficient(1, i, j, k)) / h[1] +
                                    (f.coefficient(2, i, j, k + 1) - f.coefficient(2, i, j, k)) / h[2];
                f.coefficient(0, i + 1, j, k) = f.coefficient(0, i, j, k) - h[0] * rest;
            }
    return f;
}

} // namespace divreg::testing

namespace divreg::testing {

inline VoxelGeometry cube_geometry(int n, double h = 1.0, double origin = 0.0) {
    VoxelGeometry g;
    g.dims = {n, n, n};
    g.spacing = Vec3::Constant(h);
    g.origin = Vec3::Constant(origin);
    return g;
}

// Gaussian-smoothed white noise, rescaled to [lo, hi].
inline Image3D smooth_random_image(const VoxelGeometry &g, std::uint64_t seed, double sigma_mm = 1.5, double lo = 0.0,
                                   double hi = 100.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    Image3D noise(g);
    for (double &x : noise.data()) x = n(rng);
    Image3D s = GaussianFilter(g, Vec3::Constant(sigma_mm)).apply(noise);
    auto [a, b] = s.range();
    for (double &x : s.data()) x = lo + (x - a) / (b - a) * (hi - lo);
    return s;
}

} // namespace divreg::testing
