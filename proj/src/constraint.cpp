#include "divreg/constraint.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>
#include <string>

#include <Eigen/IterativeLinearSolvers>

#include "divreg/error.hpp"

namespace divreg {

MaskRegion::MaskRegion(VoxelGeometry geometry) : geometry_(geometry), occupancy_(geometry.voxel_count(), 0) {
    geometry_.validate();
}

MaskRegion::MaskRegion(VoxelGeometry geometry, std::vector<std::uint8_t> occupancy)
    : geometry_(geometry), occupancy_(std::move(occupancy)) {
    geometry_.validate();
    if (occupancy_.size() != geometry_.voxel_count()) {
        throw ShapeError("mask has " + std::to_string(occupancy_.size()) + " voxels, geometry needs " +
                         std::to_string(geometry_.voxel_count()));
    }
    for (auto &v : occupancy_) v = v ? 1 : 0;
}

MaskRegion MaskRegion::from_image(const Image3D &image, double threshold) {
    std::vector<std::uint8_t> occ(image.size());
    for (std::size_t i = 0; i < occ.size(); ++i) occ[i] = image[i] > threshold ? 1 : 0;
    return MaskRegion(image.geometry(), std::move(occ));
}

std::size_t MaskRegion::count() const {
    return static_cast<std::size_t>(std::count(occupancy_.begin(), occupancy_.end(), std::uint8_t{1}));
}

Image3D MaskRegion::to_image() const {
    Image3D img(geometry_);
    for (std::size_t i = 0; i < occupancy_.size(); ++i) img[i] = occupancy_[i];
    return img;
}

namespace {

// Knot index range [lo, hi] of order-k basis functions whose open support overlaps the
// closed interval [a, b] with positive length; lo > hi when none does.
std::pair<int, int> overlapping_knots(const KnotAxis &axis, int k, double a, double b) {
    const double width = (k + 1) * axis.spacing();
    const int first = std::max(KnotAxis::first_index(SplineOrder(k)),
                               static_cast<int>(std::floor((a - axis.origin()) / axis.spacing())) - k - 2);
    const int last = std::min(axis.last_index(), static_cast<int>(std::ceil((b - axis.origin()) / axis.spacing())) + 1);
    int lo = last + 1, hi = first - 1;
    for (int j = first; j <= last; ++j) {
        const double u = axis.knot(j);
        if (u < b && a < u + width) {
            lo = std::min(lo, j);
            hi = std::max(hi, j);
        }
    }
    return {lo, hi};
}

void check_mask_frame(const ControlGrid &grid, const MaskRegion &mask) {
    const Vec3 lo = mask.geometry().lower(), hi = mask.geometry().upper();
    const Vec3 glo = grid.lower(), ghi = grid.upper();
    const double tol = 1e-9 * std::max(1.0, (ghi - glo).cwiseAbs().maxCoeff());
    for (int d = 0; d < 3; ++d) {
        if (lo[d] < glo[d] - tol || hi[d] > ghi[d] + tol) {
            throw GeometryError("mask domain is not inside the control grid box along axis " + std::to_string(d));
        }
    }
}

} // namespace

std::vector<Index3> active_index_set(const ControlGrid &grid, const MaskRegion &mask) {
    check_mask_frame(grid, mask);
    const int k = grid.divergence_order().value();
    const Lattice lat = grid.lattice({k, k, k});
    const auto &g = mask.geometry();

    // The overlap test is separable, so each voxel row along an axis has one index range.
    std::array<std::vector<std::pair<int, int>>, 3> ranges;
    for (int d = 0; d < 3; ++d) {
        ranges[d].resize(static_cast<std::size_t>(g.dims[d]));
        for (int v = 0; v < g.dims[d]; ++v) {
            const double c = g.origin[d] + v * g.spacing[d];
            auto r = overlapping_knots(grid.axis(d), k, c - 0.5 * g.spacing[d], c + 0.5 * g.spacing[d]);
            ranges[d][static_cast<std::size_t>(v)] = {r.first + k, r.second + k};
        }
    }

    std::vector<std::uint8_t> hit(lat.count(), 0);
    for (int z = 0; z < g.dims[2]; ++z)
        for (int y = 0; y < g.dims[1]; ++y)
            for (int x = 0; x < g.dims[0]; ++x) {
                if (!mask.at(x, y, z)) continue;
                const auto [x0, x1] = ranges[0][static_cast<std::size_t>(x)];
                const auto [y0, y1] = ranges[1][static_cast<std::size_t>(y)];
                const auto [z0, z1] = ranges[2][static_cast<std::size_t>(z)];
                for (int c = z0; c <= z1; ++c)
                    for (int b = y0; b <= y1; ++b)
                        for (int a = x0; a <= x1; ++a) hit[lat.index(a, b, c)] = 1;
            }

    std::vector<Index3> out;
    for (std::size_t i = 0; i < hit.size(); ++i)
        if (hit[i]) out.push_back(lat.unravel(i));
    return out;
}

std::vector<double> ConstraintSystem::residual(std::span<const double> theta) const {
    if (theta.size() != cols()) throw ShapeError("parameter vector length does not match the constraint system");
    const Eigen::Map<const Eigen::VectorXd> t(theta.data(), static_cast<Eigen::Index>(theta.size()));
    const Eigen::VectorXd r = matrix * t;
    return {r.data(), r.data() + r.size()};
}

double ConstraintSystem::max_residual(std::span<const double> theta) const {
    double m = 0.0;
    for (double r : residual(theta)) m = std::max(m, std::abs(r));
    return m;
}

ConstraintSystem assemble_constraints(const ControlGrid &grid, const std::vector<Index3> &indices) {
    const DivConformingSVF layout(grid);
    const Lattice lat = layout.divergence_lattice();
    const Vec3 inv = grid.spacing().cwiseInverse();

    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(indices.size() * 6);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const Index3 s = indices[r];
        if (!lat.contains(s[0], s[1], s[2])) {
            throw IndexError("constraint index (" + std::to_string(s[0]) + ", " + std::to_string(s[1]) + ", " +
                             std::to_string(s[2]) + ") outside the divergence lattice");
        }
        for (int c = 0; c < 3; ++c) {
            const auto &b = layout.component(c);
            Index3 next = s;
            ++next[c];
            const auto row = static_cast<int>(r);
            triplets.emplace_back(row, static_cast<int>(b.offset + b.lattice.index(next[0], next[1], next[2])), inv[c]);
            triplets.emplace_back(row, static_cast<int>(b.offset + b.lattice.index(s[0], s[1], s[2])), -inv[c]);
        }
    }
    ConstraintSystem sys{grid, indices, SparseRowMatrix(static_cast<Eigen::Index>(indices.size()),
                                                        static_cast<Eigen::Index>(layout.parameter_count()))};
    sys.matrix.setFromTriplets(triplets.begin(), triplets.end());
    sys.matrix.makeCompressed();
    return sys;
}

ConstraintSystem assemble_constraints(const ControlGrid &grid, const MaskRegion &mask) {
    return assemble_constraints(grid, active_index_set(grid, mask));
}

ConstraintSystem empty_constraints(const ControlGrid &grid, std::size_t parameter_count) {
    return ConstraintSystem{grid, {}, SparseRowMatrix(0, static_cast<Eigen::Index>(parameter_count))};
}

NullSpaceProjector::NullSpaceProjector(const SparseRowMatrix &a, double tolerance, int max_refinements)
    : a_(a), tolerance_(tolerance), max_refinements_(max_refinements) {
    const Eigen::SparseMatrix<double> at = a_.transpose();
    normal_ = (a_ * at).pruned();
    normal_.makeCompressed();
}

std::vector<double> NullSpaceProjector::project(std::span<const double> v, double feasibility) const {
    std::vector<double> out(v.begin(), v.end());
    project_in_place(out, feasibility);
    return out;
}

void NullSpaceProjector::project_in_place(std::span<double> v, double feasibility) const {
    if (static_cast<Eigen::Index>(v.size()) != a_.cols()) throw ShapeError("vector length does not match the constraint matrix");
    last_iterations_ = 0;
    if (a_.rows() == 0) return;
    Eigen::Map<Eigen::VectorXd> x(v.data(), static_cast<Eigen::Index>(v.size()));

    Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper, Eigen::DiagonalPreconditioner<double>> cg;
    cg.setTolerance(tolerance_);
    cg.setMaxIterations(std::max<Eigen::Index>(1000, 10 * a_.rows()));
    cg.compute(normal_);
    if (cg.info() != Eigen::Success) throw SolverError("failed to set up the constraint normal equations");

    const double target = 1e-3 * feasibility;
    Eigen::VectorXd rhs = a_ * x;
    double res = rhs.cwiseAbs().maxCoeff();
    for (int pass = 0; pass <= max_refinements_ && res > target; ++pass) {
        const Eigen::VectorXd lambda = cg.solve(rhs);
        last_iterations_ += static_cast<int>(cg.iterations());
        const Eigen::VectorXd step = a_.transpose() * lambda;
        x -= step;
        rhs = a_ * x;
        const double next = rhs.cwiseAbs().maxCoeff();
        if (!(next < res)) {
            res = next;
            break;
        }
        res = next;
    }
    if (!(res <= feasibility)) {
        throw SolverError("projection left constraint residual " + std::to_string(res) + " above " +
                          std::to_string(feasibility));
    }
}

std::vector<double> project_divergence_free(std::span<const double> theta0, const ConstraintSystem &system) {
    if (theta0.size() != system.cols()) throw ShapeError("parameter vector length does not match the constraint system");
    return NullSpaceProjector(system.matrix).project(theta0);
}

DivConformingSVF project_divergence_free(const DivConformingSVF &field, const ConstraintSystem &system) {
    if (!(field.grid() == system.grid)) throw GeometryError("field and constraint system use different grids");
    return DivConformingSVF(field.grid(), project_divergence_free(field.parameters(), system));
}

SparseRowMatrix pointwise_divergence_matrix(const SplineSVF &field, const std::vector<Vec3> &points) {
    const auto &grid = field.grid();
    std::vector<Eigen::Triplet<double>> triplets;
    for (std::size_t r = 0; r < points.size(); ++r) {
        const Vec3 &p = points[r];
        if (!grid.contains(p)) throw DomainError("divergence sample point outside the control grid box");
        for (int c = 0; c < 3; ++c) {
            const auto &b = field.component(c);
            std::array<BasisWindow, 3> w;
            for (int d = 0; d < 3; ++d) w[d] = basis_window(grid.axis(d), SplineOrder(b.orders[d]), p[d], 1);
            for (int kk = 0; kk < w[2].count; ++kk)
                for (int jj = 0; jj < w[1].count; ++jj)
                    for (int ii = 0; ii < w[0].count; ++ii) {
                        const std::array<int, 3> e{ii, jj, kk};
                        double v = 1.0;
                        for (int d = 0; d < 3; ++d) v *= d == c ? w[d].d1[e[d]] : w[d].value[e[d]];
                        if (v == 0.0) continue;
                        const auto col = b.offset + b.lattice.index(w[0].first + ii, w[1].first + jj, w[2].first + kk);
                        triplets.emplace_back(static_cast<int>(r), static_cast<int>(col), v);
                    }
        }
    }
    SparseRowMatrix m(static_cast<Eigen::Index>(points.size()), static_cast<Eigen::Index>(field.parameter_count()));
    m.setFromTriplets(triplets.begin(), triplets.end());
    m.makeCompressed();
    return m;
}

std::vector<Vec3> grid_knots(const ControlGrid &grid) {
    std::vector<Vec3> pts;
    const Index3 n = grid.cells();
    pts.reserve(static_cast<std::size_t>((n[0] + 1) * (n[1] + 1) * (n[2] + 1)));
    for (int k = 0; k <= n[2]; ++k)
        for (int j = 0; j <= n[1]; ++j)
            for (int i = 0; i <= n[0]; ++i) pts.emplace_back(grid.axis(0).knot(i), grid.axis(1).knot(j), grid.axis(2).knot(k));
    return pts;
}

ClassicalSVF project_classical_at_knots(const ClassicalSVF &field) {
    const SparseRowMatrix a = pointwise_divergence_matrix(field, grid_knots(field.grid()));
    return ClassicalSVF(field.grid(), NullSpaceProjector(a).project(field.parameters()), field.order());
}

double sample_max_divergence(const SplineSVF &field, const MaskRegion &mask, std::size_t samples, std::uint64_t seed) {
    std::vector<std::size_t> voxels;
    for (std::size_t i = 0; i < mask.occupancy().size(); ++i)
        if (mask[i]) voxels.push_back(i);
    if (voxels.empty() || samples == 0) return 0.0;

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, voxels.size() - 1);
    std::uniform_real_distribution<double> off(-0.5, 0.5);
    const auto &g = mask.geometry();
    const Vec3 lo = field.grid().lower(), hi = field.grid().upper();
    double peak = 0.0;
    for (std::size_t n = 0; n < samples; ++n) {
        Vec3 p = g.center(voxels[pick(rng)]);
        for (int d = 0; d < 3; ++d) p[d] = std::clamp(p[d] + off(rng) * g.spacing[d], lo[d], hi[d]);
        const double div = field.is_divergence_conforming() ? eval_divergence(field, p) : eval_jacobian(field, p).trace();
        peak = std::max(peak, std::abs(div));
    }
    return peak;
}

DivergenceReport divergence_check(const SplineSVF &field, const MaskRegion &mask, std::size_t samples, std::uint64_t seed) {
    if (!field.is_divergence_conforming()) throw UnsupportedOperation("divergence bound needs a divergence-conforming field");
    DivergenceReport rep;
    const auto active = active_index_set(field.grid(), mask);
    rep.active_indices = active.size();
    const auto psi = divergence_coefficients(field);
    const Lattice lat = field.divergence_lattice();
    for (const auto &s : active) rep.max_abs_psi = std::max(rep.max_abs_psi, std::abs(psi[lat.index(s[0], s[1], s[2])]));
    rep.max_abs_divergence = sample_max_divergence(field, mask, samples, seed);
    rep.samples = mask.count() > 0 ? samples : 0;
    return rep;
}

void write_triplets(const ConstraintSystem &system, std::ostream &out) {
    char buf[96];
    for (Eigen::Index r = 0; r < system.matrix.outerSize(); ++r)
        for (SparseRowMatrix::InnerIterator it(system.matrix, r); it; ++it) {
            std::snprintf(buf, sizeof buf, "%lld %lld %.17g\n", static_cast<long long>(it.row()),
                          static_cast<long long>(it.col()), it.value());
            out << buf;
        }
}

void write_index_manifest(const ConstraintSystem &system, std::ostream &out) {
    const int k = system.grid.divergence_order().value();
    for (std::size_t r = 0; r < system.active_indices.size(); ++r) {
        const auto &s = system.active_indices[r];
        out << r << ' ' << s[0] - k << ' ' << s[1] - k << ' ' << s[2] - k << '\n';
    }
}

} // namespace divreg
