#include "divreg/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/LU>

#include "divreg/constraint.hpp"
#include "divreg/error.hpp"
#include "divreg/parallel.hpp"

namespace divreg {

namespace {

constexpr std::size_t kChunks = 64;

bool power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

} // namespace

void EulerConfig::validate() const {
    if (integrator != Integrator::euler) throw UnsupportedOperation("only the forward Euler integrator is implemented");
    if (!power_of_two(steps)) throw ConfigError("Euler step count must be a power of two, got " + std::to_string(steps));
}

EulerConfig EulerConfig::with_log2_steps(int k, int threads) {
    if (k < 0 || k > 20) throw ConfigError("log2 of the Euler step count must lie in [0, 20]");
    EulerConfig c;
    c.steps = 1 << k;
    c.threads = threads;
    return c;
}

std::size_t DeformationField::flagged_count() const {
    return static_cast<std::size_t>(std::count(out_of_domain.begin(), out_of_domain.end(), std::uint8_t{1}));
}

bool DeformationField::is_identity() const {
    return std::all_of(displacement.begin(), displacement.end(), [](const Vec3 &u) { return u.isZero(0.0); });
}

TrajectoryEnd integrate_trajectory(const FieldEvaluator &ev, const Vec3 &p, int steps, bool with_determinant) {
    const auto &grid = ev.field().grid();
    const double tau = 1.0 / steps;
    TrajectoryEnd out{p};
    PointStencil s;
    Vec3 v;
    Mat3 j;
    for (int n = 0; n < steps; ++n) {
        if (!grid.contains(out.point)) out.left_domain = true;
        ev.prepare(out.point, with_determinant ? 1 : 0, s);
        if (with_determinant) {
            ev.velocity_jacobian(s, v, j);
            const double d = (Mat3::Identity() + tau * j).determinant();
            out.determinant *= d;
            out.min_step_determinant = std::min(out.min_step_determinant, d);
        } else {
            v = ev.velocity(s);
        }
        out.point += tau * v;
    }
    if (!grid.contains(out.point)) out.left_domain = true;
    return out;
}

DeformationField exponential_euler(const SplineSVF &field, const EulerConfig &cfg, const VoxelGeometry &out) {
    cfg.validate();
    out.validate();
    DeformationField def(out);
    const FieldEvaluator ev(field);
    parallel_chunks(out.voxel_count(), kChunks, resolve_thread_count(cfg.threads), [&](std::size_t b, std::size_t e, std::size_t) {
        for (std::size_t i = b; i < e; ++i) {
            const Vec3 x = out.center(i);
            const auto t = integrate_trajectory(ev, x, cfg.steps, false);
            def.displacement[i] = t.point - x;
            def.out_of_domain[i] = t.left_domain ? 1 : 0;
        }
    });
    return def;
}

DeterminantMap jacobian_determinant_map(const SplineSVF &field, const EulerConfig &cfg, const VoxelGeometry &out) {
    cfg.validate();
    out.validate();
    DeterminantMap map{Image3D(out), std::vector<std::uint8_t>(out.voxel_count(), 0), 1.0};
    const FieldEvaluator ev(field);
    std::vector<double> chunk_min(kChunks, 1.0);
    parallel_chunks(out.voxel_count(), kChunks, resolve_thread_count(cfg.threads), [&](std::size_t b, std::size_t e, std::size_t c) {
        for (std::size_t i = b; i < e; ++i) {
            const auto t = integrate_trajectory(ev, out.center(i), cfg.steps, true);
            if (t.left_domain) {
                map.out_of_domain[i] = 1;
                map.determinant[i] = std::numeric_limits<double>::quiet_NaN();
            } else {
                map.determinant[i] = t.determinant;
                chunk_min[c] = std::min(chunk_min[c], t.min_step_determinant);
            }
        }
    });
    for (double m : chunk_min) map.min_step_determinant = std::min(map.min_step_determinant, m);
    return map;
}

Image3D finite_difference_determinant(const DeformationField &def) {
    const auto &g = def.geometry;
    Image3D det(g);
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i) {
                const std::size_t idx = g.linear(i, j, k);
                if (def.out_of_domain[idx]) {
                    det[idx] = std::numeric_limits<double>::quiet_NaN();
                    continue;
                }
                const Index3 at{i, j, k};
                Mat3 jac = Mat3::Identity();
                for (int d = 0; d < 3; ++d) {
                    if (g.dims[d] < 2) continue;
                    Index3 lo = at, hi = at;
                    lo[d] = std::max(0, at[d] - 1);
                    hi[d] = std::min(g.dims[d] - 1, at[d] + 1);
                    const Vec3 du = def.displacement[g.linear(hi[0], hi[1], hi[2])] - def.displacement[g.linear(lo[0], lo[1], lo[2])];
                    jac.col(d) += du / ((hi[d] - lo[d]) * g.spacing[d]);
                }
                det[idx] = jac.determinant();
            }
    return det;
}

DeterminantStats determinant_stats(const Image3D &det, const MaskRegion *mask) {
    if (mask && !same_frame(mask->geometry(), det.geometry())) throw GeometryError("mask and determinant map differ in geometry");
    DeterminantStats s;
    s.min = std::numeric_limits<double>::infinity();
    s.max = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (std::size_t i = 0; i < det.size(); ++i) {
        if (mask && !(*mask)[i]) continue;
        const double d = det[i];
        if (!std::isfinite(d)) {
            ++s.excluded;
            continue;
        }
        ++s.count;
        sum += std::abs(d - 1.0);
        s.max_abs_dev = std::max(s.max_abs_dev, std::abs(d - 1.0));
        s.min = std::min(s.min, d);
        s.max = std::max(s.max, d);
    }
    if (s.count) {
        s.mae = sum / static_cast<double>(s.count);
    } else {
        s.min = s.max = std::numeric_limits<double>::quiet_NaN();
    }
    return s;
}

Image3D log_determinant(const Image3D &det) {
    Image3D out(det.geometry());
    for (std::size_t i = 0; i < det.size(); ++i)
        out[i] = det[i] > 0.0 ? std::log(det[i]) : std::numeric_limits<double>::quiet_NaN();
    return out;
}

Image3D warp_image(const Image3D &img, const DeformationField &def, Interpolation interp, std::optional<double> padding,
                   Boundary boundary) {
    if (!same_frame(img.geometry(), def.geometry)) throw GeometryError("image and deformation field differ in geometry");
    const ImageSampler sampler(img, interp, padding, boundary);
    const auto &g = img.geometry();
    Image3D out(g);
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i) {
                const std::size_t idx = g.linear(i, j, k);
                // Index space keeps the identity warp exact.
                const Vec3 voxel = Vec3(i, j, k) + def.displacement[idx].cwiseQuotient(g.spacing);
                out[idx] = sampler.sample(voxel);
            }
    return out;
}

PointTransport warp_points(const std::vector<Vec3> &points, const SplineSVF &field, const EulerConfig &cfg) {
    cfg.validate();
    PointTransport out{std::vector<Vec3>(points.size()), std::vector<std::uint8_t>(points.size(), 0)};
    const FieldEvaluator ev(field);
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto t = integrate_trajectory(ev, points[i], cfg.steps, false);
        out.points[i] = t.point;
        out.out_of_domain[i] = t.left_domain ? 1 : 0;
    }
    return out;
}

double inverse_consistency_residual(const SplineSVF &field, const EulerConfig &cfg, const VoxelGeometry &g) {
    cfg.validate();
    const SplineSVF neg = scaled(field, -1.0);
    const FieldEvaluator fwd(field), bwd(neg);
    std::vector<double> chunk_max(kChunks, 0.0);
    parallel_chunks(g.voxel_count(), kChunks, resolve_thread_count(cfg.threads), [&](std::size_t b, std::size_t e, std::size_t c) {
        for (std::size_t i = b; i < e; ++i) {
            const Vec3 x = g.center(i);
            const auto back = integrate_trajectory(bwd, x, cfg.steps, false);
            if (back.left_domain) continue;
            const auto there = integrate_trajectory(fwd, back.point, cfg.steps, false);
            if (there.left_domain) continue;
            chunk_max[c] = std::max(chunk_max[c], (there.point - x).cwiseAbs().maxCoeff());
        }
    });
    return *std::max_element(chunk_max.begin(), chunk_max.end());
}

} // namespace divreg
