#include "divreg/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "divreg/error.hpp"

namespace divreg {

void VoxelGeometry::validate() const {
    for (int d = 0; d < 3; ++d) {
        if (dims[d] < 1) throw GeometryError("voxel dims must be >= 1");
        if (!(spacing[d] > 0.0) || !std::isfinite(spacing[d])) throw GeometryError("voxel spacing must be positive");
        if (!std::isfinite(origin[d])) throw GeometryError("voxel origin must be finite");
    }
}

bool same_frame(const VoxelGeometry &a, const VoxelGeometry &b, double tol) {
    return a.dims == b.dims && (a.spacing - b.spacing).cwiseAbs().maxCoeff() <= tol &&
           (a.origin - b.origin).cwiseAbs().maxCoeff() <= tol;
}

Image3D::Image3D(VoxelGeometry geometry, double fill) : geometry_(geometry) {
    geometry_.validate();
    data_.assign(geometry_.voxel_count(), fill);
}

Image3D::Image3D(VoxelGeometry geometry, std::vector<double> data) : geometry_(geometry), data_(std::move(data)) {
    geometry_.validate();
    if (data_.size() != geometry_.voxel_count()) {
        throw ShapeError("image data has " + std::to_string(data_.size()) + " values, geometry needs " +
                         std::to_string(geometry_.voxel_count()));
    }
}

std::pair<double, double> Image3D::range() const {
    if (data_.empty()) return {0.0, 0.0};
    const auto [lo, hi] = std::minmax_element(data_.begin(), data_.end());
    return {*lo, *hi};
}

// ---------------------------------------------------------------------------
// Interpolation

namespace {

constexpr double kCubicPole = -0.26794919243112270; // sqrt(3) - 2

// In-place cubic B-spline prefilter of one line with whole-sample mirror boundaries.
void prefilter_line(double *c, std::size_t n, std::size_t stride) {
    if (n < 2) return;
    const double z = kCubicPole;
    const double lambda = (1.0 - z) * (1.0 - 1.0 / z);
    for (std::size_t i = 0; i < n; ++i) c[i * stride] *= lambda;

    // Causal initialisation.
    const auto horizon = static_cast<std::size_t>(std::ceil(std::log(1e-17) / std::log(std::abs(z))));
    double sum = c[0];
    if (horizon < n) {
        double zn = z;
        for (std::size_t i = 1; i < horizon; ++i) {
            sum += zn * c[i * stride];
            zn *= z;
        }
    } else {
        double zn = z;
        const double iz = 1.0 / z;
        double z2n = std::pow(z, static_cast<double>(n - 1));
        sum = c[0] + z2n * c[(n - 1) * stride];
        z2n *= z2n * iz;
        for (std::size_t i = 1; i + 1 < n; ++i) {
            sum += (zn + z2n) * c[i * stride];
            zn *= z;
            z2n *= iz;
        }
        sum /= 1.0 - zn * zn;
    }
    c[0] = sum;
    for (std::size_t i = 1; i < n; ++i) c[i * stride] += z * c[(i - 1) * stride];

    // Anti-causal pass.
    c[(n - 1) * stride] = (z / (z * z - 1.0)) * (z * c[(n - 2) * stride] + c[(n - 1) * stride]);
    for (std::size_t i = n - 1; i-- > 0;) c[i * stride] = z * (c[(i + 1) * stride] - c[i * stride]);
}

inline int mirror(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    i = std::abs(i) % period;
    return i >= n ? period - i : i;
}

inline void cubic_weights(double x, int &first, std::array<double, 4> &w, std::array<double, 4> &dw) {
    const double fl = std::floor(x);
    first = static_cast<int>(fl) - 1;
    const double t = x - fl;
    const double t2 = t * t;
    const double t3 = t2 * t;
    const double u = 1.0 - t;
    w[0] = u * u * u / 6.0;
    w[1] = (4.0 - 6.0 * t2 + 3.0 * t3) / 6.0;
    w[2] = (1.0 + 3.0 * t + 3.0 * t2 - 3.0 * t3) / 6.0;
    w[3] = t3 / 6.0;
    dw[0] = -0.5 * u * u;
    dw[1] = -2.0 * t + 1.5 * t2;
    dw[2] = 0.5 + t - 1.5 * t2;
    dw[3] = 0.5 * t2;
}

} // namespace

ImageSampler::ImageSampler(const Image3D &image, Interpolation interpolation, std::optional<double> padding,
                           Boundary boundary)
    : geometry_(image.geometry()), interpolation_(interpolation),
      padding_(padding ? *padding : image.range().first), boundary_(boundary),
      coefficients_(image.data().begin(), image.data().end()) {
    if (interpolation_ == Interpolation::cubic) {
        const auto nx = static_cast<std::size_t>(geometry_.dims[0]);
        const auto ny = static_cast<std::size_t>(geometry_.dims[1]);
        const auto nz = static_cast<std::size_t>(geometry_.dims[2]);
        double *c = coefficients_.data();
        for (std::size_t k = 0; k < nz; ++k)
            for (std::size_t j = 0; j < ny; ++j) prefilter_line(c + (k * ny + j) * nx, nx, 1);
        for (std::size_t k = 0; k < nz; ++k)
            for (std::size_t i = 0; i < nx; ++i) prefilter_line(c + k * ny * nx + i, ny, nx);
        for (std::size_t j = 0; j < ny; ++j)
            for (std::size_t i = 0; i < nx; ++i) prefilter_line(c + j * nx + i, nz, nx * ny);
    }
}

bool ImageSampler::inside(const Vec3 &v) const {
    for (int d = 0; d < 3; ++d) {
        if (!(v[d] >= -0.5 && v[d] <= geometry_.dims[d] - 0.5)) return false;
    }
    return true;
}

double ImageSampler::sample(const Vec3 &voxel) const {
    if (boundary_ == Boundary::pad && !inside(voxel)) return padding_;
    return interpolation_ == Interpolation::cubic ? sample_cubic(voxel, nullptr) : sample_linear(voxel, nullptr);
}

double ImageSampler::sample(const Vec3 &voxel, Vec3 &gradient) const {
    gradient.setZero();
    if (boundary_ == Boundary::pad && !inside(voxel)) return padding_;
    return interpolation_ == Interpolation::cubic ? sample_cubic(voxel, &gradient) : sample_linear(voxel, &gradient);
}

double ImageSampler::sample_linear(const Vec3 &c, Vec3 *gradient) const {
    std::array<int, 3> i0{};
    std::array<int, 3> i1{};
    std::array<double, 3> f{};
    std::array<bool, 3> clamped{};
    for (int d = 0; d < 3; ++d) {
        const int n = geometry_.dims[d];
        double x = c[d];
        clamped[d] = false;
        if (x <= 0.0) {
            x = 0.0;
            clamped[d] = c[d] < 0.0;
        } else if (x >= n - 1) {
            x = n - 1;
            clamped[d] = c[d] > n - 1;
        }
        if (n == 1) {
            i0[d] = i1[d] = 0;
            f[d] = 0.0;
            clamped[d] = true;
            continue;
        }
        int b = static_cast<int>(std::floor(x));
        if (b > n - 2) b = n - 2;
        i0[d] = b;
        i1[d] = b + 1;
        f[d] = x - b;
    }
    const auto at = [&](int i, int j, int k) { return coefficients_[geometry_.linear(i, j, k)]; };
    const double c000 = at(i0[0], i0[1], i0[2]);
    const double c100 = at(i1[0], i0[1], i0[2]);
    const double c010 = at(i0[0], i1[1], i0[2]);
    const double c110 = at(i1[0], i1[1], i0[2]);
    const double c001 = at(i0[0], i0[1], i1[2]);
    const double c101 = at(i1[0], i0[1], i1[2]);
    const double c011 = at(i0[0], i1[1], i1[2]);
    const double c111 = at(i1[0], i1[1], i1[2]);
    const double fx = f[0], fy = f[1], fz = f[2];
    const double gx = 1.0 - fx, gy = 1.0 - fy, gz = 1.0 - fz;
    const double value = gz * (gy * (gx * c000 + fx * c100) + fy * (gx * c010 + fx * c110)) +
                         fz * (gy * (gx * c001 + fx * c101) + fy * (gx * c011 + fx * c111));
    if (gradient) {
        (*gradient)[0] = clamped[0] ? 0.0
                                    : gz * (gy * (c100 - c000) + fy * (c110 - c010)) +
                                          fz * (gy * (c101 - c001) + fy * (c111 - c011));
        (*gradient)[1] = clamped[1] ? 0.0
                                    : gz * (gx * (c010 - c000) + fx * (c110 - c100)) +
                                          fz * (gx * (c011 - c001) + fx * (c111 - c101));
        (*gradient)[2] = clamped[2] ? 0.0
                                    : gy * (gx * (c001 - c000) + fx * (c101 - c100)) +
                                          fy * (gx * (c011 - c010) + fx * (c111 - c110));
    }
    return value;
}

double ImageSampler::sample_cubic(const Vec3 &c, Vec3 *gradient) const {
    std::array<int, 3> first{};
    std::array<std::array<double, 4>, 3> w{};
    std::array<std::array<double, 4>, 3> dw{};
    std::array<std::array<int, 4>, 3> idx{};
    for (int d = 0; d < 3; ++d) {
        cubic_weights(c[d], first[d], w[d], dw[d]);
        for (int m = 0; m < 4; ++m) idx[d][m] = mirror(first[d] + m, geometry_.dims[d]);
    }
    const auto nx = static_cast<std::size_t>(geometry_.dims[0]);
    const auto nxy = nx * static_cast<std::size_t>(geometry_.dims[1]);
    double value = 0.0;
    double gx = 0.0, gy = 0.0, gz = 0.0;
    for (int kz = 0; kz < 4; ++kz) {
        const std::size_t oz = static_cast<std::size_t>(idx[2][kz]) * nxy;
        double v_y = 0.0, gx_y = 0.0, gy_y = 0.0;
        for (int ky = 0; ky < 4; ++ky) {
            const double *row = coefficients_.data() + oz + static_cast<std::size_t>(idx[1][ky]) * nx;
            double v_x = 0.0, g_x = 0.0;
            for (int kx = 0; kx < 4; ++kx) {
                const double cv = row[idx[0][kx]];
                v_x += w[0][kx] * cv;
                g_x += dw[0][kx] * cv;
            }
            v_y += w[1][ky] * v_x;
            gx_y += w[1][ky] * g_x;
            gy_y += dw[1][ky] * v_x;
        }
        value += w[2][kz] * v_y;
        gx += w[2][kz] * gx_y;
        gy += w[2][kz] * gy_y;
        gz += dw[2][kz] * v_y;
    }
    if (gradient) *gradient = Vec3(gx, gy, gz);
    return value;
}

// ---------------------------------------------------------------------------
// Gaussian filtering

GaussianFilter::GaussianFilter(const VoxelGeometry &geometry, const Vec3 &sigma_mm, double truncate)
    : geometry_(geometry) {
    for (int d = 0; d < 3; ++d) {
        Axis &ax = axes_[d];
        const double sigma = sigma_mm[d] / geometry.spacing[d];
        if (sigma <= 0.0) {
            ax.radius = 0;
            ax.kernel = {1.0};
        } else {
            ax.radius = std::max(1, static_cast<int>(std::ceil(truncate * sigma)));
            ax.kernel.resize(static_cast<std::size_t>(2 * ax.radius + 1));
            for (int t = -ax.radius; t <= ax.radius; ++t) {
                ax.kernel[static_cast<std::size_t>(t + ax.radius)] = std::exp(-0.5 * t * t / (sigma * sigma));
            }
        }
        const int n = geometry.dims[d];
        ax.norm.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int t = -ax.radius; t <= ax.radius; ++t) {
                if (i + t >= 0 && i + t < n) s += ax.kernel[static_cast<std::size_t>(t + ax.radius)];
            }
            ax.norm[static_cast<std::size_t>(i)] = 1.0 / s;
        }
    }
}

void GaussianFilter::pass(int axis, std::span<const double> in, std::span<double> out, bool adjoint) const {
    const Axis &ax = axes_[axis];
    const auto &g = geometry_;
    const int n = g.dims[axis];
    const std::size_t stride = axis == 0 ? 1 : axis == 1 ? static_cast<std::size_t>(g.dims[0])
                                                         : static_cast<std::size_t>(g.dims[0]) * g.dims[1];
    const std::size_t total = g.voxel_count();
    std::vector<double> line(static_cast<std::size_t>(n));
    for (std::size_t start = 0; start < total; ++start) {
        // Visit each line once, from its first element.
        const std::size_t pos = (start / stride) % static_cast<std::size_t>(n);
        if (pos != 0) continue;
        for (int i = 0; i < n; ++i) {
            line[static_cast<std::size_t>(i)] = in[start + static_cast<std::size_t>(i) * stride];
            if (adjoint) line[static_cast<std::size_t>(i)] *= ax.norm[static_cast<std::size_t>(i)];
        }
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            const int lo = std::max(-ax.radius, -i);
            const int hi = std::min(ax.radius, n - 1 - i);
            for (int t = lo; t <= hi; ++t) s += ax.kernel[static_cast<std::size_t>(t + ax.radius)] * line[static_cast<std::size_t>(i + t)];
            if (!adjoint) s *= ax.norm[static_cast<std::size_t>(i)];
            out[start + static_cast<std::size_t>(i) * stride] = s;
        }
    }
}

void GaussianFilter::apply(std::span<const double> in, std::span<double> out) const {
    const std::size_t n = geometry_.voxel_count();
    if (in.size() != n || out.size() != n) throw ShapeError("GaussianFilter: buffer size mismatch");
    std::vector<double> a(in.begin(), in.end());
    std::vector<double> b(n);
    pass(0, a, b, false);
    pass(1, b, a, false);
    pass(2, a, out, false);
}

void GaussianFilter::apply_adjoint(std::span<const double> in, std::span<double> out) const {
    const std::size_t n = geometry_.voxel_count();
    if (in.size() != n || out.size() != n) throw ShapeError("GaussianFilter: buffer size mismatch");
    std::vector<double> a(in.begin(), in.end());
    std::vector<double> b(n);
    pass(2, a, b, true);
    pass(1, b, a, true);
    pass(0, a, out, true);
}

Image3D GaussianFilter::apply(const Image3D &image) const {
    if (!(image.geometry() == geometry_)) throw GeometryError("GaussianFilter: image geometry differs from filter");
    Image3D out(geometry_);
    apply(image.data(), out.data());
    return out;
}

VoxelGeometry downsampled_geometry(const VoxelGeometry &geometry, int factor) {
    if (factor < 1) throw ConfigError("downsampling factor must be >= 1");
    VoxelGeometry g;
    for (int d = 0; d < 3; ++d) {
        g.dims[d] = (geometry.dims[d] + factor - 1) / factor;
        g.spacing[d] = geometry.spacing[d] * factor;
        g.origin[d] = geometry.origin[d] + 0.5 * (factor - 1) * geometry.spacing[d];
    }
    return g;
}

Image3D downsample(const Image3D &image, int factor) {
    if (factor == 1) return image;
    const VoxelGeometry &fine = image.geometry();
    GaussianFilter smooth(fine, 0.5 * factor * fine.spacing);
    const Image3D smoothed = smooth.apply(image);
    const VoxelGeometry coarse = downsampled_geometry(fine, factor);
    // Clamp-to-edge trilinear resampling at the coarse voxel centers.
    ImageSampler sampler(smoothed, Interpolation::trilinear);
    Image3D out(coarse);
    for (std::size_t idx = 0; idx < coarse.voxel_count(); ++idx) {
        Vec3 v = fine.to_voxel(coarse.center(idx));
        for (int d = 0; d < 3; ++d) v[d] = std::clamp(v[d], 0.0, static_cast<double>(fine.dims[d] - 1));
        out[idx] = sampler.sample(v);
    }
    return out;
}

} // namespace divreg
