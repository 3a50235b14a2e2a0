#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace divreg {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Index3 = std::array<int, 3>;

/// Regular voxel lattice in world (mm) coordinates. `origin` is the world position of the
/// center of voxel (0, 0, 0); axes are aligned with the world axes. The continuous domain
/// is the union of the voxel boxes, [origin - spacing/2, origin + (dims - 1/2) * spacing].
struct VoxelGeometry {
    Index3 dims{1, 1, 1};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(dims[2]);
    }
    std::size_t linear(int i, int j, int k) const {
        return (static_cast<std::size_t>(k) * static_cast<std::size_t>(dims[1]) + static_cast<std::size_t>(j)) *
                   static_cast<std::size_t>(dims[0]) +
               static_cast<std::size_t>(i);
    }
    Index3 unravel(std::size_t idx) const {
        const auto nx = static_cast<std::size_t>(dims[0]);
        const auto ny = static_cast<std::size_t>(dims[1]);
        return {static_cast<int>(idx % nx), static_cast<int>((idx / nx) % ny), static_cast<int>(idx / (nx * ny))};
    }
    Vec3 center(int i, int j, int k) const { return origin + spacing.cwiseProduct(Vec3(i, j, k)); }
    Vec3 center(std::size_t idx) const {
        const auto v = unravel(idx);
        return center(v[0], v[1], v[2]);
    }
    Vec3 to_world(const Vec3 &voxel) const { return origin + spacing.cwiseProduct(voxel); }
    Vec3 to_voxel(const Vec3 &world) const { return (world - origin).cwiseQuotient(spacing); }
    Vec3 lower() const { return origin - 0.5 * spacing; }
    Vec3 upper() const { return origin + spacing.cwiseProduct(Vec3(dims[0] - 0.5, dims[1] - 0.5, dims[2] - 0.5)); }

    // Throws GeometryError for non-positive dims/spacing or non-finite values.
    void validate() const;

    friend bool operator==(const VoxelGeometry &a, const VoxelGeometry &b) {
        return a.dims == b.dims && a.spacing == b.spacing && a.origin == b.origin;
    }
};

// Equality within `tol` mm on spacing and origin, exact on dims.
bool same_frame(const VoxelGeometry &a, const VoxelGeometry &b, double tol = 1e-9);

/// Scalar volume with double intensities stored x-fastest.
class Image3D {
  public:
    Image3D() = default;
    explicit Image3D(VoxelGeometry geometry, double fill = 0.0);
    Image3D(VoxelGeometry geometry, std::vector<double> data);

    const VoxelGeometry &geometry() const { return geometry_; }
    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }
    std::size_t size() const { return data_.size(); }

    double &at(int i, int j, int k) { return data_[geometry_.linear(i, j, k)]; }
    double at(int i, int j, int k) const { return data_[geometry_.linear(i, j, k)]; }
    double &operator[](std::size_t idx) { return data_[idx]; }
    double operator[](std::size_t idx) const { return data_[idx]; }

    // (min, max) over all voxels; (0, 0) for an empty image.
    std::pair<double, double> range() const;

  private:
    VoxelGeometry geometry_{};
    std::vector<double> data_;
};

enum class Interpolation { trilinear, cubic };

/// Continuous sampling of an image in voxel coordinates.
///
/// The cubic mode interpolates with prefiltered cubic B-spline coefficients (mirror
/// boundary), so it reproduces the voxel values exactly. Coordinates more than half a voxel
/// outside the lattice on any axis return the padding value and a zero gradient.
// Outside the voxel box: `pad` returns the padding value, `extend` continues the
// interpolant (edge clamping for trilinear, mirrored coefficients for cubic).
enum class Boundary { pad, extend };

class ImageSampler {
  public:
    ImageSampler(const Image3D &image, Interpolation interpolation, std::optional<double> padding = std::nullopt,
                 Boundary boundary = Boundary::pad);

    double sample(const Vec3 &voxel) const;
    // Also returns the gradient with respect to voxel coordinates.
    double sample(const Vec3 &voxel, Vec3 &gradient) const;

    const VoxelGeometry &geometry() const { return geometry_; }
    Interpolation interpolation() const { return interpolation_; }
    double padding() const { return padding_; }
    Boundary boundary() const { return boundary_; }

  private:
    bool inside(const Vec3 &voxel) const;
    double sample_linear(const Vec3 &c, Vec3 *gradient) const;
    double sample_cubic(const Vec3 &c, Vec3 *gradient) const;

    VoxelGeometry geometry_;
    Interpolation interpolation_;
    double padding_;
    Boundary boundary_;
    std::vector<double> coefficients_;
};

/// Separable Gaussian smoothing with a truncated kernel and per-voxel weight
/// normalisation at the borders. apply_adjoint is the exact transpose of apply.
class GaussianFilter {
  public:
    // sigma in mm per axis; a zero sigma leaves that axis untouched.
    GaussianFilter(const VoxelGeometry &geometry, const Vec3 &sigma_mm, double truncate = 3.0);

    void apply(std::span<const double> in, std::span<double> out) const;
    void apply_adjoint(std::span<const double> in, std::span<double> out) const;
    Image3D apply(const Image3D &image) const;

  private:
    struct Axis {
        std::vector<double> kernel; // taps -radius..radius
        int radius = 0;
        std::vector<double> norm; // 1 / (sum of in-range weights) per output position
    };
    void pass(int axis, std::span<const double> in, std::span<double> out, bool adjoint) const;

    VoxelGeometry geometry_;
    std::array<Axis, 3> axes_;
};

// Smooths with sigma = 0.5 * factor voxels and resamples on a lattice with `factor` times
// the spacing whose voxel boxes cover the same domain (dims rounded up).
Image3D downsample(const Image3D &image, int factor);

VoxelGeometry downsampled_geometry(const VoxelGeometry &geometry, int factor);

} // namespace divreg
