#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "divreg/constraint.hpp"
#include "divreg/field.hpp"
#include "divreg/flow.hpp"
#include "divreg/image.hpp"

namespace divreg {

enum class PhantomKind { sphere_shells, sinusoid_texture, checker_smooth };
PhantomKind parse_phantom_kind(const std::string &name); // ConfigError on unknown names
std::string to_string(PhantomKind kind);

struct PhantomSpec {
    PhantomKind kind = PhantomKind::sphere_shells;
    int size = 64;              // voxels per axis
    double spacing = 1.0;       // mm
    std::uint64_t seed = 0;
    double smoothing_mm = 1.0;  // Gaussian sigma applied last; 0 keeps hard edges
    double texture = 0.0;       // amplitude of an added sinusoid texture, as a fraction of the range
    double low = 0.0, high = 100.0;
    bool second_modality = false;
    double transfer_cycles = 0.75; // of the cosine transfer producing the second modality

    void validate() const;
    VoxelGeometry geometry() const; // origin at 0, cube of `size` voxels
};

struct Phantom {
    Image3D primary;
    std::optional<Image3D> secondary; // same anatomy through a non-monotone intensity transfer
};

/// Deterministic in (spec). Sphere shells: concentric balls around a jittered center with
/// nested intensities plus small inclusions, all inside the outer radius
/// (sphere_shell_outer_radius). Sinusoid texture: three octaves of products of sinusoids
/// with seeded phases. Checker smooth: a tanh-softened 3D checkerboard.
Phantom make_phantom(const PhantomSpec &spec);

double sphere_shell_outer_radius(const PhantomSpec &spec); // mm
Vec3 sphere_shell_center(const PhantomSpec &spec);         // mm

// Voxels whose centers lie within `radius` mm of `center`.
MaskRegion sphere_mask(const VoxelGeometry &geometry, const Vec3 &center, double radius);
// Central ball covering roughly `fraction` of the image volume.
MaskRegion central_mask(const VoxelGeometry &geometry, double fraction);

struct GroundTruth {
    ClassicalSVF classical;      // cubic, divergence-free at every knot
    DivConformingSVF conforming; // every divergence coefficient zero
    double amplitude = 0.0;      // coefficient standard deviation actually used (mm)
    double flagged_fraction = 0.0;
};

/// Seeded random smooth fields, tapered to vanish at the grid box. The classical field is
/// projected onto zero divergence at the knots; the conforming field is projected onto
/// ker A for every divergence coefficient of the grid.
GroundTruth make_ground_truth_svf(const ControlGrid &grid, std::uint64_t seed, double amplitude);

/// As above, then integrates both fields over `geometry`; while more than 1% of the voxel
/// trajectories leave the grid box the amplitude is halved and the fields regenerated.
GroundTruth make_ground_truth_svf(const ControlGrid &grid, std::uint64_t seed, double amplitude,
                                  const VoxelGeometry &geometry, const EulerConfig &euler);

} // namespace divreg
