#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "divreg/constraint.hpp"
#include "divreg/field.hpp"
#include "divreg/flow.hpp"
#include "divreg/image.hpp"

namespace divreg {

/// Single-file little-endian NIfTI-1 (.nii) subset: 348-byte header, empty extension
/// block, data at offset 352. Orientation comes from a diagonal sform with positive
/// spacing; anything else (gzip, extensions, qform-only or oblique frames, other
/// datatypes) is rejected with a ParseError naming the field.
///
/// Header geometry is stored as float32, so spacing and origin round-trip exactly only
/// when they are representable in single precision.
enum class NiftiDatatype : std::int16_t { uint8 = 2, float32 = 16, float64 = 64 };

constexpr std::int16_t nifti_intent_none = 0;
constexpr std::int16_t nifti_intent_displacement = 1006;
constexpr std::int16_t nifti_intent_vector = 1007;

struct NiftiHeader {
    std::int16_t dim[8]{};
    float pixdim[8]{};
    NiftiDatatype datatype = NiftiDatatype::float64;
    std::int16_t intent_code = 0;
    float vox_offset = 352.0f;
    float scl_slope = 0.0f;
    float scl_inter = 0.0f;
    std::int16_t qform_code = 0;
    std::int16_t sform_code = 0;
    float srow[3][4]{};
    VoxelGeometry geometry;
    int components = 1; // 3 for vector volumes (dim[5])
};

NiftiHeader read_nifti_header(const std::filesystem::path &path);

// Scalar volume, converted to double (scl_slope/scl_inter applied when set).
Image3D read_nifti(const std::filesystem::path &path);
// uint8 writes require integer values in [0, 255].
void write_nifti(const Image3D &image, const std::filesystem::path &path,
                 NiftiDatatype datatype = NiftiDatatype::float64);

// Any nonzero voxel is inside.
MaskRegion read_mask(const std::filesystem::path &path);
void write_mask(const MaskRegion &mask, const std::filesystem::path &path);

/// Three-component volume (dim[5] = 3), stored component-major as NIfTI requires.
struct VectorVolume {
    VoxelGeometry geometry;
    std::vector<Vec3> values;
    std::int16_t intent = nifti_intent_vector;
};

VectorVolume read_vector_nifti(const std::filesystem::path &path);
void write_vector_nifti(const VectorVolume &volume, const std::filesystem::path &path,
                        NiftiDatatype datatype = NiftiDatatype::float64);
// Displacements in mm with the displacement intent.
void write_deformation_nifti(const DeformationField &def, const std::filesystem::path &path,
                             NiftiDatatype datatype = NiftiDatatype::float64);

/// Spline field container, little-endian:
///
///   char[4]  "DSVF"
///   uint32   version (1)
///   uint32   kind (0 classical, 1 divergence-conforming)
///   int32    order (classical basis order, or divergence order k)
///   int32    divergence order k of the grid
///   int32[3] cells
///   f64[3]   knot spacing (mm)
///   f64[3]   grid origin (mm)
///   uint64   coefficient count
///   f64[n]   coefficients [phi_X | phi_Y | phi_Z], each x-fastest over its lattice
///
/// ParseError on bad magic, version, kind, sizes or truncation.
void write_svf(const SplineSVF &field, const std::filesystem::path &path);
SplineSVF read_svf(const std::filesystem::path &path);

// Human-readable mirror of the container (metadata plus coefficient arrays).
std::string svf_json(const SplineSVF &field);
// Writes `path` and the sidecar `path` + ".json".
void write_svf_with_sidecar(const SplineSVF &field, const std::filesystem::path &path);

} // namespace divreg
