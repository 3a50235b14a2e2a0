#include "divreg/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"

#include "divreg/error.hpp"

namespace divreg {

static_assert(std::endian::native == std::endian::little, "file formats are written in host (little-endian) order");

namespace {

constexpr int header_size = 348;
constexpr int data_offset = 352;

std::vector<char> read_file(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path &path, const std::vector<char> &bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ParseError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ParseError("failed writing " + path.string());
}

template <class T> T get(const std::vector<char> &b, std::size_t at) {
    T v;
    std::memcpy(&v, b.data() + at, sizeof(T));
    return v;
}

template <class T> void put(std::vector<char> &b, std::size_t at, T v) { std::memcpy(b.data() + at, &v, sizeof(T)); }

int bytes_per_voxel(NiftiDatatype t) {
    switch (t) {
    case NiftiDatatype::uint8: return 1;
    case NiftiDatatype::float32: return 4;
    case NiftiDatatype::float64: return 8;
    }
    return 0;
}

NiftiHeader parse_header(const std::vector<char> &b, const std::string &name) {
    if (b.size() < static_cast<std::size_t>(header_size)) throw ParseError(name + ": truncated header (" + std::to_string(b.size()) + " bytes)");
    const auto sizeof_hdr = get<std::int32_t>(b, 0);
    if (sizeof_hdr != header_size) {
        throw ParseError(name + ": sizeof_hdr is " + std::to_string(sizeof_hdr) +
                         " (expected 348; big-endian and NIfTI-2 files are not supported)");
    }
    if (std::memcmp(b.data() + 344, "n+1\0", 4) != 0) throw ParseError(name + ": magic is not \"n+1\" (only single-file .nii is supported)");

    NiftiHeader h;
    for (int i = 0; i < 8; ++i) {
        h.dim[i] = get<std::int16_t>(b, 40 + 2 * i);
        h.pixdim[i] = get<float>(b, 76 + 4 * i);
    }
    h.intent_code = get<std::int16_t>(b, 68);
    const auto dt = get<std::int16_t>(b, 70);
    if (dt != 2 && dt != 16 && dt != 64) throw ParseError(name + ": unsupported datatype " + std::to_string(dt));
    h.datatype = static_cast<NiftiDatatype>(dt);
    const auto bitpix = get<std::int16_t>(b, 72);
    if (bitpix != 8 * bytes_per_voxel(h.datatype)) throw ParseError(name + ": bitpix " + std::to_string(bitpix) + " does not match the datatype");
    h.vox_offset = get<float>(b, 108);
    h.scl_slope = get<float>(b, 112);
    h.scl_inter = get<float>(b, 116);
    h.qform_code = get<std::int16_t>(b, 252);
    h.sform_code = get<std::int16_t>(b, 254);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) h.srow[r][c] = get<float>(b, 280 + 16 * r + 4 * c);

    const int ndim = h.dim[0];
    if (ndim < 1 || ndim > 7) throw ParseError(name + ": dim[0] = " + std::to_string(ndim) + " outside [1, 7]");
    for (int i = 1; i <= ndim; ++i)
        if (h.dim[i] < 1) throw ParseError(name + ": dim[" + std::to_string(i) + "] = " + std::to_string(h.dim[i]));
    auto extent = [&](int i) { return i <= ndim ? static_cast<int>(h.dim[i]) : 1; };
    if (extent(4) != 1 || extent(6) != 1 || extent(7) != 1) throw ParseError(name + ": time series and higher dimensions are not supported (dim[4], dim[6], dim[7] must be 1)");
    h.components = extent(5);
    if (h.components != 1 && h.components != 3) throw ParseError(name + ": dim[5] = " + std::to_string(h.components) + " (only scalar or 3-vector volumes)");
    if (!(h.vox_offset >= static_cast<float>(data_offset)) || h.vox_offset != std::floor(h.vox_offset)) {
        throw ParseError(name + ": vox_offset " + std::to_string(h.vox_offset) + " is invalid");
    }
    if (h.vox_offset > static_cast<float>(data_offset) ||
        (b.size() >= static_cast<std::size_t>(data_offset) && b[348] != 0)) {
        throw ParseError(name + ": header extensions are not supported");
    }

    VoxelGeometry &g = h.geometry;
    g.dims = {extent(1), extent(2), extent(3)};
    for (int d = 0; d < 3; ++d) {
        const float s = h.pixdim[d + 1];
        if (!(s > 0.0f) || !std::isfinite(s)) throw ParseError(name + ": pixdim[" + std::to_string(d + 1) + "] must be positive");
        g.spacing[d] = s;
    }
    if (h.sform_code > 0) {
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) {
                if (r != c && h.srow[r][c] != 0.0f) throw ParseError(name + ": sform is not axis-aligned (srow[" + std::to_string(r) + "][" + std::to_string(c) + "] != 0)");
            }
            if (std::abs(h.srow[r][r] - h.pixdim[r + 1]) > 1e-6f * h.pixdim[r + 1]) {
                throw ParseError(name + ": sform diagonal " + std::to_string(h.srow[r][r]) + " disagrees with pixdim[" + std::to_string(r + 1) + "]");
            }
            g.origin[r] = h.srow[r][3];
        }
    } else if (h.qform_code > 0) {
        throw ParseError(name + ": qform-only orientation is not supported (sform_code = 0)");
    } else {
        g.origin.setZero();
    }

    const std::size_t need = static_cast<std::size_t>(h.vox_offset) +
                             g.voxel_count() * static_cast<std::size_t>(h.components * bytes_per_voxel(h.datatype));
    if (b.size() < need) throw ParseError(name + ": data truncated (" + std::to_string(b.size()) + " of " + std::to_string(need) + " bytes)");
    return h;
}

std::vector<double> decode(const std::vector<char> &b, const NiftiHeader &h, std::size_t count) {
    std::vector<double> out(count);
    const std::size_t at = static_cast<std::size_t>(h.vox_offset);
    switch (h.datatype) {
    case NiftiDatatype::uint8:
        for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<unsigned char>(b[at + i]);
        break;
    case NiftiDatatype::float32:
        for (std::size_t i = 0; i < count; ++i) out[i] = get<float>(b, at + 4 * i);
        break;
    case NiftiDatatype::float64:
        std::memcpy(out.data(), b.data() + at, 8 * count);
        break;
    }
    const bool scaled = h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f);
    if (scaled)
        for (double &x : out) x = x * h.scl_slope + h.scl_inter;
    for (double x : out)
        if (!std::isfinite(x)) throw ParseError("voxel data contains non-finite values");
    return out;
}

std::vector<char> encode(const VoxelGeometry &g, int components, std::int16_t intent, NiftiDatatype dt,
                         const std::vector<double> &values) {
    g.validate();
    const int bpv = bytes_per_voxel(dt);
    std::vector<char> b(static_cast<std::size_t>(data_offset) + values.size() * static_cast<std::size_t>(bpv), 0);
    put<std::int32_t>(b, 0, header_size);
    b[38] = 'r';
    const std::int16_t dim0 = components == 1 ? 3 : 5;
    const std::int16_t dims[8] = {dim0,
                                  static_cast<std::int16_t>(g.dims[0]),
                                  static_cast<std::int16_t>(g.dims[1]),
                                  static_cast<std::int16_t>(g.dims[2]),
                                  1,
                                  static_cast<std::int16_t>(components),
                                  1,
                                  1};
    for (int d = 0; d < 3; ++d)
        if (g.dims[d] > 32767) throw ShapeError("NIfTI-1 dimensions are limited to 32767");
    for (int i = 0; i < 8; ++i) put<std::int16_t>(b, 40 + 2 * i, dims[i]);
    put<std::int16_t>(b, 68, intent);
    put<std::int16_t>(b, 70, static_cast<std::int16_t>(dt));
    put<std::int16_t>(b, 72, static_cast<std::int16_t>(8 * bpv));
    const float pix[8] = {1.0f, static_cast<float>(g.spacing[0]), static_cast<float>(g.spacing[1]),
                          static_cast<float>(g.spacing[2]), 1.0f, 1.0f, 1.0f, 1.0f};
    for (int i = 0; i < 8; ++i) put<float>(b, 76 + 4 * i, pix[i]);
    put<float>(b, 108, static_cast<float>(data_offset));
    b[123] = 2; // millimetres
    put<std::int16_t>(b, 254, 1); // sform_code: scanner anatomical
    for (int r = 0; r < 3; ++r) {
        put<float>(b, 280 + 16 * r + 4 * r, static_cast<float>(g.spacing[r]));
        put<float>(b, 280 + 16 * r + 12, static_cast<float>(g.origin[r]));
    }
    std::memcpy(b.data() + 344, "n+1\0", 4);

    const std::size_t at = data_offset;
    switch (dt) {
    case NiftiDatatype::uint8:
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double v = values[i];
            if (!(v >= 0.0 && v <= 255.0 && v == std::floor(v))) throw ConfigError("value " + std::to_string(v) + " is not representable as uint8");
            b[at + i] = static_cast<char>(static_cast<unsigned char>(v));
        }
        break;
    case NiftiDatatype::float32:
        for (std::size_t i = 0; i < values.size(); ++i) put<float>(b, at + 4 * i, static_cast<float>(values[i]));
        break;
    case NiftiDatatype::float64:
        std::memcpy(b.data() + at, values.data(), 8 * values.size());
        break;
    }
    return b;
}

} // namespace

NiftiHeader read_nifti_header(const std::filesystem::path &path) {
    return parse_header(read_file(path), path.string());
}

Image3D read_nifti(const std::filesystem::path &path) {
    const auto b = read_file(path);
    const NiftiHeader h = parse_header(b, path.string());
    if (h.components != 1) throw ParseError(path.string() + ": expected a scalar volume, dim[5] = " + std::to_string(h.components));
    return Image3D(h.geometry, decode(b, h, h.geometry.voxel_count()));
}

void write_nifti(const Image3D &image, const std::filesystem::path &path, NiftiDatatype datatype) {
    write_file(path, encode(image.geometry(), 1, nifti_intent_none, datatype,
                            std::vector<double>(image.data().begin(), image.data().end())));
}

MaskRegion read_mask(const std::filesystem::path &path) {
    const Image3D img = read_nifti(path);
    std::vector<std::uint8_t> occ(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) occ[i] = img[i] != 0.0 ? 1 : 0;
    return MaskRegion(img.geometry(), std::move(occ));
}

void write_mask(const MaskRegion &mask, const std::filesystem::path &path) {
    const auto occ = mask.occupancy();
    write_file(path, encode(mask.geometry(), 1, nifti_intent_none, NiftiDatatype::uint8,
                            std::vector<double>(occ.begin(), occ.end())));
}

VectorVolume read_vector_nifti(const std::filesystem::path &path) {
    const auto b = read_file(path);
    const NiftiHeader h = parse_header(b, path.string());
    if (h.components != 3) throw ParseError(path.string() + ": expected a 3-vector volume, dim[5] = " + std::to_string(h.components));
    const std::size_t n = h.geometry.voxel_count();
    const auto flat = decode(b, h, 3 * n);
    VectorVolume v{h.geometry, std::vector<Vec3>(n), h.intent_code};
    for (std::size_t i = 0; i < n; ++i) v.values[i] = Vec3(flat[i], flat[n + i], flat[2 * n + i]);
    return v;
}

void write_vector_nifti(const VectorVolume &volume, const std::filesystem::path &path, NiftiDatatype datatype) {
    const std::size_t n = volume.geometry.voxel_count();
    if (volume.values.size() != n) throw ShapeError("vector volume size does not match its geometry");
    std::vector<double> flat(3 * n);
    for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) flat[static_cast<std::size_t>(c) * n + i] = volume.values[i][c];
    write_file(path, encode(volume.geometry, 3, volume.intent, datatype, flat));
}

void write_deformation_nifti(const DeformationField &def, const std::filesystem::path &path, NiftiDatatype datatype) {
    write_vector_nifti({def.geometry, def.displacement, nifti_intent_displacement}, path, datatype);
}

namespace {

constexpr char svf_magic[4] = {'D', 'S', 'V', 'F'};
constexpr std::uint32_t svf_version = 1;
constexpr std::size_t svf_header = 4 + 4 + 4 + 4 + 4 + 12 + 24 + 24 + 8;

} // namespace

void write_svf(const SplineSVF &field, const std::filesystem::path &path) {
    const ControlGrid &g = field.grid();
    const auto theta = field.parameters();
    std::vector<char> b(svf_header + 8 * theta.size());
    std::memcpy(b.data(), svf_magic, 4);
    std::size_t at = 4;
    put<std::uint32_t>(b, at, svf_version), at += 4;
    put<std::uint32_t>(b, at, field.is_divergence_conforming() ? 1u : 0u), at += 4;
    put<std::int32_t>(b, at, field.order()), at += 4;
    put<std::int32_t>(b, at, g.divergence_order().value()), at += 4;
    for (int d = 0; d < 3; ++d) put<std::int32_t>(b, at, g.cells()[d]), at += 4;
    for (int d = 0; d < 3; ++d) put<double>(b, at, g.spacing()[d]), at += 8;
    for (int d = 0; d < 3; ++d) put<double>(b, at, g.axis(d).origin()), at += 8;
    put<std::uint64_t>(b, at, theta.size()), at += 8;
    std::memcpy(b.data() + at, theta.data(), 8 * theta.size());
    write_file(path, b);
}

SplineSVF read_svf(const std::filesystem::path &path) {
    const auto b = read_file(path);
    const std::string name = path.string();
    if (b.size() < svf_header) throw ParseError(name + ": truncated SVF header");
    if (std::memcmp(b.data(), svf_magic, 4) != 0) throw ParseError(name + ": bad SVF magic (expected \"DSVF\")");
    std::size_t at = 4;
    const auto version = get<std::uint32_t>(b, at);
    at += 4;
    if (version != svf_version) throw ParseError(name + ": unsupported SVF version " + std::to_string(version));
    const auto kind = get<std::uint32_t>(b, at);
    at += 4;
    if (kind > 1) throw ParseError(name + ": unknown SVF kind " + std::to_string(kind));
    const auto order = get<std::int32_t>(b, at);
    at += 4;
    const auto k = get<std::int32_t>(b, at);
    at += 4;
    std::array<std::int32_t, 3> cells{};
    std::array<double, 3> spacing{}, origin{};
    for (auto &c : cells) c = get<std::int32_t>(b, at), at += 4;
    for (auto &s : spacing) s = get<double>(b, at), at += 8;
    for (auto &o : origin) o = get<double>(b, at), at += 8;
    const auto count = get<std::uint64_t>(b, at);
    at += 8;

    SplineSVF field = [&] {
        try {
            ControlGrid grid({KnotAxis(spacing[0], cells[0], origin[0]), KnotAxis(spacing[1], cells[1], origin[1]),
                              KnotAxis(spacing[2], cells[2], origin[2])},
                             k);
            return kind == 1 ? SplineSVF(SplineSVF::Kind::divergence_conforming, grid)
                             : SplineSVF(SplineSVF::Kind::classical, grid, order);
        } catch (const Error &e) {
            throw ParseError(name + ": invalid SVF grid metadata: " + e.what());
        }
    }();
    if (kind == 1 && order != k) throw ParseError(name + ": order field disagrees with the divergence order");
    if (count != field.parameter_count()) {
        throw ParseError(name + ": coefficient count " + std::to_string(count) + " does not match the grid (" +
                         std::to_string(field.parameter_count()) + ")");
    }
    if (b.size() != at + 8 * count) throw ParseError(name + ": SVF payload size mismatch (truncated or trailing bytes)");
    std::memcpy(field.parameters().data(), b.data() + at, 8 * count);
    return field;
}

std::string svf_json(const SplineSVF &field) {
    using nlohmann::json;
    const ControlGrid &g = field.grid();
    json j;
    j["format"] = "DSVF";
    j["version"] = svf_version;
    j["kind"] = field.is_divergence_conforming() ? "divergence_conforming" : "classical";
    j["order"] = field.order();
    j["divergence_order"] = g.divergence_order().value();
    j["cells"] = {g.cells()[0], g.cells()[1], g.cells()[2]};
    j["spacing"] = {g.spacing()[0], g.spacing()[1], g.spacing()[2]};
    j["origin"] = {g.axis(0).origin(), g.axis(1).origin(), g.axis(2).origin()};
    const char *names[3] = {"phi_x", "phi_y", "phi_z"};
    const auto theta = field.parameters();
    for (int c = 0; c < 3; ++c) {
        const ComponentBasis &b = field.component(c);
        json comp;
        comp["orders"] = {b.orders[0], b.orders[1], b.orders[2]};
        comp["lattice"] = {b.lattice.size[0], b.lattice.size[1], b.lattice.size[2]};
        comp["offset"] = b.offset;
        comp["coefficients"] = std::vector<double>(theta.begin() + static_cast<std::ptrdiff_t>(b.offset),
                                                   theta.begin() + static_cast<std::ptrdiff_t>(b.offset + b.lattice.count()));
        j["components"][names[c]] = std::move(comp);
    }
    return j.dump(2);
}

void write_svf_with_sidecar(const SplineSVF &field, const std::filesystem::path &path) {
    write_svf(field, path);
    std::ofstream out(path.string() + ".json", std::ios::trunc);
    if (!out) throw ParseError("cannot open " + path.string() + ".json for writing");
    out << svf_json(field) << '\n';
}

} // namespace divreg
