#include "divreg/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "divreg/error.hpp"

namespace divreg {

namespace {

constexpr double pi = std::numbers::pi;

void normalise(Image3D &img, double low, double high) {
    auto [a, b] = img.range();
    if (b - a <= 0.0) {
        for (double &x : img.data()) x = low;
        return;
    }
    for (double &x : img.data()) x = low + (x - a) / (b - a) * (high - low);
}

Image3D sinusoid_field(const VoxelGeometry &g, std::mt19937_64 &rng) {
    std::uniform_real_distribution<double> phase(0.0, 2.0 * pi);
    const double length = g.dims[0] * g.spacing[0];
    constexpr std::array<double, 3> freq{1.5, 3.0, 6.0};
    constexpr std::array<double, 3> amp{1.0, 0.5, 0.25};
    std::array<std::array<double, 3>, 3> ph{};
    for (auto &o : ph)
        for (double &p : o) p = phase(rng);
    Image3D img(g);
    for (std::size_t idx = 0; idx < g.voxel_count(); ++idx) {
        const Vec3 x = g.center(idx);
        double v = 0.0;
        for (std::size_t o = 0; o < 3; ++o) {
            double p = amp[o];
            for (int d = 0; d < 3; ++d) p *= std::sin(2.0 * pi * freq[o] * x[d] / length + ph[o][static_cast<std::size_t>(d)]);
            v += p;
        }
        img[idx] = v;
    }
    return img;
}

} // namespace

PhantomKind parse_phantom_kind(const std::string &name) {
    if (name == "sphere-shells") return PhantomKind::sphere_shells;
    if (name == "sinusoid-texture") return PhantomKind::sinusoid_texture;
    if (name == "checker-smooth") return PhantomKind::checker_smooth;
    throw ConfigError("unknown phantom kind '" + name + "' (sphere-shells, sinusoid-texture, checker-smooth)");
}

std::string to_string(PhantomKind kind) {
    switch (kind) {
    case PhantomKind::sphere_shells: return "sphere-shells";
    case PhantomKind::sinusoid_texture: return "sinusoid-texture";
    default: return "checker-smooth";
    }
}

void PhantomSpec::validate() const {
    if (size < 8) throw ConfigError("phantom size must be at least 8 voxels");
    if (!(spacing > 0.0)) throw ConfigError("phantom spacing must be positive");
    if (!(smoothing_mm >= 0.0) || !(texture >= 0.0)) throw ConfigError("smoothing and texture must be non-negative");
    if (!(high > low)) throw ConfigError("phantom intensity range is empty");
    if (!(transfer_cycles > 0.0)) throw ConfigError("transfer_cycles must be positive");
}

VoxelGeometry PhantomSpec::geometry() const {
    VoxelGeometry g;
    g.dims = {size, size, size};
    g.spacing = Vec3::Constant(spacing);
    g.origin = Vec3::Zero();
    return g;
}

double sphere_shell_outer_radius(const PhantomSpec &spec) { return 0.38 * spec.size * spec.spacing; }

Vec3 sphere_shell_center(const PhantomSpec &spec) {
    std::mt19937_64 rng(spec.seed ^ 0x5eedULL);
    std::uniform_real_distribution<double> jitter(-1.0, 1.0);
    const double mid = 0.5 * (spec.size - 1) * spec.spacing;
    Vec3 c;
    for (int d = 0; d < 3; ++d) c[d] = mid + jitter(rng) * spec.spacing;
    return c;
}

Phantom make_phantom(const PhantomSpec &spec) {
    spec.validate();
    const VoxelGeometry g = spec.geometry();
    std::mt19937_64 rng(spec.seed);
    Image3D img(g);

    switch (spec.kind) {
    case PhantomKind::sphere_shells: {
        const Vec3 c = sphere_shell_center(spec);
        const double r0 = sphere_shell_outer_radius(spec);
        constexpr std::array<double, 5> radius{1.0, 0.8, 0.6, 0.4, 0.2};
        constexpr std::array<double, 5> level{0.3, 0.7, 0.45, 0.9, 0.6};
        struct Ball {
            Vec3 center;
            double radius, level;
        };
        std::vector<Ball> inclusions;
        std::uniform_real_distribution<double> unit(-1.0, 1.0), size(0.1, 0.2), tone(0.0, 1.0);
        while (inclusions.size() < 6) {
            const Vec3 p(unit(rng), unit(rng), unit(rng));
            if (p.norm() > 1.0) continue;
            const double r = size(rng) * r0;
            const Vec3 at = c + p * (0.7 * r0);
            if ((at - c).norm() + r >= r0) continue;
            inclusions.push_back({at, r, tone(rng) < 0.5 ? 1.0 : 0.15});
        }
        for (std::size_t idx = 0; idx < g.voxel_count(); ++idx) {
            const Vec3 x = g.center(idx);
            const double r = (x - c).norm();
            double v = 0.0;
            for (std::size_t s = 0; s < radius.size(); ++s)
                if (r <= radius[s] * r0) v = level[s];
            for (const Ball &b : inclusions)
                if ((x - b.center).norm() <= b.radius) v = b.level;
            img[idx] = spec.low + v * (spec.high - spec.low);
        }
        break;
    }
    case PhantomKind::sinusoid_texture:
        img = sinusoid_field(g, rng);
        normalise(img, spec.low, spec.high);
        break;
    case PhantomKind::checker_smooth: {
        std::uniform_real_distribution<double> phase(0.0, 2.0 * pi);
        const double period = 0.25 * spec.size * spec.spacing;
        const Vec3 ph(phase(rng), phase(rng), phase(rng));
        for (std::size_t idx = 0; idx < g.voxel_count(); ++idx) {
            const Vec3 x = g.center(idx);
            double v = 1.0;
            for (int d = 0; d < 3; ++d) v *= std::tanh(std::sin(2.0 * pi * x[d] / period + ph[d]) / 0.3);
            img[idx] = v;
        }
        normalise(img, spec.low, spec.high);
        break;
    }
    }

    if (spec.texture > 0.0) {
        std::mt19937_64 trng(spec.seed ^ 0x7e47ULL);
        Image3D tex = sinusoid_field(g, trng);
        normalise(tex, -0.5, 0.5);
        const double scale = spec.texture * (spec.high - spec.low);
        for (std::size_t i = 0; i < img.size(); ++i) img[i] += scale * tex[i];
    }
    if (spec.smoothing_mm > 0.0) img = GaussianFilter(g, Vec3::Constant(spec.smoothing_mm)).apply(img);

    Phantom out{img, std::nullopt};
    if (spec.second_modality) {
        Image3D second(g);
        auto [a, b] = img.range();
        const double span = b > a ? b - a : 1.0;
        for (std::size_t i = 0; i < img.size(); ++i) {
            const double t = (img[i] - a) / span;
            second[i] = spec.low + (0.5 - 0.5 * std::cos(2.0 * pi * spec.transfer_cycles * t)) * (spec.high - spec.low);
        }
        out.secondary = std::move(second);
    }
    return out;
}

MaskRegion sphere_mask(const VoxelGeometry &geometry, const Vec3 &center, double radius) {
    MaskRegion m(geometry);
    for (std::size_t idx = 0; idx < geometry.voxel_count(); ++idx) {
        if ((geometry.center(idx) - center).norm() <= radius) {
            const Index3 v = geometry.unravel(idx);
            m.set(v[0], v[1], v[2]);
        }
    }
    return m;
}

MaskRegion central_mask(const VoxelGeometry &geometry, double fraction) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("mask fraction must lie in (0, 1)");
    const Vec3 extent = geometry.upper() - geometry.lower();
    const double volume = extent.prod();
    const double radius = std::cbrt(3.0 * fraction * volume / (4.0 * pi));
    return sphere_mask(geometry, 0.5 * (geometry.lower() + geometry.upper()), radius);
}

namespace {

// sin^2 window over the grid box, evaluated at the center of a basis function's support.
double taper(const KnotAxis &axis, int storage, int order) {
    const int knot = storage - order;
    const double center = axis.origin() + (knot + 0.5 * (order + 1)) * axis.spacing();
    const double t = std::clamp((center - axis.begin()) / (axis.end() - axis.begin()), 0.0, 1.0);
    const double s = std::sin(pi * t);
    return s * s;
}

void random_tapered(SplineSVF &field, std::mt19937_64 &rng, double amplitude) {
    std::normal_distribution<double> n(0.0, 1.0);
    const ControlGrid &g = field.grid();
    for (int c = 0; c < 3; ++c) {
        const ComponentBasis &b = field.component(c);
        for (int k = 0; k < b.lattice.size[2]; ++k)
            for (int j = 0; j < b.lattice.size[1]; ++j)
                for (int i = 0; i < b.lattice.size[0]; ++i) {
                    const double w = taper(g.axis(0), i, b.orders[0]) * taper(g.axis(1), j, b.orders[1]) *
                                     taper(g.axis(2), k, b.orders[2]);
                    field.coefficient(c, i, j, k) = amplitude * w * n(rng);
                }
    }
}

} // namespace

GroundTruth make_ground_truth_svf(const ControlGrid &grid, std::uint64_t seed, double amplitude) {
    if (!(amplitude >= 0.0) || !std::isfinite(amplitude)) throw ConfigError("ground-truth amplitude must be non-negative");
    std::mt19937_64 rng(seed);
    ClassicalSVF classical(grid);
    random_tapered(classical, rng, amplitude);
    DivConformingSVF conforming(grid);
    random_tapered(conforming, rng, amplitude);

    GroundTruth gt{amplitude > 0.0 ? project_classical_at_knots(classical) : classical, conforming, amplitude, 0.0};
    if (amplitude > 0.0) {
        const Lattice psi = conforming.divergence_lattice();
        std::vector<Index3> all;
        all.reserve(psi.count());
        for (std::size_t i = 0; i < psi.count(); ++i) all.push_back(psi.unravel(i));
        const ConstraintSystem sys = assemble_constraints(grid, all);
        gt.conforming.set_parameters(NullSpaceProjector(sys.matrix).project(conforming.parameters()));
    }
    return gt;
}

GroundTruth make_ground_truth_svf(const ControlGrid &grid, std::uint64_t seed, double amplitude,
                                  const VoxelGeometry &geometry, const EulerConfig &euler) {
    double a = amplitude;
    for (int attempt = 0; attempt < 20; ++attempt) {
        GroundTruth gt = make_ground_truth_svf(grid, seed, a);
        const double n = static_cast<double>(geometry.voxel_count());
        const double flagged = std::max(exponential_euler(gt.classical, euler, geometry).flagged_count(),
                                        exponential_euler(gt.conforming, euler, geometry).flagged_count()) / n;
        gt.flagged_fraction = flagged;
        if (flagged <= 0.01) return gt;
        a *= 0.5;
    }
    throw SolverError("could not generate an in-domain ground-truth field");
}

} // namespace divreg
