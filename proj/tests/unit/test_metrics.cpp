#include <cmath>
#include <random>

#include "doctest.h"

#include "divreg/metrics.hpp"
#include "helpers.hpp"

using namespace divreg;
using namespace divreg::testing;

namespace {

// Central differences of the measure at `probes` random voxels.
void check_voxel_gradient(const SimilarityMeasure &m, const Image3D &warped, int probes, double h, double rel_tol,
                          std::uint64_t seed) {
    std::vector<double> grad(warped.size());
    m.evaluate(warped.data(), grad);
    double gmax = 0.0;
    for (double g : grad) gmax = std::max(gmax, std::abs(g));
    REQUIRE(gmax > 0.0);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, warped.size() - 1);
    std::vector<double> w(warped.data().begin(), warped.data().end());
    for (int p = 0; p < probes; ++p) {
        const std::size_t i = pick(rng);
        const double x = w[i];
        w[i] = x + h;
        const double up = m.evaluate(w, {});
        w[i] = x - h;
        const double dn = m.evaluate(w, {});
        w[i] = x;
        const double fd = (up - dn) / (2 * h);
        // Relative to the largest gradient entry so tiny entries are not over-weighted.
        CHECK(std::abs(fd - grad[i]) <= rel_tol * std::max(std::abs(grad[i]), 1e-2 * gmax));
    }
}

} // namespace

TEST_CASE("similarity names") {
    CHECK(parse_similarity("lncc") == Similarity::lncc);
    CHECK(to_string(Similarity::nmi) == "nmi");
    CHECK_THROWS_AS(parse_similarity("mi"), ConfigError);
}

TEST_CASE("ssd") {
    const VoxelGeometry g = cube_geometry(8);
    const Image3D a = smooth_random_image(g, 1), b = smooth_random_image(g, 2);
    const auto same = ssd_value_grad(a, a);
    CHECK(same.value == 0.0);
    for (double x : same.gradient) CHECK(x == 0.0);
    CHECK(ssd_value_grad(Image3D(g, 0.0), Image3D(g, 3.0)).value == doctest::Approx(9.0).epsilon(1e-15));
    CHECK_THROWS_AS(ssd_value_grad(a, Image3D(cube_geometry(7))), GeometryError);
    check_voxel_gradient(SimilarityMeasure(Similarity::ssd, a, b), b, 20, 1e-3, 1e-7, 3);
}

TEST_CASE("lncc") {
    const VoxelGeometry g = cube_geometry(12, 1.5);
    const Image3D a = smooth_random_image(g, 4), b = smooth_random_image(g, 5);
    CHECK(std::abs(lncc_value_grad(a, a, 3.0).value) <= 1e-12);
    Image3D affine(g);
    for (std::size_t i = 0; i < a.size(); ++i) affine[i] = 2.5 * a[i] - 40.0;
    CHECK(std::abs(lncc_value_grad(a, affine, 3.0).value) <= 1e-12);
    Image3D negated(g);
    for (std::size_t i = 0; i < a.size(); ++i) negated[i] = -a[i];
    CHECK(std::abs(lncc_value_grad(a, negated, 3.0).value) <= 1e-12); // squared correlation
    const double unrelated = lncc_value_grad(a, b, 3.0).value;
    CHECK(unrelated > 0.2);
    CHECK(unrelated <= 1.0);
    CHECK_THROWS_AS(lncc_value_grad(a, b, 0.0), ConfigError);

    SimilarityMeasure::Options o;
    o.lncc_sigma_mm = 3.0;
    check_voxel_gradient(SimilarityMeasure(Similarity::lncc, a, b, o), b, 20, 1e-4, 1e-5, 6);
}

TEST_CASE("nmi") {
    const VoxelGeometry g = cube_geometry(10);
    std::mt19937_64 rng(7);

    // Labels on exact bin positions: with 64 bins and range [0, 59] one intensity unit is one bin.
    const std::vector<double> labels{0, 5, 11, 20, 26, 33, 41, 47, 52, 59};
    const std::vector<double> relabel{0, 6, 10, 17, 25, 30, 38, 45, 51, 59};
    std::uniform_int_distribution<std::size_t> pick(0, labels.size() - 1);
    Image3D ref(g), same_bins(g);
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const std::size_t l = pick(rng);
        ref[i] = labels[l];
        same_bins[i] = relabel[l];
    }

    SUBCASE("linear Parzen window: identical and relabelled images give 2") {
        CHECK(nmi_value_grad(ref, ref, 64, 1).value == doctest::Approx(-2.0).epsilon(1e-6));
        CHECK(nmi_value_grad(ref, same_bins, 64, 1).value == doctest::Approx(-2.0).epsilon(1e-6));
        Image3D shuffled(g);
        std::vector<double> perm = labels;
        std::reverse(perm.begin(), perm.end());
        for (std::size_t i = 0; i < ref.size(); ++i) {
            shuffled[i] = perm[static_cast<std::size_t>(std::find(labels.begin(), labels.end(), ref[i]) - labels.begin())];
        }
        CHECK(nmi_value_grad(ref, shuffled, 64, 1).value == doctest::Approx(-2.0).epsilon(1e-6));
    }
    SUBCASE("cubic Parzen window: relabelling well-separated bins leaves NMI unchanged") {
        const double self = nmi_value_grad(ref, ref, 64, 3).value;
        CHECK(nmi_value_grad(ref, same_bins, 64, 3).value == doctest::Approx(self).epsilon(1e-6));
        CHECK(self < -1.0);
        CHECK(self > -2.0); // the smoothing kernel spreads the joint histogram
    }
    SUBCASE("dependence lowers NMI") {
        const Image3D a = smooth_random_image(g, 8), b = smooth_random_image(g, 9);
        CHECK(nmi_value_grad(a, b, 32).value > nmi_value_grad(a, a, 32).value + 0.1);
    }
    SUBCASE("degenerate constant images") {
        const auto r = nmi_value_grad(Image3D(g, 5.0), Image3D(g, 5.0), 16, 1);
        CHECK(r.degenerate);
        CHECK(std::isfinite(r.value));
        CHECK_THROWS_AS(nmi_value_grad(ref, ref, 4), ConfigError);
        CHECK_THROWS_AS(nmi_value_grad(ref, ref, 16, 2), ConfigError);
    }
    SUBCASE("gradient") {
        const Image3D a = smooth_random_image(g, 10), b = smooth_random_image(g, 11, 1.5, 20.0, 80.0);
        // Source range wider than the probed image so no probe sits on a clamp.
        const Image3D source = smooth_random_image(g, 11, 1.5, 10.0, 90.0);
        SimilarityMeasure::Options o;
        o.nmi_bins = 32;
        check_voxel_gradient(SimilarityMeasure(Similarity::nmi, a, source, o), b, 20, 1e-4, 1e-3, 12);
    }
}

TEST_CASE("bending energy") {
    const ControlGrid grid = unit_grid(4, 3.0);
    const VoxelGeometry samples = cube_geometry(6, 2.0, 1.0);

    DivConformingSVF zero(grid);
    CHECK(bending_energy_value_grad(zero, samples).value == 0.0);

    // Coefficients affine in the storage index reproduce an affine velocity.
    DivConformingSVF affine(grid);
    for (int c = 0; c < 3; ++c) {
        const auto &b = affine.component(c);
        for (std::size_t i = 0; i < b.lattice.count(); ++i) {
            const Index3 s = b.lattice.unravel(i);
            affine.parameters()[b.offset + i] = 0.3 * s[0] - 0.2 * s[1] + 0.7 * s[2] + c;
        }
    }
    CHECK(std::abs(bending_energy_value_grad(affine, samples).value) <= 1e-10);

    for (auto kind : {SplineSVF::Kind::divergence_conforming, SplineSVF::Kind::classical}) {
        SplineSVF f(kind, grid);
        randomize(f, 14);
        const auto r = bending_energy_value_grad(f, samples);
        CHECK(r.value > 0.0);
        // Quadratic in theta: central differences are exact up to rounding.
        const double h = 1e-3;
        double gmax = 0.0;
        for (double g : r.gradient) gmax = std::max(gmax, std::abs(g));
        for (std::size_t i = 0; i < f.parameter_count(); i += 7) {
            SplineSVF p = f;
            p.parameters()[i] += h;
            const double up = BendingEnergy(samples).evaluate(p, {});
            p.parameters()[i] -= 2 * h;
            const double dn = BendingEnergy(samples).evaluate(p, {});
            CHECK(std::abs((up - dn) / (2 * h) - r.gradient[i]) <= 1e-7 * std::max(std::abs(r.gradient[i]), 1e-3 * gmax));
        }
        // Energy is homogeneous of degree two.
        CHECK(bending_energy_value_grad(scaled(f, 2.0), samples).value == doctest::Approx(4.0 * r.value).epsilon(1e-12));
    }
}
