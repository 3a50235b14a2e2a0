#include <cmath>
#include <random>

#include "doctest.h"

#include "divreg/field.hpp"
#include "helpers.hpp"

using namespace divreg;
using namespace divreg::testing;

namespace {

Vec3 fd_divergence_free_point(const ControlGrid &grid, std::mt19937_64 &rng, double margin) {
    // Keep finite-difference stencils inside the box.
    for (;;) {
        Vec3 p = random_point(grid, rng);
        if ((p - grid.lower()).minCoeff() > margin && (grid.upper() - p).minCoeff() > margin) return p;
    }
}

double distance_to_knot_plane(const ControlGrid &grid, int d, double u) {
    const double t = (u - grid.axis(d).origin()) / grid.axis(d).spacing();
    return std::abs(t - std::round(t)) * grid.axis(d).spacing();
}

} // namespace

TEST_CASE("grid construction rules") {
    CHECK_THROWS_AS(ControlGrid({KnotAxis(1, 3), KnotAxis(1, 6), KnotAxis(1, 6)}), ConfigError);
    CHECK_THROWS_AS(ControlGrid({KnotAxis(1, 6), KnotAxis(1, 6), KnotAxis(1, 6)}, 1), ConfigError);
    CHECK_THROWS_AS(ControlGrid({KnotAxis(1, 6), KnotAxis(1, 6), KnotAxis(1, 6)}, 3), ConfigError);

    VoxelGeometry g;
    g.dims = {64, 64, 64};
    g.spacing = Vec3(1, 1, 1);
    const ControlGrid grid = ControlGrid::covering(g, 5.0, 2, 4);
    for (int d = 0; d < 3; ++d) {
        CHECK(grid.axis(d).cells() == 16);
        CHECK(grid.axis(d).begin() <= g.lower()[d]);
        CHECK(grid.axis(d).end() >= g.upper()[d]);
    }
    CHECK(grid.coarsened().coarsened().axis(0).cells() == 4);
    CHECK(grid.coarsened().refined() == grid);
}

TEST_CASE("velocity evaluation") {
    const ControlGrid grid = unit_grid(6);
    SplineSVF f(SplineSVF::Kind::divergence_conforming, grid);
    std::mt19937_64 rng(1);

    SUBCASE("zero field") {
        for (int n = 0; n < 20; ++n) CHECK(eval_velocity(f, random_point(grid, rng)).norm() == 0.0);
    }
    SUBCASE("constant coefficients reproduce the constant") {
        const Vec3 c(0.3, -1.2, 2.5);
        for (int comp = 0; comp < 3; ++comp) {
            const auto &b = f.component(comp);
            for (std::size_t i = 0; i < b.lattice.count(); ++i) f.parameters()[b.offset + i] = c[comp];
        }
        for (int n = 0; n < 50; ++n) CHECK((eval_velocity(f, random_point(grid, rng)) - c).norm() <= 1e-14);
    }
    SUBCASE("windowed sum equals exhaustive sum") {
        for (auto kind : {SplineSVF::Kind::divergence_conforming, SplineSVF::Kind::classical}) {
            SplineSVF r(kind, grid);
            randomize(r, 42);
            for (int n = 0; n < 200; ++n) {
                const Vec3 p = random_point(grid, rng);
                CHECK((eval_velocity(r, p) - brute_force_velocity(r, p)).cwiseAbs().maxCoeff() <= 1e-12);
            }
        }
    }
    SUBCASE("outside the box") {
        CHECK_THROWS_AS(eval_velocity(f, Vec3(-0.1, 1, 1)), DomainError);
        CHECK_THROWS_AS(eval_jacobian(f, Vec3(1, 6.01, 1)), DomainError);
        CHECK_NOTHROW(eval_velocity(f, Vec3(0, 6, 3)));
    }
}

TEST_CASE("divergence") {
    const ControlGrid grid({KnotAxis(1.0, 6, 0.0), KnotAxis(0.8, 6, -1.0), KnotAxis(1.3, 5, 2.0)});
    std::mt19937_64 rng(2);

    SUBCASE("classical fields have no divergence spline") {
        ClassicalSVF c(grid);
        CHECK_THROWS_AS(eval_divergence(c, Vec3(1, 1, 3)), UnsupportedOperation);
        CHECK_THROWS_AS(divergence_coefficients(c), UnsupportedOperation);
    }
    SUBCASE("constant field is divergence free") {
        DivConformingSVF f(grid);
        for (double &x : f.parameters()) x = 1.7;
        for (double psi : divergence_coefficients(f)) CHECK(std::abs(psi) <= 1e-14);
        for (int n = 0; n < 50; ++n) CHECK(std::abs(eval_divergence(f, random_point(grid, rng))) <= 1e-13);
    }
    SUBCASE("matches central differences of the velocity") {
        DivConformingSVF f(grid);
        randomize(f, 9);
        const double h = 1e-4;
        for (int n = 0; n < 500; ++n) {
            const Vec3 p = fd_divergence_free_point(grid, rng, 2 * h);
            double fd = 0.0;
            for (int d = 0; d < 3; ++d) {
                Vec3 e = Vec3::Zero();
                e[d] = h;
                fd += (eval_velocity(f, p + e)[d] - eval_velocity(f, p - e)[d]) / (2 * h);
            }
            CHECK(std::abs(eval_divergence(f, p) - fd) <= 1e-5);
        }
    }
    SUBCASE("vanishing psi gives machine-precision divergence") {
        const SplineSVF f = divergence_free_field(grid, 77);
        double max_psi = 0.0;
        for (double psi : divergence_coefficients(f)) max_psi = std::max(max_psi, std::abs(psi));
        CHECK(max_psi <= 1e-13);
        double worst = 0.0;
        for (int n = 0; n < 100000; ++n) worst = std::max(worst, std::abs(eval_divergence(f, random_point(grid, rng))));
        CHECK(worst <= 1e-12);
    }
    SUBCASE("divergence is the scalar order-k spline with coefficients psi") {
        DivConformingSVF f(grid);
        randomize(f, 10);
        const auto psi = divergence_coefficients(f);
        const Lattice lat = f.divergence_lattice();
        const SplineOrder k = grid.divergence_order();
        for (int n = 0; n < 1000; ++n) {
            const Vec3 p = random_point(grid, rng);
            double scalar = 0.0;
            for (int c = 0; c < lat.size[2]; ++c)
                for (int b = 0; b < lat.size[1]; ++b)
                    for (int a = 0; a < lat.size[0]; ++a) {
                        scalar += eval_knot_basis(grid.axis(0), a - 2, k, p[0]) * eval_knot_basis(grid.axis(1), b - 2, k, p[1]) *
                                  eval_knot_basis(grid.axis(2), c - 2, k, p[2]) * psi[lat.index(a, b, c)];
                    }
            CHECK(std::abs(eval_divergence(f, p) - scalar) <= 1e-12);
        }
    }
}

TEST_CASE("jacobian") {
    const ControlGrid grid = unit_grid(6, 1.5, -2.0);
    std::mt19937_64 rng(3);
    DivConformingSVF zero(grid);
    CHECK(eval_jacobian(zero, Vec3(1, 1, 1)).norm() == 0.0);

    DivConformingSVF f(grid);
    randomize(f, 12);
    const double h = 1e-4;
    int compared = 0;
    for (int n = 0; n < 200; ++n) {
        const Vec3 p = fd_divergence_free_point(grid, rng, 2 * h);
        const Mat3 j = eval_jacobian(f, p);
        CHECK(std::abs(j.trace() - eval_divergence(f, p)) <= 1e-13);
        // Cross-axis derivatives of the quadratic factors have kinks on knot planes.
        bool near_knot = false;
        for (int d = 0; d < 3; ++d) near_knot = near_knot || distance_to_knot_plane(grid, d, p[d]) < 2 * h;
        if (near_knot) continue;
        for (int d = 0; d < 3; ++d) {
            Vec3 e = Vec3::Zero();
            e[d] = h;
            const Vec3 fd = (eval_velocity(f, p + e) - eval_velocity(f, p - e)) / (2 * h);
            CHECK((j.col(d) - fd).cwiseAbs().maxCoeff() <= 1e-5);
        }
        ++compared;
    }
    CHECK(compared > 190);
}

TEST_CASE("hessians and scatter are consistent with evaluation") {
    const ControlGrid grid = unit_grid(6);
    std::mt19937_64 rng(4);
    for (auto kind : {SplineSVF::Kind::divergence_conforming, SplineSVF::Kind::classical}) {
        SplineSVF f(kind, grid);
        randomize(f, 5);
        FieldEvaluator ev(f);
        const double h = 1e-5;
        for (int n = 0; n < 100; ++n) {
            const Vec3 p = fd_divergence_free_point(grid, rng, 2 * h);
            bool near_knot = false;
            for (int d = 0; d < 3; ++d) near_knot = near_knot || distance_to_knot_plane(grid, d, p[d]) < 2 * h;
            if (near_knot) continue;
            PointStencil s;
            ev.prepare(p, 2, s);
            const auto hs = ev.hessians(s);
            for (int d = 0; d < 3; ++d) {
                Vec3 e = Vec3::Zero();
                e[d] = h;
                const Mat3 fd = (eval_jacobian(f, p + e) - eval_jacobian(f, p - e)) / (2 * h);
                for (int c = 0; c < 3; ++c) CHECK((hs[c].col(d) - fd.row(c).transpose()).cwiseAbs().maxCoeff() <= 1e-5);
            }
        }
        // <scatter(w), theta> = w . v(p) and the Hessian analogue.
        for (int n = 0; n < 20; ++n) {
            const Vec3 p = random_point(grid, rng);
            PointStencil s;
            ev.prepare(p, 2, s);
            const Vec3 w(0.3, -0.7, 1.1);
            std::vector<double> g(f.parameter_count(), 0.0);
            ev.scatter(s, w, g);
            double dot = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * f.parameters()[i];
            CHECK(dot == doctest::Approx(w.dot(ev.velocity(s))).epsilon(1e-12));

            std::array<Mat3, 3> W;
            for (auto &m : W) m = Mat3::Random();
            std::fill(g.begin(), g.end(), 0.0);
            ev.scatter_hessian(s, W, g);
            dot = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * f.parameters()[i];
            const auto hs = ev.hessians(s);
            double expected = 0.0;
            for (int c = 0; c < 3; ++c) expected += W[c].cwiseProduct(hs[c]).sum();
            CHECK(dot == doctest::Approx(expected).epsilon(1e-11));
        }
    }
}

TEST_CASE("parameter vector") {
    const ControlGrid grid = unit_grid(5);
    DivConformingSVF zero(grid);
    for (double x : coefficient_vector(zero)) CHECK(x == 0.0);
    // (n + 3)(n + 2)^2 per component for n = 5 cells and divergence order 2.
    CHECK(zero.parameter_count() == 3u * 8u * 7u * 7u);

    DivConformingSVF f(grid);
    randomize(f, 6);
    const auto theta = coefficient_vector(f);
    const SplineSVF back = from_coefficient_vector(f, theta);
    CHECK(std::equal(theta.begin(), theta.end(), back.parameters().begin()));
    std::vector<double> wrong(theta.size() + 1);
    CHECK_THROWS_AS(from_coefficient_vector(f, wrong), ShapeError);
    CHECK_THROWS_AS(DivConformingSVF(grid, std::vector<double>(3)), ShapeError);
}

TEST_CASE("linearity and locality") {
    const ControlGrid grid = unit_grid(6);
    std::mt19937_64 rng(8);
    DivConformingSVF a(grid), b(grid);
    randomize(a, 1);
    randomize(b, 2);
    std::vector<double> mix(a.parameter_count());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 2.5 * a.parameters()[i] - 0.5 * b.parameters()[i];
    const SplineSVF m = from_coefficient_vector(a, mix);
    for (int n = 0; n < 100; ++n) {
        const Vec3 p = random_point(grid, rng);
        CHECK((eval_velocity(m, p) - (2.5 * eval_velocity(a, p) - 0.5 * eval_velocity(b, p))).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK(std::abs(eval_divergence(m, p) - (2.5 * eval_divergence(a, p) - 0.5 * eval_divergence(b, p))) <= 1e-12);
        CHECK((eval_jacobian(m, p) - (2.5 * eval_jacobian(a, p) - 0.5 * eval_jacobian(b, p))).cwiseAbs().maxCoeff() <= 1e-12);
    }

    // Bump the Y coefficient at storage (3, 4, 2): orders (2, 3, 2) put its support on
    // knots [1, 4] x [1, 5] x [0, 3].
    DivConformingSVF bump(grid);
    bump.coefficient(1, 3, 4, 2) = 1.0;
    for (int n = 0; n < 2000; ++n) {
        const Vec3 p = random_point(grid, rng);
        const bool inside = p[0] > 1 && p[0] < 4 && p[1] > 1 && p[1] < 5 && p[2] > 0 && p[2] < 3;
        const Vec3 v = eval_velocity(bump, p);
        if (!inside) CHECK(v.norm() == 0.0);
        CHECK(v[0] == 0.0);
        CHECK(v[2] == 0.0);
    }
}

TEST_CASE("dyadic refinement preserves the field") {
    const ControlGrid grid({KnotAxis(2.0, 4, -1.0), KnotAxis(1.5, 5, 0.0), KnotAxis(1.0, 4, 3.0)});
    std::mt19937_64 rng(13);
    for (auto kind : {SplineSVF::Kind::divergence_conforming, SplineSVF::Kind::classical}) {
        SplineSVF f(kind, grid);
        randomize(f, 21);
        const SplineSVF fine = refine(f);
        CHECK(fine.grid() == grid.refined());
        for (int n = 0; n < 300; ++n) {
            const Vec3 p = random_point(grid, rng);
            CHECK((eval_velocity(fine, p) - eval_velocity(f, p)).cwiseAbs().maxCoeff() <= 1e-12);
        }
    }
    // Divergence-free stays divergence-free.
    const SplineSVF free = divergence_free_field(grid, 5);
    for (double psi : divergence_coefficients(refine(free))) CHECK(std::abs(psi) <= 1e-12);
}
