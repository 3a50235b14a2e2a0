#include <cmath>
#include <random>

#include "doctest.h"

#include "divreg/objective.hpp"
#include "helpers.hpp"

using namespace divreg;
using namespace divreg::testing;

namespace {

struct Problem {
    VoxelGeometry geometry = cube_geometry(8);
    Image3D moving = smooth_random_image(geometry, 21, 1.2);
    Image3D fixed = smooth_random_image(geometry, 22, 1.2);
    // Four cells of 2 mm over the image domain [-0.5, 7.5].
    ControlGrid grid = ControlGrid({KnotAxis(2.0, 4, -0.5), KnotAxis(2.0, 4, -0.5), KnotAxis(2.0, 4, -0.5)});
};

std::vector<double> random_theta(std::size_t n, double amplitude, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, amplitude);
    std::vector<double> t(n);
    for (double &x : t) x = d(rng);
    return t;
}

// Central differences on the listed parameters; returns the largest error relative to the
// largest analytic gradient entry.
double fd_error(RegistrationObjective &obj, std::vector<double> theta, const std::vector<std::size_t> &which, double h) {
    std::vector<double> grad(theta.size());
    obj.evaluate(theta, grad);
    double gmax = 0.0;
    for (std::size_t i : which) gmax = std::max(gmax, std::abs(grad[i]));
    REQUIRE(gmax > 0.0);
    double worst = 0.0;
    for (std::size_t i : which) {
        const double x = theta[i];
        theta[i] = x + h;
        const double up = obj.evaluate(theta, {});
        theta[i] = x - h;
        const double dn = obj.evaluate(theta, {});
        theta[i] = x;
        worst = std::max(worst, std::abs((up - dn) / (2 * h) - grad[i]) / gmax);
    }
    return worst;
}

std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

} // namespace

TEST_CASE("objective configuration") {
    ObjectiveConfig c;
    CHECK(c.similarity_weight == 0.95);
    CHECK(c.bending_weight == 0.05);
    CHECK(c.similarity == Similarity::nmi);
    c.bending_weight = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    Problem p;
    const DivConformingSVF layout(p.grid);
    CHECK_THROWS_AS(RegistrationObjective(p.moving, Image3D(cube_geometry(9)), layout, {}, EulerConfig{}), GeometryError);
}

TEST_CASE("identity problem") {
    Problem p;
    const DivConformingSVF layout(p.grid);
    ObjectiveConfig cfg;
    cfg.similarity = Similarity::ssd;
    cfg.interpolation = Interpolation::trilinear;
    RegistrationObjective obj(p.fixed, p.fixed, layout, cfg, EulerConfig::with_log2_steps(2));
    std::vector<double> theta(layout.parameter_count(), 0.0), grad(theta.size());
    CHECK(obj.evaluate(theta, grad) == 0.0);
    for (double g : grad) CHECK(g == 0.0);
    CHECK(obj.last_terms().bending == 0.0);

    // Cubic interpolation reproduces voxel values only up to rounding.
    cfg.interpolation = Interpolation::cubic;
    RegistrationObjective cubic(p.fixed, p.fixed, layout, cfg, EulerConfig::with_log2_steps(2));
    CHECK(cubic.evaluate(theta, grad) <= 1e-24);
    for (double g : grad) CHECK(std::abs(g) <= 1e-12);

    cfg.similarity = Similarity::lncc;
    cfg.lncc_sigma_mm = 2.0;
    RegistrationObjective lncc(p.fixed, p.fixed, layout, cfg, EulerConfig::with_log2_steps(2));
    CHECK(std::abs(lncc.evaluate(theta, grad)) <= 1e-12);
    for (double g : grad) CHECK(std::abs(g) <= 1e-12);
}

TEST_CASE("full objective gradient matches finite differences") {
    Problem p;
    ObjectiveConfig cfg;
    cfg.lncc_sigma_mm = 2.0;
    cfg.nmi_bins = 32;
    const EulerConfig euler = EulerConfig::with_log2_steps(1);

    SUBCASE("ssd, every parameter") {
        cfg.similarity = Similarity::ssd;
        const DivConformingSVF layout(p.grid);
        RegistrationObjective obj(p.moving, p.fixed, layout, cfg, euler);
        const auto theta = random_theta(layout.parameter_count(), 0.1, 1);
        CHECK(fd_error(obj, theta, all_indices(theta.size()), 1e-5) <= 1e-4);
    }
    SUBCASE("lncc, every parameter") {
        cfg.similarity = Similarity::lncc;
        const DivConformingSVF layout(p.grid);
        RegistrationObjective obj(p.moving, p.fixed, layout, cfg, euler);
        const auto theta = random_theta(layout.parameter_count(), 0.1, 2);
        CHECK(fd_error(obj, theta, all_indices(theta.size()), 1e-5) <= 1e-4);
    }
    SUBCASE("nmi, random parameters") {
        cfg.similarity = Similarity::nmi;
        const DivConformingSVF layout(p.grid);
        RegistrationObjective obj(p.moving, p.fixed, layout, cfg, euler);
        const auto theta = random_theta(layout.parameter_count(), 0.1, 3);
        std::mt19937_64 rng(4);
        std::vector<std::size_t> which(50);
        std::uniform_int_distribution<std::size_t> pick(0, theta.size() - 1);
        for (auto &i : which) i = pick(rng);
        CHECK(fd_error(obj, theta, which, 1e-5) <= 1e-3);
    }
    SUBCASE("classical cubic layout, more Euler steps") {
        cfg.similarity = Similarity::ssd;
        const ClassicalSVF layout(p.grid);
        RegistrationObjective obj(p.moving, p.fixed, layout, cfg, EulerConfig::with_log2_steps(3));
        const auto theta = random_theta(layout.parameter_count(), 0.1, 5);
        CHECK(fd_error(obj, theta, all_indices(theta.size()), 1e-5) <= 1e-4);
    }
}

TEST_CASE("endpoint gradient approximates the exact one") {
    Problem p;
    ObjectiveConfig cfg;
    cfg.similarity = Similarity::ssd;
    const DivConformingSVF layout(p.grid);
    const auto theta = random_theta(layout.parameter_count(), 0.05, 6);
    RegistrationObjective exact(p.moving, p.fixed, layout, cfg, EulerConfig::with_log2_steps(3));
    cfg.gradient = GradientMode::endpoint;
    RegistrationObjective approx(p.moving, p.fixed, layout, cfg, EulerConfig::with_log2_steps(3));
    std::vector<double> ge(theta.size()), ga(theta.size());
    CHECK(exact.evaluate(theta, ge) == approx.evaluate(theta, ga));
    double dot = 0, ne = 0, na = 0;
    for (std::size_t i = 0; i < ge.size(); ++i) {
        dot += ge[i] * ga[i];
        ne += ge[i] * ge[i];
        na += ga[i] * ga[i];
    }
    CHECK(dot / std::sqrt(ne * na) > 0.9);
}

TEST_CASE("objective structure") {
    Problem p;
    const DivConformingSVF layout(p.grid);
    const auto theta = random_theta(layout.parameter_count(), 0.2, 7);
    ObjectiveConfig cfg;
    cfg.nmi_bins = 32;
    const EulerConfig euler = EulerConfig::with_log2_steps(2);

    SUBCASE("linear in the similarity weight") {
        cfg.bending_weight = 0.0;
        cfg.similarity_weight = 1.0;
        RegistrationObjective one(p.moving, p.fixed, layout, cfg, euler);
        cfg.similarity_weight = 2.0;
        RegistrationObjective two(p.moving, p.fixed, layout, cfg, euler);
        CHECK(two.evaluate(theta, {}) == 2.0 * one.evaluate(theta, {}));
    }
    SUBCASE("swapping images and negating the field") {
        RegistrationObjective a(p.moving, p.fixed, layout, cfg, euler);
        RegistrationObjective b(p.fixed, p.moving, layout, cfg, euler);
        std::vector<double> neg(theta.size());
        for (std::size_t i = 0; i < theta.size(); ++i) neg[i] = -theta[i];
        CHECK(std::abs(a.evaluate(theta, {}) - b.evaluate(neg, {})) <= 1e-12);
    }
    SUBCASE("deterministic across thread counts") {
        cfg.threads = 1;
        RegistrationObjective a(p.moving, p.fixed, layout, cfg, euler);
        cfg.threads = 3;
        RegistrationObjective b(p.moving, p.fixed, layout, cfg, euler);
        std::vector<double> ga(theta.size()), gb(theta.size());
        CHECK(a.evaluate(theta, ga) == b.evaluate(theta, gb));
        CHECK(ga == gb);
    }
    SUBCASE("terms") {
        RegistrationObjective a(p.moving, p.fixed, layout, cfg, euler);
        const double v = a.evaluate(theta, {});
        const auto &t = a.last_terms();
        CHECK(v == doctest::Approx(0.95 * (t.forward + t.backward) + 0.05 * t.bending).epsilon(1e-15));
        CHECK(t.bending > 0.0);
        CHECK(t.forward < 0.0); // negative NMI
    }
}
