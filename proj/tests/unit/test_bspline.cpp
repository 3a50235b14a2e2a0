#include <cmath>
#include <random>

#include "doctest.h"

#include "divreg/bspline.hpp"

using namespace divreg;

namespace {

// Composite Simpson on [a, b] with n (even) panels.
template <class F> double simpson(F f, double a, double b, int n) {
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
    return s * h / 3.0;
}

// Simpson applied piece by piece between half-integer nodes, with the piece ends pulled
// inward by 1e-13 so the one-sided limits are used at the (possibly discontinuous) joints.
template <class F> double piecewise_simpson(F f) {
    const double eta = 1e-13;
    double total = 0.0;
    for (int i = -5; i < 5; ++i) total += simpson(f, 0.5 * i + eta, 0.5 * (i + 1) - eta, 20);
    return total;
}

// Distance from t to the nearest breakpoint of B^k (integers for odd k, half-integers for even k).
double breakpoint_distance(int k, double t) {
    const double shift = (k % 2 == 0) ? 0.5 : 0.0;
    const double u = t - shift;
    return std::abs(u - std::round(u));
}

} // namespace

TEST_CASE("closed-form values") {
    CHECK(eval_centered(SplineOrder(3), 0.0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(eval_centered(SplineOrder(1), 0.0) == 1.0);
    CHECK(eval_centered(SplineOrder(1), 1.0) == 0.0);
    CHECK(eval_centered(SplineOrder(1), -1.0) == 0.0);
    CHECK(eval_centered(SplineOrder(2), 0.0) == 0.75);
    CHECK(eval_centered(SplineOrder(3), 1.0) == doctest::Approx(1.0 / 6.0));
    // half-open order-0 cell
    CHECK(eval_centered(SplineOrder(0), -0.5) == 1.0);
    CHECK(eval_centered(SplineOrder(0), 0.5) == 0.0);
}

TEST_CASE("invalid orders are rejected") {
    CHECK_THROWS_AS(SplineOrder(4), ConfigError);
    CHECK_THROWS_AS(SplineOrder(-1), ConfigError);
    CHECK_THROWS_AS(eval_centered_derivative(SplineOrder(0), 0.1), ConfigError);
    CHECK_THROWS_AS(eval_centered_second_derivative(SplineOrder(1), 0.1), ConfigError);
}

TEST_CASE("integer shifts of B^2 sum to one") {
    for (int s = 0; s <= 400; ++s) {
        const double t = -2.0 + 4.0 * s / 400.0;
        double sum = 0.0;
        for (int m = -4; m <= 4; ++m) sum += eval_centered(SplineOrder(2), t - m);
        CHECK(std::abs(sum - 1.0) <= 1e-14);
    }
}

TEST_CASE("partition of unity, nonnegativity and unit integral for every order") {
    for (int k = 0; k <= 3; ++k) {
        const SplineOrder order(k);
        for (int s = 0; s <= 1000; ++s) {
            const double t = -3.0 + 6.0 * s / 1000.0;
            double sum = 0.0;
            for (int m = -5; m <= 5; ++m) {
                const double v = eval_centered(order, t - m);
                CHECK(v >= 0.0);
                sum += v;
            }
            CHECK(std::abs(sum - 1.0) <= 1e-13);
        }
        const double integral = piecewise_simpson([&](double t) { return eval_centered(order, t); });
        CHECK(std::abs(integral - 1.0) <= 1e-10);
    }
}

TEST_CASE("derivative recurrence") {
    CHECK(eval_centered_derivative(SplineOrder(3), 0.0) == 0.0);
    CHECK(eval_centered_derivative(SplineOrder(2), 0.5) == -1.0);

    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> uni(-2.0, 2.0);
    const double h = 1e-4;
    for (int k = 1; k <= 3; ++k) {
        const SplineOrder order(k);
        int checked = 0;
        for (int n = 0; n < 1000; ++n) {
            const double t = uni(rng);
            // The derivative (k = 1) or its slope (k = 2) jumps at breakpoints; central
            // differences straddling one are not a valid oracle.
            if (k < 3 && breakpoint_distance(k, t) < 2 * h) continue;
            const double fd = (eval_centered(order, t + h) - eval_centered(order, t - h)) / (2 * h);
            CHECK(std::abs(eval_centered_derivative(order, t) - fd) <= 1e-6);
            ++checked;
        }
        CHECK(checked > 950);
    }
}

TEST_CASE("second derivative matches differences of the first") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> uni(-2.0, 2.0);
    const double h = 1e-5;
    for (int n = 0; n < 500; ++n) {
        const double t = uni(rng);
        if (breakpoint_distance(3, t) < 2 * h) continue;
        const double fd = (eval_centered_derivative(SplineOrder(3), t + h) - eval_centered_derivative(SplineOrder(3), t - h)) / (2 * h);
        CHECK(std::abs(eval_centered_second_derivative(SplineOrder(3), t) - fd) <= 1e-6);
    }
}

TEST_CASE("knot basis on an axis") {
    const KnotAxis unit(1.0, 6, 0.0);
    CHECK(eval_knot_basis(unit, 0, SplineOrder(1), 1.0) == 1.0);
    CHECK(eval_knot_basis(unit, 0, SplineOrder(3), 0.0) == 0.0);
    CHECK(eval_knot_basis(unit, 0, SplineOrder(3), 4.0) == 0.0);
    CHECK_THROWS_AS(eval_knot_basis(unit, -4, SplineOrder(3), 1.0), IndexError);
    CHECK_THROWS_AS(eval_knot_basis(unit, 6, SplineOrder(3), 1.0), IndexError);
    CHECK(unit.storage_index(-3, SplineOrder(3)) == 0);
    CHECK(unit.knot_index(0, SplineOrder(2)) == -2);

    const KnotAxis half(0.5, 8, -1.0);
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> pick(-2, 7);
    std::uniform_real_distribution<double> uni(-2.5, 4.0);
    for (int n = 0; n < 1000; ++n) {
        const int i = pick(rng);
        const double u = uni(rng);
        const double expected = eval_centered(SplineOrder(2), (u - half.knot(i)) / 0.5 - 1.5);
        CHECK(eval_knot_basis(half, i, SplineOrder(2), u) == expected);
    }
}

TEST_CASE("knot basis partition of unity and open supports") {
    const KnotAxis axis(0.7, 9, 1.3);
    for (int k = 0; k <= 3; ++k) {
        const SplineOrder order(k);
        // The order-0 box is half-open, so its partition covers [begin, end).
        const int last = k == 0 ? 499 : 500;
        for (int s = 0; s <= last; ++s) {
            const double u = axis.begin() + (axis.end() - axis.begin()) * s / 500.0;
            double sum = 0.0;
            for (int i = KnotAxis::first_index(order); i <= axis.last_index(); ++i) sum += eval_knot_basis(axis, i, order, u);
            CHECK(std::abs(sum - 1.0) <= 1e-13);
        }
        for (int i = KnotAxis::first_index(order); i <= axis.last_index(); ++i) {
            const double lo = axis.knot(i);
            const double hi = axis.knot(i) + (k + 1) * axis.spacing();
            CHECK(eval_knot_basis(axis, i, order, hi) == 0.0);
            CHECK(eval_knot_basis(axis, i, order, hi + 1e-9) == 0.0);
            CHECK(eval_knot_basis(axis, i, order, lo - 1e-9) == 0.0);
            if (k >= 1) CHECK(eval_knot_basis(axis, i, order, lo) == 0.0);
            CHECK(eval_knot_basis(axis, i, order, 0.5 * (lo + hi)) > 0.0);
        }
    }
}

TEST_CASE("basis windows agree with per-index evaluation") {
    const KnotAxis axis(0.9, 7, -0.4);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> uni(axis.begin() - 4.0, axis.end() + 4.0);
    for (int k = 0; k <= 3; ++k) {
        const SplineOrder order(k);
        for (int n = 0; n < 300; ++n) {
            const double u = uni(rng);
            const BasisWindow w = basis_window(axis, order, u, k >= 2 ? 2 : k);
            for (int s = 0; s < axis.basis_count(order); ++s) {
                const int i = axis.knot_index(s, order);
                const double direct = eval_knot_basis(axis, i, order, u);
                const bool in_window = s >= w.first && s < w.first + w.count;
                if (in_window) {
                    CHECK(w.value[s - w.first] == doctest::Approx(direct).epsilon(1e-14));
                    if (k >= 1) {
                        const double t = (u - axis.knot(i)) / axis.spacing() - 0.5 * (k + 1);
                        CHECK(w.d1[s - w.first] ==
                              doctest::Approx(eval_centered_derivative(order, t) / axis.spacing()).epsilon(1e-14));
                    }
                } else {
                    CHECK(direct == 0.0);
                }
            }
        }
    }
}
