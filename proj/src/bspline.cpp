#include "divreg/bspline.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace divreg {

namespace {

inline double b0(double t) { return (t >= -0.5 && t < 0.5) ? 1.0 : 0.0; }

inline double b1(double t) {
    const double a = std::abs(t);
    return a < 1.0 ? 1.0 - a : 0.0;
}

inline double b2(double t) {
    const double a = std::abs(t);
    if (a < 0.5) return 0.75 - t * t;
    if (a < 1.5) {
        const double r = 1.5 - a;
        return 0.5 * r * r;
    }
    return 0.0;
}

inline double b3(double t) {
    const double a = std::abs(t);
    if (a < 1.0) return (4.0 - 3.0 * a * a * (2.0 - a)) / 6.0;
    if (a < 2.0) {
        const double r = 2.0 - a;
        return r * r * r / 6.0;
    }
    return 0.0;
}

inline double centered(int k, double t) {
    switch (k) {
    case 0: return b0(t);
    case 1: return b1(t);
    case 2: return b2(t);
    default: return b3(t);
    }
}

inline double centered_d1(int k, double t) { return centered(k - 1, t + 0.5) - centered(k - 1, t - 0.5); }

inline double centered_d2(int k, double t) {
    return centered(k - 2, t + 1.0) - 2.0 * centered(k - 2, t) + centered(k - 2, t - 1.0);
}

} // namespace

double eval_centered(SplineOrder k, double t) { return centered(k.value(), t); }

double eval_centered_derivative(SplineOrder k, double t) {
    if (k.value() < 1) throw ConfigError("derivative of the order-0 B-spline is not a function");
    return centered_d1(k.value(), t);
}

double eval_centered_second_derivative(SplineOrder k, double t) {
    if (k.value() < 2) throw ConfigError("second derivative requires B-spline order >= 2");
    return centered_d2(k.value(), t);
}

KnotAxis::KnotAxis(double spacing, int cells, double origin) : spacing_(spacing), cells_(cells), origin_(origin) {
    if (!(spacing > 0.0) || !std::isfinite(spacing)) throw ConfigError("knot spacing must be positive and finite");
    if (cells < 1) throw ConfigError("knot axis needs at least one cell");
    if (!std::isfinite(origin)) throw ConfigError("knot axis origin must be finite");
}

int KnotAxis::storage_index(int knot_index, SplineOrder k) const {
    if (knot_index < first_index(k) || knot_index > last_index()) {
        throw IndexError("knot index " + std::to_string(knot_index) + " outside {" + std::to_string(first_index(k)) +
                         ", ..., " + std::to_string(last_index()) + "}");
    }
    return knot_index + k.value();
}

int KnotAxis::knot_index(int storage_index, SplineOrder k) const {
    if (storage_index < 0 || storage_index >= basis_count(k)) {
        throw IndexError("storage index " + std::to_string(storage_index) + " outside [0, " +
                         std::to_string(basis_count(k)) + ")");
    }
    return storage_index - k.value();
}

double eval_knot_basis(const KnotAxis &axis, int knot_index, SplineOrder k, double u) {
    axis.storage_index(knot_index, k);
    const double t = axis_coordinate(axis, u) - knot_index - 0.5 * (k.value() + 1);
    return centered(k.value(), t);
}

namespace detail {

void fill_window_generic(int k, int base, double frac, double inv, int derivatives, BasisWindow &w) {
    for (int s = w.first; s < w.first + w.count; ++s) {
        const int m = s - base;
        const double arg = frac + 0.5 * (k - 1) - m;
        const int e = s - w.first;
        w.value[e] = centered(k, arg);
        if (derivatives >= 1) w.d1[e] = k >= 1 ? centered_d1(k, arg) * inv : 0.0;
        if (derivatives >= 2) w.d2[e] = k >= 2 ? centered_d2(k, arg) * inv * inv : 0.0;
    }
}

} // namespace detail

BasisWindow basis_window(const KnotAxis &axis, SplineOrder order, double u, int derivatives) {
    BasisWindow w;
    basis_window_at(axis, order.value(), axis_coordinate(axis, u), derivatives, w);
    return w;
}

} // namespace divreg
