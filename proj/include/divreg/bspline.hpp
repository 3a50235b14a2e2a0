#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <string>

#include "divreg/error.hpp"

namespace divreg {

// Order (polynomial degree) of a uniform B-spline basis, restricted to 0..3.
class SplineOrder {
  public:
    explicit SplineOrder(int k) : k_(k) {
        if (k < 0 || k > 3) throw ConfigError("B-spline order must be in 0..3, got " + std::to_string(k));
    }
    int value() const { return k_; }
    friend auto operator<=>(const SplineOrder &, const SplineOrder &) = default;

  private:
    int k_;
};

// Centered cardinal B-spline B^k(t), supported on [-(k+1)/2, (k+1)/2].
// B^0 is the half-open indicator of [-1/2, 1/2) so that integer shifts tile the line.
double eval_centered(SplineOrder k, double t);

// dB^k/dt via B^{k-1}(t + 1/2) - B^{k-1}(t - 1/2). Throws ConfigError for k = 0.
double eval_centered_derivative(SplineOrder k, double t);

// d^2B^k/dt^2 via the second difference of B^{k-2}. Throws ConfigError for k < 2.
double eval_centered_second_derivative(SplineOrder k, double t);

/// Uniform knot axis u_i = origin + i * spacing covering [origin, origin + cells * spacing].
///
/// For order k the basis functions that are not identically zero on the covered interval
/// carry knot indices i in {-k, ..., cells - 1}. They are stored at the 0-based storage
/// index i + k, so the offset between knot index and storage index is the order itself.
/// Basis i has support ]u_i, u_i + (k + 1) * spacing[.
class KnotAxis {
  public:
    KnotAxis(double spacing, int cells, double origin = 0.0);

    double spacing() const { return spacing_; }
    int cells() const { return cells_; }
    double origin() const { return origin_; }
    double knot(int i) const { return origin_ + i * spacing_; }
    double begin() const { return origin_; }
    double end() const { return origin_ + cells_ * spacing_; }

    static int first_index(SplineOrder k) { return -k.value(); }
    int last_index() const { return cells_ - 1; }
    int basis_count(SplineOrder k) const { return cells_ + k.value(); }

    // Knot index -> storage index; IndexError outside {-k, ..., cells - 1}.
    int storage_index(int knot_index, SplineOrder k) const;
    int knot_index(int storage_index, SplineOrder k) const;

    friend bool operator==(const KnotAxis &, const KnotAxis &) = default;

  private:
    double spacing_;
    int cells_;
    double origin_;
};

// B^k_{i,U}(u) = B^k((u - u_i) / spacing - (k + 1) / 2) for knot index i.
double eval_knot_basis(const KnotAxis &axis, int knot_index, SplineOrder k, double u);

// The (at most k + 1) basis functions of one order that can be nonzero at a coordinate,
// with optional first and second derivatives with respect to u (physical units).
// Entries are clipped to the valid storage range of the axis.
struct BasisWindow {
    int first = 0; // storage index of entry 0
    int count = 0;
    std::array<double, 4> value{};
    std::array<double, 4> d1{};
    std::array<double, 4> d2{};
};

// derivatives: 0 = values only, 1 = values and d1, 2 = values, d1 and d2.
BasisWindow basis_window(const KnotAxis &axis, SplineOrder k, double u, int derivatives = 0);

// Axis coordinate (u - origin) / spacing in cell units. Values within rounding of an
// integer are snapped so that knots computed in floating point land on breakpoints.
namespace detail {
// floor without a libm call; exact for |t| < 2^31.
inline double floor_small(double t) {
    const double i = static_cast<double>(static_cast<long long>(t));
    return i > t ? i - 1.0 : i;
}
} // namespace detail

inline double axis_coordinate(const KnotAxis &axis, double u) {
    const double t = (u - axis.origin()) / axis.spacing();
    if (!(std::abs(t) < 1e9)) return t;
    const double r = detail::floor_small(t + 0.5);
    return std::abs(t - r) <= 1e-12 * std::max(1.0, std::abs(t)) ? r : t;
}

namespace detail {
// Orders without a dedicated polynomial path; entries [w.first, w.first + w.count) are set.
void fill_window_generic(int k, int base, double frac, double inv_spacing, int derivatives, BasisWindow &w);
} // namespace detail

// basis_window from a precomputed axis coordinate t (see axis_coordinate).
inline void basis_window_at(const KnotAxis &axis, int k, double t, int derivatives, BasisWindow &w) {
    w.first = 0;
    w.count = 0;
    if (!(std::abs(t) < 1e9)) return;
    const double base_f = detail::floor_small(t);
    // Far outside the axis nothing is supported; avoids int overflow as well.
    if (base_f < -k - 1.0 || base_f > axis.cells() + k + 1.0) return;
    const int base = static_cast<int>(base_f);
    const double frac = t - base_f;
    // Knot index of entry m is base - k + m, storage index base + m.
    const int lo = std::max(base, 0);
    const int hi = std::min(base + k, axis.cells() + k - 1);
    if (lo > hi) return;
    w.first = lo;
    w.count = hi - lo + 1;
    const double inv = 1.0 / axis.spacing();
    if (k == 2 || k == 3) {
        // Polynomial pieces in the fractional offset for the two orders the fields use.
        std::array<double, 4> val, d1{}, d2{};
        const double f = frac, g = 1.0 - frac;
        if (k == 2) {
            val = {0.5 * g * g, 0.75 - (f - 0.5) * (f - 0.5), 0.5 * f * f, 0.0};
            if (derivatives >= 1) d1 = {-g * inv, (1.0 - 2.0 * f) * inv, f * inv, 0.0};
            if (derivatives >= 2) d2 = {inv * inv, -2.0 * inv * inv, inv * inv, 0.0};
        } else {
            const double f2 = f * f, f3 = f2 * f;
            val = {g * g * g / 6.0, (3.0 * f3 - 6.0 * f2 + 4.0) / 6.0, (-3.0 * f3 + 3.0 * f2 + 3.0 * f + 1.0) / 6.0,
                   f3 / 6.0};
            if (derivatives >= 1)
                d1 = {-0.5 * g * g * inv, (1.5 * f2 - 2.0 * f) * inv, (-1.5 * f2 + f + 0.5) * inv, 0.5 * f2 * inv};
            if (derivatives >= 2) {
                const double i2 = inv * inv;
                d2 = {g * i2, (3.0 * f - 2.0) * i2, (1.0 - 3.0 * f) * i2, f * i2};
            }
        }
        if (lo == base) {
            w.value = val;
            w.d1 = d1;
            w.d2 = d2;
            return;
        }
        const int shift = lo - base;
        for (int e = 0; e < w.count; ++e) {
            w.value[e] = val[e + shift];
            w.d1[e] = d1[e + shift];
            w.d2[e] = d2[e + shift];
        }
        return;
    }
    detail::fill_window_generic(k, base, frac, inv, derivatives, w);
}

} // namespace divreg
