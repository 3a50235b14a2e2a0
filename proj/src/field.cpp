#include "divreg/field.hpp"

#include <sstream>
#include <string>

#include "divreg/error.hpp"

namespace divreg {

namespace {

std::array<Index3, 3> component_orders(SplineSVF::Kind kind, int k, int classical_order) {
    if (kind == SplineSVF::Kind::divergence_conforming) {
        return {Index3{k + 1, k, k}, Index3{k, k + 1, k}, Index3{k, k, k + 1}};
    }
    return {Index3{classical_order, classical_order, classical_order},
            Index3{classical_order, classical_order, classical_order},
            Index3{classical_order, classical_order, classical_order}};
}

void check_inside(const ControlGrid &grid, const Vec3 &p) {
    if (!grid.contains(p)) {
        std::ostringstream msg;
        msg << "point (" << p[0] << ", " << p[1] << ", " << p[2] << ") lies outside the grid box";
        throw DomainError(msg.str());
    }
}

} // namespace

SplineSVF::SplineSVF(Kind kind, ControlGrid grid, int classical_order)
    : kind_(kind), grid_(std::move(grid)),
      order_(kind == Kind::divergence_conforming ? grid_.divergence_order().value() : classical_order) {
    if (kind == Kind::classical) {
        SplineOrder check(classical_order);
        if (classical_order < 1) throw ConfigError("classical velocity fields need order >= 1");
        for (int d = 0; d < 3; ++d) {
            if (grid_.axis(d).cells() <= classical_order) throw ConfigError("grid too small for the classical order");
        }
    }
    const auto orders = component_orders(kind, grid_.divergence_order().value(), classical_order);
    std::size_t offset = 0;
    for (std::size_t c = 0; c < 3; ++c) {
        components_[c].orders = orders[c];
        components_[c].lattice = grid_.lattice(orders[c]);
        components_[c].offset = offset;
        offset += components_[c].lattice.count();
    }
    theta_.assign(offset, 0.0);
}

void SplineSVF::set_parameters(std::span<const double> theta) {
    if (theta.size() != theta_.size()) {
        throw ShapeError("parameter vector has length " + std::to_string(theta.size()) + ", field expects " +
                         std::to_string(theta_.size()));
    }
    theta_.assign(theta.begin(), theta.end());
}

Lattice SplineSVF::divergence_lattice() const {
    if (!is_divergence_conforming()) throw UnsupportedOperation("classical fields have no divergence spline");
    const int k = grid_.divergence_order().value();
    return grid_.lattice({k, k, k});
}

DivConformingSVF::DivConformingSVF(ControlGrid grid, std::span<const double> theta) : DivConformingSVF(std::move(grid)) {
    set_parameters(theta);
}

DivConformingSVF::DivConformingSVF(const SplineSVF &field) : SplineSVF(field) {
    if (!field.is_divergence_conforming()) throw UnsupportedOperation("field is not divergence-conforming");
}

ClassicalSVF::ClassicalSVF(ControlGrid grid, std::span<const double> theta, int order)
    : ClassicalSVF(std::move(grid), order) {
    set_parameters(theta);
}

ClassicalSVF::ClassicalSVF(const SplineSVF &field) : SplineSVF(field) {
    if (field.is_divergence_conforming()) throw UnsupportedOperation("field is not classical");
}

// ---------------------------------------------------------------------------

FieldEvaluator::FieldEvaluator(const SplineSVF &field) : field_(&field) {
    for (int c = 0; c < 3; ++c) {
        for (int d = 0; d < 3; ++d) used_[d][field.component(c).orders[d]] = true;
    }
}

void FieldEvaluator::prepare(const Vec3 &p, int derivatives, PointStencil &stencil) const {
    const auto &grid = field_->grid();
    for (int d = 0; d < 3; ++d) {
        const KnotAxis &axis = grid.axis(d);
        const double t = axis_coordinate(axis, p[d]);
        for (int o = 0; o < 4; ++o) {
            if (used_[d][o]) basis_window_at(axis, o, t, derivatives, stencil.window[d][o]);
        }
    }
}

namespace {

// Calls fn.template operator()<NX, NY, NZ>() with compile-time extents for the full
// windows the fields use, or with zeros (runtime extents) for clipped windows.
template <class Fn>
void with_extents(const BasisWindow &wx, const BasisWindow &wy, const BasisWindow &wz, Fn &&fn) {
    switch (wx.count * 100 + wy.count * 10 + wz.count) {
    case 433: fn.template operator()<4, 3, 3>(); break;
    case 343: fn.template operator()<3, 4, 3>(); break;
    case 334: fn.template operator()<3, 3, 4>(); break;
    case 444: fn.template operator()<4, 4, 4>(); break;
    default: fn.template operator()<0, 0, 0>(); break;
    }
}

template <int N>
inline int extent(const BasisWindow &w) {
    return N > 0 ? N : w.count;
}

} // namespace

Vec3 FieldEvaluator::velocity(const PointStencil &s) const {
    Vec3 v;
    const double *theta = field_->parameters().data();
    for (int c = 0; c < 3; ++c) {
        const auto &b = field_->component(c);
        const auto &wx = s.window[0][b.orders[0]];
        const auto &wy = s.window[1][b.orders[1]];
        const auto &wz = s.window[2][b.orders[2]];
        const auto sx = static_cast<std::size_t>(b.lattice.size[0]);
        const auto sxy = sx * static_cast<std::size_t>(b.lattice.size[1]);
        const double *base = theta + b.offset;
        with_extents(wx, wy, wz, [&]<int NX, int NY, int NZ>() {
            double acc = 0.0;
            for (int kz = 0; kz < extent<NZ>(wz); ++kz) {
                const double *pz = base + static_cast<std::size_t>(wz.first + kz) * sxy;
                double ay = 0.0;
                for (int ky = 0; ky < extent<NY>(wy); ++ky) {
                    const double *row = pz + static_cast<std::size_t>(wy.first + ky) * sx + wx.first;
                    double ax = 0.0;
                    for (int kx = 0; kx < extent<NX>(wx); ++kx) ax += wx.value[kx] * row[kx];
                    ay += wy.value[ky] * ax;
                }
                acc += wz.value[kz] * ay;
            }
            v[c] = acc;
        });
    }
    return v;
}

void FieldEvaluator::velocity_jacobian(const PointStencil &s, Vec3 &v, Mat3 &jac) const {
    const double *theta = field_->parameters().data();
    for (int c = 0; c < 3; ++c) {
        const auto &b = field_->component(c);
        const auto &wx = s.window[0][b.orders[0]];
        const auto &wy = s.window[1][b.orders[1]];
        const auto &wz = s.window[2][b.orders[2]];
        const auto sx = static_cast<std::size_t>(b.lattice.size[0]);
        const auto sxy = sx * static_cast<std::size_t>(b.lattice.size[1]);
        const double *base = theta + b.offset;
        with_extents(wx, wy, wz, [&]<int NX, int NY, int NZ>() {
            double val = 0.0, dx = 0.0, dy = 0.0, dz = 0.0;
            for (int kz = 0; kz < extent<NZ>(wz); ++kz) {
                const double *pz = base + static_cast<std::size_t>(wz.first + kz) * sxy;
                double y00 = 0.0, y01 = 0.0, y10 = 0.0; // (x-derivative, y-derivative)
                for (int ky = 0; ky < extent<NY>(wy); ++ky) {
                    const double *row = pz + static_cast<std::size_t>(wy.first + ky) * sx + wx.first;
                    double x0 = 0.0, x1 = 0.0;
                    for (int kx = 0; kx < extent<NX>(wx); ++kx) {
                        x0 += wx.value[kx] * row[kx];
                        x1 += wx.d1[kx] * row[kx];
                    }
                    y00 += wy.value[ky] * x0;
                    y01 += wy.d1[ky] * x0;
                    y10 += wy.value[ky] * x1;
                }
                val += wz.value[kz] * y00;
                dx += wz.value[kz] * y10;
                dy += wz.value[kz] * y01;
                dz += wz.d1[kz] * y00;
            }
            v[c] = val;
            jac(c, 0) = dx;
            jac(c, 1) = dy;
            jac(c, 2) = dz;
        });
    }
}

std::array<Mat3, 3> FieldEvaluator::hessians(const PointStencil &s) const {
    std::array<Mat3, 3> out;
    const double *theta = field_->parameters().data();
    for (int c = 0; c < 3; ++c) {
        const auto &b = field_->component(c);
        const auto &wx = s.window[0][b.orders[0]];
        const auto &wy = s.window[1][b.orders[1]];
        const auto &wz = s.window[2][b.orders[2]];
        const auto sx = static_cast<std::size_t>(b.lattice.size[0]);
        const auto sxy = sx * static_cast<std::size_t>(b.lattice.size[1]);
        const double *base = theta + b.offset;
        double xx = 0.0, yy = 0.0, zz = 0.0, xy = 0.0, xz = 0.0, yz = 0.0;
        for (int kz = 0; kz < wz.count; ++kz) {
            const double *pz = base + static_cast<std::size_t>(wz.first + kz) * sxy;
            // y-level sums indexed by (x-derivative order, y-derivative order)
            double s00 = 0.0, s10 = 0.0, s20 = 0.0, s01 = 0.0, s11 = 0.0, s02 = 0.0;
            for (int ky = 0; ky < wy.count; ++ky) {
                const double *row = pz + static_cast<std::size_t>(wy.first + ky) * sx + wx.first;
                double x0 = 0.0, x1 = 0.0, x2 = 0.0;
                for (int kx = 0; kx < wx.count; ++kx) {
                    x0 += wx.value[kx] * row[kx];
                    x1 += wx.d1[kx] * row[kx];
                    x2 += wx.d2[kx] * row[kx];
                }
                s00 += wy.value[ky] * x0;
                s10 += wy.value[ky] * x1;
                s20 += wy.value[ky] * x2;
                s01 += wy.d1[ky] * x0;
                s11 += wy.d1[ky] * x1;
                s02 += wy.d2[ky] * x0;
            }
            xx += wz.value[kz] * s20;
            yy += wz.value[kz] * s02;
            zz += wz.d2[kz] * s00;
            xy += wz.value[kz] * s11;
            xz += wz.d1[kz] * s10;
            yz += wz.d1[kz] * s01;
        }
        Mat3 &h = out[static_cast<std::size_t>(c)];
        h << xx, xy, xz, xy, yy, yz, xz, yz, zz;
    }
    return out;
}

void FieldEvaluator::scatter(const PointStencil &s, const Vec3 &weight, std::span<double> grad) const {
    for (int c = 0; c < 3; ++c) {
        if (weight[c] == 0.0) continue;
        const auto &b = field_->component(c);
        const auto &wx = s.window[0][b.orders[0]];
        const auto &wy = s.window[1][b.orders[1]];
        const auto &wz = s.window[2][b.orders[2]];
        const auto sx = static_cast<std::size_t>(b.lattice.size[0]);
        const auto sxy = sx * static_cast<std::size_t>(b.lattice.size[1]);
        double *base = grad.data() + b.offset;
        with_extents(wx, wy, wz, [&]<int NX, int NY, int NZ>() {
            for (int kz = 0; kz < extent<NZ>(wz); ++kz) {
                double *pz = base + static_cast<std::size_t>(wz.first + kz) * sxy;
                const double wzc = weight[c] * wz.value[kz];
                for (int ky = 0; ky < extent<NY>(wy); ++ky) {
                    double *row = pz + static_cast<std::size_t>(wy.first + ky) * sx + wx.first;
                    const double wyz = wzc * wy.value[ky];
                    for (int kx = 0; kx < extent<NX>(wx); ++kx) row[kx] += wyz * wx.value[kx];
                }
            }
        });
    }
}

void FieldEvaluator::scatter_hessian(const PointStencil &s, const std::array<Mat3, 3> &weight,
                                     std::span<double> grad) const {
    for (int c = 0; c < 3; ++c) {
        const Mat3 &w = weight[static_cast<std::size_t>(c)];
        const double wxx = w(0, 0), wyy = w(1, 1), wzz = w(2, 2);
        const double wxy = w(0, 1) + w(1, 0), wxz = w(0, 2) + w(2, 0), wyz = w(1, 2) + w(2, 1);
        const auto &b = field_->component(c);
        const auto &wx = s.window[0][b.orders[0]];
        const auto &wy = s.window[1][b.orders[1]];
        const auto &wz = s.window[2][b.orders[2]];
        const auto sx = static_cast<std::size_t>(b.lattice.size[0]);
        const auto sxy = sx * static_cast<std::size_t>(b.lattice.size[1]);
        double *base = grad.data() + b.offset;
        for (int kz = 0; kz < wz.count; ++kz) {
            double *pz = base + static_cast<std::size_t>(wz.first + kz) * sxy;
            const double z0 = wz.value[kz], z1 = wz.d1[kz], z2 = wz.d2[kz];
            for (int ky = 0; ky < wy.count; ++ky) {
                double *row = pz + static_cast<std::size_t>(wy.first + ky) * sx + wx.first;
                const double y0 = wy.value[ky], y1 = wy.d1[ky], y2 = wy.d2[ky];
                // Coefficients multiplying Bx, Bx' and Bx''.
                const double c0 = wyy * y2 * z0 + wzz * y0 * z2 + wyz * y1 * z1;
                const double c1 = wxy * y1 * z0 + wxz * y0 * z1;
                const double c2 = wxx * y0 * z0;
                for (int kx = 0; kx < wx.count; ++kx) row[kx] += c0 * wx.value[kx] + c1 * wx.d1[kx] + c2 * wx.d2[kx];
            }
        }
    }
}

// ---------------------------------------------------------------------------

Vec3 eval_velocity(const SplineSVF &field, const Vec3 &p) {
    check_inside(field.grid(), p);
    FieldEvaluator ev(field);
    PointStencil s;
    ev.prepare(p, 0, s);
    return ev.velocity(s);
}

Mat3 eval_jacobian(const SplineSVF &field, const Vec3 &p) {
    check_inside(field.grid(), p);
    FieldEvaluator ev(field);
    PointStencil s;
    ev.prepare(p, 1, s);
    Vec3 v;
    Mat3 j;
    ev.velocity_jacobian(s, v, j);
    return j;
}

double divergence_coefficient(const SplineSVF &field, int i, int j, int k) {
    const Lattice lat = field.divergence_lattice();
    if (!lat.contains(i, j, k)) throw IndexError("divergence coefficient index outside the lattice");
    // Component U has one more basis function along U; storage index s + 1 along U is
    // knot index i, storage index s is knot index i - 1.
    const Vec3 h = field.grid().spacing();
    return (field.coefficient(0, i + 1, j, k) - field.coefficient(0, i, j, k)) / h[0] +
           (field.coefficient(1, i, j + 1, k) - field.coefficient(1, i, j, k)) / h[1] +
           (field.coefficient(2, i, j, k + 1) - field.coefficient(2, i, j, k)) / h[2];
}

std::vector<double> divergence_coefficients(const SplineSVF &field) {
    const Lattice lat = field.divergence_lattice();
    std::vector<double> psi(lat.count());
    for (int k = 0; k < lat.size[2]; ++k)
        for (int j = 0; j < lat.size[1]; ++j)
            for (int i = 0; i < lat.size[0]; ++i) psi[lat.index(i, j, k)] = divergence_coefficient(field, i, j, k);
    return psi;
}

double eval_divergence(const SplineSVF &field, const Vec3 &p) {
    if (!field.is_divergence_conforming()) {
        throw UnsupportedOperation("the divergence of a classical 3D B-spline field is not a B-spline; use the Jacobian trace");
    }
    check_inside(field.grid(), p);
    const auto &grid = field.grid();
    const SplineOrder k = grid.divergence_order();
    std::array<BasisWindow, 3> w;
    for (int d = 0; d < 3; ++d) w[d] = basis_window(grid.axis(d), k, p[d]);
    double acc = 0.0;
    for (int c = 0; c < w[2].count; ++c)
        for (int b = 0; b < w[1].count; ++b)
            for (int a = 0; a < w[0].count; ++a) {
                const double weight = w[0].value[a] * w[1].value[b] * w[2].value[c];
                if (weight == 0.0) continue;
                acc += weight * divergence_coefficient(field, w[0].first + a, w[1].first + b, w[2].first + c);
            }
    return acc;
}

std::vector<double> coefficient_vector(const SplineSVF &field) {
    return {field.parameters().begin(), field.parameters().end()};
}

SplineSVF from_coefficient_vector(const SplineSVF &like, std::span<const double> theta) {
    SplineSVF out(like.kind(), like.grid(), like.order());
    out.set_parameters(theta);
    return out;
}

SplineSVF scaled(const SplineSVF &field, double factor) {
    SplineSVF out = field;
    for (double &x : out.parameters()) x *= factor;
    return out;
}

namespace {

// Refines one axis of an x-fastest array: coarse knot j maps onto fine knots 2j + m,
// m = 0..p+1, with weights 2^-p * binom(p + 1, m).
std::vector<double> refine_axis(const std::vector<double> &in, const Index3 &in_size, int axis, int order,
                                int fine_count, Index3 &out_size) {
    static constexpr int binom[5][5] = {{1, 0, 0, 0, 0}, {1, 1, 0, 0, 0}, {1, 2, 1, 0, 0}, {1, 3, 3, 1, 0}, {1, 4, 6, 4, 1}};
    out_size = in_size;
    out_size[axis] = fine_count;
    Lattice src{in_size};
    Lattice dst{out_size};
    std::vector<double> out(dst.count(), 0.0);
    const double scale = 1.0 / static_cast<double>(1 << order);
    for (int k = 0; k < in_size[2]; ++k)
        for (int j = 0; j < in_size[1]; ++j)
            for (int i = 0; i < in_size[0]; ++i) {
                const double v = in[src.index(i, j, k)];
                if (v == 0.0) continue;
                Index3 idx{i, j, k};
                const int sc = idx[axis];
                for (int m = 0; m <= order + 1; ++m) {
                    const int sf = 2 * sc - order + m;
                    if (sf < 0 || sf >= fine_count) continue;
                    Index3 f = idx;
                    f[axis] = sf;
                    out[dst.index(f[0], f[1], f[2])] += v * scale * binom[order + 1][m];
                }
            }
    return out;
}

} // namespace

SplineSVF refine(const SplineSVF &field) {
    SplineSVF fine(field.kind(), field.grid().refined(), field.order());
    for (int c = 0; c < 3; ++c) {
        const auto &cb = field.component(c);
        const auto &fb = fine.component(c);
        std::vector<double> data(field.parameters().begin() + static_cast<std::ptrdiff_t>(cb.offset),
                                 field.parameters().begin() + static_cast<std::ptrdiff_t>(cb.offset + cb.lattice.count()));
        Index3 size = cb.lattice.size;
        for (int d = 0; d < 3; ++d) {
            Index3 next;
            data = refine_axis(data, size, d, cb.orders[d], fb.lattice.size[d], next);
            size = next;
        }
        std::copy(data.begin(), data.end(), fine.parameters().begin() + static_cast<std::ptrdiff_t>(fb.offset));
    }
    return fine;
}

} // namespace divreg
