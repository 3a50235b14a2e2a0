#include "divreg/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "divreg/error.hpp"
#include "divreg/parallel.hpp"

namespace divreg {

Similarity parse_similarity(const std::string &name) {
    if (name == "ssd") return Similarity::ssd;
    if (name == "lncc") return Similarity::lncc;
    if (name == "nmi") return Similarity::nmi;
    throw ConfigError("unknown similarity '" + name + "' (expected ssd, lncc or nmi)");
}

std::string to_string(Similarity s) {
    switch (s) {
    case Similarity::ssd: return "ssd";
    case Similarity::lncc: return "lncc";
    default: return "nmi";
    }
}

struct SimilarityMeasure::Lncc {
    GaussianFilter filter;
    std::vector<double> mu_r;
    std::vector<double> var_r; // floored
    double floor_w;
};

struct SimilarityMeasure::Nmi {
    static constexpr int pad = 2;
    int bins;
    int order;
    double w_min, w_scale; // bin coordinate = pad + (clamp(w) - w_min) * w_scale
    double w_max;
    std::vector<double> c_r;
};

namespace {

double entropy(const std::vector<double> &p) {
    double h = 0.0;
    for (double x : p)
        if (x > 0.0) h -= x * std::log(x);
    return h;
}

struct BinRange {
    double lo, hi, scale;
};

BinRange bin_range(const Image3D &img, int bins) {
    auto [lo, hi] = img.range();
    const double width = hi > lo ? hi - lo : 1.0;
    return {lo, hi, (bins - 1 - 2 * 2) / width};
}

} // namespace

SimilarityMeasure::SimilarityMeasure(Similarity kind, const Image3D &ref, const Image3D &source, Options options)
    : kind_(kind), geometry_(ref.geometry()), ref_(ref.data().begin(), ref.data().end()) {
    if (!same_frame(ref.geometry(), source.geometry())) throw GeometryError("similarity images differ in geometry");
    const std::size_t n = ref_.size();
    if (kind == Similarity::lncc) {
        if (!(options.lncc_sigma_mm > 0.0)) throw ConfigError("LNCC window sigma must be positive");
        auto l = std::make_unique<Lncc>(Lncc{GaussianFilter(geometry_, Vec3::Constant(options.lncc_sigma_mm)), {}, {}, 0.0});
        auto [rlo, rhi] = ref.range();
        auto [slo, shi] = source.range();
        const double floor_r = 1e-5 * (rhi - rlo) * (rhi - rlo);
        l->floor_w = 1e-5 * (shi - slo) * (shi - slo);
        l->mu_r.resize(n);
        l->var_r.resize(n);
        std::vector<double> sq(n);
        for (std::size_t i = 0; i < n; ++i) sq[i] = ref_[i] * ref_[i];
        l->filter.apply(ref_, l->mu_r);
        l->filter.apply(sq, l->var_r);
        for (std::size_t i = 0; i < n; ++i) l->var_r[i] = std::max(l->var_r[i] - l->mu_r[i] * l->mu_r[i], floor_r);
        lncc_ = std::move(l);
    } else if (kind == Similarity::nmi) {
        if (options.nmi_bins < 8) throw ConfigError("NMI needs at least 8 bins");
        if (options.parzen_order != 1 && options.parzen_order != 3) throw ConfigError("Parzen order must be 1 or 3");
        auto m = std::make_unique<Nmi>();
        m->bins = options.nmi_bins;
        m->order = options.parzen_order;
        const BinRange r = bin_range(ref, m->bins), s = bin_range(source, m->bins);
        m->w_min = s.lo;
        m->w_max = s.hi;
        m->w_scale = s.scale;
        m->c_r.resize(n);
        for (std::size_t i = 0; i < n; ++i) m->c_r[i] = Nmi::pad + (std::clamp(ref_[i], r.lo, r.hi) - r.lo) * r.scale;
        nmi_ = std::move(m);
    }
}

SimilarityMeasure::~SimilarityMeasure() = default;
SimilarityMeasure::SimilarityMeasure(SimilarityMeasure &&) noexcept = default;
SimilarityMeasure &SimilarityMeasure::operator=(SimilarityMeasure &&) noexcept = default;

double SimilarityMeasure::ssd(std::span<const double> w, std::span<double> grad) const {
    const double inv = 1.0 / static_cast<double>(w.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double d = w[i] - ref_[i];
        sum += d * d;
        if (!grad.empty()) grad[i] = 2.0 * d * inv;
    }
    return sum * inv;
}

double SimilarityMeasure::evaluate(std::span<const double> w, std::span<double> grad, bool *degenerate) const {
    const std::size_t n = ref_.size();
    if (w.size() != n) throw ShapeError("warped image has the wrong number of voxels");
    if (!grad.empty() && grad.size() != n) throw ShapeError("gradient buffer has the wrong number of voxels");
    if (degenerate) *degenerate = false;
    const double inv_n = 1.0 / static_cast<double>(n);

    if (kind_ == Similarity::ssd) return ssd(w, grad);

    if (kind_ == Similarity::lncc) {
        const Lncc &l = *lncc_;
        std::vector<double> mu_w(n), ww(n), rw(n), tmp(n);
        l.filter.apply(w, mu_w);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = w[i] * w[i];
        l.filter.apply(tmp, ww);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = w[i] * ref_[i];
        l.filter.apply(tmp, rw);
        std::vector<double> a(n), b(n);
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double sww = ww[i] - mu_w[i] * mu_w[i];
            const double srw = rw[i] - l.mu_r[i] * mu_w[i];
            const double bw = std::max(sww, l.floor_w);
            const double denom = l.var_r[i] * bw;
            sum += srw * srw / denom;
            a[i] = 2.0 * srw / denom;
            b[i] = sww > l.floor_w ? -srw * srw / (denom * bw) : 0.0;
        }
        const double value = 1.0 - sum * inv_n;
        if (grad.empty()) return value;
        std::vector<double> t1(n), t2(n), t3(n), t4(n);
        l.filter.apply_adjoint(a, t1);
        l.filter.apply_adjoint(b, t3);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = a[i] * l.mu_r[i];
        l.filter.apply_adjoint(tmp, t2);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = b[i] * mu_w[i];
        l.filter.apply_adjoint(tmp, t4);
        for (std::size_t i = 0; i < n; ++i)
            grad[i] = -inv_n * (ref_[i] * t1[i] - t2[i] + 2.0 * w[i] * t3[i] - 2.0 * t4[i]);
        return value;
    }

    const Nmi &m = *nmi_;
    const SplineOrder order(m.order);
    const int bins = m.bins;
    const double half = 0.5 * (m.order + 1);
    std::vector<double> c_w(n), dc(n);
    for (std::size_t i = 0; i < n; ++i) {
        const bool inside = w[i] >= m.w_min && w[i] <= m.w_max;
        c_w[i] = Nmi::pad + (std::clamp(w[i], m.w_min, m.w_max) - m.w_min) * m.w_scale;
        dc[i] = inside ? m.w_scale : 0.0;
    }
    auto window = [&](double c, int &first, int &last) {
        first = std::max(0, static_cast<int>(std::ceil(c - half)));
        last = std::min(bins - 1, static_cast<int>(std::floor(c + half)));
    };

    std::vector<double> joint(static_cast<std::size_t>(bins * bins), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        int a0, a1, b0, b1;
        window(m.c_r[i], a0, a1);
        window(c_w[i], b0, b1);
        double wb[4];
        for (int b = b0; b <= b1; ++b) wb[b - b0] = eval_centered(order, b - c_w[i]);
        for (int a = a0; a <= a1; ++a) {
            const double wa = eval_centered(order, a - m.c_r[i]) * inv_n;
            for (int b = b0; b <= b1; ++b) joint[static_cast<std::size_t>(a * bins + b)] += wa * wb[b - b0];
        }
    }
    std::vector<double> pr(static_cast<std::size_t>(bins), 0.0), pw(static_cast<std::size_t>(bins), 0.0);
    for (int a = 0; a < bins; ++a)
        for (int b = 0; b < bins; ++b) {
            pr[a] += joint[static_cast<std::size_t>(a * bins + b)];
            pw[b] += joint[static_cast<std::size_t>(a * bins + b)];
        }
    const double hr = entropy(pr), hw = entropy(pw), hj_raw = entropy(joint);
    constexpr double entropy_floor = 1e-12;
    const bool floor_hit = hj_raw < entropy_floor;
    const double hj = std::max(hj_raw, entropy_floor);
    if (degenerate) *degenerate = floor_hit;
    const double nmi = (hr + hw) / hj;
    if (grad.empty()) return -nmi;
    if (floor_hit) {
        std::fill(grad.begin(), grad.end(), 0.0);
        return -nmi;
    }

    auto safe_log = [](double p) { return p > 0.0 ? std::log(p) : 0.0; };
    std::vector<double> log_joint(joint.size()), log_pw(pw.size());
    for (std::size_t i = 0; i < joint.size(); ++i) log_joint[i] = safe_log(joint[i]);
    for (std::size_t i = 0; i < pw.size(); ++i) log_pw[i] = safe_log(pw[i]);
    for (std::size_t i = 0; i < n; ++i) {
        if (dc[i] == 0.0) {
            grad[i] = 0.0;
            continue;
        }
        int a0, a1, b0, b1;
        window(m.c_r[i], a0, a1);
        window(c_w[i], b0, b1);
        // d beta(b - c) / dc = -beta'(b - c); the 1/N and sign are applied below.
        double dhw = 0.0, dhj = 0.0, sr = 0.0;
        double wa[4];
        for (int a = a0; a <= a1; ++a) {
            wa[a - a0] = eval_centered(order, a - m.c_r[i]);
            sr += wa[a - a0];
        }
        for (int b = b0; b <= b1; ++b) {
            const double db = eval_centered_derivative(order, b - c_w[i]);
            dhw += log_pw[b] * db * sr;
            for (int a = a0; a <= a1; ++a) dhj += log_joint[static_cast<std::size_t>(a * bins + b)] * wa[a - a0] * db;
        }
        // H = -sum p log p and sum dp = 0, so dH = -sum log p dp with dp = -beta'(.) / N.
        dhw *= inv_n;
        dhj *= inv_n;
        const double dnmi = (dhw * hj - (hr + hw) * dhj) / (hj * hj);
        grad[i] = -dnmi * dc[i];
    }
    return -nmi;
}

MetricResult SimilarityMeasure::evaluate(const Image3D &warped) const {
    if (!same_frame(warped.geometry(), geometry_)) throw GeometryError("warped image differs in geometry");
    MetricResult r;
    r.gradient.assign(warped.size(), 0.0);
    r.value = evaluate(warped.data(), r.gradient, &r.degenerate);
    return r;
}

MetricResult ssd_value_grad(const Image3D &ref, const Image3D &warped) {
    return SimilarityMeasure(Similarity::ssd, ref, warped).evaluate(warped);
}

MetricResult lncc_value_grad(const Image3D &ref, const Image3D &warped, double sigma_mm) {
    SimilarityMeasure::Options o;
    o.lncc_sigma_mm = sigma_mm;
    return SimilarityMeasure(Similarity::lncc, ref, warped, o).evaluate(warped);
}

MetricResult nmi_value_grad(const Image3D &ref, const Image3D &warped, int bins, int parzen_order) {
    SimilarityMeasure::Options o;
    o.nmi_bins = bins;
    o.parzen_order = parzen_order;
    return SimilarityMeasure(Similarity::nmi, ref, warped, o).evaluate(warped);
}

BendingEnergy::BendingEnergy(VoxelGeometry samples, int threads) : samples_(samples), threads_(threads) { samples_.validate(); }

double BendingEnergy::evaluate(const SplineSVF &field, std::span<double> grad) const {
    if (!grad.empty() && grad.size() != field.parameter_count()) throw ShapeError("bending gradient buffer has the wrong length");
    const std::size_t n = samples_.voxel_count();
    const double inv_n = 1.0 / static_cast<double>(n);
    const FieldEvaluator ev(field);
    constexpr std::size_t chunks = 16;
    std::vector<double> partial(chunks, 0.0);
    std::vector<std::vector<double>> grads(grad.empty() ? 0 : chunks);
    parallel_chunks(n, chunks, resolve_thread_count(threads_), [&](std::size_t b, std::size_t e, std::size_t c) {
        std::vector<double> *g = nullptr;
        if (!grad.empty()) {
            grads[c].assign(field.parameter_count(), 0.0);
            g = &grads[c];
        }
        PointStencil s;
        double sum = 0.0;
        for (std::size_t i = b; i < e; ++i) {
            ev.prepare(samples_.center(i), 2, s);
            auto h = ev.hessians(s);
            for (const Mat3 &m : h) sum += m.squaredNorm();
            if (g) {
                for (Mat3 &m : h) m *= 2.0 * inv_n;
                ev.scatter_hessian(s, h, *g);
            }
        }
        partial[c] = sum;
    });
    double value = 0.0;
    for (double p : partial) value += p;
    for (const auto &g : grads)
        for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
    return value * inv_n;
}

BendingResult bending_energy_value_grad(const SplineSVF &field, const VoxelGeometry &samples) {
    BendingResult r;
    r.gradient.assign(field.parameter_count(), 0.0);
    r.value = BendingEnergy(samples).evaluate(field, r.gradient);
    return r;
}

} // namespace divreg
