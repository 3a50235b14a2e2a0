#include "divreg/objective.hpp"

#include <algorithm>

#include "divreg/error.hpp"
#include "divreg/parallel.hpp"

namespace divreg {

namespace {
constexpr std::size_t kChunks = 16;
}

void ObjectiveConfig::validate() const {
    if (!(similarity_weight >= 0.0) || !(bending_weight >= 0.0)) throw ConfigError("objective weights must be non-negative");
    if (nmi_bins < 8) throw ConfigError("NMI needs at least 8 bins");
    if (parzen_order != 1 && parzen_order != 3) throw ConfigError("Parzen order must be 1 or 3");
    if (!(lncc_sigma_mm > 0.0)) throw ConfigError("LNCC window sigma must be positive");
}

SimilarityMeasure::Options ObjectiveConfig::similarity_options() const {
    SimilarityMeasure::Options o;
    o.lncc_sigma_mm = lncc_sigma_mm;
    o.nmi_bins = nmi_bins;
    o.parzen_order = parzen_order;
    return o;
}

RegistrationObjective::RegistrationObjective(const Image3D &moving, const Image3D &fixed, const SplineSVF &layout,
                                             ObjectiveConfig cfg, EulerConfig euler)
    : geometry_(fixed.geometry()), layout_(layout), cfg_(cfg), euler_(euler), bending_(fixed.geometry(), cfg.threads) {
    cfg_.validate();
    euler_.validate();
    if (!same_frame(moving.geometry(), fixed.geometry())) throw GeometryError("moving and fixed images differ in geometry");
    moving_ = std::make_unique<ImageSampler>(moving, cfg_.interpolation, std::nullopt, Boundary::extend);
    fixed_ = std::make_unique<ImageSampler>(fixed, cfg_.interpolation, std::nullopt, Boundary::extend);
    forward_ = std::make_unique<SimilarityMeasure>(cfg_.similarity, fixed, moving, cfg_.similarity_options());
    backward_ = std::make_unique<SimilarityMeasure>(cfg_.similarity, moving, fixed, cfg_.similarity_options());
}

RegistrationObjective::~RegistrationObjective() = default;

double RegistrationObjective::direction(const SplineSVF &field, double sign, const ImageSampler &sampler,
                                        const SimilarityMeasure &measure, std::span<double> grad, bool &degenerate,
                                        std::size_t &flagged) const {
    const std::size_t n = geometry_.voxel_count();
    const int steps = euler_.steps;
    const double tau = euler_.tau();
    const int threads = resolve_thread_count(cfg_.threads);
    const FieldEvaluator ev(field);
    const auto &grid = field.grid();
    const Vec3 inv_h = geometry_.spacing.cwiseInverse();

    std::vector<double> warped(n);
    std::vector<Vec3> image_grad(n);
    // Trajectories are kept for the adjoint pass when they fit in a modest budget.
    const std::size_t path_len = static_cast<std::size_t>(steps) + 1;
    const bool keep_paths = !grad.empty() && cfg_.gradient == GradientMode::exact_adjoint &&
                            n * path_len * sizeof(Vec3) <= (std::size_t{512} << 20);
    std::vector<Vec3> paths(keep_paths ? n * path_len : 0);
    std::vector<std::size_t> chunk_flags(kChunks, 0);
    parallel_chunks(n, kChunks, threads, [&](std::size_t b, std::size_t e, std::size_t c) {
        PointStencil s;
        for (std::size_t i = b; i < e; ++i) {
            const Vec3 start = geometry_.center(i);
            Vec3 m = start;
            bool left = false;
            Vec3 *path = keep_paths ? &paths[i * path_len] : nullptr;
            for (int k = 0; k < steps; ++k) {
                if (path) path[k] = m;
                left = left || !grid.contains(m);
                ev.prepare(m, 0, s);
                m += (sign * tau) * ev.velocity(s);
            }
            if (path) path[steps] = m;
            left = left || !grid.contains(m);
            chunk_flags[c] += left ? 1 : 0;
            Vec3 gv;
            // Offset from the start in voxel units keeps the zero field exact.
            const Index3 at = geometry_.unravel(i);
            warped[i] = sampler.sample(Vec3(at[0], at[1], at[2]) + (m - start).cwiseProduct(inv_h), gv);
            image_grad[i] = gv.cwiseProduct(inv_h);
        }
    });
    for (auto f : chunk_flags) flagged += f;

    std::vector<double> g(grad.empty() ? 0 : n);
    bool degen = false;
    const double value = measure.evaluate(warped, g, &degen);
    degenerate = degenerate || degen;
    if (grad.empty()) return value;

    const std::size_t p = field.parameter_count();
    std::vector<std::vector<double>> partial(kChunks);
    parallel_chunks(n, kChunks, threads, [&](std::size_t b, std::size_t e, std::size_t c) {
        partial[c].assign(p, 0.0);
        auto &acc = partial[c];
        PointStencil s;
        std::vector<Vec3> path(static_cast<std::size_t>(steps) + 1);
        for (std::size_t i = b; i < e; ++i) {
            Vec3 lambda = g[i] * image_grad[i];
            if (lambda.isZero(0.0)) continue;
            if (cfg_.gradient == GradientMode::endpoint) {
                Vec3 m = geometry_.center(i);
                for (int k = 0; k < steps; ++k) {
                    ev.prepare(m, 0, s);
                    m += (sign * tau) * ev.velocity(s);
                }
                ev.prepare(m, 0, s);
                ev.scatter(s, sign * lambda, acc);
                continue;
            }
            const Vec3 *traj = path.data();
            if (keep_paths) {
                traj = &paths[i * path_len];
            } else {
                path[0] = geometry_.center(i);
                for (int k = 0; k < steps; ++k) {
                    ev.prepare(path[k], 0, s);
                    path[k + 1] = path[k] + (sign * tau) * ev.velocity(s);
                }
            }
            Vec3 v;
            Mat3 jac;
            for (int k = steps - 1; k >= 0; --k) {
                ev.prepare(traj[k], 1, s);
                ev.velocity_jacobian(s, v, jac);
                ev.scatter(s, (sign * tau) * lambda, acc);
                lambda += (sign * tau) * (jac.transpose() * lambda);
            }
        }
    });
    for (const auto &acc : partial)
        for (std::size_t j = 0; j < acc.size(); ++j) grad[j] += cfg_.similarity_weight * acc[j];
    return value;
}

double RegistrationObjective::evaluate(std::span<const double> theta, std::span<double> grad) {
    if (theta.size() != layout_.parameter_count()) throw ShapeError("parameter vector length does not match the field");
    if (!grad.empty() && grad.size() != theta.size()) throw ShapeError("gradient buffer length does not match the field");
    const SplineSVF field = from_coefficient_vector(layout_, theta);
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);

    ObjectiveTerms t;
    t.forward = direction(field, 1.0, *moving_, *forward_, grad, t.degenerate, t.flagged);
    t.backward = direction(field, -1.0, *fixed_, *backward_, grad, t.degenerate, t.flagged);
    if (cfg_.bending_weight > 0.0) {
        std::vector<double> gb(grad.empty() ? 0 : grad.size(), 0.0);
        t.bending = bending_.evaluate(field, gb);
        for (std::size_t j = 0; j < gb.size(); ++j) grad[j] += cfg_.bending_weight * gb[j];
    }
    t.total = cfg_.similarity_weight * (t.forward + t.backward) + cfg_.bending_weight * t.bending;
    terms_ = t;
    return t.total;
}

} // namespace divreg
