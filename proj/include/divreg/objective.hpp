#pragma once

#include <memory>
#include <span>

#include "divreg/flow.hpp"
#include "divreg/metrics.hpp"

namespace divreg {

// exact_adjoint differentiates through every Euler step; endpoint treats the derivative of
// the flow as the basis map at the trajectory end.
enum class GradientMode { exact_adjoint, endpoint };

struct ObjectiveConfig {
    Similarity similarity = Similarity::nmi;
    double similarity_weight = 0.95;
    double bending_weight = 0.05;
    double lncc_sigma_mm = 5.0;
    int nmi_bins = 64;
    int parzen_order = 3;
    Interpolation interpolation = Interpolation::cubic;
    GradientMode gradient = GradientMode::exact_adjoint;
    int threads = 0;

    void validate() const;
    SimilarityMeasure::Options similarity_options() const;
};

struct ObjectiveTerms {
    double forward = 0.0;  // L(fixed, moving o exp(v))
    double backward = 0.0; // L(moving, fixed o exp(-v))
    double bending = 0.0;
    double total = 0.0;
    bool degenerate = false;
    std::size_t flagged = 0; // trajectories that left the grid box, both directions
};

/// Symmetric registration energy
///   w_s [L(I2, I1 o exp(v)) + L(I1, I2 o exp(-v))] + w_b R(v)
/// over the parameter vector of a spline velocity field, with I1 the moving and I2 the
/// fixed image. Both images must share one voxel frame.
class RegistrationObjective {
  public:
    RegistrationObjective(const Image3D &moving, const Image3D &fixed, const SplineSVF &layout, ObjectiveConfig cfg,
                          EulerConfig euler);
    ~RegistrationObjective();

    // Value at theta; the gradient is written to `grad` when it is non-empty.
    double evaluate(std::span<const double> theta, std::span<double> grad);
    const ObjectiveTerms &last_terms() const { return terms_; }
    std::size_t parameter_count() const { return layout_.parameter_count(); }
    const SplineSVF &layout() const { return layout_; }
    const ObjectiveConfig &config() const { return cfg_; }
    const EulerConfig &euler() const { return euler_; }

  private:
    double direction(const SplineSVF &field, double sign, const ImageSampler &sampler, const SimilarityMeasure &measure,
                     std::span<double> grad, bool &degenerate, std::size_t &flagged) const;

    VoxelGeometry geometry_;
    SplineSVF layout_;
    ObjectiveConfig cfg_;
    EulerConfig euler_;
    std::unique_ptr<ImageSampler> moving_, fixed_;
    std::unique_ptr<SimilarityMeasure> forward_, backward_;
    BendingEnergy bending_;
    ObjectiveTerms terms_;
};

} // namespace divreg
