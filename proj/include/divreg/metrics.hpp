#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "divreg/field.hpp"

namespace divreg {

enum class Similarity { ssd, lncc, nmi };

Similarity parse_similarity(const std::string &name);
std::string to_string(Similarity s);

struct MetricResult {
    double value = 0.0;
    std::vector<double> gradient; // d value / d warped intensity, one entry per voxel
    bool degenerate = false;      // NMI entropy floor hit
};

/// Dissimilarity between a reference image and warped intensities on the same lattice.
///
/// The intensity normalisations (LNCC variance floors, NMI bin ranges) are fixed at
/// construction from the reference and from the image that will be warped, so the value is
/// a smooth function of the warped intensities alone.
class SimilarityMeasure {
  public:
    struct Options {
        double lncc_sigma_mm = 5.0;
        int nmi_bins = 64;
        int parzen_order = 3; // 1 (linear) or 3 (cubic)
    };

    SimilarityMeasure(Similarity kind, const Image3D &ref, const Image3D &source, Options options);
    SimilarityMeasure(Similarity kind, const Image3D &ref, const Image3D &source)
        : SimilarityMeasure(kind, ref, source, Options{}) {}
    ~SimilarityMeasure();
    SimilarityMeasure(SimilarityMeasure &&) noexcept;
    SimilarityMeasure &operator=(SimilarityMeasure &&) noexcept;

    // Writes d value / d warped into `grad` when it is non-empty.
    double evaluate(std::span<const double> warped, std::span<double> grad, bool *degenerate = nullptr) const;
    MetricResult evaluate(const Image3D &warped) const;

    Similarity kind() const { return kind_; }
    const VoxelGeometry &geometry() const { return geometry_; }

  private:
    struct Lncc;
    struct Nmi;
    double ssd(std::span<const double> warped, std::span<double> grad) const;

    Similarity kind_;
    VoxelGeometry geometry_;
    std::vector<double> ref_;
    std::unique_ptr<Lncc> lncc_;
    std::unique_ptr<Nmi> nmi_;
};

// Mean squared difference.
MetricResult ssd_value_grad(const Image3D &ref, const Image3D &warped);
// 1 - mean squared local correlation in a Gaussian window of `sigma_mm`.
MetricResult lncc_value_grad(const Image3D &ref, const Image3D &warped, double sigma_mm);
// -(H_ref + H_warped) / H_joint with a Parzen-window joint histogram.
MetricResult nmi_value_grad(const Image3D &ref, const Image3D &warped, int bins, int parzen_order = 3);

/// Bending energy of a field sampled at the voxel centers of a geometry: the mean over the
/// samples of the squared Frobenius norm of every component's Hessian.
class BendingEnergy {
  public:
    BendingEnergy(VoxelGeometry samples, int threads = 0);
    // Adds d value / d theta into `grad` when it is non-empty.
    double evaluate(const SplineSVF &field, std::span<double> grad) const;
    const VoxelGeometry &samples() const { return samples_; }

  private:
    VoxelGeometry samples_;
    int threads_;
};

struct BendingResult {
    double value = 0.0;
    std::vector<double> gradient;
};
BendingResult bending_energy_value_grad(const SplineSVF &field, const VoxelGeometry &samples);

} // namespace divreg
