#pragma once

#include <span>
#include <vector>

#include <torch/torch.h>

namespace rim::losses {

/// Sum reproduces the literal (unnormalised) objectives; Mean divides by the
/// element count and is what training uses.
enum class Reduction { Sum, Mean };

enum class MmdEstimator {
    Biased,   ///< V-statistic, includes same-index kernel terms
    Unbiased  ///< U-statistic, drops them
};

struct LossWeights {
    double lambda0 = 1.0;   ///< pixel
    double lambda1 = 10.0;  ///< landmark heatmaps
    double lambda2 = 1.0;   ///< parsing

    void validate() const;
};

/// Convex combination of Gaussian kernels exp(-|u-v|^2 / (2 sigma_u)).
/// Note sigma enters linearly, it is a bandwidth on the squared distance.
struct KernelBank {
    std::vector<double> sigmas;
    std::vector<double> betas;

    void validate() const;

    static KernelBank uniform(std::vector<double> sigmas);

    /// sigma_u = multiplier_u * median pairwise squared distance over the rows
    /// of `features`, uniform betas.
    static KernelBank median_heuristic(const torch::Tensor& features,
                                       const std::vector<double>& multipliers = {0.25, 0.5, 1.0, 2.0, 4.0});
};

inline constexpr double kParsingLogFloor = 1e-12;

/// Squared Euclidean distance between images.
torch::Tensor pixel_loss(const torch::Tensor& a, const torch::Tensor& b, Reduction reduction = Reduction::Mean);

/// Heatmap regression loss over [.., N, H, W] stacks. Sum form is
/// (1/N) * sum of squared differences.
torch::Tensor landmark_loss(const torch::Tensor& pred, const torch::Tensor& target,
                            Reduction reduction = Reduction::Mean);

/// Pixel-averaged -(1/C) sum_c y_c log p_c for class probabilities [.., C, H, W]
/// and integer labels [.., H, W]. Probabilities are floored at 1e-12 before the log.
torch::Tensor parsing_loss(const torch::Tensor& probs, const torch::Tensor& labels);

/// Multi-kernel MMD between feature batches [N1, D] and [N2, D].
torch::Tensor mk_mmd(const torch::Tensor& x, const torch::Tensor& y, const KernelBank& bank,
                     MmdEstimator estimator = MmdEstimator::Biased);

/// Combined hallucination objective: domain + l0*pixel + l1*landmark + l2*parsing.
torch::Tensor generator_loss(const torch::Tensor& domain, const torch::Tensor& pixel, const torch::Tensor& landmark,
                             const torch::Tensor& parsing, const LossWeights& weights);
double generator_loss(double domain, double pixel, double landmark, double parsing, const LossWeights& weights);

/// The feature integrator is trained on the pixel loss alone.
torch::Tensor integrator_loss(const torch::Tensor& sr, const torch::Tensor& hr, Reduction reduction = Reduction::Mean);

/// Negated MMD; minimising it maximises the discrepancy.
torch::Tensor domain_discriminator_loss(const torch::Tensor& x_sr, const torch::Tensor& x_hr, const KernelBank& bank,
                                        MmdEstimator estimator = MmdEstimator::Biased);

/// Final-block feature matching between teacher and student.
torch::Tensor student_distill_loss(const torch::Tensor& teacher_tap, const torch::Tensor& student_tap,
                                   Reduction reduction = Reduction::Mean);

/// sum_k || (teacher_k - student_k) - assistant_k ||^2, each term reduced on its own.
torch::Tensor assistant_distill_loss(std::span<const torch::Tensor> teacher_taps,
                                     std::span<const torch::Tensor> student_taps,
                                     std::span<const torch::Tensor> assistant_taps,
                                     Reduction reduction = Reduction::Mean);

}  // namespace rim::losses
