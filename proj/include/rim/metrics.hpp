#pragma once

#include <span>
#include <vector>

#include "rim/data.hpp"
#include "rim/hrn.hpp"

namespace rim::eval {

inline constexpr double kPsnrCap = 99.0;

/// 10*log10(peak^2 / MSE) over all channels; 99 dB when MSE is zero.
double psnr(const data::ImageTensor& a, const data::ImageTensor& b, double peak = 1.0);

/// Single-scale SSIM on the channel-mean grey image: 11x11 Gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03, averaged over all fully-inside windows.
double ssim(const data::ImageTensor& a, const data::ImageTensor& b, double peak = 1.0);

struct CsdPoint {
    double threshold = 0.0;
    double fraction = 0.0;  ///< share of scores >= threshold
};

std::vector<CsdPoint> csd_curve(std::span<const double> scores, std::span<const double> grid);

/// Evenly spaced grid [lo, hi] with `count` points.
std::vector<double> linear_grid(double lo, double hi, int count);

struct LabeledPair {
    hrn::Embedding a;
    hrn::Embedding b;
    bool same = false;
};

struct SweepPoint {
    double threshold = 0.0;
    double accuracy = 0.0;
};

struct SweepResult {
    std::vector<SweepPoint> table;
    double best_threshold = 0.0;
    double best_accuracy = 0.0;
};

/// Accuracy of cosine_verify at each threshold; ties go to the smallest
/// threshold. An empty grid means {0, every observed distance, 2}.
SweepResult verification_sweep(std::span<const LabeledPair> pairs, std::span<const double> thresholds = {});

/// Same sweep on precomputed distances.
SweepResult verification_sweep(std::span<const double> distances, const std::vector<bool>& same,
                               std::span<const double> thresholds = {});

double mean(std::span<const double> values);

}  // namespace rim::eval
