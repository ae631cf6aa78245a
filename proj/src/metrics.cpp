#include "rim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rim/errors.hpp"

namespace rim::eval {

namespace {

void require_same_shape(const data::ImageTensor& a, const data::ImageTensor& b, const char* what) {
    if (a.channels() != b.channels() || a.height() != b.height() || a.width() != b.width()) {
        throw std::invalid_argument(std::string(what) + ": images differ in shape");
    }
}

std::vector<double> grey(const data::ImageTensor& img) {
    std::vector<double> out(static_cast<std::size_t>(img.height()) * img.width(), 0.0);
    for (int c = 0; c < img.channels(); ++c) {
        for (int y = 0; y < img.height(); ++y) {
            for (int x = 0; x < img.width(); ++x) {
                out[static_cast<std::size_t>(y) * img.width() + x] += img.at(c, y, x);
            }
        }
    }
    for (auto& v : out) {
        v /= img.channels();
    }
    return out;
}

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;

std::vector<double> gaussian_window() {
    std::vector<double> w(kWindow);
    double total = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - kWindow / 2;
        w[i] = std::exp(-d * d / (2.0 * kWindowSigma * kWindowSigma));
        total += w[i];
    }
    for (auto& v : w) {
        v /= total;
    }
    return w;
}

/// Separable filtering, keeping only positions where the window fits.
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w, const std::vector<double>& k) {
    const int oh = h - kWindow + 1;
    const int ow = w - kWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWindow; ++i) {
                acc += k[i] * img[static_cast<std::size_t>(y) * w + x + i];
            }
            rows[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWindow; ++i) {
                acc += k[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
            }
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    }
    return out;
}

}  // namespace

double psnr(const data::ImageTensor& a, const data::ImageTensor& b, double peak) {
    require_same_shape(a, b, "psnr");
    if (a.empty()) {
        throw std::invalid_argument("psnr: empty images");
    }
    const auto va = a.values();
    const auto vb = b.values();
    double sum = 0.0;
    for (std::size_t i = 0; i < va.size(); ++i) {
        const double d = va[i] - vb[i];
        sum += d * d;
    }
    const double mse = sum / static_cast<double>(va.size());
    if (mse == 0.0) {
        return kPsnrCap;
    }
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

double ssim(const data::ImageTensor& a, const data::ImageTensor& b, double peak) {
    require_same_shape(a, b, "ssim");
    const int h = a.height();
    const int w = a.width();
    if (h < kWindow || w < kWindow) {
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");
    }
    const auto ga = grey(a);
    const auto gb = grey(b);
    std::vector<double> aa(ga.size());
    std::vector<double> bb(ga.size());
    std::vector<double> ab(ga.size());
    for (std::size_t i = 0; i < ga.size(); ++i) {
        aa[i] = ga[i] * ga[i];
        bb[i] = gb[i] * gb[i];
        ab[i] = ga[i] * gb[i];
    }
    const auto k = gaussian_window();
    const auto mu_a = filter_valid(ga, h, w, k);
    const auto mu_b = filter_valid(gb, h, w, k);
    const auto m_aa = filter_valid(aa, h, w, k);
    const auto m_bb = filter_valid(bb, h, w, k);
    const auto m_ab = filter_valid(ab, h, w, k);
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double var_a = m_aa[i] - mu_a[i] * mu_a[i];
        const double var_b = m_bb[i] - mu_b[i] * mu_b[i];
        const double cov = m_ab[i] - mu_a[i] * mu_b[i];
        const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
        const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (var_a + var_b + c2);
        total += num / den;
    }
    return total / static_cast<double>(mu_a.size());
}

std::vector<CsdPoint> csd_curve(std::span<const double> scores, std::span<const double> grid) {
    if (scores.empty()) {
        throw std::invalid_argument("csd_curve: no scores");
    }
    std::vector<CsdPoint> out;
    out.reserve(grid.size());
    for (const double t : grid) {
        const auto n = std::count_if(scores.begin(), scores.end(), [t](double s) { return s >= t; });
        out.push_back({t, static_cast<double>(n) / static_cast<double>(scores.size())});
    }
    return out;
}

std::vector<double> linear_grid(double lo, double hi, int count) {
    if (count < 2) {
        return {lo};
    }
    std::vector<double> out(count);
    for (int i = 0; i < count; ++i) {
        out[i] = lo + (hi - lo) * i / (count - 1);
    }
    return out;
}

SweepResult verification_sweep(std::span<const double> distances, const std::vector<bool>& same,
                               std::span<const double> thresholds) {
    if (distances.size() != same.size()) {
        throw std::invalid_argument("verification_sweep: need one label per pair");
    }
    if (distances.empty()) {
        throw ValidationError("verification_sweep: no pairs");
    }
    const auto n_same = std::count(same.begin(), same.end(), true);
    if (n_same == 0 || n_same == static_cast<std::ptrdiff_t>(same.size())) {
        throw ValidationError("verification_sweep: pairs must contain both same and different labels");
    }
    std::vector<double> grid(thresholds.begin(), thresholds.end());
    if (grid.empty()) {
        grid.assign(distances.begin(), distances.end());
        grid.push_back(0.0);
        grid.push_back(2.0);
        std::sort(grid.begin(), grid.end());
        grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    }
    SweepResult result;
    result.best_accuracy = -1.0;
    for (const double t : grid) {
        std::size_t correct = 0;
        for (std::size_t i = 0; i < distances.size(); ++i) {
            correct += static_cast<std::size_t>((distances[i] <= t) == same[i]);
        }
        const double acc = static_cast<double>(correct) / static_cast<double>(distances.size());
        result.table.push_back({t, acc});
        if (acc > result.best_accuracy || (acc == result.best_accuracy && t < result.best_threshold)) {
            result.best_accuracy = acc;
            result.best_threshold = t;
        }
    }
    return result;
}

SweepResult verification_sweep(std::span<const LabeledPair> pairs, std::span<const double> thresholds) {
    std::vector<double> distances;
    std::vector<bool> same;
    distances.reserve(pairs.size());
    for (const auto& p : pairs) {
        distances.push_back(hrn::cosine_distance(p.a, p.b));
        same.push_back(p.same);
    }
    return verification_sweep(distances, same, thresholds);
}

double mean(std::span<const double> values) {
    if (values.empty()) {
        return 0.0;
    }
    double total = 0.0;
    for (const double v : values) {
        total += v;
    }
    return total / static_cast<double>(values.size());
}

}  // namespace rim::eval
