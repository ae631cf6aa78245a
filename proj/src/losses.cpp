#include "rim/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace rim::losses {

using torch::Tensor;
using torch::autograd::AutogradContext;
using torch::autograd::tensor_list;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.sizes() != b.sizes()) {
        std::ostringstream msg;
        msg << what << ": shape mismatch " << a.sizes() << " vs " << b.sizes();
        throw std::invalid_argument(msg.str());
    }
}

/// scale * sum (a - b)^2 with a hand-written backward.
struct ScaledSquaredError : torch::autograd::Function<ScaledSquaredError> {
    static Tensor forward(AutogradContext* ctx, const Tensor& a, const Tensor& b, double scale) {
        Tensor diff = a - b;
        ctx->save_for_backward({diff});
        ctx->saved_data["scale"] = scale;
        return diff.square().sum() * scale;
    }

    static tensor_list backward(AutogradContext* ctx, tensor_list grad_out) {
        const Tensor diff = ctx->get_saved_variables()[0];
        const double scale = ctx->saved_data["scale"].toDouble();
        Tensor grad = grad_out[0] * (2.0 * scale) * diff;
        return {grad, -grad, Tensor()};
    }
};

Tensor scaled_squared_error(const Tensor& a, const Tensor& b, double scale) {
    return ScaledSquaredError::apply(a, b, scale);
}

/// Mean over pixels of -(1/C) log p[label].
struct ParsingCrossEntropy : torch::autograd::Function<ParsingCrossEntropy> {
    static Tensor forward(AutogradContext* ctx, const Tensor& probs, const Tensor& labels) {
        const int64_t classes = probs.size(-3);
        const Tensor picked = probs.gather(-3, labels.unsqueeze(-3)).squeeze(-3);
        const Tensor floored = picked.clamp_min(kParsingLogFloor);
        ctx->save_for_backward({picked, labels});
        ctx->saved_data["classes"] = classes;
        ctx->saved_data["pixels"] = labels.numel();
        return -floored.log().sum() / static_cast<double>(classes * labels.numel());
    }

    static tensor_list backward(AutogradContext* ctx, tensor_list grad_out) {
        const auto saved = ctx->get_saved_variables();
        const Tensor& picked = saved[0];
        const Tensor& labels = saved[1];
        const auto classes = ctx->saved_data["classes"].toInt();
        const auto pixels = ctx->saved_data["pixels"].toInt();
        const double scale = -1.0 / static_cast<double>(classes * pixels);
        // d/dp of log(max(p, eps)) vanishes where the floor is active.
        Tensor dpicked = torch::where(picked > kParsingLogFloor, scale / picked, torch::zeros_like(picked));
        std::vector<int64_t> shape(labels.sizes().begin(), labels.sizes().end());
        shape.insert(shape.end() - 2, classes);
        Tensor grad = torch::zeros(shape, picked.options());
        grad.scatter_(-3, labels.unsqueeze(-3), (grad_out[0] * dpicked).unsqueeze(-3));
        return {grad, Tensor()};
    }
};

Tensor pairwise_sq_dist(const Tensor& a, const Tensor& b) {
    return (a.unsqueeze(1) - b.unsqueeze(0)).square().sum(-1);
}

/// Returns (K, W) where K = sum_u beta_u exp(-d2/(2 sigma_u)) and
/// W = sum_u beta_u exp(-d2/(2 sigma_u)) / sigma_u, so dK/du = -W (u - v).
std::pair<Tensor, Tensor> kernel_and_slope(const Tensor& d2, const KernelBank& bank) {
    Tensor k = torch::zeros_like(d2);
    Tensor w = torch::zeros_like(d2);
    for (std::size_t u = 0; u < bank.sigmas.size(); ++u) {
        const Tensor e = torch::exp(d2 * (-1.0 / (2.0 * bank.sigmas[u]))) * bank.betas[u];
        k += e;
        w += e / bank.sigmas[u];
    }
    return {k, w};
}

struct MultiKernelMmd : torch::autograd::Function<MultiKernelMmd> {
    static Tensor forward(AutogradContext* ctx, const Tensor& x, const Tensor& y, const std::vector<double>& sigmas,
                          const std::vector<double>& betas, bool unbiased) {
        const KernelBank bank{sigmas, betas};
        const double n1 = static_cast<double>(x.size(0));
        const double n2 = static_cast<double>(y.size(0));
        auto [kxx, wxx] = kernel_and_slope(pairwise_sq_dist(x, x), bank);
        auto [kyy, wyy] = kernel_and_slope(pairwise_sq_dist(y, y), bank);
        auto [kxy, wxy] = kernel_and_slope(pairwise_sq_dist(x, y), bank);

        double cxx = 1.0 / (n1 * n1);
        double cyy = 1.0 / (n2 * n2);
        if (unbiased) {
            kxx.fill_diagonal_(0.0);
            kyy.fill_diagonal_(0.0);
            cxx = 1.0 / (n1 * (n1 - 1.0));
            cyy = 1.0 / (n2 * (n2 - 1.0));
        }
        const double cxy = 2.0 / (n1 * n2);
        ctx->save_for_backward({x, y, wxx, wyy, wxy});
        ctx->saved_data["cxx"] = cxx;
        ctx->saved_data["cyy"] = cyy;
        ctx->saved_data["cxy"] = cxy;
        return kxx.sum() * cxx - kxy.sum() * cxy + kyy.sum() * cyy;
    }

    static tensor_list backward(AutogradContext* ctx, tensor_list grad_out) {
        const auto s = ctx->get_saved_variables();
        const Tensor &x = s[0], &y = s[1], &wxx = s[2], &wyy = s[3], &wxy = s[4];
        const double cxx = ctx->saved_data["cxx"].toDouble();
        const double cyy = ctx->saved_data["cyy"].toDouble();
        const double cxy = ctx->saved_data["cxy"].toDouble();
        // d/dx_i of sum_{j,j'} k(x_j, x_j') = -2 sum_j W_ij (x_i - x_j).
        auto self_term = [](const Tensor& w, const Tensor& v) {
            return w.sum(1, true) * v - w.matmul(v);
        };
        Tensor gx = self_term(wxx, x) * (-2.0 * cxx) + (wxy.sum(1, true) * x - wxy.matmul(y)) * cxy;
        Tensor gy = self_term(wyy, y) * (-2.0 * cyy) + (wxy.sum(0).unsqueeze(1) * y - wxy.t().matmul(x)) * cxy;
        return {gx * grad_out[0], gy * grad_out[0], Tensor(), Tensor(), Tensor()};
    }
};

}  // namespace

void LossWeights::validate() const {
    if (!(lambda0 >= 0.0 && lambda1 >= 0.0 && lambda2 >= 0.0)) {
        throw std::invalid_argument("loss weights must be non-negative");
    }
}

void KernelBank::validate() const {
    if (sigmas.empty() || sigmas.size() != betas.size()) {
        throw std::invalid_argument("kernel bank needs matching, non-empty sigma and beta lists");
    }
    double total = 0.0;
    for (std::size_t u = 0; u < sigmas.size(); ++u) {
        if (!(sigmas[u] > 0.0) || !std::isfinite(sigmas[u])) {
            throw std::invalid_argument("kernel bandwidth " + std::to_string(u) + " must be positive");
        }
        if (!(betas[u] > 0.0)) {
            throw std::invalid_argument("kernel weight " + std::to_string(u) + " must be positive");
        }
        total += betas[u];
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw std::invalid_argument("kernel weights must sum to 1, got " + std::to_string(total));
    }
}

KernelBank KernelBank::uniform(std::vector<double> sigmas) {
    KernelBank bank;
    bank.betas.assign(sigmas.size(), sigmas.empty() ? 0.0 : 1.0 / static_cast<double>(sigmas.size()));
    bank.sigmas = std::move(sigmas);
    bank.validate();
    return bank;
}

KernelBank KernelBank::median_heuristic(const Tensor& features, const std::vector<double>& multipliers) {
    const Tensor f = features.detach().to(torch::kFloat64).reshape({features.size(0), -1});
    const int64_t n = f.size(0);
    double median = 1.0;
    if (n >= 2) {
        const Tensor d2 = pairwise_sq_dist(f, f);
        const Tensor upper = d2.triu(1);
        const Tensor mask = torch::ones({n, n}, torch::kBool).triu(1);
        std::vector<double> values;
        const Tensor picked = upper.masked_select(mask).contiguous();
        values.assign(picked.data_ptr<double>(), picked.data_ptr<double>() + picked.numel());
        std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2), values.end());
        median = values[values.size() / 2];
        if (!(median > 0.0) || !std::isfinite(median)) {
            median = 1.0;
        }
    }
    std::vector<double> sigmas;
    for (const double m : multipliers) {
        sigmas.push_back(m * median);
    }
    return uniform(std::move(sigmas));
}

Tensor pixel_loss(const Tensor& a, const Tensor& b, Reduction reduction) {
    require_same_shape(a, b, "pixel_loss");
    const double scale = reduction == Reduction::Mean ? 1.0 / static_cast<double>(a.numel()) : 1.0;
    return scaled_squared_error(a, b, scale);
}

Tensor landmark_loss(const Tensor& pred, const Tensor& target, Reduction reduction) {
    require_same_shape(pred, target, "landmark_loss");
    if (pred.dim() < 3) {
        throw std::invalid_argument("landmark_loss expects [.., N, H, W] heatmaps");
    }
    const double scale = reduction == Reduction::Mean ? 1.0 / static_cast<double>(pred.numel())
                                                      : 1.0 / static_cast<double>(pred.size(-3));
    return scaled_squared_error(pred, target, scale);
}

Tensor parsing_loss(const Tensor& probs, const Tensor& labels) {
    if (probs.dim() < 3 || labels.dim() != probs.dim() - 1) {
        throw std::invalid_argument("parsing_loss expects probs [.., C, H, W] and labels [.., H, W]");
    }
    auto expected = probs.sizes().vec();
    expected.erase(expected.end() - 3);
    if (labels.sizes().vec() != expected) {
        throw std::invalid_argument("parsing_loss: label shape does not match probabilities");
    }
    const Tensor l = labels.to(torch::kLong);
    if (l.numel() > 0 && (l.min().item<int64_t>() < 0 || l.max().item<int64_t>() >= probs.size(-3))) {
        throw std::invalid_argument("parsing_loss: label outside [0, C)");
    }
    const double deviation = (probs.detach().sum(-3) - 1.0).abs().max().item<double>();
    if (deviation > 1e-4) {
        throw std::invalid_argument("parsing_loss: probabilities are not normalised (max deviation " +
                                    std::to_string(deviation) + ")");
    }
    return ParsingCrossEntropy::apply(probs, l);
}

Tensor mk_mmd(const Tensor& x, const Tensor& y, const KernelBank& bank, MmdEstimator estimator) {
    bank.validate();
    if (x.dim() != 2 || y.dim() != 2) {
        throw std::invalid_argument("mk_mmd expects [batch, dim] feature batches");
    }
    if (x.size(1) != y.size(1)) {
        throw std::invalid_argument("mk_mmd: feature dimension mismatch (" + std::to_string(x.size(1)) + " vs " +
                                    std::to_string(y.size(1)) + ")");
    }
    if (x.size(0) < 1 || y.size(0) < 1) {
        throw std::invalid_argument("mk_mmd: empty batch");
    }
    const bool unbiased = estimator == MmdEstimator::Unbiased;
    if (unbiased && (x.size(0) < 2 || y.size(0) < 2)) {
        throw std::invalid_argument("unbiased mk_mmd needs at least two samples per domain");
    }
    return MultiKernelMmd::apply(x, y, bank.sigmas, bank.betas, unbiased);
}

Tensor generator_loss(const Tensor& domain, const Tensor& pixel, const Tensor& landmark, const Tensor& parsing,
                      const LossWeights& weights) {
    weights.validate();
    return domain + pixel * weights.lambda0 + landmark * weights.lambda1 + parsing * weights.lambda2;
}

double generator_loss(double domain, double pixel, double landmark, double parsing, const LossWeights& weights) {
    weights.validate();
    return domain + weights.lambda0 * pixel + weights.lambda1 * landmark + weights.lambda2 * parsing;
}

Tensor integrator_loss(const Tensor& sr, const Tensor& hr, Reduction reduction) {
    return pixel_loss(sr, hr, reduction);
}

Tensor domain_discriminator_loss(const Tensor& x_sr, const Tensor& x_hr, const KernelBank& bank,
                                 MmdEstimator estimator) {
    return -mk_mmd(x_sr, x_hr, bank, estimator);
}

Tensor student_distill_loss(const Tensor& teacher_tap, const Tensor& student_tap, Reduction reduction) {
    require_same_shape(teacher_tap, student_tap, "student_distill_loss");
    const double scale = reduction == Reduction::Mean ? 1.0 / static_cast<double>(teacher_tap.numel()) : 1.0;
    return scaled_squared_error(teacher_tap, student_tap, scale);
}

Tensor assistant_distill_loss(std::span<const Tensor> teacher_taps, std::span<const Tensor> student_taps,
                              std::span<const Tensor> assistant_taps, Reduction reduction) {
    if (teacher_taps.size() != student_taps.size() || teacher_taps.size() != assistant_taps.size()) {
        throw std::invalid_argument("assistant_distill_loss: tap lists differ in length");
    }
    if (teacher_taps.empty()) {
        throw std::invalid_argument("assistant_distill_loss: no taps");
    }
    Tensor total;
    for (std::size_t k = 0; k < teacher_taps.size(); ++k) {
        require_same_shape(teacher_taps[k], student_taps[k], "assistant_distill_loss");
        require_same_shape(teacher_taps[k], assistant_taps[k], "assistant_distill_loss");
        const double scale =
            reduction == Reduction::Mean ? 1.0 / static_cast<double>(teacher_taps[k].numel()) : 1.0;
        Tensor term = scaled_squared_error(teacher_taps[k] - student_taps[k], assistant_taps[k], scale);
        total = total.defined() ? total + term : term;
    }
    return total;
}

}  // namespace rim::losses
