#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <string>
#include <vector>

#include <unistd.h>

#include <torch/torch.h>

#include "rim/data.hpp"
#include "rim/fhn.hpp"
#include "rim/hrn.hpp"
#include "rim/train.hpp"

namespace rim::test {

/// Directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("rim_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// 32x32 images, 4x4 probes, 8x8 priors, thin layers.
inline fhn::FhnConfig tiny_fhn() {
    fhn::FhnConfig c;
    c.image_size = {32, 32};
    c.prior_resolution = {8, 8};
    c.scale_factor = 8;
    c.coarse_channels = 8;
    c.coarse_blocks = 1;
    c.base_channels = 8;
    c.path_blocks = 1;
    c.integrator_channels = 8;
    c.integrator_blocks = 1;
    c.domain_channels = 8;
    c.domain_layers = 3;
    c.domain_dim = 16;
    return c;
}

inline hrn::HrnConfig tiny_hrn() {
    hrn::HrnConfig c;
    c.image_size = {32, 32};
    c.teacher_widths = {8, 16, 16, 32};
    c.student_widths = {4, 8, 16, 16};
    c.assistant_widths = {4, 8, 8, 16};
    return c;
}

inline train::TrainConfig tiny_train(int steps = 4) {
    train::TrainConfig c;
    c.batch_size = 4;
    c.steps = steps;
    c.checkpoint_every = 0;
    return c;
}

inline data::SynthOptions tiny_synth(int identities = 4, int per_identity = 4, int size = 32) {
    data::SynthOptions o;
    o.n_identities = identities;
    o.per_identity = per_identity;
    o.test_per_identity = 1;
    o.size = {size, size};
    return o;
}

/// PairSamples of a freshly generated synthetic set.
inline std::vector<data::PairSample> synth_samples(const TempDir& dir, const data::SynthOptions& options,
                                                   int scale = 8) {
    const auto manifest = data::synth_dataset(options, dir.path() / "synth");
    std::vector<data::PairSample> out;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        out.push_back(data::load_pair_sample(manifest, i, scale));
    }
    return out;
}

inline torch::Tensor randn64(std::vector<int64_t> shape) { return torch::randn(shape, torch::kFloat64); }

/// ||analytic - numeric|| / max(||analytic||, ||numeric||) per input, central
/// differences with step h, largest over inputs.
inline double gradcheck(const std::function<torch::Tensor(const std::vector<torch::Tensor>&)>& fn,
                        std::vector<torch::Tensor> inputs, double h = 1e-5) {
    std::vector<torch::Tensor> leaves;
    for (auto& x : inputs) {
        leaves.push_back(x.detach().clone().set_requires_grad(true));
    }
    fn(leaves).backward();
    double worst = 0.0;
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        const torch::Tensor analytic = leaves[k].grad().detach().clone();
        torch::Tensor numeric = torch::zeros_like(analytic);
        torch::NoGradGuard guard;
        std::vector<torch::Tensor> probe;
        for (auto& l : leaves) {
            probe.push_back(l.detach().clone());
        }
        auto flat = probe[k].view({-1});
        auto out = numeric.view({-1});
        for (int64_t i = 0; i < flat.numel(); ++i) {
            const double orig = flat[i].item<double>();
            flat[i] = orig + h;
            const double up = fn(probe).item<double>();
            flat[i] = orig - h;
            const double down = fn(probe).item<double>();
            flat[i] = orig;
            out[i] = (up - down) / (2.0 * h);
        }
        const double scale = std::max({analytic.norm().item<double>(), numeric.norm().item<double>(), 1e-12});
        worst = std::max(worst, (analytic - numeric).norm().item<double>() / scale);
    }
    return worst;
}

/// Concatenated copy of parameter values, for before/after comparisons.
inline std::vector<torch::Tensor> snapshot(const std::vector<torch::Tensor>& params) {
    std::vector<torch::Tensor> out;
    for (const auto& p : params) {
        out.push_back(p.detach().clone());
    }
    return out;
}

inline bool all_equal(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
    if (a.size() != b.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!torch::equal(a[i], b[i])) {
            return false;
        }
    }
    return true;
}

inline bool any_changed(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
    return !all_equal(a, b);
}

}  // namespace rim::test
