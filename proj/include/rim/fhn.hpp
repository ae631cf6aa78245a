#pragma once

#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "rim/data.hpp"

namespace rim::fhn {

/// Which image the domain encoder compares against the HR gallery image.
enum class DomainSource { Sr, Coarse };

std::string to_string(DomainSource source);
DomainSource parse_domain_source(const std::string& text);

struct FhnConfig {
    data::Size2 image_size{64, 64};
    data::Size2 prior_resolution{16, 16};
    int scale_factor = 8;

    int coarse_channels = 16;
    int coarse_blocks = 2;
    int base_channels = 32;   ///< trunk and path width
    int path_blocks = 3;
    int integrator_channels = 32;
    int integrator_blocks = 2;
    int domain_channels = 16;  ///< width of the first encoder layer, doubled per layer
    int domain_layers = 4;
    int domain_dim = 64;

    int heatmap_channels = 5;   ///< landmark count N
    int parsing_channels = 4;   ///< parsing class count C

    /// Zero the last layer of the coarse net and the integrator so the
    /// untrained pipeline reproduces its bicubic input.
    bool zero_init_residual = true;
    DomainSource domain_source = DomainSource::Sr;

    data::Size2 lr_size() const { return {image_size.height / scale_factor, image_size.width / scale_factor}; }
    /// image_size / prior_resolution, a power of two.
    int prior_stride() const { return image_size.width / prior_resolution.width; }
    int concat_channels() const { return base_channels + heatmap_channels + parsing_channels; }

    void validate() const;

    /// 224x224 images, 28x28 probes, 56x56 priors, 194 landmarks, 11 classes.
    static FhnConfig helen_shape();
};

/// Disjoint parameter groups. Generator = {Coarse, Features, Landmark, Parsing}.
enum class Group { Coarse, Features, Landmark, Parsing, Integrator, Domain };

inline constexpr Group kGeneratorGroups[] = {Group::Coarse, Group::Features, Group::Landmark, Group::Parsing};

std::string to_string(Group group);

/// Conv-ReLU-Conv with identity skip.
class ResidualBlockImpl : public torch::nn::Module {
public:
    explicit ResidualBlockImpl(int channels);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv1_{nullptr};
    torch::nn::Conv2d conv2_{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// G_c: residual refinement of the bicubic-upsampled probe, clipped to [0,1].
class CoarseSrNetImpl : public torch::nn::Module {
public:
    explicit CoarseSrNetImpl(const FhnConfig& cfg);
    torch::Tensor forward(const torch::Tensor& upsampled);

private:
    torch::nn::Conv2d head_{nullptr};
    torch::nn::Sequential body_{nullptr};
    torch::nn::Conv2d tail_{nullptr};
};
TORCH_MODULE(CoarseSrNet);

struct TriPathOutputs {
    torch::Tensor features;       ///< [B, base_channels, h, w]
    torch::Tensor heatmaps;       ///< [B, N, h, w]
    torch::Tensor parsing_probs;  ///< [B, C, h, w], softmax over C

    torch::Tensor concat() const;
};

/// Shared strided stem followed by global-feature, landmark and parsing paths.
class TriPathImpl : public torch::nn::Module {
public:
    explicit TriPathImpl(const FhnConfig& cfg);
    TriPathOutputs forward(const torch::Tensor& img);

    torch::nn::Sequential stem{nullptr};
    torch::nn::Sequential global_path{nullptr};
    torch::nn::Sequential landmark_path{nullptr};
    torch::nn::Sequential parsing_path{nullptr};
};
TORCH_MODULE(TriPath);

/// D_i: reconstructs I_sr from concatenated features as a residual over I_c.
class IntegratorImpl : public torch::nn::Module {
public:
    explicit IntegratorImpl(const FhnConfig& cfg);
    torch::Tensor forward(const torch::Tensor& concat, const torch::Tensor& coarse);

private:
    int expected_channels_;
    torch::nn::Sequential body_{nullptr};
    torch::nn::Conv2d tail_{nullptr};
};
TORCH_MODULE(Integrator);

/// D_d's learnable part: strided conv encoder + global average pool.
class DomainEncoderImpl : public torch::nn::Module {
public:
    explicit DomainEncoderImpl(const FhnConfig& cfg);
    torch::Tensor forward(const torch::Tensor& img);

private:
    torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(DomainEncoder);

struct FhnOutputs {
    torch::Tensor coarse;         ///< I_c
    torch::Tensor sr;             ///< I_sr
    torch::Tensor pred_heatmaps;
    torch::Tensor pred_parsing_probs;
    torch::Tensor concat_features;
    torch::Tensor domain_features_sr;  ///< from I_sr or I_c per domain_source
    torch::Tensor domain_features_hr;  ///< undefined when no HR image is given
};

/// Face hallucination sub-net.
class FhnImpl : public torch::nn::Module {
public:
    explicit FhnImpl(FhnConfig cfg);

    const FhnConfig& config() const noexcept { return cfg_; }

    torch::Tensor coarse_sr(const torch::Tensor& upsampled);
    TriPathOutputs tripath_forward(const torch::Tensor& img);
    torch::Tensor integrate_sr(const torch::Tensor& concat, const torch::Tensor& coarse);
    torch::Tensor domain_encode(const torch::Tensor& img);

    /// Full pipeline from an already-upsampled probe [B,3,H,W].
    FhnOutputs forward_upsampled(const torch::Tensor& upsampled, const std::optional<torch::Tensor>& hr = std::nullopt);

    /// Full pipeline from the LR probe [B,3,h,w]: bicubic upsample, coarse SR,
    /// tri-path, integration and domain encoding.
    FhnOutputs hallucinate(const torch::Tensor& lr, const std::optional<torch::Tensor>& hr = std::nullopt);

    std::vector<torch::Tensor> group_parameters(Group group);
    std::vector<torch::Tensor> generator_parameters();

    CoarseSrNet coarse{nullptr};
    TriPath tripath{nullptr};
    Integrator integrator{nullptr};
    DomainEncoder domain{nullptr};

private:
    void check_image(const torch::Tensor& img, const char* what) const;

    FhnConfig cfg_;
};
TORCH_MODULE(Fhn);

/// Bicubic upsampling of a [B,3,h,w] batch through data::bicubic_resize.
torch::Tensor bicubic_batch(const torch::Tensor& images, data::Size2 target);

}  // namespace rim::fhn
