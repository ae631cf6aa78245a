#include "rim/fhn.hpp"

#include <bit>
#include <sstream>
#include <stdexcept>

#include "rim/tensor_util.hpp"

namespace rim::fhn {

namespace nn = torch::nn;
using torch::Tensor;

namespace {

/// Clamps to [0,1]. Out-of-range pixels keep only gradient that pulls them back
/// toward the range: a hard clamp would freeze them, a plain pass-through lets them drift.
struct ClampUnit : torch::autograd::Function<ClampUnit> {
    static Tensor forward(torch::autograd::AutogradContext* ctx, const Tensor& x) {
        ctx->save_for_backward({x});
        return torch::clamp(x, 0.0, 1.0);
    }
    static torch::autograd::variable_list backward(torch::autograd::AutogradContext* ctx,
                                                   torch::autograd::variable_list grads) {
        const Tensor x = ctx->get_saved_variables()[0];
        const Tensor& g = grads[0];
        const Tensor keep = ((x >= 0) & (x <= 1)) | ((x > 1) & (g > 0)) | ((x < 0) & (g < 0));
        return {g * keep.to(g.scalar_type())};
    }
};

Tensor clamp_unit(const Tensor& x) { return ClampUnit::apply(x); }

nn::Conv2d conv3x3(int in, int out, int stride = 1) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

void zero_conv(nn::Conv2d& conv) {
    torch::NoGradGuard guard;
    conv->weight.zero_();
    if (conv->bias.defined()) {
        conv->bias.zero_();
    }
}

bool is_power_of_two(int v) { return v > 0 && std::has_single_bit(static_cast<unsigned>(v)); }

int log2_int(int v) { return std::countr_zero(static_cast<unsigned>(v)); }

}  // namespace

std::string to_string(DomainSource source) { return source == DomainSource::Sr ? "sr" : "coarse"; }

DomainSource parse_domain_source(const std::string& text) {
    if (text == "sr") {
        return DomainSource::Sr;
    }
    if (text == "coarse") {
        return DomainSource::Coarse;
    }
    throw std::invalid_argument("domain source must be 'sr' or 'coarse', got '" + text + "'");
}

std::string to_string(Group group) {
    switch (group) {
        case Group::Coarse: return "coarse";
        case Group::Features: return "features";
        case Group::Landmark: return "landmark";
        case Group::Parsing: return "parsing";
        case Group::Integrator: return "integrator";
        case Group::Domain: return "domain";
    }
    return "unknown";
}

void FhnConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v < 1) {
            throw std::invalid_argument(std::string("fhn.") + name + " must be positive");
        }
    };
    positive(image_size.height, "image_size");
    positive(image_size.width, "image_size");
    positive(prior_resolution.height, "prior_resolution");
    positive(prior_resolution.width, "prior_resolution");
    positive(scale_factor, "scale_factor");
    positive(coarse_channels, "coarse_channels");
    positive(base_channels, "base_channels");
    positive(integrator_channels, "integrator_channels");
    positive(domain_channels, "domain_channels");
    positive(domain_layers, "domain_layers");
    positive(domain_dim, "domain_dim");
    positive(heatmap_channels, "heatmap_channels");
    positive(parsing_channels, "parsing_channels");
    if (coarse_blocks < 0 || path_blocks < 0 || integrator_blocks < 0) {
        throw std::invalid_argument("fhn block counts must be non-negative");
    }
    if (image_size.height % scale_factor != 0 || image_size.width % scale_factor != 0) {
        throw std::invalid_argument("fhn.image_size must be divisible by scale_factor");
    }
    if (image_size.height % prior_resolution.height != 0 || image_size.width % prior_resolution.width != 0 ||
        image_size.height / prior_resolution.height != image_size.width / prior_resolution.width ||
        !is_power_of_two(image_size.width / prior_resolution.width)) {
        throw std::invalid_argument("fhn.image_size / prior_resolution must be one power-of-two factor");
    }
}

FhnConfig FhnConfig::helen_shape() {
    FhnConfig cfg;
    cfg.image_size = {224, 224};
    cfg.prior_resolution = {56, 56};
    cfg.scale_factor = 8;
    cfg.coarse_channels = 32;
    cfg.coarse_blocks = 4;
    cfg.heatmap_channels = 194;
    cfg.parsing_channels = 11;
    return cfg;
}

// ---------------------------------------------------------------------------

ResidualBlockImpl::ResidualBlockImpl(int channels)
    : conv1_(register_module("conv1", conv3x3(channels, channels))),
      conv2_(register_module("conv2", conv3x3(channels, channels))) {}

Tensor ResidualBlockImpl::forward(const Tensor& x) { return x + conv2_(torch::relu(conv1_(x))); }

CoarseSrNetImpl::CoarseSrNetImpl(const FhnConfig& cfg)
    : head_(register_module("head", conv3x3(3, cfg.coarse_channels))),
      body_(register_module("body", nn::Sequential())),
      tail_(register_module("tail", conv3x3(cfg.coarse_channels, 3))) {
    for (int b = 0; b < cfg.coarse_blocks; ++b) {
        body_->push_back(ResidualBlock(cfg.coarse_channels));
    }
    if (cfg.zero_init_residual) {
        zero_conv(tail_);
    }
}

Tensor CoarseSrNetImpl::forward(const Tensor& upsampled) {
    Tensor h = torch::relu(head_(upsampled));
    if (!body_->is_empty()) {
        h = body_->forward(h);
    }
    return clamp_unit(upsampled + tail_(h));
}

Tensor TriPathOutputs::concat() const { return torch::cat({features, heatmaps, parsing_probs}, 1); }

TriPathImpl::TriPathImpl(const FhnConfig& cfg) {
    const int c = cfg.base_channels;
    stem = register_module("stem", nn::Sequential());
    const int downs = log2_int(cfg.prior_stride());
    int in = 3;
    for (int d = 0; d < downs; ++d) {
        stem->push_back(conv3x3(in, c, 2));
        stem->push_back(nn::ReLU());
        in = c;
    }
    if (downs == 0) {
        stem->push_back(conv3x3(3, c));
        stem->push_back(nn::ReLU());
    }
    auto make_path = [&](int out_channels) {
        nn::Sequential path;
        for (int b = 0; b < cfg.path_blocks; ++b) {
            path->push_back(ResidualBlock(c));
        }
        path->push_back(conv3x3(c, out_channels));
        return path;
    };
    global_path = register_module("global_path", make_path(c));
    landmark_path = register_module("landmark_path", make_path(cfg.heatmap_channels));
    parsing_path = register_module("parsing_path", make_path(cfg.parsing_channels));
}

TriPathOutputs TriPathImpl::forward(const Tensor& img) {
    const Tensor trunk = stem->forward(img);
    return {global_path->forward(trunk), landmark_path->forward(trunk),
            torch::softmax(parsing_path->forward(trunk), 1)};
}

IntegratorImpl::IntegratorImpl(const FhnConfig& cfg)
    : expected_channels_(cfg.concat_channels()),
      body_(register_module("body", nn::Sequential())),
      tail_(register_module("tail", conv3x3(cfg.integrator_channels, 3))) {
    const int c = cfg.integrator_channels;
    body_->push_back(conv3x3(expected_channels_, c));
    body_->push_back(nn::ReLU());
    for (int b = 0; b < cfg.integrator_blocks; ++b) {
        body_->push_back(ResidualBlock(c));
    }
    for (int s = 0; s < log2_int(cfg.prior_stride()); ++s) {
        body_->push_back(conv3x3(c, 4 * c));
        body_->push_back(nn::PixelShuffle(nn::PixelShuffleOptions(2)));
        body_->push_back(nn::ReLU());
    }
    if (cfg.zero_init_residual) {
        zero_conv(tail_);
    }
}

Tensor IntegratorImpl::forward(const Tensor& concat, const Tensor& coarse) {
    if (concat.dim() != 4 || concat.size(1) != expected_channels_) {
        throw std::invalid_argument("integrate_sr expects " + std::to_string(expected_channels_) +
                                    " concatenated channels, got " +
                                    (concat.dim() == 4 ? std::to_string(concat.size(1)) : std::string("a non-4D tensor")));
    }
    return clamp_unit(coarse + tail_(body_->forward(concat)));
}

DomainEncoderImpl::DomainEncoderImpl(const FhnConfig& cfg) : body_(register_module("body", nn::Sequential())) {
    int in = 3;
    int width = cfg.domain_channels;
    for (int l = 0; l < cfg.domain_layers; ++l) {
        const bool last = l + 1 == cfg.domain_layers;
        const int out = last ? cfg.domain_dim : width;
        body_->push_back(conv3x3(in, out, 2));
        if (!last) {
            body_->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
        }
        in = out;
        width *= 2;
    }
}

Tensor DomainEncoderImpl::forward(const Tensor& img) { return body_->forward(img).mean({2, 3}); }

// ---------------------------------------------------------------------------

FhnImpl::FhnImpl(FhnConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    coarse = register_module("coarse", CoarseSrNet(cfg_));
    tripath = register_module("tripath", TriPath(cfg_));
    integrator = register_module("integrator", Integrator(cfg_));
    domain = register_module("domain", DomainEncoder(cfg_));
}

void FhnImpl::check_image(const Tensor& img, const char* what) const {
    if (img.dim() != 4 || img.size(1) != 3 || img.size(2) != cfg_.image_size.height ||
        img.size(3) != cfg_.image_size.width) {
        std::ostringstream msg;
        msg << what << ": expected [B,3," << cfg_.image_size.height << "," << cfg_.image_size.width << "], got "
            << img.sizes();
        throw std::invalid_argument(msg.str());
    }
}

Tensor FhnImpl::coarse_sr(const Tensor& upsampled) {
    check_image(upsampled, "coarse_sr");
    return coarse->forward(upsampled);
}

TriPathOutputs FhnImpl::tripath_forward(const Tensor& img) {
    check_image(img, "tripath_forward");
    return tripath->forward(img);
}

Tensor FhnImpl::integrate_sr(const Tensor& concat, const Tensor& coarse_img) {
    return integrator->forward(concat, coarse_img);
}

Tensor FhnImpl::domain_encode(const Tensor& img) {
    check_image(img, "domain_encode");
    return domain->forward(img);
}

FhnOutputs FhnImpl::forward_upsampled(const Tensor& upsampled, const std::optional<Tensor>& hr) {
    FhnOutputs out;
    out.coarse = coarse_sr(upsampled);
    auto tri = tripath_forward(out.coarse);
    out.pred_heatmaps = tri.heatmaps;
    out.pred_parsing_probs = tri.parsing_probs;
    out.concat_features = tri.concat();
    out.sr = integrate_sr(out.concat_features, out.coarse);
    out.domain_features_sr = domain_encode(cfg_.domain_source == DomainSource::Sr ? out.sr : out.coarse);
    if (hr.has_value()) {
        out.domain_features_hr = domain_encode(*hr);
    }
    return out;
}

FhnOutputs FhnImpl::hallucinate(const Tensor& lr, const std::optional<Tensor>& hr) {
    const auto lr_size = cfg_.lr_size();
    if (lr.dim() != 4 || lr.size(1) != 3 || lr.size(2) != lr_size.height || lr.size(3) != lr_size.width) {
        std::ostringstream msg;
        msg << "hallucinate: expected LR probe [B,3," << lr_size.height << "," << lr_size.width << "], got "
            << lr.sizes();
        throw std::invalid_argument(msg.str());
    }
    return forward_upsampled(bicubic_batch(lr, cfg_.image_size), hr);
}

std::vector<Tensor> FhnImpl::group_parameters(Group group) {
    switch (group) {
        case Group::Coarse: return coarse->parameters();
        case Group::Features: {
            auto params = tripath->stem->parameters();
            auto more = tripath->global_path->parameters();
            params.insert(params.end(), more.begin(), more.end());
            return params;
        }
        case Group::Landmark: return tripath->landmark_path->parameters();
        case Group::Parsing: return tripath->parsing_path->parameters();
        case Group::Integrator: return integrator->parameters();
        case Group::Domain: return domain->parameters();
    }
    return {};
}

std::vector<Tensor> FhnImpl::generator_parameters() {
    std::vector<Tensor> params;
    for (const auto g : kGeneratorGroups) {
        auto p = group_parameters(g);
        params.insert(params.end(), p.begin(), p.end());
    }
    return params;
}

Tensor bicubic_batch(const Tensor& images, data::Size2 target) {
    std::vector<Tensor> out;
    out.reserve(images.size(0));
    for (int64_t b = 0; b < images.size(0); ++b) {
        out.push_back(to_tensor(data::bicubic_resize(to_image(images[b]), target), images.scalar_type()));
    }
    return torch::stack(out);
}

}  // namespace rim::fhn
