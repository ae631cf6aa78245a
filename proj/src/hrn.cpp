#include "rim/hrn.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "rim/errors.hpp"

namespace rim::hrn {

namespace nn = torch::nn;
using torch::Tensor;

void HrnConfig::validate() const {
    if (teacher_widths.empty()) {
        throw std::invalid_argument("hrn needs at least one block");
    }
    if (student_widths.size() != teacher_widths.size() || assistant_widths.size() != teacher_widths.size()) {
        throw std::invalid_argument("hrn teacher, student and assistant must have the same block count");
    }
    for (const auto* widths : {&teacher_widths, &student_widths, &assistant_widths}) {
        for (const int w : *widths) {
            if (w < 1) {
                throw std::invalid_argument("hrn block widths must be positive");
            }
        }
    }
    const int reduction = 1 << block_count();
    if (image_size.height % reduction != 0 || image_size.width % reduction != 0) {
        throw std::invalid_argument("hrn image size must be divisible by 2^K");
    }
}

std::string to_string(Role role) {
    switch (role) {
        case Role::Teacher: return "teacher";
        case Role::Student: return "student";
        case Role::Assistant: return "assistant";
    }
    return "unknown";
}

BasicBlockImpl::BasicBlockImpl(int in, int out, int stride)
    : conv1_(register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1)))),
      conv2_(register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1)))) {
    if (in != out || stride != 1) {
        shortcut_ = register_module("shortcut", nn::Conv2d(nn::Conv2dOptions(in, out, 1).stride(stride)));
    }
}

Tensor BasicBlockImpl::forward(const Tensor& x) {
    const Tensor skip = shortcut_ ? shortcut_(x) : x;
    return torch::relu(skip + conv2_(torch::relu(conv1_(x))));
}

BackboneImpl::BackboneImpl(const std::vector<int>& widths)
    : stem_(register_module("stem", nn::Conv2d(nn::Conv2dOptions(3, widths.front(), 3).stride(2).padding(1)))) {
    int in = widths.front();
    for (std::size_t k = 0; k < widths.size(); ++k) {
        blocks_.push_back(register_module("block" + std::to_string(k + 1), BasicBlock(in, widths[k], k == 0 ? 1 : 2)));
        in = widths[k];
    }
}

BlockFeatures BackboneImpl::forward(const Tensor& img) {
    BlockFeatures out;
    Tensor h = torch::relu(stem_(img));
    for (auto& block : blocks_) {
        h = block->forward(h);
        out.taps.push_back(h);
    }
    return out;
}

AdaptedBackboneImpl::AdaptedBackboneImpl(const std::vector<int>& widths, const std::vector<int>& target_widths)
    : backbone(register_module("backbone", Backbone(widths))) {
    for (std::size_t k = 0; k < widths.size(); ++k) {
        if (widths[k] != target_widths[k]) {
            projectors_.push_back(register_module("proj" + std::to_string(k + 1),
                                                  nn::Conv2d(nn::Conv2dOptions(widths[k], target_widths[k], 1))));
        } else {
            projectors_.emplace_back(nullptr);
        }
    }
}

BlockFeatures AdaptedBackboneImpl::forward(const Tensor& img) {
    auto features = backbone->forward(img);
    for (std::size_t k = 0; k < features.taps.size(); ++k) {
        if (projectors_[k]) {
            features.taps[k] = projectors_[k]->forward(features.taps[k]);
        }
    }
    return features;
}

HrnNetsImpl::HrnNetsImpl(HrnConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    teacher = register_module("teacher", Backbone(cfg_.teacher_widths));
    student = register_module("student", AdaptedBackbone(cfg_.student_widths, cfg_.teacher_widths));
    assistant = register_module("assistant", AdaptedBackbone(cfg_.assistant_widths, cfg_.teacher_widths));
    for (auto& p : teacher->parameters()) {
        p.set_requires_grad(false);
    }
}

BlockFeatures HrnNetsImpl::forward_with_taps(Role role, const Tensor& img) {
    if (img.dim() != 4 || img.size(1) != 3 || img.size(2) != cfg_.image_size.height ||
        img.size(3) != cfg_.image_size.width) {
        std::ostringstream msg;
        msg << "forward_with_taps: expected [B,3," << cfg_.image_size.height << "," << cfg_.image_size.width
            << "], got " << img.sizes();
        throw std::invalid_argument(msg.str());
    }
    switch (role) {
        case Role::Teacher: return teacher->forward(img);
        case Role::Student: return student->forward(img);
        case Role::Assistant: return assistant->forward(img);
    }
    return {};
}

std::vector<Tensor> HrnNetsImpl::role_parameters(Role role) {
    switch (role) {
        case Role::Teacher: return teacher->parameters();
        case Role::Student: return student->parameters();
        case Role::Assistant: return assistant->parameters();
    }
    return {};
}

// ---------------------------------------------------------------------------

Tensor residual_compose(const Tensor& student_tap, const Tensor& assistant_tap) {
    if (student_tap.sizes() != assistant_tap.sizes()) {
        throw std::invalid_argument("residual_compose: student and assistant taps differ in shape");
    }
    return student_tap + assistant_tap;
}

Embedding embed(const Tensor& tap) {
    if (tap.dim() < 1) {
        throw std::invalid_argument("embed expects a [C,...] feature map");
    }
    const Tensor pooled = tap.detach().to(torch::kFloat64).reshape({tap.size(0), -1}).mean(1).contiguous();
    const double norm = pooled.norm().item<double>();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
        throw DegenerateEmbeddingError("cannot normalise a zero (or non-finite) pooled feature vector");
    }
    Embedding e;
    const auto* p = pooled.data_ptr<double>();
    e.vector.reserve(pooled.numel());
    for (int64_t i = 0; i < pooled.numel(); ++i) {
        e.vector.push_back(p[i] / norm);
    }
    return e;
}

std::vector<Embedding> embed_batch(const Tensor& taps) {
    std::vector<Embedding> out;
    out.reserve(taps.size(0));
    for (int64_t b = 0; b < taps.size(0); ++b) {
        out.push_back(embed(taps[b]));
    }
    return out;
}

double cosine_distance(const Embedding& e1, const Embedding& e2) {
    if (e1.dim() != e2.dim()) {
        throw std::invalid_argument("cosine_distance: embedding dimensions differ");
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < e1.dim(); ++i) {
        dot += e1.vector[i] * e2.vector[i];
    }
    return 1.0 - dot;
}

Verification cosine_verify(const Embedding& e1, const Embedding& e2, double threshold) {
    const double d = cosine_distance(e1, e2);
    return {d <= threshold, d};
}

int rank1_identify(const Embedding& probe, std::span<const GalleryEntry> gallery) {
    if (gallery.empty()) {
        throw std::invalid_argument("rank1_identify: empty gallery");
    }
    std::size_t best = 0;
    double best_distance = cosine_distance(probe, gallery[0].embedding);
    for (std::size_t i = 1; i < gallery.size(); ++i) {
        const double d = cosine_distance(probe, gallery[i].embedding);
        if (d < best_distance) {
            best = i;
            best_distance = d;
        }
    }
    return gallery[best].identity;
}

}  // namespace rim::hrn
