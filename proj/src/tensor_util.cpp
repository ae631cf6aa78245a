#include "rim/tensor_util.hpp"

#include <cstring>
#include <stdexcept>

namespace rim {

torch::Tensor to_tensor(const data::ImageTensor& img, torch::Dtype dtype) {
    const auto values = img.values();
    auto t = torch::empty({img.channels(), img.height(), img.width()}, torch::kFloat64);
    std::memcpy(t.data_ptr<double>(), values.data(), values.size() * sizeof(double));
    return t.to(dtype);
}

torch::Tensor stack_images(std::span<const data::ImageTensor* const> images, torch::Dtype dtype) {
    std::vector<torch::Tensor> parts;
    parts.reserve(images.size());
    for (const auto* img : images) {
        parts.push_back(to_tensor(*img, dtype));
    }
    return torch::stack(parts);
}

data::ImageTensor to_image(const torch::Tensor& tensor) {
    torch::Tensor t = tensor.detach();
    if (t.dim() == 4 && t.size(0) == 1) {
        t = t.squeeze(0);
    }
    if (t.dim() != 3) {
        throw std::invalid_argument("to_image expects a [C,H,W] tensor");
    }
    t = t.to(torch::kFloat64).contiguous();
    data::ImageTensor img(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), static_cast<int>(t.size(2)));
    std::memcpy(img.values().data(), t.data_ptr<double>(), img.size() * sizeof(double));
    return img;
}

torch::Tensor to_label_tensor(const data::ParsingMap& parsing) {
    auto t = torch::empty({parsing.height(), parsing.width()}, torch::kLong);
    auto* out = t.data_ptr<int64_t>();
    const auto labels = parsing.labels();
    for (std::size_t i = 0; i < labels.size(); ++i) {
        out[i] = labels[i];
    }
    return t;
}

std::uint64_t checksum(std::span<const torch::Tensor> tensors) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& tensor : tensors) {
        const torch::Tensor t = tensor.detach().contiguous().cpu();
        const auto* bytes = static_cast<const unsigned char*>(t.data_ptr());
        const std::size_t n = t.numel() * t.element_size();
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

}  // namespace rim
