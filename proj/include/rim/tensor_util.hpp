#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <torch/torch.h>

#include "rim/data.hpp"

namespace rim {

/// [C,H,W] tensor of the given dtype from an ImageTensor.
torch::Tensor to_tensor(const data::ImageTensor& img, torch::Dtype dtype = torch::kFloat32);

/// Stacks images into [B,C,H,W].
torch::Tensor stack_images(std::span<const data::ImageTensor* const> images, torch::Dtype dtype = torch::kFloat32);

/// Inverse of to_tensor for a [C,H,W] (or [1,C,H,W]) tensor.
data::ImageTensor to_image(const torch::Tensor& tensor);

/// [H,W] int64 label tensor.
torch::Tensor to_label_tensor(const data::ParsingMap& parsing);

/// Order-sensitive 64-bit FNV-1a hash over the raw bytes of every tensor.
std::uint64_t checksum(std::span<const torch::Tensor> tensors);

}  // namespace rim
