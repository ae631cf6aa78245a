#pragma once

#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "rim/data.hpp"

namespace rim::hrn {

struct HrnConfig {
    data::Size2 image_size{64, 64};
    /// Per-block output widths; the block count K is their length.
    std::vector<int> teacher_widths{16, 32, 64, 128};
    std::vector<int> student_widths{8, 16, 32, 64};
    std::vector<int> assistant_widths{8, 16, 32, 64};

    int block_count() const { return static_cast<int>(teacher_widths.size()); }
    int embedding_dim() const { return teacher_widths.back(); }
    void validate() const;
};

/// Per-block feature maps f^1..f^K of one network, [B, C_k, H_k, W_k] each.
struct BlockFeatures {
    std::vector<torch::Tensor> taps;

    std::size_t size() const noexcept { return taps.size(); }
    const torch::Tensor& final_tap() const { return taps.back(); }
};

/// Two 3x3 convolutions with a projection shortcut when shape changes.
class BasicBlockImpl : public torch::nn::Module {
public:
    BasicBlockImpl(int in, int out, int stride);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv1_{nullptr};
    torch::nn::Conv2d conv2_{nullptr};
    torch::nn::Conv2d shortcut_{nullptr};
};
TORCH_MODULE(BasicBlock);

/// Stem (stride 2) followed by K blocks; block k>0 halves the resolution.
class BackboneImpl : public torch::nn::Module {
public:
    explicit BackboneImpl(const std::vector<int>& widths);
    BlockFeatures forward(const torch::Tensor& img);

private:
    torch::nn::Conv2d stem_{nullptr};
    std::vector<BasicBlock> blocks_;
};
TORCH_MODULE(Backbone);

/// A backbone plus 1x1 channel adapters that bring its taps to the teacher's
/// widths (absent where widths already agree).
class AdaptedBackboneImpl : public torch::nn::Module {
public:
    AdaptedBackboneImpl(const std::vector<int>& widths, const std::vector<int>& target_widths);
    BlockFeatures forward(const torch::Tensor& img);

    Backbone backbone{nullptr};

private:
    std::vector<torch::nn::Conv2d> projectors_;
};
TORCH_MODULE(AdaptedBackbone);

enum class Role { Teacher, Student, Assistant };

std::string to_string(Role role);

/// Teacher / student / assistant networks of the recognition sub-net. The
/// teacher is frozen at construction.
class HrnNetsImpl : public torch::nn::Module {
public:
    explicit HrnNetsImpl(HrnConfig cfg);

    const HrnConfig& config() const noexcept { return cfg_; }

    /// Taps of `role` on a [B,3,H,W] batch; student/assistant taps are projected.
    BlockFeatures forward_with_taps(Role role, const torch::Tensor& img);

    std::vector<torch::Tensor> role_parameters(Role role);

    Backbone teacher{nullptr};
    AdaptedBackbone student{nullptr};
    AdaptedBackbone assistant{nullptr};

private:
    HrnConfig cfg_;
};
TORCH_MODULE(HrnNets);

/// Unit-norm embedding vector.
struct Embedding {
    std::vector<double> vector;

    std::size_t dim() const noexcept { return vector.size(); }
};

struct Verification {
    bool same = false;
    double distance = 0.0;
};

struct GalleryEntry {
    Embedding embedding;
    int identity = 0;
};

/// f_S^K + f_A^K.
torch::Tensor residual_compose(const torch::Tensor& student_tap, const torch::Tensor& assistant_tap);

/// Global average pool + L2 normalisation of a [C,H,W] final tap.
Embedding embed(const torch::Tensor& tap);

/// One embedding per item of a [B,C,H,W] batch.
std::vector<Embedding> embed_batch(const torch::Tensor& taps);

/// 1 - <e1, e2>.
double cosine_distance(const Embedding& e1, const Embedding& e2);

/// same iff cosine distance <= threshold.
Verification cosine_verify(const Embedding& e1, const Embedding& e2, double threshold);

/// Identity of the nearest gallery entry by cosine distance; ties go to the
/// lowest index.
int rank1_identify(const Embedding& probe, std::span<const GalleryEntry> gallery);

}  // namespace rim::hrn
