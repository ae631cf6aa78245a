#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

namespace rim::optim {

struct RmsPropOptions {
    double lr = 1e-3;
    double decay = 0.99;
    double eps = 1e-8;

    void validate() const;
};

/// v <- decay*v + (1-decay)*g^2;  p <- p - lr*g/sqrt(v + eps).
/// Parameters without a gradient are skipped and keep their state.
class RmsProp {
public:
    RmsProp(std::vector<torch::Tensor> params, RmsPropOptions options);

    void zero_grad();
    void step();

    const std::vector<torch::Tensor>& params() const noexcept { return params_; }
    std::vector<torch::Tensor>& square_avg() noexcept { return square_avg_; }
    const std::vector<torch::Tensor>& square_avg() const noexcept { return square_avg_; }
    const RmsPropOptions& options() const noexcept { return options_; }

private:
    std::vector<torch::Tensor> params_;
    std::vector<torch::Tensor> square_avg_;
    RmsPropOptions options_;
};

}  // namespace rim::optim
