#include "rim/optim.hpp"

#include <stdexcept>

namespace rim::optim {

void RmsPropOptions::validate() const {
    if (!(lr > 0.0)) {
        throw std::invalid_argument("learning rate must be positive");
    }
    if (!(decay >= 0.0 && decay < 1.0)) {
        throw std::invalid_argument("rmsprop decay must lie in [0, 1)");
    }
    if (!(eps > 0.0)) {
        throw std::invalid_argument("rmsprop eps must be positive");
    }
}

RmsProp::RmsProp(std::vector<torch::Tensor> params, RmsPropOptions options)
    : params_(std::move(params)), options_(options) {
    options_.validate();
    square_avg_.reserve(params_.size());
    for (const auto& p : params_) {
        square_avg_.push_back(torch::zeros_like(p, torch::MemoryFormat::Contiguous));
    }
}

void RmsProp::zero_grad() {
    for (auto& p : params_) {
        if (p.mutable_grad().defined()) {
            p.mutable_grad().reset();
        }
    }
}

void RmsProp::step() {
    torch::NoGradGuard guard;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        const auto& g = p.grad();
        if (!g.defined()) {
            continue;
        }
        auto& v = square_avg_[i];
        v.mul_(options_.decay).addcmul_(g, g, 1.0 - options_.decay);
        p.sub_(g / (v + options_.eps).sqrt() * options_.lr);
    }
}

}  // namespace rim::optim
