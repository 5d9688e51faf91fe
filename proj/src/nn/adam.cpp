#include "progip/nn/adam.hpp"

#include <cmath>

#include "progip/errors.hpp"

namespace progip::nn {

Adam::Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0f), v_(n, 0.0f) {}

void Adam::step(std::span<float> params, std::span<const float> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
        throw ShapeMismatch("adam: parameter/gradient size mismatch");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<float>(cfg_.beta1);
    const auto b2 = static_cast<float>(cfg_.beta2);
    const auto step = static_cast<float>(cfg_.lr / bc1);
    const auto inv_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
    const auto eps = static_cast<float>(cfg_.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const float g = grads[i];
        m_[i] = b1 * m_[i] + (1.0f - b1) * g;
        v_[i] = b2 * v_[i] + (1.0f - b2) * g * g;
        // lr * m_hat / (sqrt(v_hat) + eps)
        params[i] -= step * m_[i] / (std::sqrt(v_[i]) * inv_bc2 + eps);
    }
}

}  // namespace progip::nn
