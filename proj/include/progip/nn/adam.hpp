#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace progip::nn {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. One instance per parameter vector.
class Adam {
public:
    Adam(std::size_t n, AdamConfig cfg);

    void step(std::span<float> params, std::span<const float> grads);

    [[nodiscard]] long steps() const { return t_; }
    [[nodiscard]] const AdamConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }

private:
    AdamConfig cfg_;
    long t_ = 0;
    std::vector<float> m_;
    std::vector<float> v_;
};

}  // namespace progip::nn
