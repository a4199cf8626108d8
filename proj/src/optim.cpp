#include <cmath>

#include "chanmap/optim.hpp"

namespace chanmap {

Sgd::Sgd(std::vector<Tensor> params, float lr_, float momentum_, float weight_decay_)
    : Optimizer(std::move(params)), lr(lr_), momentum(momentum_), weight_decay(weight_decay_) {
    velocity_.resize(params_.size());
}

void Sgd::step() {
    for (size_t i = 0; i < params_.size(); ++i) {
        if (!params_[i].has_grad()) continue;
        auto g = grad_of(i);
        auto p = params_[i].data();
        if (momentum != 0.0f) {
            auto& vel = velocity_[i];
            if (vel.empty()) vel.assign(p.size(), 0.0f);
            for (size_t k = 0; k < p.size(); ++k) {
                const float gk = g[k] + weight_decay * p[k];
                vel[k] = momentum * vel[k] + gk;
                p[k] -= lr * vel[k];
            }
        } else {
            for (size_t k = 0; k < p.size(); ++k)
                p[k] -= lr * (g[k] + weight_decay * p[k]);
        }
    }
}

Adam::Adam(std::vector<Tensor> params, float lr_, float beta1_, float beta2_, float eps_,
           float weight_decay_)
    : Optimizer(std::move(params)), lr(lr_), beta1(beta1_), beta2(beta2_), eps(eps_),
      weight_decay(weight_decay_) {
    m_.resize(params_.size());
    v_.resize(params_.size());
}

void Adam::step() {
    ++t_;
    const float bc1 = 1.0f - std::pow(beta1, static_cast<float>(t_));
    const float bc2 = 1.0f - std::pow(beta2, static_cast<float>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        if (!params_[i].has_grad()) continue;
        auto g = grad_of(i);
        auto p = params_[i].data();
        auto& m = m_[i];
        auto& v = v_[i];
        if (m.empty()) {
            m.assign(p.size(), 0.0f);
            v.assign(p.size(), 0.0f);
        }
        for (size_t k = 0; k < p.size(); ++k) {
            const float gk = g[k] + weight_decay * p[k];
            m[k] = beta1 * m[k] + (1.0f - beta1) * gk;
            v[k] = beta2 * v[k] + (1.0f - beta2) * gk * gk;
            const float mhat = m[k] / bc1;
            const float vhat = v[k] / bc2;
            p[k] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

} // namespace chanmap
