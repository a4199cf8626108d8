#pragma once

#include <vector>

#include "chanmap/tensor.hpp"

namespace chanmap {

// Optimizers own per-parameter state buffers; parameters are shared tensor
// handles. step() skips parameters that received no gradient and clears
// nothing; call zero_grad() between iterations.

class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step() = 0;

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    const std::vector<Tensor>& params() const { return params_; }

protected:
    explicit Optimizer(std::vector<Tensor> params) : params_(std::move(params)) {
        for (auto& p : params_)
            check(p.defined() && p.requires_grad(), "E_INTERNAL",
                  "optimizer given a parameter that does not require grad");
    }

    std::span<const float> grad_of(size_t i) {
        check(params_[i].has_grad(), "E_INTERNAL",
              "missing gradient on managed parameter at step time");
        return params_[i].grad();
    }

    std::vector<Tensor> params_;
};

class Sgd : public Optimizer {
public:
    Sgd(std::vector<Tensor> params, float lr, float momentum = 0.0f, float weight_decay = 0.0f);
    void step() override;

    float lr;
    float momentum;
    float weight_decay;

private:
    std::vector<std::vector<float>> velocity_;
};

class Adam : public Optimizer {
public:
    Adam(std::vector<Tensor> params, float lr, float beta1 = 0.9f, float beta2 = 0.999f,
         float eps = 1e-8f, float weight_decay = 0.0f);
    void step() override;

    float lr;
    float beta1;
    float beta2;
    float eps;
    float weight_decay;

private:
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    long long t_ = 0;
};

} // namespace chanmap
