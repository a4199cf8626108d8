#pragma once

// Central finite-difference checking for scalar-valued graphs.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "chanmap/ops.hpp"
#include "chanmap/tensor.hpp"

namespace chanmap::testing {

// `build` must construct a fresh graph from the current parameter values and
// return its scalar root. Returns the worst relative error between analytic
// and central-difference gradients over every element of every parameter.
inline double gradcheck(const std::function<Tensor()>& build, std::vector<Tensor> params,
                        float h = 1e-3f) {
    for (auto& p : params) p.zero_grad();
    Tensor root = build();
    backward(root);

    std::vector<std::vector<float>> analytic;
    for (auto& p : params) {
        std::vector<float> g(static_cast<size_t>(p.numel()), 0.0f);
        if (p.has_grad()) {
            auto span = p.grad();
            g.assign(span.begin(), span.end());
        }
        analytic.push_back(std::move(g));
    }

    double worst = 0.0;
    NoGradGuard guard;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto data = params[pi].data();
        for (size_t j = 0; j < data.size(); ++j) {
            const float orig = data[j];
            data[j] = orig + h;
            const double fp = build().item();
            data[j] = orig - h;
            const double fm = build().item();
            data[j] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = analytic[pi][j];
            const double rel =
                std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

} // namespace chanmap::testing
