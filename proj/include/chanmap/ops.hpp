#pragma once

#include <vector>

#include "chanmap/tensor.hpp"

namespace chanmap {

// All ops take NCHW activations and OIHW weights, record themselves on the
// current thread's tape when grads are enabled, and compute in float32.

// 2d convolution. x: [N,C,H,W], w: [O, C/groups, K, K], optional bias [O].
// groups must divide both C and O; groups == C gives a depthwise convolution.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad,
              int groups = 1);

// x: [N,F], w: [O,F], bias [O] (optional, pass default Tensor to skip).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor relu(const Tensor& x);

// Non-overlapping average pooling; H and W must be divisible by k when
// stride == k. General stride supported with window fully inside the input.
Tensor avgpool2d(const Tensor& x, int k, int stride);

// Mean over all spatial positions: [N,C,H,W] -> [N,C].
Tensor global_avgpool(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// a * x + b, elementwise with scalar coefficients.
Tensor affine(const Tensor& x, float a, float b);

Tensor concat_channels(const std::vector<Tensor>& parts);
// Channel slice [begin, end) of a NCHW tensor.
Tensor slice_channels(const Tensor& x, int begin, int end);
// Row slice [begin, end) along dim 0 (used for filter banks and matrices).
Tensor slice_dim0(const Tensor& x, int begin, int end);

// Softmax along the last dimension.
Tensor softmax(const Tensor& x);

// Mean cross-entropy between logits [N,K] and integer labels.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Column sums of a [R,C] matrix -> [C].
Tensor column_sums(const Tensor& m);

// v: [K]. out[i] = sum_{k > i} v[k], for i in [0, K-1). Length K-1.
Tensor suffix_sum_exclusive(const Tensor& v);

// k vectors of length C -> matrix [C,k].
Tensor stack_columns(const std::vector<Tensor>& cols);

// k scalars -> vector [k].
Tensor stack_scalars(const std::vector<Tensor>& scalars);

// Element i of a vector as a scalar.
Tensor pick(const Tensor& v, int i);

// Dot product with a constant coefficient vector -> scalar.
Tensor dot_const(const Tensor& v, const std::vector<float>& coeff);

// Softmax-weighted average of v's entries; approaches max(v) as tau -> 0.
Tensor smooth_max(const Tensor& v, float tau);
double smooth_max(const std::vector<double>& v, double tau);

// Per-channel convex blend of branch outputs. branches: same-shape [N,C,H,W],
// theta: [C,B] with B == branches.size(). out[n,c,...] =
// sum_j theta[c,j] * branches[j][n,c,...].
Tensor blend_channels(const std::vector<Tensor>& branches, const Tensor& theta);

// Per-output-channel convex blend of filter banks. filters: same-shape
// [O,...], theta: [O,B]. out[o,...] = sum_j theta[o,j] * filters[j][o,...].
Tensor blend_filters(const std::vector<Tensor>& filters, const Tensor& theta);

// Hard per-row selection: out[o,...] = filters[pick[o]][o,...]. Gradient of
// each row flows only to the selected branch.
Tensor select_filters(const std::vector<Tensor>& filters, const std::vector<int>& pick);

// Batch norm with externally owned state. Running stats update in place during
// training and are never taped.
struct BatchNorm2d {
    Tensor gamma;
    Tensor beta;
    std::vector<float> running_mean;
    std::vector<float> running_var;
    float momentum = 0.1f;
    float eps = 1e-5f;

    static BatchNorm2d make(int channels);
    Tensor forward(const Tensor& x, bool training);
    int channels() const { return static_cast<int>(running_mean.size()); }
};

} // namespace chanmap
