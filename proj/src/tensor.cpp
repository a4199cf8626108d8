#include "chanmap/tensor.hpp"

#include <cmath>
#include <sstream>

namespace chanmap {

namespace {

std::shared_ptr<detail::TensorImpl> make_impl(std::vector<int> shape, bool requires_grad) {
    for (int d : shape)
        check(d >= 0, "E_INTERNAL", "negative tensor dimension in " + shape_str(shape));
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data.assign(static_cast<size_t>(impl->numel()), 0.0f);
    impl->requires_grad = requires_grad;
    return impl;
}

} // namespace

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return Tensor(make_impl(std::move(shape), requires_grad));
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
    Tensor t(make_impl(std::move(shape), requires_grad));
    for (float& v : t.impl()->data) v = value;
    return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> data, bool requires_grad) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    long long n = 1;
    for (int d : impl->shape) n *= d;
    check(n == static_cast<long long>(data.size()), "E_INTERNAL",
          "data size " + std::to_string(data.size()) + " does not match shape " +
              shape_str(impl->shape));
    impl->data = std::move(data);
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from_data({}, {value}, requires_grad);
}

Tensor Tensor::rand_uniform(std::vector<int> shape, Rng& rng, float lo, float hi,
                            bool requires_grad) {
    Tensor t(make_impl(std::move(shape), requires_grad));
    for (float& v : t.impl()->data) v = rng.uniform(lo, hi);
    return t;
}

Tensor Tensor::rand_normal(std::vector<int> shape, Rng& rng, float mean, float stddev,
                           bool requires_grad) {
    Tensor t(make_impl(std::move(shape), requires_grad));
    for (float& v : t.impl()->data) v = rng.normal(mean, stddev);
    return t;
}

std::span<float> Tensor::grad() {
    return ensure_grad(impl_);
}

std::span<const float> Tensor::grad() const {
    check(has_grad(), "E_INTERNAL", "reading a gradient that was never allocated");
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_) impl_->grad.clear();
}

float Tensor::item() const {
    check(numel() == 1, "E_INTERNAL", "item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

float Tensor::at(std::initializer_list<int> idx) const {
    check(static_cast<int>(idx.size()) == ndim(), "E_INTERNAL", "at(): rank mismatch");
    long long off = 0;
    int i = 0;
    for (int v : idx) {
        check(v >= 0 && v < impl_->shape[static_cast<size_t>(i)], "E_INTERNAL",
              "at(): index out of range");
        off = off * impl_->shape[static_cast<size_t>(i)] + v;
        ++i;
    }
    return impl_->data[static_cast<size_t>(off)];
}

Tensor Tensor::clone() const {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    impl->requires_grad = impl_->requires_grad;
    return Tensor(std::move(impl));
}

std::span<float> ensure_grad(const std::shared_ptr<detail::TensorImpl>& t) {
    if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0f);
    return t->grad;
}

Tape& Tape::current() {
    thread_local Tape tape;
    return tape;
}

void Tape::record(Tensor& out, const std::vector<Tensor>& inputs, std::function<void()> fn) {
    (void)inputs;
    out.set_requires_grad(true);
    out.impl()->on_tape = true;
    nodes_.push_back({out.impl(), std::move(fn)});
}

bool Tape::maybe_record(Tensor& out, const std::vector<Tensor>& inputs,
                        std::function<void()> fn) {
    if (!enabled_) return false;
    bool any = false;
    for (const auto& in : inputs)
        if (in.defined() && in.requires_grad()) any = true;
    if (!any) return false;
    record(out, inputs, std::move(fn));
    return true;
}

void Tape::backward_from(const Tensor& root) {
    check(root.defined(), "E_INTERNAL", "backward on an undefined tensor");
    check(root.numel() == 1, "E_INTERNAL",
          "backward root must be scalar, got shape " + shape_str(root.shape()));
    check(root.requires_grad() && root.impl()->on_tape, "E_INTERNAL",
          "backward root is detached from the computation graph");
    ensure_grad(root.impl());
    root.impl()->grad[0] = 1.0f;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->out->grad.empty()) continue; // output never used downstream
        it->fn();
    }
    clear();
}

void Tape::clear() {
    for (auto& node : nodes_) node.out->on_tape = false;
    nodes_.clear();
}

void backward(const Tensor& root) {
    Tape::current().backward_from(root);
}

} // namespace chanmap
