#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "chanmap/error.hpp"
#include "chanmap/rng.hpp"

namespace chanmap {

class Rng;

namespace detail {

struct TensorImpl {
    std::vector<int> shape;
    std::vector<float> data;
    std::vector<float> grad; // empty until first accumulation
    bool requires_grad = false;
    bool on_tape = false; // true while a live tape node produced this tensor

    long long numel() const {
        long long n = 1;
        for (int d : shape) n *= d;
        return n;
    }
};

} // namespace detail

// Dense float32 tensor, row-major, shared storage. Copying a Tensor copies the
// handle, not the buffer; clone() copies the buffer.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, float value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<float> data,
                            bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);
    static Tensor rand_uniform(std::vector<int> shape, Rng& rng, float lo, float hi,
                               bool requires_grad = false);
    static Tensor rand_normal(std::vector<int> shape, Rng& rng, float mean, float stddev,
                              bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }

    const std::vector<int>& shape() const { return impl_->shape; }
    int dim(int i) const { return impl_->shape.at(static_cast<size_t>(i)); }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    long long numel() const { return impl_->numel(); }

    std::span<float> data() { return impl_->data; }
    std::span<const float> data() const { return impl_->data; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    // Allocates a zero gradient buffer on first access.
    std::span<float> grad();
    std::span<const float> grad() const;
    void zero_grad();

    float item() const;
    float at(std::initializer_list<int> idx) const;

    // Deep copy, detached from any tape and with no gradient.
    Tensor clone() const;

    std::shared_ptr<detail::TensorImpl>& impl() { return impl_; }
    const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;
};

// Dynamic tape of backward closures, rebuilt on every forward pass. One tape
// per thread; backward() consumes and clears it.
class Tape {
public:
    static Tape& current();

    bool enabled() const { return enabled_; }
    void set_enabled(bool v) { enabled_ = v; }

    // Called by op implementations after computing `out`. Marks `out` as
    // requiring grad and schedules `fn` for the backward sweep. `fn` must read
    // out's grad and accumulate into the inputs' grads.
    void record(Tensor& out, const std::vector<Tensor>& inputs, std::function<void()> fn);

    // Convenience used by op code: record only if grads are being tracked and
    // some input requires grad. Returns true if the node was recorded.
    bool maybe_record(Tensor& out, const std::vector<Tensor>& inputs, std::function<void()> fn);

    void backward_from(const Tensor& root);

    void clear();
    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        std::shared_ptr<detail::TensorImpl> out;
        std::function<void()> fn;
    };
    std::vector<Node> nodes_;
    bool enabled_ = true;
};

// RAII guard that disables gradient recording on the current thread's tape.
struct NoGradGuard {
    NoGradGuard() : prev_(Tape::current().enabled()) { Tape::current().set_enabled(false); }
    ~NoGradGuard() { Tape::current().set_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_enabled() { return Tape::current().enabled(); }

// Runs the backward sweep from a scalar root through the current tape, then
// clears the tape. The graph is consumed; a second call needs a new forward.
void backward(const Tensor& root);

// Ensures grad is allocated on `t` and returns it. Helper for backward closures.
std::span<float> ensure_grad(const std::shared_ptr<detail::TensorImpl>& t);

std::string shape_str(const std::vector<int>& shape);

} // namespace chanmap
