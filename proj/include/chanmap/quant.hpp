#pragma once

#include <utility>
#include <vector>

#include "chanmap/tensor.hpp"

namespace chanmap {

// Weight precision a compute unit executes. Affine covers symmetric signed
// integer formats parameterized by bit width.
struct Precision {
    enum class Kind { Float, Affine, Ternary };
    Kind kind = Kind::Float;
    int bits = 8; // Affine only

    bool operator==(const Precision& o) const {
        return kind == o.kind && (kind != Kind::Affine || bits == o.bits);
    }
    std::string describe() const;
};

Precision parse_precision(const std::string& text);

// Fake-quantizers map float weights onto a precision's representable grid and
// pass gradients straight through. Statistics are recomputed from the current
// tensor on every apply() until freeze() pins them.

class TernaryQuantizer {
public:
    explicit TernaryQuantizer(float threshold = 0.05f) : threshold_(threshold) {}

    // w: [O,...]; per output channel. Returns the dequantized tensor, taped
    // with an identity gradient into w.
    Tensor apply(const Tensor& w);

    void freeze(const Tensor& w);
    void unfreeze() { frozen_ = false; }
    bool frozen() const { return frozen_; }
    float threshold() const { return threshold_; }
    const std::vector<float>& frozen_cut() const { return cut_; }
    const std::vector<float>& frozen_scale() const { return scale_; }
    void restore(std::vector<float> cut, std::vector<float> scale) {
        cut_ = std::move(cut);
        scale_ = std::move(scale);
        frozen_ = true;
    }

    // Codes in {-1,0,+1} and per-channel scales for the current statistics.
    void codes(const Tensor& w, std::vector<signed char>& q, std::vector<float>& scale) const;

private:
    void compute_stats(const Tensor& w, std::vector<float>& cut, std::vector<float>& scale) const;
    float threshold_;
    bool frozen_ = false;
    std::vector<float> cut_;   // per-channel magnitude threshold
    std::vector<float> scale_; // per-channel step
};

class AffineQuantizer {
public:
    explicit AffineQuantizer(int bits = 8) : bits_(bits) {
        check(bits >= 2 && bits <= 16, "E_INTERNAL", "affine quantizer bits out of range");
    }

    Tensor apply(const Tensor& w);

    void freeze(const Tensor& w);
    void unfreeze() { frozen_ = false; }
    bool frozen() const { return frozen_; }
    int bits() const { return bits_; }
    const std::vector<float>& frozen_absmax() const { return absmax_; }
    void restore(std::vector<float> absmax) {
        absmax_ = std::move(absmax);
        frozen_ = true;
    }

    void codes(const Tensor& w, std::vector<int>& q, std::vector<float>& scale) const;

private:
    void compute_stats(const Tensor& w, std::vector<float>& absmax) const;
    int bits_;
    bool frozen_ = false;
    std::vector<float> absmax_; // per-channel
};

// Per-tensor symmetric fake-quantization for activations.
class ActQuantizer {
public:
    explicit ActQuantizer(int bits = 8) : bits_(bits) {}

    Tensor apply(const Tensor& x);

    void freeze_from(float absmax) {
        absmax_ = absmax;
        frozen_ = true;
    }
    void freeze_last() {
        absmax_ = last_absmax_;
        frozen_ = true;
    }
    void unfreeze() { frozen_ = false; }
    bool frozen() const { return frozen_; }
    float absmax() const { return frozen_ ? absmax_ : last_absmax_; }
    int bits() const { return bits_; }

private:
    int bits_;
    bool frozen_ = false;
    float absmax_ = 0.0f;
    float last_absmax_ = 0.0f;
};

// Stateless helpers used by the quantizer classes and the export path.
namespace qmath {
// Symmetric grid value for one element given a channel scale and max.
float affine_dequant(int q, float scale, float absmax, int qmax);
int affine_code(float w, float scale, int qmax);
} // namespace qmath

} // namespace chanmap
