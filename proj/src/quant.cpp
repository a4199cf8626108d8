#include <cmath>

#include "chanmap/quant.hpp"

namespace chanmap {

std::string Precision::describe() const {
    switch (kind) {
    case Kind::Float: return "float";
    case Kind::Ternary: return "ternary";
    case Kind::Affine: return "int" + std::to_string(bits);
    }
    return "?";
}

Precision parse_precision(const std::string& text) {
    if (text == "float") return {Precision::Kind::Float, 8};
    if (text == "ternary") return {Precision::Kind::Ternary, 8};
    if (text.rfind("int", 0) == 0 && text.size() > 3) {
        const int bits = std::stoi(text.substr(3));
        check(bits >= 2 && bits <= 16, "E_PLATFORM", "unsupported integer width: " + text);
        return {Precision::Kind::Affine, bits};
    }
    fail("E_PLATFORM", "unknown precision '" + text + "'");
}

namespace {

// Attaches a straight-through node: the produced tensor's gradient flows
// unchanged into w.
void ste_record(Tensor& out, const Tensor& w) {
    Tape::current().maybe_record(out, {w}, [wi = w.impl(), oi = out.impl()] {
        auto gw = ensure_grad(wi);
        for (size_t i = 0; i < gw.size(); ++i) gw[i] += oi->grad[i];
    });
}

} // namespace

namespace qmath {

int affine_code(float w, float scale, int qmax) {
    if (scale == 0.0f) return 0;
    long q = std::lroundf(w / scale);
    if (q > qmax) q = qmax;
    if (q < -qmax) q = -qmax;
    return static_cast<int>(q);
}

float affine_dequant(int q, float scale, float absmax, int qmax) {
    if (q == qmax) return absmax;
    if (q == -qmax) return -absmax;
    return static_cast<float>(q) * scale;
}

} // namespace qmath

void TernaryQuantizer::compute_stats(const Tensor& w, std::vector<float>& cut,
                                     std::vector<float>& scale) const {
    const int O = w.dim(0);
    const long long R = w.numel() / O;
    cut.resize(static_cast<size_t>(O));
    scale.resize(static_cast<size_t>(O));
    auto wd = w.data();
    for (int o = 0; o < O; ++o) {
        const float* row = wd.data() + static_cast<long long>(o) * R;
        float amax = 0.0f;
        for (long long i = 0; i < R; ++i) amax = std::max(amax, std::fabs(row[i]));
        const float c = threshold_ * amax;
        double acc = 0.0;
        long long count = 0;
        for (long long i = 0; i < R; ++i) {
            const float a = std::fabs(row[i]);
            if (a > c) {
                acc += a;
                ++count;
            }
        }
        cut[static_cast<size_t>(o)] = c;
        scale[static_cast<size_t>(o)] = count > 0 ? static_cast<float>(acc / count) : 0.0f;
    }
}

Tensor TernaryQuantizer::apply(const Tensor& w) {
    check(w.ndim() >= 1, "E_INTERNAL", "ternary quantizer expects a filter bank");
    std::vector<float> cut, scale;
    if (frozen_) {
        check(static_cast<int>(cut_.size()) == w.dim(0), "E_INTERNAL",
              "frozen ternary stats do not match tensor");
        cut = cut_;
        scale = scale_;
    } else {
        compute_stats(w, cut, scale);
    }
    const int O = w.dim(0);
    const long long R = w.numel() / O;
    Tensor out = Tensor::zeros(w.shape());
    auto wd = w.data();
    auto od = out.data();
    for (int o = 0; o < O; ++o) {
        const float c = cut[static_cast<size_t>(o)];
        const float s = scale[static_cast<size_t>(o)];
        const float* row = wd.data() + static_cast<long long>(o) * R;
        float* orow = od.data() + static_cast<long long>(o) * R;
        for (long long i = 0; i < R; ++i)
            orow[i] = row[i] > c ? s : (row[i] < -c ? -s : 0.0f);
    }
    ste_record(out, w);
    return out;
}

void TernaryQuantizer::freeze(const Tensor& w) {
    compute_stats(w, cut_, scale_);
    frozen_ = true;
}

void TernaryQuantizer::codes(const Tensor& w, std::vector<signed char>& q,
                             std::vector<float>& scale) const {
    std::vector<float> cut;
    std::vector<float> s;
    if (frozen_) {
        cut = cut_;
        s = scale_;
    } else {
        compute_stats(w, cut, s);
    }
    const int O = w.dim(0);
    const long long R = w.numel() / O;
    q.resize(static_cast<size_t>(w.numel()));
    auto wd = w.data();
    for (int o = 0; o < O; ++o) {
        const float c = cut[static_cast<size_t>(o)];
        const float* row = wd.data() + static_cast<long long>(o) * R;
        for (long long i = 0; i < R; ++i) {
            const long long at = static_cast<long long>(o) * R + i;
            q[static_cast<size_t>(at)] = row[i] > c ? 1 : (row[i] < -c ? -1 : 0);
        }
    }
    scale = s;
}

void AffineQuantizer::compute_stats(const Tensor& w, std::vector<float>& absmax) const {
    const int O = w.dim(0);
    const long long R = w.numel() / O;
    absmax.resize(static_cast<size_t>(O));
    auto wd = w.data();
    for (int o = 0; o < O; ++o) {
        const float* row = wd.data() + static_cast<long long>(o) * R;
        float m = 0.0f;
        for (long long i = 0; i < R; ++i) m = std::max(m, std::fabs(row[i]));
        absmax[static_cast<size_t>(o)] = m;
    }
}

Tensor AffineQuantizer::apply(const Tensor& w) {
    check(w.ndim() >= 1, "E_INTERNAL", "affine quantizer expects a filter bank");
    std::vector<float> absmax;
    if (frozen_) {
        check(static_cast<int>(absmax_.size()) == w.dim(0), "E_INTERNAL",
              "frozen affine stats do not match tensor");
        absmax = absmax_;
    } else {
        compute_stats(w, absmax);
    }
    const int O = w.dim(0);
    const long long R = w.numel() / O;
    const int qmax = (1 << (bits_ - 1)) - 1;
    Tensor out = Tensor::zeros(w.shape());
    auto wd = w.data();
    auto od = out.data();
    for (int o = 0; o < O; ++o) {
        const float m = absmax[static_cast<size_t>(o)];
        const float s = m / static_cast<float>(qmax);
        const float* row = wd.data() + static_cast<long long>(o) * R;
        float* orow = od.data() + static_cast<long long>(o) * R;
        for (long long i = 0; i < R; ++i) {
            const int q = qmath::affine_code(row[i], s, qmax);
            orow[i] = qmath::affine_dequant(q, s, m, qmax);
        }
    }
    ste_record(out, w);
    return out;
}

void AffineQuantizer::freeze(const Tensor& w) {
    compute_stats(w, absmax_);
    frozen_ = true;
}

void AffineQuantizer::codes(const Tensor& w, std::vector<int>& q, std::vector<float>& scale) const {
    std::vector<float> absmax;
    if (frozen_) {
        absmax = absmax_;
    } else {
        compute_stats(w, absmax);
    }
    const int O = w.dim(0);
    const long long R = w.numel() / O;
    const int qmax = (1 << (bits_ - 1)) - 1;
    q.resize(static_cast<size_t>(w.numel()));
    scale.resize(static_cast<size_t>(O));
    auto wd = w.data();
    for (int o = 0; o < O; ++o) {
        const float m = absmax[static_cast<size_t>(o)];
        const float s = m / static_cast<float>(qmax);
        scale[static_cast<size_t>(o)] = s;
        const float* row = wd.data() + static_cast<long long>(o) * R;
        for (long long i = 0; i < R; ++i)
            q[static_cast<size_t>(static_cast<long long>(o) * R + i)] =
                qmath::affine_code(row[i], s, qmax);
    }
}

Tensor ActQuantizer::apply(const Tensor& x) {
    float m;
    if (frozen_) {
        m = absmax_;
    } else {
        m = 0.0f;
        for (float v : x.data()) m = std::max(m, std::fabs(v));
        last_absmax_ = m;
    }
    const int qmax = (1 << (bits_ - 1)) - 1;
    const float s = m / static_cast<float>(qmax);
    Tensor out = Tensor::zeros(x.shape());
    auto xd = x.data();
    auto od = out.data();
    for (size_t i = 0; i < od.size(); ++i) {
        const int q = qmath::affine_code(xd[i], s, qmax);
        od[i] = qmath::affine_dequant(q, s, m, qmax);
    }
    ste_record(out, x);
    return out;
}

} // namespace chanmap
