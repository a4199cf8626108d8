#include <cmath>
#include <cstring>

#include "chanmap/ops.hpp"
#include "matmul.hpp"

namespace chanmap {

namespace {

struct ConvDims {
    int N, C, H, W, O, K, stride, pad, groups, Cg, Og, OH, OW;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad, int groups) {
    check(x.ndim() == 4, "E_INTERNAL", "conv2d input must be [N,C,H,W]");
    check(w.ndim() == 4, "E_INTERNAL", "conv2d weight must be [O,C/groups,K,K]");
    check(stride >= 1 && pad >= 0 && groups >= 1, "E_INTERNAL", "conv2d: bad hyperparameters");
    ConvDims d;
    d.N = x.dim(0);
    d.C = x.dim(1);
    d.H = x.dim(2);
    d.W = x.dim(3);
    d.O = w.dim(0);
    d.K = w.dim(2);
    d.stride = stride;
    d.pad = pad;
    d.groups = groups;
    check(w.dim(3) == d.K, "E_INTERNAL", "conv2d: only square kernels supported");
    check(d.C % groups == 0 && d.O % groups == 0, "E_INTERNAL",
          "conv2d: groups must divide channel counts");
    d.Cg = d.C / groups;
    d.Og = d.O / groups;
    check(w.dim(1) == d.Cg, "E_INTERNAL",
          "conv2d: weight input channels " + std::to_string(w.dim(1)) + " do not match " +
              std::to_string(d.Cg));
    d.OH = (d.H + 2 * pad - d.K) / stride + 1;
    d.OW = (d.W + 2 * pad - d.K) / stride + 1;
    check(d.OH >= 1 && d.OW >= 1, "E_INTERNAL", "conv2d: output would be empty");
    return d;
}

// Unfold one sample's group channels into [Cg*K*K, OH*OW].
void im2col(const float* x, const ConvDims& d, int c0, float* col) {
    const int HW = d.H * d.W;
    const int S = d.OH * d.OW;
    for (int c = 0; c < d.Cg; ++c) {
        const float* xc = x + static_cast<long long>(c0 + c) * HW;
        for (int kh = 0; kh < d.K; ++kh) {
            for (int kw = 0; kw < d.K; ++kw) {
                float* dst = col + (static_cast<long long>(c) * d.K * d.K + kh * d.K + kw) * S;
                for (int oy = 0; oy < d.OH; ++oy) {
                    const int iy = oy * d.stride - d.pad + kh;
                    if (iy < 0 || iy >= d.H) {
                        std::memset(dst + static_cast<long long>(oy) * d.OW, 0,
                                    sizeof(float) * static_cast<size_t>(d.OW));
                        continue;
                    }
                    const float* src = xc + static_cast<long long>(iy) * d.W;
                    float* drow = dst + static_cast<long long>(oy) * d.OW;
                    for (int ox = 0; ox < d.OW; ++ox) {
                        const int ix = ox * d.stride - d.pad + kw;
                        drow[ox] = (ix >= 0 && ix < d.W) ? src[ix] : 0.0f;
                    }
                }
            }
        }
    }
}

// Scatter-add of a column buffer back into one sample's group channels.
void col2im_add(const float* col, const ConvDims& d, int c0, float* gx) {
    const int HW = d.H * d.W;
    const int S = d.OH * d.OW;
    for (int c = 0; c < d.Cg; ++c) {
        float* xc = gx + static_cast<long long>(c0 + c) * HW;
        for (int kh = 0; kh < d.K; ++kh) {
            for (int kw = 0; kw < d.K; ++kw) {
                const float* src = col + (static_cast<long long>(c) * d.K * d.K + kh * d.K + kw) * S;
                for (int oy = 0; oy < d.OH; ++oy) {
                    const int iy = oy * d.stride - d.pad + kh;
                    if (iy < 0 || iy >= d.H) continue;
                    float* xrow = xc + static_cast<long long>(iy) * d.W;
                    const float* srow = src + static_cast<long long>(oy) * d.OW;
                    for (int ox = 0; ox < d.OW; ++ox) {
                        const int ix = ox * d.stride - d.pad + kw;
                        if (ix >= 0 && ix < d.W) xrow[ix] += srow[ox];
                    }
                }
            }
        }
    }
}

bool is_depthwise(const ConvDims& d) { return d.groups == d.C && d.Cg == 1 && d.Og == 1; }

void dw_forward(const float* x, const float* w, const ConvDims& d, float* y) {
    const int HW = d.H * d.W;
    const int S = d.OH * d.OW;
    for (int n = 0; n < d.N; ++n) {
        for (int c = 0; c < d.C; ++c) {
            const float* xc = x + (static_cast<long long>(n) * d.C + c) * HW;
            const float* wc = w + static_cast<long long>(c) * d.K * d.K;
            float* yc = y + (static_cast<long long>(n) * d.C + c) * S;
            for (int oy = 0; oy < d.OH; ++oy) {
                for (int ox = 0; ox < d.OW; ++ox) {
                    float acc = 0.0f;
                    for (int kh = 0; kh < d.K; ++kh) {
                        const int iy = oy * d.stride - d.pad + kh;
                        if (iy < 0 || iy >= d.H) continue;
                        for (int kw = 0; kw < d.K; ++kw) {
                            const int ix = ox * d.stride - d.pad + kw;
                            if (ix < 0 || ix >= d.W) continue;
                            acc += wc[kh * d.K + kw] * xc[static_cast<long long>(iy) * d.W + ix];
                        }
                    }
                    yc[static_cast<long long>(oy) * d.OW + ox] = acc;
                }
            }
        }
    }
}

void dw_backward(const float* x, const float* w, const float* gy, const ConvDims& d, float* gx,
                 float* gw) {
    const int HW = d.H * d.W;
    const int S = d.OH * d.OW;
    for (int n = 0; n < d.N; ++n) {
        for (int c = 0; c < d.C; ++c) {
            const float* xc = x + (static_cast<long long>(n) * d.C + c) * HW;
            const float* wc = w + static_cast<long long>(c) * d.K * d.K;
            const float* gyc = gy + (static_cast<long long>(n) * d.C + c) * S;
            float* gxc = gx ? gx + (static_cast<long long>(n) * d.C + c) * HW : nullptr;
            float* gwc = gw ? gw + static_cast<long long>(c) * d.K * d.K : nullptr;
            for (int oy = 0; oy < d.OH; ++oy) {
                for (int ox = 0; ox < d.OW; ++ox) {
                    const float g = gyc[static_cast<long long>(oy) * d.OW + ox];
                    if (g == 0.0f) continue;
                    for (int kh = 0; kh < d.K; ++kh) {
                        const int iy = oy * d.stride - d.pad + kh;
                        if (iy < 0 || iy >= d.H) continue;
                        for (int kw = 0; kw < d.K; ++kw) {
                            const int ix = ox * d.stride - d.pad + kw;
                            if (ix < 0 || ix >= d.W) continue;
                            const long long xoff = static_cast<long long>(iy) * d.W + ix;
                            if (gxc) gxc[xoff] += g * wc[kh * d.K + kw];
                            if (gwc) gwc[kh * d.K + kw] += g * xc[xoff];
                        }
                    }
                }
            }
        }
    }
}

} // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad,
              int groups) {
    const ConvDims d = conv_dims(x, w, stride, pad, groups);
    if (bias.defined())
        check(bias.ndim() == 1 && bias.dim(0) == d.O, "E_INTERNAL", "conv2d: bad bias shape");
    Tensor out = Tensor::zeros({d.N, d.O, d.OH, d.OW});
    const int S = d.OH * d.OW;
    if (is_depthwise(d)) {
        dw_forward(x.data().data(), w.data().data(), d, out.data().data());
    } else {
        std::vector<float> col(static_cast<size_t>(d.Cg) * d.K * d.K * S);
        for (int n = 0; n < d.N; ++n) {
            const float* xn = x.data().data() + static_cast<long long>(n) * d.C * d.H * d.W;
            float* yn = out.data().data() + static_cast<long long>(n) * d.O * S;
            for (int g = 0; g < d.groups; ++g) {
                im2col(xn, d, g * d.Cg, col.data());
                detail::mm(yn + static_cast<long long>(g) * d.Og * S,
                           w.data().data() + static_cast<long long>(g) * d.Og * d.Cg * d.K * d.K,
                           col.data(), d.Og, d.Cg * d.K * d.K, S);
            }
        }
    }
    if (bias.defined()) {
        auto od = out.data();
        auto bd = bias.data();
        for (int n = 0; n < d.N; ++n)
            for (int o = 0; o < d.O; ++o) {
                float* row = od.data() + (static_cast<long long>(n) * d.O + o) * S;
                const float b = bd[static_cast<size_t>(o)];
                for (int s = 0; s < S; ++s) row[s] += b;
            }
    }
    std::vector<Tensor> inputs = {x, w};
    if (bias.defined()) inputs.push_back(bias);
    Tape::current().maybe_record(out, inputs,
                                 [xi = x.impl(), wi = w.impl(),
                                  bi = bias.defined() ? bias.impl() : nullptr, oi = out.impl(), d] {
        const int S = d.OH * d.OW;
        const float* gy = oi->grad.data();
        if (bi && bi->requires_grad) {
            auto gb = ensure_grad(bi);
            for (int n = 0; n < d.N; ++n)
                for (int o = 0; o < d.O; ++o) {
                    const float* row = gy + (static_cast<long long>(n) * d.O + o) * S;
                    double acc = 0.0;
                    for (int s = 0; s < S; ++s) acc += row[s];
                    gb[static_cast<size_t>(o)] += static_cast<float>(acc);
                }
        }
        const bool need_x = xi->requires_grad;
        const bool need_w = wi->requires_grad;
        if (!need_x && !need_w) return;
        if (is_depthwise(d)) {
            float* gx = need_x ? ensure_grad(xi).data() : nullptr;
            float* gw = need_w ? ensure_grad(wi).data() : nullptr;
            dw_backward(xi->data.data(), wi->data.data(), gy, d, gx, gw);
            return;
        }
        const int CKK = d.Cg * d.K * d.K;
        std::vector<float> col(static_cast<size_t>(CKK) * S);
        std::vector<float> gcol;
        if (need_x) gcol.resize(static_cast<size_t>(CKK) * S);
        float* gx = need_x ? ensure_grad(xi).data() : nullptr;
        float* gw = need_w ? ensure_grad(wi).data() : nullptr;
        for (int n = 0; n < d.N; ++n) {
            const float* xn = xi->data.data() + static_cast<long long>(n) * d.C * d.H * d.W;
            const float* gyn = gy + static_cast<long long>(n) * d.O * S;
            for (int g = 0; g < d.groups; ++g) {
                const float* wg = wi->data.data() + static_cast<long long>(g) * d.Og * CKK;
                const float* gyg = gyn + static_cast<long long>(g) * d.Og * S;
                if (need_w) {
                    im2col(xn, d, g * d.Cg, col.data());
                    detail::mm_abt(gw + static_cast<long long>(g) * d.Og * CKK, gyg, col.data(),
                                   d.Og, S, CKK);
                }
                if (need_x) {
                    std::fill(gcol.begin(), gcol.end(), 0.0f);
                    detail::mm_at_b(gcol.data(), wg, gyg, CKK, d.Og, S);
                    col2im_add(gcol.data(), d,
                               g * d.Cg, gx + static_cast<long long>(n) * d.C * d.H * d.W);
                }
            }
        }
    });
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    check(x.ndim() == 2 && w.ndim() == 2, "E_INTERNAL", "linear expects [N,F] and [O,F]");
    const int N = x.dim(0);
    const int F = x.dim(1);
    const int O = w.dim(0);
    check(w.dim(1) == F, "E_INTERNAL", "linear: feature size mismatch");
    if (bias.defined())
        check(bias.ndim() == 1 && bias.dim(0) == O, "E_INTERNAL", "linear: bad bias shape");
    Tensor out = Tensor::zeros({N, O});
    detail::mm_abt(out.data().data(), x.data().data(), w.data().data(), N, F, O);
    if (bias.defined()) {
        auto od = out.data();
        auto bd = bias.data();
        for (int n = 0; n < N; ++n)
            for (int o = 0; o < O; ++o) od[static_cast<size_t>(n) * O + o] += bd[static_cast<size_t>(o)];
    }
    std::vector<Tensor> inputs = {x, w};
    if (bias.defined()) inputs.push_back(bias);
    Tape::current().maybe_record(out, inputs,
                                 [xi = x.impl(), wi = w.impl(),
                                  bi = bias.defined() ? bias.impl() : nullptr, oi = out.impl(), N,
                                  F, O] {
        const float* gy = oi->grad.data();
        if (bi && bi->requires_grad) {
            auto gb = ensure_grad(bi);
            for (int n = 0; n < N; ++n)
                for (int o = 0; o < O; ++o) gb[static_cast<size_t>(o)] += gy[static_cast<size_t>(n) * O + o];
        }
        if (xi->requires_grad)
            detail::mm(ensure_grad(xi).data(), gy, wi->data.data(), N, O, F);
        if (wi->requires_grad)
            detail::mm_at_b(ensure_grad(wi).data(), gy, xi->data.data(), O, N, F);
    });
    return out;
}

Tensor avgpool2d(const Tensor& x, int k, int stride) {
    check(x.ndim() == 4, "E_INTERNAL", "avgpool2d input must be [N,C,H,W]");
    check(k >= 1 && stride >= 1, "E_INTERNAL", "avgpool2d: bad hyperparameters");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int OH = (H - k) / stride + 1;
    const int OW = (W - k) / stride + 1;
    check(OH >= 1 && OW >= 1, "E_INTERNAL", "avgpool2d: output would be empty");
    Tensor out = Tensor::zeros({N, C, OH, OW});
    auto xd = x.data();
    auto od = out.data();
    const float inv = 1.0f / static_cast<float>(k * k);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* xc = xd.data() + (static_cast<long long>(n) * C + c) * H * W;
            float* oc = od.data() + (static_cast<long long>(n) * C + c) * OH * OW;
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    double acc = 0.0;
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx)
                            acc += xc[static_cast<long long>(oy * stride + ky) * W + ox * stride + kx];
                    oc[static_cast<long long>(oy) * OW + ox] = static_cast<float>(acc) * inv;
                }
        }
    Tape::current().maybe_record(out, {x}, [xi = x.impl(), oi = out.impl(), N, C, H, W, OH, OW, k,
                                            stride, inv] {
        auto gx = ensure_grad(xi);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                float* gxc = gx.data() + (static_cast<long long>(n) * C + c) * H * W;
                const float* goc = oi->grad.data() + (static_cast<long long>(n) * C + c) * OH * OW;
                for (int oy = 0; oy < OH; ++oy)
                    for (int ox = 0; ox < OW; ++ox) {
                        const float g = goc[static_cast<long long>(oy) * OW + ox] * inv;
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx)
                                gxc[static_cast<long long>(oy * stride + ky) * W + ox * stride + kx] += g;
                    }
            }
    });
    return out;
}

Tensor global_avgpool(const Tensor& x) {
    check(x.ndim() == 4, "E_INTERNAL", "global_avgpool input must be [N,C,H,W]");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int HW = H * W;
    Tensor out = Tensor::zeros({N, C});
    auto xd = x.data();
    auto od = out.data();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* xc = xd.data() + (static_cast<long long>(n) * C + c) * HW;
            double acc = 0.0;
            for (int s = 0; s < HW; ++s) acc += xc[s];
            od[static_cast<size_t>(n) * C + c] = static_cast<float>(acc / HW);
        }
    Tape::current().maybe_record(out, {x}, [xi = x.impl(), oi = out.impl(), N, C, HW] {
        auto gx = ensure_grad(xi);
        const float inv = 1.0f / static_cast<float>(HW);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const float g = oi->grad[static_cast<size_t>(n) * C + c] * inv;
                float* gxc = gx.data() + (static_cast<long long>(n) * C + c) * HW;
                for (int s = 0; s < HW; ++s) gxc[s] += g;
            }
    });
    return out;
}

} // namespace chanmap
