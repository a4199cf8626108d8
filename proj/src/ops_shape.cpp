#include <cmath>
#include <cstring>

#include "chanmap/ops.hpp"

namespace chanmap {

namespace {

long long row_size(const Tensor& t) { return t.numel() / t.dim(0); }

} // namespace

Tensor concat_channels(const std::vector<Tensor>& parts) {
    check(!parts.empty(), "E_INTERNAL", "concat_channels: empty input");
    const Tensor& p0 = parts[0];
    check(p0.ndim() == 4, "E_INTERNAL", "concat_channels expects [N,C,H,W] parts");
    const int N = p0.dim(0), H = p0.dim(2), W = p0.dim(3);
    int C = 0;
    for (const auto& p : parts) {
        check(p.ndim() == 4 && p.dim(0) == N && p.dim(2) == H && p.dim(3) == W, "E_INTERNAL",
              "concat_channels: incompatible part shapes");
        C += p.dim(1);
    }
    Tensor out = Tensor::zeros({N, C, H, W});
    const long long HW = static_cast<long long>(H) * W;
    auto od = out.data();
    int c0 = 0;
    for (const auto& p : parts) {
        const int pc = p.dim(1);
        auto pd = p.data();
        for (int n = 0; n < N; ++n)
            std::memcpy(od.data() + ((static_cast<long long>(n) * C + c0) * HW),
                        pd.data() + (static_cast<long long>(n) * pc * HW),
                        sizeof(float) * static_cast<size_t>(pc * HW));
        c0 += pc;
    }
    std::vector<std::shared_ptr<detail::TensorImpl>> impls;
    std::vector<int> widths;
    for (const auto& p : parts) {
        impls.push_back(p.impl());
        widths.push_back(p.dim(1));
    }
    Tape::current().maybe_record(out, parts, [impls, widths, oi = out.impl(), N, C, HW] {
        int c0 = 0;
        for (size_t j = 0; j < impls.size(); ++j) {
            const int pc = widths[j];
            if (impls[j]->requires_grad) {
                auto g = ensure_grad(impls[j]);
                for (int n = 0; n < N; ++n) {
                    const float* src = oi->grad.data() + (static_cast<long long>(n) * C + c0) * HW;
                    float* dst = g.data() + static_cast<long long>(n) * pc * HW;
                    for (long long i = 0; i < pc * HW; ++i) dst[i] += src[i];
                }
            }
            c0 += pc;
        }
    });
    return out;
}

Tensor slice_channels(const Tensor& x, int begin, int end) {
    check(x.ndim() == 4, "E_INTERNAL", "slice_channels expects [N,C,H,W]");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    check(0 <= begin && begin < end && end <= C, "E_INTERNAL", "slice_channels: bad range");
    const int SC = end - begin;
    const long long HW = static_cast<long long>(H) * W;
    Tensor out = Tensor::zeros({N, SC, H, W});
    auto xd = x.data();
    auto od = out.data();
    for (int n = 0; n < N; ++n)
        std::memcpy(od.data() + static_cast<long long>(n) * SC * HW,
                    xd.data() + (static_cast<long long>(n) * C + begin) * HW,
                    sizeof(float) * static_cast<size_t>(SC * HW));
    Tape::current().maybe_record(out, {x}, [xi = x.impl(), oi = out.impl(), N, C, SC, HW, begin] {
        auto gx = ensure_grad(xi);
        for (int n = 0; n < N; ++n) {
            float* dst = gx.data() + (static_cast<long long>(n) * C + begin) * HW;
            const float* src = oi->grad.data() + static_cast<long long>(n) * SC * HW;
            for (long long i = 0; i < SC * HW; ++i) dst[i] += src[i];
        }
    });
    return out;
}

Tensor slice_dim0(const Tensor& x, int begin, int end) {
    check(x.ndim() >= 1, "E_INTERNAL", "slice_dim0 needs rank >= 1");
    const int R = x.dim(0);
    check(0 <= begin && begin < end && end <= R, "E_INTERNAL", "slice_dim0: bad range");
    const long long row = row_size(x);
    std::vector<int> shape = x.shape();
    shape[0] = end - begin;
    Tensor out = Tensor::zeros(shape);
    std::memcpy(out.data().data(), x.data().data() + static_cast<long long>(begin) * row,
                sizeof(float) * static_cast<size_t>((end - begin) * row));
    Tape::current().maybe_record(out, {x}, [xi = x.impl(), oi = out.impl(), begin, row] {
        auto gx = ensure_grad(xi);
        const long long n = static_cast<long long>(oi->grad.size());
        float* dst = gx.data() + static_cast<long long>(begin) * row;
        for (long long i = 0; i < n; ++i) dst[i] += oi->grad[static_cast<size_t>(i)];
    });
    return out;
}

Tensor blend_channels(const std::vector<Tensor>& branches, const Tensor& theta) {
    check(!branches.empty(), "E_INTERNAL", "blend_channels: no branches");
    const Tensor& b0 = branches[0];
    check(b0.ndim() == 4, "E_INTERNAL", "blend_channels expects [N,C,H,W] branches");
    const int N = b0.dim(0), C = b0.dim(1);
    const long long HW = static_cast<long long>(b0.dim(2)) * b0.dim(3);
    const int B = static_cast<int>(branches.size());
    for (const auto& b : branches)
        check(b.shape() == b0.shape(), "E_INTERNAL", "blend_channels: branch shape mismatch");
    check(theta.ndim() == 2 && theta.dim(0) == C && theta.dim(1) == B, "E_INTERNAL",
          "blend_channels: theta must be [C,B]");
    Tensor out = Tensor::zeros(b0.shape());
    auto od = out.data();
    auto td = theta.data();
    for (int j = 0; j < B; ++j) {
        auto bd = branches[static_cast<size_t>(j)].data();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const float t = td[static_cast<size_t>(c) * B + j];
                if (t == 0.0f) continue;
                const long long off = (static_cast<long long>(n) * C + c) * HW;
                for (long long s = 0; s < HW; ++s) od[static_cast<size_t>(off + s)] += t * bd[static_cast<size_t>(off + s)];
            }
    }
    std::vector<Tensor> inputs = branches;
    inputs.push_back(theta);
    std::vector<std::shared_ptr<detail::TensorImpl>> impls;
    for (const auto& b : branches) impls.push_back(b.impl());
    Tape::current().maybe_record(out, inputs, [impls, ti = theta.impl(), oi = out.impl(), N, C, HW,
                                               B] {
        float* gt = ti->requires_grad ? ensure_grad(ti).data() : nullptr;
        for (int j = 0; j < B; ++j) {
            auto& bi = impls[static_cast<size_t>(j)];
            float* gb = bi->requires_grad ? ensure_grad(bi).data() : nullptr;
            if (!gb && !gt) continue;
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const long long off = (static_cast<long long>(n) * C + c) * HW;
                    const float t = ti->data[static_cast<size_t>(c) * B + j];
                    double dot = 0.0;
                    for (long long s = 0; s < HW; ++s) {
                        const float g = oi->grad[static_cast<size_t>(off + s)];
                        if (gb) gb[off + s] += t * g;
                        if (gt) dot += static_cast<double>(g) * bi->data[static_cast<size_t>(off + s)];
                    }
                    if (gt) gt[static_cast<size_t>(c) * B + j] += static_cast<float>(dot);
                }
        }
    });
    return out;
}

Tensor blend_filters(const std::vector<Tensor>& filters, const Tensor& theta) {
    check(!filters.empty(), "E_INTERNAL", "blend_filters: no filter banks");
    const Tensor& f0 = filters[0];
    const int O = f0.dim(0);
    const long long R = row_size(f0);
    const int B = static_cast<int>(filters.size());
    for (const auto& f : filters)
        check(f.shape() == f0.shape(), "E_INTERNAL", "blend_filters: filter shape mismatch");
    check(theta.ndim() == 2 && theta.dim(0) == O && theta.dim(1) == B, "E_INTERNAL",
          "blend_filters: theta must be [O,B]");
    Tensor out = Tensor::zeros(f0.shape());
    auto od = out.data();
    auto td = theta.data();
    for (int j = 0; j < B; ++j) {
        auto fd = filters[static_cast<size_t>(j)].data();
        for (int o = 0; o < O; ++o) {
            const float t = td[static_cast<size_t>(o) * B + j];
            if (t == 0.0f) continue;
            const long long off = static_cast<long long>(o) * R;
            for (long long r = 0; r < R; ++r) od[static_cast<size_t>(off + r)] += t * fd[static_cast<size_t>(off + r)];
        }
    }
    std::vector<Tensor> inputs = filters;
    inputs.push_back(theta);
    std::vector<std::shared_ptr<detail::TensorImpl>> impls;
    for (const auto& f : filters) impls.push_back(f.impl());
    Tape::current().maybe_record(out, inputs, [impls, ti = theta.impl(), oi = out.impl(), O, R, B] {
        float* gt = ti->requires_grad ? ensure_grad(ti).data() : nullptr;
        for (int j = 0; j < B; ++j) {
            auto& fi = impls[static_cast<size_t>(j)];
            float* gf = fi->requires_grad ? ensure_grad(fi).data() : nullptr;
            if (!gf && !gt) continue;
            for (int o = 0; o < O; ++o) {
                const long long off = static_cast<long long>(o) * R;
                const float t = ti->data[static_cast<size_t>(o) * B + j];
                double dot = 0.0;
                for (long long r = 0; r < R; ++r) {
                    const float g = oi->grad[static_cast<size_t>(off + r)];
                    if (gf) gf[off + r] += t * g;
                    if (gt) dot += static_cast<double>(g) * fi->data[static_cast<size_t>(off + r)];
                }
                if (gt) gt[static_cast<size_t>(o) * B + j] += static_cast<float>(dot);
            }
        }
    });
    return out;
}

Tensor select_filters(const std::vector<Tensor>& filters, const std::vector<int>& pick) {
    check(!filters.empty(), "E_INTERNAL", "select_filters: no filter banks");
    const Tensor& f0 = filters[0];
    const int O = f0.dim(0);
    const long long R = row_size(f0);
    const int B = static_cast<int>(filters.size());
    for (const auto& f : filters)
        check(f.shape() == f0.shape(), "E_INTERNAL", "select_filters: filter shape mismatch");
    check(static_cast<int>(pick.size()) == O, "E_INTERNAL", "select_filters: pick size mismatch");
    for (int p : pick)
        check(p >= 0 && p < B, "E_INTERNAL", "select_filters: branch index out of range");
    Tensor out = Tensor::zeros(f0.shape());
    auto od = out.data();
    for (int o = 0; o < O; ++o) {
        auto fd = filters[static_cast<size_t>(pick[static_cast<size_t>(o)])].data();
        std::memcpy(od.data() + static_cast<long long>(o) * R,
                    fd.data() + static_cast<long long>(o) * R,
                    sizeof(float) * static_cast<size_t>(R));
    }
    std::vector<std::shared_ptr<detail::TensorImpl>> impls;
    for (const auto& f : filters) impls.push_back(f.impl());
    Tape::current().maybe_record(out, filters, [impls, pick, oi = out.impl(), O, R] {
        for (int o = 0; o < O; ++o) {
            auto& fi = impls[static_cast<size_t>(pick[static_cast<size_t>(o)])];
            if (!fi->requires_grad) continue;
            auto gf = ensure_grad(fi);
            const long long off = static_cast<long long>(o) * R;
            for (long long r = 0; r < R; ++r) gf[static_cast<size_t>(off + r)] += oi->grad[static_cast<size_t>(off + r)];
        }
    });
    return out;
}

BatchNorm2d BatchNorm2d::make(int channels) {
    BatchNorm2d bn;
    bn.gamma = Tensor::full({channels}, 1.0f, true);
    bn.beta = Tensor::zeros({channels}, true);
    bn.running_mean.assign(static_cast<size_t>(channels), 0.0f);
    bn.running_var.assign(static_cast<size_t>(channels), 1.0f);
    return bn;
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
    check(x.ndim() == 4, "E_INTERNAL", "batchnorm2d input must be [N,C,H,W]");
    const int N = x.dim(0), C = x.dim(1);
    const long long HW = static_cast<long long>(x.dim(2)) * x.dim(3);
    check(C == channels(), "E_INTERNAL", "batchnorm2d: channel count mismatch");
    const long long M = static_cast<long long>(N) * HW;
    Tensor out = Tensor::zeros(x.shape());
    auto xd = x.data();
    auto od = out.data();
    auto gd = gamma.data();
    auto bd = beta.data();

    std::vector<float> mean(static_cast<size_t>(C)), invstd(static_cast<size_t>(C));
    if (training) {
        check(M > 1, "E_INTERNAL", "batchnorm2d training needs more than one value per channel");
        for (int c = 0; c < C; ++c) {
            double s = 0.0, s2 = 0.0;
            for (int n = 0; n < N; ++n) {
                const float* xc = xd.data() + (static_cast<long long>(n) * C + c) * HW;
                for (long long i = 0; i < HW; ++i) {
                    s += xc[i];
                    s2 += static_cast<double>(xc[i]) * xc[i];
                }
            }
            const double mu = s / static_cast<double>(M);
            const double var = s2 / static_cast<double>(M) - mu * mu;
            mean[static_cast<size_t>(c)] = static_cast<float>(mu);
            invstd[static_cast<size_t>(c)] = static_cast<float>(1.0 / std::sqrt(std::max(var, 0.0) + eps));
            const double unbiased = var * static_cast<double>(M) / static_cast<double>(M - 1);
            running_mean[static_cast<size_t>(c)] =
                (1.0f - momentum) * running_mean[static_cast<size_t>(c)] + momentum * static_cast<float>(mu);
            running_var[static_cast<size_t>(c)] =
                (1.0f - momentum) * running_var[static_cast<size_t>(c)] + momentum * static_cast<float>(unbiased);
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mean[static_cast<size_t>(c)] = running_mean[static_cast<size_t>(c)];
            invstd[static_cast<size_t>(c)] =
                1.0f / std::sqrt(running_var[static_cast<size_t>(c)] + eps);
        }
    }
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* xc = xd.data() + (static_cast<long long>(n) * C + c) * HW;
            float* oc = od.data() + (static_cast<long long>(n) * C + c) * HW;
            const float mu = mean[static_cast<size_t>(c)];
            const float is = invstd[static_cast<size_t>(c)];
            const float g = gd[static_cast<size_t>(c)];
            const float b = bd[static_cast<size_t>(c)];
            for (long long i = 0; i < HW; ++i) oc[i] = g * (xc[i] - mu) * is + b;
        }
    Tape::current().maybe_record(out, {x, gamma, beta},
                                 [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(),
                                  oi = out.impl(), mean, invstd, N, C, HW, M, training] {
        const float* gy = oi->grad.data();
        float* ggam = gi->requires_grad ? ensure_grad(gi).data() : nullptr;
        float* gbet = bi->requires_grad ? ensure_grad(bi).data() : nullptr;
        float* gx = xi->requires_grad ? ensure_grad(xi).data() : nullptr;
        for (int c = 0; c < C; ++c) {
            const float mu = mean[static_cast<size_t>(c)];
            const float is = invstd[static_cast<size_t>(c)];
            double sum_g = 0.0, sum_gx = 0.0;
            for (int n = 0; n < N; ++n) {
                const long long off = (static_cast<long long>(n) * C + c) * HW;
                for (long long i = 0; i < HW; ++i) {
                    const float g = gy[off + i];
                    sum_g += g;
                    sum_gx += static_cast<double>(g) * (xi->data[static_cast<size_t>(off + i)] - mu) * is;
                }
            }
            if (gbet) gbet[c] += static_cast<float>(sum_g);
            if (ggam) ggam[c] += static_cast<float>(sum_gx);
            if (!gx) continue;
            const float gcoef = gi->data[static_cast<size_t>(c)] * is;
            if (training) {
                const float mg = static_cast<float>(sum_g / static_cast<double>(M));
                const float mgx = static_cast<float>(sum_gx / static_cast<double>(M));
                for (int n = 0; n < N; ++n) {
                    const long long off = (static_cast<long long>(n) * C + c) * HW;
                    for (long long i = 0; i < HW; ++i) {
                        const float xhat = (xi->data[static_cast<size_t>(off + i)] - mu) * is;
                        gx[off + i] += gcoef * (gy[off + i] - mg - xhat * mgx);
                    }
                }
            } else {
                for (int n = 0; n < N; ++n) {
                    const long long off = (static_cast<long long>(n) * C + c) * HW;
                    for (long long i = 0; i < HW; ++i) gx[off + i] += gcoef * gy[off + i];
                }
            }
        }
    });
    return out;
}

} // namespace chanmap
