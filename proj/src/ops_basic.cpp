#include <algorithm>
#include <cmath>

#include "chanmap/ops.hpp"

namespace chanmap {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    check(a.shape() == b.shape(), "E_INTERNAL",
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
}

} // namespace

Tensor relu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    auto xd = x.data();
    auto od = out.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = xd[i] > 0.0f ? xd[i] : 0.0f;
    Tape::current().maybe_record(out, {x}, [xi = x.impl(), oi = out.impl()] {
        auto gx = ensure_grad(xi);
        for (size_t i = 0; i < gx.size(); ++i)
            if (xi->data[i] > 0.0f) gx[i] += oi->grad[i];
    });
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    auto ad = a.data();
    auto bd = b.data();
    auto od = out.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
    Tape::current().maybe_record(out, {a, b}, [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
        if (ai->requires_grad) {
            auto ga = ensure_grad(ai);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i];
        }
        if (bi->requires_grad) {
            auto gb = ensure_grad(bi);
            for (size_t i = 0; i < gb.size(); ++i) gb[i] += oi->grad[i];
        }
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    auto ad = a.data();
    auto bd = b.data();
    auto od = out.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
    Tape::current().maybe_record(out, {a, b}, [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
        if (ai->requires_grad) {
            auto ga = ensure_grad(ai);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i] * bi->data[i];
        }
        if (bi->requires_grad) {
            auto gb = ensure_grad(bi);
            for (size_t i = 0; i < gb.size(); ++i) gb[i] += oi->grad[i] * ai->data[i];
        }
    });
    return out;
}

Tensor affine(const Tensor& x, float a, float b) {
    Tensor out = Tensor::zeros(x.shape());
    auto xd = x.data();
    auto od = out.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = a * xd[i] + b;
    Tape::current().maybe_record(out, {x}, [xi = x.impl(), oi = out.impl(), a] {
        auto gx = ensure_grad(xi);
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += a * oi->grad[i];
    });
    return out;
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    Tape::current().maybe_record(out, {x}, [xi = x.impl(), oi = out.impl()] {
        const float g = oi->grad[0];
        auto gx = ensure_grad(xi);
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
    return out;
}

Tensor mean(const Tensor& x) {
    check(x.numel() > 0, "E_INTERNAL", "mean of an empty tensor");
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    const float inv = 1.0f / static_cast<float>(x.numel());
    Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(x.numel())));
    Tape::current().maybe_record(out, {x}, [xi = x.impl(), oi = out.impl(), inv] {
        const float g = oi->grad[0] * inv;
        auto gx = ensure_grad(xi);
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
    return out;
}

Tensor softmax(const Tensor& x) {
    check(x.ndim() >= 1, "E_INTERNAL", "softmax needs rank >= 1");
    const int K = x.dim(x.ndim() - 1);
    const long long R = x.numel() / K;
    Tensor out = Tensor::zeros(x.shape());
    auto xd = x.data();
    auto od = out.data();
    for (long long r = 0; r < R; ++r) {
        const float* row = xd.data() + r * K;
        float* orow = od.data() + r * K;
        float m = row[0];
        for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
        double z = 0.0;
        for (int k = 0; k < K; ++k) {
            orow[k] = std::exp(row[k] - m);
            z += orow[k];
        }
        const float invz = static_cast<float>(1.0 / z);
        for (int k = 0; k < K; ++k) orow[k] *= invz;
    }
    Tape::current().maybe_record(out, {x}, [xi = x.impl(), oi = out.impl(), R, K] {
        auto gx = ensure_grad(xi);
        for (long long r = 0; r < R; ++r) {
            const float* s = oi->data.data() + r * K;
            const float* g = oi->grad.data() + r * K;
            float* gxr = gx.data() + r * K;
            double dot = 0.0;
            for (int k = 0; k < K; ++k) dot += static_cast<double>(g[k]) * s[k];
            const float d = static_cast<float>(dot);
            for (int k = 0; k < K; ++k) gxr[k] += s[k] * (g[k] - d);
        }
    });
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    check(logits.ndim() == 2, "E_INTERNAL", "cross_entropy expects [N,K] logits");
    const int N = logits.dim(0);
    const int K = logits.dim(1);
    check(static_cast<int>(labels.size()) == N, "E_INTERNAL",
          "cross_entropy: label count does not match batch");
    for (int y : labels)
        check(y >= 0 && y < K, "E_INTERNAL", "cross_entropy: label out of range");
    auto xd = logits.data();
    double total = 0.0;
    for (int n = 0; n < N; ++n) {
        const float* row = xd.data() + static_cast<long long>(n) * K;
        float m = row[0];
        for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
        double z = 0.0;
        for (int k = 0; k < K; ++k) z += std::exp(static_cast<double>(row[k]) - m);
        total += m + std::log(z) - row[labels[static_cast<size_t>(n)]];
    }
    Tensor out = Tensor::scalar(static_cast<float>(total / N));
    Tape::current().maybe_record(out, {logits},
                                 [xi = logits.impl(), oi = out.impl(), labels, N, K] {
        const float g = oi->grad[0] / static_cast<float>(N);
        auto gx = ensure_grad(xi);
        for (int n = 0; n < N; ++n) {
            const float* row = xi->data.data() + static_cast<long long>(n) * K;
            float* grow = gx.data() + static_cast<long long>(n) * K;
            float m = row[0];
            for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
            double z = 0.0;
            for (int k = 0; k < K; ++k) z += std::exp(static_cast<double>(row[k]) - m);
            for (int k = 0; k < K; ++k) {
                const float p = static_cast<float>(std::exp(static_cast<double>(row[k]) - m) / z);
                grow[k] += g * (p - (k == labels[static_cast<size_t>(n)] ? 1.0f : 0.0f));
            }
        }
    });
    return out;
}

Tensor column_sums(const Tensor& m) {
    check(m.ndim() == 2, "E_INTERNAL", "column_sums expects a matrix");
    const int R = m.dim(0);
    const int C = m.dim(1);
    Tensor out = Tensor::zeros({C});
    auto md = m.data();
    auto od = out.data();
    for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int r = 0; r < R; ++r) acc += md[static_cast<size_t>(r) * C + c];
        od[static_cast<size_t>(c)] = static_cast<float>(acc);
    }
    Tape::current().maybe_record(out, {m}, [mi = m.impl(), oi = out.impl(), R, C] {
        auto gm = ensure_grad(mi);
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c)
                gm[static_cast<size_t>(r) * C + c] += oi->grad[static_cast<size_t>(c)];
    });
    return out;
}

Tensor suffix_sum_exclusive(const Tensor& v) {
    check(v.ndim() == 1 && v.dim(0) >= 2, "E_INTERNAL",
          "suffix_sum_exclusive expects a vector of length >= 2");
    const int K = v.dim(0);
    Tensor out = Tensor::zeros({K - 1});
    auto vd = v.data();
    auto od = out.data();
    double acc = 0.0;
    for (int i = K - 2; i >= 0; --i) {
        acc += vd[static_cast<size_t>(i) + 1];
        od[static_cast<size_t>(i)] = static_cast<float>(acc);
    }
    Tape::current().maybe_record(out, {v}, [vi = v.impl(), oi = out.impl(), K] {
        auto gv = ensure_grad(vi);
        float prefix = 0.0f;
        for (int k = 1; k < K; ++k) {
            prefix += oi->grad[static_cast<size_t>(k) - 1];
            gv[static_cast<size_t>(k)] += prefix;
        }
    });
    return out;
}

Tensor stack_columns(const std::vector<Tensor>& cols) {
    check(!cols.empty(), "E_INTERNAL", "stack_columns: empty input");
    const int C = cols[0].dim(0);
    const int B = static_cast<int>(cols.size());
    for (const auto& c : cols)
        check(c.ndim() == 1 && c.dim(0) == C, "E_INTERNAL", "stack_columns: ragged input");
    Tensor out = Tensor::zeros({C, B});
    auto od = out.data();
    for (int j = 0; j < B; ++j) {
        auto cd = cols[static_cast<size_t>(j)].data();
        for (int c = 0; c < C; ++c) od[static_cast<size_t>(c) * B + j] = cd[static_cast<size_t>(c)];
    }
    std::vector<std::shared_ptr<detail::TensorImpl>> impls;
    for (const auto& c : cols) impls.push_back(c.impl());
    Tape::current().maybe_record(out, cols, [impls, oi = out.impl(), C, B] {
        for (int j = 0; j < B; ++j) {
            if (!impls[static_cast<size_t>(j)]->requires_grad) continue;
            auto g = ensure_grad(impls[static_cast<size_t>(j)]);
            for (int c = 0; c < C; ++c) g[static_cast<size_t>(c)] += oi->grad[static_cast<size_t>(c) * B + j];
        }
    });
    return out;
}

Tensor stack_scalars(const std::vector<Tensor>& scalars) {
    check(!scalars.empty(), "E_INTERNAL", "stack_scalars: empty input");
    const int K = static_cast<int>(scalars.size());
    Tensor out = Tensor::zeros({K});
    auto od = out.data();
    for (int k = 0; k < K; ++k) {
        check(scalars[static_cast<size_t>(k)].numel() == 1, "E_INTERNAL",
              "stack_scalars: non-scalar input");
        od[static_cast<size_t>(k)] = scalars[static_cast<size_t>(k)].data()[0];
    }
    std::vector<std::shared_ptr<detail::TensorImpl>> impls;
    for (const auto& s : scalars) impls.push_back(s.impl());
    Tape::current().maybe_record(out, scalars, [impls, oi = out.impl(), K] {
        for (int k = 0; k < K; ++k) {
            if (!impls[static_cast<size_t>(k)]->requires_grad) continue;
            ensure_grad(impls[static_cast<size_t>(k)])[0] += oi->grad[static_cast<size_t>(k)];
        }
    });
    return out;
}

Tensor pick(const Tensor& v, int i) {
    check(v.ndim() == 1 && i >= 0 && i < v.dim(0), "E_INTERNAL", "pick: index out of range");
    Tensor out = Tensor::scalar(v.data()[static_cast<size_t>(i)]);
    Tape::current().maybe_record(out, {v}, [vi = v.impl(), oi = out.impl(), i] {
        ensure_grad(vi)[static_cast<size_t>(i)] += oi->grad[0];
    });
    return out;
}

Tensor dot_const(const Tensor& v, const std::vector<float>& coeff) {
    check(v.ndim() == 1 && v.dim(0) == static_cast<int>(coeff.size()), "E_INTERNAL",
          "dot_const: size mismatch");
    double acc = 0.0;
    auto vd = v.data();
    for (size_t i = 0; i < coeff.size(); ++i) acc += static_cast<double>(vd[i]) * coeff[i];
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    Tape::current().maybe_record(out, {v}, [vi = v.impl(), oi = out.impl(), coeff] {
        const float g = oi->grad[0];
        auto gv = ensure_grad(vi);
        for (size_t i = 0; i < coeff.size(); ++i) gv[i] += g * coeff[i];
    });
    return out;
}

double smooth_max(const std::vector<double>& v, double tau) {
    check(!v.empty(), "E_INTERNAL", "smooth_max of empty set");
    check(tau > 0.0, "E_INTERNAL", "smooth_max temperature must be positive");
    double m = v[0];
    for (double x : v) m = std::max(m, x);
    double z = 0.0, num = 0.0;
    for (double x : v) {
        const double e = std::exp((x - m) / tau);
        z += e;
        num += e * x;
    }
    return num / z;
}

Tensor smooth_max(const Tensor& v, float tau) {
    check(v.ndim() == 1 && v.dim(0) >= 1, "E_INTERNAL", "smooth_max expects a vector");
    check(tau > 0.0f, "E_INTERNAL", "smooth_max temperature must be positive");
    const int K = v.dim(0);
    auto vd = v.data();
    float m = vd[0];
    for (int k = 1; k < K; ++k) m = std::max(m, vd[static_cast<size_t>(k)]);
    std::vector<float> p(static_cast<size_t>(K));
    double z = 0.0;
    for (int k = 0; k < K; ++k) {
        p[static_cast<size_t>(k)] =
            static_cast<float>(std::exp((static_cast<double>(vd[static_cast<size_t>(k)]) - m) / tau));
        z += p[static_cast<size_t>(k)];
    }
    double num = 0.0;
    for (int k = 0; k < K; ++k) {
        p[static_cast<size_t>(k)] = static_cast<float>(p[static_cast<size_t>(k)] / z);
        num += static_cast<double>(p[static_cast<size_t>(k)]) * vd[static_cast<size_t>(k)];
    }
    Tensor out = Tensor::scalar(static_cast<float>(num));
    Tape::current().maybe_record(out, {v}, [vi = v.impl(), oi = out.impl(), p, tau, K] {
        const float g = oi->grad[0];
        const float s = oi->data[0];
        auto gv = ensure_grad(vi);
        for (int k = 0; k < K; ++k) {
            const float pk = p[static_cast<size_t>(k)];
            gv[static_cast<size_t>(k)] +=
                g * (pk + pk * (vi->data[static_cast<size_t>(k)] - s) / tau);
        }
    });
    return out;
}

} // namespace chanmap
