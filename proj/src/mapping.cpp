#include <utility>

#include "chanmap/mapping.hpp"

namespace chanmap {

std::shared_ptr<ThetaBank> ThetaBank::make_per_channel(int channels, int branches) {
    check(channels >= 1, "E_INTERNAL", "theta bank needs at least one channel");
    check(branches >= 2, "E_INTERNAL", "theta bank needs at least two branches");
    auto b = std::make_shared<ThetaBank>();
    b->mode = ThetaMode::PerChannel;
    b->channels = channels;
    b->branches = branches;
    b->logits = Tensor::zeros({channels, branches}, true);
    return b;
}

std::shared_ptr<ThetaBank> ThetaBank::make_contiguous(int channels) {
    check(channels >= 1, "E_INTERNAL", "theta bank needs at least one channel");
    auto b = std::make_shared<ThetaBank>();
    b->mode = ThetaMode::Contiguous;
    b->channels = channels;
    b->branches = 2;
    b->logits = Tensor::zeros({channels + 1}, true);
    return b;
}

Tensor ThetaBank::split_probs() const {
    check(mode == ThetaMode::Contiguous, "E_INTERNAL",
          "split distribution only exists for contiguous banks");
    check(temperature > 0.0f, "E_INTERNAL", "theta temperature must be positive");
    return softmax(affine(logits, 1.0f / temperature, 0.0f));
}

Tensor ThetaBank::theta_matrix() const {
    if (mode == ThetaMode::PerChannel) {
        check(temperature > 0.0f, "E_INTERNAL", "theta temperature must be positive");
        return softmax(affine(logits, 1.0f / temperature, 0.0f));
    }
    // P(channel c on branch 0) = P(split lands past c).
    Tensor share0 = suffix_sum_exclusive(split_probs());
    Tensor share1 = affine(share0, -1.0f, 1.0f);
    return stack_columns({share0, share1});
}

Tensor ThetaBank::effective_channels() const { return column_sums(theta_matrix()); }

std::vector<int> ThetaBank::discretize() const {
    NoGradGuard ng;
    std::vector<int> out(static_cast<size_t>(channels), 0);
    if (mode == ThetaMode::Contiguous) {
        const int s = discretize_split();
        for (int c = s; c < channels; ++c) out[static_cast<size_t>(c)] = 1;
        return out;
    }
    Tensor th = theta_matrix();
    auto td = th.data();
    for (int c = 0; c < channels; ++c) {
        const float* row = td.data() + static_cast<long long>(c) * branches;
        int best = 0;
        for (int j = 1; j < branches; ++j)
            if (row[j] > row[best]) best = j;
        out[static_cast<size_t>(c)] = best;
    }
    return out;
}

int ThetaBank::discretize_split() const {
    NoGradGuard ng;
    Tensor p = split_probs();
    auto pd = p.data();
    int best = 0;
    for (int i = 1; i < static_cast<int>(pd.size()); ++i)
        if (pd[static_cast<size_t>(i)] > pd[static_cast<size_t>(best)]) best = i;
    return best;
}

Tensor MappedBranch::quantize(const Tensor& w) {
    switch (precision.kind) {
    case Precision::Kind::Float: return w;
    case Precision::Kind::Ternary:
        check(ternary != nullptr, "E_INTERNAL", "ternary branch has no quantizer");
        return ternary->apply(w);
    case Precision::Kind::Affine:
        check(affine_q != nullptr, "E_INTERNAL", "affine branch has no quantizer");
        return affine_q->apply(w);
    }
    fail("E_INTERNAL", "unhandled precision kind");
}

MappedConvLayer::MappedConvLayer(std::string layer_name, LayerGeometry g, MapMode m)
    : name(std::move(layer_name)), geom(g), map_mode(m) {
    check(map_mode != MapMode::None, "E_INTERNAL", "mapped layer needs a map mode");
}

Tensor MappedConvLayer::theta_for_pass() const {
    check(bank != nullptr, "E_INTERNAL", "mapped layer '" + name + "' has no theta bank");
    check(bank->channels == geom.c_out && bank->branches == static_cast<int>(branches.size()),
          "E_INTERNAL", "theta bank of '" + name + "' does not match the layer");
    if (bank->trainable) return bank->theta_matrix();
    NoGradGuard ng;
    return bank->theta_matrix();
}

Tensor MappedConvLayer::branch_conv(size_t j, const Tensor& x, const Tensor& w,
                                    const Tensor& b) const {
    const MappedBranch& br = branches.at(j);
    const int groups = br.op == LayerOp::DwConv ? x.dim(1) : 1;
    return conv2d(x, w, b, geom.stride, geom.pad, groups);
}

Tensor MappedConvLayer::forward(const Tensor& x, const PassConfig& cfg) {
    check(branches.size() >= 2, "E_INTERNAL",
          "mapped layer '" + name + "' needs at least two branches");
    switch (cfg.mode) {
    case PassConfig::Mode::Float: {
        if (map_mode == MapMode::Precision) return conv2d(x, weight, bias, geom.stride, geom.pad);
        // Fixed uniform mix keeps every branch in training while the
        // assignment machinery is off.
        std::vector<Tensor> ys;
        for (size_t j = 0; j < branches.size(); ++j)
            ys.push_back(branch_conv(j, x, branches[j].weight, bias));
        Tensor uniform = Tensor::full({geom.c_out, static_cast<int>(branches.size())},
                                      1.0f / static_cast<float>(branches.size()));
        return blend_channels(ys, uniform);
    }
    case PassConfig::Mode::Blend: return forward_blend(x, cfg);
    case PassConfig::Mode::Discrete: return forward_discrete(x, cfg);
    }
    fail("E_INTERNAL", "unhandled pass mode");
}

Tensor MappedConvLayer::forward_blend(const Tensor& x, const PassConfig& cfg) {
    Tensor th = theta_for_pass();
    if (map_mode == MapMode::Operator) {
        std::vector<Tensor> ys;
        for (size_t j = 0; j < branches.size(); ++j) {
            Tensor w = branches[j].quantize(branches[j].weight);
            ys.push_back(branch_conv(j, x, w, bias));
        }
        return blend_channels(ys, th);
    }
    Tensor xq = quantizes_input() ? act_quant.apply(x) : x;
    std::vector<Tensor> wq;
    for (auto& br : branches) wq.push_back(br.quantize(weight));
    if (cfg.style == BlendStyle::Weights) {
        Tensor weff = blend_filters(wq, th);
        return conv2d(xq, weff, bias, geom.stride, geom.pad);
    }
    std::vector<Tensor> ys;
    for (size_t j = 0; j < branches.size(); ++j) ys.push_back(branch_conv(j, xq, wq[j], bias));
    return blend_channels(ys, th);
}

Tensor MappedConvLayer::forward_discrete(const Tensor& x, const PassConfig&) {
    check(discrete, "E_INTERNAL",
          "layer '" + name + "' has no hard assignment; discretize first");
    if (map_mode == MapMode::Precision) {
        Tensor xq = quantizes_input() ? act_quant.apply(x) : x;
        std::vector<Tensor> wq;
        for (auto& br : branches) wq.push_back(br.quantize(weight));
        Tensor wsel = select_filters(wq, assign);
        return conv2d(xq, wsel, bias, geom.stride, geom.pad);
    }
    check(split >= 0, "E_INTERNAL", "operator layer '" + name + "' has no split");
    const int C = geom.c_out;
    std::vector<Tensor> parts;
    const int bounds[3] = {0, split, C};
    for (size_t j = 0; j < 2; ++j) {
        const int lo = bounds[j];
        const int hi = bounds[j + 1];
        if (lo == hi) continue;
        MappedBranch& br = branches.at(j);
        Tensor w = br.quantize(br.weight);
        Tensor wpart = slice_dim0(w, lo, hi);
        Tensor bpart = bias.defined() ? slice_dim0(bias, lo, hi) : Tensor();
        if (br.op == LayerOp::DwConv) {
            Tensor xpart = slice_channels(x, lo, hi);
            parts.push_back(conv2d(xpart, wpart, bpart, geom.stride, geom.pad, hi - lo));
        } else {
            parts.push_back(conv2d(x, wpart, bpart, geom.stride, geom.pad));
        }
    }
    return parts.size() == 1 ? parts[0] : concat_channels(parts);
}

void MappedConvLayer::set_discrete_from_bank() {
    check(bank != nullptr, "E_INTERNAL", "mapped layer '" + name + "' has no theta bank");
    assign = bank->discretize();
    split = bank->mode == ThetaMode::Contiguous ? bank->discretize_split() : -1;
    discrete = true;
}

void MappedConvLayer::clear_discrete() {
    discrete = false;
    assign.clear();
    split = -1;
}

void MappedConvLayer::freeze_quantizers() {
    for (auto& br : branches) {
        const Tensor& w = map_mode == MapMode::Precision ? weight : br.weight;
        if (br.precision.kind == Precision::Kind::Ternary) br.ternary->freeze(w);
        if (br.precision.kind == Precision::Kind::Affine) br.affine_q->freeze(w);
    }
    if (quantizes_input()) {
        check(act_quant.absmax() > 0.0f, "E_INTERNAL",
              "activation quantizer of '" + name +
                  "' has no statistics; run a calibration batch first");
        act_quant.freeze_last();
    }
}

bool MappedConvLayer::quantizes_input() const {
    if (map_mode != MapMode::Precision) return false;
    for (const auto& br : branches)
        if (br.precision.kind != Precision::Kind::Float) return true;
    return false;
}

void MappedConvLayer::unfreeze_quantizers() {
    for (auto& br : branches) {
        if (br.ternary) br.ternary->unfreeze();
        if (br.affine_q) br.affine_q->unfreeze();
    }
    act_quant.unfreeze();
}

std::vector<long long> MappedConvLayer::discrete_counts() const {
    check(discrete, "E_INTERNAL", "layer '" + name + "' has no hard assignment");
    std::vector<long long> counts(branches.size(), 0);
    for (int b : assign) counts.at(static_cast<size_t>(b))++;
    return counts;
}

std::vector<int> MappedConvLayer::cu_of_channel() const {
    check(discrete, "E_INTERNAL", "layer '" + name + "' has no hard assignment");
    std::vector<int> out;
    out.reserve(assign.size());
    for (int b : assign) out.push_back(branches.at(static_cast<size_t>(b)).cu);
    return out;
}

const LayerAssignment& Assignment::layer(const std::string& name) const {
    for (const auto& la : layers)
        if (la.layer == name) return la;
    fail("E_INTERNAL", "no assignment recorded for layer '" + name + "'");
}

} // namespace chanmap
