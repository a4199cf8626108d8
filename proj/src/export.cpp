#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "chanmap/export.hpp"

namespace chanmap {

const std::vector<int>& ReorderResult::perm_of(const std::string& name) const {
    for (size_t i = 0; i < layers.size(); ++i)
        if (layers[i] == name) return perms[i];
    fail("E_INTERNAL", "no permutation recorded for layer '" + name + "'");
}

const ArtifactLayer& MappingArtifact::layer(const std::string& name) const {
    for (const auto& l : layers)
        if (l.name == name) return l;
    fail("E_VERIFY", "artifact has no layer '" + name + "'");
}

namespace {

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(static_cast<size_t>(n)) {
        std::iota(parent.begin(), parent.end(), 0);
    }
    int find(int x) {
        while (parent[static_cast<size_t>(x)] != x) {
            parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
            x = parent[static_cast<size_t>(x)];
        }
        return x;
    }
    void unite(int a, int b) { parent[static_cast<size_t>(find(a))] = find(b); }
};

std::vector<int> identity_perm(int n) {
    std::vector<int> p(static_cast<size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    return p;
}

bool is_identity(const std::vector<int>& p) {
    for (size_t i = 0; i < p.size(); ++i)
        if (p[i] != static_cast<int>(i)) return false;
    return true;
}

// new_row[n] = old_row[pi[n]]
void permute_dim0_inplace(Tensor& t, const std::vector<int>& pi) {
    if (!t.defined()) return;
    check(t.dim(0) == static_cast<int>(pi.size()), "E_INTERNAL",
          "permutation does not match tensor rows");
    const long long R = t.numel() / t.dim(0);
    auto d = t.data();
    std::vector<float> old(d.begin(), d.end());
    for (size_t n = 0; n < pi.size(); ++n)
        std::memcpy(d.data() + static_cast<long long>(n) * R,
                    old.data() + static_cast<long long>(pi[n]) * R,
                    static_cast<size_t>(R) * sizeof(float));
}

// new[:, n, ...] = old[:, pi[n], ...]
void permute_dim1_inplace(Tensor& t, const std::vector<int>& pi) {
    if (!t.defined()) return;
    check(t.ndim() >= 2 && t.dim(1) == static_cast<int>(pi.size()), "E_INTERNAL",
          "permutation does not match tensor columns");
    const int D0 = t.dim(0);
    const int D1 = t.dim(1);
    const long long R = t.numel() / (static_cast<long long>(D0) * D1);
    auto d = t.data();
    std::vector<float> old(d.begin(), d.end());
    for (int a = 0; a < D0; ++a)
        for (int n = 0; n < D1; ++n)
            std::memcpy(d.data() + (static_cast<long long>(a) * D1 + n) * R,
                        old.data() + (static_cast<long long>(a) * D1 + pi[static_cast<size_t>(n)]) * R,
                        static_cast<size_t>(R) * sizeof(float));
}

std::vector<float> permute_vec(const std::vector<float>& v, const std::vector<int>& pi) {
    check(v.size() == pi.size(), "E_INTERNAL", "permutation does not match vector length");
    std::vector<float> out(v.size());
    for (size_t n = 0; n < pi.size(); ++n) out[n] = v[static_cast<size_t>(pi[n])];
    return out;
}

std::vector<int> permute_ints(const std::vector<int>& v, const std::vector<int>& pi) {
    std::vector<int> out(v.size());
    for (size_t n = 0; n < pi.size(); ++n) out[n] = v[static_cast<size_t>(pi[n])];
    return out;
}

} // namespace

ReorderResult reorder_channels(Network& net, const Assignment& a) {
    net.apply_assignment(a);
    const NetworkSpec& spec = net.spec();
    auto& layers = net.layers();
    const int n = static_cast<int>(layers.size());

    // Channel spaces: node 0 is the network input, node i+1 layer i's output.
    // Standard convolutions and linear layers start a fresh space; depthwise
    // and pooling pass channels through; residual adds merge spaces.
    UnionFind uf(n + 1);
    for (int i = 0; i < n; ++i) {
        const LayerSpec& ls = layers[static_cast<size_t>(i)].spec;
        const int src = spec.resolved_input(i);
        const int in_node = src == LayerSpec::kInput ? 0 : src + 1;
        if (ls.op == LayerOp::DwConv || ls.op == LayerOp::GlobalAvgPool) uf.unite(in_node, i + 1);
        if (ls.add_from != LayerSpec::kNone) uf.unite(i + 1, ls.add_from + 1);
    }

    // One assignment, and hence one permutation, per space.
    std::map<int, std::vector<int>> space_assign;
    for (int i = 0; i < n; ++i) {
        const RuntimeLayer& L = layers[static_cast<size_t>(i)];
        if (!L.is_mapped()) continue;
        const std::vector<int> asg = L.mapped->cu_of_channel();
        const int root = uf.find(i + 1);
        auto it = space_assign.find(root);
        if (it == space_assign.end()) {
            space_assign.emplace(root, asg);
        } else {
            check(it->second == asg, "E_EXPORT",
                  "layers sharing a channel space carry different assignments near layer '" +
                      L.spec.name + "'");
        }
    }

    std::map<int, std::vector<int>> space_perm;
    for (const auto& [root, asg] : space_assign) {
        std::vector<int> pi = identity_perm(static_cast<int>(asg.size()));
        std::stable_sort(pi.begin(), pi.end(), [&](int x, int y) {
            return asg[static_cast<size_t>(x)] < asg[static_cast<size_t>(y)];
        });
        space_perm.emplace(root, std::move(pi));
    }

    auto perm_of_node = [&](int node) -> const std::vector<int>* {
        auto it = space_perm.find(uf.find(node));
        return it == space_perm.end() || is_identity(it->second) ? nullptr : &it->second;
    };

    check(perm_of_node(0) == nullptr, "E_EXPORT", "cannot permute the network input space");
    check(perm_of_node(n) == nullptr, "E_EXPORT", "cannot permute the network output space");
    for (int i = 0; i < n; ++i)
        if (layers[static_cast<size_t>(i)].spec.op == LayerOp::DwConv)
            check(perm_of_node(i + 1) == nullptr, "E_EXPORT",
                  "channel reordering cannot cross depthwise layer '" +
                      layers[static_cast<size_t>(i)].spec.name +
                      "'; use a contiguous mapping for its channel space");

    std::set<const ThetaBank*> banks_done;
    ReorderResult res;
    for (int i = 0; i < n; ++i) {
        RuntimeLayer& L = layers[static_cast<size_t>(i)];
        const int src = spec.resolved_input(i);
        const std::vector<int>* out_pi = perm_of_node(i + 1);
        const std::vector<int>* in_pi =
            perm_of_node(src == LayerSpec::kInput ? 0 : src + 1);

        if (out_pi && (L.spec.op == LayerOp::Conv || L.spec.op == LayerOp::Linear)) {
            if (L.is_mapped()) {
                MappedConvLayer& m = *L.mapped;
                permute_dim0_inplace(m.weight, *out_pi);
                permute_dim0_inplace(m.bias, *out_pi);
                for (auto& br : m.branches) {
                    permute_dim0_inplace(br.weight, *out_pi);
                    if (br.ternary && br.ternary->frozen())
                        br.ternary->restore(permute_vec(br.ternary->frozen_cut(), *out_pi),
                                            permute_vec(br.ternary->frozen_scale(), *out_pi));
                    if (br.affine_q && br.affine_q->frozen())
                        br.affine_q->restore(permute_vec(br.affine_q->frozen_absmax(), *out_pi));
                }
                m.assign = permute_ints(m.assign, *out_pi);
                if (m.bank && m.bank->mode == ThetaMode::PerChannel &&
                    banks_done.insert(m.bank.get()).second)
                    permute_dim0_inplace(m.bank->logits, *out_pi);
            } else {
                permute_dim0_inplace(L.weight, *out_pi);
                permute_dim0_inplace(L.bias, *out_pi);
            }
            if (L.bn) {
                permute_dim0_inplace(L.bn->gamma, *out_pi);
                permute_dim0_inplace(L.bn->beta, *out_pi);
                L.bn->running_mean = permute_vec(L.bn->running_mean, *out_pi);
                L.bn->running_var = permute_vec(L.bn->running_var, *out_pi);
            }
        }

        if (in_pi && (L.spec.op == LayerOp::Conv || L.spec.op == LayerOp::Linear)) {
            if (L.is_mapped()) {
                MappedConvLayer& m = *L.mapped;
                permute_dim1_inplace(m.weight, *in_pi);
                for (auto& br : m.branches) permute_dim1_inplace(br.weight, *in_pi);
            } else {
                permute_dim1_inplace(L.weight, *in_pi);
            }
        }

        res.layers.push_back(L.spec.name);
        res.perms.push_back(out_pi ? *out_pi : identity_perm(L.geom.c_out));
    }
    return res;
}

namespace {

void put_float_tensor(TensorStore& blob, const std::string& key, const Tensor& t) {
    auto d = t.data();
    blob.put_floats(key, t.shape(), std::vector<float>(d.begin(), d.end()));
}

} // namespace

MappingArtifact split_sublayers(Network& net, CostTarget target) {
    NoGradGuard ng;
    MappingArtifact art;
    art.spec = net.spec();
    art.platform = net.platform();
    art.target = target;

    auto& layers = net.layers();
    for (size_t i = 0; i < layers.size(); ++i) {
        RuntimeLayer& L = layers[i];
        ArtifactLayer al;
        al.name = L.spec.name;
        al.op = L.spec.op;
        al.permutation = identity_perm(L.geom.c_out);
        const std::string base = "layer/" + L.spec.name;

        if (L.bn) {
            al.bn_prefix = base + "/bn";
            put_float_tensor(art.blob, al.bn_prefix + "/gamma", L.bn->gamma);
            put_float_tensor(art.blob, al.bn_prefix + "/beta", L.bn->beta);
            art.blob.put_floats(al.bn_prefix + "/mean", {L.bn->channels()}, L.bn->running_mean);
            art.blob.put_floats(al.bn_prefix + "/var", {L.bn->channels()}, L.bn->running_var);
        }

        if (!L.is_mapped()) {
            if (L.spec.op != LayerOp::GlobalAvgPool) {
                al.weight_key = base + "/w";
                put_float_tensor(art.blob, al.weight_key, L.weight);
                if (L.bias.defined()) {
                    al.bias_key = base + "/b";
                    put_float_tensor(art.blob, al.bias_key, L.bias);
                }
            }
            art.layers.push_back(std::move(al));
            continue;
        }

        MappedConvLayer& m = *L.mapped;
        check(m.discrete, "E_EXPORT",
              "layer '" + m.name + "' has no hard assignment; discretize or apply one first");
        al.mapped = true;
        al.assignment = m.cu_of_channel();
        al.split = m.split;
        if (m.bias.defined()) {
            al.bias_key = base + "/b";
            put_float_tensor(art.blob, al.bias_key, m.bias);
        }
        if (m.quantizes_input()) {
            check(m.act_quant.frozen(), "E_EXPORT",
                  "layer '" + m.name +
                      "' has unfrozen activation statistics; run a calibration pass and freeze "
                      "before export");
            al.act_absmax_key = base + "/act_absmax";
            art.blob.put_floats(al.act_absmax_key, {1}, {m.act_quant.absmax()});
        }

        // walk the runs of equal CUs; each run becomes one sub-layer
        const int C = L.geom.c_out;
        std::set<int> seen_cu;
        int lo = 0;
        int sub_idx = 0;
        while (lo < C) {
            int hi = lo;
            while (hi < C && al.assignment[static_cast<size_t>(hi)] ==
                                 al.assignment[static_cast<size_t>(lo)])
                ++hi;
            const int cu = al.assignment[static_cast<size_t>(lo)];
            check(seen_cu.insert(cu).second, "E_EXPORT",
                  "layer '" + m.name +
                      "' has a non-grouped assignment; run the reorder pass first");
            size_t bj = m.branches.size();
            for (size_t j = 0; j < m.branches.size(); ++j)
                if (m.branches[j].cu == cu) bj = j;
            check(bj < m.branches.size(), "E_INTERNAL", "assignment names a CU with no branch");
            MappedBranch& br = m.branches[bj];

            SubLayerDesc sub;
            sub.cu = art.platform.cu(cu).name;
            sub.lo = lo;
            sub.hi = hi;
            sub.op = br.op;
            sub.precision = br.precision;
            const std::string sbase = base + "/sub" + std::to_string(sub_idx);
            const Tensor& src_w = m.map_mode == MapMode::Precision ? m.weight : br.weight;
            const long long R = src_w.numel() / src_w.dim(0);

            switch (br.precision.kind) {
            case Precision::Kind::Float: {
                sub.weight_key = sbase + "/w";
                Tensor rows = slice_dim0(src_w, lo, hi);
                put_float_tensor(art.blob, sub.weight_key, rows);
                break;
            }
            case Precision::Kind::Ternary: {
                check(br.ternary && br.ternary->frozen(), "E_EXPORT",
                      "layer '" + m.name +
                          "' has unfrozen weight statistics; freeze quantizers before export");
                std::vector<signed char> q;
                std::vector<float> scale;
                br.ternary->codes(src_w, q, scale);
                sub.weight_key = sbase + "/codes";
                sub.scale_key = sbase + "/scale";
                std::vector<long long> qi;
                qi.reserve(static_cast<size_t>((hi - lo) * R));
                for (long long at = lo * R; at < hi * R; ++at)
                    qi.push_back(q[static_cast<size_t>(at)]);
                art.blob.put_ints(sub.weight_key, std::move(qi));
                art.blob.put_floats(sub.scale_key, {hi - lo},
                                    std::vector<float>(scale.begin() + lo, scale.begin() + hi));
                break;
            }
            case Precision::Kind::Affine: {
                check(br.affine_q && br.affine_q->frozen(), "E_EXPORT",
                      "layer '" + m.name +
                          "' has unfrozen weight statistics; freeze quantizers before export");
                std::vector<int> q;
                std::vector<float> scale;
                br.affine_q->codes(src_w, q, scale);
                const std::vector<float>& absmax = br.affine_q->frozen_absmax();
                sub.weight_key = sbase + "/codes";
                sub.scale_key = sbase + "/scale";
                sub.absmax_key = sbase + "/absmax";
                std::vector<long long> qi;
                qi.reserve(static_cast<size_t>((hi - lo) * R));
                for (long long at = lo * R; at < hi * R; ++at)
                    qi.push_back(q[static_cast<size_t>(at)]);
                art.blob.put_ints(sub.weight_key, std::move(qi));
                art.blob.put_floats(sub.scale_key, {hi - lo},
                                    std::vector<float>(scale.begin() + lo, scale.begin() + hi));
                art.blob.put_floats(sub.absmax_key, {hi - lo},
                                    std::vector<float>(absmax.begin() + lo, absmax.begin() + hi));
                break;
            }
            }
            al.subs.push_back(std::move(sub));
            ++sub_idx;
            lo = hi;
        }
        art.layers.push_back(std::move(al));
    }

    art.cost = net.exact_cost();
    return art;
}

MappingArtifact export_mapping(Network& net, CostTarget target) {
    for (const auto& L : net.layers())
        if (L.is_mapped())
            check(L.mapped->discrete, "E_EXPORT",
                  "layer '" + L.spec.name +
                      "' has no hard assignment; discretize or apply one first");
    const ReorderResult order = reorder_channels(net, net.assignment());
    MappingArtifact art = split_sublayers(net, target);
    for (size_t i = 0; i < art.layers.size(); ++i)
        art.layers[i].permutation = order.perms[i];
    art.probe_seed = 0x9e3779b9ull;
    art.probe_count = 4;
    art.probe_checksum = probe_checksum(art);
    return art;
}

namespace {

Tensor probe_inputs(const MappingArtifact& art) {
    check(art.probe_count >= 1, "E_VERIFY", "artifact records no probe batch");
    Rng rng(art.probe_seed);
    return Tensor::rand_normal(
        {art.probe_count, art.spec.in_channels, art.spec.in_h, art.spec.in_w}, rng, 0.0f, 1.0f);
}

// Frozen per-tensor symmetric fake-quant, matching the activation quantizer.
Tensor act_fake_quant(const Tensor& x, float absmax, int bits) {
    const int qmax = (1 << (bits - 1)) - 1;
    const float s = absmax / static_cast<float>(qmax);
    Tensor out = Tensor::zeros(x.shape());
    auto xd = x.data();
    auto od = out.data();
    for (size_t i = 0; i < od.size(); ++i) {
        const int q = qmath::affine_code(xd[i], s, qmax);
        od[i] = qmath::affine_dequant(q, s, absmax, qmax);
    }
    return out;
}

Tensor blob_tensor(const MappingArtifact& art, const std::string& key) {
    check(art.blob.has(key), "E_VERIFY", "artifact blob is missing tensor '" + key + "'");
    return Tensor::from_data(art.blob.shape(key), art.blob.floats(key));
}

const std::vector<long long>& blob_codes(const MappingArtifact& art, const std::string& key) {
    check(art.blob.has(key), "E_VERIFY", "artifact blob is missing tensor '" + key + "'");
    return art.blob.ints(key);
}

Tensor materialize_sub(const MappingArtifact& art, const SubLayerDesc& sub,
                       const LayerGeometry& g) {
    const int rows = sub.hi - sub.lo;
    const std::vector<int> shape =
        sub.op == LayerOp::DwConv ? std::vector<int>{rows, 1, g.kernel, g.kernel}
                                  : std::vector<int>{rows, g.c_in, g.kernel, g.kernel};
    long long numel = 1;
    for (int d : shape) numel *= d;
    const long long R = rows > 0 ? numel / rows : 0;

    switch (sub.precision.kind) {
    case Precision::Kind::Float: {
        Tensor w = blob_tensor(art, sub.weight_key);
        check(w.numel() == numel, "E_VERIFY", "payload size mismatch for '" + sub.weight_key + "'");
        return w;
    }
    case Precision::Kind::Ternary: {
        const auto& q = blob_codes(art, sub.weight_key);
        Tensor st = blob_tensor(art, sub.scale_key);
        check(static_cast<long long>(q.size()) == numel && st.numel() == rows, "E_VERIFY",
              "payload size mismatch for '" + sub.weight_key + "'");
        auto sd = st.data();
        std::vector<float> data(static_cast<size_t>(numel));
        for (int o = 0; o < rows; ++o)
            for (long long k = 0; k < R; ++k) {
                const long long c = q[static_cast<size_t>(o * R + k)];
                data[static_cast<size_t>(o * R + k)] =
                    c == 0 ? 0.0f : (c > 0 ? sd[static_cast<size_t>(o)] : -sd[static_cast<size_t>(o)]);
            }
        return Tensor::from_data(shape, std::move(data));
    }
    case Precision::Kind::Affine: {
        const auto& q = blob_codes(art, sub.weight_key);
        Tensor st = blob_tensor(art, sub.scale_key);
        Tensor mt = blob_tensor(art, sub.absmax_key);
        check(static_cast<long long>(q.size()) == numel && st.numel() == rows && mt.numel() == rows,
              "E_VERIFY", "payload size mismatch for '" + sub.weight_key + "'");
        const int qmax = (1 << (sub.precision.bits - 1)) - 1;
        auto sd = st.data();
        auto md = mt.data();
        std::vector<float> data(static_cast<size_t>(numel));
        for (int o = 0; o < rows; ++o)
            for (long long k = 0; k < R; ++k)
                data[static_cast<size_t>(o * R + k)] =
                    qmath::affine_dequant(static_cast<int>(q[static_cast<size_t>(o * R + k)]),
                                          sd[static_cast<size_t>(o)], md[static_cast<size_t>(o)],
                                          qmax);
        return Tensor::from_data(shape, std::move(data));
    }
    }
    fail("E_INTERNAL", "unhandled precision kind");
}

Tensor replay_mapped(const MappingArtifact& art, const ArtifactLayer& al, const LayerGeometry& g,
                     const Tensor& in) {
    check(!al.subs.empty(), "E_VERIFY", "mapped layer '" + al.name + "' has no sub-layers");
    Tensor xin = in;
    if (!al.act_absmax_key.empty())
        xin = act_fake_quant(in, blob_tensor(art, al.act_absmax_key).data()[0], 8);
    Tensor bias;
    if (!al.bias_key.empty()) bias = blob_tensor(art, al.bias_key);

    std::vector<Tensor> parts;
    for (const auto& sub : al.subs) {
        const int rows = sub.hi - sub.lo;
        Tensor w = materialize_sub(art, sub, g);
        Tensor b;
        if (bias.defined()) b = slice_dim0(bias, sub.lo, sub.hi);
        if (sub.op == LayerOp::DwConv) {
            Tensor xp = slice_channels(in, sub.lo, sub.hi);
            parts.push_back(conv2d(xp, w, b, g.stride, g.pad, rows));
        } else {
            parts.push_back(conv2d(xin, w, b, g.stride, g.pad, 1));
        }
    }
    return parts.size() == 1 ? parts[0] : concat_channels(parts);
}

} // namespace

Tensor replay_forward(const MappingArtifact& art, const Tensor& x, std::vector<Tensor>* taps) {
    NoGradGuard ng;
    const NetworkSpec& spec = art.spec;
    check(x.defined() && x.ndim() == 4 && x.dim(1) == spec.in_channels && x.dim(2) == spec.in_h &&
              x.dim(3) == spec.in_w,
          "E_VERIFY", "replay input does not match the artifact's input shape");
    check(art.layers.size() == spec.layers.size(), "E_VERIFY",
          "artifact layer list does not match its network description");
    const std::vector<LayerGeometry> geoms = spec.geometries();

    std::vector<Tensor> outs(spec.layers.size());
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const ArtifactLayer& al = art.layers[i];
        const LayerSpec& ls = spec.layers[i];
        check(al.name == ls.name, "E_VERIFY", "artifact layer order does not match its network");
        const int src = spec.resolved_input(static_cast<int>(i));
        const Tensor& in = src == LayerSpec::kInput ? x : outs[static_cast<size_t>(src)];
        const LayerGeometry& g = geoms[i];

        Tensor y;
        switch (ls.op) {
        case LayerOp::GlobalAvgPool:
            y = global_avgpool(in);
            break;
        case LayerOp::Linear: {
            Tensor w = blob_tensor(art, al.weight_key);
            Tensor b = al.bias_key.empty() ? Tensor() : blob_tensor(art, al.bias_key);
            y = linear(in, w, b);
            break;
        }
        case LayerOp::Conv:
        case LayerOp::DwConv:
            if (al.mapped) {
                y = replay_mapped(art, al, g, in);
            } else {
                Tensor w = blob_tensor(art, al.weight_key);
                Tensor b = al.bias_key.empty() ? Tensor() : blob_tensor(art, al.bias_key);
                const int groups = ls.op == LayerOp::DwConv ? g.c_in : 1;
                y = conv2d(in, w, b, g.stride, g.pad, groups);
            }
            break;
        }
        if (!al.bn_prefix.empty()) {
            BatchNorm2d bn;
            bn.gamma = blob_tensor(art, al.bn_prefix + "/gamma");
            bn.beta = blob_tensor(art, al.bn_prefix + "/beta");
            check(art.blob.has(al.bn_prefix + "/mean") && art.blob.has(al.bn_prefix + "/var"),
                  "E_VERIFY", "artifact blob is missing tensor '" + al.bn_prefix + "/mean'");
            bn.running_mean = art.blob.floats(al.bn_prefix + "/mean");
            bn.running_var = art.blob.floats(al.bn_prefix + "/var");
            y = bn.forward(y, false);
        }
        if (ls.add_from != LayerSpec::kNone) y = add(y, outs[static_cast<size_t>(ls.add_from)]);
        if (ls.act_relu) y = relu(y);
        outs[i] = std::move(y);
    }
    if (taps) *taps = outs;
    return outs.back();
}

std::string probe_checksum(const MappingArtifact& art) {
    Tensor y = replay_forward(art, probe_inputs(art));
    auto d = y.data();
    return hex64(fnv1a64(d.data(), d.size() * sizeof(float)));
}

namespace {

void verify_structure(const MappingArtifact& art) {
    check(art.layers.size() == art.spec.layers.size(), "E_VERIFY",
          "artifact layer list does not match its network description");
    const std::vector<LayerGeometry> geoms = art.spec.geometries();
    for (size_t i = 0; i < art.layers.size(); ++i) {
        const ArtifactLayer& al = art.layers[i];
        const int C = geoms[i].c_out;
        check(static_cast<int>(al.permutation.size()) == C, "E_VERIFY",
              "layer '" + al.name + "' records a permutation of the wrong size");
        std::vector<char> hit(static_cast<size_t>(C), 0);
        for (int p : al.permutation) {
            check(p >= 0 && p < C && !hit[static_cast<size_t>(p)], "E_VERIFY",
                  "layer '" + al.name + "' records an invalid permutation");
            hit[static_cast<size_t>(p)] = 1;
        }
        if (!al.mapped) {
            if (al.op != LayerOp::GlobalAvgPool)
                check(art.blob.has(al.weight_key), "E_VERIFY",
                      "artifact blob is missing tensor '" + al.weight_key + "'");
            continue;
        }
        check(static_cast<int>(al.assignment.size()) == C, "E_VERIFY",
              "layer '" + al.name + "' records an assignment of the wrong size");
        check(!al.subs.empty(), "E_VERIFY", "mapped layer '" + al.name + "' has no sub-layers");
        int expect = 0;
        for (const auto& sub : al.subs) {
            check(sub.lo == expect && sub.hi > sub.lo, "E_VERIFY",
                  "sub-layer ranges of '" + al.name + "' overlap or leave a gap");
            expect = sub.hi;
            const int cu = art.platform.cu_index(sub.cu);
            const CUProfile& prof = art.platform.cu(cu);
            check(cu_supports(prof, sub.op), "E_VERIFY",
                  "sub-layer of '" + al.name + "' runs an operator its CU does not support");
            check(prof.precision == sub.precision, "E_VERIFY",
                  "sub-layer of '" + al.name + "' carries a precision its CU does not execute");
            for (int c = sub.lo; c < sub.hi; ++c)
                check(al.assignment[static_cast<size_t>(c)] == cu, "E_VERIFY",
                      "sub-layer ranges of '" + al.name + "' disagree with its assignment");
            check(art.blob.has(sub.weight_key), "E_VERIFY",
                  "artifact blob is missing tensor '" + sub.weight_key + "'");
            if (!sub.scale_key.empty())
                check(art.blob.has(sub.scale_key), "E_VERIFY",
                      "artifact blob is missing tensor '" + sub.scale_key + "'");
            if (!sub.absmax_key.empty())
                check(art.blob.has(sub.absmax_key), "E_VERIFY",
                      "artifact blob is missing tensor '" + sub.absmax_key + "'");
        }
        check(expect == C, "E_VERIFY", "sub-layer ranges of '" + al.name + "' do not cover every channel");
    }
}

// Max elementwise deviation; when a non-identity permutation is recorded the
// channel-permuted alignment is tried too and the smaller deviation wins, so
// pre-reorder and post-reorder references both compare cleanly.
double tap_deviation(const Tensor& a, const Tensor& b, const std::vector<int>& pi) {
    if (!a.defined() || !b.defined() || a.shape() != b.shape())
        return std::numeric_limits<double>::infinity();
    auto ad = a.data();
    auto bd = b.data();
    double d_id = 0.0;
    for (size_t i = 0; i < ad.size(); ++i)
        d_id = std::max(d_id, static_cast<double>(std::fabs(ad[i] - bd[i])));
    if (is_identity(pi)) return d_id;

    const int C = static_cast<int>(pi.size());
    if (a.ndim() < 2 || a.dim(1) != C) return d_id;
    const int N = a.dim(0);
    const long long R = a.numel() / (static_cast<long long>(N) * C);
    double d_pi = 0.0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* pa = ad.data() + (static_cast<long long>(n) * C + c) * R;
            const float* pb =
                bd.data() + (static_cast<long long>(n) * C + pi[static_cast<size_t>(c)]) * R;
            for (long long k = 0; k < R; ++k)
                d_pi = std::max(d_pi, static_cast<double>(std::fabs(pa[k] - pb[k])));
        }
    return std::min(d_id, d_pi);
}

} // namespace

VerifyReport verify_artifact(const MappingArtifact& art, Network& reference, const Tensor& inputs,
                             double tol) {
    verify_structure(art);
    VerifyReport rep;

    std::vector<Tensor> rtaps;
    Tensor ry = replay_forward(art, inputs, &rtaps);

    NoGradGuard ng;
    PassConfig pc;
    pc.mode = PassConfig::Mode::Discrete;
    pc.training = false;
    std::vector<Tensor> ftaps;
    Tensor fy = reference.forward(inputs, pc, &ftaps);

    check(rtaps.size() == ftaps.size(), "E_VERIFY",
          "reference network does not match the artifact's layer count");
    for (size_t i = 0; i < rtaps.size(); ++i) {
        const double d = tap_deviation(rtaps[i], ftaps[i], art.layers[i].permutation);
        rep.layer_devs.emplace_back(art.layers[i].name, d);
        if (d > tol && rep.first_bad_layer.empty()) rep.first_bad_layer = art.layers[i].name;
    }
    rep.max_abs_dev = tap_deviation(ry, fy, identity_perm(ry.dim(1)));
    rep.checksum_ok = probe_checksum(art) == art.probe_checksum;
    rep.pass = rep.max_abs_dev <= tol && rep.checksum_ok;
    return rep;
}

VerifyReport verify_artifact_self(const MappingArtifact& art) {
    verify_structure(art);
    VerifyReport rep;
    rep.checksum_ok = probe_checksum(art) == art.probe_checksum;
    rep.max_abs_dev = 0.0;
    rep.pass = rep.checksum_ok;
    return rep;
}

namespace {

std::string dirname_of(const std::string& path) {
    const size_t slash = path.find_last_of('/');
    return slash == std::string::npos ? std::string() : path.substr(0, slash);
}

std::string basename_of(const std::string& path) {
    const size_t slash = path.find_last_of('/');
    return slash == std::string::npos ? path : path.substr(slash + 1);
}

void append_block(std::ostringstream& os, const std::string& tag, const std::string& body) {
    os << "begin_" << tag << "\n" << body;
    if (body.empty() || body.back() != '\n') os << "\n";
    os << "end_" << tag << "\n";
}

std::string precision_token(const Precision& p) { return p.describe(); }

} // namespace

void save_artifact(const MappingArtifact& art, const std::string& text_path,
                   const std::string& blob_path) {
    std::ostringstream os;
    os << "format_version " << art.format_version << "\n";
    os << "artifact mapping\n";
    os << "target " << cost_target_name(art.target) << "\n";
    os << "probe_seed " << art.probe_seed << "\n";
    os << "probe_count " << art.probe_count << "\n";
    os << "probe_checksum " << art.probe_checksum << "\n";
    os << "blob " << basename_of(blob_path) << "\n";
    append_block(os, "netspec", serialize_network_spec(art.spec));
    append_block(os, "platform", serialize_platform(art.platform));

    os << "begin_cost\n";
    os << "total_cycles " << format_double(art.cost.total_cycles) << "\n";
    os << "latency_seconds " << format_double(art.cost.latency_seconds) << "\n";
    os << "active_mw_cycles " << format_double(art.cost.active_mw_cycles) << "\n";
    os << "idle_mw_cycles " << format_double(art.cost.idle_mw_cycles) << "\n";
    os << "energy_mw_cycles " << format_double(art.cost.energy_mw_cycles) << "\n";
    os << "energy_uj " << format_double(art.cost.energy_uj) << "\n";
    for (const auto& row : art.cost.layers) {
        os << "layer " << row.layer << " " << format_double(row.makespan);
        for (double c : row.cu_cycles) os << " " << format_double(c);
        os << "\n";
    }
    os << "end_cost\n";

    for (const auto& al : art.layers) {
        os << "begin_layer " << al.name << "\n";
        os << "op " << layer_op_name(al.op) << "\n";
        os << "mapped " << (al.mapped ? 1 : 0) << "\n";
        os << "permutation";
        for (int p : al.permutation) os << " " << p;
        os << "\n";
        if (al.mapped) {
            os << "assignment";
            for (int c : al.assignment) os << " " << c;
            os << "\n";
            os << "split " << al.split << "\n";
        }
        if (!al.weight_key.empty()) os << "weight " << al.weight_key << "\n";
        if (!al.bias_key.empty()) os << "bias " << al.bias_key << "\n";
        if (!al.bn_prefix.empty()) os << "bn " << al.bn_prefix << "\n";
        if (!al.act_absmax_key.empty()) os << "act_absmax " << al.act_absmax_key << "\n";
        for (const auto& sub : al.subs) {
            os << "sub " << sub.cu << " " << sub.lo << " " << sub.hi << " "
               << layer_op_name(sub.op) << " " << precision_token(sub.precision) << " "
               << sub.weight_key << " " << (sub.scale_key.empty() ? "-" : sub.scale_key) << " "
               << (sub.absmax_key.empty() ? "-" : sub.absmax_key) << "\n";
        }
        os << "end_layer\n";
    }

    write_text_file(text_path, os.str());
    art.blob.save(blob_path);
}

namespace {

std::vector<std::string> tokenize(const std::string& line) {
    std::istringstream is(line);
    std::vector<std::string> toks;
    std::string t;
    while (is >> t) toks.push_back(t);
    return toks;
}

[[noreturn]] void bad_line(size_t ln, const std::string& msg) {
    fail("E_VERIFY", "artifact line " + std::to_string(ln + 1) + ": " + msg);
}

double to_double(const std::string& t, size_t ln) {
    try {
        size_t used = 0;
        const double v = std::stod(t, &used);
        if (used != t.size()) bad_line(ln, "malformed number '" + t + "'");
        return v;
    } catch (const Error&) {
        throw;
    } catch (const std::exception&) {
        bad_line(ln, "malformed number '" + t + "'");
    }
}

long long to_ll(const std::string& t, size_t ln) {
    try {
        size_t used = 0;
        const long long v = std::stoll(t, &used);
        if (used != t.size()) bad_line(ln, "malformed integer '" + t + "'");
        return v;
    } catch (const Error&) {
        throw;
    } catch (const std::exception&) {
        bad_line(ln, "malformed integer '" + t + "'");
    }
}

} // namespace

MappingArtifact load_artifact(const std::string& text_path) {
    const std::string text = read_text_file(text_path);
    std::vector<std::string> lines;
    {
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) lines.push_back(line);
    }

    MappingArtifact art;
    std::string netspec_text, platform_text;
    bool saw_version = false;

    auto collect_block = [&](size_t& i, const std::string& tag) {
        const std::string sentinel = "end_" + tag;
        std::string body;
        ++i;
        while (i < lines.size() && lines[i] != sentinel) {
            body += lines[i];
            body += "\n";
            ++i;
        }
        if (i >= lines.size()) bad_line(lines.size() - 1, "unterminated " + tag + " block");
        return body;
    };

    size_t i = 0;
    while (i < lines.size()) {
        const std::vector<std::string> toks = tokenize(lines[i]);
        if (toks.empty()) {
            ++i;
            continue;
        }
        const std::string& key = toks[0];
        if (key == "format_version") {
            if (toks.size() != 2 || to_ll(toks[1], i) != 1)
                bad_line(i, "unsupported artifact format version");
            saw_version = true;
        } else if (key == "artifact") {
            if (toks.size() != 2 || toks[1] != "mapping") bad_line(i, "not a mapping artifact");
        } else if (key == "target") {
            if (toks.size() != 2) bad_line(i, "target takes one value");
            art.target = parse_cost_target(toks[1]);
        } else if (key == "probe_seed") {
            if (toks.size() != 2) bad_line(i, "probe_seed takes one value");
            art.probe_seed = static_cast<unsigned long long>(to_ll(toks[1], i));
        } else if (key == "probe_count") {
            if (toks.size() != 2) bad_line(i, "probe_count takes one value");
            art.probe_count = static_cast<int>(to_ll(toks[1], i));
        } else if (key == "probe_checksum") {
            if (toks.size() != 2) bad_line(i, "probe_checksum takes one value");
            art.probe_checksum = toks[1];
        } else if (key == "blob") {
            if (toks.size() != 2) bad_line(i, "blob takes one file name");
            art.blob_file = toks[1];
        } else if (key == "begin_netspec") {
            netspec_text = collect_block(i, "netspec");
        } else if (key == "begin_platform") {
            platform_text = collect_block(i, "platform");
        } else if (key == "begin_cost") {
            ++i;
            while (i < lines.size() && lines[i] != "end_cost") {
                const std::vector<std::string> ct = tokenize(lines[i]);
                if (ct.empty()) {
                    ++i;
                    continue;
                }
                if (ct[0] == "total_cycles") art.cost.total_cycles = to_double(ct.at(1), i);
                else if (ct[0] == "latency_seconds") art.cost.latency_seconds = to_double(ct.at(1), i);
                else if (ct[0] == "active_mw_cycles") art.cost.active_mw_cycles = to_double(ct.at(1), i);
                else if (ct[0] == "idle_mw_cycles") art.cost.idle_mw_cycles = to_double(ct.at(1), i);
                else if (ct[0] == "energy_mw_cycles") art.cost.energy_mw_cycles = to_double(ct.at(1), i);
                else if (ct[0] == "energy_uj") art.cost.energy_uj = to_double(ct.at(1), i);
                else if (ct[0] == "layer") {
                    if (ct.size() < 3) bad_line(i, "cost layer row needs a name and a makespan");
                    LayerCostRow row;
                    row.layer = ct[1];
                    row.makespan = to_double(ct[2], i);
                    for (size_t k = 3; k < ct.size(); ++k)
                        row.cu_cycles.push_back(to_double(ct[k], i));
                    art.cost.layers.push_back(std::move(row));
                } else {
                    bad_line(i, "unrecognized cost key '" + ct[0] + "'");
                }
                ++i;
            }
            if (i >= lines.size()) bad_line(lines.size() - 1, "unterminated cost block");
        } else if (key == "begin_layer") {
            if (toks.size() != 2) bad_line(i, "begin_layer takes one name");
            ArtifactLayer al;
            al.name = toks[1];
            ++i;
            while (i < lines.size() && lines[i] != "end_layer") {
                const std::vector<std::string> lt = tokenize(lines[i]);
                if (lt.empty()) {
                    ++i;
                    continue;
                }
                if (lt[0] == "op") al.op = parse_layer_op(lt.at(1));
                else if (lt[0] == "mapped") al.mapped = to_ll(lt.at(1), i) != 0;
                else if (lt[0] == "permutation") {
                    for (size_t k = 1; k < lt.size(); ++k)
                        al.permutation.push_back(static_cast<int>(to_ll(lt[k], i)));
                } else if (lt[0] == "assignment") {
                    for (size_t k = 1; k < lt.size(); ++k)
                        al.assignment.push_back(static_cast<int>(to_ll(lt[k], i)));
                } else if (lt[0] == "split") al.split = static_cast<int>(to_ll(lt.at(1), i));
                else if (lt[0] == "weight") al.weight_key = lt.at(1);
                else if (lt[0] == "bias") al.bias_key = lt.at(1);
                else if (lt[0] == "bn") al.bn_prefix = lt.at(1);
                else if (lt[0] == "act_absmax") al.act_absmax_key = lt.at(1);
                else if (lt[0] == "sub") {
                    if (lt.size() != 9) bad_line(i, "sub rows take 8 fields");
                    SubLayerDesc sub;
                    sub.cu = lt[1];
                    sub.lo = static_cast<int>(to_ll(lt[2], i));
                    sub.hi = static_cast<int>(to_ll(lt[3], i));
                    sub.op = parse_layer_op(lt[4]);
                    sub.precision = parse_precision(lt[5]);
                    sub.weight_key = lt[6];
                    if (lt[7] != "-") sub.scale_key = lt[7];
                    if (lt[8] != "-") sub.absmax_key = lt[8];
                    al.subs.push_back(std::move(sub));
                } else {
                    bad_line(i, "unrecognized layer key '" + lt[0] + "'");
                }
                ++i;
            }
            if (i >= lines.size()) bad_line(lines.size() - 1, "unterminated layer block");
            art.layers.push_back(std::move(al));
        } else {
            bad_line(i, "unrecognized key '" + key + "'");
        }
        ++i;
    }

    if (!saw_version) fail("E_VERIFY", "artifact has no format_version");
    check(!netspec_text.empty() && !platform_text.empty(), "E_VERIFY",
          "artifact is missing its embedded network or platform description");
    art.spec = parse_network_spec(netspec_text);
    art.platform = parse_platform(platform_text);
    check(!art.blob_file.empty(), "E_VERIFY", "artifact does not name its tensor sidecar");
    const std::string dir = dirname_of(text_path);
    art.blob = TensorStore::load(dir.empty() ? art.blob_file : dir + "/" + art.blob_file);
    return art;
}

} // namespace chanmap
