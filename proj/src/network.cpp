#include <algorithm>
#include <cmath>
#include <numeric>

#include "chanmap/network.hpp"

namespace chanmap {

std::string phase_name(Phase p) {
    switch (p) {
    case Phase::Warmup: return "warmup";
    case Phase::Search: return "search";
    case Phase::Final: return "final";
    }
    return "?";
}

Phase parse_phase(const std::string& name) {
    if (name == "warmup") return Phase::Warmup;
    if (name == "search") return Phase::Search;
    if (name == "final") return Phase::Final;
    fail("E_FLAGS", "unknown phase '" + name + "'");
}

namespace {

Tensor he_normal(std::vector<int> shape, long long fan_in, Rng& rng) {
    const float stddev = std::sqrt(2.0f / static_cast<float>(fan_in));
    return Tensor::rand_normal(std::move(shape), rng, 0.0f, stddev, true);
}

void attach_quantizer(MappedBranch& br) {
    if (br.precision.kind == Precision::Kind::Ternary)
        br.ternary = std::make_unique<TernaryQuantizer>();
    else if (br.precision.kind == Precision::Kind::Affine)
        br.affine_q = std::make_unique<AffineQuantizer>(br.precision.bits);
}

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int a) {
        while (parent[static_cast<size_t>(a)] != a) {
            parent[static_cast<size_t>(a)] = parent[static_cast<size_t>(parent[static_cast<size_t>(a)])];
            a = parent[static_cast<size_t>(a)];
        }
        return a;
    }
    void unite(int a, int b) { parent[static_cast<size_t>(find(a))] = find(b); }
};

bool same_branch_layout(const MappedConvLayer& a, const MappedConvLayer& b) {
    if (a.map_mode != b.map_mode || a.branches.size() != b.branches.size()) return false;
    for (size_t j = 0; j < a.branches.size(); ++j) {
        const auto& x = a.branches[j];
        const auto& y = b.branches[j];
        if (x.cu != y.cu || x.op != y.op || !(x.precision == y.precision)) return false;
    }
    return true;
}

} // namespace

Network::Network(const NetworkSpec& spec, const PlatformProfile& platform,
                 unsigned long long seed)
    : spec_(spec), platform_(platform) {
    spec_.validate();
    platform_.validate();
    geoms_ = spec_.geometries();
    build_layers(seed);
    tie_banks();
}

void Network::build_layers(unsigned long long seed) {
    Rng rng(seed);
    for (size_t i = 0; i < spec_.layers.size(); ++i) {
        const LayerSpec& ls = spec_.layers[i];
        const LayerGeometry& g = geoms_[i];
        RuntimeLayer L;
        L.spec = ls;
        L.geom = g;
        const bool mappable = ls.map != MapMode::None;
        const bool costed = ls.op != LayerOp::GlobalAvgPool;
        if (costed && !mappable) {
            L.default_cu = platform_.default_cu_index();
            const CUProfile& cu = platform_.cu(L.default_cu);
            check(cu_supports(cu, ls.op), "E_PLATFORM",
                  "layer '" + ls.name + "': default CU '" + cu.name + "' does not run " +
                      layer_op_name(ls.op) + " layers");
            check(cu_fits(cu, g, ls.op), "E_PLATFORM",
                  "layer '" + ls.name + "' exceeds the input capacity of CU '" + cu.name + "'");
        }
        switch (ls.op) {
        case LayerOp::Conv:
            L.weight = he_normal({g.c_out, g.c_in, g.kernel, g.kernel},
                                 static_cast<long long>(g.c_in) * g.kernel * g.kernel, rng);
            break;
        case LayerOp::DwConv:
            L.weight = he_normal({g.c_out, 1, g.kernel, g.kernel},
                                 static_cast<long long>(g.kernel) * g.kernel, rng);
            break;
        case LayerOp::Linear:
            L.weight = he_normal({g.c_out, g.c_in}, g.c_in, rng);
            L.bias = Tensor::zeros({g.c_out}, true);
            break;
        case LayerOp::GlobalAvgPool: break;
        }
        if (ls.bn) {
            check(ls.op == LayerOp::Conv || ls.op == LayerOp::DwConv, "E_NET_SPEC",
                  "layer '" + ls.name + "': batch norm only follows convolutions");
            L.bn = BatchNorm2d::make(g.c_out);
        } else if (ls.op == LayerOp::Conv || ls.op == LayerOp::DwConv) {
            L.bias = Tensor::zeros({g.c_out}, true);
        }
        if (mappable) {
            auto mapped = std::make_unique<MappedConvLayer>(ls.name, g, ls.map);
            if (ls.map == MapMode::Precision) {
                for (size_t j = 0; j < platform_.cus.size(); ++j) {
                    const CUProfile& cu = platform_.cus[j];
                    if (!cu_supports(cu, LayerOp::Conv) || !cu_fits(cu, g, LayerOp::Conv))
                        continue;
                    MappedBranch br;
                    br.cu = static_cast<int>(j);
                    br.op = LayerOp::Conv;
                    br.precision = cu.precision;
                    attach_quantizer(br);
                    mapped->branches.push_back(std::move(br));
                }
                check(mapped->branches.size() >= 2, "E_PLATFORM",
                      "layer '" + ls.name + "': fewer than two CUs can run it");
                bool distinct = false;
                for (const auto& br : mapped->branches)
                    if (!(br.precision == mapped->branches[0].precision)) distinct = true;
                check(distinct, "E_PLATFORM",
                      "layer '" + ls.name +
                          "': precision mapping needs CUs with two distinct weight precisions");
                mapped->weight = L.weight;
                L.weight = Tensor();
            } else {
                int dw_cu = -1;
                for (size_t j = 0; j < platform_.cus.size(); ++j)
                    if (platform_.cus[j].op == OpSupport::DwConv) {
                        dw_cu = static_cast<int>(j);
                        break;
                    }
                if (dw_cu < 0)
                    for (size_t j = 0; j < platform_.cus.size(); ++j)
                        if (cu_supports(platform_.cus[j], LayerOp::DwConv)) {
                            dw_cu = static_cast<int>(j);
                            break;
                        }
                int std_cu = -1;
                for (size_t j = 0; j < platform_.cus.size(); ++j)
                    if (static_cast<int>(j) != dw_cu &&
                        cu_supports(platform_.cus[j], LayerOp::Conv)) {
                        std_cu = static_cast<int>(j);
                        break;
                    }
                check(dw_cu >= 0 && std_cu >= 0, "E_PLATFORM",
                      "layer '" + ls.name +
                          "': operator mapping needs a depthwise CU and a standard CU");
                check(cu_fits(platform_.cu(dw_cu), g, LayerOp::DwConv) &&
                          cu_fits(platform_.cu(std_cu), g, LayerOp::Conv),
                      "E_PLATFORM",
                      "layer '" + ls.name + "' exceeds the input capacity of a mapped CU");
                MappedBranch dw;
                dw.cu = dw_cu;
                dw.op = LayerOp::DwConv;
                dw.precision = platform_.cu(dw_cu).precision;
                dw.weight = L.weight;
                attach_quantizer(dw);
                MappedBranch st;
                st.cu = std_cu;
                st.op = LayerOp::Conv;
                st.precision = platform_.cu(std_cu).precision;
                st.weight = he_normal({g.c_out, g.c_in, g.kernel, g.kernel},
                                      static_cast<long long>(g.c_in) * g.kernel * g.kernel, rng);
                attach_quantizer(st);
                if (dw_cu < std_cu) {
                    mapped->branches.push_back(std::move(dw));
                    mapped->branches.push_back(std::move(st));
                } else {
                    mapped->branches.push_back(std::move(st));
                    mapped->branches.push_back(std::move(dw));
                }
                L.weight = Tensor(); // branches own the filters
            }
            mapped->bias = L.bias;
            L.bias = Tensor();
            L.mapped = std::move(mapped);
        }
        layers_.push_back(std::move(L));
    }
}

void Network::tie_banks() {
    UnionFind uf(layers_.size());
    for (size_t i = 0; i < layers_.size(); ++i)
        if (layers_[i].spec.add_from != LayerSpec::kNone)
            uf.unite(static_cast<int>(i), layers_[i].spec.add_from);
    std::vector<std::shared_ptr<ThetaBank>> bank_of(layers_.size());
    std::vector<int> first_mapped(layers_.size(), -1);
    for (size_t i = 0; i < layers_.size(); ++i) {
        if (!layers_[i].is_mapped()) continue;
        MappedConvLayer& m = *layers_[i].mapped;
        const int root = uf.find(static_cast<int>(i));
        if (!bank_of[static_cast<size_t>(root)]) {
            bank_of[static_cast<size_t>(root)] =
                m.map_mode == MapMode::Precision
                    ? ThetaBank::make_per_channel(m.geom.c_out,
                                                  static_cast<int>(m.branches.size()))
                    : ThetaBank::make_contiguous(m.geom.c_out);
            first_mapped[static_cast<size_t>(root)] = static_cast<int>(i);
        } else {
            const MappedConvLayer& peer =
                *layers_[static_cast<size_t>(first_mapped[static_cast<size_t>(root)])].mapped;
            check(same_branch_layout(m, peer), "E_PLATFORM",
                  "layers '" + peer.name + "' and '" + m.name +
                      "' share a residual join but split across different branches");
        }
        m.bank = bank_of[static_cast<size_t>(root)];
    }
}

RuntimeLayer& Network::layer(const std::string& name) {
    for (auto& L : layers_)
        if (L.spec.name == name) return L;
    fail("E_INTERNAL", "no layer named '" + name + "'");
}

Tensor Network::forward(const Tensor& x, const PassConfig& cfg, std::vector<Tensor>* taps) {
    check(x.defined() && x.ndim() == 4, "E_INTERNAL", "network input must be [N,C,H,W]");
    check(x.dim(1) == spec_.in_channels && x.dim(2) == spec_.in_h && x.dim(3) == spec_.in_w,
          "E_INTERNAL", "network input shape does not match the spec");
    std::vector<Tensor> outs(layers_.size());
    for (size_t i = 0; i < layers_.size(); ++i) {
        RuntimeLayer& L = layers_[i];
        const int src = spec_.resolved_input(static_cast<int>(i));
        const Tensor& in = src == LayerSpec::kInput ? x : outs[static_cast<size_t>(src)];
        Tensor y;
        switch (L.spec.op) {
        case LayerOp::GlobalAvgPool: y = global_avgpool(in); break;
        case LayerOp::Linear: y = linear(in, L.weight, L.bias); break;
        case LayerOp::Conv:
        case LayerOp::DwConv:
            if (L.is_mapped()) {
                y = L.mapped->forward(in, cfg);
            } else {
                const int groups = L.spec.op == LayerOp::DwConv ? L.geom.c_in : 1;
                y = conv2d(in, L.weight, L.bias, L.geom.stride, L.geom.pad, groups);
            }
            break;
        }
        if (L.bn) y = L.bn->forward(y, cfg.training);
        if (L.spec.add_from != LayerSpec::kNone)
            y = add(y, outs[static_cast<size_t>(L.spec.add_from)]);
        if (L.spec.act_relu) y = relu(y);
        outs[i] = std::move(y);
    }
    if (taps) *taps = outs;
    return outs.back();
}

std::vector<Tensor> Network::weight_params() {
    std::vector<Tensor> out;
    auto push = [&](const Tensor& t) {
        if (t.defined() && t.requires_grad()) out.push_back(t);
    };
    for (auto& L : layers_) {
        if (L.is_mapped()) {
            MappedConvLayer& m = *L.mapped;
            push(m.weight);
            if (m.map_mode == MapMode::Operator)
                for (auto& br : m.branches) push(br.weight);
            push(m.bias);
        } else {
            push(L.weight);
            push(L.bias);
        }
        if (L.bn) {
            push(L.bn->gamma);
            push(L.bn->beta);
        }
    }
    return out;
}

std::vector<std::shared_ptr<ThetaBank>> Network::unique_banks() {
    std::vector<std::shared_ptr<ThetaBank>> out;
    for (auto& L : layers_) {
        if (!L.is_mapped()) continue;
        const auto& b = L.mapped->bank;
        if (std::find(out.begin(), out.end(), b) == out.end()) out.push_back(b);
    }
    return out;
}

std::vector<Tensor> Network::theta_params() {
    std::vector<Tensor> out;
    for (const auto& b : unique_banks())
        if (b->trainable) out.push_back(b->logits);
    return out;
}

void Network::set_banks_trainable(bool v) {
    for (const auto& b : unique_banks()) b->trainable = v;
}

void Network::set_bank_temperature(float tau) {
    for (const auto& b : unique_banks()) b->temperature = tau;
}

CostView Network::cost_view() const {
    CostView v;
    for (const auto& L : layers_) {
        if (L.spec.op == LayerOp::GlobalAvgPool) continue;
        CostItem item;
        item.layer = L.spec.name;
        item.geom = L.geom;
        if (L.is_mapped()) {
            for (const auto& br : L.mapped->branches) item.branches.push_back({br.cu, br.op});
        } else {
            item.branches.push_back({L.default_cu, L.spec.op});
        }
        v.items.push_back(std::move(item));
    }
    return v;
}

std::vector<Tensor> Network::relaxed_counts() {
    std::vector<Tensor> out;
    for (auto& L : layers_) {
        if (L.spec.op == LayerOp::GlobalAvgPool) continue;
        if (L.is_mapped()) {
            const auto& bank = L.mapped->bank;
            if (bank->trainable) {
                out.push_back(bank->effective_channels());
            } else {
                NoGradGuard ng;
                out.push_back(bank->effective_channels());
            }
        } else {
            out.push_back(Tensor());
        }
    }
    return out;
}

std::vector<std::vector<long long>> Network::hard_counts() const {
    std::vector<std::vector<long long>> out;
    for (const auto& L : layers_) {
        if (L.spec.op == LayerOp::GlobalAvgPool) continue;
        if (L.is_mapped())
            out.push_back(L.mapped->discrete_counts());
        else
            out.push_back({L.geom.c_out});
    }
    return out;
}

CostReport Network::exact_cost() const {
    return evaluate_exact(cost_view(), platform_, hard_counts());
}

Tensor Network::relaxed_cost(CostTarget target, const RelaxedCostOptions& opt) {
    const CostView view = cost_view();
    const std::vector<Tensor> eff = relaxed_counts();
    return target == CostTarget::Latency ? latency_cost_relaxed(view, platform_, eff, opt)
                                         : energy_cost_relaxed(view, platform_, eff, opt);
}

void Network::discretize() {
    for (auto& L : layers_)
        if (L.is_mapped()) L.mapped->set_discrete_from_bank();
}

void Network::clear_discrete() {
    for (auto& L : layers_)
        if (L.is_mapped()) L.mapped->clear_discrete();
}

Assignment Network::assignment() const {
    Assignment a;
    for (const auto& L : layers_) {
        if (!L.is_mapped()) continue;
        LayerAssignment la;
        la.layer = L.spec.name;
        la.cu_of_channel = L.mapped->cu_of_channel();
        la.split = L.mapped->split;
        a.layers.push_back(std::move(la));
    }
    return a;
}

void Network::apply_assignment(const Assignment& a) {
    for (auto& L : layers_) {
        if (!L.is_mapped()) continue;
        MappedConvLayer& m = *L.mapped;
        const LayerAssignment& la = a.layer(m.name);
        check(static_cast<int>(la.cu_of_channel.size()) == m.geom.c_out, "E_INTERNAL",
              "assignment for '" + m.name + "' has the wrong channel count");
        std::vector<int> branch_of_cu(platform_.cus.size(), -1);
        for (size_t j = 0; j < m.branches.size(); ++j)
            branch_of_cu[static_cast<size_t>(m.branches[j].cu)] = static_cast<int>(j);
        m.assign.clear();
        for (int cu : la.cu_of_channel) {
            check(cu >= 0 && cu < static_cast<int>(platform_.cus.size()) &&
                      branch_of_cu[static_cast<size_t>(cu)] >= 0,
                  "E_INTERNAL",
                  "assignment for '" + m.name + "' names a CU the layer does not split over");
            m.assign.push_back(branch_of_cu[static_cast<size_t>(cu)]);
        }
        m.split = la.split;
        m.discrete = true;
    }
}

void Network::freeze_quantizers() {
    for (auto& L : layers_)
        if (L.is_mapped()) L.mapped->freeze_quantizers();
}

void Network::unfreeze_quantizers() {
    for (auto& L : layers_)
        if (L.is_mapped()) L.mapped->unfreeze_quantizers();
}

namespace {

void put_tensor(TensorStore& store, const std::string& key, const Tensor& t) {
    store.put_floats(key, t.shape(), std::vector<float>(t.data().begin(), t.data().end()));
}

void load_tensor(const TensorStore& store, const std::string& key, Tensor t) {
    check(store.has(key), "E_CONFIG", "checkpoint is missing '" + key + "'");
    const auto& data = store.floats(key);
    check(store.shape(key) == t.shape(), "E_CONFIG",
          "checkpoint entry '" + key + "' has the wrong shape");
    std::copy(data.begin(), data.end(), t.data().begin());
}

void put_vec(TensorStore& store, const std::string& key, const std::vector<float>& v) {
    store.put_floats(key, {static_cast<int>(v.size())}, v);
}

} // namespace

void Network::save_state(TensorStore& store) const {
    store.put_int("meta/phase_level", phase_level_);
    std::vector<const ThetaBank*> seen;
    for (const auto& L : layers_) {
        const std::string& n = L.spec.name;
        if (L.weight.defined()) put_tensor(store, "w/" + n, L.weight);
        if (L.bias.defined()) put_tensor(store, "b/" + n, L.bias);
        if (L.bn) {
            put_tensor(store, "bn/" + n + "/gamma", L.bn->gamma);
            put_tensor(store, "bn/" + n + "/beta", L.bn->beta);
            put_vec(store, "bn/" + n + "/mean", L.bn->running_mean);
            put_vec(store, "bn/" + n + "/var", L.bn->running_var);
        }
        if (!L.is_mapped()) continue;
        const MappedConvLayer& m = *L.mapped;
        if (m.weight.defined()) put_tensor(store, "w/" + n, m.weight);
        if (m.bias.defined()) put_tensor(store, "b/" + n, m.bias);
        for (size_t j = 0; j < m.branches.size(); ++j) {
            const MappedBranch& br = m.branches[j];
            const std::string bkey = n + "/" + std::to_string(j);
            if (m.map_mode == MapMode::Operator && br.weight.defined())
                put_tensor(store, "w/" + bkey, br.weight);
            if (br.ternary && br.ternary->frozen()) {
                put_vec(store, "q/" + bkey + "/cut", br.ternary->frozen_cut());
                put_vec(store, "q/" + bkey + "/scale", br.ternary->frozen_scale());
            }
            if (br.affine_q && br.affine_q->frozen())
                put_vec(store, "q/" + bkey + "/absmax", br.affine_q->frozen_absmax());
        }
        if (m.act_quant.frozen())
            put_vec(store, "q/" + n + "/act", {m.act_quant.absmax()});
        if (m.discrete) {
            std::vector<long long> a(m.assign.begin(), m.assign.end());
            store.put_ints("assign/" + n, a);
            store.put_int("split/" + n, m.split);
        }
        if (std::find(seen.begin(), seen.end(), m.bank.get()) == seen.end()) {
            seen.push_back(m.bank.get());
            put_tensor(store, "theta/" + n, m.bank->logits);
        }
    }
}

void Network::load_state(const TensorStore& store) {
    phase_level_ = static_cast<int>(store.int_value("meta/phase_level"));
    std::vector<const ThetaBank*> seen;
    for (auto& L : layers_) {
        const std::string& n = L.spec.name;
        if (L.weight.defined()) load_tensor(store, "w/" + n, L.weight);
        if (L.bias.defined()) load_tensor(store, "b/" + n, L.bias);
        if (L.bn) {
            load_tensor(store, "bn/" + n + "/gamma", L.bn->gamma);
            load_tensor(store, "bn/" + n + "/beta", L.bn->beta);
            L.bn->running_mean = store.floats("bn/" + n + "/mean");
            L.bn->running_var = store.floats("bn/" + n + "/var");
        }
        if (!L.is_mapped()) continue;
        MappedConvLayer& m = *L.mapped;
        if (m.weight.defined()) load_tensor(store, "w/" + n, m.weight);
        if (m.bias.defined()) load_tensor(store, "b/" + n, m.bias);
        for (size_t j = 0; j < m.branches.size(); ++j) {
            MappedBranch& br = m.branches[j];
            const std::string bkey = n + "/" + std::to_string(j);
            if (m.map_mode == MapMode::Operator && br.weight.defined())
                load_tensor(store, "w/" + bkey, br.weight);
            if (br.ternary) {
                if (store.has("q/" + bkey + "/cut"))
                    br.ternary->restore(store.floats("q/" + bkey + "/cut"),
                                        store.floats("q/" + bkey + "/scale"));
                else
                    br.ternary->unfreeze();
            }
            if (br.affine_q) {
                if (store.has("q/" + bkey + "/absmax"))
                    br.affine_q->restore(store.floats("q/" + bkey + "/absmax"));
                else
                    br.affine_q->unfreeze();
            }
        }
        if (store.has("q/" + n + "/act"))
            m.act_quant.freeze_from(store.floats("q/" + n + "/act").at(0));
        else
            m.act_quant.unfreeze();
        if (store.has("assign/" + n)) {
            const auto& a = store.ints("assign/" + n);
            m.assign.assign(a.begin(), a.end());
            m.split = static_cast<int>(store.int_value("split/" + n));
            m.discrete = true;
        } else {
            m.clear_discrete();
        }
        if (std::find(seen.begin(), seen.end(), m.bank.get()) == seen.end()) {
            seen.push_back(m.bank.get());
            load_tensor(store, "theta/" + n, m.bank->logits);
        }
    }
}

std::unique_ptr<Network> build_supernet(const NetworkSpec& spec, const PlatformProfile& platform,
                                        unsigned long long seed) {
    return std::make_unique<Network>(spec, platform, seed);
}

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
    check(logits.ndim() == 2 && logits.dim(0) == static_cast<int>(labels.size()), "E_INTERNAL",
          "logit rows do not match labels");
    const int N = logits.dim(0);
    const int K = logits.dim(1);
    auto ld = logits.data();
    long long hits = 0;
    for (int i = 0; i < N; ++i) {
        const float* row = ld.data() + static_cast<long long>(i) * K;
        int best = 0;
        for (int k = 1; k < K; ++k)
            if (row[k] > row[best]) best = k;
        if (best == labels[static_cast<size_t>(i)]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(N);
}

} // namespace chanmap
