#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "chanmap/io.hpp"
#include "chanmap/mapping.hpp"

namespace chanmap {

// Training phases a network moves through, strictly in order.
enum class Phase { Warmup, Search, Final };

std::string phase_name(Phase p);
Phase parse_phase(const std::string& name);

// One instantiated layer of the supernet.
struct RuntimeLayer {
    LayerSpec spec;
    LayerGeometry geom;
    int default_cu = -1; // costing CU for fixed layers; -1 = not costed
    Tensor weight;       // fixed conv / depthwise / linear filters
    Tensor bias;         // defined when no batch norm follows
    std::optional<BatchNorm2d> bn;
    std::unique_ptr<MappedConvLayer> mapped;

    bool is_mapped() const { return mapped != nullptr; }
};

// A network spec instantiated against a platform: every mappable layer
// becomes a multi-branch layer with one branch per eligible CU, and layers
// joined by residual adds share one assignment bank so their channels move
// together.
class Network {
public:
    Network(const NetworkSpec& spec, const PlatformProfile& platform,
            unsigned long long seed);

    const NetworkSpec& spec() const { return spec_; }
    const PlatformProfile& platform() const { return platform_; }
    std::vector<RuntimeLayer>& layers() { return layers_; }
    const std::vector<RuntimeLayer>& layers() const { return layers_; }
    RuntimeLayer& layer(const std::string& name);

    // x: [N,C,H,W] -> logits [N,classes]. When `taps` is given it receives
    // every layer's post-activation output, in layer order.
    Tensor forward(const Tensor& x, const PassConfig& cfg,
                   std::vector<Tensor>* taps = nullptr);

    std::vector<Tensor> weight_params();
    std::vector<Tensor> theta_params();
    std::vector<std::shared_ptr<ThetaBank>> unique_banks();
    void set_banks_trainable(bool v);
    void set_bank_temperature(float tau);

    // Layers in cost order (every conv and the classifier; pooling is free).
    CostView cost_view() const;
    // Aligned with cost_view: soft per-branch channel counts for mapped
    // layers, undefined tensors for fixed ones.
    std::vector<Tensor> relaxed_counts();
    // Aligned with cost_view: hard per-branch channel counts. Mapped layers
    // need a hard assignment unless `uniform_fallback` spreads channels by
    // the current bank argmax.
    std::vector<std::vector<long long>> hard_counts() const;
    CostReport exact_cost() const;
    Tensor relaxed_cost(CostTarget target, const RelaxedCostOptions& opt = {});

    void discretize();
    void clear_discrete();
    Assignment assignment() const;
    void apply_assignment(const Assignment& a);
    void freeze_quantizers();
    void unfreeze_quantizers();

    int phase_level() const { return phase_level_; }
    void set_phase_level(int level) { phase_level_ = level; }

    void save_state(TensorStore& store) const;
    void load_state(const TensorStore& store);

private:
    void build_layers(unsigned long long seed);
    void tie_banks();

    NetworkSpec spec_;
    PlatformProfile platform_;
    std::vector<LayerGeometry> geoms_;
    std::vector<RuntimeLayer> layers_;
    int phase_level_ = 0; // 0 fresh, 1 warmed up, 2 searched, 3 finalized
};

// Builds the supernet, validating that the platform covers every layer.
std::unique_ptr<Network> build_supernet(const NetworkSpec& spec,
                                        const PlatformProfile& platform,
                                        unsigned long long seed);

// Fraction of correctly classified rows.
double accuracy(const Tensor& logits, const std::vector<int>& labels);

} // namespace chanmap
