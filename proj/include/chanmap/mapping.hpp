#pragma once

#include <memory>
#include <string>
#include <vector>

#include "chanmap/hwmodel.hpp"
#include "chanmap/netspec.hpp"
#include "chanmap/ops.hpp"
#include "chanmap/quant.hpp"

namespace chanmap {

// Shape of the learnable assignment: an independent distribution per output
// channel, or a single soft split position that keeps each side contiguous.
enum class ThetaMode { PerChannel, Contiguous };

// Learnable soft assignment of a layer's output channels to its branches.
// Banks can be shared by several layers whose channels must move together.
struct ThetaBank {
    ThetaMode mode = ThetaMode::PerChannel;
    int channels = 0;
    int branches = 0;
    Tensor logits; // [C,B] per-channel, [C+1] contiguous (split positions)
    float temperature = 1.0f;
    bool trainable = true;

    static std::shared_ptr<ThetaBank> make_per_channel(int channels, int branches);
    // Contiguous banks always drive exactly two branches.
    static std::shared_ptr<ThetaBank> make_contiguous(int channels);

    // Contiguous only: distribution over the C+1 split positions.
    Tensor split_probs() const;
    // [C,B] convex weights per channel. Contiguous banks expand the split
    // distribution into a non-increasing branch-0 share per channel.
    Tensor theta_matrix() const;
    // [B] soft channel counts (column sums of the theta matrix).
    Tensor effective_channels() const;

    // Hard per-channel branch choice; ties pick the lowest branch index.
    std::vector<int> discretize() const;
    // Contiguous only: most likely split position; ties pick the lowest.
    int discretize_split() const;
};

// How a mapped layer combines its branches while the assignment is soft.
// Weights-style fuses quantized filter banks and runs one convolution;
// outputs-style runs every branch and blends activations per channel.
// Operator-mode layers always blend outputs.
enum class BlendStyle { Weights, Outputs };

struct PassConfig {
    enum class Mode {
        Float,   // plain float execution, assignment machinery inactive
        Blend,   // soft assignment, quantizers active
        Discrete // hard per-channel assignment
    };
    Mode mode = Mode::Float;
    bool training = false;
    BlendStyle style = BlendStyle::Weights;
};

// One CU alternative of a mapped layer.
struct MappedBranch {
    int cu = 0; // platform CU index
    LayerOp op = LayerOp::Conv;
    Precision precision;
    Tensor weight; // operator mode only: branch-owned filters
    std::unique_ptr<TernaryQuantizer> ternary;
    std::unique_ptr<AffineQuantizer> affine_q;

    // Fake-quantized view of w under this branch's precision (identity for
    // float).
    Tensor quantize(const Tensor& w);
};

// A convolution whose output channels are distributed across several CUs.
// Precision mode keeps one master filter bank seen through per-branch
// quantizers; operator mode gives each branch its own filters.
class MappedConvLayer {
public:
    MappedConvLayer(std::string name, LayerGeometry geom, MapMode map_mode);

    std::string name;
    LayerGeometry geom;
    MapMode map_mode = MapMode::Precision;
    std::shared_ptr<ThetaBank> bank;
    Tensor weight; // precision mode master filters [O,C,K,K]
    Tensor bias;   // optional, undefined when batch norm follows
    std::vector<MappedBranch> branches;
    ActQuantizer act_quant{8};

    bool discrete = false;
    std::vector<int> assign; // branch index per output channel
    int split = -1;          // contiguous split position, -1 otherwise

    Tensor forward(const Tensor& x, const PassConfig& cfg);

    // Pulls the hard assignment out of the bank.
    void set_discrete_from_bank();
    void clear_discrete();
    // Pins weight quantizer statistics to the current weights. Activation
    // statistics are pinned from the most recent forward pass.
    void freeze_quantizers();
    void unfreeze_quantizers();

    // Output channels on each branch under the current hard assignment.
    std::vector<long long> discrete_counts() const;
    // Hard assignment expressed as platform CU indices.
    std::vector<int> cu_of_channel() const;

    // True when some branch runs on an integer unit, so the layer input
    // passes through the activation fake-quantizer.
    bool quantizes_input() const;

private:
    Tensor forward_blend(const Tensor& x, const PassConfig& cfg);
    Tensor forward_discrete(const Tensor& x, const PassConfig& cfg);
    Tensor branch_conv(size_t j, const Tensor& x, const Tensor& w, const Tensor& b) const;
    Tensor theta_for_pass() const;
};

// Hard channel-to-CU choice for every mapped layer, in network order.
struct LayerAssignment {
    std::string layer;
    std::vector<int> cu_of_channel; // platform CU index per output channel
    int split = -1;                 // contiguous layers record the split too
};

struct Assignment {
    std::vector<LayerAssignment> layers;

    const LayerAssignment& layer(const std::string& name) const;
};

} // namespace chanmap
