#pragma once

#include <string>
#include <vector>

#include "chanmap/netspec.hpp"
#include "chanmap/quant.hpp"
#include "chanmap/tensor.hpp"

namespace chanmap {

// Operator coverage of a compute unit. "Any" executes every layer kind;
// the specific values restrict the CU to one operator family.
enum class OpSupport { StdConv, DwConv, Linear, Any };

std::string op_support_name(OpSupport s);
OpSupport parse_op_support(const std::string& name);

struct CUProfile {
    std::string name;
    OpSupport op = OpSupport::Any;
    Precision precision;
    int p_out = 1;                // lanes over output channels
    int p_in = 1;                 // lanes over input channels (ignored for dw)
    double cycles_per_step = 1.0; // cycles per lane-tile of K*K output positions
    double overhead_cycles = 0.0; // fixed per-layer cost when any work is issued
    double active_power_mw = 0.0; // above idle
    long long input_capacity = 0; // max C_in*K*K accepted; 0 = unlimited
};

struct PlatformProfile {
    std::string name;
    std::vector<CUProfile> cus;
    double idle_power_mw = 0.0;
    double clock_hz = 260e6;
    std::string default_cu; // empty = first CU

    int cu_index(const std::string& cu_name) const;
    int default_cu_index() const;
    const CUProfile& cu(int i) const { return cus.at(static_cast<size_t>(i)); }
    void validate() const;
};

bool cu_supports(const CUProfile& cu, LayerOp op);
// Input-capacity admission test (weight rows that must fit on the CU).
bool cu_fits(const CUProfile& cu, const LayerGeometry& g, LayerOp op);

std::vector<std::string> builtin_platform_names();
PlatformProfile builtin_platform(const std::string& name);
PlatformProfile parse_platform(const std::string& text);
std::string serialize_platform(const PlatformProfile& p);
PlatformProfile resolve_platform(const std::string& name_or_path);

// Lane tiles issued for n output channels of this layer on this CU.
long long cu_tiles(const CUProfile& cu, const LayerGeometry& g, LayerOp op, long long n);

// Cycle counts. Exact mode rounds lane occupancy up per tile; linear mode
// replaces both ceil terms with identity (differentiable relaxation).
// n == 0 costs zero cycles in both modes.
double cu_latency(const CUProfile& cu, const LayerGeometry& g, LayerOp op, long long n,
                  bool exact = true);
double cu_latency_linear(const CUProfile& cu, const LayerGeometry& g, LayerOp op, double n);
// Taped version of the linear relaxation, affine in the scalar n.
Tensor cu_latency_relaxed(const CUProfile& cu, const LayerGeometry& g, LayerOp op,
                          const Tensor& n);

// One costed layer: a fixed layer has a single branch; a mapped layer has one
// branch per CU alternative, each bound to a distinct CU.
struct CostBranch {
    int cu = 0;
    LayerOp op = LayerOp::Conv;
};

struct CostItem {
    std::string layer;
    LayerGeometry geom;
    std::vector<CostBranch> branches;
    bool mapped() const { return branches.size() > 1; }
};

struct CostView {
    std::vector<CostItem> items;
};

struct LayerCostRow {
    std::string layer;
    std::vector<double> cu_cycles; // indexed by platform CU
    double makespan = 0.0;
};

struct CostReport {
    std::vector<LayerCostRow> layers;
    double total_cycles = 0.0;
    double latency_seconds = 0.0;
    double active_mw_cycles = 0.0;
    double idle_mw_cycles = 0.0;
    double energy_mw_cycles = 0.0;
    double energy_uj = 0.0;
};

// counts[i][j] = output channels of item i's branch j.
CostReport evaluate_exact(const CostView& view, const PlatformProfile& platform,
                          const std::vector<std::vector<long long>>& counts);

// Scalar latency with selectable rounding/aggregation, for property checks.
// true_max aggregates with the exact per-layer max; otherwise smooth_max(tau).
double latency_scalar(const CostView& view, const PlatformProfile& platform,
                      const std::vector<std::vector<double>>& counts, bool ceil_rounding,
                      bool true_max, double tau);

enum class CostTarget { Latency, Energy };

CostTarget parse_cost_target(const std::string& name);
std::string cost_target_name(CostTarget t);

struct RelaxedCostOptions {
    // tau <= 0 selects the scale-free default: 10% of the mean branch latency
    // of the layer, recomputed per evaluation from current values.
    double tau = 0.0;
};

// eff[i] = per-branch effective channel counts of item i (vector tensor [B]);
// fixed items pass an undefined Tensor and contribute constants.
Tensor latency_cost_relaxed(const CostView& view, const PlatformProfile& platform,
                            const std::vector<Tensor>& eff, const RelaxedCostOptions& opt = {});
Tensor energy_cost_relaxed(const CostView& view, const PlatformProfile& platform,
                           const std::vector<Tensor>& eff, const RelaxedCostOptions& opt = {});

} // namespace chanmap
