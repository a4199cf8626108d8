#pragma once

#include <string>
#include <utility>
#include <vector>

#include "chanmap/network.hpp"

namespace chanmap {

// Output-channel permutation per layer, network order. perm[new] = old, so
// new_weight[n] = old_weight[perm[n]].
struct ReorderResult {
    std::vector<std::string> layers;
    std::vector<std::vector<int>> perms;

    const std::vector<int>& perm_of(const std::string& name) const;
};

// Groups each mapped layer's channels by CU with a stable sort, rewriting
// filters, biases, batch norm parameters, frozen quantizer statistics and the
// consumers' input channels so the network function is preserved. Layers that
// feed one residual join form a single channel space and move under one
// shared permutation. Depthwise layers tie their input and output spaces
// together; a non-identity permutation through one is rejected since the
// per-channel filters cannot absorb a crossing reorder.
ReorderResult reorder_channels(Network& net, const Assignment& a);

// One contiguous output-channel range of a mapped layer, bound to a CU.
struct SubLayerDesc {
    std::string cu;
    int lo = 0;
    int hi = 0; // range [lo, hi)
    LayerOp op = LayerOp::Conv;
    Precision precision;
    // Blob keys. Float payloads fill weight_key only; ternary adds the
    // per-channel scale; affine adds scale and absmax.
    std::string weight_key;
    std::string scale_key;
    std::string absmax_key;
};

struct ArtifactLayer {
    std::string name;
    LayerOp op = LayerOp::Conv;
    bool mapped = false;
    std::vector<int> permutation; // output-space reorder, identity included
    std::vector<int> assignment;  // mapped: platform CU index per channel
    int split = -1;               // contiguous mappings record the split
    std::string weight_key;       // fixed layers
    std::string bias_key;
    std::string bn_prefix; // keys <prefix>/gamma,/beta,/mean,/var
    std::string act_absmax_key;
    std::vector<SubLayerDesc> subs;
};

// Self-contained deployable description of a discretized network: the
// architecture, the platform, every weight payload in its target precision,
// the exact cost accounting, and a checksum of a deterministic probe run.
struct MappingArtifact {
    int format_version = 1;
    NetworkSpec spec;
    PlatformProfile platform;
    CostTarget target = CostTarget::Latency;
    CostReport cost;
    std::vector<ArtifactLayer> layers; // aligned with spec.layers
    TensorStore blob;
    std::string blob_file; // sidecar name recorded in the text file
    unsigned long long probe_seed = 0;
    int probe_count = 0;
    std::string probe_checksum;

    const ArtifactLayer& layer(const std::string& name) const;
};

// Cuts every mapped layer into per-CU sub-layers along its hard assignment,
// which must be grouped (each CU holds one contiguous run). Weight payloads
// are materialized in each sub-layer's precision from the frozen quantizer
// state. Attaches the exact cost report.
MappingArtifact split_sublayers(Network& net, CostTarget target);

// reorder_channels + split_sublayers + probe checksum over the mutated
// network. The network must already carry a hard assignment.
MappingArtifact export_mapping(Network& net, CostTarget target);

void save_artifact(const MappingArtifact& art, const std::string& text_path,
                   const std::string& blob_path);
MappingArtifact load_artifact(const std::string& text_path);

// Runs inference using only the artifact's payloads. `taps` receives every
// layer's output when given.
Tensor replay_forward(const MappingArtifact& art, const Tensor& x,
                      std::vector<Tensor>* taps = nullptr);

// Replays the recorded deterministic probe batch and hashes the logits.
std::string probe_checksum(const MappingArtifact& art);

struct VerifyReport {
    bool pass = false;
    bool checksum_ok = false;
    double max_abs_dev = 0.0;      // logits deviation vs the reference
    std::string first_bad_layer;   // earliest layer past tolerance, if any
    std::vector<std::pair<std::string, double>> layer_devs;
};

// Replays `inputs` from the artifact alone and compares against the reference
// network's discrete forward. Per-layer deviations are permutation-aware, so
// both the pre-reorder network and the exported snapshot line up.
VerifyReport verify_artifact(const MappingArtifact& art, Network& reference,
                             const Tensor& inputs, double tol = 1e-4);

// Structural invariants plus the probe checksum, no reference needed.
VerifyReport verify_artifact_self(const MappingArtifact& art);

} // namespace chanmap
