#pragma once

#include <optional>
#include <string>
#include <vector>

#include "chanmap/error.hpp"

namespace chanmap {

// Operator kinds a layer can execute. Linear layers are costed like 1x1
// convolutions on a 1x1 spatial grid.
enum class LayerOp { Conv, DwConv, Linear, GlobalAvgPool };

std::string layer_op_name(LayerOp op);
LayerOp parse_layer_op(const std::string& name);

// How a mappable layer splits across compute units.
enum class MapMode { None, Precision, Operator };

std::string map_mode_name(MapMode m);

struct LayerGeometry {
    int c_in = 0;
    int c_out = 0;
    int kernel = 1;
    int stride = 1;
    int pad = 0;
    int in_h = 1;
    int in_w = 1;
    int out_h = 1;
    int out_w = 1;
};

struct LayerSpec {
    std::string name;
    LayerOp op = LayerOp::Conv;
    int c_out = 0; // DwConv inherits its input width; Linear uses class count
    int kernel = 1;
    int stride = 1;
    int pad = 0;
    bool bn = false;
    bool act_relu = false;
    int input_from = kPrev; // layer index, kPrev, or kInput
    int add_from = kNone;   // residual partner joined before the activation
    MapMode map = MapMode::None;

    static constexpr int kPrev = -2;
    static constexpr int kInput = -1;
    static constexpr int kNone = -1;
};

struct NetworkSpec {
    std::string name;
    int in_channels = 3;
    int in_h = 32;
    int in_w = 32;
    int classes = 10;
    std::vector<LayerSpec> layers;

    // Resolves the shape chain; throws E_NET_SPEC on inconsistencies.
    std::vector<LayerGeometry> geometries() const;
    void validate() const;
    int layer_index(const std::string& name) const;
    // Input layer index a layer actually reads from (kInput for the image).
    int resolved_input(int layer) const;
};

std::vector<std::string> builtin_spec_names();
NetworkSpec builtin_spec(const std::string& name);

NetworkSpec parse_network_spec(const std::string& text);
std::string serialize_network_spec(const NetworkSpec& spec);
// Loads a builtin name or a spec file path.
NetworkSpec resolve_network_spec(const std::string& name_or_path);

} // namespace chanmap
