#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "chanmap/io.hpp"
#include "chanmap/netspec.hpp"

namespace chanmap {

std::string layer_op_name(LayerOp op) {
    switch (op) {
    case LayerOp::Conv: return "conv";
    case LayerOp::DwConv: return "dw";
    case LayerOp::Linear: return "linear";
    case LayerOp::GlobalAvgPool: return "gap";
    }
    return "?";
}

LayerOp parse_layer_op(const std::string& name) {
    if (name == "conv") return LayerOp::Conv;
    if (name == "dw") return LayerOp::DwConv;
    if (name == "linear") return LayerOp::Linear;
    if (name == "gap") return LayerOp::GlobalAvgPool;
    fail("E_NET_SPEC", "unknown layer operator '" + name + "'");
}

std::string map_mode_name(MapMode m) {
    switch (m) {
    case MapMode::None: return "none";
    case MapMode::Precision: return "precision";
    case MapMode::Operator: return "operator";
    }
    return "?";
}

int NetworkSpec::layer_index(const std::string& layer_name) const {
    for (size_t i = 0; i < layers.size(); ++i)
        if (layers[i].name == layer_name) return static_cast<int>(i);
    fail("E_NET_SPEC", "no layer named '" + layer_name + "'");
}

int NetworkSpec::resolved_input(int layer) const {
    const LayerSpec& l = layers.at(static_cast<size_t>(layer));
    if (l.input_from == LayerSpec::kPrev) return layer == 0 ? LayerSpec::kInput : layer - 1;
    return l.input_from;
}

std::vector<LayerGeometry> NetworkSpec::geometries() const {
    check(in_channels >= 1 && in_h >= 1 && in_w >= 1, "E_NET_SPEC", "bad input shape");
    check(classes >= 2, "E_NET_SPEC", "need at least two classes");
    check(!layers.empty(), "E_NET_SPEC", "network has no layers");
    std::vector<LayerGeometry> out(layers.size());
    // (channels, h, w); h == 0 marks a flattened [N,C] tensor
    auto shape_of = [&](int idx) -> std::array<int, 3> {
        if (idx == LayerSpec::kInput) return {in_channels, in_h, in_w};
        const LayerGeometry& g = out[static_cast<size_t>(idx)];
        if (layers[static_cast<size_t>(idx)].op == LayerOp::GlobalAvgPool) return {g.c_out, 0, 0};
        if (layers[static_cast<size_t>(idx)].op == LayerOp::Linear) return {g.c_out, 0, 0};
        return {g.c_out, g.out_h, g.out_w};
    };
    for (size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        const int src = resolved_input(static_cast<int>(i));
        check(src == LayerSpec::kInput || (src >= 0 && src < static_cast<int>(i)), "E_NET_SPEC",
              "layer '" + l.name + "' reads from a layer that does not precede it");
        const auto in = shape_of(src);
        LayerGeometry g;
        g.c_in = in[0];
        g.in_h = in[1];
        g.in_w = in[2];
        switch (l.op) {
        case LayerOp::Conv:
        case LayerOp::DwConv: {
            check(in[1] > 0, "E_NET_SPEC", "layer '" + l.name + "' convolves a flattened tensor");
            g.c_out = l.op == LayerOp::DwConv ? g.c_in : l.c_out;
            check(g.c_out >= 1, "E_NET_SPEC", "layer '" + l.name + "' has no output channels");
            g.kernel = l.kernel;
            g.stride = l.stride;
            g.pad = l.pad;
            check(g.kernel >= 1 && g.stride >= 1 && g.pad >= 0, "E_NET_SPEC",
                  "layer '" + l.name + "' has bad conv hyperparameters");
            g.out_h = (g.in_h + 2 * g.pad - g.kernel) / g.stride + 1;
            g.out_w = (g.in_w + 2 * g.pad - g.kernel) / g.stride + 1;
            check(g.out_h >= 1 && g.out_w >= 1, "E_NET_SPEC",
                  "layer '" + l.name + "' produces an empty feature map");
            break;
        }
        case LayerOp::Linear: {
            check(in[1] == 0, "E_NET_SPEC",
                  "layer '" + l.name + "' needs a flattened input (insert a gap layer)");
            g.c_out = l.c_out;
            check(g.c_out >= 1, "E_NET_SPEC", "layer '" + l.name + "' has no output units");
            g.in_h = g.in_w = g.out_h = g.out_w = 1;
            g.kernel = 1;
            g.stride = 1;
            g.pad = 0;
            break;
        }
        case LayerOp::GlobalAvgPool: {
            check(in[1] > 0, "E_NET_SPEC", "layer '" + l.name + "' pools a flattened tensor");
            g.c_out = g.c_in;
            g.out_h = g.out_w = 1;
            break;
        }
        }
        if (l.add_from != LayerSpec::kNone) {
            check(l.op == LayerOp::Conv || l.op == LayerOp::DwConv, "E_NET_SPEC",
                  "layer '" + l.name + "' joins a residual on a non-conv operator");
            check(l.add_from >= 0 && l.add_from < static_cast<int>(i), "E_NET_SPEC",
                  "layer '" + l.name + "' joins a layer that does not precede it");
            const auto peer = shape_of(l.add_from);
            check(peer[0] == g.c_out && peer[1] == g.out_h && peer[2] == g.out_w, "E_NET_SPEC",
                  "layer '" + l.name + "' residual join shapes do not match");
        }
        out[i] = g;
    }
    return out;
}

void NetworkSpec::validate() const {
    std::set<std::string> names;
    for (const auto& l : layers) {
        check(!l.name.empty(), "E_NET_SPEC", "unnamed layer");
        check(names.insert(l.name).second, "E_NET_SPEC", "duplicate layer name '" + l.name + "'");
    }
    const auto geoms = geometries();
    int linears = 0, gaps = 0;
    for (size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        if (l.op == LayerOp::Linear) ++linears;
        if (l.op == LayerOp::GlobalAvgPool) ++gaps;
        switch (l.map) {
        case MapMode::None: break;
        case MapMode::Precision:
            check(l.op == LayerOp::Conv, "E_NET_SPEC",
                  "layer '" + l.name + "': precision mapping applies to standard convolutions");
            break;
        case MapMode::Operator:
            check(l.op == LayerOp::DwConv, "E_NET_SPEC",
                  "layer '" + l.name +
                      "': operator mapping needs a depthwise layer (C_in == C_out)");
            check(geoms[i].c_in == geoms[i].c_out, "E_NET_SPEC",
                  "layer '" + l.name + "': operator mapping requires C_in == C_out");
            break;
        }
    }
    check(linears == 1, "E_NET_SPEC", "expected exactly one linear classifier layer");
    check(gaps == 1, "E_NET_SPEC", "expected exactly one global average pool layer");
    check(layers.back().op == LayerOp::Linear, "E_NET_SPEC", "classifier must be the last layer");
    check(geoms.back().c_out == classes, "E_NET_SPEC",
          "classifier width does not match the class count");
}

namespace {

LayerSpec conv(const std::string& name, int c, int k, int s, int p, bool relu_after = true,
               MapMode map = MapMode::None) {
    LayerSpec l;
    l.name = name;
    l.op = LayerOp::Conv;
    l.c_out = c;
    l.kernel = k;
    l.stride = s;
    l.pad = p;
    l.bn = true;
    l.act_relu = relu_after;
    l.map = map;
    return l;
}

LayerSpec dwconv(const std::string& name, int k, int s, int p, MapMode map) {
    LayerSpec l;
    l.name = name;
    l.op = LayerOp::DwConv;
    l.kernel = k;
    l.stride = s;
    l.pad = p;
    l.bn = true;
    l.act_relu = true;
    l.map = map;
    return l;
}

NetworkSpec tiny_cnn() {
    NetworkSpec s;
    s.name = "tiny-cnn";
    s.layers.push_back(conv("stem", 8, 3, 2, 1));
    s.layers.push_back(conv("l1", 16, 3, 2, 1, true, MapMode::Precision));
    s.layers.push_back(conv("l2", 16, 3, 1, 1, true, MapMode::Precision));
    LayerSpec pool;
    pool.name = "pool";
    pool.op = LayerOp::GlobalAvgPool;
    s.layers.push_back(pool);
    LayerSpec fc;
    fc.name = "fc";
    fc.op = LayerOp::Linear;
    fc.c_out = s.classes;
    s.layers.push_back(fc);
    return s;
}

NetworkSpec resnet8_slim() {
    NetworkSpec s;
    s.name = "resnet8-slim";
    auto idx = [&](const char* n) { return s.layer_index(n); };
    s.layers.push_back(conv("stem", 16, 3, 1, 1));
    s.layers.push_back(conv("b1_c1", 16, 3, 1, 1, true, MapMode::Precision));
    {
        LayerSpec l = conv("b1_c2", 16, 3, 1, 1, true, MapMode::Precision);
        s.layers.push_back(l);
        s.layers.back().add_from = idx("stem");
    }
    s.layers.push_back(conv("b2_c1", 32, 3, 2, 1, true, MapMode::Precision));
    {
        LayerSpec l = conv("b2_pj", 32, 1, 2, 0, false, MapMode::Precision);
        l.input_from = idx("b1_c2");
        s.layers.push_back(l);
    }
    {
        LayerSpec l = conv("b2_c2", 32, 3, 1, 1, true, MapMode::Precision);
        l.input_from = idx("b2_c1");
        s.layers.push_back(l);
        s.layers.back().add_from = idx("b2_pj");
    }
    s.layers.push_back(conv("b3_c1", 64, 3, 2, 1, true, MapMode::Precision));
    {
        LayerSpec l = conv("b3_pj", 64, 1, 2, 0, false, MapMode::Precision);
        l.input_from = idx("b2_c2");
        s.layers.push_back(l);
    }
    {
        LayerSpec l = conv("b3_c2", 64, 3, 1, 1, true, MapMode::Precision);
        l.input_from = idx("b3_c1");
        s.layers.push_back(l);
        s.layers.back().add_from = idx("b3_pj");
    }
    LayerSpec pool;
    pool.name = "pool";
    pool.op = LayerOp::GlobalAvgPool;
    s.layers.push_back(pool);
    LayerSpec fc;
    fc.name = "fc";
    fc.op = LayerOp::Linear;
    fc.c_out = s.classes;
    s.layers.push_back(fc);
    return s;
}

int scale_width(int c, double w) {
    const long long units = std::llround(static_cast<double>(c) * w / 8.0);
    return static_cast<int>(std::max(1ll, units)) * 8;
}

NetworkSpec mbv1_micro(double w, const std::string& name) {
    NetworkSpec s;
    s.name = name;
    const int c0 = scale_width(16, w);
    const int c1 = scale_width(16, w);
    const int c2 = scale_width(32, w);
    const int c3 = scale_width(32, w);
    const int c4 = scale_width(64, w);
    s.layers.push_back(conv("stem", c0, 3, 2, 1));
    s.layers.push_back(dwconv("b1_dw", 3, 2, 1, MapMode::Operator));
    s.layers.push_back(conv("b1_pw", c1, 1, 1, 0));
    s.layers.push_back(dwconv("b2_dw", 3, 1, 1, MapMode::Operator));
    s.layers.push_back(conv("b2_pw", c2, 1, 1, 0));
    s.layers.push_back(dwconv("b3_dw", 3, 2, 1, MapMode::Operator));
    s.layers.push_back(conv("b3_pw", c3, 1, 1, 0));
    s.layers.push_back(dwconv("b4_dw", 3, 1, 1, MapMode::Operator));
    s.layers.push_back(conv("b4_pw", c4, 1, 1, 0));
    LayerSpec pool;
    pool.name = "pool";
    pool.op = LayerOp::GlobalAvgPool;
    s.layers.push_back(pool);
    LayerSpec fc;
    fc.name = "fc";
    fc.op = LayerOp::Linear;
    fc.c_out = s.classes;
    s.layers.push_back(fc);
    return s;
}

} // namespace

std::vector<std::string> builtin_spec_names() {
    return {"tiny-cnn", "resnet8-slim", "mbv1-micro", "mbv1-micro-w50", "mbv1-micro-w25"};
}

NetworkSpec builtin_spec(const std::string& name) {
    NetworkSpec s;
    if (name == "tiny-cnn") s = tiny_cnn();
    else if (name == "resnet8-slim") s = resnet8_slim();
    else if (name == "mbv1-micro") s = mbv1_micro(1.0, name);
    else if (name == "mbv1-micro-w50") s = mbv1_micro(0.5, name);
    else if (name == "mbv1-micro-w25") s = mbv1_micro(0.25, name);
    else fail("E_NET_SPEC", "unknown builtin network '" + name + "'");
    s.validate();
    return s;
}

NetworkSpec parse_network_spec(const std::string& text) {
    NetworkSpec s;
    bool saw_version = false;
    std::map<std::string, int> by_name;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto where = " (line " + std::to_string(lineno) + ")";
        std::istringstream ls(line);
        std::vector<std::string> tok;
        std::string t;
        while (ls >> t) tok.push_back(t);
        if (tok.empty() || tok[0][0] == '#') continue;
        if (tok[0] == "format_version") {
            check(tok.size() == 2 && tok[1] == "1", "E_NET_SPEC",
                  "unsupported network spec format version" + where);
            saw_version = true;
        } else if (tok[0] == "network") {
            check(tok.size() == 2, "E_NET_SPEC", "bad network line" + where);
            s.name = tok[1];
        } else if (tok[0] == "input") {
            check(tok.size() == 4, "E_NET_SPEC", "input needs C H W" + where);
            s.in_channels = std::stoi(tok[1]);
            s.in_h = std::stoi(tok[2]);
            s.in_w = std::stoi(tok[3]);
        } else if (tok[0] == "classes") {
            check(tok.size() == 2, "E_NET_SPEC", "bad classes line" + where);
            s.classes = std::stoi(tok[1]);
        } else if (tok[0] == "layer") {
            check(tok.size() >= 3, "E_NET_SPEC", "layer needs a name and operator" + where);
            LayerSpec l;
            l.name = tok[1];
            l.op = parse_layer_op(tok[2]);
            size_t i = 3;
            auto next_int = [&](const char* key) {
                check(i + 1 < tok.size(), "E_NET_SPEC",
                      std::string(key) + " needs a value" + where);
                return std::stoi(tok[++i]);
            };
            while (i < tok.size()) {
                const std::string& k = tok[i];
                if (k == "c") l.c_out = next_int("c");
                else if (k == "k") l.kernel = next_int("k");
                else if (k == "stride") l.stride = next_int("stride");
                else if (k == "pad") l.pad = next_int("pad");
                else if (k == "bn") l.bn = true;
                else if (k == "relu") l.act_relu = true;
                else if (k == "from") {
                    check(i + 1 < tok.size(), "E_NET_SPEC", "from needs a layer name" + where);
                    const std::string& ref = tok[++i];
                    if (ref == "input") l.input_from = LayerSpec::kInput;
                    else {
                        check(by_name.count(ref), "E_NET_SPEC",
                              "from references unknown layer '" + ref + "'" + where);
                        l.input_from = by_name[ref];
                    }
                } else if (k == "add") {
                    check(i + 1 < tok.size(), "E_NET_SPEC", "add needs a layer name" + where);
                    const std::string& ref = tok[++i];
                    check(by_name.count(ref), "E_NET_SPEC",
                          "add references unknown layer '" + ref + "'" + where);
                    l.add_from = by_name[ref];
                } else if (k == "map") {
                    check(i + 1 < tok.size(), "E_NET_SPEC", "map needs a mode" + where);
                    const std::string& m = tok[++i];
                    if (m == "precision") l.map = MapMode::Precision;
                    else if (m == "operator") l.map = MapMode::Operator;
                    else fail("E_NET_SPEC", "unknown map mode '" + m + "'" + where);
                } else {
                    fail("E_NET_SPEC", "unknown layer attribute '" + k + "'" + where);
                }
                ++i;
            }
            by_name[l.name] = static_cast<int>(s.layers.size());
            s.layers.push_back(l);
        } else {
            fail("E_NET_SPEC", "unknown directive '" + tok[0] + "'" + where);
        }
    }
    check(saw_version, "E_NET_SPEC", "missing format_version");
    check(!s.name.empty(), "E_NET_SPEC", "missing network name");
    s.validate();
    return s;
}

std::string serialize_network_spec(const NetworkSpec& spec) {
    std::ostringstream os;
    os << "format_version 1\n";
    os << "network " << spec.name << "\n";
    os << "input " << spec.in_channels << " " << spec.in_h << " " << spec.in_w << "\n";
    os << "classes " << spec.classes << "\n";
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        os << "layer " << l.name << " " << layer_op_name(l.op);
        if (l.op == LayerOp::Conv || l.op == LayerOp::Linear) os << " c " << l.c_out;
        if (l.op == LayerOp::Conv || l.op == LayerOp::DwConv) {
            os << " k " << l.kernel << " stride " << l.stride << " pad " << l.pad;
        }
        if (l.bn) os << " bn";
        if (l.act_relu) os << " relu";
        if (l.input_from == LayerSpec::kInput) {
            if (i != 0) os << " from input";
        } else if (l.input_from != LayerSpec::kPrev &&
                   l.input_from != static_cast<int>(i) - 1) {
            os << " from " << spec.layers[static_cast<size_t>(l.input_from)].name;
        }
        if (l.add_from != LayerSpec::kNone)
            os << " add " << spec.layers[static_cast<size_t>(l.add_from)].name;
        if (l.map != MapMode::None) os << " map " << map_mode_name(l.map);
        os << "\n";
    }
    return os.str();
}

NetworkSpec resolve_network_spec(const std::string& name_or_path) {
    for (const auto& n : builtin_spec_names())
        if (n == name_or_path) return builtin_spec(n);
    if (!file_exists(name_or_path)) {
        std::string names;
        for (const auto& n : builtin_spec_names()) names += (names.empty() ? "" : ", ") + n;
        fail("E_NET_SPEC", "unknown network '" + name_or_path + "': not a builtin (" + names +
                               ") and no such file");
    }
    return parse_network_spec(read_text_file(name_or_path));
}

} // namespace chanmap
