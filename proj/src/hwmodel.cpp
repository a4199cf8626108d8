#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "chanmap/hwmodel.hpp"
#include "chanmap/io.hpp"
#include "chanmap/ops.hpp"

namespace chanmap {

std::string op_support_name(OpSupport s) {
    switch (s) {
    case OpSupport::StdConv: return "std-conv";
    case OpSupport::DwConv: return "dw-conv";
    case OpSupport::Linear: return "linear";
    case OpSupport::Any: return "any";
    }
    return "?";
}

OpSupport parse_op_support(const std::string& name) {
    if (name == "std-conv") return OpSupport::StdConv;
    if (name == "dw-conv") return OpSupport::DwConv;
    if (name == "linear") return OpSupport::Linear;
    if (name == "any") return OpSupport::Any;
    fail("E_PLATFORM", "unknown operator class '" + name + "'");
}

int PlatformProfile::cu_index(const std::string& cu_name) const {
    for (size_t i = 0; i < cus.size(); ++i)
        if (cus[i].name == cu_name) return static_cast<int>(i);
    fail("E_CU_UNKNOWN", "platform '" + name + "' has no CU named '" + cu_name + "'");
}

int PlatformProfile::default_cu_index() const {
    if (default_cu.empty()) return 0;
    return cu_index(default_cu);
}

void PlatformProfile::validate() const {
    check(!name.empty(), "E_PLATFORM", "platform has no name");
    check(cus.size() >= 2, "E_PLATFORM", "platform needs at least two CUs");
    std::set<std::string> names;
    for (const auto& cu : cus) {
        check(!cu.name.empty(), "E_PLATFORM", "unnamed CU");
        check(names.insert(cu.name).second, "E_PLATFORM", "duplicate CU name '" + cu.name + "'");
        check(cu.p_out >= 1 && cu.p_in >= 1, "E_PLATFORM",
              "CU '" + cu.name + "' lane counts must be >= 1");
        check(cu.cycles_per_step > 0.0, "E_PLATFORM",
              "CU '" + cu.name + "' cycles_per_step must be positive");
        check(cu.overhead_cycles >= 0.0 && cu.active_power_mw >= 0.0, "E_PLATFORM",
              "CU '" + cu.name + "' has negative cost constants");
        check(cu.input_capacity >= 0, "E_PLATFORM",
              "CU '" + cu.name + "' input_capacity must be >= 0");
    }
    check(idle_power_mw >= 0.0, "E_PLATFORM", "idle power must be >= 0");
    check(clock_hz > 0.0, "E_PLATFORM", "clock must be positive");
    if (!default_cu.empty()) cu_index(default_cu);
}

bool cu_supports(const CUProfile& cu, LayerOp op) {
    if (cu.op == OpSupport::Any) return op != LayerOp::GlobalAvgPool;
    switch (op) {
    case LayerOp::Conv: return cu.op == OpSupport::StdConv;
    case LayerOp::DwConv: return cu.op == OpSupport::DwConv;
    case LayerOp::Linear: return cu.op == OpSupport::Linear;
    case LayerOp::GlobalAvgPool: return false;
    }
    return false;
}

bool cu_fits(const CUProfile& cu, const LayerGeometry& g, LayerOp op) {
    if (cu.input_capacity <= 0) return true;
    const long long rows = op == LayerOp::DwConv
                               ? static_cast<long long>(g.kernel) * g.kernel
                               : static_cast<long long>(g.c_in) * g.kernel * g.kernel;
    return rows <= cu.input_capacity;
}

namespace {

long long ceil_div(long long a, long long b) { return (a + b - 1) / b; }

// Spatial work per output channel tile.
long long spatial_steps(const LayerGeometry& g) {
    return static_cast<long long>(g.out_h) * g.out_w * g.kernel * g.kernel;
}

void check_op(const CUProfile& cu, LayerOp op) {
    check(cu_supports(cu, op), "E_PLATFORM",
          "CU '" + cu.name + "' does not execute " + layer_op_name(op) + " layers");
}

} // namespace

long long cu_tiles(const CUProfile& cu, const LayerGeometry& g, LayerOp op, long long n) {
    check_op(cu, op);
    check(n >= 0 && n <= g.c_out, "E_INTERNAL", "channel count out of range");
    if (n == 0) return 0;
    long long tiles = ceil_div(n, cu.p_out) * spatial_steps(g);
    if (op != LayerOp::DwConv) tiles *= ceil_div(g.c_in, cu.p_in);
    return tiles;
}

double cu_latency(const CUProfile& cu, const LayerGeometry& g, LayerOp op, long long n,
                  bool exact) {
    if (!exact) return cu_latency_linear(cu, g, op, static_cast<double>(n));
    if (n == 0) {
        check_op(cu, op);
        return 0.0;
    }
    return cu.cycles_per_step * static_cast<double>(cu_tiles(cu, g, op, n)) + cu.overhead_cycles;
}

namespace {

// Slope of the linear relaxation in n.
double linear_coef(const CUProfile& cu, const LayerGeometry& g, LayerOp op) {
    double coef = cu.cycles_per_step * static_cast<double>(spatial_steps(g)) /
                  static_cast<double>(cu.p_out);
    if (op != LayerOp::DwConv)
        coef *= static_cast<double>(g.c_in) / static_cast<double>(cu.p_in);
    return coef;
}

} // namespace

double cu_latency_linear(const CUProfile& cu, const LayerGeometry& g, LayerOp op, double n) {
    check_op(cu, op);
    check(n >= 0.0, "E_INTERNAL", "negative channel count");
    if (n == 0.0) return 0.0;
    return linear_coef(cu, g, op) * n + cu.overhead_cycles;
}

Tensor cu_latency_relaxed(const CUProfile& cu, const LayerGeometry& g, LayerOp op,
                          const Tensor& n) {
    check_op(cu, op);
    check(n.defined() && n.numel() == 1, "E_INTERNAL", "relaxed latency needs a scalar n");
    if (n.item() == 0.0f) return affine(n, 0.0f, 0.0f);
    return affine(n, static_cast<float>(linear_coef(cu, g, op)),
                  static_cast<float>(cu.overhead_cycles));
}

CostReport evaluate_exact(const CostView& view, const PlatformProfile& platform,
                          const std::vector<std::vector<long long>>& counts) {
    check(counts.size() == view.items.size(), "E_INTERNAL",
          "count rows do not match cost items");
    CostReport report;
    const size_t ncu = platform.cus.size();
    for (size_t i = 0; i < view.items.size(); ++i) {
        const CostItem& item = view.items[i];
        const auto& row_counts = counts[i];
        check(row_counts.size() == item.branches.size(), "E_INTERNAL",
              "branch counts do not match branches for layer '" + item.layer + "'");
        long long total_n = 0;
        for (long long n : row_counts) total_n += n;
        check(total_n == item.geom.c_out, "E_INTERNAL",
              "channel counts of layer '" + item.layer + "' do not sum to C_out");
        LayerCostRow row;
        row.layer = item.layer;
        row.cu_cycles.assign(ncu, 0.0);
        std::set<int> seen;
        for (size_t j = 0; j < item.branches.size(); ++j) {
            const CostBranch& b = item.branches[j];
            check(seen.insert(b.cu).second, "E_INTERNAL",
                  "layer '" + item.layer + "' binds one CU to two branches");
            const CUProfile& cu = platform.cu(b.cu);
            check(cu_fits(cu, item.geom, b.op), "E_PLATFORM",
                  "layer '" + item.layer + "' exceeds input capacity of CU '" + cu.name + "'");
            row.cu_cycles[static_cast<size_t>(b.cu)] =
                cu_latency(cu, item.geom, b.op, row_counts[j], true);
        }
        row.makespan = 0.0;
        for (double c : row.cu_cycles) row.makespan = std::max(row.makespan, c);
        for (size_t c = 0; c < ncu; ++c)
            report.active_mw_cycles += platform.cus[c].active_power_mw * row.cu_cycles[c];
        report.total_cycles += row.makespan;
        report.layers.push_back(std::move(row));
    }
    report.latency_seconds = report.total_cycles / platform.clock_hz;
    report.idle_mw_cycles = platform.idle_power_mw * report.total_cycles;
    report.energy_mw_cycles = report.active_mw_cycles + report.idle_mw_cycles;
    report.energy_uj = report.energy_mw_cycles / platform.clock_hz * 1000.0;
    return report;
}

double latency_scalar(const CostView& view, const PlatformProfile& platform,
                      const std::vector<std::vector<double>>& counts, bool ceil_rounding,
                      bool true_max, double tau) {
    check(counts.size() == view.items.size(), "E_INTERNAL",
          "count rows do not match cost items");
    double total = 0.0;
    for (size_t i = 0; i < view.items.size(); ++i) {
        const CostItem& item = view.items[i];
        std::vector<double> lat;
        for (size_t j = 0; j < item.branches.size(); ++j) {
            const CUProfile& cu = platform.cu(item.branches[j].cu);
            const double n = counts[i][j];
            lat.push_back(ceil_rounding
                              ? cu_latency(cu, item.geom, item.branches[j].op,
                                           static_cast<long long>(std::llround(n)), true)
                              : cu_latency_linear(cu, item.geom, item.branches[j].op, n));
        }
        if (true_max) {
            total += *std::max_element(lat.begin(), lat.end());
        } else {
            total += smooth_max(lat, tau);
        }
    }
    return total;
}

CostTarget parse_cost_target(const std::string& name) {
    if (name == "latency") return CostTarget::Latency;
    if (name == "energy") return CostTarget::Energy;
    fail("E_FLAGS", "unknown cost target '" + name + "' (expected latency or energy)");
}

std::string cost_target_name(CostTarget t) {
    return t == CostTarget::Latency ? "latency" : "energy";
}

namespace {

// Shared relaxed-cost assembly. Mapped items contribute taped smooth-max
// nodes; fixed items fold into one constant.
Tensor relaxed_cost(const CostView& view, const PlatformProfile& platform,
                    const std::vector<Tensor>& eff, const RelaxedCostOptions& opt, bool energy) {
    check(eff.size() == view.items.size(), "E_INTERNAL",
          "effective-channel rows do not match cost items");
    double constant = 0.0;
    std::vector<Tensor> terms;
    for (size_t i = 0; i < view.items.size(); ++i) {
        const CostItem& item = view.items[i];
        if (!item.mapped()) {
            const CostBranch& b = item.branches[0];
            const CUProfile& cu = platform.cu(b.cu);
            const double lat =
                cu_latency_linear(cu, item.geom, b.op, static_cast<double>(item.geom.c_out));
            constant += energy
                            ? cu.active_power_mw * lat + platform.idle_power_mw * lat
                            : lat;
            continue;
        }
        const Tensor& n = eff[i];
        check(n.defined() && n.ndim() == 1 &&
                  n.dim(0) == static_cast<int>(item.branches.size()),
              "E_INTERNAL", "layer '" + item.layer + "' needs [branches] effective channels");
        std::vector<Tensor> lat;
        for (size_t j = 0; j < item.branches.size(); ++j) {
            const CUProfile& cu = platform.cu(item.branches[j].cu);
            lat.push_back(
                cu_latency_relaxed(cu, item.geom, item.branches[j].op,
                                   pick(n, static_cast<int>(j))));
        }
        Tensor stacked = stack_scalars(lat);
        double tau = opt.tau;
        if (tau <= 0.0) {
            double m = 0.0;
            for (float v : stacked.data()) m += v;
            m /= static_cast<double>(stacked.numel());
            tau = std::max(0.1 * m, 1e-9);
        }
        Tensor makespan = smooth_max(stacked, static_cast<float>(tau));
        if (energy) {
            std::vector<float> powers;
            for (const auto& b : item.branches)
                powers.push_back(static_cast<float>(platform.cu(b.cu).active_power_mw));
            Tensor active = dot_const(stacked, powers);
            Tensor idle = affine(makespan, static_cast<float>(platform.idle_power_mw), 0.0f);
            terms.push_back(add(active, idle));
        } else {
            terms.push_back(makespan);
        }
    }
    if (terms.empty()) return Tensor::scalar(static_cast<float>(constant));
    Tensor total = sum(stack_scalars(terms));
    return affine(total, 1.0f, static_cast<float>(constant));
}

} // namespace

Tensor latency_cost_relaxed(const CostView& view, const PlatformProfile& platform,
                            const std::vector<Tensor>& eff, const RelaxedCostOptions& opt) {
    return relaxed_cost(view, platform, eff, opt, false);
}

Tensor energy_cost_relaxed(const CostView& view, const PlatformProfile& platform,
                           const std::vector<Tensor>& eff, const RelaxedCostOptions& opt) {
    return relaxed_cost(view, platform, eff, opt, true);
}

std::vector<std::string> builtin_platform_names() { return {"diana-like", "darkside-like"}; }

PlatformProfile builtin_platform(const std::string& name) {
    PlatformProfile p;
    p.name = name;
    p.clock_hz = 260e6;
    if (name == "diana-like") {
        p.idle_power_mw = 5.0;
        p.default_cu = "digital";
        CUProfile digital;
        digital.name = "digital";
        digital.op = OpSupport::Any;
        digital.precision = {Precision::Kind::Affine, 8};
        digital.p_out = 16;
        digital.p_in = 16;
        digital.cycles_per_step = 1.0;
        digital.overhead_cycles = 70.0;
        digital.active_power_mw = 9.0;
        CUProfile analog;
        analog.name = "analog";
        analog.op = OpSupport::StdConv;
        analog.precision = {Precision::Kind::Ternary, 8};
        analog.p_out = 512;
        analog.p_in = 1152;
        analog.cycles_per_step = 0.25;
        analog.overhead_cycles = 1000.0;
        analog.active_power_mw = 2.0;
        analog.input_capacity = 1152;
        p.cus = {digital, analog};
    } else if (name == "darkside-like") {
        p.idle_power_mw = 4.0;
        p.default_cu = "cluster";
        CUProfile dwe;
        dwe.name = "dwe";
        dwe.op = OpSupport::DwConv;
        dwe.precision = {Precision::Kind::Float, 8};
        dwe.p_out = 16;
        dwe.p_in = 1;
        dwe.cycles_per_step = 1.0;
        dwe.overhead_cycles = 20.0;
        dwe.active_power_mw = 4.0;
        CUProfile cluster;
        cluster.name = "cluster";
        cluster.op = OpSupport::Any;
        cluster.precision = {Precision::Kind::Float, 8};
        cluster.p_out = 8;
        cluster.p_in = 1;
        cluster.cycles_per_step = 1.0;
        cluster.overhead_cycles = 50.0;
        cluster.active_power_mw = 12.0;
        p.cus = {dwe, cluster};
    } else {
        fail("E_PLATFORM", "unknown builtin platform '" + name + "'");
    }
    p.validate();
    return p;
}

PlatformProfile parse_platform(const std::string& text) {
    PlatformProfile p;
    bool saw_version = false;
    CUProfile cu;
    bool in_cu = false;
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
        const std::string& k = tok[0];
        auto need = [&](size_t n) {
            check(tok.size() == n, "E_PLATFORM", "directive '" + k + "' malformed" + where);
        };
        if (in_cu) {
            if (k == "end") {
                need(1);
                p.cus.push_back(cu);
                in_cu = false;
            } else if (k == "operator") {
                need(2);
                cu.op = parse_op_support(tok[1]);
            } else if (k == "precision") {
                need(2);
                cu.precision = parse_precision(tok[1]);
            } else if (k == "p_out") {
                need(2);
                cu.p_out = std::stoi(tok[1]);
            } else if (k == "p_in") {
                need(2);
                cu.p_in = std::stoi(tok[1]);
            } else if (k == "cycles_per_step") {
                need(2);
                cu.cycles_per_step = std::stod(tok[1]);
            } else if (k == "overhead_cycles") {
                need(2);
                cu.overhead_cycles = std::stod(tok[1]);
            } else if (k == "active_power_mw") {
                need(2);
                cu.active_power_mw = std::stod(tok[1]);
            } else if (k == "input_capacity") {
                need(2);
                cu.input_capacity = std::stoll(tok[1]);
            } else {
                fail("E_PLATFORM", "unknown CU attribute '" + k + "'" + where);
            }
            continue;
        }
        if (k == "format_version") {
            need(2);
            check(tok[1] == "1", "E_PLATFORM", "unsupported platform format version" + where);
            saw_version = true;
        } else if (k == "platform") {
            need(2);
            p.name = tok[1];
        } else if (k == "idle_power_mw") {
            need(2);
            p.idle_power_mw = std::stod(tok[1]);
        } else if (k == "clock_hz") {
            need(2);
            p.clock_hz = std::stod(tok[1]);
        } else if (k == "default_cu") {
            need(2);
            p.default_cu = tok[1];
        } else if (k == "cu") {
            need(2);
            cu = CUProfile{};
            cu.name = tok[1];
            in_cu = true;
        } else {
            fail("E_PLATFORM", "unknown directive '" + k + "'" + where);
        }
    }
    check(!in_cu, "E_PLATFORM", "unterminated cu section");
    check(saw_version, "E_PLATFORM", "missing format_version");
    p.validate();
    return p;
}

std::string serialize_platform(const PlatformProfile& p) {
    std::ostringstream os;
    os << "format_version 1\n";
    os << "platform " << p.name << "\n";
    os << "idle_power_mw " << format_double(p.idle_power_mw) << "\n";
    os << "clock_hz " << format_double(p.clock_hz) << "\n";
    if (!p.default_cu.empty()) os << "default_cu " << p.default_cu << "\n";
    for (const auto& cu : p.cus) {
        os << "cu " << cu.name << "\n";
        os << "  operator " << op_support_name(cu.op) << "\n";
        os << "  precision " << cu.precision.describe() << "\n";
        os << "  p_out " << cu.p_out << "\n";
        os << "  p_in " << cu.p_in << "\n";
        os << "  cycles_per_step " << format_double(cu.cycles_per_step) << "\n";
        os << "  overhead_cycles " << format_double(cu.overhead_cycles) << "\n";
        os << "  active_power_mw " << format_double(cu.active_power_mw) << "\n";
        if (cu.input_capacity > 0) os << "  input_capacity " << cu.input_capacity << "\n";
        os << "end\n";
    }
    return os.str();
}

PlatformProfile resolve_platform(const std::string& name_or_path) {
    for (const auto& n : builtin_platform_names())
        if (n == name_or_path) return builtin_platform(n);
    if (!file_exists(name_or_path)) {
        std::string names;
        for (const auto& n : builtin_platform_names()) names += (names.empty() ? "" : ", ") + n;
        fail("E_PLATFORM", "unknown platform '" + name_or_path + "': not a builtin (" + names +
                               ") and no such file");
    }
    return parse_platform(read_text_file(name_or_path));
}

} // namespace chanmap
