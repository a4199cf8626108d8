#include <cmath>
#include <vector>

#include "doctest.h"

#include "chanmap/hwmodel.hpp"
#include "chanmap/ops.hpp"
#include "chanmap/rng.hpp"
#include "support/gradcheck.hpp"

using namespace chanmap;
using chanmap::testing::gradcheck;

namespace {

LayerGeometry geom(int c_in, int c_out, int out_h, int out_w, int k) {
    LayerGeometry g;
    g.c_in = c_in;
    g.c_out = c_out;
    g.out_h = out_h;
    g.out_w = out_w;
    g.kernel = k;
    return g;
}

CUProfile cu_basic(double a, double b, int p_out, int p_in) {
    CUProfile cu;
    cu.name = "cu";
    cu.cycles_per_step = a;
    cu.overhead_cycles = b;
    cu.p_out = p_out;
    cu.p_in = p_in;
    return cu;
}

// Straight per-MAC/lane recount, independent of the production code path.
double latency_oracle(const CUProfile& cu, const LayerGeometry& g, LayerOp op, long long n) {
    if (n == 0) return 0.0;
    const long long out_tiles = (n + cu.p_out - 1) / cu.p_out;
    long long in_tiles = 1;
    if (op != LayerOp::DwConv) in_tiles = (g.c_in + cu.p_in - 1) / cu.p_in;
    const double steps = static_cast<double>(out_tiles) * static_cast<double>(in_tiles) *
                         g.out_h * g.out_w * g.kernel * g.kernel;
    return cu.cycles_per_step * steps + cu.overhead_cycles;
}

} // namespace

TEST_CASE("full-lane conv occupies one tile pair") {
    CUProfile cu = cu_basic(1.0, 0.0, 16, 16);
    const double c = cu_latency(cu, geom(16, 16, 8, 8, 3), LayerOp::Conv, 16);
    CHECK(c == 576.0);
}

TEST_CASE("one channel beyond the lane width doubles the tiles") {
    CUProfile cu = cu_basic(1.0, 0.0, 16, 16);
    const double c = cu_latency(cu, geom(16, 17, 8, 8, 3), LayerOp::Conv, 17);
    CHECK(c == 1152.0);
}

TEST_CASE("zero assigned channels cost zero cycles") {
    CUProfile cu = cu_basic(1.0, 25.0, 16, 16);
    CHECK(cu_latency(cu, geom(16, 16, 8, 8, 3), LayerOp::Conv, 0) == 0.0);
    CHECK(cu_latency_linear(cu, geom(16, 16, 8, 8, 3), LayerOp::Conv, 0.0) == 0.0);
}

TEST_CASE("exact latency matches an independent tile recount") {
    Rng rng(606);
    for (int i = 0; i < 200; ++i) {
        CUProfile cu = cu_basic(rng.uniform_int(1, 8), rng.uniform_int(0, 100),
                                rng.uniform_int(1, 32), rng.uniform_int(1, 32));
        LayerGeometry g = geom(rng.uniform_int(1, 64), rng.uniform_int(1, 64),
                               rng.uniform_int(1, 16), rng.uniform_int(1, 16),
                               rng.uniform_int(1, 2) * 2 - 1);
        const LayerOp op = rng.uniform_int(0, 1) ? LayerOp::Conv : LayerOp::DwConv;
        const long long n = rng.uniform_int(0, g.c_out);
        CHECK(cu_latency(cu, g, op, n) == latency_oracle(cu, g, op, n));
    }
}

TEST_CASE("depthwise cost ignores the input-lane dimension") {
    CUProfile cu = cu_basic(1.0, 0.0, 16, 4);
    const LayerGeometry g = geom(16, 16, 8, 8, 3);
    CHECK(cu_latency(cu, g, LayerOp::DwConv, 16) == 576.0);
    CHECK(cu_latency(cu, g, LayerOp::Conv, 16) == 4.0 * 576.0);
}

TEST_CASE("smooth max of equal inputs is that input") {
    Tensor v = Tensor::from_data({2}, {5.0f, 5.0f});
    CHECK(smooth_max(v, 1.0f).item() == doctest::Approx(5.0).epsilon(1e-7));
    CHECK(smooth_max(std::vector<double>{5.0, 5.0}, 123.0) == doctest::Approx(5.0));
}

TEST_CASE("smooth max of 0 and 10 at unit temperature") {
    CHECK(smooth_max(std::vector<double>{0.0, 10.0}, 1.0) ==
          doctest::Approx(9.999546).epsilon(1e-6));
}

TEST_CASE("smooth max approaches the exact max as temperature vanishes") {
    CHECK(std::abs(smooth_max(std::vector<double>{3.0, 7.0}, 1e-6) - 7.0) < 1e-6);
}

TEST_CASE("smooth max stays between min and max") {
    Rng rng(99);
    for (int i = 0; i < 1000; ++i) {
        const int k = rng.uniform_int(1, 6);
        std::vector<double> v;
        double lo = 1e300, hi = -1e300;
        for (int j = 0; j < k; ++j) {
            v.push_back(rng.uniform(0.0f, 1000.0f));
            lo = std::min(lo, v.back());
            hi = std::max(hi, v.back());
        }
        const double tau = std::pow(10.0, rng.uniform(-3.0f, 3.0f));
        const double m = smooth_max(v, tau);
        CHECK(m >= lo - 1e-9);
        CHECK(m <= hi + 1e-9);
    }
}

TEST_CASE("one-layer energy combines active and idle power") {
    // Two CUs with exact latencies 100 and 60, active powers 2 and 1, idle 0.5:
    // 2*100 + 1*60 + 0.5*100 = 310 energy units.
    PlatformProfile p;
    p.name = "toy";
    p.idle_power_mw = 0.5;
    p.clock_hz = 1e6;
    CUProfile a = cu_basic(1.0, 0.0, 1, 1);
    a.name = "a";
    a.active_power_mw = 2.0;
    CUProfile b = cu_basic(0.6, 0.0, 1, 1);
    b.name = "b";
    b.active_power_mw = 1.0;
    p.cus = {a, b};
    p.default_cu = "a";

    CostView view;
    CostItem item;
    item.layer = "l";
    item.geom = geom(1, 2, 10, 10, 1);
    item.branches = {{0, LayerOp::Conv}, {1, LayerOp::Conv}};
    view.items.push_back(item);
    // 1 channel on a: 1*1*100*1 = 100 cycles; 1 on b: 0.6*100 = 60.
    CostReport rep = evaluate_exact(view, p, {{1, 1}});
    CHECK(rep.layers.size() == 1);
    CHECK(rep.layers[0].cu_cycles[0] == 100.0);
    CHECK(rep.layers[0].cu_cycles[1] == 60.0);
    CHECK(rep.layers[0].makespan == 100.0);
    CHECK(rep.energy_mw_cycles == 310.0);
    CHECK(rep.total_cycles == 100.0);
    CHECK(rep.latency_seconds == doctest::Approx(100.0 / 1e6));
}

TEST_CASE("zero active power reduces energy to idle times makespan") {
    Rng rng(1234);
    for (int i = 0; i < 50; ++i) {
        PlatformProfile p;
        p.name = "toy";
        p.idle_power_mw = rng.uniform(0.5f, 8.0f);
        CUProfile a = cu_basic(rng.uniform_int(1, 4), rng.uniform_int(0, 30),
                               rng.uniform_int(1, 8), 1);
        a.name = "a";
        CUProfile b = cu_basic(rng.uniform_int(1, 4), rng.uniform_int(0, 30),
                               rng.uniform_int(1, 8), 1);
        b.name = "b";
        p.cus = {a, b};

        CostView view;
        std::vector<std::vector<long long>> counts;
        const int layers = rng.uniform_int(1, 5);
        for (int l = 0; l < layers; ++l) {
            CostItem item;
            item.layer = "l" + std::to_string(l);
            item.geom = geom(rng.uniform_int(1, 16), 16, rng.uniform_int(1, 8),
                             rng.uniform_int(1, 8), 3);
            item.branches = {{0, LayerOp::Conv}, {1, LayerOp::Conv}};
            view.items.push_back(item);
            const long long n0 = rng.uniform_int(0, 16);
            counts.push_back({n0, 16 - n0});
        }
        CostReport rep = evaluate_exact(view, p, counts);
        double makespan_sum = 0.0;
        for (const auto& row : rep.layers) makespan_sum += row.makespan;
        CHECK(rep.energy_mw_cycles == p.idle_power_mw * makespan_sum);
        CHECK(rep.active_mw_cycles == 0.0);
    }
}

TEST_CASE("relaxed latency with one-hot counts matches exact under linear rounding") {
    Rng rng(777);
    for (int i = 0; i < 30; ++i) {
        PlatformProfile p;
        p.name = "toy";
        p.idle_power_mw = 1.0;
        CUProfile a = cu_basic(rng.uniform_int(1, 4), rng.uniform_int(0, 20),
                               rng.uniform_int(1, 8), rng.uniform_int(1, 8));
        a.name = "a";
        CUProfile b = cu_basic(rng.uniform_int(1, 4), rng.uniform_int(0, 20),
                               rng.uniform_int(1, 8), rng.uniform_int(1, 8));
        b.name = "b";
        p.cus = {a, b};

        CostView view;
        CostItem item;
        item.layer = "l";
        item.geom = geom(rng.uniform_int(1, 16), 12, rng.uniform_int(2, 6),
                         rng.uniform_int(2, 6), 3);
        item.branches = {{0, LayerOp::Conv}, {1, LayerOp::Conv}};
        view.items.push_back(item);

        const bool first = rng.uniform_int(0, 1) == 0;
        Tensor eff = Tensor::from_data({2}, {first ? 12.0f : 0.0f, first ? 0.0f : 12.0f});
        RelaxedCostOptions opt;
        opt.tau = 1e-7;
        const double relaxed = latency_cost_relaxed(view, p, {eff}, opt).item();
        const double exact_linear =
            latency_scalar(view, p, {{first ? 12.0 : 0.0, first ? 0.0 : 12.0}}, false, true, 0.0);
        CHECK(relaxed == doctest::Approx(exact_linear).epsilon(1e-4));
    }
}

TEST_CASE("relaxed costs are differentiable in the channel fractions") {
    Rng rng(888);
    // both branches get commensurate latency slopes; a branch whose slope is
    // orders of magnitude below the total (like the analog array) cannot be
    // resolved by float32 central differences at all
    PlatformProfile p;
    p.name = "balanced";
    p.idle_power_mw = 2.0;
    CUProfile a = cu_basic(1.0, 5.0, 4, 2);
    a.name = "a";
    a.precision = {Precision::Kind::Affine, 8};
    a.active_power_mw = 3.0;
    CUProfile b = cu_basic(2.0, 10.0, 8, 1);
    b.name = "b";
    b.precision = {Precision::Kind::Ternary, 8};
    b.active_power_mw = 1.5;
    p.cus = {a, b};
    p.validate();

    CostView view;
    CostItem item;
    item.layer = "l";
    item.geom = geom(4, 10, 1, 3, 3);
    item.branches = {{0, LayerOp::Conv}, {1, LayerOp::Conv}};
    view.items.push_back(item);
    // the automatic tau tracks the current latencies outside the tape, so
    // finite differences only line up when tau is pinned; the wide tau and
    // step keep float32 rounding and smooth-max curvature both resolvable
    RelaxedCostOptions opt;
    opt.tau = 200.0;
    const float h = 0.1f;
    for (int i = 0; i < 20; ++i) {
        Tensor eff = Tensor::rand_uniform({2}, rng, 0.5f, 4.5f, true);
        auto flat = [&] { return latency_cost_relaxed(view, p, {eff}, opt); };
        CHECK(gradcheck(flat, {eff}, h) < 1e-3);
        auto fen = [&] { return energy_cost_relaxed(view, p, {eff}, opt); };
        CHECK(gradcheck(fen, {eff}, h) < 1e-3);
    }
}

TEST_CASE("builtin platforms validate and resolve by name") {
    for (const auto& name : builtin_platform_names()) {
        PlatformProfile p = resolve_platform(name);
        CHECK(p.name == name);
        CHECK(p.cus.size() == 2);
        p.validate();
    }
    CHECK_THROWS_AS((void)resolve_platform("no-such-platform"), Error);
}

TEST_CASE("platform text round-trips through the parser") {
    const PlatformProfile p = builtin_platform("darkside-like");
    const std::string text = serialize_platform(p);
    const PlatformProfile q = parse_platform(text);
    CHECK(q.name == p.name);
    CHECK(q.idle_power_mw == p.idle_power_mw);
    CHECK(q.clock_hz == p.clock_hz);
    CHECK(q.default_cu == p.default_cu);
    REQUIRE(q.cus.size() == p.cus.size());
    for (size_t i = 0; i < p.cus.size(); ++i) {
        CHECK(q.cus[i].name == p.cus[i].name);
        CHECK(q.cus[i].op == p.cus[i].op);
        CHECK(q.cus[i].precision == p.cus[i].precision);
        CHECK(q.cus[i].p_out == p.cus[i].p_out);
        CHECK(q.cus[i].p_in == p.cus[i].p_in);
        CHECK(q.cus[i].cycles_per_step == p.cus[i].cycles_per_step);
        CHECK(q.cus[i].overhead_cycles == p.cus[i].overhead_cycles);
        CHECK(q.cus[i].active_power_mw == p.cus[i].active_power_mw);
        CHECK(q.cus[i].input_capacity == p.cus[i].input_capacity);
    }
    CHECK(serialize_platform(q) == text);
}

TEST_CASE("malformed platform text is rejected with a config error") {
    CHECK_THROWS_AS((void)parse_platform("not a platform"), Error);
    try {
        (void)parse_platform("format_version 1\nplatform x\nidle_power_mw -3\n");
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.tag() == std::string("E_PLATFORM"));
    }
}

TEST_CASE("capacity-limited units reject oversized layers") {
    const PlatformProfile p = builtin_platform("diana-like");
    const CUProfile& analog = p.cu(p.cu_index("analog"));
    CHECK(cu_fits(analog, geom(16, 16, 8, 8, 3), LayerOp::Conv));     // 16*9 = 144
    CHECK_FALSE(cu_fits(analog, geom(256, 16, 8, 8, 3), LayerOp::Conv)); // 256*9 > 1152
}
