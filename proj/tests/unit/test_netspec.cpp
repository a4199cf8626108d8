#include <vector>

#include "doctest.h"

#include "chanmap/netspec.hpp"

using namespace chanmap;

TEST_CASE("builtin names resolve and validate") {
    for (const auto& name : builtin_spec_names()) {
        const NetworkSpec s = builtin_spec(name);
        CHECK(s.name == name);
        CHECK_NOTHROW(s.validate());
        CHECK(s.geometries().size() == s.layers.size());
    }
    CHECK_THROWS_AS((void)builtin_spec("no-such-net"), Error);
}

TEST_CASE("geometry chain of the small 3-conv network") {
    const NetworkSpec s = builtin_spec("tiny-cnn");
    const auto g = s.geometries();
    REQUIRE(g.size() == 5);
    CHECK(g[0].c_in == 3);
    CHECK(g[0].c_out == 8);
    CHECK(g[0].out_h == 16);
    CHECK(g[1].c_out == 16);
    CHECK(g[1].out_h == 8);
    CHECK(g[2].c_out == 16);
    CHECK(g[2].out_h == 8);
    CHECK(g[3].c_out == 16); // pooling keeps width
    CHECK(g[3].out_h == 1);
    CHECK(g[4].c_in == 16);
    CHECK(g[4].c_out == s.classes);
}

TEST_CASE("half-width depthwise seed keeps channels in multiples of 8") {
    const NetworkSpec full = builtin_spec("mbv1-micro");
    const NetworkSpec half = builtin_spec("mbv1-micro-w50");
    REQUIRE(full.layers.size() == half.layers.size());
    const auto gf = full.geometries();
    const auto gh = half.geometries();
    for (size_t i = 0; i < gf.size(); ++i) {
        if (full.layers[i].op == LayerOp::Linear) continue;
        CHECK(gh[i].c_out % 8 == 0);
        CHECK(gh[i].c_out * 2 == gf[i].c_out);
    }
}

TEST_CASE("residual joins reference earlier layers with matching widths") {
    const NetworkSpec s = builtin_spec("resnet8-slim");
    const auto g = s.geometries();
    for (size_t i = 0; i < s.layers.size(); ++i) {
        const int a = s.layers[i].add_from;
        if (a == LayerSpec::kNone) continue;
        REQUIRE(a < static_cast<int>(i));
        CHECK(g[static_cast<size_t>(a)].c_out == g[i].c_out);
        CHECK(g[static_cast<size_t>(a)].out_h == g[i].out_h);
    }
}

TEST_CASE("spec text round-trips through the parser") {
    for (const auto& name : builtin_spec_names()) {
        const NetworkSpec s = builtin_spec(name);
        const std::string text = serialize_network_spec(s);
        const NetworkSpec r = parse_network_spec(text);
        CHECK(serialize_network_spec(r) == text);
        REQUIRE(r.layers.size() == s.layers.size());
        for (size_t i = 0; i < s.layers.size(); ++i) {
            CHECK(r.layers[i].name == s.layers[i].name);
            CHECK(r.layers[i].op == s.layers[i].op);
            CHECK(r.layers[i].map == s.layers[i].map);
            CHECK(r.layers[i].input_from == s.layers[i].input_from);
            CHECK(r.layers[i].add_from == s.layers[i].add_from);
        }
    }
}

TEST_CASE("shape inconsistencies are rejected") {
    NetworkSpec s = builtin_spec("tiny-cnn");
    s.layers[4].c_out = 7; // classifier width must equal the class count
    CHECK_THROWS_AS(s.validate(), Error);

    NetworkSpec dup = builtin_spec("tiny-cnn");
    dup.layers[1].name = "stem";
    CHECK_THROWS_AS(dup.validate(), Error);

    try {
        (void)parse_network_spec("garbage line\n");
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.tag() == std::string("E_NET_SPEC"));
    }
}

TEST_CASE("depthwise layers inherit their input width") {
    const NetworkSpec s = builtin_spec("mbv1-micro");
    const auto g = s.geometries();
    for (size_t i = 0; i < s.layers.size(); ++i)
        if (s.layers[i].op == LayerOp::DwConv) CHECK(g[i].c_in == g[i].c_out);
}

TEST_CASE("operator-mapped layers require equal input and output widths") {
    NetworkSpec s = builtin_spec("tiny-cnn");
    s.layers[1].map = MapMode::Operator; // 8 -> 16 cannot take a depthwise branch
    CHECK_THROWS_AS(s.validate(), Error);
}
