#include <algorithm>
#include <numeric>
#include <set>
#include <vector>

#include "doctest.h"

#include "chanmap/export.hpp"
#include "chanmap/rng.hpp"

using namespace chanmap;

namespace {

// Fixed per-channel CU choice written straight into the banks.
void force_assignment(Network& net, const std::vector<std::vector<int>>& per_layer) {
    Assignment a;
    size_t k = 0;
    for (auto& L : net.layers()) {
        if (!L.is_mapped()) continue;
        LayerAssignment la;
        la.layer = L.spec.name;
        REQUIRE(k < per_layer.size());
        la.cu_of_channel.resize(static_cast<size_t>(L.geom.c_out));
        for (int c = 0; c < L.geom.c_out; ++c)
            la.cu_of_channel[static_cast<size_t>(c)] =
                L.mapped->branches[static_cast<size_t>(
                                       per_layer[k][static_cast<size_t>(c) %
                                                    per_layer[k].size()])]
                    .cu;
        a.layers.push_back(std::move(la));
        ++k;
    }
    net.apply_assignment(a);
}

std::unique_ptr<Network> ready_net(unsigned long long seed,
                                   const std::vector<std::vector<int>>& pattern) {
    auto net = build_supernet(builtin_spec("tiny-cnn"), builtin_platform("diana-like"), seed);
    // a couple of passes give the activation quantizers their statistics
    Rng rng(seed + 1);
    Tensor x = Tensor::rand_normal({4, 3, 32, 32}, rng, 0.0f, 1.0f);
    {
        NoGradGuard ng;
        PassConfig cfg;
        cfg.mode = PassConfig::Mode::Blend;
        net->forward(x, cfg);
    }
    net->freeze_quantizers();
    force_assignment(*net, pattern);
    return net;
}

bool is_permutation_of_range(const std::vector<int>& p) {
    std::vector<int> s = p;
    std::sort(s.begin(), s.end());
    for (size_t i = 0; i < s.size(); ++i)
        if (s[i] != static_cast<int>(i)) return false;
    return true;
}

} // namespace

TEST_CASE("reorder groups interleaved channels and keeps the function") {
    auto net = ready_net(
        3, {{0, 1, 1, 0, 1, 0, 0, 1, 0, 1, 1, 0, 1, 0, 0, 1}, {1, 0}});
    Rng rng(9);
    Tensor x = Tensor::rand_normal({2, 3, 32, 32}, rng, 0.0f, 1.0f);
    NoGradGuard ng;
    PassConfig cfg;
    cfg.mode = PassConfig::Mode::Discrete;
    Tensor before = net->forward(x, cfg);

    const Assignment a = net->assignment();
    const ReorderResult rr = reorder_channels(*net, a);
    Tensor after = net->forward(x, cfg);
    REQUIRE(after.numel() == before.numel());
    double worst = 0.0;
    for (long long i = 0; i < after.numel(); ++i)
        worst = std::max(worst, static_cast<double>(std::abs(after.data()[i] - before.data()[i])));
    CHECK(worst < 1e-4);

    // the interleaved pattern splits stably into 0-channels then 1-channels
    const auto& p = rr.perm_of("l1");
    CHECK(p == std::vector<int>{0, 3, 5, 6, 8, 11, 13, 14, 1, 2, 4, 7, 9, 10, 12, 15});
    for (auto& perm : rr.perms) CHECK(is_permutation_of_range(perm));

    // channels now grouped: assignment is non-decreasing per layer
    const Assignment b = net->assignment();
    for (const auto& la : b.layers)
        CHECK(std::is_sorted(la.cu_of_channel.begin(), la.cu_of_channel.end()));
}

TEST_CASE("already grouped channels reorder under the identity") {
    auto net = ready_net(
        5, {{0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1}, {0, 1}});
    const ReorderResult rr = reorder_channels(*net, net->assignment());
    const auto& p = rr.perm_of("l1");
    for (size_t i = 0; i < p.size(); ++i) CHECK(p[i] == static_cast<int>(i));
}

TEST_CASE("sublayers tile each mapped layer by CU runs") {
    auto net = ready_net(
        7, {{0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1}, {0}});
    reorder_channels(*net, net->assignment());
    const MappingArtifact art = split_sublayers(*net, CostTarget::Latency);

    const ArtifactLayer& l1 = art.layer("l1");
    REQUIRE(l1.mapped);
    REQUIRE(l1.subs.size() == 2);
    CHECK(l1.subs[0].lo == 0);
    CHECK(l1.subs[0].hi == 3);
    CHECK(l1.subs[1].lo == 3);
    CHECK(l1.subs[1].hi == 16);

    const ArtifactLayer& l2 = art.layer("l2");
    REQUIRE(l2.mapped);
    REQUIRE(l2.subs.size() == 1);
    CHECK(l2.subs[0].lo == 0);
    CHECK(l2.subs[0].hi == 16);

    for (const auto& al : art.layers) {
        if (!al.mapped) continue;
        int cursor = 0;
        std::set<std::string> seen;
        for (const auto& sub : al.subs) {
            CHECK(sub.lo == cursor);
            CHECK(sub.hi > sub.lo);
            CHECK(seen.insert(sub.cu).second);
            cursor = sub.hi;
        }
        CHECK(cursor == static_cast<int>(al.assignment.size()));
    }

    // int8 payloads carry scale and absmax, ternary only the scale
    for (const auto& sub : l1.subs) {
        CHECK(art.blob.has(sub.weight_key));
        if (sub.precision.kind == Precision::Kind::Affine) {
            CHECK(art.blob.has(sub.scale_key));
            CHECK(art.blob.has(sub.absmax_key));
        } else if (sub.precision.kind == Precision::Kind::Ternary) {
            CHECK(art.blob.has(sub.scale_key));
            CHECK(sub.absmax_key.empty());
        }
    }
}

TEST_CASE("ungrouped assignment is rejected by the splitter") {
    auto net = ready_net(11, {{0, 1, 0, 1}, {0}});
    CHECK_THROWS_AS((void)split_sublayers(*net, CostTarget::Latency), Error);
}

TEST_CASE("artifact survives a save and load round trip") {
    auto net = ready_net(13, {{1, 0, 0, 1, 1, 0, 1, 0}, {0, 1}});
    const MappingArtifact art = export_mapping(*net, CostTarget::Latency);
    const std::string text = "/tmp/chanmap_art.txt";
    const std::string blob = "/tmp/chanmap_art.blob";
    save_artifact(art, text, blob);
    const MappingArtifact back = load_artifact(text);

    CHECK(back.format_version == art.format_version);
    CHECK(back.spec.name == art.spec.name);
    CHECK(back.platform.name == art.platform.name);
    CHECK(back.probe_checksum == art.probe_checksum);
    CHECK(back.probe_seed == art.probe_seed);
    CHECK(back.probe_count == art.probe_count);
    CHECK(back.cost.total_cycles == art.cost.total_cycles);
    CHECK(back.cost.energy_uj == art.cost.energy_uj);
    REQUIRE(back.layers.size() == art.layers.size());
    for (size_t i = 0; i < art.layers.size(); ++i) {
        CHECK(back.layers[i].name == art.layers[i].name);
        CHECK(back.layers[i].assignment == art.layers[i].assignment);
        CHECK(back.layers[i].permutation == art.layers[i].permutation);
        REQUIRE(back.layers[i].subs.size() == art.layers[i].subs.size());
        for (size_t j = 0; j < art.layers[i].subs.size(); ++j) {
            CHECK(back.layers[i].subs[j].cu == art.layers[i].subs[j].cu);
            CHECK(back.layers[i].subs[j].lo == art.layers[i].subs[j].lo);
            CHECK(back.layers[i].subs[j].hi == art.layers[i].subs[j].hi);
        }
    }
    CHECK(back.blob.keys() == art.blob.keys());

    // a second save of the loaded artifact reproduces both files byte for byte
    const std::string text2 = "/tmp/chanmap_art2.txt";
    const std::string blob2 = "/tmp/chanmap_art2.blob";
    save_artifact(back, text2, blob2);
    CHECK(read_text_file(blob2) == read_text_file(blob));
    CHECK(verify_artifact_self(back).pass);
}

TEST_CASE("replay matches the discrete network it was cut from") {
    auto net = ready_net(17, {{0, 1, 1, 0, 0, 1, 0, 1}, {1, 0}});
    const MappingArtifact art = export_mapping(*net, CostTarget::Latency);
    Rng rng(42);
    Tensor x = Tensor::rand_normal({4, 3, 32, 32}, rng, 0.0f, 1.0f);
    const VerifyReport rep = verify_artifact(art, *net, x);
    CHECK(rep.pass);
    CHECK(rep.checksum_ok);
    CHECK(rep.max_abs_dev < 1e-4);
    CHECK(rep.first_bad_layer.empty());
    CHECK(!rep.layer_devs.empty());
}

TEST_CASE("a corrupted payload is caught and located") {
    auto net = ready_net(19, {{0, 0, 1, 1, 0, 0, 1, 1}, {0, 1}});
    MappingArtifact art = export_mapping(*net, CostTarget::Latency);

    // shift one weight code of the first mapped layer's first sub-layer
    const ArtifactLayer& l1 = art.layer("l1");
    REQUIRE(!l1.subs.empty());
    const std::string key = l1.subs[0].weight_key;
    auto codes = art.blob.ints(key);
    codes[0] += 5;
    art.blob.put_ints(key, codes);

    const VerifyReport self = verify_artifact_self(art);
    CHECK_FALSE(self.pass);
    CHECK_FALSE(self.checksum_ok);

    Rng rng(43);
    Tensor x = Tensor::rand_normal({4, 3, 32, 32}, rng, 0.0f, 1.0f);
    const VerifyReport rep = verify_artifact(art, *net, x);
    CHECK_FALSE(rep.pass);
    CHECK(rep.first_bad_layer == "l1");
}

TEST_CASE("random assignments always export into contiguous tiles") {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> pat1(8), pat2(16);
        for (auto& v : pat1) v = static_cast<int>(rng.uniform_int(0, 1));
        for (auto& v : pat2) v = static_cast<int>(rng.uniform_int(0, 1));
        auto net = ready_net(100 + static_cast<unsigned long long>(trial), {pat1, pat2});
        const MappingArtifact art = export_mapping(*net, CostTarget::Latency);
        for (const auto& al : art.layers) {
            if (!al.mapped) continue;
            CHECK(std::is_sorted(al.assignment.begin(), al.assignment.end()));
            int cursor = 0;
            for (const auto& sub : al.subs) {
                CHECK(sub.lo == cursor);
                cursor = sub.hi;
            }
            CHECK(cursor == static_cast<int>(al.assignment.size()));
        }
        CHECK(verify_artifact_self(art).pass);
    }
}
