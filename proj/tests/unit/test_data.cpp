#include <cmath>
#include <cstdio>
#include <map>
#include <vector>

#include "doctest.h"

#include "chanmap/data.hpp"
#include "chanmap/error.hpp"
#include "chanmap/io.hpp"

using namespace chanmap;

namespace {

// Writes a batch file of 3073-byte records with deterministic pixel ramps.
void write_batch(const std::string& path, int records, int label_base) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f != nullptr);
    for (int r = 0; r < records; ++r) {
        unsigned char rec[3073];
        rec[0] = static_cast<unsigned char>((label_base + r) % 10);
        for (int i = 0; i < 3072; ++i)
            rec[i + 1] = static_cast<unsigned char>((r * 37 + i) % 256);
        REQUIRE(std::fwrite(rec, 1, sizeof(rec), f) == sizeof(rec));
    }
    std::fclose(f);
}

std::string make_fixture_dir(const std::string& name, int per_batch, int test_records) {
    const std::string dir = "/tmp/" + name;
    ensure_dir(dir);
    for (int b = 1; b <= 5; ++b)
        write_batch(dir + "/data_batch_" + std::to_string(b) + ".bin", per_batch, b);
    write_batch(dir + "/test_batch.bin", test_records, 0);
    return dir;
}

} // namespace

TEST_CASE("synthetic splits have the advertised shapes and balance") {
    const Dataset ds = gen_synthetic(4, 100, 40, 7, 3, 8, 8);
    CHECK(ds.classes == 4);
    CHECK(ds.train.images.shape() == std::vector<int>{90, 3, 8, 8});
    CHECK(ds.val.images.shape() == std::vector<int>{10, 3, 8, 8});
    CHECK(ds.test.images.shape() == std::vector<int>{40, 3, 8, 8});
    CHECK(ds.train.labels.size() == 90);
    CHECK(ds.val.labels.size() == 10);
    CHECK(ds.test.labels.size() == 40);

    // round-robin assignment keeps train+val balanced to within one sample
    std::map<int, int> counts;
    for (int y : ds.train.labels) ++counts[y];
    for (int y : ds.val.labels) ++counts[y];
    REQUIRE(counts.size() == 4);
    for (auto& [label, n] : counts) {
        CHECK(label >= 0);
        CHECK(label < 4);
        CHECK(n == 25);
    }
}

TEST_CASE("synthetic generation is a pure function of the seed") {
    const Dataset a = gen_synthetic(3, 60, 30, 99, 3, 6, 6);
    const Dataset b = gen_synthetic(3, 60, 30, 99, 3, 6, 6);
    REQUIRE(a.train.images.numel() == b.train.images.numel());
    for (long long i = 0; i < a.train.images.numel(); ++i)
        CHECK(a.train.images.data()[i] == b.train.images.data()[i]);
    CHECK(a.train.labels == b.train.labels);
    CHECK(a.val.labels == b.val.labels);
    CHECK(a.test.labels == b.test.labels);

    const Dataset c = gen_synthetic(3, 60, 30, 100, 3, 6, 6);
    bool any_diff = false;
    for (long long i = 0; i < a.train.images.numel() && !any_diff; ++i)
        any_diff = a.train.images.data()[i] != c.train.images.data()[i];
    CHECK(any_diff);
}

TEST_CASE("training channels are normalized to zero mean and unit spread") {
    const Dataset ds = gen_synthetic(3, 90, 30, 5, 3, 8, 8);
    const Tensor& x = ds.train.images;
    const int N = x.dim(0);
    const long long S = static_cast<long long>(x.dim(2)) * x.dim(3);
    for (int c = 0; c < 3; ++c) {
        double acc = 0.0, acc2 = 0.0;
        for (int n = 0; n < N; ++n) {
            const float* p = x.data().data() + (static_cast<long long>(n) * 3 + c) * S;
            for (long long i = 0; i < S; ++i) {
                acc += p[i];
                acc2 += static_cast<double>(p[i]) * p[i];
            }
        }
        const double count = static_cast<double>(N) * S;
        const double mean = acc / count;
        const double var = acc2 / count - mean * mean;
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-3));
        CHECK(var == doctest::Approx(1.0).epsilon(1e-2));
        CHECK(ds.channel_std[static_cast<size_t>(c)] > 0.0f);
    }
}

TEST_CASE("synthetic rejects degenerate sizes") {
    CHECK_THROWS_AS(gen_synthetic(1, 50, 20, 1), Error);
    CHECK_THROWS_AS(gen_synthetic(4, 4, 20, 1), Error);
    CHECK_THROWS_AS(gen_synthetic(4, 50, 2, 1), Error);
}

TEST_CASE("binary batches read back with exact pixels and labels") {
    const std::string dir = make_fixture_dir("chanmap_cifar_fixture", 6, 10);
    const Dataset ds = load_cifar10_binary(dir, 0, 0, 3, 0.0);

    CHECK(ds.train.size() == 30);
    CHECK(ds.val.size() == 0);
    CHECK(ds.test.size() == 10);
    CHECK(ds.classes == 10);

    // undo the normalization and compare one full image with its record
    const Tensor& x = ds.test.images;
    auto xd = x.data();
    int checked = 0;
    for (int n = 0; n < ds.test.size(); ++n) {
        // test labels cycle 0..9 from label_base 0, so the label identifies r
        const int r = ds.test.labels[static_cast<size_t>(n)];
        bool match = true;
        for (int i = 0; i < 3072 && match; ++i) {
            const int c = i / 1024;
            const float norm = xd[static_cast<long long>(n) * 3072 + i];
            const float raw = norm * ds.channel_std[static_cast<size_t>(c)] +
                              ds.channel_mean[static_cast<size_t>(c)];
            const int byte = static_cast<int>(std::lround(raw * 255.0f));
            if (byte != (r * 37 + i) % 256) match = false;
        }
        if (match) ++checked;
    }
    CHECK(checked == ds.test.size());
}

TEST_CASE("subset limits and seeding select reproducible rows") {
    const std::string dir = make_fixture_dir("chanmap_cifar_subset", 8, 12);
    const Dataset a = load_cifar10_binary(dir, 20, 6, 11, 0.25);
    CHECK(a.train.size() == 15);
    CHECK(a.val.size() == 5);
    CHECK(a.test.size() == 6);

    const Dataset b = load_cifar10_binary(dir, 20, 6, 11, 0.25);
    CHECK(a.train.labels == b.train.labels);
    CHECK(a.test.labels == b.test.labels);
    for (long long i = 0; i < a.train.images.numel(); ++i)
        CHECK(a.train.images.data()[i] == b.train.images.data()[i]);

    const Dataset c = load_cifar10_binary(dir, 20, 6, 12, 0.25);
    CHECK((a.train.labels != c.train.labels || a.test.labels != c.test.labels));
}

TEST_CASE("corrupt batch files are rejected") {
    const std::string dir = "/tmp/chanmap_cifar_bad";
    ensure_dir(dir);
    for (int b = 1; b <= 5; ++b)
        write_batch(dir + "/data_batch_" + std::to_string(b) + ".bin", 2, b);
    // truncated final record
    {
        std::FILE* f = std::fopen((dir + "/test_batch.bin").c_str(), "wb");
        REQUIRE(f != nullptr);
        unsigned char half[100] = {0};
        std::fwrite(half, 1, sizeof(half), f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_cifar10_binary(dir, 0, 0, 1), Error);

    // label byte out of range
    {
        std::FILE* f = std::fopen((dir + "/test_batch.bin").c_str(), "wb");
        REQUIRE(f != nullptr);
        unsigned char rec[3073] = {0};
        rec[0] = 55;
        std::fwrite(rec, 1, sizeof(rec), f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_cifar10_binary(dir, 0, 0, 1), Error);

    CHECK_THROWS_AS(load_cifar10_binary("/tmp/chanmap_no_such_dir", 0, 0, 1), Error);
}

TEST_CASE("gather keeps rows and labels aligned") {
    Tensor x = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
    Tensor g = gather_rows(x, {2, 0});
    CHECK(g.shape() == std::vector<int>{2, 2});
    CHECK(g.data()[0] == 5.0f);
    CHECK(g.data()[1] == 6.0f);
    CHECK(g.data()[2] == 1.0f);
    CHECK(g.data()[3] == 2.0f);
    CHECK(gather_labels({7, 8, 9}, {2, 0}) == std::vector<int>{9, 7});
}
