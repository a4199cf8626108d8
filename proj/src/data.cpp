#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>

#include "chanmap/data.hpp"
#include "chanmap/error.hpp"

namespace chanmap {

namespace {

constexpr int kImageBytes = 3072;
constexpr int kRecordBytes = kImageBytes + 1;

// Appends the records of one batch file, pixels scaled to [0,1].
void load_batch_file(const std::string& path, std::vector<float>& pixels,
                     std::vector<int>& labels) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    check(f != nullptr, "E_DATA", "cannot open data file '" + path + "'");
    std::vector<unsigned char> rec(kRecordBytes);
    long long index = 0;
    for (;;) {
        const size_t got = std::fread(rec.data(), 1, rec.size(), f);
        if (got == 0) break;
        if (got != rec.size()) {
            std::fclose(f);
            fail("E_DATA", "truncated record " + std::to_string(index) + " in '" + path + "'");
        }
        if (rec[0] >= 10) {
            std::fclose(f);
            fail("E_DATA", "record " + std::to_string(index) + " in '" + path +
                               "' has label " + std::to_string(static_cast<int>(rec[0])));
        }
        labels.push_back(static_cast<int>(rec[0]));
        for (int i = 0; i < kImageBytes; ++i)
            pixels.push_back(static_cast<float>(rec[static_cast<size_t>(i) + 1]) / 255.0f);
        ++index;
    }
    std::fclose(f);
}

// Seeded subset of [0,n): shuffle then keep the first `limit` (or all).
std::vector<int> pick_subset(int n, int limit, Rng& rng) {
    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx.begin(), idx.end());
    if (limit > 0 && limit < n) idx.resize(static_cast<size_t>(limit));
    return idx;
}

void normalize_in_place(Tensor& x, const std::vector<float>& mean,
                        const std::vector<float>& stddev) {
    const int N = x.dim(0);
    const int C = x.dim(1);
    const long long S = static_cast<long long>(x.dim(2)) * x.dim(3);
    auto d = x.data();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            float* p = d.data() + (static_cast<long long>(n) * C + c) * S;
            const float m = mean[static_cast<size_t>(c)];
            const float inv = 1.0f / stddev[static_cast<size_t>(c)];
            for (long long i = 0; i < S; ++i) p[i] = (p[i] - m) * inv;
        }
}

void compute_channel_stats(const Tensor& x, std::vector<float>& mean,
                           std::vector<float>& stddev) {
    const int N = x.dim(0);
    const int C = x.dim(1);
    const long long S = static_cast<long long>(x.dim(2)) * x.dim(3);
    mean.assign(static_cast<size_t>(C), 0.0f);
    stddev.assign(static_cast<size_t>(C), 0.0f);
    auto d = x.data();
    for (int c = 0; c < C; ++c) {
        double acc = 0.0, acc2 = 0.0;
        for (int n = 0; n < N; ++n) {
            const float* p = d.data() + (static_cast<long long>(n) * C + c) * S;
            for (long long i = 0; i < S; ++i) {
                acc += p[i];
                acc2 += static_cast<double>(p[i]) * p[i];
            }
        }
        const double count = static_cast<double>(N) * S;
        const double m = acc / count;
        const double var = std::max(acc2 / count - m * m, 1e-12);
        mean[static_cast<size_t>(c)] = static_cast<float>(m);
        stddev[static_cast<size_t>(c)] = static_cast<float>(std::sqrt(var));
    }
}

// Carves val_fraction of the training rows off into the validation split.
void split_train_val(Dataset& ds, Tensor all_x, std::vector<int> all_y, double val_fraction,
                     Rng& rng) {
    const int n = all_x.dim(0);
    check(val_fraction >= 0.0 && val_fraction < 1.0, "E_CONFIG",
          "validation fraction must be in [0,1)");
    int n_val = static_cast<int>(std::llround(val_fraction * n));
    n_val = std::min(n_val, n - 1);
    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx.begin(), idx.end());
    std::vector<int> val_idx(idx.begin(), idx.begin() + n_val);
    std::vector<int> train_idx(idx.begin() + n_val, idx.end());
    ds.train.images = gather_rows(all_x, train_idx);
    ds.train.labels = gather_labels(all_y, train_idx);
    ds.train.tag = "train";
    ds.val.images = gather_rows(all_x, val_idx);
    ds.val.labels = gather_labels(all_y, val_idx);
    ds.val.tag = "val";
}

} // namespace

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
    check(x.defined() && x.ndim() >= 1, "E_INTERNAL", "gather_rows needs a tensor");
    std::vector<int> shape = x.shape();
    shape[0] = static_cast<int>(idx.size());
    const long long row = x.numel() / x.dim(0);
    Tensor out = Tensor::zeros(shape);
    auto xd = x.data();
    auto od = out.data();
    for (size_t i = 0; i < idx.size(); ++i) {
        check(idx[i] >= 0 && idx[i] < x.dim(0), "E_INTERNAL", "gather_rows index out of range");
        std::copy(xd.data() + idx[i] * row, xd.data() + (idx[i] + 1) * row,
                  od.data() + static_cast<long long>(i) * row);
    }
    return out;
}

std::vector<int> gather_labels(const std::vector<int>& y, const std::vector<int>& idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(y.at(static_cast<size_t>(i)));
    return out;
}

Dataset load_cifar10_binary(const std::string& dir, int train_limit, int test_limit,
                            unsigned long long seed, double val_fraction) {
    std::vector<float> train_px, test_px;
    std::vector<int> train_y, test_y;
    for (int b = 1; b <= 5; ++b)
        load_batch_file(dir + "/data_batch_" + std::to_string(b) + ".bin", train_px, train_y);
    load_batch_file(dir + "/test_batch.bin", test_px, test_y);
    check(!train_y.empty() && !test_y.empty(), "E_DATA", "empty data files in '" + dir + "'");

    const int n_train_all = static_cast<int>(train_y.size());
    const int n_test_all = static_cast<int>(test_y.size());
    Tensor train_all = Tensor::from_data({n_train_all, 3, 32, 32}, std::move(train_px));
    Tensor test_all = Tensor::from_data({n_test_all, 3, 32, 32}, std::move(test_px));

    Rng rng(seed);
    const std::vector<int> tr_idx = pick_subset(n_train_all, train_limit, rng);
    const std::vector<int> te_idx = pick_subset(n_test_all, test_limit, rng);
    Tensor tr_x = gather_rows(train_all, tr_idx);
    std::vector<int> tr_y = gather_labels(train_y, tr_idx);

    Dataset ds;
    ds.classes = 10;
    ds.test.images = gather_rows(test_all, te_idx);
    ds.test.labels = gather_labels(test_y, te_idx);
    ds.test.tag = "test";
    split_train_val(ds, std::move(tr_x), std::move(tr_y), val_fraction, rng);

    compute_channel_stats(ds.train.images, ds.channel_mean, ds.channel_std);
    normalize_in_place(ds.train.images, ds.channel_mean, ds.channel_std);
    normalize_in_place(ds.val.images, ds.channel_mean, ds.channel_std);
    normalize_in_place(ds.test.images, ds.channel_mean, ds.channel_std);
    return ds;
}

Dataset gen_synthetic(int classes, int n_train, int n_test, unsigned long long seed,
                      int channels, int height, int width, double val_fraction) {
    check(classes >= 2, "E_CONFIG", "synthetic data needs at least two classes");
    check(n_train >= 2 * classes && n_test >= classes, "E_CONFIG",
          "synthetic split sizes too small for the class count");
    Rng rng(seed);
    const long long dim = static_cast<long long>(channels) * height * width;
    std::vector<float> templates(static_cast<size_t>(classes) * dim);
    for (auto& v : templates) v = rng.normal(0.0f, 0.8f);

    auto make_split = [&](int n, Tensor& x, std::vector<int>& y) {
        // Round-robin classes, then shuffle rows: balanced within one sample.
        std::vector<int> order(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i % classes;
        rng.shuffle(order.begin(), order.end());
        x = Tensor::zeros({n, channels, height, width});
        y = order;
        auto xd = x.data();
        for (int i = 0; i < n; ++i) {
            const float* t = templates.data() + static_cast<long long>(order[static_cast<size_t>(i)]) * dim;
            float* row = xd.data() + static_cast<long long>(i) * dim;
            for (long long k = 0; k < dim; ++k) row[k] = t[k] + rng.normal(0.0f, 0.6f);
        }
    };

    Tensor tr_x, te_x;
    std::vector<int> tr_y, te_y;
    make_split(n_train, tr_x, tr_y);
    make_split(n_test, te_x, te_y);

    Dataset ds;
    ds.classes = classes;
    ds.test.images = std::move(te_x);
    ds.test.labels = std::move(te_y);
    ds.test.tag = "test";
    split_train_val(ds, std::move(tr_x), std::move(tr_y), val_fraction, rng);

    compute_channel_stats(ds.train.images, ds.channel_mean, ds.channel_std);
    normalize_in_place(ds.train.images, ds.channel_mean, ds.channel_std);
    normalize_in_place(ds.val.images, ds.channel_mean, ds.channel_std);
    normalize_in_place(ds.test.images, ds.channel_mean, ds.channel_std);
    return ds;
}

std::string default_data_dir() {
    const char* v = std::getenv("CHANMAP_DATA_DIR");
    return v ? std::string(v) : std::string();
}

} // namespace chanmap
