#pragma once

#include <string>
#include <vector>

#include "chanmap/rng.hpp"
#include "chanmap/tensor.hpp"

namespace chanmap {

struct DataSplit {
    Tensor images; // [n,C,H,W], normalized per channel
    std::vector<int> labels;
    std::string tag;

    int size() const { return images.defined() ? images.dim(0) : 0; }
};

struct Dataset {
    DataSplit train;
    DataSplit val;
    DataSplit test;
    int classes = 0;
    // Normalization applied to every split, computed on the training images.
    std::vector<float> channel_mean;
    std::vector<float> channel_std;
};

// Loads 32x32 RGB batches stored as 3073-byte records (1 label byte, then
// 1024 bytes per channel, rows major). Train records come from
// data_batch_1..5.bin, test records from test_batch.bin. Limits select a
// seeded random subset; <= 0 keeps everything. val_fraction of the selected
// training rows becomes the validation split.
Dataset load_cifar10_binary(const std::string& dir, int train_limit, int test_limit,
                            unsigned long long seed, double val_fraction = 0.1);

// Gaussian class blobs around per-class templates: linearly separable by
// construction and balanced to within one sample per class.
Dataset gen_synthetic(int classes, int n_train, int n_test, unsigned long long seed,
                      int channels = 3, int height = 32, int width = 32,
                      double val_fraction = 0.1);

// New tensor holding the selected rows of x.
Tensor gather_rows(const Tensor& x, const std::vector<int>& idx);
std::vector<int> gather_labels(const std::vector<int>& y, const std::vector<int>& idx);

// Value of the data-directory environment variable, or "" if unset.
std::string default_data_dir();

} // namespace chanmap
