#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "chanmap/error.hpp"

namespace chanmap {

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
bool file_exists(const std::string& path);
void ensure_dir(const std::string& path);

// Shortest decimal form that parses back to the same float/double. Used for
// every number written into CSV and artifact files so reruns are byte-stable.
std::string format_float(float v);
std::string format_double(double v);

// FNV-1a over a byte stream.
std::uint64_t fnv1a64(const void* data, size_t len, std::uint64_t seed = 0xcbf29ce484222325ull);
std::string hex64(std::uint64_t v);

// Flat container of named numeric buffers with a binary file format. Keys are
// dotted paths; values are float vectors with shapes or integer vectors.
class TensorStore {
public:
    void put_floats(const std::string& key, std::vector<int> shape, std::vector<float> data);
    void put_ints(const std::string& key, std::vector<long long> data);
    void put_int(const std::string& key, long long v) { put_ints(key, {v}); }

    bool has(const std::string& key) const;
    const std::vector<float>& floats(const std::string& key) const;
    const std::vector<int>& shape(const std::string& key) const;
    const std::vector<long long>& ints(const std::string& key) const;
    long long int_value(const std::string& key) const;

    std::vector<std::string> keys() const;

    void save(const std::string& path) const;
    static TensorStore load(const std::string& path);

private:
    struct FloatEntry {
        std::vector<int> shape;
        std::vector<float> data;
    };
    std::map<std::string, FloatEntry> floats_;
    std::map<std::string, std::vector<long long>> ints_;
};

} // namespace chanmap
