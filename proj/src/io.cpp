#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "chanmap/io.hpp"

namespace chanmap {

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), "E_CONFIG", "cannot open '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    check(out.good(), "E_CONFIG", "cannot write '" + path + "'");
    out << content;
    check(out.good(), "E_CONFIG", "write failed for '" + path + "'");
}

bool file_exists(const std::string& path) {
    std::error_code ec;
    return std::filesystem::exists(path, ec);
}

void ensure_dir(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    check(!ec, "E_CONFIG", "cannot create directory '" + path + "'");
}

namespace {

template <typename T>
std::string shortest_round_trip(T v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace

std::string format_float(float v) { return shortest_round_trip(v); }
std::string format_double(double v) { return shortest_round_trip(v); }

std::uint64_t fnv1a64(const void* data, size_t len, std::uint64_t seed) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

void TensorStore::put_floats(const std::string& key, std::vector<int> shape,
                             std::vector<float> data) {
    long long n = 1;
    for (int d : shape) n *= d;
    check(n == static_cast<long long>(data.size()), "E_INTERNAL",
          "tensor store shape mismatch for '" + key + "'");
    floats_[key] = {std::move(shape), std::move(data)};
}

void TensorStore::put_ints(const std::string& key, std::vector<long long> data) {
    ints_[key] = std::move(data);
}

bool TensorStore::has(const std::string& key) const {
    return floats_.count(key) || ints_.count(key);
}

const std::vector<float>& TensorStore::floats(const std::string& key) const {
    auto it = floats_.find(key);
    check(it != floats_.end(), "E_CONFIG", "missing tensor '" + key + "'");
    return it->second.data;
}

const std::vector<int>& TensorStore::shape(const std::string& key) const {
    auto it = floats_.find(key);
    check(it != floats_.end(), "E_CONFIG", "missing tensor '" + key + "'");
    return it->second.shape;
}

const std::vector<long long>& TensorStore::ints(const std::string& key) const {
    auto it = ints_.find(key);
    check(it != ints_.end(), "E_CONFIG", "missing value '" + key + "'");
    return it->second;
}

long long TensorStore::int_value(const std::string& key) const {
    const auto& v = ints(key);
    check(v.size() == 1, "E_CONFIG", "'" + key + "' is not a scalar");
    return v[0];
}

std::vector<std::string> TensorStore::keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : floats_) out.push_back(k);
    for (const auto& [k, v] : ints_) out.push_back(k);
    return out;
}

namespace {

constexpr char kMagic[8] = {'C', 'M', 'S', 'T', 'O', 'R', 'E', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    check(in.good(), "E_CONFIG", "truncated store file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void put_str(std::ostream& out, const std::string& s) {
    put_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& in) {
    const std::uint64_t n = get_u64(in);
    check(n < (1u << 20), "E_CONFIG", "corrupt store file");
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    check(in.good(), "E_CONFIG", "truncated store file");
    return s;
}

} // namespace

void TensorStore::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    check(out.good(), "E_CONFIG", "cannot write '" + path + "'");
    out.write(kMagic, 8);
    put_u64(out, floats_.size());
    for (const auto& [k, e] : floats_) {
        put_str(out, k);
        put_u64(out, e.shape.size());
        for (int d : e.shape) put_u64(out, static_cast<std::uint64_t>(d));
        put_u64(out, e.data.size());
        out.write(reinterpret_cast<const char*>(e.data.data()),
                  static_cast<std::streamsize>(e.data.size() * sizeof(float)));
    }
    put_u64(out, ints_.size());
    for (const auto& [k, v] : ints_) {
        put_str(out, k);
        put_u64(out, v.size());
        for (long long x : v) put_u64(out, static_cast<std::uint64_t>(x));
    }
    check(out.good(), "E_CONFIG", "write failed for '" + path + "'");
}

TensorStore TensorStore::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), "E_CONFIG", "cannot open '" + path + "'");
    char magic[8];
    in.read(magic, 8);
    check(in.good() && std::memcmp(magic, kMagic, 8) == 0, "E_CONFIG",
          "'" + path + "' is not a tensor store file");
    TensorStore st;
    const std::uint64_t nf = get_u64(in);
    for (std::uint64_t i = 0; i < nf; ++i) {
        const std::string key = get_str(in);
        const std::uint64_t rank = get_u64(in);
        check(rank <= 8, "E_CONFIG", "corrupt store file");
        std::vector<int> shape(rank);
        for (auto& d : shape) d = static_cast<int>(get_u64(in));
        const std::uint64_t n = get_u64(in);
        std::vector<float> data(n);
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(n * sizeof(float)));
        check(in.good(), "E_CONFIG", "truncated store file");
        st.floats_[key] = {std::move(shape), std::move(data)};
    }
    const std::uint64_t ni = get_u64(in);
    for (std::uint64_t i = 0; i < ni; ++i) {
        const std::string key = get_str(in);
        const std::uint64_t n = get_u64(in);
        std::vector<long long> v(n);
        for (auto& x : v) x = static_cast<long long>(get_u64(in));
        st.ints_[key] = std::move(v);
    }
    return st;
}

} // namespace chanmap
