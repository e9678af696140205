#pragma once

// Shared plumbing: error types, deterministic RNG, checksums, small
// formatting/file helpers used across the library.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace scanshare {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape/axis disagreements between tensors or layers.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Invalid build-time configuration (head counts, split names, grid sizes...).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Bad runtime input (out-of-range coordinate, absent target, empty sequence).
class InputError : public Error {
public:
    using Error::Error;
};

// Filesystem failures.
class IOError : public Error {
public:
    using Error::Error;
};

// Malformed on-disk data (truncated checkpoint, unparsable record).
class FormatError : public Error {
public:
    using Error::Error;
};

// API misuse (backward on a consumed tape, unknown partition name).
class UsageError : public Error {
public:
    using Error::Error;
};

// Deterministic 64-bit generator (splitmix64). Standard-library
// distributions differ between toolchains, so every random draw in the
// project goes through this class to keep seeded runs byte-identical.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform integer in [0, n). Rejection-free modulo is fine here: n is
    // tiny relative to 2^64 everywhere this is used.
    std::uint64_t uniform_u64(std::uint64_t n) {
        return n == 0 ? 0 : next_u64() % n;
    }

    int uniform_int(int lo, int hi) {  // inclusive range
        return lo + static_cast<int>(uniform_u64(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    double uniform() {  // [0, 1)
        return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_u64(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

inline std::uint64_t fnv1a64(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

inline std::string read_binary_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_binary_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IOError("cannot write file: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IOError("short write: " + path);
}

inline std::string file_checksum_hex(const std::string& path) {
    std::string bytes = read_binary_file(path);
    return to_hex(fnv1a64(bytes.data(), bytes.size()));
}

// Fixed-decimal formatting, locale-independent.
inline std::string format_fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return std::string(buf);
}

}  // namespace scanshare
