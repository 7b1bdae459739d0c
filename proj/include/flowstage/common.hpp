#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace flowstage {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MissingColumn : Error { using Error::Error; };
struct UnmappedAttackType : Error { using Error::Error; };
struct EmptyDataset : Error { using Error::Error; };
struct SchemaMismatch : Error { using Error::Error; };
struct WindowTooSmall : Error { using Error::Error; };
struct BucketOverflow : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };
struct EmptyMask : Error { using Error::Error; };
struct DegenerateLabels : Error { using Error::Error; };
struct NumericalDivergence : Error { using Error::Error; };
struct IndexOutOfRange : Error { using Error::Error; };
struct LengthMismatch : Error { using Error::Error; };
struct InvalidConfig : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Per-module seed derivation: every random component hangs off the master
// seed through a named tag, so one integer reproduces the whole run.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
    return splitmix64(master ^ fnv1a64(tag));
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index) {
    return splitmix64(derive_seed(master, tag) ^ splitmix64(index + 1));
}

using Rng = std::mt19937_64;

// Distribution helpers with pinned bit-level behaviour (the standard library
// distributions are implementation-defined, which would break byte-identical
// artifacts across toolchains).
inline double uniform_real(Rng& rng, double lo = 0.0, double hi = 1.0) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    // Lemire-style bounded draw, bias negligible for n << 2^64.
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(rng()) * n) >> 64);
}

inline double normal_real(Rng& rng, double mean = 0.0, double stdev = 1.0) {
    double u1 = uniform_real(rng);
    while (u1 <= 0.0) u1 = uniform_real(rng);
    const double u2 = uniform_real(rng);
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    return mean + stdev * z;
}

inline double exponential_real(Rng& rng, double rate) {
    double u = uniform_real(rng);
    while (u <= 0.0) u = uniform_real(rng);
    return -std::log(u) / rate;
}

inline bool bernoulli(Rng& rng, double p) {
    return uniform_real(rng) < p;
}

// Shortest representation that from_chars parses back bit-exactly.
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw ParseError("bad numeric value: '" + std::string(s) + "'");
    return v;
}

inline long long parse_int(std::string_view s) {
    long long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw ParseError("bad integer value: '" + std::string(s) + "'");
    return v;
}

inline std::uint64_t parse_uint64(std::string_view s) {
    std::uint64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw ParseError("bad unsigned value: '" + std::string(s) + "'");
    return v;
}

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.emplace_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

inline std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out)
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    return out;
}

}  // namespace flowstage
