#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace wmsteer {

inline constexpr std::string_view kVersion = "0.3.0";

/* All recoverable failures surface as wmsteer::Error so callers (CLI,
 * experiment harness) can distinguish our diagnostics from genuine bugs. */
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool ok, const std::string& msg) {
    if (!ok) fail(msg);
}

// FNV-1a, used for config fingerprints and content hashes in manifests.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ull) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

}  // namespace wmsteer
