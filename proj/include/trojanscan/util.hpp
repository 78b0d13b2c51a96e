#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tscan {

inline constexpr const char* kVersion = "0.1.0";

// Thrown for bad configuration or bad usage; the CLI maps it to exit code 2.
// Every other exception maps to exit code 1.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Single pointer+size form only: an overload taking string-like arguments is
// too easy to call through the wrong implicit conversion.
inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

// Writes content to path via a sibling temp file and an atomic rename, so an
// interrupted run never leaves a partial file at the final path.
void atomic_write(const std::string& path, std::string_view content);

std::string read_file(const std::string& path);

} // namespace tscan
