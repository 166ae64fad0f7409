#pragma once

#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <string_view>

namespace bexp {

// 64-bit FNV-1a, used for content fingerprints that must be stable across runs.
class Fnv1a {
public:
    void update(const void* data, std::size_t bytes) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < bytes; ++i) {
            hash_ ^= p[i];
            hash_ *= 0x100000001b3ULL;
        }
    }
    void update(std::string_view s) { update(s.data(), s.size()); }
    template <typename T>
    void update_value(const T& v) { update(&v, sizeof(T)); }
    template <typename T>
    void update_span(std::span<const T> v) { update(v.data(), v.size_bytes()); }

    std::uint64_t digest() const noexcept { return hash_; }

private:
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t value);

// Independent sub-seed for (seed, stream tags...). Distinct tag tuples give
// decorrelated engines; identical tuples give identical engines.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint32_t> tags);

inline std::mt19937_64 make_engine(std::uint64_t seed, std::initializer_list<std::uint32_t> tags) {
    return std::mt19937_64(derive_seed(seed, tags));
}

} // namespace bexp
