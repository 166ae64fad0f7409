#include "bexp/util.hpp"

#include <array>
#include <vector>

namespace bexp {

std::string to_hex(std::uint64_t value) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[value & 0xf];
        value >>= 4;
    }
    return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint32_t> tags) {
    std::vector<std::uint32_t> material;
    material.reserve(2 + tags.size());
    material.push_back(static_cast<std::uint32_t>(seed & 0xffffffffu));
    material.push_back(static_cast<std::uint32_t>(seed >> 32));
    material.insert(material.end(), tags.begin(), tags.end());
    std::seed_seq seq(material.begin(), material.end());
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

} // namespace bexp
