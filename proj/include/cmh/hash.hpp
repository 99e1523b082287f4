// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <fmt/format.h>

namespace cmh {

// FNV-1a, 64 bit. Identifies inputs in run manifests; not a security hash.
inline std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string content_hash(std::string_view data) {
    return fmt::format("fnv1a64:{:016x}", fnv1a64(data));
}

} // namespace cmh
