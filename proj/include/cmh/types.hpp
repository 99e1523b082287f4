// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <string_view>

#include "cmh/error.hpp"

namespace cmh {

// Declaration order is the tie-break order used by selection.
enum class Mode { Skip = 0, Create = 1, Import = 2, Primitive = 3 };

inline constexpr std::array<Mode, 3> kTroveModes{Mode::Skip, Mode::Create, Mode::Import};

enum class Pipeline { Trove, Primitive };

inline std::string_view to_string(Mode m) {
    switch (m) {
    case Mode::Skip: return "SKIP";
    case Mode::Create: return "CREATE";
    case Mode::Import: return "IMPORT";
    case Mode::Primitive: return "PRIMITIVE";
    }
    return "?";
}

inline Mode mode_from_string(std::string_view s) {
    if (s == "SKIP") return Mode::Skip;
    if (s == "CREATE") return Mode::Create;
    if (s == "IMPORT") return Mode::Import;
    if (s == "PRIMITIVE") return Mode::Primitive;
    throw ValidationError("unknown mode '" + std::string(s) + "'");
}

inline std::string_view to_string(Pipeline p) {
    return p == Pipeline::Trove ? "trove" : "primitive";
}

inline Pipeline pipeline_from_string(std::string_view s) {
    if (s == "trove") return Pipeline::Trove;
    if (s == "primitive") return Pipeline::Primitive;
    throw ConfigError("unknown pipeline '" + std::string(s) + "' (expected trove or primitive)");
}

} // namespace cmh
