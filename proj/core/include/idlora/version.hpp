#pragma once

namespace idlora {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace idlora
