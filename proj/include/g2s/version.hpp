#pragma once

namespace g2s {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace g2s
