#pragma once

namespace cgp {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace cgp
