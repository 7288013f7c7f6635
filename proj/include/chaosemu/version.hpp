#pragma once

namespace chaosemu {
inline constexpr const char* kToolVersion = "0.1.0";
}
