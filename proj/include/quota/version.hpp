#pragma once

namespace quota {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace quota
