#pragma once

namespace cp4vlm {

inline constexpr const char* kToolName = "cp4vlm";
inline constexpr const char* kVersion = "0.1.0";

} // namespace cp4vlm
