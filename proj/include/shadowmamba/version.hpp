#pragma once

namespace sm {

inline constexpr const char* kLibraryName = "shadowmamba";
inline constexpr const char* kLibraryVersion = "0.1.0";

}  // namespace sm
