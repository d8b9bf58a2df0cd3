#pragma once

namespace aptd {

inline constexpr const char* kEngineVersion = "1.0.0";

// detect exit codes
inline constexpr int kExitClean = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitPartialChain = 10;  // APT_DET_START with at least one stage
inline constexpr int kExitFullChain = 11;     // APT_DET_STOP

}  // namespace aptd
