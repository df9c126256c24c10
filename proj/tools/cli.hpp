#pragma once

namespace vsalens::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNoCheckpoint = 3;

int run(int argc, char** argv);

}  // namespace vsalens::cli
