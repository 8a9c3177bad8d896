#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace cipher::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;

// args excludes the program name: {"train-gan", "--config", "desk.cfg", "--gan.lr", "0.002"}.
int run(const std::vector<std::string>& args);

// Root directory holding runs/<name>; CIPHER_RUNS_DIR wins over run.root.
std::filesystem::path runs_root(const std::string& configured);

}  // namespace cipher::cli
