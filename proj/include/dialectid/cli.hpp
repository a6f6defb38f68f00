#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace dialectid::cli {

inline constexpr std::uint64_t kDefaultSeed = 20250101;
inline constexpr const char* kOutputDirEnv = "DIALECTID_OUTPUT_DIR";
inline constexpr const char* kDefaultOutputDir = "dialectid-out";

enum ExitCode : int { kOk = 0, kUsage = 2, kDataError = 3, kRuntimeError = 4 };

/// Runs one command line (without the program name). Standard input is read
/// only by `classify` when no input file is given.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dialectid::cli
