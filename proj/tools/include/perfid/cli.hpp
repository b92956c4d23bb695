#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace perfid::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitPipeline = 1;
inline constexpr int kExitUsage = 2;

/// Runs one `perfid` invocation. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Subcommand names followed by their long flags, as accepted by the parser.
std::vector<std::pair<std::string, std::vector<std::string>>> flag_table();

std::string sha256_hex(std::span<const std::uint8_t> bytes);

}  // namespace perfid::cli
