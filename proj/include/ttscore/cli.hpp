#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ttscore {

// Exit statuses of run_cli.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitValidation = 3;
inline constexpr int kExitIo = 4;
inline constexpr int kExitNumeric = 5;

/// Runs one command line (without the program name). Never throws; failures
/// are reported on `err` and mapped to the exit statuses above.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string toolkit_version();

}  // namespace ttscore
