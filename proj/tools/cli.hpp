#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mvmae::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kConfigInvalid = 2;
inline constexpr int kContractViolated = 3;

/// Runs one command line (args excludes the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mvmae::cli
