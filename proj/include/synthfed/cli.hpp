#pragma once

#include <ostream>
#include <span>
#include <string>

namespace synthfed {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Runs one command line (arguments after the program name). Returns 0 on
/// success, 1 on a usage error and 2 on a data or validation error.
int cli_dispatch(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace synthfed
