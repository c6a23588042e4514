#pragma once

#include <iosfwd>

namespace icsad {

/// Exit codes of the command line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitAlerts = 1;  // detect found at least one alert
inline constexpr int kExitUsage = 2;   // bad arguments or unreadable input

/// Entry point of the `icsad` executable; writes diagnostics to err.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv);

}  // namespace icsad
