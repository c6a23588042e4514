#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace icsad {

/// Wall-clock instant at one-second resolution (UTC).
using Timestamp = std::chrono::sys_seconds;
using Seconds = std::chrono::seconds;

/// Parses "YYYY-MM-DDTHH:MM:SS" (optional trailing Z, space instead of T)
/// or a plain integer epoch-seconds value. Throws std::invalid_argument.
Timestamp parse_timestamp(std::string_view text);

/// Formats as "YYYY-MM-DDTHH:MM:SSZ".
std::string format_timestamp(Timestamp ts);

inline Timestamp from_epoch(long long seconds) { return Timestamp{Seconds{seconds}}; }
inline long long to_epoch(Timestamp ts) { return ts.time_since_epoch().count(); }

}  // namespace icsad
