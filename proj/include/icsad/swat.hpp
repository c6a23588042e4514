#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "icsad/dataset.hpp"

namespace icsad {

/// The 51-tag SWaT schema (25 sensors, 26 actuators, processes 1-6) using
/// hyphenated names such as "LIT-101".
const TagSchema& swat_schema();

/// "LIT101" / " LIT101" / "LIT-101" -> "LIT-101".
std::string canonical_swat_name(std::string_view raw);

/// Parses SWaT timestamps like " 22/12/2015 4:30:00 PM".
Timestamp parse_swat_timestamp(std::string_view text);

/// Loads an original SWaT CSV export (Timestamp, 51 tags, Normal/Attack).
TagSeries load_swat_csv(const std::filesystem::path& path);

}  // namespace icsad
