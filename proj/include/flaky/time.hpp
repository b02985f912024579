#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace flaky {

using Millis = std::chrono::milliseconds;
// UTC instant at millisecond resolution.
using Timestamp = std::chrono::sys_time<Millis>;

// Parses ISO-8601 / RFC-3339 date-times as emitted by the GitHub API
// ("2024-01-02T03:04:05Z", optional fractional seconds, optional +hh:mm
// offset). The result is normalized to UTC. Throws StructuralInputError.
Timestamp parse_timestamp(std::string_view text);

// Renders "YYYY-MM-DDTHH:MM:SSZ", with ".mmm" only when the instant carries
// sub-second precision.
std::string format_timestamp(Timestamp ts);

// "3h 30m", "20m", "1m 5s", "250ms"
std::string format_duration(Millis d);

inline double to_hours(Millis d) { return static_cast<double>(d.count()) / 3'600'000.0; }

}  // namespace flaky
