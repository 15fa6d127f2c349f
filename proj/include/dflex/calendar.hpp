#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace dflex {

/// Seconds since 1970-01-01T00:00:00 for a timestamp of the form
/// YYYY-MM-DDTHH:MM[:SS] (a space separator is also accepted).
/// Throws InvariantViolation on malformed input.
std::int64_t parse_iso8601(std::string_view text);

std::string format_iso8601(std::int64_t epoch_seconds);

std::string add_hours(std::string_view iso, double hours);

int hour_of_day(std::int64_t epoch_seconds);

}  // namespace dflex
