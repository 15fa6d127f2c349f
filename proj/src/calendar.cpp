#include "dflex/calendar.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "dflex/error.hpp"

namespace dflex {

namespace {

int parse_field(std::string_view text, std::size_t pos, std::size_t len) {
  if (pos + len > text.size()) fail(ErrorCode::InvariantViolation, "truncated timestamp");
  int value = 0;
  for (std::size_t i = pos; i < pos + len; ++i) {
    const char ch = text[i];
    if (ch < '0' || ch > '9') {
      fail(ErrorCode::InvariantViolation, "bad timestamp '" + std::string(text) + "'");
    }
    value = value * 10 + (ch - '0');
  }
  return value;
}

}  // namespace

std::int64_t parse_iso8601(std::string_view text) {
  using namespace std::chrono;
  if (text.size() < 16 || text[4] != '-' || text[7] != '-' ||
      (text[10] != 'T' && text[10] != ' ') || text[13] != ':') {
    fail(ErrorCode::InvariantViolation, "bad timestamp '" + std::string(text) + "'");
  }
  const int y = parse_field(text, 0, 4);
  const int mo = parse_field(text, 5, 2);
  const int d = parse_field(text, 8, 2);
  const int hh = parse_field(text, 11, 2);
  const int mm = parse_field(text, 14, 2);
  int ss = 0;
  if (text.size() >= 19 && text[16] == ':') ss = parse_field(text, 17, 2);
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)},
                           day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || hh > 23 || mm > 59 || ss > 59) {
    fail(ErrorCode::InvariantViolation, "bad timestamp '" + std::string(text) + "'");
  }
  const auto days_since_epoch = sys_days{ymd}.time_since_epoch().count();
  return static_cast<std::int64_t>(days_since_epoch) * 86400 + hh * 3600 + mm * 60 + ss;
}

std::string format_iso8601(std::int64_t epoch_seconds) {
  using namespace std::chrono;
  std::int64_t day_count = epoch_seconds / 86400;
  std::int64_t rem = epoch_seconds % 86400;
  if (rem < 0) {
    rem += 86400;
    --day_count;
  }
  const year_month_day ymd{sys_days{days{day_count}}};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(rem / 3600), static_cast<int>((rem % 3600) / 60),
                static_cast<int>(rem % 60));
  return buf;
}

std::string add_hours(std::string_view iso, double hours) {
  return format_iso8601(parse_iso8601(iso) + static_cast<std::int64_t>(std::llround(hours * 3600.0)));
}

int hour_of_day(std::int64_t epoch_seconds) {
  std::int64_t rem = epoch_seconds % 86400;
  if (rem < 0) rem += 86400;
  return static_cast<int>(rem / 3600);
}

}  // namespace dflex
