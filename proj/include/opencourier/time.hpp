#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "opencourier/error.hpp"

namespace opencourier {

/// UTC instant with millisecond resolution.
using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;
using Duration = std::chrono::milliseconds;

namespace detail {

// Howard Hinnant's days_from_civil / civil_from_days.
constexpr std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const auto yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

struct Civil {
    std::int64_t year;
    unsigned month;
    unsigned day;
};

constexpr Civil civil_from_days(std::int64_t z) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const auto doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp < 10 ? mp + 3 : mp - 9;
    return {y + (m <= 2), m, d};
}

constexpr std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    return a / b - ((a % b != 0) && ((a < 0) != (b < 0)));
}

}  // namespace detail

inline std::int64_t to_millis(Timestamp t) { return t.time_since_epoch().count(); }
inline Timestamp from_millis(std::int64_t ms) { return Timestamp{Duration{ms}}; }

/// ISO-8601 UTC with a Z suffix; milliseconds are printed only when non-zero.
inline std::string format_iso8601(Timestamp t) {
    const std::int64_t ms = to_millis(t);
    const std::int64_t days = detail::floor_div(ms, 86'400'000);
    std::int64_t rem = ms - days * 86'400'000;
    const auto c = detail::civil_from_days(days);
    const int hh = static_cast<int>(rem / 3'600'000);
    rem %= 3'600'000;
    const int mm = static_cast<int>(rem / 60'000);
    rem %= 60'000;
    const int ss = static_cast<int>(rem / 1000);
    const int frac = static_cast<int>(rem % 1000);
    char buf[40];
    if (frac == 0) {
        std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02d:%02d:%02dZ", static_cast<long long>(c.year), c.month,
                      c.day, hh, mm, ss);
    } else {
        std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02d:%02d:%02d.%03dZ", static_cast<long long>(c.year),
                      c.month, c.day, hh, mm, ss, frac);
    }
    return buf;
}

/// Accepts YYYY-MM-DDTHH:MM:SS[.fff]Z and explicit +HH:MM / -HH:MM offsets.
inline Timestamp parse_iso8601(std::string_view text) {
    auto fail = [&]() -> Error {
        return Error(ErrorCode::ValidationError, "invalid ISO-8601 timestamp: " + std::string(text));
    };
    auto digits = [&](std::size_t pos, std::size_t n) -> int {
        if (pos + n > text.size()) throw fail();
        int v = 0;
        for (std::size_t i = pos; i < pos + n; ++i) {
            if (text[i] < '0' || text[i] > '9') throw fail();
            v = v * 10 + (text[i] - '0');
        }
        return v;
    };
    if (text.size() < 20 || text[4] != '-' || text[7] != '-' || (text[10] != 'T' && text[10] != 't') ||
        text[13] != ':' || text[16] != ':') {
        throw fail();
    }
    const int year = digits(0, 4);
    const int month = digits(5, 2);
    const int day = digits(8, 2);
    const int hour = digits(11, 2);
    const int minute = digits(14, 2);
    const int second = digits(17, 2);
    if (month < 1 || month > 12 || day < 1 || day > 31 || hour > 23 || minute > 59 || second > 59) throw fail();
    std::size_t pos = 19;
    int millis = 0;
    if (pos < text.size() && text[pos] == '.') {
        ++pos;
        int scale = 100;
        std::size_t start = pos;
        while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
            millis += (text[pos] - '0') * scale;
            scale /= 10;
            ++pos;
        }
        if (pos == start) throw fail();
    }
    std::int64_t offset_minutes = 0;
    if (pos < text.size() && (text[pos] == 'Z' || text[pos] == 'z') && pos + 1 == text.size()) {
        offset_minutes = 0;
    } else if (pos + 6 == text.size() && (text[pos] == '+' || text[pos] == '-') && text[pos + 3] == ':') {
        const int oh = digits(pos + 1, 2);
        const int om = digits(pos + 4, 2);
        offset_minutes = (oh * 60 + om) * (text[pos] == '-' ? -1 : 1);
    } else {
        throw fail();
    }
    const std::int64_t days = detail::days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day));
    const auto back = detail::civil_from_days(days);
    if (back.month != static_cast<unsigned>(month) || back.day != static_cast<unsigned>(day)) throw fail();
    const std::int64_t ms = ((days * 24 + hour) * 60 + minute - offset_minutes) * 60'000 + second * 1000 + millis;
    return from_millis(ms);
}

/// Weekday of a UTC instant shifted by a fixed offset; 0 = Monday.
inline int local_weekday(Timestamp t, int utc_offset_minutes) {
    const std::int64_t ms = to_millis(t) + std::int64_t{utc_offset_minutes} * 60'000;
    const std::int64_t days = detail::floor_div(ms, 86'400'000);
    // 1970-01-01 was a Thursday.
    return static_cast<int>(((days % 7) + 7 + 3) % 7);
}

inline int local_minute_of_day(Timestamp t, int utc_offset_minutes) {
    const std::int64_t ms = to_millis(t) + std::int64_t{utc_offset_minutes} * 60'000;
    const std::int64_t day_ms = ms - detail::floor_div(ms, 86'400'000) * 86'400'000;
    return static_cast<int>(day_ms / 60'000);
}

}  // namespace opencourier

#include <functional>

namespace opencourier {

/// Source of "now". The harness installs a virtual clock.
using Clock = std::function<Timestamp()>;

inline Clock system_clock() {
    return [] { return std::chrono::time_point_cast<Duration>(std::chrono::system_clock::now()); };
}

}  // namespace opencourier
