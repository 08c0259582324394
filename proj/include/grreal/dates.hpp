#pragma once

#include <cstdio>
#include <string>

#include "grreal/errors.hpp"

namespace grreal {

/// Days since 1970-01-01 for a proleptic Gregorian civil date.
inline long days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const long era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<long>(doe) - 719468;
}

struct CivilDate {
    int year;
    int month;
    int day;
};

inline CivilDate civil_from_days(long z) {
    z += 719468;
    const long era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const long y = static_cast<long>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp + (mp < 10 ? 3 : -9);
    return {static_cast<int>(y + (m <= 2)), static_cast<int>(m), static_cast<int>(d)};
}

/// Parse strict ISO "YYYY-MM-DD" into days since epoch.
inline long parse_iso_date(const std::string& s) {
    int y = 0, m = 0, d = 0;
    if (s.size() != 10 || std::sscanf(s.c_str(), "%4d-%2d-%2d", &y, &m, &d) != 3 ||
        s[4] != '-' || s[7] != '-' || m < 1 || m > 12 || d < 1 || d > 31)
        throw data_error("bad ISO date: '" + s + "'");
    return days_from_civil(y, m, d);
}

inline std::string format_iso_date(long epoch_day) {
    const CivilDate c = civil_from_days(epoch_day);
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", c.year, c.month, c.day);
    return buf;
}

/// 1-based day of year.
inline int day_of_year(long epoch_day) {
    const CivilDate c = civil_from_days(epoch_day);
    return static_cast<int>(epoch_day - days_from_civil(c.year, 1, 1)) + 1;
}

}  // namespace grreal
