#include "icsad/time.hpp"

#include <charconv>
#include <cstdio>
#include <stdexcept>

namespace icsad {
namespace {

bool read_int(std::string_view text, std::size_t pos, std::size_t len, int& out) {
    if (pos + len > text.size()) return false;
    auto first = text.data() + pos;
    auto [ptr, ec] = std::from_chars(first, first + len, out);
    return ec == std::errc{} && ptr == first + len;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

}  // namespace

Timestamp parse_timestamp(std::string_view raw) {
    const auto text = trim(raw);
    if (text.empty()) throw std::invalid_argument("empty timestamp");

    if (text.find(':') == std::string_view::npos) {
        long long epoch = 0;
        auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), epoch);
        if (ec != std::errc{} || ptr != text.data() + text.size())
            throw std::invalid_argument("bad epoch timestamp: " + std::string(text));
        return from_epoch(epoch);
    }

    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
    std::string_view body = text;
    if (body.back() == 'Z') body.remove_suffix(1);
    const bool ok = body.size() == 19 && read_int(body, 0, 4, y) && body[4] == '-' &&
                    read_int(body, 5, 2, mo) && body[7] == '-' && read_int(body, 8, 2, d) &&
                    (body[10] == 'T' || body[10] == ' ') && read_int(body, 11, 2, h) &&
                    body[13] == ':' && read_int(body, 14, 2, mi) && body[16] == ':' &&
                    read_int(body, 17, 2, s);
    if (!ok) throw std::invalid_argument("bad ISO-8601 timestamp: " + std::string(text));

    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{unsigned(mo)},
                                          std::chrono::day{unsigned(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || s > 59)
        throw std::invalid_argument("timestamp out of range: " + std::string(text));
    return std::chrono::sys_days{ymd} + std::chrono::hours{h} + std::chrono::minutes{mi} + Seconds{s};
}

std::string format_timestamp(Timestamp ts) {
    const auto day = std::chrono::floor<std::chrono::days>(ts);
    const std::chrono::year_month_day ymd{day};
    const std::chrono::hh_mm_ss hms{ts - day};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02lldZ", int(ymd.year()),
                  unsigned(ymd.month()), unsigned(ymd.day()), long(hms.hours().count()),
                  long(hms.minutes().count()), static_cast<long long>(hms.seconds().count()));
    return buf;
}

}  // namespace icsad
