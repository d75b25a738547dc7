#include "agentsoc/common.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>

namespace agentsoc {

namespace {

int parse_fixed(std::string_view text, std::size_t pos, std::size_t len) {
    if (pos + len > text.size()) throw ValidationError("timestamp too short: " + std::string(text));
    int value = 0;
    auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, value);
    if (ec != std::errc{} || ptr != text.data() + pos + len)
        throw ValidationError("bad timestamp field in: " + std::string(text));
    return value;
}

}  // namespace

std::string format_utc(Timestamp t) {
    using namespace std::chrono;
    const sys_seconds tp{seconds{t}};
    const auto day = floor<days>(tp);
    const year_month_day ymd{day};
    const hh_mm_ss hms{tp - day};
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02ldZ", int(ymd.year()),
                  unsigned(ymd.month()), unsigned(ymd.day()), long(hms.hours().count()),
                  long(hms.minutes().count()), long(hms.seconds().count()));
    return buf;
}

Timestamp parse_timestamp(std::string_view raw) {
    const std::string text = trim(raw);
    if (text.empty()) throw ValidationError("empty timestamp");
    if (text.find('-') == std::string::npos || text.front() == '-') {
        Timestamp value = 0;
        auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
        if (ec != std::errc{} || ptr != text.data() + text.size())
            throw ValidationError("bad timestamp: " + text);
        return value;
    }
    using namespace std::chrono;
    const int y = parse_fixed(text, 0, 4);
    const int mo = parse_fixed(text, 5, 2);
    const int d = parse_fixed(text, 8, 2);
    if (text.size() < 19 || text[4] != '-' || text[7] != '-' || (text[10] != ' ' && text[10] != 'T') ||
        text[13] != ':' || text[16] != ':')
        throw ValidationError("bad timestamp: " + text);
    const int h = parse_fixed(text, 11, 2);
    const int mi = parse_fixed(text, 14, 2);
    const int s = parse_fixed(text, 17, 2);
    const year_month_day ymd{year{y}, month{unsigned(mo)}, day{unsigned(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || s > 60) throw ValidationError("bad timestamp: " + text);
    Timestamp t = sys_days{ymd}.time_since_epoch() / seconds{1} + h * 3600 + mi * 60 + s;

    std::string_view rest = std::string_view(text).substr(19);
    if (!rest.empty() && rest.front() == '.') {
        std::size_t i = 1;
        while (i < rest.size() && rest[i] >= '0' && rest[i] <= '9') ++i;
        rest.remove_prefix(i);
    }
    if (rest.empty() || rest == "Z") return t;
    if ((rest.front() == '+' || rest.front() == '-') && rest.size() == 6 && rest[3] == ':') {
        const int oh = parse_fixed(rest, 1, 2);
        const int om = parse_fixed(rest, 4, 2);
        const Timestamp offset = oh * 3600 + om * 60;
        return rest.front() == '+' ? t - offset : t + offset;
    }
    throw ValidationError("bad timezone suffix in timestamp: " + text);
}

std::string now_utc() {
    using namespace std::chrono;
    const auto now = system_clock::now();
    const auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
    std::string base = format_utc(duration_cast<seconds>(now.time_since_epoch()).count());
    char frac[8];
    std::snprintf(frac, sizeof frac, ".%03lldZ", static_cast<long long>(ms));
    base.pop_back();
    return base + frac;
}

std::vector<std::string> split(std::string_view text, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = text.find(sep, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(text.substr(start));
            return out;
        }
        out.emplace_back(text.substr(start, pos - start));
        start = pos + 1;
    }
}

std::string trim(std::string_view text) {
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = text.find_last_not_of(" \t\r\n");
    return std::string(text.substr(first, last - first + 1));
}

}  // namespace agentsoc
