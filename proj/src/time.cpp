#include "flaky/time.hpp"

#include "flaky/error.hpp"

#include <charconv>
#include <cstdio>

namespace flaky {
namespace {

int digits(std::string_view text, std::size_t pos, std::size_t count) {
    if (pos + count > text.size()) {
        throw StructuralInputError("truncated timestamp: " + std::string(text));
    }
    int value = 0;
    const auto* first = text.data() + pos;
    auto [ptr, ec] = std::from_chars(first, first + count, value);
    if (ec != std::errc() || ptr != first + count) {
        throw StructuralInputError("malformed timestamp: " + std::string(text));
    }
    return value;
}

void expect(std::string_view text, std::size_t pos, std::string_view allowed) {
    if (pos >= text.size() || allowed.find(text[pos]) == std::string_view::npos) {
        throw StructuralInputError("malformed timestamp: " + std::string(text));
    }
}

}  // namespace

Timestamp parse_timestamp(std::string_view text) {
    using namespace std::chrono;
    expect(text, 4, "-");
    expect(text, 7, "-");
    expect(text, 10, "Tt ");
    expect(text, 13, ":");
    expect(text, 16, ":");
    const year_month_day ymd{year{digits(text, 0, 4)}, month{static_cast<unsigned>(digits(text, 5, 2))},
                             day{static_cast<unsigned>(digits(text, 8, 2))}};
    if (!ymd.ok()) {
        throw StructuralInputError("invalid calendar date: " + std::string(text));
    }
    const int hh = digits(text, 11, 2);
    const int mm = digits(text, 14, 2);
    const int ss = digits(text, 17, 2);
    if (hh > 23 || mm > 59 || ss > 60) {
        throw StructuralInputError("invalid time of day: " + std::string(text));
    }
    std::size_t pos = 19;
    long long millis = 0;
    if (pos < text.size() && text[pos] == '.') {
        ++pos;
        long long scale = 100;
        std::size_t n = 0;
        while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
            if (scale > 0) {
                millis += (text[pos] - '0') * scale;
                scale /= 10;
            }
            ++pos;
            ++n;
        }
        if (n == 0) {
            throw StructuralInputError("malformed fractional seconds: " + std::string(text));
        }
    }
    minutes offset{0};
    if (pos < text.size() && (text[pos] == 'Z' || text[pos] == 'z')) {
        ++pos;
    } else if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) {
        const int sign = text[pos] == '-' ? -1 : 1;
        const int oh = digits(text, pos + 1, 2);
        std::size_t mpos = pos + 3;
        if (mpos < text.size() && text[mpos] == ':') {
            ++mpos;
        }
        const int om = digits(text, mpos, 2);
        offset = minutes{sign * (oh * 60 + om)};
        pos = mpos + 2;
    } else if (pos != text.size()) {
        throw StructuralInputError("malformed timestamp zone: " + std::string(text));
    }
    if (pos != text.size()) {
        throw StructuralInputError("trailing characters in timestamp: " + std::string(text));
    }
    const auto local = sys_days{ymd} + hours{hh} + minutes{mm} + seconds{ss} + milliseconds{millis};
    return time_point_cast<Millis>(local - offset);
}

std::string format_timestamp(Timestamp ts) {
    using namespace std::chrono;
    const auto day_point = floor<days>(ts);
    const year_month_day ymd{day_point};
    const hh_mm_ss tod{ts - day_point};
    char buf[40];
    const auto ms = tod.subseconds().count();
    if (ms != 0) {
        std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ", static_cast<int>(ymd.year()),
                      static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                      static_cast<int>(tod.hours().count()), static_cast<int>(tod.minutes().count()),
                      static_cast<int>(tod.seconds().count()), static_cast<int>(ms));
    } else {
        std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                      static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                      static_cast<int>(tod.hours().count()), static_cast<int>(tod.minutes().count()),
                      static_cast<int>(tod.seconds().count()));
    }
    return buf;
}

std::string format_duration(Millis d) {
    using namespace std::chrono;
    std::string out;
    if (d < Millis::zero()) {
        out = "-";
        d = -d;
    }
    const auto h = duration_cast<hours>(d);
    const auto m = duration_cast<minutes>(d - h);
    const auto s = duration_cast<seconds>(d - h - m);
    if (h.count() > 0) {
        out += std::to_string(h.count()) + "h";
        if (m.count() > 0) out += " " + std::to_string(m.count()) + "m";
        return out;
    }
    if (m.count() > 0) {
        out += std::to_string(m.count()) + "m";
        if (s.count() > 0) out += " " + std::to_string(s.count()) + "s";
        return out;
    }
    if (s.count() > 0) return out + std::to_string(s.count()) + "s";
    return out + std::to_string(d.count()) + "ms";
}

}  // namespace flaky
