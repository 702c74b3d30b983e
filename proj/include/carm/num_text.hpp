#pragma once

#include <charconv>
#include <string>
#include <string_view>

#include "carm/error.hpp"

namespace carm {

// Shortest decimal form that parses back to the same double.
inline std::string format_double(double value) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text) {
    double value = 0.0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw Error(Err::IoFailure, "not a number: '" + std::string(text) + "'");
    }
    return value;
}

inline long parse_long(std::string_view text) {
    long value = 0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw Error(Err::IoFailure, "not an integer: '" + std::string(text) + "'");
    }
    return value;
}

} // namespace carm
