#pragma once

#include <charconv>
#include <cmath>
#include <string>

namespace resetlab {

/// Locale-independent rendering with 9 significant digits ('.' decimal separator).
inline std::string fmt_num(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (v == 0.0) return "0"; // also folds -0
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 9);
    return {buf, res.ptr};
}

} // namespace resetlab
