#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace opencourier::text {

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

inline std::string to_upper(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    return out;
}

inline bool icontains(std::string_view haystack, std::string_view needle) {
    return to_lower(haystack).find(to_lower(needle)) != std::string::npos;
}

/// Decodes UTF-8 into code points; returns false on malformed input.
inline bool decode_utf8(std::string_view s, std::vector<char32_t>& out) {
    out.clear();
    for (std::size_t i = 0; i < s.size();) {
        const auto c = static_cast<unsigned char>(s[i]);
        int len = 0;
        char32_t cp = 0;
        if (c < 0x80) {
            len = 1;
            cp = c;
        } else if ((c >> 5) == 0x6) {
            len = 2;
            cp = c & 0x1f;
        } else if ((c >> 4) == 0xe) {
            len = 3;
            cp = c & 0x0f;
        } else if ((c >> 3) == 0x1e) {
            len = 4;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + static_cast<std::size_t>(len) > s.size()) return false;
        for (int k = 1; k < len; ++k) {
            const auto cc = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
            if ((cc >> 6) != 0x2) return false;
            cp = (cp << 6) | (cc & 0x3f);
        }
        if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && (cp < 0x10000 || cp > 0x10ffff)) ||
            (cp >= 0xd800 && cp <= 0xdfff)) {
            return false;
        }
        out.push_back(cp);
        i += static_cast<std::size_t>(len);
    }
    return true;
}

/// Code-point length, or npos for invalid UTF-8.
inline std::size_t utf8_length(std::string_view s) {
    std::vector<char32_t> cps;
    if (!decode_utf8(s, cps)) return std::string::npos;
    return cps.size();
}

namespace detail {

inline bool is_pictographic(char32_t cp) {
    return (cp >= 0x1f000 && cp <= 0x1faff) || (cp >= 0x2600 && cp <= 0x27bf) || (cp >= 0x2300 && cp <= 0x23ff) ||
           (cp >= 0x2b00 && cp <= 0x2bff) || (cp >= 0x2190 && cp <= 0x21ff) || (cp >= 0x2900 && cp <= 0x297f) ||
           (cp >= 0x3030 && cp <= 0x303d) || cp == 0x00a9 || cp == 0x00ae || cp == 0x203c || cp == 0x2049 ||
           cp == 0x2122 || cp == 0x2139 || cp == 0x3297 || cp == 0x3299 || (cp >= 0x25aa && cp <= 0x25fe);
}

inline bool is_regional_indicator(char32_t cp) { return cp >= 0x1f1e6 && cp <= 0x1f1ff; }
inline bool is_skin_tone(char32_t cp) { return cp >= 0x1f3fb && cp <= 0x1f3ff; }
inline bool is_tag(char32_t cp) { return cp >= 0xe0020 && cp <= 0xe007f; }
inline constexpr char32_t kZwj = 0x200d;
inline constexpr char32_t kVs16 = 0xfe0f;
inline constexpr char32_t kKeycap = 0x20e3;

}  // namespace detail

/// True when `s` is exactly one emoji grapheme: a pictograph with optional
/// presentation selector, skin tone, tag sequence, or ZWJ-joined pictographs;
/// a regional-indicator flag pair; or a keycap sequence.
inline bool is_single_emoji(std::string_view s) {
    using namespace detail;
    std::vector<char32_t> cps;
    if (!decode_utf8(s, cps) || cps.empty()) return false;
    if (cps.size() == 2 && is_regional_indicator(cps[0]) && is_regional_indicator(cps[1])) return true;
    if ((cps.size() == 3 || cps.size() == 2) && (cps[0] == '#' || cps[0] == '*' || (cps[0] >= '0' && cps[0] <= '9'))) {
        return cps.back() == kKeycap && (cps.size() == 2 || cps[1] == kVs16);
    }
    std::size_t i = 0;
    auto element = [&]() -> bool {
        if (i >= cps.size() || !is_pictographic(cps[i])) return false;
        ++i;
        if (i < cps.size() && cps[i] == kVs16) ++i;
        if (i < cps.size() && is_skin_tone(cps[i])) ++i;
        if (i < cps.size() && is_tag(cps[i])) {
            while (i < cps.size() && is_tag(cps[i])) ++i;
        }
        return true;
    };
    if (!element()) return false;
    while (i < cps.size()) {
        if (cps[i] != kZwj) return false;
        ++i;
        if (!element()) return false;
    }
    return true;
}

}  // namespace opencourier::text
