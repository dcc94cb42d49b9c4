#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

#include "opencourier/error.hpp"

namespace opencourier {

/// ISO-4217 minor-unit exponent. Unlisted well-formed codes default to 2.
inline int currency_exponent(std::string_view code) {
    static constexpr std::string_view zero[] = {"BIF", "CLP", "DJF", "GNF", "ISK", "JPY", "KMF", "KRW", "PYG",
                                                "RWF", "UGX", "UYI", "VND", "VUV", "XAF", "XOF", "XPF"};
    static constexpr std::string_view three[] = {"BHD", "IQD", "JOD", "KWD", "LYD", "OMR", "TND"};
    for (auto c : zero)
        if (c == code) return 0;
    for (auto c : three)
        if (c == code) return 3;
    return 2;
}

inline bool is_currency_code(std::string_view code) {
    if (code.size() != 3) return false;
    for (char c : code)
        if (c < 'A' || c > 'Z') return false;
    return true;
}

inline std::int64_t pow10(int exponent) {
    std::int64_t v = 1;
    for (int i = 0; i < exponent; ++i) v *= 10;
    return v;
}

/// Amount in integer minor units of a currency.
struct Money {
    std::int64_t minor = 0;
    std::string currency = "USD";

    friend bool operator==(const Money&, const Money&) = default;
};

/// Parses decimal text ("14.00", "-3.5", "12") into minor units. More fractional
/// digits than the exponent allows is a validation error, never a silent rounding.
inline std::int64_t parse_minor_units(std::string_view text, int exponent) {
    auto fail = [&]() { return Error(ErrorCode::ValidationError, "invalid amount: " + std::string(text)); };
    if (text.empty()) throw fail();
    std::size_t i = 0;
    bool negative = false;
    if (text[0] == '-' || text[0] == '+') {
        negative = text[0] == '-';
        ++i;
    }
    std::int64_t whole = 0;
    std::size_t digits = 0;
    for (; i < text.size() && std::isdigit(static_cast<unsigned char>(text[i])); ++i, ++digits) {
        if (whole > 100'000'000'000'000LL) throw fail();
        whole = whole * 10 + (text[i] - '0');
    }
    std::int64_t frac = 0;
    int frac_digits = 0;
    if (i < text.size() && text[i] == '.') {
        ++i;
        for (; i < text.size() && std::isdigit(static_cast<unsigned char>(text[i])); ++i) {
            if (text[i] != '0' || frac_digits < exponent) {
                if (frac_digits >= exponent) throw fail();
                frac = frac * 10 + (text[i] - '0');
            }
            ++frac_digits;
            ++digits;
        }
    }
    if (i != text.size() || digits == 0) throw fail();
    const int used = frac_digits < exponent ? frac_digits : exponent;
    frac *= pow10(exponent - used);
    const std::int64_t v = whole * pow10(exponent) + frac;
    return negative ? -v : v;
}

inline std::string format_minor_units(std::int64_t minor, int exponent) {
    const bool negative = minor < 0;
    const std::uint64_t abs = negative ? static_cast<std::uint64_t>(-(minor + 1)) + 1 : static_cast<std::uint64_t>(minor);
    const auto scale = static_cast<std::uint64_t>(pow10(exponent));
    std::string out = negative ? "-" : "";
    out += std::to_string(abs / scale);
    if (exponent > 0) {
        std::string frac = std::to_string(abs % scale);
        out += '.';
        out.append(static_cast<std::size_t>(exponent) - frac.size(), '0');
        out += frac;
    }
    return out;
}

/// Reads an amount given either as a JSON string or a JSON number.
inline std::int64_t minor_units_from_json(const nlohmann::json& j, int exponent) {
    if (j.is_string()) return parse_minor_units(j.get<std::string>(), exponent);
    if (j.is_number_integer()) return j.get<std::int64_t>() * pow10(exponent);
    if (j.is_number_float()) {
        const double scaled = j.get<double>() * static_cast<double>(pow10(exponent));
        const double rounded = std::nearbyint(scaled);
        if (!std::isfinite(scaled) || std::fabs(scaled - rounded) > 1e-6 * std::fmax(1.0, std::fabs(scaled)))
            throw Error(ErrorCode::ValidationError, "amount has more precision than the currency allows");
        return static_cast<std::int64_t>(rounded);
    }
    throw Error(ErrorCode::ValidationError, "amount must be a number or decimal string");
}

/// Emits the amount as a JSON number (e.g. 12.6 for 1260 minor units of USD).
inline nlohmann::json minor_units_to_json(std::int64_t minor, int exponent) {
    if (exponent == 0) return minor;
    return std::stod(format_minor_units(minor, exponent));
}

/// Commission rate in hundredths of a percent: 10% = 1000, 12.5% = 1250.
struct FeeRate {
    std::int64_t hundredths_percent = 0;

    static FeeRate from_json(const nlohmann::json& j) {
        const std::int64_t v = minor_units_from_json(j, 2);
        if (v < 0 || v > 10'000) throw Error(ErrorCode::ValidationError, "feePercentage must be within [0, 100]");
        return FeeRate{v};
    }
    nlohmann::json to_json() const { return minor_units_to_json(hundredths_percent, 2); }

    friend bool operator==(const FeeRate&, const FeeRate&) = default;
};

/// Share withheld by the requester, rounded half-up in minor units.
inline std::int64_t fee_share(std::int64_t agreed_minor, FeeRate rate) {
    // agreed * rate / 10000, half-up; both operands are non-negative.
    const __int128 num = static_cast<__int128>(agreed_minor) * rate.hundredths_percent;
    return static_cast<std::int64_t>((num * 2 + 10'000) / 20'000);
}

/// Courier payout: the agreed amount minus the requester's commission.
inline std::int64_t payout_after_fee(std::int64_t agreed_minor, FeeRate rate) {
    return agreed_minor - fee_share(agreed_minor, rate);
}

}  // namespace opencourier
