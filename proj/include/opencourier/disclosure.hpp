#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "opencourier/delivery.hpp"
#include "opencourier/error.hpp"
#include "opencourier/ids.hpp"
#include "opencourier/money.hpp"
#include "opencourier/time.hpp"

namespace opencourier::disclosure {

inline constexpr std::array<std::string_view, 12> kColumns = {
    "deliveryIdHash", "courierIdHash", "status",   "createdAt", "deliveredAt", "pickupCell",
    "dropoffCell",    "distance",      "distanceUnit", "payout", "currency",  "durationMinutes"};

// ---------------------------------------------------------------------------
// RFC-4180

namespace csv {

inline bool needs_quotes(std::string_view field) {
    return field.find_first_of(",\"\r\n") != std::string_view::npos;
}

inline std::string escape(std::string_view field) {
    if (!needs_quotes(field)) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

inline std::string write_row(const std::vector<std::string>& fields) {
    std::string line;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) line += ',';
        line += escape(fields[i]);
    }
    line += '\n';
    return line;
}

inline std::string write(const std::vector<std::vector<std::string>>& rows) {
    std::string out;
    for (const auto& r : rows) out += write_row(r);
    return out;
}

/// Accepts LF or CRLF record separators; a final separator is optional.
inline std::vector<std::vector<std::string>> parse(std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false, field_started = false;
    std::size_t i = 0;
    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        rows.push_back(std::move(row));
        row.clear();
    };
    while (i < text.size()) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    i += 2;
                    continue;
                }
                quoted = false;
                ++i;
                if (i < text.size() && text[i] != ',' && text[i] != '\n' && text[i] != '\r')
                    throw Error(ErrorCode::ParseError, "unexpected character after closing quote", {{"offset", i}});
                continue;
            }
            field += c;
            ++i;
            continue;
        }
        if (c == '"') {
            if (field_started || !field.empty())
                throw Error(ErrorCode::ParseError, "quote inside an unquoted field", {{"offset", i}});
            quoted = true;
            field_started = true;
            ++i;
        } else if (c == ',') {
            end_field();
            ++i;
        } else if (c == '\r' || c == '\n') {
            end_row();
            i += (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ? 2 : 1;
        } else {
            field += c;
            field_started = true;
            ++i;
        }
    }
    if (quoted) throw Error(ErrorCode::ParseError, "unterminated quoted field");
    if (field_started || !field.empty() || !row.empty()) end_row();
    return rows;
}

}  // namespace csv

// ---------------------------------------------------------------------------
// Rows

struct Range {
    Timestamp from;
    Timestamp to;  // exclusive

    bool contains(Timestamp t) const { return t >= from && t < to; }
};

inline Range make_range(Timestamp from, Timestamp to) {
    if (!(from < to))
        throw Error(ErrorCode::EmptyRange, "range must satisfy from < to",
                    {{"from", format_iso8601(from)}, {"to", format_iso8601(to)}});
    return {from, to};
}

inline std::string hash_id(const std::string& salt, const std::string& id) { return sha256_hex(salt + ":" + id); }

/// Truncates toward zero to two decimals, working on the decimal expansion so
/// values such as 40.35 are not pulled down by binary rounding.
inline std::string truncate2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9f", v);
    std::string s(buf);
    const auto dot = s.find('.');
    s = s.substr(0, dot + 3);
    if (s == "-0.00") s = "0.00";
    return s;
}

inline std::string cell(const geo::LonLat& p) { return truncate2(p.lon) + "," + truncate2(p.lat); }

/// Decimal with at most two places, rounded half away from zero.
inline std::string decimal2(double v) {
    const auto hundredths = static_cast<long long>(std::llround(v * 100.0));
    return format_minor_units(hundredths, 2);
}

/// Milliseconds as minutes with at most two decimals (half-up).
inline std::string minutes2(std::int64_t ms) { return format_minor_units((ms * 100 + 30'000) / 60'000, 2); }

inline std::vector<std::string> row_for(const delivery::Delivery& d, const std::string& salt) {
    const auto done = delivery::delivered_at(d);
    return {hash_id(salt, d.deliveryId),
            d.courierId ? hash_id(salt, *d.courierId) : std::string(),
            std::string(delivery::to_string(d.status)),
            format_iso8601(d.createdAt),
            done ? format_iso8601(*done) : std::string(),
            cell(d.pickupLocation.position),
            cell(d.dropoffLocation.position),
            decimal2(d.distance),
            d.distanceUnit,
            format_minor_units(d.payoutMinor, currency_exponent(d.currency)),
            d.currency,
            done ? minutes2(to_millis(*done) - to_millis(d.createdAt)) : std::string()};
}

/// Header plus one row per delivery created in `range`, sorted by createdAt
/// then deliveryIdHash.
inline std::string export_csv(const std::vector<delivery::Delivery>& deliveries, const Range& range,
                              const std::string& salt) {
    std::vector<std::pair<Timestamp, std::vector<std::string>>> rows;
    for (const auto& d : deliveries)
        if (range.contains(d.createdAt)) rows.emplace_back(d.createdAt, row_for(d, salt));
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return a.second[0] < b.second[0];
    });
    std::string out = csv::write_row(std::vector<std::string>(kColumns.begin(), kColumns.end()));
    for (const auto& r : rows) out += csv::write_row(r.second);
    return out;
}

// ---------------------------------------------------------------------------
// Metrics

/// Additive numerators and denominators. Sums over disjoint ranges combine
/// with operator+.
struct MetricSums {
    std::int64_t deliveriesCompleted = 0;
    std::int64_t payoutMinor = 0;
    std::int64_t durationMs = 0;
    std::int64_t activeHours = 0;
    std::int64_t dispatched = 0;
    std::int64_t rejected = 0;

    MetricSums& operator+=(const MetricSums& o) {
        deliveriesCompleted += o.deliveriesCompleted;
        payoutMinor += o.payoutMinor;
        durationMs += o.durationMs;
        activeHours += o.activeHours;
        dispatched += o.dispatched;
        rejected += o.rejected;
        return *this;
    }
    friend MetricSums operator+(MetricSums a, const MetricSums& b) { return a += b; }
    friend bool operator==(const MetricSums&, const MetricSums&) = default;
};

inline std::int64_t hour_bucket(Timestamp t) {
    const auto ms = to_millis(t);
    return ms >= 0 ? ms / 3'600'000 : -((-ms + 3'599'999) / 3'600'000);
}

/// Delivery counts and money use deliveries created in range and priced in
/// `currency`. An active hour is a (courier, clock hour) pair whose hour starts
/// in range and holds at least one transition by that courier.
inline MetricSums metric_sums(const std::vector<delivery::Delivery>& deliveries, const Range& range,
                              const std::string& currency) {
    MetricSums s;
    std::set<std::pair<std::string, std::int64_t>> hours;
    for (const auto& d : deliveries) {
        for (const auto& h : d.history) {
            if (h.actor.kind != delivery::Actor::Kind::Courier) continue;
            const auto bucket = hour_bucket(h.at);
            if (range.contains(from_millis(bucket * 3'600'000))) hours.insert({h.actor.id, bucket});
        }
        if (!range.contains(d.createdAt) || d.currency != currency) continue;
        const bool was_dispatched = std::any_of(d.history.begin(), d.history.end(), [](const delivery::HistoryEntry& h) {
            return h.event == delivery::TransitionEvent::Dispatch;
        });
        if (was_dispatched) ++s.dispatched;
        if (d.status == delivery::DeliveryStatus::Rejected) ++s.rejected;
        if (d.status == delivery::DeliveryStatus::Delivered) {
            ++s.deliveriesCompleted;
            s.payoutMinor += d.payoutMinor;
            if (const auto done = delivery::delivered_at(d)) s.durationMs += to_millis(*done) - to_millis(d.createdAt);
        }
    }
    s.activeHours = static_cast<std::int64_t>(hours.size());
    return s;
}

/// Ratios from sums; a zero denominator gives null, never NaN.
inline nlohmann::json metrics_json(const MetricSums& s, const Range& range, const std::string& currency) {
    const int e = currency_exponent(currency);
    auto money_ratio = [&](std::int64_t num, std::int64_t den) -> nlohmann::json {
        if (den == 0) return nullptr;
        const std::int64_t q = (2 * num + den) / (2 * den);  // half-up, num >= 0
        return minor_units_to_json(q, e);
    };
    nlohmann::json j;
    j["from"] = format_iso8601(range.from);
    j["to"] = format_iso8601(range.to);
    j["currency"] = currency;
    j["deliveriesCompleted"] = s.deliveriesCompleted;
    j["avgHourlyEarnings"] = money_ratio(s.payoutMinor, s.activeHours);
    j["avgPayoutPerDelivery"] = money_ratio(s.payoutMinor, s.deliveriesCompleted);
    j["avgDurationMinutes"] = s.deliveriesCompleted
                                  ? nlohmann::json(std::stod(minutes2(s.durationMs / s.deliveriesCompleted)))
                                  : nlohmann::json(nullptr);
    j["rejectionRate"] = s.dispatched ? nlohmann::json(static_cast<double>(s.rejected) / static_cast<double>(s.dispatched))
                                      : nlohmann::json(nullptr);
    j["sums"] = {{"payout", minor_units_to_json(s.payoutMinor, e)},
                 {"durationMinutes", std::stod(minutes2(s.durationMs))},
                 {"activeHours", s.activeHours},
                 {"dispatched", s.dispatched},
                 {"rejected", s.rejected}};
    return j;
}

}  // namespace opencourier::disclosure
