#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "opencourier/delivery.hpp"
#include "opencourier/error.hpp"
#include "opencourier/geo.hpp"
#include "opencourier/text.hpp"
#include "opencourier/time.hpp"

namespace opencourier::preferences {

/// Per-courier work preferences. Enumerated values are stored as supplied and
/// normalized only when interpreted, so a patch reads back byte-identically.
struct CourierPreferences {
    geo::Polygon deliveryPolygon;
    std::optional<std::string> vehicleType;
    std::vector<std::string> preferredAreas;
    std::map<std::string, std::vector<std::string>> shiftAvailability;
    std::vector<std::string> deliveryPreferences;
    std::vector<std::string> foodPreferences;
    std::map<std::string, std::string> earningGoals;
    std::string deliverySpeed = "REGULAR";
    std::vector<std::string> restaurantTypes;
    std::vector<std::string> cuisineTypes;
    std::vector<std::string> dietaryRestrictions{"NONE"};
    std::optional<double> maxItemWeightLbs;

    friend bool operator==(const CourierPreferences&, const CourierPreferences&) = default;
};

enum class OrderSize { Small, Medium, Large };

/// Instance-level knobs for interpreting preferences.
struct MatchConfig {
    /// Shift ranges are written in instance-local time.
    int utcOffsetMinutes = 0;
    double smallBelowLbs = 5.0;
    double mediumBelowLbs = 20.0;
};

struct MatchResult {
    bool eligible = true;
    std::vector<std::string> reasons;
};

inline constexpr std::array<std::string_view, 7> kWeekdays = {"monday", "tuesday",  "wednesday", "thursday",
                                                              "friday", "saturday", "sunday"};
inline constexpr std::array<std::string_view, 5> kVehicleTypes = {"BICYCLE", "EBIKE", "SCOOTER", "CAR", "WALK"};
inline constexpr std::array<std::string_view, 2> kDeliverySpeeds = {"REGULAR", "RUSH"};

inline CourierPreferences defaults_for(const geo::Polygon& territory) {
    CourierPreferences p;
    p.deliveryPolygon = territory;
    return p;
}

/// "small order", "SMALL_ORDER" and "small" all name the same class.
inline std::optional<OrderSize> parse_order_size(std::string_view s) {
    std::string n = text::to_upper(s);
    std::replace(n.begin(), n.end(), ' ', '_');
    std::replace(n.begin(), n.end(), '-', '_');
    if (n == "SMALL" || n == "SMALL_ORDER") return OrderSize::Small;
    if (n == "MEDIUM" || n == "MEDIUM_ORDER") return OrderSize::Medium;
    if (n == "LARGE" || n == "LARGE_ORDER") return OrderSize::Large;
    return std::nullopt;
}

inline OrderSize classify(double weight_lbs, const MatchConfig& config) {
    if (weight_lbs < config.smallBelowLbs) return OrderSize::Small;
    if (weight_lbs < config.mediumBelowLbs) return OrderSize::Medium;
    return OrderSize::Large;
}

struct ShiftRange {
    int startMinute;
    int endMinute;
};

/// Parses "HH:MM-HH:MM" with start strictly before end.
inline std::optional<ShiftRange> parse_shift_range(std::string_view s) {
    auto hhmm = [](std::string_view t) -> std::optional<int> {
        if (t.size() != 5 || t[2] != ':') return std::nullopt;
        for (std::size_t i : {0u, 1u, 3u, 4u})
            if (t[i] < '0' || t[i] > '9') return std::nullopt;
        const int h = (t[0] - '0') * 10 + (t[1] - '0');
        const int m = (t[3] - '0') * 10 + (t[4] - '0');
        if (h > 24 || m > 59 || (h == 24 && m != 0)) return std::nullopt;
        return h * 60 + m;
    };
    if (s.size() != 11 || s[5] != '-') return std::nullopt;
    const auto a = hhmm(s.substr(0, 5));
    const auto b = hhmm(s.substr(6, 5));
    if (!a || !b || *a >= *b) return std::nullopt;
    return ShiftRange{*a, *b};
}

inline nlohmann::json to_json(const CourierPreferences& p) {
    return {{"deliveryPolygon", geo::to_geojson(p.deliveryPolygon)},
            {"vehicleType", p.vehicleType ? nlohmann::json(*p.vehicleType) : nlohmann::json(nullptr)},
            {"preferredAreas", p.preferredAreas},
            {"shiftAvailability", p.shiftAvailability},
            {"deliveryPreferences", p.deliveryPreferences},
            {"foodPreferences", p.foodPreferences},
            {"earningGoals", p.earningGoals},
            {"deliverySpeed", p.deliverySpeed},
            {"restaurantTypes", p.restaurantTypes},
            {"cuisineTypes", p.cuisineTypes},
            {"dietaryRestrictions", p.dietaryRestrictions},
            {"maxItemWeightLbs", p.maxItemWeightLbs ? nlohmann::json(*p.maxItemWeightLbs) : nlohmann::json(nullptr)}};
}

namespace detail {

struct FieldErrors {
    nlohmann::json fields = nlohmann::json::object();
    void add(const std::string& field, const std::string& why) { fields[field] = why; }
    bool empty() const { return fields.empty(); }
};

inline std::optional<std::vector<std::string>> string_list(const nlohmann::json& v) {
    if (!v.is_array()) return std::nullopt;
    std::vector<std::string> out;
    for (const auto& e : v) {
        if (!e.is_string()) return std::nullopt;
        out.push_back(e.get<std::string>());
    }
    return out;
}

template <std::size_t N>
bool one_of(const std::string& v, const std::array<std::string_view, N>& allowed) {
    const auto u = text::to_upper(v);
    return std::find(allowed.begin(), allowed.end(), u) != allowed.end();
}

}  // namespace detail

/// Merge-patch: supplied fields replace wholesale, others are untouched. All
/// invalid fields are reported together in the error details.
inline CourierPreferences apply_patch(CourierPreferences p, const nlohmann::json& patch) {
    if (!patch.is_object()) throw Error(ErrorCode::ValidationError, "preferences patch must be a JSON object");
    detail::FieldErrors errors;
    for (const auto& [field, v] : patch.items()) {
        if (field == "deliveryPolygon") {
            try {
                p.deliveryPolygon = geo::polygon_from_geojson(v);
            } catch (const Error& e) {
                errors.add(field, e.message());
            }
        } else if (field == "vehicleType") {
            if (v.is_null()) p.vehicleType.reset();
            else if (v.is_string() && detail::one_of(v.get<std::string>(), kVehicleTypes)) p.vehicleType = v.get<std::string>();
            else errors.add(field, "must be one of BICYCLE, EBIKE, SCOOTER, CAR, WALK");
        } else if (field == "deliverySpeed") {
            if (v.is_string() && detail::one_of(v.get<std::string>(), kDeliverySpeeds)) p.deliverySpeed = v.get<std::string>();
            else errors.add(field, "must be REGULAR or RUSH");
        } else if (field == "shiftAvailability") {
            if (!v.is_object()) {
                errors.add(field, "must map weekday to a list of HH:MM-HH:MM ranges");
                continue;
            }
            std::map<std::string, std::vector<std::string>> shifts;
            bool ok = true;
            for (const auto& [day, ranges] : v.items()) {
                const auto list = detail::string_list(ranges);
                if (std::find(kWeekdays.begin(), kWeekdays.end(), day) == kWeekdays.end() || !list) {
                    errors.add(field, "unknown weekday or non-list value for '" + day + "'");
                    ok = false;
                    break;
                }
                for (const auto& r : *list) {
                    if (!parse_shift_range(r)) {
                        errors.add(field, "range '" + r + "' on " + day + " must be HH:MM-HH:MM with start before end");
                        ok = false;
                    }
                }
                shifts[day] = *list;
            }
            if (ok) p.shiftAvailability = std::move(shifts);
        } else if (field == "deliveryPreferences") {
            const auto list = detail::string_list(v);
            if (!list) {
                errors.add(field, "must be a list of strings");
                continue;
            }
            bool ok = true;
            for (const auto& s : *list) {
                if (!parse_order_size(s)) {
                    errors.add(field, "unknown order size '" + s + "'");
                    ok = false;
                }
            }
            if (ok) p.deliveryPreferences = *list;
        } else if (field == "dietaryRestrictions") {
            const auto list = detail::string_list(v);
            const bool none_only = list && list->size() == 1 && (*list)[0] == "NONE";
            const bool has_none = list && std::find(list->begin(), list->end(), "NONE") != list->end();
            if (!list || list->empty() || (!none_only && has_none))
                errors.add(field, "must be [\"NONE\"] or a non-empty list without NONE");
            else p.dietaryRestrictions = *list;
        } else if (field == "earningGoals") {
            if (!v.is_object()) {
                errors.add(field, "must be an object");
                continue;
            }
            std::map<std::string, std::string> goals;
            bool ok = true;
            for (const auto& [k, g] : v.items()) {
                if (k != "maximize" || !g.is_string()) {
                    errors.add(field, "only the \"maximize\" key with a text value is supported");
                    ok = false;
                    break;
                }
                goals[k] = g.get<std::string>();
            }
            if (ok) p.earningGoals = std::move(goals);
        } else if (field == "maxItemWeightLbs") {
            if (v.is_null()) p.maxItemWeightLbs.reset();
            else if (v.is_number() && v.get<double>() > 0) p.maxItemWeightLbs = v.get<double>();
            else errors.add(field, "must be a number greater than 0");
        } else if (field == "preferredAreas" || field == "foodPreferences" || field == "restaurantTypes" ||
                   field == "cuisineTypes") {
            const auto list = detail::string_list(v);
            if (!list) {
                errors.add(field, "must be a list of strings");
                continue;
            }
            if (field == "preferredAreas") p.preferredAreas = *list;
            else if (field == "foodPreferences") p.foodPreferences = *list;
            else if (field == "restaurantTypes") p.restaurantTypes = *list;
            else p.cuisineTypes = *list;
        } else {
            errors.add(field, "unknown preference field");
        }
    }
    if (!errors.empty())
        throw Error(ErrorCode::ValidationError, "invalid preference fields", {{"fields", errors.fields}});
    return p;
}

inline CourierPreferences preferences_from_json(const nlohmann::json& j) {
    nlohmann::json patch = j;
    if (patch.is_object()) {
        if (patch.contains("vehicleType") && patch["vehicleType"].is_null()) patch.erase("vehicleType");
        if (patch.contains("maxItemWeightLbs") && patch["maxItemWeightLbs"].is_null()) patch.erase("maxItemWeightLbs");
    }
    return apply_patch(CourierPreferences{}, patch);
}

/// Hard constraints decide eligibility; soft fields never block.
inline MatchResult matches(const CourierPreferences& p, const delivery::Delivery& d, Timestamp at,
                           const MatchConfig& config = {}) {
    MatchResult r;
    auto fail = [&](std::string why) {
        r.eligible = false;
        r.reasons.push_back(std::move(why));
    };
    if (!geo::contains(p.deliveryPolygon, d.pickupLocation.position)) fail("pickup outside deliveryPolygon");
    if (!geo::contains(p.deliveryPolygon, d.dropoffLocation.position)) fail("dropoff outside deliveryPolygon");

    if (!p.shiftAvailability.empty()) {
        const auto day = std::string(kWeekdays[static_cast<std::size_t>(local_weekday(at, config.utcOffsetMinutes))]);
        const int minute = local_minute_of_day(at, config.utcOffsetMinutes);
        bool in_shift = false;
        if (auto it = p.shiftAvailability.find(day); it != p.shiftAvailability.end()) {
            for (const auto& s : it->second) {
                const auto range = parse_shift_range(s);
                if (range && minute >= range->startMinute && minute < range->endMinute) in_shift = true;
            }
        }
        if (!in_shift) fail("outside shiftAvailability");
    }

    if (d.itemWeightLbs && p.maxItemWeightLbs && *d.itemWeightLbs > *p.maxItemWeightLbs)
        fail("item weight exceeds maxItemWeightLbs");

    if (!p.deliveryPreferences.empty() && d.itemWeightLbs) {
        const OrderSize size = classify(*d.itemWeightLbs, config);
        const bool wanted = std::any_of(p.deliveryPreferences.begin(), p.deliveryPreferences.end(),
                                        [&](const std::string& s) { return parse_order_size(s) == size; });
        if (!wanted) fail("order size not in deliveryPreferences");
    }

    if (!p.restaurantTypes.empty()) {
        const bool overlap = std::any_of(d.merchantTags.begin(), d.merchantTags.end(), [&](const std::string& tag) {
            return std::any_of(p.restaurantTypes.begin(), p.restaurantTypes.end(),
                               [&](const std::string& t) { return text::to_lower(t) == text::to_lower(tag); });
        });
        if (!overlap) fail("no merchant tag in restaurantTypes");
    }
    return r;
}

/// Soft preferences passed along to matchers as ranking hints.
inline nlohmann::json ranking_hints(const CourierPreferences& p) {
    return {{"deliverySpeed", p.deliverySpeed},
            {"earningGoals", p.earningGoals},
            {"cuisineTypes", p.cuisineTypes},
            {"preferredAreas", p.preferredAreas},
            {"foodPreferences", p.foodPreferences},
            {"dietaryRestrictions", p.dietaryRestrictions}};
}

}  // namespace opencourier::preferences
