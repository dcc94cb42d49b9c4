#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "opencourier/delivery.hpp"
#include "opencourier/error.hpp"
#include "opencourier/geo.hpp"
#include "opencourier/preferences.hpp"
#include "opencourier/time.hpp"

namespace opencourier::assignment {

/// Dispatcher's view of one courier.
struct CourierState {
    std::string courierId;
    delivery::CourierAvailability availability = delivery::CourierAvailability::Offline;
    std::optional<geo::LonLat> position;
    Timestamp positionAt{};
    int activeDeliveryCount = 0;
    Timestamp enrolledAt{};
    preferences::CourierPreferences prefs;
};

enum class PolicyKind { Nearest, MostSenior, Specified };

inline std::string to_string(PolicyKind k) {
    switch (k) {
        case PolicyKind::Nearest: return "NEAREST";
        case PolicyKind::MostSenior: return "MOST_SENIOR";
        case PolicyKind::Specified: return "SPECIFIED";
    }
    return "?";
}

inline PolicyKind policy_kind_from_string(std::string_view s) {
    for (auto k : {PolicyKind::Nearest, PolicyKind::MostSenior, PolicyKind::Specified})
        if (to_string(k) == s) return k;
    throw Error(ErrorCode::ValidationError, "policy must be NEAREST, MOST_SENIOR or SPECIFIED", {{"field", "policy"}});
}

struct AssignmentPolicy {
    PolicyKind kind = PolicyKind::Nearest;
    std::optional<std::string> courierId;  // SPECIFIED only
    bool respectPreferences = true;
    std::chrono::seconds staleness{120};
    int maxActiveDeliveries = 3;
    int maxAttempts = 3;

    friend bool operator==(const AssignmentPolicy&, const AssignmentPolicy&) = default;
};

inline nlohmann::json to_json(const AssignmentPolicy& p) {
    return {{"policy", to_string(p.kind)},
            {"courierId", p.courierId ? nlohmann::json(*p.courierId) : nlohmann::json()},
            {"respectPreferences", p.respectPreferences},
            {"stalenessSeconds", p.staleness.count()},
            {"maxActiveDeliveries", p.maxActiveDeliveries},
            {"maxAttempts", p.maxAttempts},
            {"tieBreak", "COURIER_ID_ASC"}};
}

/// Reads a policy document; unspecified knobs keep the values in `base`.
inline AssignmentPolicy policy_from_json(const nlohmann::json& j, AssignmentPolicy base = {}) {
    if (!j.is_object() || !j.contains("policy") || !j["policy"].is_string())
        throw Error(ErrorCode::ValidationError, "policy document needs a \"policy\" field", {{"field", "policy"}});
    AssignmentPolicy p = base;
    p.kind = policy_kind_from_string(j["policy"].get<std::string>());
    p.courierId.reset();
    if (p.kind == PolicyKind::Specified) {
        if (!j.contains("courierId") || !j["courierId"].is_string() || j["courierId"].get<std::string>().empty())
            throw Error(ErrorCode::ValidationError, "SPECIFIED needs a courierId", {{"field", "courierId"}});
        p.courierId = j["courierId"].get<std::string>();
    }
    auto positive_int = [&](const char* field, auto& target) {
        if (!j.contains(field)) return;
        if (!j[field].is_number_integer() || j[field].get<long long>() < 1)
            throw Error(ErrorCode::ValidationError, std::string(field) + " must be a positive integer", {{"field", field}});
        target = static_cast<std::remove_reference_t<decltype(target)>>(j[field].get<long long>());
    };
    if (j.contains("respectPreferences")) {
        if (!j["respectPreferences"].is_boolean())
            throw Error(ErrorCode::ValidationError, "respectPreferences must be a boolean", {{"field", "respectPreferences"}});
        p.respectPreferences = j["respectPreferences"].get<bool>();
    }
    long long staleness = p.staleness.count();
    positive_int("stalenessSeconds", staleness);
    p.staleness = std::chrono::seconds(staleness);
    positive_int("maxActiveDeliveries", p.maxActiveDeliveries);
    positive_int("maxAttempts", p.maxAttempts);
    if (j.contains("tieBreak") && j["tieBreak"] != "COURIER_ID_ASC")
        throw Error(ErrorCode::ValidationError, "only COURIER_ID_ASC tie-breaking is supported", {{"field", "tieBreak"}});
    return p;
}

using DistanceMetric = std::function<double(const geo::LonLat&, const geo::LonLat&)>;

inline double haversine_metric(const geo::LonLat& a, const geo::LonLat& b) { return geo::haversine_meters(a, b); }

struct Context {
    AssignmentPolicy policy;
    preferences::MatchConfig match;
    /// Couriers that already rejected this task chain.
    std::set<std::string> excluded;
    DistanceMetric metric = haversine_metric;
};

inline bool is_fresh(const CourierState& c, Timestamp at, std::chrono::seconds staleness) {
    return c.position && c.positionAt <= at && at - c.positionAt <= staleness;
}

/// Couriers able to take `d` at `at`, in input order.
inline std::vector<CourierState> eligible_couriers(const delivery::Delivery& d, const std::vector<CourierState>& fleet,
                                                   Timestamp at, const Context& ctx) {
    std::vector<CourierState> out;
    for (const auto& c : fleet) {
        if (c.availability != delivery::CourierAvailability::Online) continue;
        if (!is_fresh(c, at, ctx.policy.staleness)) continue;
        if (c.activeDeliveryCount >= ctx.policy.maxActiveDeliveries) continue;
        if (ctx.excluded.count(c.courierId)) continue;
        if (ctx.policy.respectPreferences && !preferences::matches(c.prefs, d, at, ctx.match).eligible) continue;
        out.push_back(c);
    }
    return out;
}

struct Choice {
    std::string courierId;
    std::size_t candidates = 0;
};

/// Picks a courier for `d` without changing it. NO_CANDIDATE when nobody fits.
inline Choice choose(const delivery::Delivery& d, const std::vector<CourierState>& fleet, Timestamp at, const Context& ctx) {
    const auto pool = eligible_couriers(d, fleet, at, ctx);
    const CourierState* best = nullptr;
    switch (ctx.policy.kind) {
        case PolicyKind::Nearest: {
            double best_d = 0;
            for (const auto& c : pool) {
                const double dist = ctx.metric(*c.position, d.pickupLocation.position);
                if (!best || dist < best_d || (dist == best_d && c.courierId < best->courierId)) {
                    best = &c;
                    best_d = dist;
                }
            }
            break;
        }
        case PolicyKind::MostSenior:
            for (const auto& c : pool)
                if (!best || c.enrolledAt < best->enrolledAt ||
                    (c.enrolledAt == best->enrolledAt && c.courierId < best->courierId))
                    best = &c;
            break;
        case PolicyKind::Specified:
            for (const auto& c : pool)
                if (ctx.policy.courierId && c.courierId == *ctx.policy.courierId) best = &c;
            break;
    }
    if (!best)
        throw Error(ErrorCode::NoCandidate, "no eligible courier",
                    {{"deliveryId", d.deliveryId}, {"policy", to_string(ctx.policy.kind)}, {"fleet", fleet.size()}});
    return {best->courierId, pool.size()};
}

/// Chooses a courier and applies the DISPATCH transition as SYSTEM.
inline delivery::Delivery assign(const delivery::Delivery& d, const std::vector<CourierState>& fleet, Timestamp at,
                                 const Context& ctx, const delivery::LifecycleConfig& lifecycle = {}) {
    if (d.status != delivery::DeliveryStatus::Created)
        throw Error(ErrorCode::IllegalState, "only CREATED deliveries can be assigned",
                    {{"deliveryId", d.deliveryId}, {"status", to_string(d.status)}});
    const auto choice = choose(d, fleet, at, ctx);
    delivery::TransitionRequest req;
    req.event = delivery::TransitionEvent::Dispatch;
    req.actor = delivery::Actor::system();
    req.targetCourierId = choice.courierId;
    req.detail = {{"policy", to_string(ctx.policy.kind)}, {"candidates", choice.candidates}};
    return delivery::transition(d, req, at, lifecycle);
}

/// Fresh CREATED attempt for the same task after a rejection.
inline delivery::Delivery next_attempt(const delivery::Delivery& rejected, const std::string& newId, Timestamp at) {
    delivery::Delivery d = rejected;
    d.deliveryId = newId;
    d.courierId.reset();
    d.status = delivery::DeliveryStatus::Created;
    d.tripPhase = delivery::TripPhase::None;
    d.issue.reset();
    d.history.clear();
    d.attempt = rejected.attempt + 1;
    d.createdAt = d.updatedAt = std::max(at, rejected.updatedAt);
    return d;
}

}  // namespace opencourier::assignment
