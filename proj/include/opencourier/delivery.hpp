#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "opencourier/error.hpp"
#include "opencourier/geo.hpp"
#include "opencourier/money.hpp"
#include "opencourier/time.hpp"

namespace opencourier::delivery {

enum class DeliveryStatus { Created, Dispatched, Accepted, Rejected, Canceled, PickedUp, Delivered };
enum class TripPhase { None, ArrivedAtPickup, OnTheWay, ArrivedAtDropoff };
enum class CourierAvailability { Online, Offline, LastCall };
enum class TransitionEvent {
    Dispatch,
    Accept,
    Reject,
    Cancel,
    ArrivedAtPickup,
    MarkPickedUp,
    MarkOnTheWay,
    ArrivedAtDropoff,
    MarkDelivered,
    ReportIssue,
};

inline constexpr std::array kAllStatuses = {DeliveryStatus::Created,  DeliveryStatus::Dispatched,
                                            DeliveryStatus::Accepted, DeliveryStatus::Rejected,
                                            DeliveryStatus::Canceled, DeliveryStatus::PickedUp,
                                            DeliveryStatus::Delivered};
inline constexpr std::array kAllPhases = {TripPhase::None, TripPhase::ArrivedAtPickup, TripPhase::OnTheWay,
                                          TripPhase::ArrivedAtDropoff};
inline constexpr std::array kAllEvents = {
    TransitionEvent::Dispatch,     TransitionEvent::Accept,        TransitionEvent::Reject,
    TransitionEvent::Cancel,       TransitionEvent::ArrivedAtPickup, TransitionEvent::MarkPickedUp,
    TransitionEvent::MarkOnTheWay, TransitionEvent::ArrivedAtDropoff, TransitionEvent::MarkDelivered,
    TransitionEvent::ReportIssue};

constexpr std::string_view to_string(DeliveryStatus s) {
    switch (s) {
        case DeliveryStatus::Created: return "CREATED";
        case DeliveryStatus::Dispatched: return "DISPATCHED";
        case DeliveryStatus::Accepted: return "ACCEPTED";
        case DeliveryStatus::Rejected: return "REJECTED";
        case DeliveryStatus::Canceled: return "CANCELED";
        case DeliveryStatus::PickedUp: return "PICKED_UP";
        case DeliveryStatus::Delivered: return "DELIVERED";
    }
    return "?";
}

constexpr std::string_view to_string(TripPhase p) {
    switch (p) {
        case TripPhase::None: return "NONE";
        case TripPhase::ArrivedAtPickup: return "ARRIVED_AT_PICKUP";
        case TripPhase::OnTheWay: return "ON_THE_WAY";
        case TripPhase::ArrivedAtDropoff: return "ARRIVED_AT_DROPOFF";
    }
    return "?";
}

constexpr std::string_view to_string(CourierAvailability a) {
    switch (a) {
        case CourierAvailability::Online: return "ONLINE";
        case CourierAvailability::Offline: return "OFFLINE";
        case CourierAvailability::LastCall: return "LAST_CALL";
    }
    return "?";
}

constexpr std::string_view to_string(TransitionEvent e) {
    switch (e) {
        case TransitionEvent::Dispatch: return "DISPATCH";
        case TransitionEvent::Accept: return "ACCEPT";
        case TransitionEvent::Reject: return "REJECT";
        case TransitionEvent::Cancel: return "CANCEL";
        case TransitionEvent::ArrivedAtPickup: return "ARRIVED_AT_PICKUP";
        case TransitionEvent::MarkPickedUp: return "MARK_PICKED_UP";
        case TransitionEvent::MarkOnTheWay: return "MARK_ON_THE_WAY";
        case TransitionEvent::ArrivedAtDropoff: return "ARRIVED_AT_DROPOFF";
        case TransitionEvent::MarkDelivered: return "MARK_DELIVERED";
        case TransitionEvent::ReportIssue: return "REPORT_ISSUE";
    }
    return "?";
}

template <typename Enum, std::size_t N>
Enum enum_from_string(std::string_view text, const std::array<Enum, N>& all, const char* what) {
    for (Enum e : all)
        if (to_string(e) == text) return e;
    throw Error(ErrorCode::ValidationError, std::string("unknown ") + what + ": " + std::string(text));
}

inline DeliveryStatus status_from_string(std::string_view s) { return enum_from_string(s, kAllStatuses, "status"); }
inline TripPhase phase_from_string(std::string_view s) { return enum_from_string(s, kAllPhases, "trip phase"); }
inline TransitionEvent event_from_string(std::string_view s) { return enum_from_string(s, kAllEvents, "event"); }
inline CourierAvailability availability_from_string(std::string_view s) {
    constexpr std::array all = {CourierAvailability::Online, CourierAvailability::Offline, CourierAvailability::LastCall};
    return enum_from_string(s, all, "availability");
}

struct State {
    DeliveryStatus status = DeliveryStatus::Created;
    TripPhase phase = TripPhase::None;

    friend bool operator==(const State&, const State&) = default;
};

constexpr bool is_terminal(DeliveryStatus s) {
    return s == DeliveryStatus::Delivered || s == DeliveryStatus::Canceled || s == DeliveryStatus::Rejected;
}

/// A trip phase is only meaningful while the courier holds the order.
constexpr bool is_valid_state(State s) {
    switch (s.status) {
        case DeliveryStatus::Accepted:
            return s.phase == TripPhase::None || s.phase == TripPhase::ArrivedAtPickup;
        case DeliveryStatus::PickedUp:
            return s.phase == TripPhase::None || s.phase == TripPhase::OnTheWay || s.phase == TripPhase::ArrivedAtDropoff;
        default:
            return s.phase == TripPhase::None;
    }
}

/// The normative edge table. Returns the successor state, or nothing when the
/// event is not legal from `s`. The post-delivery issue grace window is a
/// time-guarded edge handled by `transition`, not part of this table.
constexpr std::optional<State> next_state(State s, TransitionEvent ev) {
    using S = DeliveryStatus;
    using P = TripPhase;
    using E = TransitionEvent;
    if (!is_valid_state(s)) return std::nullopt;
    switch (ev) {
        case E::Dispatch:
            if (s.status == S::Created) return State{S::Dispatched, P::None};
            break;
        case E::Accept:
            if (s.status == S::Dispatched) return State{S::Accepted, P::None};
            break;
        case E::Reject:
            if (s.status == S::Dispatched) return State{S::Rejected, P::None};
            break;
        case E::ArrivedAtPickup:
            if (s == State{S::Accepted, P::None}) return State{S::Accepted, P::ArrivedAtPickup};
            break;
        case E::MarkPickedUp:
            if (s == State{S::Accepted, P::ArrivedAtPickup}) return State{S::PickedUp, P::None};
            break;
        case E::MarkOnTheWay:
            if (s == State{S::PickedUp, P::None}) return State{S::PickedUp, P::OnTheWay};
            break;
        case E::ArrivedAtDropoff:
            if (s == State{S::PickedUp, P::OnTheWay}) return State{S::PickedUp, P::ArrivedAtDropoff};
            break;
        case E::MarkDelivered:
            if (s == State{S::PickedUp, P::ArrivedAtDropoff}) return State{S::Delivered, P::None};
            break;
        case E::Cancel:
            if (s.status == S::Dispatched || s.status == S::Accepted || s.status == S::PickedUp)
                return State{S::Canceled, P::None};
            break;
        case E::ReportIssue:
            if (!is_terminal(s.status)) return s;
            break;
    }
    return std::nullopt;
}

struct Actor {
    enum class Kind { Courier, Admin, System };
    Kind kind = Kind::System;
    std::string id;

    static Actor courier(std::string id) { return {Kind::Courier, std::move(id)}; }
    static Actor admin(std::string id = {}) { return {Kind::Admin, std::move(id)}; }
    static Actor system() { return {Kind::System, {}}; }

    std::string label() const {
        switch (kind) {
            case Kind::Courier: return "COURIER:" + id;
            case Kind::Admin: return id.empty() ? "ADMIN" : "ADMIN:" + id;
            case Kind::System: return "SYSTEM";
        }
        return "?";
    }

    static Actor from_label(std::string_view label) {
        if (label == "SYSTEM") return system();
        if (label == "ADMIN") return admin();
        if (label.rfind("ADMIN:", 0) == 0) return admin(std::string(label.substr(6)));
        if (label.rfind("COURIER:", 0) == 0) return courier(std::string(label.substr(8)));
        throw Error(ErrorCode::ValidationError, "unknown actor: " + std::string(label));
    }

    friend bool operator==(const Actor&, const Actor&) = default;
};

struct Place {
    geo::LonLat position;
    std::string address;

    friend bool operator==(const Place&, const Place&) = default;
};

struct Issue {
    std::string code;
    std::string note;

    friend bool operator==(const Issue&, const Issue&) = default;
};

struct HistoryEntry {
    Timestamp at;
    Actor actor;
    TransitionEvent event = TransitionEvent::Dispatch;
    /// State after the event was applied.
    State state;
    nlohmann::json detail = nlohmann::json::object();
};

struct Delivery {
    std::string deliveryId;
    std::string instanceDomain;
    std::optional<std::string> courierId;
    DeliveryStatus status = DeliveryStatus::Created;
    TripPhase tripPhase = TripPhase::None;
    Place pickupLocation;
    Place dropoffLocation;
    std::optional<double> itemWeightLbs;
    std::vector<std::string> merchantTags;
    std::int64_t payoutMinor = 0;
    std::string currency = "USD";
    Timestamp createdAt{};
    Timestamp updatedAt{};
    std::optional<Issue> issue;
    std::vector<HistoryEntry> history;

    // Linkage to the task chain and the negotiated quote.
    std::string taskId;
    int attempt = 1;
    std::optional<std::string> threadId;
    double distance = 0.0;
    std::string distanceUnit = "MILES";
    std::optional<Timestamp> pickupDeadlineAt;
    std::optional<Timestamp> dropoffDeadlineAt;

    State state() const { return {status, tripPhase}; }
};

struct LifecycleConfig {
    Duration issueGraceWindow = std::chrono::hours(24);
};

struct TransitionRequest {
    TransitionEvent event = TransitionEvent::Dispatch;
    Actor actor;
    /// Courier receiving the delivery on DISPATCH.
    std::optional<std::string> targetCourierId;
    /// Issue payload for REPORT_ISSUE.
    std::optional<Issue> issue;
    nlohmann::json detail = nlohmann::json::object();
};

inline std::optional<Timestamp> delivered_at(const Delivery& d) {
    for (auto it = d.history.rbegin(); it != d.history.rend(); ++it)
        if (it->event == TransitionEvent::MarkDelivered) return it->at;
    return std::nullopt;
}

struct ReplayResult {
    State state;
    std::optional<std::string> courierId;
};

/// Folds history from CREATED. Throws ILLEGAL_TRANSITION when an entry is not a
/// legal edge or disagrees with its recorded resulting state.
inline ReplayResult replay(const std::vector<HistoryEntry>& history, const LifecycleConfig& config = {}) {
    ReplayResult r;
    std::optional<Timestamp> delivered;
    std::optional<Timestamp> previous;
    for (std::size_t i = 0; i < history.size(); ++i) {
        const auto& h = history[i];
        if (previous && h.at < *previous)
            throw Error(ErrorCode::IllegalTransition, "history timestamps decrease at entry " + std::to_string(i));
        previous = h.at;
        std::optional<State> next;
        if (h.event == TransitionEvent::ReportIssue && r.state.status == DeliveryStatus::Delivered && delivered &&
            h.at - *delivered <= config.issueGraceWindow) {
            next = r.state;
        } else {
            next = next_state(r.state, h.event);
        }
        if (!next || !(*next == h.state)) {
            throw Error(ErrorCode::IllegalTransition,
                        "history entry " + std::to_string(i) + " (" + std::string(to_string(h.event)) +
                            ") is not a legal edge from " + std::string(to_string(r.state.status)) + "/" +
                            std::string(to_string(r.state.phase)));
        }
        if (h.event == TransitionEvent::Dispatch && h.detail.contains("courierId"))
            r.courierId = h.detail["courierId"].get<std::string>();
        if (h.event == TransitionEvent::MarkDelivered) delivered = h.at;
        r.state = *next;
    }
    return r;
}

/// Applies one lifecycle event. Checks, in order: actor identity against the
/// assignment, edge legality, then role restrictions.
inline Delivery transition(Delivery d, const TransitionRequest& req, Timestamp at, const LifecycleConfig& config = {}) {
    using E = TransitionEvent;
    using K = Actor::Kind;
    const State from = d.state();
    auto forbidden = [&](const std::string& why) {
        return Error(ErrorCode::ForbiddenActor, why,
                     {{"deliveryId", d.deliveryId}, {"actor", req.actor.label()}, {"event", to_string(req.event)}});
    };

    switch (req.actor.kind) {
        case K::Courier:
            if (req.event == E::Dispatch) {
                if (!req.targetCourierId || *req.targetCourierId != req.actor.id)
                    throw forbidden("couriers may only dispatch deliveries to themselves");
                if (d.courierId && *d.courierId != req.actor.id)
                    throw forbidden("delivery is reserved for another courier");
            } else if (!d.courierId || *d.courierId != req.actor.id) {
                throw forbidden("delivery is not assigned to this courier");
            }
            break;
        case K::Admin:
            if (req.event != E::Dispatch && req.event != E::Cancel && req.event != E::ReportIssue)
                throw forbidden("admins may only dispatch, cancel, or report issues");
            break;
        case K::System:
            if (req.event != E::Dispatch && req.event != E::Cancel)
                throw forbidden("system actor may only dispatch or cancel");
            break;
    }

    std::optional<State> next = next_state(from, req.event);
    if (req.event == E::ReportIssue && !next) {
        const auto done = delivered_at(d);
        if (from.status == DeliveryStatus::Delivered && done && at - *done <= config.issueGraceWindow) {
            next = from;
        } else if (is_terminal(from.status)) {
            throw Error(ErrorCode::IssueWindowClosed,
                        "issues cannot be reported on a " + std::string(to_string(from.status)) + " delivery",
                        {{"deliveryId", d.deliveryId}, {"status", to_string(from.status)}});
        }
    }
    if (!next) {
        throw Error(ErrorCode::IllegalTransition,
                    std::string(to_string(req.event)) + " is not allowed from " + std::string(to_string(from.status)) +
                        "/" + std::string(to_string(from.phase)),
                    {{"deliveryId", d.deliveryId},
                     {"status", to_string(from.status)},
                     {"tripPhase", to_string(from.phase)},
                     {"event", to_string(req.event)}});
    }
    if (req.actor.kind == K::Courier && req.event == E::Cancel && from.status != DeliveryStatus::Accepted)
        throw forbidden("couriers may cancel only accepted deliveries; reject instead");
    if (req.event == E::Dispatch && !req.targetCourierId)
        throw Error(ErrorCode::ValidationError, "DISPATCH requires a target courier");
    if (req.event == E::ReportIssue && (!req.issue || req.issue->code.empty()))
        throw Error(ErrorCode::ValidationError, "REPORT_ISSUE requires an issue code");

    const Timestamp when = std::max({at, d.updatedAt, d.createdAt});
    HistoryEntry entry{when, req.actor, req.event, *next, req.detail.is_object() ? req.detail : nlohmann::json::object()};
    if (req.event == E::Dispatch) {
        d.courierId = *req.targetCourierId;
        entry.detail["courierId"] = *req.targetCourierId;
    }
    if (req.event == E::ReportIssue) {
        d.issue = *req.issue;
        entry.detail["code"] = req.issue->code;
        entry.detail["note"] = req.issue->note;
    }
    d.status = next->status;
    d.tripPhase = next->phase;
    d.updatedAt = when;
    d.history.push_back(std::move(entry));

    const auto replayed = replay(d.history, config);
    if (!(replayed.state == d.state()))
        throw Error(ErrorCode::IllegalState, "history replay diverged for delivery " + d.deliveryId);
    return d;
}

enum class Bucket { New, InProgress, Done };

constexpr std::optional<Bucket> bucket_of(DeliveryStatus s) {
    switch (s) {
        case DeliveryStatus::Dispatched: return Bucket::New;
        case DeliveryStatus::Accepted:
        case DeliveryStatus::PickedUp: return Bucket::InProgress;
        case DeliveryStatus::Delivered:
        case DeliveryStatus::Canceled:
        case DeliveryStatus::Rejected: return Bucket::Done;
        case DeliveryStatus::Created: return std::nullopt;
    }
    return std::nullopt;
}

/// A courier's deliveries in one bucket, newest update first, then by id.
inline std::vector<Delivery> list_deliveries(const std::vector<Delivery>& all, const std::string& courierId, Bucket bucket) {
    std::vector<Delivery> out;
    for (const auto& d : all)
        if (d.courierId && *d.courierId == courierId && bucket_of(d.status) == bucket) out.push_back(d);
    std::sort(out.begin(), out.end(), [](const Delivery& a, const Delivery& b) {
        if (a.updatedAt != b.updatedAt) return a.updatedAt > b.updatedAt;
        return a.deliveryId < b.deliveryId;
    });
    return out;
}

inline nlohmann::json to_json(const geo::LonLat& p) { return {{"lon", p.lon}, {"lat", p.lat}}; }

inline geo::LonLat lonlat_from_json(const nlohmann::json& j, const char* field) {
    if (!j.is_object() || !j.contains("lon") || !j.contains("lat") || !j["lon"].is_number() || !j["lat"].is_number())
        throw Error(ErrorCode::ValidationError, std::string(field) + " must be an object with numeric lon and lat",
                    {{"field", field}});
    geo::LonLat p{j["lon"].get<double>(), j["lat"].get<double>()};
    if (!geo::valid_position(p))
        throw Error(ErrorCode::ValidationError, std::string(field) + " is outside the WGS84 range", {{"field", field}});
    return p;
}

inline nlohmann::json to_json(const Place& p) {
    return {{"lon", p.position.lon}, {"lat", p.position.lat}, {"address", p.address}};
}

inline Place place_from_json(const nlohmann::json& j, const char* field) {
    Place p{lonlat_from_json(j, field), {}};
    if (j.contains("address")) {
        if (!j["address"].is_string())
            throw Error(ErrorCode::ValidationError, std::string(field) + ".address must be a string", {{"field", field}});
        p.address = j["address"].get<std::string>();
    }
    return p;
}

inline nlohmann::json to_json(const HistoryEntry& h) {
    return {{"at", format_iso8601(h.at)},
            {"actor", h.actor.label()},
            {"event", to_string(h.event)},
            {"status", to_string(h.state.status)},
            {"tripPhase", to_string(h.state.phase)},
            {"detail", h.detail}};
}

inline HistoryEntry history_entry_from_json(const nlohmann::json& j) {
    HistoryEntry h;
    h.at = parse_iso8601(j.at("at").get<std::string>());
    h.actor = Actor::from_label(j.at("actor").get<std::string>());
    h.event = event_from_string(j.at("event").get<std::string>());
    h.state = {status_from_string(j.at("status").get<std::string>()), phase_from_string(j.at("tripPhase").get<std::string>())};
    if (j.contains("detail")) h.detail = j["detail"];
    return h;
}

inline nlohmann::json to_json(const Delivery& d) {
    const int exp = currency_exponent(d.currency);
    nlohmann::json history = nlohmann::json::array();
    for (const auto& h : d.history) history.push_back(to_json(h));
    nlohmann::json j = {{"deliveryId", d.deliveryId},
                        {"instanceDomain", d.instanceDomain},
                        {"courierId", d.courierId ? nlohmann::json(*d.courierId) : nlohmann::json(nullptr)},
                        {"status", to_string(d.status)},
                        {"tripPhase", to_string(d.tripPhase)},
                        {"pickupLocation", to_json(d.pickupLocation)},
                        {"dropoffLocation", to_json(d.dropoffLocation)},
                        {"itemWeightLbs", d.itemWeightLbs ? nlohmann::json(*d.itemWeightLbs) : nlohmann::json(nullptr)},
                        {"merchantTags", d.merchantTags},
                        {"payout", minor_units_to_json(d.payoutMinor, exp)},
                        {"currency", d.currency},
                        {"createdAt", format_iso8601(d.createdAt)},
                        {"updatedAt", format_iso8601(d.updatedAt)},
                        {"issue", d.issue ? nlohmann::json{{"code", d.issue->code}, {"note", d.issue->note}}
                                          : nlohmann::json(nullptr)},
                        {"history", std::move(history)},
                        {"taskId", d.taskId},
                        {"attempt", d.attempt},
                        {"threadId", d.threadId ? nlohmann::json(*d.threadId) : nlohmann::json(nullptr)},
                        {"distance", d.distance},
                        {"distanceUnit", d.distanceUnit}};
    if (d.pickupDeadlineAt) j["pickupDeadlineAt"] = format_iso8601(*d.pickupDeadlineAt);
    if (d.dropoffDeadlineAt) j["dropoffDeadlineAt"] = format_iso8601(*d.dropoffDeadlineAt);
    return j;
}

inline Delivery delivery_from_json(const nlohmann::json& j) {
    Delivery d;
    d.deliveryId = j.at("deliveryId").get<std::string>();
    d.instanceDomain = j.at("instanceDomain").get<std::string>();
    if (!j.at("courierId").is_null()) d.courierId = j["courierId"].get<std::string>();
    d.status = status_from_string(j.at("status").get<std::string>());
    d.tripPhase = phase_from_string(j.at("tripPhase").get<std::string>());
    d.pickupLocation = place_from_json(j.at("pickupLocation"), "pickupLocation");
    d.dropoffLocation = place_from_json(j.at("dropoffLocation"), "dropoffLocation");
    if (!j.at("itemWeightLbs").is_null()) d.itemWeightLbs = j["itemWeightLbs"].get<double>();
    d.merchantTags = j.at("merchantTags").get<std::vector<std::string>>();
    d.currency = j.at("currency").get<std::string>();
    d.payoutMinor = minor_units_from_json(j.at("payout"), currency_exponent(d.currency));
    d.createdAt = parse_iso8601(j.at("createdAt").get<std::string>());
    d.updatedAt = parse_iso8601(j.at("updatedAt").get<std::string>());
    if (!j.at("issue").is_null()) d.issue = Issue{j["issue"].at("code").get<std::string>(), j["issue"].at("note").get<std::string>()};
    for (const auto& h : j.at("history")) d.history.push_back(history_entry_from_json(h));
    d.taskId = j.value("taskId", std::string{});
    d.attempt = j.value("attempt", 1);
    if (j.contains("threadId") && !j["threadId"].is_null()) d.threadId = j["threadId"].get<std::string>();
    d.distance = j.value("distance", 0.0);
    d.distanceUnit = j.value("distanceUnit", std::string("MILES"));
    if (j.contains("pickupDeadlineAt")) d.pickupDeadlineAt = parse_iso8601(j["pickupDeadlineAt"].get<std::string>());
    if (j.contains("dropoffDeadlineAt")) d.dropoffDeadlineAt = parse_iso8601(j["dropoffDeadlineAt"].get<std::string>());
    return d;
}

}  // namespace opencourier::delivery
