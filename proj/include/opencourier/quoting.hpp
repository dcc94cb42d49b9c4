#pragma once

#include <algorithm>
#include <array>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "opencourier/delivery.hpp"
#include "opencourier/error.hpp"
#include "opencourier/geo.hpp"
#include "opencourier/ids.hpp"
#include "opencourier/money.hpp"
#include "opencourier/registry.hpp"
#include "opencourier/repository.hpp"
#include "opencourier/time.hpp"

namespace opencourier::quoting {

inline constexpr double kMetersPerMile = 1609.344;

/// Terms a requester proposes for one delivery. Amounts are minor units of
/// `currency`.
struct DeliveryQuote {
    std::string quoteId;
    std::int64_t quote = 0;
    std::int64_t quoteRangeFrom = 0;
    std::int64_t quoteRangeTo = 0;
    FeeRate feePercentage;
    std::string currency = "USD";
    double duration = 0;
    double distance = 0;
    std::string distanceUnit = "MILES";
    std::optional<std::string> pickupPhoneNumber;
    std::string pickupName;
    std::string dropoffPhoneNumber;
    std::string dropoffName;
    Timestamp expiresAt{};
    Timestamp pickupReadyAt{};
    Timestamp pickupDeadlineAt{};
    Timestamp dropoffReadyAt{};
    Timestamp dropoffEta{};
    Timestamp dropoffDeadlineAt{};
    std::int64_t orderTotalValue = 0;
    delivery::Place pickupLocation;
    delivery::Place dropoffLocation;
    // Optional inputs for preference matching.
    std::optional<double> itemWeightLbs;
    std::vector<std::string> merchantTags;
};

enum class ThreadState { Open, Accepted, Rejected, Expired, Finalized };
enum class Party { Requester, Instance, System };
enum class RoundKind { Offer, Counter, Accept, Reject };

inline std::string to_string(ThreadState s) {
    static constexpr std::array<const char*, 5> names{"OPEN", "ACCEPTED", "REJECTED", "EXPIRED", "FINALIZED"};
    return names[static_cast<std::size_t>(s)];
}
inline std::string to_string(Party p) {
    static constexpr std::array<const char*, 3> names{"REQUESTER", "INSTANCE", "SYSTEM"};
    return names[static_cast<std::size_t>(p)];
}
inline std::string to_string(RoundKind k) {
    static constexpr std::array<const char*, 4> names{"OFFER", "COUNTER", "ACCEPT", "REJECT"};
    return names[static_cast<std::size_t>(k)];
}

inline ThreadState thread_state_from_string(std::string_view s) {
    for (auto v : {ThreadState::Open, ThreadState::Accepted, ThreadState::Rejected, ThreadState::Expired,
                   ThreadState::Finalized})
        if (to_string(v) == s) return v;
    throw Error(ErrorCode::ValidationError, "unknown thread state: " + std::string(s));
}
inline Party party_from_string(std::string_view s) {
    for (auto v : {Party::Requester, Party::Instance, Party::System})
        if (to_string(v) == s) return v;
    throw Error(ErrorCode::ValidationError, "unknown party: " + std::string(s));
}
inline RoundKind round_kind_from_string(std::string_view s) {
    for (auto v : {RoundKind::Offer, RoundKind::Counter, RoundKind::Accept, RoundKind::Reject})
        if (to_string(v) == s) return v;
    throw Error(ErrorCode::ValidationError, "unknown round kind: " + std::string(s));
}

struct Round {
    Party by = Party::Requester;
    RoundKind kind = RoundKind::Offer;
    std::string message;
    std::optional<std::int64_t> amount;
    Timestamp at{};
};

struct NegotiationThread {
    std::string threadId;
    DeliveryQuote quote;
    ThreadState state = ThreadState::Open;
    std::vector<Round> rounds;
    std::string requesterId;
    std::string instanceDomain;
    std::optional<std::string> broadcastGroupId;
    std::optional<std::int64_t> agreedAmount;
    std::optional<std::string> deliveryId;
    int maxRounds = 5;
    Timestamp createdAt{};
    Timestamp updatedAt{};
};

/// Sibling threads created by one broadcast. `winnerThreadId` is the
/// compare-and-set point that makes exactly one sibling accept.
struct BroadcastGroup {
    std::string broadcastGroupId;
    std::vector<std::string> threadIds;
    std::optional<std::string> winnerThreadId;
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline std::int64_t amount_field(const nlohmann::json& j, const char* field, int exp) {
    if (!j.contains(field)) throw Error(ErrorCode::ValidationError, std::string(field) + " is required", {{"field", field}});
    try {
        const auto v = minor_units_from_json(j.at(field), exp);
        if (v < 0) throw Error(ErrorCode::ValidationError, "must be >= 0");
        return v;
    } catch (const Error& e) {
        throw Error(ErrorCode::ValidationError, std::string(field) + ": " + e.message(), {{"field", field}});
    }
}

inline std::string string_field(const nlohmann::json& j, const char* field) {
    if (!j.contains(field) || !j.at(field).is_string())
        throw Error(ErrorCode::ValidationError, std::string(field) + " must be a string", {{"field", field}});
    return j.at(field).get<std::string>();
}

inline Timestamp time_field(const nlohmann::json& j, const char* field) {
    const auto s = string_field(j, field);
    try {
        return parse_iso8601(s);
    } catch (const Error&) {
        throw Error(ErrorCode::ValidationError, std::string(field) + " must be an ISO-8601 timestamp", {{"field", field}});
    }
}

inline double number_field(const nlohmann::json& j, const char* field) {
    if (!j.contains(field) || !j.at(field).is_number())
        throw Error(ErrorCode::ValidationError, std::string(field) + " must be a number", {{"field", field}});
    return j.at(field).get<double>();
}

}  // namespace detail

inline nlohmann::json to_json(const DeliveryQuote& q) {
    const int e = currency_exponent(q.currency);
    nlohmann::json j{{"quoteId", q.quoteId},
                     {"quote", minor_units_to_json(q.quote, e)},
                     {"quoteRangeFrom", minor_units_to_json(q.quoteRangeFrom, e)},
                     {"quoteRangeTo", minor_units_to_json(q.quoteRangeTo, e)},
                     {"feePercentage", q.feePercentage.to_json()},
                     {"currency", q.currency},
                     {"duration", q.duration},
                     {"distance", q.distance},
                     {"distanceUnit", q.distanceUnit},
                     {"pickupPhoneNumber", q.pickupPhoneNumber ? nlohmann::json(*q.pickupPhoneNumber) : nlohmann::json()},
                     {"pickupName", q.pickupName},
                     {"dropoffPhoneNumber", q.dropoffPhoneNumber},
                     {"dropoffName", q.dropoffName},
                     {"expiresAt", format_iso8601(q.expiresAt)},
                     {"pickupReadyAt", format_iso8601(q.pickupReadyAt)},
                     {"pickupDeadlineAt", format_iso8601(q.pickupDeadlineAt)},
                     {"dropoffReadyAt", format_iso8601(q.dropoffReadyAt)},
                     {"dropoffEta", format_iso8601(q.dropoffEta)},
                     {"dropoffDeadlineAt", format_iso8601(q.dropoffDeadlineAt)},
                     {"orderTotalValue", minor_units_to_json(q.orderTotalValue, e)},
                     {"pickupLocation", delivery::to_json(q.pickupLocation)},
                     {"dropoffLocation", delivery::to_json(q.dropoffLocation)},
                     {"merchantTags", q.merchantTags}};
    j["itemWeightLbs"] = q.itemWeightLbs ? nlohmann::json(*q.itemWeightLbs) : nlohmann::json();
    return j;
}

/// Parses and shape-checks a quote; semantic checks live in validate_quote.
inline DeliveryQuote quote_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(ErrorCode::ValidationError, "quote must be a JSON object");
    DeliveryQuote q;
    if (j.contains("quoteId") && j["quoteId"].is_string()) q.quoteId = j["quoteId"].get<std::string>();
    q.currency = detail::string_field(j, "currency");
    if (!is_currency_code(q.currency))
        throw Error(ErrorCode::ValidationError, "currency must be an ISO-4217 code", {{"field", "currency"}});
    const int e = currency_exponent(q.currency);
    q.quote = detail::amount_field(j, "quote", e);
    q.quoteRangeFrom = detail::amount_field(j, "quoteRangeFrom", e);
    q.quoteRangeTo = detail::amount_field(j, "quoteRangeTo", e);
    q.orderTotalValue = detail::amount_field(j, "orderTotalValue", e);
    if (!j.contains("feePercentage"))
        throw Error(ErrorCode::ValidationError, "feePercentage is required", {{"field", "feePercentage"}});
    try {
        q.feePercentage = FeeRate::from_json(j["feePercentage"]);
    } catch (const Error& err) {
        throw Error(ErrorCode::ValidationError, err.message(), {{"field", "feePercentage"}});
    }
    q.duration = detail::number_field(j, "duration");
    q.distance = detail::number_field(j, "distance");
    q.distanceUnit = detail::string_field(j, "distanceUnit");
    if (j.contains("pickupPhoneNumber") && !j["pickupPhoneNumber"].is_null())
        q.pickupPhoneNumber = detail::string_field(j, "pickupPhoneNumber");
    q.pickupName = detail::string_field(j, "pickupName");
    q.dropoffPhoneNumber = detail::string_field(j, "dropoffPhoneNumber");
    q.dropoffName = detail::string_field(j, "dropoffName");
    q.expiresAt = detail::time_field(j, "expiresAt");
    q.pickupReadyAt = detail::time_field(j, "pickupReadyAt");
    q.pickupDeadlineAt = detail::time_field(j, "pickupDeadlineAt");
    q.dropoffReadyAt = detail::time_field(j, "dropoffReadyAt");
    q.dropoffEta = detail::time_field(j, "dropoffEta");
    q.dropoffDeadlineAt = detail::time_field(j, "dropoffDeadlineAt");
    if (!j.contains("pickupLocation") || !j.contains("dropoffLocation"))
        throw Error(ErrorCode::ValidationError, "pickupLocation and dropoffLocation are required");
    q.pickupLocation = delivery::place_from_json(j["pickupLocation"], "pickupLocation");
    q.dropoffLocation = delivery::place_from_json(j["dropoffLocation"], "dropoffLocation");
    if (j.contains("itemWeightLbs") && !j["itemWeightLbs"].is_null()) q.itemWeightLbs = detail::number_field(j, "itemWeightLbs");
    if (j.contains("merchantTags")) {
        if (!j["merchantTags"].is_array())
            throw Error(ErrorCode::ValidationError, "merchantTags must be a list", {{"field", "merchantTags"}});
        for (const auto& t : j["merchantTags"]) {
            if (!t.is_string()) throw Error(ErrorCode::ValidationError, "merchantTags must be strings", {{"field", "merchantTags"}});
            q.merchantTags.push_back(t.get<std::string>());
        }
    }
    return q;
}

inline double great_circle_in_unit(const DeliveryQuote& q) {
    const double m = geo::haversine_meters(q.pickupLocation.position, q.dropoffLocation.position);
    return q.distanceUnit == "KM" ? m / 1000.0 : m / kMetersPerMile;
}

/// Cross-field invariants. `now` is the creation time.
inline void validate_quote(const DeliveryQuote& q, Timestamp now) {
    auto bad = [](const char* field, const std::string& why) {
        throw Error(ErrorCode::ValidationError, std::string(field) + " " + why, {{"field", field}});
    };
    if (q.quoteRangeFrom > q.quoteRangeTo) bad("quoteRangeFrom", "must not exceed quoteRangeTo");
    if (q.quote < q.quoteRangeFrom || q.quote > q.quoteRangeTo) bad("quote", "must lie within [quoteRangeFrom, quoteRangeTo]");
    if (!(q.duration > 0)) bad("duration", "must be > 0 minutes");
    if (!(q.distance >= 0)) bad("distance", "must be >= 0");
    if (q.distanceUnit != "MILES" && q.distanceUnit != "KM") bad("distanceUnit", "must be MILES or KM");
    if (q.pickupName.empty()) bad("pickupName", "must be non-empty");
    if (q.dropoffName.empty()) bad("dropoffName", "must be non-empty");
    if (q.dropoffPhoneNumber.empty()) bad("dropoffPhoneNumber", "must be non-empty");
    if (q.pickupReadyAt > q.pickupDeadlineAt) bad("pickupReadyAt", "must not be after pickupDeadlineAt");
    if (q.dropoffReadyAt > q.dropoffEta) bad("dropoffReadyAt", "must not be after dropoffEta");
    if (q.dropoffEta > q.dropoffDeadlineAt) bad("dropoffEta", "must not be after dropoffDeadlineAt");
    if (q.pickupDeadlineAt > q.dropoffDeadlineAt) bad("pickupDeadlineAt", "must not be after dropoffDeadlineAt");
    if (q.expiresAt <= now) bad("expiresAt", "must be in the future");
    if (!geo::valid_position(q.pickupLocation.position)) bad("pickupLocation", "is not a valid position");
    if (!geo::valid_position(q.dropoffLocation.position)) bad("dropoffLocation", "is not a valid position");
    if (q.itemWeightLbs && !(*q.itemWeightLbs > 0)) bad("itemWeightLbs", "must be > 0");
    // A route can be longer than the straight line but not shorter.
    const double floor = great_circle_in_unit(q);
    if (q.distance < floor * 0.99)
        throw Error(ErrorCode::ValidationError, "distance is shorter than the great-circle distance",
                    {{"field", "distance"}, {"minimum", floor}});
}

inline nlohmann::json to_json(const Round& r, int exponent) {
    return {{"by", to_string(r.by)},
            {"kind", to_string(r.kind)},
            {"message", r.message},
            {"amount", r.amount ? minor_units_to_json(*r.amount, exponent) : nlohmann::json()},
            {"at", format_iso8601(r.at)}};
}

inline nlohmann::json to_json(const NegotiationThread& t) {
    const int e = currency_exponent(t.quote.currency);
    nlohmann::json rounds = nlohmann::json::array();
    for (const auto& r : t.rounds) rounds.push_back(to_json(r, e));
    auto opt = [](const std::optional<std::string>& s) { return s ? nlohmann::json(*s) : nlohmann::json(); };
    return {{"threadId", t.threadId},
            {"quote", to_json(t.quote)},
            {"state", to_string(t.state)},
            {"rounds", rounds},
            {"requesterId", t.requesterId},
            {"instanceDomain", t.instanceDomain},
            {"broadcastGroupId", opt(t.broadcastGroupId)},
            {"agreedAmount", t.agreedAmount ? minor_units_to_json(*t.agreedAmount, e) : nlohmann::json()},
            {"deliveryId", opt(t.deliveryId)},
            {"maxRounds", t.maxRounds},
            {"createdAt", format_iso8601(t.createdAt)},
            {"updatedAt", format_iso8601(t.updatedAt)}};
}

inline NegotiationThread thread_from_json(const nlohmann::json& j) {
    NegotiationThread t;
    t.threadId = j.at("threadId").get<std::string>();
    t.quote = quote_from_json(j.at("quote"));
    t.quote.quoteId = j.at("quote").at("quoteId").get<std::string>();
    const int e = currency_exponent(t.quote.currency);
    t.state = thread_state_from_string(j.at("state").get<std::string>());
    for (const auto& r : j.at("rounds")) {
        Round round;
        round.by = party_from_string(r.at("by").get<std::string>());
        round.kind = round_kind_from_string(r.at("kind").get<std::string>());
        round.message = r.at("message").get<std::string>();
        if (!r.at("amount").is_null()) round.amount = minor_units_from_json(r["amount"], e);
        round.at = parse_iso8601(r.at("at").get<std::string>());
        t.rounds.push_back(std::move(round));
    }
    t.requesterId = j.at("requesterId").get<std::string>();
    t.instanceDomain = j.at("instanceDomain").get<std::string>();
    if (!j.at("broadcastGroupId").is_null()) t.broadcastGroupId = j["broadcastGroupId"].get<std::string>();
    if (!j.at("agreedAmount").is_null()) t.agreedAmount = minor_units_from_json(j["agreedAmount"], e);
    if (!j.at("deliveryId").is_null()) t.deliveryId = j["deliveryId"].get<std::string>();
    t.maxRounds = j.at("maxRounds").get<int>();
    t.createdAt = parse_iso8601(j.at("createdAt").get<std::string>());
    t.updatedAt = parse_iso8601(j.at("updatedAt").get<std::string>());
    return t;
}

inline nlohmann::json to_json(const BroadcastGroup& g) {
    return {{"broadcastGroupId", g.broadcastGroupId},
            {"threadIds", g.threadIds},
            {"winnerThreadId", g.winnerThreadId ? nlohmann::json(*g.winnerThreadId) : nlohmann::json()}};
}

inline BroadcastGroup group_from_json(const nlohmann::json& j) {
    BroadcastGroup g;
    g.broadcastGroupId = j.at("broadcastGroupId").get<std::string>();
    g.threadIds = j.at("threadIds").get<std::vector<std::string>>();
    if (!j.at("winnerThreadId").is_null()) g.winnerThreadId = j["winnerThreadId"].get<std::string>();
    return g;
}

// ---------------------------------------------------------------------------
// Pure negotiation rules

/// Amount on the most recent OFFER or COUNTER.
inline std::optional<std::int64_t> last_offered(const NegotiationThread& t) {
    for (auto it = t.rounds.rbegin(); it != t.rounds.rend(); ++it)
        if (it->kind == RoundKind::Offer || it->kind == RoundKind::Counter) return it->amount;
    return std::nullopt;
}

inline bool both_countered(const NegotiationThread& t) {
    bool req = false, inst = false;
    for (const auto& r : t.rounds) {
        if (r.kind != RoundKind::Counter) continue;
        (r.by == Party::Requester ? req : inst) = true;
    }
    return req && inst;
}

/// Applies one response to an OPEN, unexpired thread. Throws without touching
/// `t` on any violation. Broadcast arbitration is the caller's job.
inline void apply_response(NegotiationThread& t, Party by, RoundKind kind, const std::string& message,
                           std::optional<std::int64_t> amount, Timestamp now) {
    if (t.state != ThreadState::Open)
        throw Error(ErrorCode::ThreadClosed, "thread is " + to_string(t.state), {{"threadId", t.threadId}, {"state", to_string(t.state)}});
    if (by == Party::System || kind == RoundKind::Offer)
        throw Error(ErrorCode::ValidationError, "responses are COUNTER, ACCEPT or REJECT by REQUESTER or INSTANCE");
    if (!t.rounds.empty() && t.rounds.back().by == by)
        throw Error(ErrorCode::OutOfTurn, to_string(by) + " may not respond twice in a row", {{"threadId", t.threadId}});
    const int e = currency_exponent(t.quote.currency);
    Round r{by, kind, message, std::nullopt, now};
    switch (kind) {
        case RoundKind::Counter: {
            if (!amount) throw Error(ErrorCode::ValidationError, "COUNTER requires an amount", {{"field", "amount"}});
            // One slot is always left for the closing ACCEPT or REJECT.
            if (static_cast<int>(t.rounds.size()) + 1 > 2 * t.maxRounds - 1)
                throw Error(ErrorCode::RoundLimit, "counteroffer limit reached; ACCEPT or REJECT",
                            {{"threadId", t.threadId}, {"maxRounds", t.maxRounds}});
            if (both_countered(t)) {
                if (*amount <= 0) throw Error(ErrorCode::ValidationError, "amount must be positive", {{"field", "amount"}});
            } else if (*amount < t.quote.quoteRangeFrom || *amount > t.quote.quoteRangeTo) {
                throw Error(ErrorCode::ValidationError, "amount must lie within the quote range",
                            {{"field", "amount"},
                             {"quoteRangeFrom", minor_units_to_json(t.quote.quoteRangeFrom, e)},
                             {"quoteRangeTo", minor_units_to_json(t.quote.quoteRangeTo, e)}});
            }
            r.amount = amount;
            break;
        }
        case RoundKind::Accept: {
            const auto agreed = last_offered(t);
            if (!agreed) throw Error(ErrorCode::IllegalState, "nothing to accept");
            if (amount && *amount != *agreed)
                throw Error(ErrorCode::ValidationError, "ACCEPT amount differs from the last offer",
                            {{"field", "amount"}, {"lastOffered", minor_units_to_json(*agreed, e)}});
            r.amount = agreed;
            t.agreedAmount = agreed;
            t.state = ThreadState::Accepted;
            break;
        }
        case RoundKind::Reject:
            t.state = ThreadState::Rejected;
            break;
        case RoundKind::Offer:
            break;
    }
    t.rounds.push_back(std::move(r));
    t.updatedAt = std::max(t.updatedAt, now);
}

/// Delivery created from a finalized thread, ready for assignment.
inline delivery::Delivery delivery_from_thread(const NegotiationThread& t, const std::string& deliveryId, Timestamp now) {
    delivery::Delivery d;
    d.deliveryId = deliveryId;
    d.instanceDomain = t.instanceDomain;
    d.pickupLocation = t.quote.pickupLocation;
    d.dropoffLocation = t.quote.dropoffLocation;
    d.itemWeightLbs = t.quote.itemWeightLbs;
    d.merchantTags = t.quote.merchantTags;
    d.payoutMinor = payout_after_fee(t.agreedAmount.value_or(0), t.quote.feePercentage);
    d.currency = t.quote.currency;
    d.createdAt = d.updatedAt = now;
    d.taskId = t.threadId;
    d.attempt = 1;
    d.threadId = t.threadId;
    d.distance = t.quote.distance;
    d.distanceUnit = t.quote.distanceUnit;
    d.pickupDeadlineAt = t.quote.pickupDeadlineAt;
    d.dropoffDeadlineAt = t.quote.dropoffDeadlineAt;
    return d;
}

// ---------------------------------------------------------------------------
// Exchange: persistent negotiation service shared by all hosted instances.

struct ExchangeConfig {
    int maxRounds = 5;
};

/// Looks up which domains can take quotes. `registry` gives the directory
/// snapshot; `hosted` says whether a domain is served by this deployment.
struct Directory {
    std::function<std::shared_ptr<const registry::Registry>()> registry;
    std::function<bool(const std::string&)> hosted;
};

class Exchange {
public:
    Exchange(store::Store& store, IdSource& ids, Clock clock, Directory directory, ExchangeConfig config = {})
        : threads_(store, "thread", [](const NegotiationThread& t) { return to_json(t); }, thread_from_json),
          groups_(store, "group", [](const BroadcastGroup& g) { return to_json(g); }, group_from_json),
          ids_(&ids),
          clock_(std::move(clock)),
          directory_(std::move(directory)),
          config_(config) {}

    const ExchangeConfig& config() const { return config_; }

    NegotiationThread create_quote(const std::string& requesterId, const std::string& instanceDomain, DeliveryQuote q) {
        const auto now = clock_();
        validate_quote(q, now);
        require_known(instanceDomain);
        if (q.quoteId.empty()) q.quoteId = ids_->uuid();
        auto t = open_thread(requesterId, instanceDomain, q, std::nullopt, now);
        threads_.create(t.threadId, t);
        return t;
    }

    std::vector<NegotiationThread> broadcast_quote(const std::string& requesterId, registry::QueryFilter filter,
                                                   DeliveryQuote q) {
        const auto now = clock_();
        validate_quote(q, now);
        if (!filter.point && !filter.region) filter.point = q.pickupLocation.position;
        std::vector<std::string> domains;
        for (const auto& r : registry::query_instances(*directory_.registry(), filter))
            if (directory_.hosted(r.domainName)) domains.push_back(r.domainName);
        if (domains.empty()) throw Error(ErrorCode::NoMatchingInstance, "no registered instance matches the filter");
        if (q.quoteId.empty()) q.quoteId = ids_->uuid();
        BroadcastGroup g;
        g.broadcastGroupId = ids_->uuid();
        std::vector<NegotiationThread> out;
        for (const auto& d : domains) {
            out.push_back(open_thread(requesterId, d, q, g.broadcastGroupId, now));
            g.threadIds.push_back(out.back().threadId);
        }
        groups_.create(g.broadcastGroupId, g);
        for (const auto& t : out) threads_.create(t.threadId, t);
        return out;
    }

    NegotiationThread get(const std::string& threadId) const { return threads_.require(threadId, "thread"); }

    std::optional<BroadcastGroup> group(const std::string& groupId) const {
        auto v = groups_.get(groupId);
        if (!v) return std::nullopt;
        return v->value;
    }

    std::vector<NegotiationThread> list(const std::function<bool(const NegotiationThread&)>& pred = {}) const {
        auto out = threads_.scan(pred);
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
            if (a.createdAt != b.createdAt) return a.createdAt < b.createdAt;
            return a.threadId < b.threadId;
        });
        return out;
    }

    NegotiationThread respond(const std::string& threadId, Party by, RoundKind kind, const std::string& message,
                              std::optional<std::int64_t> amount) {
        const auto now = clock_();
        std::optional<std::string> group_to_sweep;
        NegotiationThread result;
        {
            std::lock_guard lock(stripe(threadId));
            auto cur = threads_.get(threadId);
            if (!cur) throw Error(ErrorCode::NotFound, "thread not found: " + threadId, {{"id", threadId}});
            NegotiationThread t = cur->value;
            if (t.state == ThreadState::Expired)
                throw Error(ErrorCode::Expired, "quote expired", {{"threadId", threadId}});
            if (t.state == ThreadState::Open && now >= t.quote.expiresAt) {
                t.state = ThreadState::Expired;
                t.updatedAt = std::max(t.updatedAt, now);
                threads_.put(threadId, t, cur->version);
                throw Error(ErrorCode::Expired, "quote expired", {{"threadId", threadId}});
            }
            NegotiationThread next = t;
            apply_response(next, by, kind, message, amount, now);
            if (next.state == ThreadState::Accepted && next.broadcastGroupId) {
                if (!claim(*next.broadcastGroupId, threadId)) {
                    // A sibling already won; this thread loses the race.
                    system_reject(t, now, "another instance accepted this broadcast");
                    threads_.put(threadId, t, cur->version);
                    throw Error(ErrorCode::ThreadClosed, "broadcast already accepted by a sibling",
                                {{"threadId", threadId}, {"state", "REJECTED"}});
                }
                group_to_sweep = next.broadcastGroupId;
            }
            threads_.put(threadId, next, cur->version);
            result = std::move(next);
        }
        if (group_to_sweep) reject_siblings(*group_to_sweep, threadId, now);
        return result;
    }

    /// Marks an ACCEPTED thread FINALIZED and reserves its delivery id.
    NegotiationThread finalize(const std::string& threadId) {
        const auto now = clock_();
        std::lock_guard lock(stripe(threadId));
        auto cur = threads_.get(threadId);
        if (!cur) throw Error(ErrorCode::NotFound, "thread not found: " + threadId, {{"id", threadId}});
        NegotiationThread t = cur->value;
        if (t.state == ThreadState::Finalized)
            throw Error(ErrorCode::AlreadyFinalized, "thread already finalized",
                        {{"threadId", threadId}, {"deliveryId", t.deliveryId.value_or("")}});
        if (t.state != ThreadState::Accepted)
            throw Error(ErrorCode::NotAccepted, "thread is " + to_string(t.state), {{"threadId", threadId}, {"state", to_string(t.state)}});
        t.state = ThreadState::Finalized;
        t.deliveryId = ids_->uuid();
        t.updatedAt = std::max(t.updatedAt, now);
        threads_.put(threadId, t, cur->version);
        return t;
    }

    /// Expires every OPEN thread whose expiresAt <= now.
    int expire_quotes(Timestamp now) {
        int n = 0;
        for (const auto& candidate : threads_.scan([&](const NegotiationThread& t) {
                 return t.state == ThreadState::Open && t.quote.expiresAt <= now;
             })) {
            std::lock_guard lock(stripe(candidate.threadId));
            auto cur = threads_.get(candidate.threadId);
            if (!cur || cur->value.state != ThreadState::Open || cur->value.quote.expiresAt > now) continue;
            auto t = cur->value;
            t.state = ThreadState::Expired;
            t.updatedAt = std::max(t.updatedAt, now);
            threads_.put(t.threadId, t, cur->version);
            ++n;
        }
        return n;
    }

private:
    void require_known(const std::string& domain) const {
        const auto reg = directory_.registry();
        const bool listed = std::any_of(reg->records.begin(), reg->records.end(), [&](const registry::InstanceRecord& r) {
            return r.domainName == domain && !r.tombstone;
        });
        if (!listed || !directory_.hosted(domain))
            throw Error(ErrorCode::UnknownInstance, "unknown instance: " + domain, {{"instanceDomain", domain}});
    }

    NegotiationThread open_thread(const std::string& requesterId, const std::string& domain, const DeliveryQuote& q,
                                  std::optional<std::string> group, Timestamp now) {
        NegotiationThread t;
        t.threadId = ids_->uuid();
        t.quote = q;
        t.requesterId = requesterId;
        t.instanceDomain = domain;
        t.broadcastGroupId = std::move(group);
        t.maxRounds = config_.maxRounds;
        t.createdAt = t.updatedAt = now;
        t.rounds.push_back(Round{Party::Requester, RoundKind::Offer, "", q.quote, now});
        return t;
    }

    bool claim(const std::string& groupId, const std::string& threadId) {
        for (;;) {
            auto g = groups_.get(groupId);
            if (!g) throw Error(ErrorCode::CorruptRecord, "missing broadcast group " + groupId);
            if (g->value.winnerThreadId) return *g->value.winnerThreadId == threadId;
            auto next = g->value;
            next.winnerThreadId = threadId;
            try {
                groups_.put(groupId, next, g->version);
                return true;
            } catch (const Error& e) {
                if (e.code() != ErrorCode::VersionConflict) throw;
            }
        }
    }

    static void system_reject(NegotiationThread& t, Timestamp now, const std::string& why) {
        t.rounds.push_back(Round{Party::System, RoundKind::Reject, why, std::nullopt, now});
        t.state = ThreadState::Rejected;
        t.updatedAt = std::max(t.updatedAt, now);
    }

    void reject_siblings(const std::string& groupId, const std::string& winner, Timestamp now) {
        const auto g = groups_.require(groupId, "broadcast group");
        for (const auto& id : g.threadIds) {
            if (id == winner) continue;
            std::lock_guard lock(stripe(id));
            auto cur = threads_.get(id);
            if (!cur || cur->value.state != ThreadState::Open) continue;
            auto t = cur->value;
            system_reject(t, now, "another instance accepted this broadcast");
            threads_.put(id, t, cur->version);
        }
    }

    std::mutex& stripe(const std::string& id) { return stripes_[std::hash<std::string>{}(id) % stripes_.size()]; }

    store::Repository<NegotiationThread> threads_;
    store::Repository<BroadcastGroup> groups_;
    IdSource* ids_;
    Clock clock_;
    Directory directory_;
    ExchangeConfig config_;
    std::array<std::mutex, 64> stripes_;
};

}  // namespace opencourier::quoting
