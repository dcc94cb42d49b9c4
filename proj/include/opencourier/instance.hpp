#pragma once

#include <algorithm>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "opencourier/assignment.hpp"
#include "opencourier/delivery.hpp"
#include "opencourier/error.hpp"
#include "opencourier/ids.hpp"
#include "opencourier/notes.hpp"
#include "opencourier/preferences.hpp"
#include "opencourier/quoting.hpp"
#include "opencourier/repository.hpp"
#include "opencourier/time.hpp"

namespace opencourier::instance {

/// Receives domain events ("delivery.transition", "chain.canceled", ...).
using Observer = std::function<void(const std::string& type, const nlohmann::json& body)>;

struct InstanceConfig {
    std::string domain;
    geo::Polygon territory;
    std::string currency = "USD";
    preferences::MatchConfig match;
    delivery::LifecycleConfig lifecycle;
    assignment::AssignmentPolicy policy;
};

struct CourierRecord {
    std::string courierId;
    std::string displayName;
    delivery::CourierAvailability availability = delivery::CourierAvailability::Offline;
    std::optional<geo::LonLat> position;
    Timestamp positionAt{};
    Timestamp enrolledAt{};
};

inline nlohmann::json to_json(const CourierRecord& c) {
    return {{"courierId", c.courierId},
            {"displayName", c.displayName},
            {"availability", std::string(delivery::to_string(c.availability))},
            {"position", c.position ? delivery::to_json(*c.position) : nlohmann::json()},
            {"positionAt", format_iso8601(c.positionAt)},
            {"enrolledAt", format_iso8601(c.enrolledAt)}};
}

inline CourierRecord courier_from_json(const nlohmann::json& j) {
    CourierRecord c;
    c.courierId = j.at("courierId").get<std::string>();
    c.displayName = j.at("displayName").get<std::string>();
    c.availability = delivery::availability_from_string(j.at("availability").get<std::string>());
    if (!j.at("position").is_null()) c.position = delivery::lonlat_from_json(j["position"], "position");
    c.positionAt = parse_iso8601(j.at("positionAt").get<std::string>());
    c.enrolledAt = parse_iso8601(j.at("enrolledAt").get<std::string>());
    return c;
}

enum class ChainState { Active, Completed, Canceled };

inline std::string to_string(ChainState s) {
    switch (s) {
        case ChainState::Active: return "ACTIVE";
        case ChainState::Completed: return "COMPLETED";
        case ChainState::Canceled: return "CANCELED";
    }
    return "?";
}

inline ChainState chain_state_from_string(std::string_view s) {
    for (auto v : {ChainState::Active, ChainState::Completed, ChainState::Canceled})
        if (to_string(v) == s) return v;
    throw Error(ErrorCode::CorruptRecord, "unknown chain state " + std::string(s));
}

/// All delivery attempts for one finalized quote. The last id is current.
struct TaskChain {
    std::string taskId;
    std::optional<std::string> threadId;
    std::vector<std::string> deliveryIds;
    std::set<std::string> excluded;
    ChainState state = ChainState::Active;
    std::string reason;
    Timestamp createdAt{};
    Timestamp updatedAt{};
};

inline nlohmann::json to_json(const TaskChain& c) {
    return {{"taskId", c.taskId},
            {"threadId", c.threadId ? nlohmann::json(*c.threadId) : nlohmann::json()},
            {"deliveryIds", c.deliveryIds},
            {"excluded", c.excluded},
            {"state", to_string(c.state)},
            {"reason", c.reason},
            {"createdAt", format_iso8601(c.createdAt)},
            {"updatedAt", format_iso8601(c.updatedAt)}};
}

inline TaskChain chain_from_json(const nlohmann::json& j) {
    TaskChain c;
    c.taskId = j.at("taskId").get<std::string>();
    if (!j.at("threadId").is_null()) c.threadId = j["threadId"].get<std::string>();
    c.deliveryIds = j.at("deliveryIds").get<std::vector<std::string>>();
    c.excluded = j.at("excluded").get<std::set<std::string>>();
    c.state = chain_state_from_string(j.at("state").get<std::string>());
    c.reason = j.at("reason").get<std::string>();
    c.createdAt = parse_iso8601(j.at("createdAt").get<std::string>());
    c.updatedAt = parse_iso8601(j.at("updatedAt").get<std::string>());
    return c;
}

struct Alert {
    std::string alertId;
    Timestamp at{};
    std::string kind;
    std::string message;
    nlohmann::json details = nlohmann::json::object();
};

inline nlohmann::json to_json(const Alert& a) {
    return {{"alertId", a.alertId}, {"at", format_iso8601(a.at)}, {"kind", a.kind}, {"message", a.message}, {"details", a.details}};
}

inline Alert alert_from_json(const nlohmann::json& j) {
    return {j.at("alertId").get<std::string>(), parse_iso8601(j.at("at").get<std::string>()), j.at("kind").get<std::string>(),
            j.at("message").get<std::string>(), j.at("details")};
}

inline nlohmann::json transition_event(const delivery::Delivery& before, const delivery::Delivery& after) {
    const auto& h = after.history.back();
    return {{"deliveryId", after.deliveryId},
            {"taskId", after.taskId},
            {"instance", after.instanceDomain},
            {"event", std::string(delivery::to_string(h.event))},
            {"actor", h.actor.label()},
            {"courierId", after.courierId ? nlohmann::json(*after.courierId) : nlohmann::json()},
            {"from", {{"status", delivery::to_string(before.status)}, {"tripPhase", delivery::to_string(before.tripPhase)}}},
            {"to", {{"status", delivery::to_string(after.status)}, {"tripPhase", delivery::to_string(after.tripPhase)}}}};
}

/// One courier organisation: its couriers, preferences, deliveries, task
/// chains, assignment policy, notes and admin alerts, all in one store.
class Instance {
public:
    Instance(InstanceConfig config, store::Store& store, IdSource& ids, Clock clock, Observer observer = {})
        : config_(std::move(config)),
          couriers_(store, "courier", [](const CourierRecord& c) { return to_json(c); }, courier_from_json),
          prefs_(store, "prefs", [](const preferences::CourierPreferences& p) { return preferences::to_json(p); },
                 preferences::preferences_from_json),
          deliveries_(store, "delivery", [](const delivery::Delivery& d) { return delivery::to_json(d); },
                      delivery::delivery_from_json),
          chains_(store, "chain", [](const TaskChain& c) { return to_json(c); }, chain_from_json),
          alerts_(store, "alert", [](const Alert& a) { return to_json(a); }, alert_from_json),
          policies_(store, "policy", [](const assignment::AssignmentPolicy& p) { return assignment::to_json(p); },
                    [](const nlohmann::json& j) { return assignment::policy_from_json(j); }),
          notes_(store, ids, clock),
          ids_(&ids),
          clock_(std::move(clock)),
          observer_(std::move(observer)) {
        if (!policies_.get("active")) {
            try {
                policies_.create("active", config_.policy);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::VersionConflict) throw;
            }
        }
    }

    const InstanceConfig& config() const { return config_; }
    const std::string& domain() const { return config_.domain; }
    notes::NoteService& notes() { return notes_; }
    void set_observer(Observer o) { observer_ = std::move(o); }

    // -- couriers --------------------------------------------------------

    CourierRecord enroll_courier(const std::string& displayName, std::optional<std::string> courierId = std::nullopt) {
        CourierRecord c;
        c.courierId = courierId ? *courierId : ids_->uuid();
        c.displayName = displayName;
        c.enrolledAt = c.positionAt = clock_();
        couriers_.create(c.courierId, c);
        prefs_.create(c.courierId, preferences::defaults_for(config_.territory));
        emit("courier.enrolled", {{"courierId", c.courierId}, {"instance", domain()}});
        return c;
    }

    CourierRecord courier(const std::string& courierId) const { return couriers_.require(courierId, "courier"); }

    std::vector<CourierRecord> couriers() const {
        auto out = couriers_.scan();
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.courierId < b.courierId; });
        return out;
    }

    CourierRecord update_status(const std::string& courierId, std::optional<delivery::CourierAvailability> availability,
                                std::optional<geo::LonLat> position) {
        if (position && !geo::valid_position(*position))
            throw Error(ErrorCode::ValidationError, "position outside WGS84 range", {{"field", "position"}});
        const auto now = clock_();
        auto c = couriers_.update(courierId, "courier", [&](CourierRecord& r) {
            if (availability) r.availability = *availability;
            if (position) {
                r.position = position;
                r.positionAt = std::max(now, r.positionAt);
            }
            return true;
        });
        return c;
    }

    // -- preferences -----------------------------------------------------

    std::pair<preferences::CourierPreferences, std::uint64_t> preferences(const std::string& courierId) const {
        auto v = prefs_.get(courierId);
        if (!v) throw Error(ErrorCode::NotFound, "courier not found: " + courierId, {{"id", courierId}});
        return {v->value, v->version};
    }

    std::pair<preferences::CourierPreferences, std::uint64_t> patch_preferences(const std::string& courierId,
                                                                               const nlohmann::json& patch) {
        for (;;) {
            auto [current, version] = preferences(courierId);
            auto next = preferences::apply_patch(current, patch);
            if (next == current) return {current, version};
            try {
                return {next, prefs_.put(courierId, next, version)};
            } catch (const Error& e) {
                if (e.code() != ErrorCode::VersionConflict) throw;
            }
        }
    }

    // -- policy ----------------------------------------------------------

    assignment::AssignmentPolicy policy() const { return policies_.require("active", "policy"); }

    assignment::AssignmentPolicy set_policy(const nlohmann::json& doc, const std::string& adminId) {
        std::lock_guard lock(dispatch_mu_);
        const auto before = policy();
        const auto next = assignment::policy_from_json(doc, before);
        policies_.update("active", "policy", [&](assignment::AssignmentPolicy& p) {
            p = next;
            return true;
        });
        if (!(before == next)) {
            raise("POLICY_CHANGED", "assignment policy switched to " + assignment::to_string(next.kind),
                  {{"from", assignment::to_json(before)}, {"to", assignment::to_json(next)}, {"by", adminId}});
            emit("policy.changed", {{"instance", domain()}, {"policy", assignment::to_json(next)}});
        }
        return next;
    }

    // -- deliveries ------------------------------------------------------

    delivery::Delivery get_delivery(const std::string& id) const { return deliveries_.require(id, "delivery"); }

    std::vector<delivery::Delivery> deliveries(const std::function<bool(const delivery::Delivery&)>& pred = {}) const {
        auto out = deliveries_.scan(pred);
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
            if (a.createdAt != b.createdAt) return a.createdAt < b.createdAt;
            return a.deliveryId < b.deliveryId;
        });
        return out;
    }

    std::vector<delivery::Delivery> bucket(const std::string& courierId, delivery::Bucket b) const {
        return delivery::list_deliveries(
            deliveries_.scan([&](const delivery::Delivery& d) { return d.courierId && *d.courierId == courierId; }), courierId, b);
    }

    std::optional<TaskChain> chain(const std::string& taskId) const {
        auto v = chains_.get(taskId);
        if (!v) return std::nullopt;
        return v->value;
    }

    std::vector<TaskChain> chains() const {
        auto out = chains_.scan();
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.taskId < b.taskId; });
        return out;
    }

    std::vector<Alert> alerts() const {
        auto out = alerts_.scan();
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
            if (a.at != b.at) return a.at < b.at;
            return a.alertId < b.alertId;
        });
        return out;
    }

    /// Creates the first attempt for a finalized thread and tries to dispatch
    /// it. Repeat calls return the existing delivery.
    delivery::Delivery accept_finalized(const quoting::NegotiationThread& t) {
        if (!t.deliveryId || t.state != quoting::ThreadState::Finalized)
            throw Error(ErrorCode::IllegalState, "thread is not finalized", {{"threadId", t.threadId}});
        std::lock_guard lock(dispatch_mu_);
        if (auto existing = deliveries_.get(*t.deliveryId)) return existing->value;
        const auto now = clock_();
        auto d = quoting::delivery_from_thread(t, *t.deliveryId, now);
        TaskChain c;
        c.taskId = d.taskId;
        c.threadId = t.threadId;
        c.deliveryIds = {d.deliveryId};
        c.createdAt = c.updatedAt = now;
        chains_.create(c.taskId, c);
        deliveries_.create(d.deliveryId, d);
        emit("delivery.created", created_event(d));
        return try_dispatch_locked(c.taskId, d.deliveryId, now).value_or(d);
    }

    /// A courier acting on one of their deliveries (or self-claiming with DISPATCH).
    delivery::Delivery courier_event(const std::string& courierId, const std::string& deliveryId, delivery::TransitionEvent ev,
                                     std::optional<delivery::Issue> issue = std::nullopt) {
        delivery::TransitionRequest req;
        req.event = ev;
        req.actor = delivery::Actor::courier(courierId);
        req.issue = std::move(issue);
        if (ev == delivery::TransitionEvent::Dispatch) {
            std::lock_guard lock(dispatch_mu_);
            const auto d = get_delivery(deliveryId);
            const auto c = chain(d.taskId);
            if (c && c->excluded.count(courierId))
                throw Error(ErrorCode::ForbiddenActor, "courier already rejected this task", {{"deliveryId", deliveryId}});
            req.targetCourierId = courierId;
            return apply(deliveryId, req);
        }
        auto d = apply(deliveryId, req);
        after_transition(d);
        return d;
    }

    /// Admin CANCEL or REPORT_ISSUE.
    delivery::Delivery admin_event(const std::string& adminId, const std::string& deliveryId, delivery::TransitionEvent ev,
                                   std::optional<delivery::Issue> issue = std::nullopt) {
        delivery::TransitionRequest req;
        req.event = ev;
        req.actor = delivery::Actor::admin(adminId);
        req.issue = std::move(issue);
        auto d = apply(deliveryId, req);
        after_transition(d);
        return d;
    }

    /// Cancels the task behind a thread on the requester's behalf.
    TaskChain requester_cancel(const std::string& taskId, const std::string& requesterId) {
        std::lock_guard lock(dispatch_mu_);
        auto c = chains_.require(taskId, "task");
        if (c.state != ChainState::Active)
            throw Error(ErrorCode::IllegalState, "task is already " + to_string(c.state), {{"taskId", taskId}});
        const auto d = get_delivery(c.deliveryIds.back());
        if (d.status != delivery::DeliveryStatus::Created) {
            delivery::TransitionRequest req;
            req.event = delivery::TransitionEvent::Cancel;
            req.actor = delivery::Actor::system();
            req.detail = {{"requestedBy", requesterId}};
            apply(d.deliveryId, req);
        }
        return close_chain_locked(taskId, ChainState::Canceled, "canceled by requester", clock_());
    }

    /// Dispatches queued attempts and cancels tasks whose pickup deadline passed.
    int tick(Timestamp now) {
        std::lock_guard lock(dispatch_mu_);
        int changed = 0;
        for (const auto& c : chains_.scan([](const TaskChain& c) { return c.state == ChainState::Active; })) {
            const auto d = get_delivery(c.deliveryIds.back());
            if (d.status != delivery::DeliveryStatus::Created) continue;
            if (d.pickupDeadlineAt && now > *d.pickupDeadlineAt) {
                close_chain_locked(c.taskId, ChainState::Canceled, "pickup deadline passed without a courier", now);
                ++changed;
            } else if (try_dispatch_locked(c.taskId, d.deliveryId, now)) {
                ++changed;
            }
        }
        return changed;
    }

private:
    void emit(const std::string& type, const nlohmann::json& body) const {
        if (observer_) observer_(type, body);
    }

    void raise(const std::string& kind, const std::string& message, nlohmann::json details) {
        Alert a{ids_->uuid(), clock_(), kind, message, std::move(details)};
        alerts_.create(a.alertId, a);
        emit("alert", {{"instance", domain()}, {"kind", kind}, {"message", message}, {"details", a.details}});
    }

    static nlohmann::json created_event(const delivery::Delivery& d) {
        return {{"deliveryId", d.deliveryId},
                {"taskId", d.taskId},
                {"instance", d.instanceDomain},
                {"attempt", d.attempt},
                {"threadId", d.threadId ? nlohmann::json(*d.threadId) : nlohmann::json()},
                {"payout", minor_units_to_json(d.payoutMinor, currency_exponent(d.currency))},
                {"currency", d.currency}};
    }

    delivery::Delivery apply(const std::string& deliveryId, const delivery::TransitionRequest& req) {
        delivery::Delivery before;
        const auto now = clock_();
        auto after = deliveries_.update(deliveryId, "delivery", [&](delivery::Delivery& d) {
            before = d;
            d = delivery::transition(d, req, now, config_.lifecycle);
            return true;
        });
        emit("delivery.transition", transition_event(before, after));
        return after;
    }

    void after_transition(const delivery::Delivery& d) {
        using S = delivery::DeliveryStatus;
        if (d.status != S::Rejected && d.status != S::Canceled && d.status != S::Delivered) return;
        std::lock_guard lock(dispatch_mu_);
        const auto c = chain(d.taskId);
        if (!c || c->state != ChainState::Active || c->deliveryIds.back() != d.deliveryId) return;
        const auto now = clock_();
        if (d.status == S::Delivered) {
            close_chain_locked(c->taskId, ChainState::Completed, "delivered", now);
        } else if (d.status == S::Canceled) {
            close_chain_locked(c->taskId, ChainState::Canceled, "delivery canceled", now);
        } else {
            on_reject_locked(*c, d, now);
        }
    }

    void on_reject_locked(TaskChain c, const delivery::Delivery& rejected, Timestamp now) {
        if (rejected.courierId) c.excluded.insert(*rejected.courierId);
        const auto pol = policy();
        if (static_cast<int>(c.deliveryIds.size()) >= pol.maxAttempts) {
            save_chain(c);
            close_chain_locked(c.taskId, ChainState::Canceled, "maxAttempts reached", now);
            return;
        }
        auto next = assignment::next_attempt(rejected, ids_->uuid(), now);
        try {
            assignment::choose(next, fleet(now), now, context(pol, c));
        } catch (const Error& e) {
            if (e.code() != ErrorCode::NoCandidate) throw;
            save_chain(c);
            close_chain_locked(c.taskId, ChainState::Canceled, "no eligible courier left after rejection", now);
            return;
        }
        c.deliveryIds.push_back(next.deliveryId);
        c.updatedAt = std::max(c.updatedAt, now);
        save_chain(c);
        deliveries_.create(next.deliveryId, next);
        emit("delivery.created", created_event(next));
        try_dispatch_locked(c.taskId, next.deliveryId, now);
    }

    void save_chain(const TaskChain& next) {
        chains_.update(next.taskId, "task", [&](TaskChain& c) {
            c = next;
            return true;
        });
    }

    TaskChain close_chain_locked(const std::string& taskId, ChainState state, const std::string& reason, Timestamp now) {
        auto c = chains_.update(taskId, "task", [&](TaskChain& c) {
            if (c.state != ChainState::Active) return false;
            c.state = state;
            c.reason = reason;
            c.updatedAt = std::max(c.updatedAt, now);
            return true;
        });
        emit(state == ChainState::Completed ? "chain.completed" : "chain.canceled",
             {{"taskId", taskId}, {"instance", domain()}, {"reason", c.reason}, {"attempts", c.deliveryIds.size()}});
        if (state == ChainState::Canceled && c.reason != "delivery canceled" && c.reason != "canceled by requester")
            raise("TASK_CANCELED", "task " + taskId + " canceled: " + reason, {{"taskId", taskId}, {"deliveryIds", c.deliveryIds}});
        return c;
    }

    assignment::Context context(const assignment::AssignmentPolicy& pol, const TaskChain& c) const {
        assignment::Context ctx;
        ctx.policy = pol;
        ctx.match = config_.match;
        ctx.excluded = c.excluded;
        return ctx;
    }

    std::vector<assignment::CourierState> fleet(Timestamp) const {
        std::map<std::string, int> active;
        for (const auto& d : deliveries_.scan([](const delivery::Delivery& d) {
                 using S = delivery::DeliveryStatus;
                 return d.courierId && (d.status == S::Dispatched || d.status == S::Accepted || d.status == S::PickedUp);
             }))
            ++active[*d.courierId];
        std::vector<assignment::CourierState> out;
        for (const auto& c : couriers()) {
            assignment::CourierState s;
            s.courierId = c.courierId;
            s.availability = c.availability;
            s.position = c.position;
            s.positionAt = c.positionAt;
            s.activeDeliveryCount = active[c.courierId];
            s.enrolledAt = c.enrolledAt;
            s.prefs = preferences(c.courierId).first;
            out.push_back(std::move(s));
        }
        return out;
    }

    std::optional<delivery::Delivery> try_dispatch_locked(const std::string& taskId, const std::string& deliveryId,
                                                          Timestamp now) {
        const auto c = chains_.require(taskId, "task");
        const auto pol = policy();
        const auto ctx = context(pol, c);
        const auto pool = fleet(now);
        delivery::Delivery before;
        try {
            auto after = deliveries_.update(deliveryId, "delivery", [&](delivery::Delivery& d) {
                if (d.status != delivery::DeliveryStatus::Created) return false;
                before = d;
                d = assignment::assign(d, pool, now, ctx, config_.lifecycle);
                return true;
            });
            if (after.status != delivery::DeliveryStatus::Dispatched || before.deliveryId.empty()) return std::nullopt;
            emit("delivery.transition", transition_event(before, after));
            return after;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::NoCandidate) throw;
            return std::nullopt;
        }
    }

    InstanceConfig config_;
    store::Repository<CourierRecord> couriers_;
    store::Repository<preferences::CourierPreferences> prefs_;
    store::Repository<delivery::Delivery> deliveries_;
    store::Repository<TaskChain> chains_;
    store::Repository<Alert> alerts_;
    store::Repository<assignment::AssignmentPolicy> policies_;
    notes::NoteService notes_;
    IdSource* ids_;
    Clock clock_;
    Observer observer_;
    std::recursive_mutex dispatch_mu_;
};

}  // namespace opencourier::instance
