#pragma once

#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "opencourier/delivery.hpp"
#include "opencourier/money.hpp"
#include "opencourier/time.hpp"

namespace opencourier::harness {

struct Violation {
    std::size_t line = 0;  // 1-based; 0 for end-of-log checks
    std::string rule;
    std::string message;
};

struct VerifyReport {
    std::size_t events = 0;
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
};

/// Replays an event log and checks it against the protocol invariants. Uses
/// only the log: no access to the deployment that produced it.
class LogVerifier {
public:
    VerifyReport run(const std::vector<std::string>& lines) {
        VerifyReport rep;
        report_ = &rep;
        for (std::size_t i = 0; i < lines.size(); ++i) {
            if (lines[i].empty()) continue;
            line_ = i + 1;
            nlohmann::json e;
            try {
                e = nlohmann::json::parse(lines[i]);
            } catch (const nlohmann::json::parse_error&) {
                fail("json", "line is not valid JSON");
                continue;
            }
            ++rep.events;
            try {
                check(e);
            } catch (const std::exception& ex) {
                fail("shape", std::string("malformed event: ") + ex.what());
            }
        }
        line_ = 0;
        finish();
        return rep;
    }

    VerifyReport run_text(const std::string& text) {
        std::vector<std::string> lines;
        std::istringstream in(text);
        for (std::string l; std::getline(in, l);) lines.push_back(l);
        return run(lines);
    }

private:
    struct DeliveryTrack {
        std::string taskId;
        std::string instance;
        delivery::State state{delivery::DeliveryStatus::Created, delivery::TripPhase::None};
        std::optional<std::string> courier;
    };
    struct TaskTrack {
        std::string instance;
        std::string current;
        std::set<std::string> rejecters;
        bool closed = false;
    };
    struct ThreadTrack {
        std::string instance;
        std::optional<std::string> group;
        int maxRounds = 0;
        std::size_t rounds = 1;
        std::string lastParty = "REQUESTER";
        std::int64_t lastOffer = 0;
        std::string state = "OPEN";
    };
    struct Counts {
        int finalized = 0, tasks = 0, delivered = 0, canceled = 0;
    };

    static std::string label(const delivery::State& s) {
        return std::string(delivery::to_string(s.status)) + "/" + std::string(delivery::to_string(s.phase));
    }

    void fail(const std::string& rule, const std::string& message) { report_->violations.push_back({line_, rule, message}); }

    void check(const nlohmann::json& e) {
        const auto seq = e.at("seq").get<std::uint64_t>();
        if (seq != last_seq_ + 1) fail("seq", "expected seq " + std::to_string(last_seq_ + 1) + ", got " + std::to_string(seq));
        last_seq_ = seq;
        const auto at = parse_iso8601(e.at("at").get<std::string>());
        if (last_at_ && at < *last_at_) fail("time", "timestamp goes backwards");
        last_at_ = at;
        const auto type = e.at("type").get<std::string>();
        if (type == "quote.created") quote_created(e);
        else if (type == "quote.round") quote_round(e);
        else if (type == "quote.expired") quote_expired(e);
        else if (type == "quote.finalized") quote_finalized(e);
        else if (type == "delivery.created") delivery_created(e);
        else if (type == "delivery.transition") transition(e);
        else if (type == "chain.completed" || type == "chain.canceled") chain_closed(e, type == "chain.completed");
        else if (type == "run.summary") summary_ = e;
    }

    ThreadTrack* thread(const nlohmann::json& e) {
        const auto id = e.at("threadId").get<std::string>();
        auto it = threads_.find(id);
        if (it == threads_.end()) {
            fail("quote.unknown", "event for unknown thread " + id);
            return nullptr;
        }
        return &it->second;
    }

    void quote_created(const nlohmann::json& e) {
        const auto id = e.at("threadId").get<std::string>();
        if (threads_.count(id)) return fail("quote.duplicate", "thread " + id + " created twice");
        ThreadTrack t;
        t.instance = e.at("instance").get<std::string>();
        if (!e.at("broadcastGroupId").is_null()) t.group = e["broadcastGroupId"].get<std::string>();
        t.maxRounds = e.at("maxRounds").get<int>();
        t.lastOffer = e.at("amountMinor").get<std::int64_t>();
        threads_[id] = t;
    }

    void quote_round(const nlohmann::json& e) {
        auto* t = thread(e);
        if (!t) return;
        const auto id = e["threadId"].get<std::string>();
        const auto round = e.at("round").get<std::size_t>();
        const auto by = e.at("by").get<std::string>();
        const auto kind = e.at("kind").get<std::string>();
        if (t->state != "OPEN") fail("quote.closed", "round on thread " + id + " after it reached " + t->state);
        if (round != t->rounds + 1) fail("quote.rounds", "thread " + id + " skipped from round " + std::to_string(t->rounds) + " to " + std::to_string(round));
        if (static_cast<int>(round) > 2 * t->maxRounds) fail("quote.limit", "thread " + id + " exceeded the round limit");
        if (by != "SYSTEM") {
            if (by == t->lastParty) fail("quote.turn", by + " moved twice in a row on thread " + id);
            t->lastParty = by;
        }
        if (kind == "COUNTER") t->lastOffer = e.at("amountMinor").get<std::int64_t>();
        const auto state = e.at("state").get<std::string>();
        if (kind == "ACCEPT") {
            if (state != "ACCEPTED") fail("quote.accept", "ACCEPT did not move thread " + id + " to ACCEPTED");
            if (e.at("agreedMinor").is_null() || e["agreedMinor"].get<std::int64_t>() != t->lastOffer)
                fail("quote.agreed", "agreed amount on thread " + id + " differs from the last offer " + std::to_string(t->lastOffer));
        }
        if (kind == "REJECT" && state != "REJECTED") fail("quote.reject", "REJECT did not close thread " + id);
        t->rounds = round;
        t->state = state;
    }

    void quote_expired(const nlohmann::json& e) {
        if (auto* t = thread(e)) {
            if (t->state != "OPEN" && t->state != "ACCEPTED") fail("quote.expired", "thread expired from " + t->state);
            t->state = "EXPIRED";
        }
    }

    void quote_finalized(const nlohmann::json& e) {
        auto* t = thread(e);
        if (!t) return;
        const auto id = e["threadId"].get<std::string>();
        if (t->state != "ACCEPTED") fail("quote.finalize", "thread " + id + " finalized from " + t->state);
        t->state = "FINALIZED";
        if (t->group && !finalized_groups_.insert(*t->group).second)
            fail("quote.winner", "broadcast group " + *t->group + " finalized more than once");
        const auto agreed = e.at("agreedMinor").get<std::int64_t>();
        const FeeRate fee{e.at("feeHundredths").get<std::int64_t>()};
        if (e.at("payoutMinor").get<std::int64_t>() != agreed - fee_share(agreed, fee))
            fail("quote.payout", "payout on thread " + id + " is not agreed minus fee");
        const auto did = e.at("deliveryId").get<std::string>();
        finalized_deliveries_[did] = id;
        ++counts_[t->instance].finalized;
    }

    void delivery_created(const nlohmann::json& e) {
        const auto id = e.at("deliveryId").get<std::string>();
        if (deliveries_.count(id)) return fail("delivery.duplicate", "delivery " + id + " created twice");
        const auto task = e.at("taskId").get<std::string>();
        const auto attempt = e.at("attempt").get<int>();
        DeliveryTrack d;
        d.taskId = task;
        d.instance = e.at("instance").get<std::string>();
        if (attempt == 1) {
            if (tasks_.count(task)) fail("chain.duplicate", "task " + task + " started twice");
            tasks_[task] = {d.instance, id, {}, false};
            ++counts_[d.instance].tasks;
        } else {
            auto it = tasks_.find(task);
            if (it == tasks_.end()) {
                fail("chain.unknown", "attempt " + std::to_string(attempt) + " for unknown task " + task);
            } else {
                if (it->second.closed) fail("chain.closed", "new attempt on closed task " + task);
                const auto prev = deliveries_.find(it->second.current);
                if (prev == deliveries_.end() || prev->second.state.status != delivery::DeliveryStatus::Rejected)
                    fail("chain.reassign", "attempt " + std::to_string(attempt) + " on task " + task + " without a rejected predecessor");
                it->second.current = id;
            }
        }
        deliveries_[id] = d;
    }

    void transition(const nlohmann::json& e) {
        using delivery::DeliveryStatus;
        const auto id = e.at("deliveryId").get<std::string>();
        auto it = deliveries_.find(id);
        if (it == deliveries_.end()) return fail("transition.unknown", "transition for unknown delivery " + id);
        auto& d = it->second;
        const delivery::State from{delivery::status_from_string(e.at("from").at("status").get<std::string>()),
                                   delivery::phase_from_string(e["from"].at("tripPhase").get<std::string>())};
        const delivery::State to{delivery::status_from_string(e.at("to").at("status").get<std::string>()),
                                 delivery::phase_from_string(e["to"].at("tripPhase").get<std::string>())};
        const auto ev = delivery::event_from_string(e.at("event").get<std::string>());
        if (!(from == d.state)) fail("transition.continuity", "delivery " + id + " jumps from a state it was not in");
        const auto next = delivery::next_state(from, ev);
        const bool grace_issue = ev == delivery::TransitionEvent::ReportIssue && from.status == DeliveryStatus::Delivered && to == from;
        if (!grace_issue && (!next || !(*next == to)))
            fail("transition.edge", "illegal edge " + label(from) + " --" + e["event"].get<std::string>() + "--> " + label(to) +
                                        " on delivery " + id);
        const auto actor = e.at("actor").get<std::string>();
        const auto courier = e.at("courierId").is_null() ? std::optional<std::string>() : e["courierId"].get<std::string>();
        if (ev == delivery::TransitionEvent::Dispatch) {
            d.courier = courier;
            const auto task = tasks_.find(d.taskId);
            if (courier && task != tasks_.end() && task->second.rejecters.count(*courier))
                fail("chain.rejecter", "task " + d.taskId + " re-dispatched to courier " + *courier + " who rejected it");
        }
        if (actor.rfind("COURIER:", 0) == 0) {
            const auto who = actor.substr(8);
            if (ev != delivery::TransitionEvent::Dispatch && (!d.courier || *d.courier != who))
                fail("transition.actor", "courier " + who + " acted on delivery " + id + " dispatched to someone else");
        }
        if (ev == delivery::TransitionEvent::Reject && d.courier) tasks_[d.taskId].rejecters.insert(*d.courier);
        d.state = to;
    }

    void chain_closed(const nlohmann::json& e, bool completed) {
        const auto task = e.at("taskId").get<std::string>();
        auto it = tasks_.find(task);
        if (it == tasks_.end()) return fail("chain.unknown", "close of unknown task " + task);
        if (it->second.closed) return fail("chain.closed", "task " + task + " closed twice");
        it->second.closed = true;
        const auto cur = deliveries_.find(it->second.current);
        if (completed && (cur == deliveries_.end() || cur->second.state.status != delivery::DeliveryStatus::Delivered))
            fail("chain.completed", "task " + task + " completed without a delivered attempt");
        auto& c = counts_[it->second.instance];
        ++(completed ? c.delivered : c.canceled);
    }

    void finish() {
        for (const auto& [did, tid] : finalized_deliveries_) {
            const auto it = deliveries_.find(did);
            if (it == deliveries_.end()) {
                fail("accounting", "finalized thread " + tid + " never produced delivery " + did);
                continue;
            }
        }
        for (const auto& [domain, c] : counts_) {
            if (c.finalized != c.tasks)
                fail("accounting", domain + ": " + std::to_string(c.finalized) + " finalized threads but " + std::to_string(c.tasks) + " tasks");
            if (c.delivered + c.canceled > c.tasks) fail("accounting", domain + ": more closed tasks than tasks");
        }
        if (summary_.is_null()) return;
        for (const auto& [domain, s] : summary_.at("instances").items()) {
            const auto c = counts_.count(domain) ? counts_[domain] : Counts{};
            const int in_flight = c.tasks - c.delivered - c.canceled;
            const bool same = s.at("finalized").get<int>() == c.finalized && s.at("delivered").get<int>() == c.delivered &&
                              s.at("canceled").get<int>() == c.canceled && s.at("inFlight").get<int>() == in_flight;
            if (!same) fail("summary", domain + ": summary counts differ from the replayed log");
            if (s["finalized"].get<int>() != s["delivered"].get<int>() + s["canceled"].get<int>() + s["inFlight"].get<int>())
                fail("summary", domain + ": finalized != delivered + canceled + inFlight");
        }
    }

    VerifyReport* report_ = nullptr;
    std::size_t line_ = 0;
    std::uint64_t last_seq_ = 0;
    std::optional<Timestamp> last_at_;
    std::map<std::string, ThreadTrack> threads_;
    std::set<std::string> finalized_groups_;
    std::map<std::string, std::string> finalized_deliveries_;
    std::map<std::string, DeliveryTrack> deliveries_;
    std::map<std::string, TaskTrack> tasks_;
    std::map<std::string, Counts> counts_;
    nlohmann::json summary_;
};

inline VerifyReport verify_log(const std::vector<std::string>& lines) { return LogVerifier{}.run(lines); }
inline VerifyReport verify_log_text(const std::string& text) { return LogVerifier{}.run_text(text); }

}  // namespace opencourier::harness
