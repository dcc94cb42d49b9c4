#pragma once

// Deliveries that genuinely reach a given state, built by walking the
// independent edge list.

#include <set>
#include <vector>

#include "opencourier/delivery.hpp"
#include "oracles/lifecycle_oracle.hpp"

namespace fixtures {

using namespace opencourier;
using namespace opencourier::delivery;


inline const Timestamp walk_t0 = parse_iso8601("2025-03-03T12:00:00Z");

inline Delivery make_delivery(State s, std::string courier = "c1") {
    Delivery d;
    d.deliveryId = "D1";
    d.instanceDomain = "nosh.example";
    d.courierId = std::move(courier);
    d.status = s.status;
    d.tripPhase = s.phase;
    d.createdAt = d.updatedAt = walk_t0;
    return d;
}

inline TransitionRequest canonical_request(TransitionEvent ev) {
    TransitionRequest r;
    r.event = ev;
    switch (ev) {
        case TransitionEvent::Dispatch:
            r.actor = Actor::system();
            r.targetCourierId = "c1";
            break;
        case TransitionEvent::Cancel:
            r.actor = Actor::admin();
            break;
        case TransitionEvent::ReportIssue:
            r.actor = Actor::admin();
            r.issue = Issue{"OTHER", "note"};
            break;
        default:
            r.actor = Actor::courier("c1");
    }
    return r;
}

// Builds a delivery whose history genuinely reaches `target`, walking the
// oracle edge list breadth-first. Unreachable (inconsistent) states get a bare
// record with no history.
inline Delivery reach(State target) {
    const auto edges = oracle::normative_edges();
    std::vector<std::pair<State, std::vector<TransitionEvent>>> frontier{{State{}, {}}};
    std::set<std::pair<int, int>> seen{{0, 0}};
    for (std::size_t i = 0; i < frontier.size(); ++i) {
        const auto [state, path] = frontier[i];
        if (state == target) {
            Delivery d = make_delivery({}, "");
            d.courierId.reset();
            Timestamp t = walk_t0;
            for (auto ev : path) d = transition(d, canonical_request(ev), t += std::chrono::minutes(1));
            return d;
        }
        for (const auto& e : edges) {
            if (e.status != to_string(state.status) || e.phase != to_string(state.phase)) continue;
            const State next{status_from_string(e.to_status), phase_from_string(e.to_phase)};
            if (!seen.insert({static_cast<int>(next.status), static_cast<int>(next.phase)}).second) continue;
            auto p = path;
            p.push_back(event_from_string(e.event));
            frontier.push_back({next, p});
        }
    }
    return make_delivery(target);
}

inline const oracle::Edge* find_edge(const std::vector<oracle::Edge>& edges, State s, TransitionEvent ev) {
    for (const auto& e : edges)
        if (e.status == to_string(s.status) && e.phase == to_string(s.phase) && e.event == to_string(ev)) return &e;
    return nullptr;
}

}  // namespace fixtures
