#pragma once

#include <cstdint>
#include <random>
#include <string>

#include <json.hpp>

namespace fixtures {

inline nlohmann::json box(double w, double s, double e, double n) {
    return {{"type", "Polygon"}, {"coordinates", {{{w, s}, {e, s}, {e, n}, {w, n}, {w, s}}}}};
}

/// One instance, one courier, one quote that everybody accepts.
inline nlohmann::json single_delivery_scenario() {
    return {
        {"name", "single"},
        {"seed", 1},
        {"start", "2025-03-03T12:00:00Z"},
        {"durationSeconds", 3600},
        {"tickSeconds", 30},
        {"instances",
         {{{"domain", "solo.example"},
           {"territory", box(-74.69, 40.33, -74.63, 40.37)},
           {"negotiation", {{"acceptProbability", 1.0}, {"delaySeconds", 0}}},
           {"fleet", {{{"name", "Ada"}, {"position", {{"lon", -74.66}, {"lat", 40.35}}}, {"stepSeconds", 60}}}}}}},
        {"requester", {{"delaySeconds", 0}, {"finalizeDelaySeconds", 0}}},
        {"requesterScript", {{{"at", 0}, {"action", "quote"}, {"instance", "solo.example"}, {"label", "only"}}}},
    };
}

/// Three overlapping instances; every broadcast sibling accepts at once.
inline nlohmann::json broadcast_race_scenario(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    nlohmann::json instances = nlohmann::json::array();
    for (const char* d : {"alpha.example", "beta.example", "gamma.example"}) {
        instances.push_back({{"domain", d},
                             {"territory", box(-74.69, 40.33, -74.63, 40.37)},
                             {"negotiation", {{"acceptProbability", 1.0}, {"delaySeconds", 0}}},
                             {"fleetSize", 1 + static_cast<int>(rng() % 2)}});
    }
    nlohmann::json script = nlohmann::json::array();
    const int broadcasts = 1 + static_cast<int>(rng() % 3);
    for (int i = 0; i < broadcasts; ++i)
        script.push_back({{"at", 60 * static_cast<int>(rng() % 5)}, {"action", "broadcast"}, {"label", "race-" + std::to_string(i)}});
    return {{"name", "broadcast-race"},
            {"seed", seed},
            {"start", "2025-03-03T12:00:00Z"},
            {"durationSeconds", 900},
            {"tickSeconds", 60},
            {"instances", instances},
            {"requester", {{"delaySeconds", 0}, {"finalizeDelaySeconds", 0}}},
            {"requesterScript", script}};
}

}  // namespace fixtures
