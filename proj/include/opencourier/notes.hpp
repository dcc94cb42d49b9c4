#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "opencourier/delivery.hpp"
#include "opencourier/error.hpp"
#include "opencourier/geo.hpp"
#include "opencourier/ids.hpp"
#include "opencourier/repository.hpp"
#include "opencourier/text.hpp"
#include "opencourier/time.hpp"

namespace opencourier::notes {

inline constexpr std::size_t kMaxNoteChars = 500;

struct LocationNote {
    std::string locationNoteId;
    std::string authorCourierId;
    geo::LonLat position;
    std::string text;
    Timestamp createdAt{};
    Timestamp updatedAt{};
    /// emoji -> couriers who reacted with it; empty sets are dropped.
    std::map<std::string, std::set<std::string>> reactions;
    bool deleted = false;
};

inline nlohmann::json to_json(const LocationNote& n) {
    return {{"locationNoteId", n.locationNoteId},
            {"authorCourierId", n.authorCourierId},
            {"position", delivery::to_json(n.position)},
            {"text", n.text},
            {"createdAt", format_iso8601(n.createdAt)},
            {"updatedAt", format_iso8601(n.updatedAt)},
            {"reactions", n.reactions},
            {"deleted", n.deleted}};
}

inline LocationNote note_from_json(const nlohmann::json& j) {
    LocationNote n;
    n.locationNoteId = j.at("locationNoteId").get<std::string>();
    n.authorCourierId = j.at("authorCourierId").get<std::string>();
    n.position = delivery::lonlat_from_json(j.at("position"), "position");
    n.text = j.at("text").get<std::string>();
    n.createdAt = parse_iso8601(j.at("createdAt").get<std::string>());
    n.updatedAt = parse_iso8601(j.at("updatedAt").get<std::string>());
    n.reactions = j.at("reactions").get<std::map<std::string, std::set<std::string>>>();
    n.deleted = j.at("deleted").get<bool>();
    return n;
}

inline void validate_text(const std::string& t) {
    const auto len = text::utf8_length(t);
    if (len == std::string::npos || len < 1 || len > kMaxNoteChars)
        throw Error(ErrorCode::ValidationError, "note text must be 1-500 characters of UTF-8", {{"field", "text"}});
}

/// Adds the reaction, or removes it when the courier already reacted with it.
inline void toggle_reaction(LocationNote& n, const std::string& courierId, const std::string& emoji) {
    if (!text::is_single_emoji(emoji))
        throw Error(ErrorCode::ValidationError, "reaction must be a single emoji", {{"field", "emoji"}});
    auto& who = n.reactions[emoji];
    if (!who.erase(courierId)) who.insert(courierId);
    if (who.empty()) n.reactions.erase(emoji);
}

/// Geotagged courier notes, one record per note. Deleted notes are kept for
/// audit but are invisible to every read.
class NoteService {
public:
    NoteService(store::Store& store, IdSource& ids, Clock clock)
        : repo_(store, "note", [](const LocationNote& n) { return to_json(n); }, note_from_json),
          ids_(&ids),
          clock_(std::move(clock)) {}

    LocationNote create(const std::string& courierId, geo::LonLat position, const std::string& body) {
        validate_text(body);
        if (!geo::valid_position(position))
            throw Error(ErrorCode::ValidationError, "position outside WGS84 range", {{"field", "position"}});
        LocationNote n;
        n.locationNoteId = ids_->uuid();
        n.authorCourierId = courierId;
        n.position = position;
        n.text = body;
        n.createdAt = n.updatedAt = clock_();
        repo_.create(n.locationNoteId, n);
        return n;
    }

    LocationNote get(const std::string& noteId) const {
        auto v = repo_.get(noteId);
        if (!v || v->value.deleted) throw Error(ErrorCode::NotFound, "note not found: " + noteId, {{"id", noteId}});
        return v->value;
    }

    /// Author's live notes, newest first.
    std::vector<LocationNote> list_mine(const std::string& courierId) const {
        auto out = repo_.scan([&](const LocationNote& n) { return !n.deleted && n.authorCourierId == courierId; });
        std::sort(out.begin(), out.end(), [](const LocationNote& a, const LocationNote& b) {
            if (a.createdAt != b.createdAt) return a.createdAt > b.createdAt;
            return a.locationNoteId < b.locationNoteId;
        });
        return out;
    }

    /// Everyone's live notes within the radius (inclusive), nearest first.
    std::vector<LocationNote> list_near(geo::LonLat position, double radiusMeters) const {
        if (!geo::valid_position(position) || !(radiusMeters >= 0))
            throw Error(ErrorCode::ValidationError, "near query needs a valid position and a non-negative radius");
        std::vector<std::pair<double, LocationNote>> hits;
        for (auto& n : repo_.scan([](const LocationNote& n) { return !n.deleted; })) {
            const double d = geo::haversine_meters(position, n.position);
            if (d <= radiusMeters) hits.emplace_back(d, std::move(n));
        }
        std::sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first < b.first;
            return a.second.locationNoteId < b.second.locationNoteId;
        });
        std::vector<LocationNote> out;
        for (auto& h : hits) out.push_back(std::move(h.second));
        return out;
    }

    LocationNote update(const std::string& courierId, const std::string& noteId, const std::string& body) {
        validate_text(body);
        return mutate_own(courierId, noteId, [&](LocationNote& n) {
            n.text = body;
            n.updatedAt = std::max(clock_(), n.updatedAt);
        });
    }

    void remove(const std::string& courierId, const std::string& noteId) {
        mutate_own(courierId, noteId, [&](LocationNote& n) {
            n.deleted = true;
            n.updatedAt = std::max(clock_(), n.updatedAt);
        });
    }

    LocationNote react(const std::string& courierId, const std::string& noteId, const std::string& emoji) {
        return repo_.update(noteId, "note", [&](LocationNote& n) {
            if (n.deleted) throw Error(ErrorCode::NotFound, "note not found: " + noteId, {{"id", noteId}});
            toggle_reaction(n, courierId, emoji);
            return true;
        });
    }

private:
    template <typename F>
    LocationNote mutate_own(const std::string& courierId, const std::string& noteId, F&& fn) {
        return repo_.update(noteId, "note", [&](LocationNote& n) {
            if (n.deleted) throw Error(ErrorCode::NotFound, "note not found: " + noteId, {{"id", noteId}});
            if (n.authorCourierId != courierId)
                throw Error(ErrorCode::ForbiddenActor, "only the author may modify a note", {{"id", noteId}});
            fn(n);
            return true;
        });
    }

    store::Repository<LocationNote> repo_;
    IdSource* ids_;
    Clock clock_;
};

}  // namespace opencourier::notes
