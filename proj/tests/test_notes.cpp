#include <gtest/gtest.h>

#include <random>

#include "opencourier/notes.hpp"
#include "oracles/geo_oracle.hpp"

using namespace opencourier;
using namespace opencourier::notes;

namespace {

struct Fixture {
    store::MemoryStore db;
    SeededIdSource ids{1};
    Timestamp now = parse_iso8601("2025-03-03T12:00:00Z");
    NoteService svc{db, ids, [this] { return now; }};
};

// Point `meters` due north of `p`.
geo::LonLat north_of(geo::LonLat p, double meters) {
    const double dlat = meters / geo::kEarthRadiusMeters * 180.0 / M_PI;
    return {p.lon, p.lat + dlat};
}

const std::string thumbs = "\xF0\x9F\x91\x8D";

}  // namespace

TEST(Notes, CreateHasEmptyReactions) {
    Fixture f;
    const auto n = f.svc.create("c1", {-74.66, 40.35}, "loading dock behind building");
    EXPECT_TRUE(n.reactions.empty());
    EXPECT_EQ(f.svc.get(n.locationNoteId).text, "loading dock behind building");
}

TEST(Notes, TextLengthBounds) {
    Fixture f;
    EXPECT_NO_THROW(f.svc.create("c1", {0, 0}, std::string(500, 'x')));
    EXPECT_THROW(f.svc.create("c1", {0, 0}, std::string(501, 'x')), Error);
    EXPECT_THROW(f.svc.create("c1", {0, 0}, ""), Error);
    // 500 code points of a multi-byte character are fine.
    std::string e_acute;
    for (int i = 0; i < 500; ++i) e_acute += "\xC3\xA9";
    EXPECT_NO_THROW(f.svc.create("c1", {0, 0}, e_acute));
}

TEST(Notes, InvalidLatitudeRejected) {
    Fixture f;
    try {
        f.svc.create("c1", {-74.66, 91}, "x");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ValidationError);
    }
}

TEST(Notes, ListMineSkipsDeletedNewestFirst) {
    Fixture f;
    const auto a = f.svc.create("c1", {0, 0}, "a");
    f.now += std::chrono::minutes(1);
    const auto b = f.svc.create("c1", {0, 0}, "b");
    f.now += std::chrono::minutes(1);
    const auto c = f.svc.create("c1", {0, 0}, "c");
    f.svc.create("c2", {0, 0}, "other");
    f.svc.remove("c1", b.locationNoteId);
    const auto mine = f.svc.list_mine("c1");
    ASSERT_EQ(mine.size(), 2u);
    EXPECT_EQ(mine[0].locationNoteId, c.locationNoteId);
    EXPECT_EQ(mine[1].locationNoteId, a.locationNoteId);
}

TEST(Notes, NearIsInclusiveAndBounded) {
    Fixture f;
    const geo::LonLat here{-74.66, 40.35};
    const auto at = f.svc.create("c1", here, "here");
    EXPECT_EQ(f.svc.list_near(here, 0).size(), 1u);
    EXPECT_EQ(f.svc.list_near(here, 0)[0].locationNoteId, at.locationNoteId);

    Fixture g;
    const auto n100 = g.svc.create("c1", north_of(here, 100), "100m");
    g.svc.create("c1", north_of(here, 200), "200m");
    EXPECT_NEAR(oracle::great_circle_meters({here.lon, here.lat}, {n100.position.lon, n100.position.lat}), 100, 1e-3);
    const auto hits = g.svc.list_near(here, 150);
    ASSERT_EQ(hits.size(), 1u);
    EXPECT_EQ(hits[0].locationNoteId, n100.locationNoteId);
}

TEST(Notes, NearSortedByOracleDistance) {
    Fixture f;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> lon(-74.70, -74.62), lat(40.32, 40.38);
    for (int i = 0; i < 200; ++i) f.svc.create("c" + std::to_string(i % 7), {lon(rng), lat(rng)}, "n");
    const geo::LonLat q{-74.66, 40.35};
    const double radius = 3000;
    const auto hits = f.svc.list_near(q, radius);
    std::size_t expected = 0;
    for (const auto& n : f.svc.list_near(q, 1e9))
        if (oracle::great_circle_meters({q.lon, q.lat}, {n.position.lon, n.position.lat}) <= radius - 1e-6) ++expected;
    EXPECT_GE(hits.size(), expected);
    double prev = -1;
    for (const auto& n : hits) {
        const double d = oracle::great_circle_meters({q.lon, q.lat}, {n.position.lon, n.position.lat});
        EXPECT_LE(d, radius + 1e-6);
        EXPECT_GE(d, prev - 1e-6);
        prev = d;
    }
}

TEST(Notes, UpdatePreservesReactions) {
    Fixture f;
    const auto n = f.svc.create("c1", {0, 0}, "old");
    f.svc.react("c2", n.locationNoteId, thumbs);
    f.now += std::chrono::minutes(5);
    const auto u = f.svc.update("c1", n.locationNoteId, "new");
    EXPECT_EQ(u.text, "new");
    EXPECT_EQ(u.reactions.at(thumbs), std::set<std::string>{"c2"});
    EXPECT_GT(u.updatedAt, n.updatedAt);
}

TEST(Notes, NonAuthorCannotMutate) {
    Fixture f;
    const auto n = f.svc.create("c1", {0, 0}, "x");
    try {
        f.svc.remove("c2", n.locationNoteId);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ForbiddenActor);
    }
    EXPECT_THROW(f.svc.update("c2", n.locationNoteId, "y"), Error);
}

TEST(Notes, DeletedNoteInvisible) {
    Fixture f;
    const auto n = f.svc.create("c1", {0, 0}, "x");
    f.svc.remove("c1", n.locationNoteId);
    try {
        f.svc.get(n.locationNoteId);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NotFound);
    }
    EXPECT_TRUE(f.svc.list_near({0, 0}, 10).empty());
    EXPECT_THROW(f.svc.react("c2", n.locationNoteId, thumbs), Error);
    EXPECT_THROW(f.svc.remove("c1", n.locationNoteId), Error);
}

TEST(Notes, ReactionToggle) {
    Fixture f;
    const auto n = f.svc.create("c1", {0, 0}, "x");
    f.svc.react("c2", n.locationNoteId, thumbs);
    auto r = f.svc.react("c3", n.locationNoteId, thumbs);
    EXPECT_EQ(r.reactions.at(thumbs), (std::set<std::string>{"c2", "c3"}));

    Fixture g;
    const auto m = g.svc.create("c1", {0, 0}, "x");
    g.svc.react("c2", m.locationNoteId, thumbs);
    EXPECT_TRUE(g.svc.react("c2", m.locationNoteId, thumbs).reactions.empty());
}

TEST(Notes, NonEmojiReactionRejected) {
    Fixture f;
    const auto n = f.svc.create("c1", {0, 0}, "x");
    EXPECT_THROW(f.svc.react("c2", n.locationNoteId, "thanks"), Error);
    EXPECT_THROW(f.svc.react("c2", n.locationNoteId, thumbs + thumbs), Error);
    // Skin-tone modified and ZWJ sequences are single emoji.
    EXPECT_NO_THROW(f.svc.react("c2", n.locationNoteId, thumbs + "\xF0\x9F\x8F\xBD"));
}

TEST(Notes, JsonRoundTrip) {
    Fixture f;
    auto n = f.svc.create("c1", {-74.66, 40.35}, "x");
    n = f.svc.react("c2", n.locationNoteId, thumbs);
    const auto back = note_from_json(to_json(n));
    EXPECT_EQ(to_json(back).dump(), to_json(n).dump());
}
