#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "opencourier/quoting.hpp"
#include "oracles/geo_oracle.hpp"
#include "support/fixtures.hpp"

using namespace opencourier;
using namespace opencourier::quoting;

namespace {

struct Exch {
    store::MemoryStore db;
    SeededIdSource ids{3};
    Timestamp now = fixtures::t0;
    std::shared_ptr<const registry::Registry> reg;
    std::unique_ptr<Exchange> ex;

    explicit Exch(std::vector<std::string> domains = {"nosh.example"}, ExchangeConfig cfg = {}) {
        registry::Registry r;
        for (const auto& d : domains) r.records.push_back(fixtures::instance(d, "Inst " + d));
        reg = std::make_shared<const registry::Registry>(r);
        ex = std::make_unique<Exchange>(db, ids, [this] { return now; },
                                        Directory{[this] { return reg; }, [](const std::string&) { return true; }}, cfg);
    }
};

std::int64_t usd(const char* s) { return parse_minor_units(s, 2); }

}  // namespace

TEST(Quoting, DistanceFloorMatchesOracle) {
    const auto q = fixtures::quote();
    const double m = oracle::great_circle_meters({-74.6675, 40.3520}, {-74.6565, 40.3435});
    EXPECT_NEAR(great_circle_in_unit(q), m / 1609.344, 1e-6);
    EXPECT_LT(m / 1609.344, 1.2);
}

TEST(Quoting, CreateOpensThreadWithOffer) {
    Exch e;
    const auto t = e.ex->create_quote("r1", "nosh.example", fixtures::quote());
    EXPECT_EQ(t.state, ThreadState::Open);
    ASSERT_EQ(t.rounds.size(), 1u);
    EXPECT_EQ(t.rounds[0].by, Party::Requester);
    EXPECT_EQ(t.rounds[0].kind, RoundKind::Offer);
    EXPECT_EQ(t.rounds[0].amount, usd("12.00"));
    EXPECT_FALSE(t.quote.quoteId.empty());
}

TEST(Quoting, RangeInversionRejected) {
    Exch e;
    auto j = fixtures::quote_json();
    j["quoteRangeFrom"] = 10;
    j["quoteRangeTo"] = 8;
    j["quote"] = 9;
    try {
        e.ex->create_quote("r1", "nosh.example", quote_from_json(j));
        FAIL();
    } catch (const Error& err) {
        EXPECT_EQ(err.code(), ErrorCode::ValidationError);
    }
}

TEST(Quoting, DegenerateRangeAccepted) {
    Exch e;
    auto j = fixtures::quote_json();
    j["quote"] = j["quoteRangeFrom"] = j["quoteRangeTo"] = 12;
    EXPECT_EQ(e.ex->create_quote("r1", "nosh.example", quote_from_json(j)).state, ThreadState::Open);
}

TEST(Quoting, ShortDistanceAndBadTimesRejected) {
    Exch e;
    auto j = fixtures::quote_json();
    j["distance"] = 0.5;
    EXPECT_THROW(e.ex->create_quote("r1", "nosh.example", quote_from_json(j)), Error);
    j = fixtures::quote_json();
    j["expiresAt"] = "2025-03-03T11:59:00Z";
    EXPECT_THROW(e.ex->create_quote("r1", "nosh.example", quote_from_json(j)), Error);
    j = fixtures::quote_json();
    j["dropoffEta"] = "2025-03-03T14:00:00Z";
    EXPECT_THROW(e.ex->create_quote("r1", "nosh.example", quote_from_json(j)), Error);
    j = fixtures::quote_json();
    j["quote"] = "12.001";
    EXPECT_THROW(quote_from_json(j), Error);
}

TEST(Quoting, UnknownInstance) {
    Exch e;
    try {
        e.ex->create_quote("r1", "nowhere.example", fixtures::quote());
        FAIL();
    } catch (const Error& err) {
        EXPECT_EQ(err.code(), ErrorCode::UnknownInstance);
    }
}

TEST(Quoting, CounterThenAcceptAgreesOnCounter) {
    Exch e;
    auto t = e.ex->create_quote("r1", "nosh.example", fixtures::quote());
    e.ex->respond(t.threadId, Party::Instance, RoundKind::Counter, "rain surcharge", usd("14.00"));
    t = e.ex->respond(t.threadId, Party::Requester, RoundKind::Accept, "ok", std::nullopt);
    EXPECT_EQ(t.state, ThreadState::Accepted);
    EXPECT_EQ(t.agreedAmount, usd("14.00"));
    EXPECT_EQ(t.rounds[1].message, "rain surcharge");
}

TEST(Quoting, OutOfTurn) {
    Exch e;
    auto t = e.ex->create_quote("r1", "nosh.example", fixtures::quote());
    e.ex->respond(t.threadId, Party::Instance, RoundKind::Counter, "", usd("14.00"));
    try {
        e.ex->respond(t.threadId, Party::Instance, RoundKind::Counter, "", usd("15.00"));
        FAIL();
    } catch (const Error& err) {
        EXPECT_EQ(err.code(), ErrorCode::OutOfTurn);
    }
    // The requester also cannot answer its own opening offer.
    auto u = e.ex->create_quote("r1", "nosh.example", fixtures::quote());
    EXPECT_THROW(e.ex->respond(u.threadId, Party::Requester, RoundKind::Accept, "", std::nullopt), Error);
}

TEST(Quoting, RespondAfterExpiry) {
    Exch e;
    auto t = e.ex->create_quote("r1", "nosh.example", fixtures::quote());
    e.now = t.quote.expiresAt;
    try {
        e.ex->respond(t.threadId, Party::Instance, RoundKind::Accept, "", std::nullopt);
        FAIL();
    } catch (const Error& err) {
        EXPECT_EQ(err.code(), ErrorCode::Expired);
    }
    EXPECT_EQ(e.ex->get(t.threadId).state, ThreadState::Expired);
}

TEST(Quoting, CounterRangeUntilBothCountered) {
    Exch e;
    auto t = e.ex->create_quote("r1", "nosh.example", fixtures::quote());
    EXPECT_THROW(e.ex->respond(t.threadId, Party::Instance, RoundKind::Counter, "", usd("20.00")), Error);
    e.ex->respond(t.threadId, Party::Instance, RoundKind::Counter, "", usd("16.00"));
    e.ex->respond(t.threadId, Party::Requester, RoundKind::Counter, "", usd("13.00"));
    // Both sides have countered; the range no longer binds.
    EXPECT_NO_THROW(e.ex->respond(t.threadId, Party::Instance, RoundKind::Counter, "", usd("17.50")));
}

TEST(Quoting, RoundLimitLeavesClosingSlot) {
    Exch e({"nosh.example"}, ExchangeConfig{2});
    auto t = e.ex->create_quote("r1", "nosh.example", fixtures::quote());
    e.ex->respond(t.threadId, Party::Instance, RoundKind::Counter, "", usd("15.00"));
    e.ex->respond(t.threadId, Party::Requester, RoundKind::Counter, "", usd("13.00"));
    try {
        e.ex->respond(t.threadId, Party::Instance, RoundKind::Counter, "", usd("14.00"));
        FAIL();
    } catch (const Error& err) {
        EXPECT_EQ(err.code(), ErrorCode::RoundLimit);
    }
    t = e.ex->respond(t.threadId, Party::Instance, RoundKind::Accept, "", std::nullopt);
    EXPECT_EQ(t.rounds.size(), 4u);
    EXPECT_EQ(t.agreedAmount, usd("13.00"));
}

TEST(Quoting, FinalizeAndPayout) {
    Exch e;
    auto t = e.ex->create_quote("r1", "nosh.example", fixtures::quote());
    EXPECT_THROW(e.ex->finalize(t.threadId), Error);
    try {
        e.ex->finalize(t.threadId);
    } catch (const Error& err) {
        EXPECT_EQ(err.code(), ErrorCode::NotAccepted);
    }
    e.ex->respond(t.threadId, Party::Instance, RoundKind::Counter, "", usd("14.00"));
    e.ex->respond(t.threadId, Party::Requester, RoundKind::Accept, "", std::nullopt);
    const auto f = e.ex->finalize(t.threadId);
    ASSERT_TRUE(f.deliveryId);
    const auto d = delivery_from_thread(f, *f.deliveryId, e.now);
    EXPECT_EQ(d.payoutMinor, 1260);
    EXPECT_EQ(d.status, delivery::DeliveryStatus::Created);
    EXPECT_EQ(delivery::to_json(d)["payout"], 12.6);
    try {
        e.ex->finalize(t.threadId);
        FAIL();
    } catch (const Error& err) {
        EXPECT_EQ(err.code(), ErrorCode::AlreadyFinalized);
    }
    EXPECT_EQ(e.ex->get(t.threadId).deliveryId, f.deliveryId);
}

TEST(Quoting, ExpireQuotesInclusiveAndIdempotent) {
    Exch e;
    EXPECT_EQ(e.ex->expire_quotes(e.now), 0);
    auto t = e.ex->create_quote("r1", "nosh.example", fixtures::quote());
    EXPECT_EQ(e.ex->expire_quotes(t.quote.expiresAt - std::chrono::milliseconds(1)), 0);
    EXPECT_EQ(e.ex->expire_quotes(t.quote.expiresAt), 1);
    EXPECT_EQ(e.ex->expire_quotes(t.quote.expiresAt), 0);
}

TEST(Quoting, BroadcastSharesGroupAndRejectsSiblings) {
    Exch e({"a.example", "b.example", "c.example"});
    const auto threads = e.ex->broadcast_quote("r1", {}, fixtures::quote());
    ASSERT_EQ(threads.size(), 3u);
    for (const auto& t : threads) EXPECT_EQ(t.broadcastGroupId, threads[0].broadcastGroupId);
    e.ex->respond(threads[1].threadId, Party::Instance, RoundKind::Accept, "", std::nullopt);
    e.ex->finalize(threads[1].threadId);
    for (int i : {0, 2}) {
        const auto s = e.ex->get(threads[i].threadId);
        EXPECT_EQ(s.state, ThreadState::Rejected);
        EXPECT_EQ(s.rounds.back().by, Party::System);
    }
    try {
        e.ex->respond(threads[2].threadId, Party::Instance, RoundKind::Accept, "", std::nullopt);
        FAIL();
    } catch (const Error& err) {
        EXPECT_EQ(err.code(), ErrorCode::ThreadClosed);
    }
}

TEST(Quoting, BroadcastNoMatch) {
    Exch e({"a.example"});
    registry::QueryFilter f;
    f.language = "fr";
    try {
        e.ex->broadcast_quote("r1", f, fixtures::quote());
        FAIL();
    } catch (const Error& err) {
        EXPECT_EQ(err.code(), ErrorCode::NoMatchingInstance);
    }
}

TEST(Quoting, ConcurrentSiblingAcceptsOneWinner) {
    for (int run = 0; run < 20; ++run) {
        Exch e({"a.example", "b.example", "c.example", "d.example"});
        const auto threads = e.ex->broadcast_quote("r1", {}, fixtures::quote());
        std::vector<std::thread> racers;
        std::atomic<int> wins{0};
        for (const auto& t : threads) {
            racers.emplace_back([&, id = t.threadId] {
                try {
                    e.ex->respond(id, Party::Instance, RoundKind::Accept, "", std::nullopt);
                    ++wins;
                } catch (const Error&) {
                }
            });
        }
        for (auto& r : racers) r.join();
        EXPECT_EQ(wins.load(), 1);
        int accepted = 0;
        for (const auto& t : threads) accepted += e.ex->get(t.threadId).state == ThreadState::Accepted;
        EXPECT_EQ(accepted, 1);
    }
}

TEST(Quoting, ThreadJsonRoundTrip) {
    Exch e;
    auto t = e.ex->create_quote("r1", "nosh.example", fixtures::quote());
    t = e.ex->respond(t.threadId, Party::Instance, RoundKind::Counter, "x", usd("14.00"));
    EXPECT_EQ(to_json(thread_from_json(to_json(t))).dump(), to_json(t).dump());
}
