#include <gtest/gtest.h>

#include <random>

#include "opencourier/disclosure.hpp"
#include "oracles/hygiene.hpp"
#include "support/fixtures.hpp"
#include "support/random_store.hpp"

using namespace opencourier;
using namespace opencourier::disclosure;
using delivery::Actor;
using delivery::TransitionEvent;

namespace {

const Timestamp t0 = fixtures::t0;
const std::string salt = "pinned-salt";

delivery::Delivery step(delivery::Delivery d, TransitionEvent ev, Actor who, Timestamp at) {
    delivery::TransitionRequest r;
    r.event = ev;
    r.actor = std::move(who);
    if (ev == TransitionEvent::Dispatch) r.targetCourierId = "c1";
    return delivery::transition(d, r, at);
}

delivery::Delivery made(const std::string& id, Timestamp created, std::int64_t payout = 1260) {
    delivery::Delivery d;
    d.deliveryId = id;
    d.pickupLocation = {{-74.6675, 40.3520}, "1 Nassau St"};
    d.dropoffLocation = {{-74.6565, 40.35}, "20 Alexander St"};
    d.payoutMinor = payout;
    d.distance = 1.2;
    d.createdAt = d.updatedAt = created;
    return d;
}

delivery::Delivery delivered(const std::string& id, Timestamp created, Timestamp courier_at, std::int64_t payout = 1260) {
    auto d = step(made(id, created, payout), TransitionEvent::Dispatch, Actor::system(), created);
    const Actor c = Actor::courier("c1");
    d = step(d, TransitionEvent::Accept, c, courier_at);
    for (auto ev : {TransitionEvent::ArrivedAtPickup, TransitionEvent::MarkPickedUp, TransitionEvent::MarkOnTheWay,
                    TransitionEvent::ArrivedAtDropoff, TransitionEvent::MarkDelivered})
        d = step(d, ev, c, courier_at + std::chrono::minutes(1));
    return d;
}

}  // namespace

TEST(Csv, QuotingAndRoundTrip) {
    const std::vector<std::vector<std::string>> rows{{"a", "b,c", "say \"hi\"", ""}, {"line\nbreak", "x", "", "z"}};
    const auto text = csv::write(rows);
    EXPECT_EQ(text, "a,\"b,c\",\"say \"\"hi\"\"\",\n\"line\nbreak\",x,,z\n");
    EXPECT_EQ(csv::parse(text), rows);
    EXPECT_EQ(csv::write(csv::parse(text)), text);
    EXPECT_EQ(csv::parse("a,b\r\nc,d"), (std::vector<std::vector<std::string>>{{"a", "b"}, {"c", "d"}}));
    EXPECT_THROW(csv::parse("\"open"), Error);
    EXPECT_THROW(csv::parse("a\"b"), Error);
}

TEST(Csv, QuotedNewlineStaysInField) {
    const auto rows = csv::parse("\"x\ny\",2\n");
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0][0], "x\ny");
}

TEST(Disclosure, EmptyInstanceHeaderOnly) {
    const auto out = export_csv({}, make_range(t0, t0 + std::chrono::hours(1)), salt);
    EXPECT_EQ(out,
              "deliveryIdHash,courierIdHash,status,createdAt,deliveredAt,pickupCell,dropoffCell,distance,"
              "distanceUnit,payout,currency,durationMinutes\n");
}

TEST(Disclosure, RangeFiltersAndRowShape) {
    const auto range = make_range(t0, t0 + std::chrono::hours(2));
    std::vector<delivery::Delivery> ds{delivered("d-1", t0 + std::chrono::minutes(5), t0 + std::chrono::minutes(10)),
                                       made("d-2", t0 + std::chrono::minutes(1)),
                                       made("d-3", t0 + std::chrono::hours(3))};
    const auto rows = csv::parse(export_csv(ds, range, salt));
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[1][2], "CREATED");
    EXPECT_EQ(rows[1][1], "");
    const auto& r = rows[2];
    EXPECT_EQ(r[0], hash_id(salt, "d-1"));
    EXPECT_EQ(r[1], hash_id(salt, "c1"));
    EXPECT_EQ(r[2], "DELIVERED");
    EXPECT_EQ(r[3], "2025-03-03T12:05:00Z");
    EXPECT_EQ(r[4], "2025-03-03T12:11:00Z");
    EXPECT_EQ(r[5], "-74.66,40.35");
    EXPECT_EQ(r[6], "-74.65,40.35");
    EXPECT_EQ(r[7], "1.20");
    EXPECT_EQ(r[9], "12.60");
    EXPECT_EQ(r[11], "6.00");
}

TEST(Disclosure, EmptyRangeRejected) {
    try {
        make_range(t0, t0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::EmptyRange);
    }
}

TEST(Disclosure, TruncationTowardZero) {
    EXPECT_EQ(truncate2(-74.6675), "-74.66");
    EXPECT_EQ(truncate2(40.3599), "40.35");
    EXPECT_EQ(truncate2(40.35), "40.35");
    EXPECT_EQ(truncate2(-0.004), "0.00");
    EXPECT_EQ(truncate2(179.999), "179.99");
}

TEST(Disclosure, SaltsUnlinkAndStabilize) {
    std::vector<delivery::Delivery> ds{made("d-1", t0)};
    const auto range = make_range(t0, t0 + std::chrono::hours(1));
    EXPECT_EQ(export_csv(ds, range, "s1"), export_csv(ds, range, "s1"));
    EXPECT_NE(csv::parse(export_csv(ds, range, "s1"))[1][0], csv::parse(export_csv(ds, range, "s2"))[1][0]);
}

TEST(Disclosure, PayoutColumnMatchesStoreSum) {
    std::mt19937_64 rng(4);
    SeededIdSource ids(4);
    const auto ds = fixtures::random_deliveries(rng, ids, 60, t0);
    const auto range = make_range(t0, t0 + std::chrono::hours(36));
    std::int64_t want = 0;
    for (const auto& d : ds)
        if (range.contains(d.createdAt) && d.currency == "USD") want += d.payoutMinor;
    std::int64_t got = 0;
    const auto rows = csv::parse(export_csv(ds, range, salt));
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i][10] == "USD") got += parse_minor_units(rows[i][9], 2);
    EXPECT_EQ(got, want);
}

TEST(Disclosure, HygieneScanOnRandomStores) {
    std::mt19937_64 rng(11);
    SeededIdSource ids(11);
    for (int s = 0; s < 10; ++s) {
        const auto ds = fixtures::random_deliveries(rng, ids, 40, t0);
        std::vector<std::string> raw;
        for (const auto& d : ds) {
            raw.push_back(d.deliveryId);
            raw.push_back(d.taskId);
            if (d.courierId) raw.push_back(*d.courierId);
        }
        const auto doc = export_csv(ds, make_range(t0, t0 + std::chrono::hours(80)), ids.token());
        const auto leaks = oracle::scan_export(doc, raw);
        EXPECT_TRUE(leaks.empty()) << leaks.front().kind << ": " << leaks.front().text;
        EXPECT_EQ(csv::parse(doc).size(), ds.size() + 1);
    }
}

TEST(Disclosure, HygieneScanCatchesPlantedLeaks) {
    EXPECT_FALSE(oracle::scan_export("x,-74.6675", {}).empty());
    EXPECT_FALSE(oracle::scan_export("x,+1 609 555 0100", {}).empty());
    EXPECT_FALSE(oracle::scan_export("123e4567-e89b-42d3-a456-426614174000", {}).empty());
    EXPECT_FALSE(oracle::scan_export("abc", {"abc"}).empty());
    EXPECT_TRUE(oracle::scan_export("2025-03-03T12:00:00Z,-74.66,12.60", {}).empty());
}

TEST(Metrics, NoActivity) {
    const auto range = make_range(t0, t0 + std::chrono::hours(1));
    const auto j = metrics_json(metric_sums({}, range, "USD"), range, "USD");
    EXPECT_EQ(j["deliveriesCompleted"], 0);
    EXPECT_TRUE(j["avgHourlyEarnings"].is_null());
    EXPECT_TRUE(j["avgPayoutPerDelivery"].is_null());
    EXPECT_TRUE(j["avgDurationMinutes"].is_null());
    EXPECT_TRUE(j["rejectionRate"].is_null());
}

TEST(Metrics, HourlyEarningsOverActiveHours) {
    const auto range = make_range(t0, t0 + std::chrono::hours(4));
    std::vector<delivery::Delivery> ds{delivered("d1", t0, t0 + std::chrono::minutes(10)),
                                       delivered("d2", t0 + std::chrono::hours(1), t0 + std::chrono::minutes(70))};
    const auto s = metric_sums(ds, range, "USD");
    EXPECT_EQ(s.activeHours, 2);
    const auto j = metrics_json(s, range, "USD");
    EXPECT_EQ(j["avgHourlyEarnings"], 12.6);
    EXPECT_EQ(j["avgPayoutPerDelivery"], 12.6);
    EXPECT_EQ(j["deliveriesCompleted"], 2);
}

TEST(Metrics, RejectionRate) {
    const auto range = make_range(t0, t0 + std::chrono::hours(4));
    std::vector<delivery::Delivery> ds;
    for (int i = 0; i < 4; ++i) ds.push_back(step(made("d" + std::to_string(i), t0), TransitionEvent::Dispatch, Actor::system(), t0));
    ds[0] = step(ds[0], TransitionEvent::Reject, Actor::courier("c1"), t0 + std::chrono::minutes(1));
    EXPECT_EQ(metrics_json(metric_sums(ds, range, "USD"), range, "USD")["rejectionRate"], 0.25);
}

TEST(Metrics, AdditiveOverDisjointRanges) {
    std::mt19937_64 rng(21);
    SeededIdSource ids(21);
    for (int s = 0; s < 20; ++s) {
        const auto ds = fixtures::random_deliveries(rng, ids, 50, t0);
        const auto cut = t0 + std::chrono::minutes(static_cast<int>(rng() % (72 * 60)));
        const auto end = t0 + std::chrono::hours(80);
        const auto a = metric_sums(ds, make_range(t0, cut), "USD");
        const auto b = metric_sums(ds, make_range(cut, end), "USD");
        EXPECT_EQ(a + b, metric_sums(ds, make_range(t0, end), "USD"));
    }
}
