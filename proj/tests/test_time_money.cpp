#include <gtest/gtest.h>

#include <boost/rational.hpp>
#include <random>

#include "opencourier/money.hpp"
#include "opencourier/time.hpp"

using namespace opencourier;

TEST(Time, Iso8601RoundTrip) {
    const auto t = parse_iso8601("2025-03-03T09:30:00Z");
    EXPECT_EQ(format_iso8601(t), "2025-03-03T09:30:00Z");
    EXPECT_EQ(format_iso8601(parse_iso8601("2024-02-29T23:59:59.250Z")), "2024-02-29T23:59:59.250Z");
    EXPECT_EQ(parse_iso8601("2025-03-03T04:30:00-05:00"), t);
    EXPECT_EQ(to_millis(parse_iso8601("1970-01-01T00:00:00Z")), 0);
    EXPECT_EQ(format_iso8601(from_millis(-1000)), "1969-12-31T23:59:59Z");
}

TEST(Time, RejectsMalformed) {
    EXPECT_THROW(parse_iso8601("2025-02-30T00:00:00Z"), Error);
    EXPECT_THROW(parse_iso8601("2025-03-03 09:30:00Z"), Error);
    EXPECT_THROW(parse_iso8601("2025-03-03T09:30:00"), Error);
    EXPECT_THROW(parse_iso8601("yesterday"), Error);
}

TEST(Time, LocalWeekdayAndMinute) {
    // 2025-03-03 is a Monday.
    const auto t = parse_iso8601("2025-03-03T14:00:00Z");
    EXPECT_EQ(local_weekday(t, 0), 0);
    EXPECT_EQ(local_minute_of_day(t, 0), 14 * 60);
    EXPECT_EQ(local_minute_of_day(t, -300), 9 * 60);
    EXPECT_EQ(local_weekday(parse_iso8601("2025-03-03T02:00:00Z"), -300), 6);  // still Sunday locally
}

TEST(Money, ParseAndFormat) {
    EXPECT_EQ(parse_minor_units("14.00", 2), 1400);
    EXPECT_EQ(parse_minor_units("14", 2), 1400);
    EXPECT_EQ(parse_minor_units("0.5", 2), 50);
    EXPECT_EQ(parse_minor_units("12.600", 2), 1260);
    EXPECT_THROW(parse_minor_units("12.605", 2), Error);
    EXPECT_THROW(parse_minor_units("abc", 2), Error);
    EXPECT_EQ(format_minor_units(1260, 2), "12.60");
    EXPECT_EQ(format_minor_units(-5, 2), "-0.05");
    EXPECT_EQ(format_minor_units(500, 0), "500");
    EXPECT_EQ(currency_exponent("JPY"), 0);
    EXPECT_EQ(currency_exponent("KWD"), 3);
    EXPECT_EQ(currency_exponent("USD"), 2);
}

TEST(Money, JsonNumbersAreExact) {
    EXPECT_EQ(minor_units_from_json(nlohmann::json(14.0), 2), 1400);
    EXPECT_EQ(minor_units_from_json(nlohmann::json(12.6), 2), 1260);
    EXPECT_EQ(minor_units_from_json(nlohmann::json("0.10"), 2), 10);
    EXPECT_EQ(minor_units_from_json(nlohmann::json(7), 2), 700);
    EXPECT_THROW(minor_units_from_json(nlohmann::json(0.123), 2), Error);
    EXPECT_EQ(minor_units_to_json(1260, 2), nlohmann::json(12.6));
}

TEST(Money, PayoutFourteenAtTenPercent) {
    const FeeRate ten = FeeRate::from_json(10);
    EXPECT_EQ(payout_after_fee(1400, ten), 1260);
    EXPECT_EQ(format_minor_units(payout_after_fee(1400, ten), 2), "12.60");
}

TEST(Money, FeeRateBounds) {
    EXPECT_THROW(FeeRate::from_json(100.5), Error);
    EXPECT_THROW(FeeRate::from_json(-1), Error);
    EXPECT_EQ(FeeRate::from_json("12.5").hundredths_percent, 1250);
    EXPECT_EQ(payout_after_fee(1000, FeeRate::from_json(100)), 0);
    EXPECT_EQ(payout_after_fee(1000, FeeRate::from_json(0)), 1000);
}

TEST(Money, RandomPairsMatchRationalOracle) {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::int64_t> amount(0, 100'000'000);
    std::uniform_int_distribution<std::int64_t> fee(0, 10'000);
    for (int i = 0; i < 2000; ++i) {
        const std::int64_t a = amount(rng);
        const std::int64_t f = fee(rng);
        const boost::rational<std::int64_t> share(a * f, 10'000);
        const auto shifted = share + boost::rational<std::int64_t>(1, 2);
        const std::int64_t half_up = shifted.numerator() / shifted.denominator();  // floor, non-negative
        ASSERT_EQ(payout_after_fee(a, FeeRate{f}), a - half_up) << a << " @ " << f;
    }
}
