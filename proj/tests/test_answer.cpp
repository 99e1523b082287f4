// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdint>
#include <random>
#include <string>

#include "cmh/answer.hpp"

using cmh::answers_equivalent;
using cmh::normalize_answer;
using cmh::Rational;

TEST(NormalizeAnswer, TrimsWhitespace) {
    auto v = normalize_answer(" 5 ");
    EXPECT_EQ(v.canonical, "5");
    ASSERT_TRUE(v.numeric);
    EXPECT_EQ(*v.numeric, Rational(5));
    EXPECT_EQ(v.raw, " 5 ");
}

TEST(NormalizeAnswer, ParsesFraction) {
    auto v = normalize_answer("1/2");
    ASSERT_TRUE(v.numeric);
    EXPECT_EQ(*v.numeric, Rational(1, 2));
    EXPECT_EQ(*normalize_answer("-6 / 4").numeric, Rational(-3, 2));
}

TEST(NormalizeAnswer, NonNumericPassthrough) {
    auto v = normalize_answer("x+1");
    EXPECT_EQ(v.canonical, "x+1");
    EXPECT_FALSE(v.numeric);
}

TEST(NormalizeAnswer, StripsQuotesPeriodsAndCollapsesSpaces) {
    EXPECT_EQ(normalize_answer("\"  hello   world. \"").canonical, "hello world");
    EXPECT_EQ(normalize_answer("'42'.").canonical, "42");
    EXPECT_EQ(normalize_answer("7...").canonical, "7");
}

TEST(NormalizeAnswer, Decimals) {
    EXPECT_EQ(*normalize_answer("0.25").numeric, Rational(1, 4));
    EXPECT_EQ(*normalize_answer("-1.5e2").numeric, Rational(-150));
    EXPECT_EQ(*normalize_answer(".5").numeric, Rational(1, 2));
    EXPECT_EQ(*normalize_answer("2e-3").numeric, Rational(1, 500));
    EXPECT_EQ(*normalize_answer("010").numeric, Rational(10));
    EXPECT_EQ(*normalize_answer("-010/04").numeric, Rational(-5, 2));
    EXPECT_EQ(*normalize_answer("00.0").numeric, Rational(0));
    EXPECT_FALSE(normalize_answer("1/0").numeric);
    EXPECT_FALSE(normalize_answer("1e999999").numeric);
    EXPECT_FALSE(normalize_answer("12abc").numeric);
    EXPECT_FALSE(normalize_answer("").numeric);
}

TEST(NormalizeAnswer, Idempotent) {
    for (const char* raw : {" 5 ", "\"'x'\"", "a  b.", "  '1/2'. ", "\" \"", "...", "``3``"}) {
        auto once = normalize_answer(raw);
        auto twice = normalize_answer(once.canonical);
        EXPECT_EQ(once.canonical, twice.canonical) << raw;
        EXPECT_EQ(once.numeric, twice.numeric) << raw;
    }
}

TEST(AnswersEquivalent, Examples) {
    EXPECT_TRUE(answers_equivalent(normalize_answer("5"), normalize_answer("5")));
    EXPECT_TRUE(answers_equivalent(normalize_answer("0.5"), normalize_answer("1/2")));
    EXPECT_FALSE(answers_equivalent(normalize_answer("5"), normalize_answer("-5")));
    EXPECT_TRUE(answers_equivalent(normalize_answer("5.0000001"), normalize_answer("5")));
    EXPECT_FALSE(answers_equivalent(normalize_answer("5.00001"), normalize_answer("5")));
    EXPECT_TRUE(answers_equivalent(normalize_answer("abc"), normalize_answer(" abc ")));
    EXPECT_FALSE(answers_equivalent(normalize_answer("abc"), normalize_answer("abd")));
}

TEST(AnswersEquivalent, ToleranceAnchoredOnReference) {
    // |a-b| = 1e-6 * |b| exactly: inside for anchor b, outside for anchor a.
    auto a = normalize_answer("1000001");
    auto b = normalize_answer("1000000");
    EXPECT_TRUE(answers_equivalent(a, b));
    auto c = normalize_answer("1000002");
    EXPECT_FALSE(answers_equivalent(c, b));
}

// Independent oracle: a = p1/q1, b = p2/q2 with q > 0.
//   |a - b| <= 1e-6 * max(1, |b|)
//   <=> 1e6 * |p1 q2 - p2 q1| <= max(q1 q2, |p2| q1)
static bool oracle_equivalent(std::int64_t p1, std::int64_t q1, std::int64_t p2, std::int64_t q2) {
    using I = __int128;
    I diff = I(p1) * q2 - I(p2) * q1;
    if (diff < 0) diff = -diff;
    I lhs = diff * 1000000;
    I a = I(q1) * q2;
    I b = (p2 < 0 ? -I(p2) : I(p2)) * q1;
    return lhs <= (a > b ? a : b);
}

static std::string decimal_text(std::int64_t p, int places) {
    // p / 10^places rendered as a decimal literal.
    bool neg = p < 0;
    std::string digits = std::to_string(neg ? -p : p);
    while (static_cast<int>(digits.size()) <= places) digits.insert(digits.begin(), '0');
    std::string s = digits.substr(0, digits.size() - places);
    if (places > 0) s += "." + digits.substr(digits.size() - places);
    return (neg ? "-" : "") + s;
}

TEST(AnswersEquivalent, MatchesBruteForceRationalOracle) {
    std::mt19937_64 rng(20240611);
    std::uniform_int_distribution<int> form(0, 2);
    std::uniform_int_distribution<std::int64_t> num(-2000000, 2000000);
    std::uniform_int_distribution<std::int64_t> den(1, 999);
    std::uniform_int_distribution<int> places(0, 7);
    std::uniform_int_distribution<std::int64_t> jitter(-3, 3);
    std::int64_t pow10[8] = {1, 10, 100, 1000, 10000, 100000, 1000000, 10000000};

    auto make = [&](std::int64_t& p, std::int64_t& q) {
        switch (form(rng)) {
        case 0:
            p = num(rng);
            q = 1;
            return std::to_string(p);
        case 1:
            p = num(rng);
            q = den(rng);
            return std::to_string(p) + "/" + std::to_string(q);
        default: {
            int n = places(rng);
            p = num(rng);
            q = pow10[n];
            return decimal_text(p, n);
        }
        }
    };
    int near_hits = 0;
    for (int i = 0; i < 20000; ++i) {
        std::int64_t p1, q1, p2, q2;
        std::string ta = make(p1, q1);
        std::string tb;
        if (i % 2 == 0) {
            // Second value close to the first so the tolerance edge is exercised.
            p2 = p1 * 1000000 + jitter(rng) * (p1 == 0 ? 1 : 1 + (p1 < 0 ? -p1 : p1));
            q2 = q1 * 1000000;
            tb = std::to_string(p2) + "/" + std::to_string(q2);
        } else {
            tb = make(p2, q2);
        }
        const bool expected = oracle_equivalent(p1, q1, p2, q2);
        near_hits += expected;
        ASSERT_EQ(answers_equivalent(normalize_answer(ta), normalize_answer(tb)), expected) << ta << " vs " << tb;
    }
    EXPECT_GT(near_hits, 100);
}

TEST(AnswersEquivalent, ReflexiveAndCanonicalEqualityImpliesTrue) {
    for (const char* raw : {"5", "x+1", "1/3", "  hi ", "", "0.1", "-0"}) {
        auto v = normalize_answer(raw);
        EXPECT_TRUE(answers_equivalent(v, v)) << raw;
        EXPECT_TRUE(answers_equivalent(v, normalize_answer(v.canonical))) << raw;
    }
}
