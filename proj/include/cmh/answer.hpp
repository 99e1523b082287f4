// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cctype>
#include <optional>
#include <string>
#include <string_view>

#include <boost/multiprecision/cpp_int.hpp>

namespace cmh {

using Rational = boost::multiprecision::cpp_rational;

// A normalized answer. `canonical` is what gets stored and compared as text;
// `numeric` is the exact value when the text is a plain number or fraction.
struct AnswerValue {
    std::string raw;
    std::string canonical;
    std::optional<Rational> numeric;

    friend bool operator==(const AnswerValue&, const AnswerValue&) = default;
};

namespace detail {

inline bool is_space(char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

inline bool is_digit(char c) {
    return c >= '0' && c <= '9';
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

inline std::string collapse_spaces(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending = false;
    for (char c : s) {
        if (is_space(c)) {
            pending = true;
            continue;
        }
        if (pending && !out.empty()) out.push_back(' ');
        pending = false;
        out.push_back(c);
    }
    return out;
}

// One pass of the cosmetic clean-up; applied until it reaches a fixpoint.
inline std::string strip_once(std::string_view s) {
    s = trim(s);
    if (s.size() >= 2) {
        char f = s.front();
        if ((f == '"' || f == '\'' || f == '`') && s.back() == f) {
            s = trim(s.substr(1, s.size() - 2));
        }
    }
    while (!s.empty() && s.back() == '.') s.remove_suffix(1);
    return collapse_spaces(trim(s));
}

inline Rational pow10(long exp) {
    boost::multiprecision::cpp_int p = 1;
    for (long i = 0; i < exp; ++i) p *= 10;
    return Rational(p);
}

// Exponents beyond this are treated as non-numeric so a hostile answer
// like "1e999999999" cannot make the parser allocate unboundedly.
inline constexpr long kMaxExponent = 400;

// [+-]? (digits [. digits?] | . digits) ([eE] [+-]? digits)?
// cpp_int reads a leading 0 as an octal prefix.
inline boost::multiprecision::cpp_int decimal_int(std::string_view digits) {
    const auto nz = digits.find_first_not_of('0');
    return boost::multiprecision::cpp_int(nz == std::string_view::npos ? std::string("0") : std::string(digits.substr(nz)));
}

inline std::optional<Rational> parse_decimal(std::string_view s) {
    std::size_t i = 0;
    bool negative = false;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) {
        negative = s[i] == '-';
        ++i;
    }
    std::string digits;
    std::size_t int_digits = 0;
    std::size_t frac_digits = 0;
    while (i < s.size() && is_digit(s[i])) {
        digits.push_back(s[i++]);
        ++int_digits;
    }
    if (i < s.size() && s[i] == '.') {
        ++i;
        while (i < s.size() && is_digit(s[i])) {
            digits.push_back(s[i++]);
            ++frac_digits;
        }
    }
    if (int_digits + frac_digits == 0) return std::nullopt;
    long exponent = 0;
    if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
        ++i;
        bool exp_negative = false;
        if (i < s.size() && (s[i] == '+' || s[i] == '-')) {
            exp_negative = s[i] == '-';
            ++i;
        }
        std::size_t start = i;
        while (i < s.size() && is_digit(s[i])) {
            exponent = exponent * 10 + (s[i] - '0');
            if (exponent > kMaxExponent) return std::nullopt;
            ++i;
        }
        if (i == start) return std::nullopt;
        if (exp_negative) exponent = -exponent;
    }
    if (i != s.size()) return std::nullopt;

    Rational value(decimal_int(digits));
    long scale = exponent - static_cast<long>(frac_digits);
    if (scale > 0) value *= pow10(scale);
    if (scale < 0) value /= pow10(-scale);
    return negative ? Rational(-value) : value;
}

inline std::optional<boost::multiprecision::cpp_int> parse_integer(std::string_view s) {
    s = trim(s);
    std::size_t i = 0;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
    if (i == s.size()) return std::nullopt;
    for (std::size_t j = i; j < s.size(); ++j) {
        if (!is_digit(s[j])) return std::nullopt;
    }
    auto v = decimal_int(s.substr(i));
    return s[0] == '-' ? boost::multiprecision::cpp_int(-v) : v;
}

inline std::optional<Rational> parse_numeric(std::string_view s) {
    if (auto slash = s.find('/'); slash != std::string_view::npos) {
        auto num = parse_integer(s.substr(0, slash));
        auto den = parse_integer(s.substr(slash + 1));
        if (!num || !den || *den == 0) return std::nullopt;
        return Rational(*num, *den);
    }
    return parse_decimal(s);
}

} // namespace detail

inline AnswerValue normalize_answer(std::string_view raw) {
    std::string current(raw);
    for (;;) {
        std::string next = detail::strip_once(current);
        if (next == current) break;
        current = std::move(next);
    }
    AnswerValue v;
    v.raw = std::string(raw);
    v.numeric = detail::parse_numeric(current);
    v.canonical = std::move(current);
    return v;
}

// Numeric-first comparison with relative tolerance 1e-6 anchored on `b`
// (the reference answer), falling back to the canonical text. With the
// anchor on `b` the relation is not symmetric exactly at the tolerance edge.
inline bool answers_equivalent(const AnswerValue& a, const AnswerValue& b) {
    if (a.numeric && b.numeric) {
        Rational diff = abs(*a.numeric - *b.numeric);
        Rational scale = abs(*b.numeric);
        if (scale < 1) scale = 1;
        if (diff * 1000000 <= scale) return true;
    }
    return a.canonical == b.canonical;
}

} // namespace cmh
