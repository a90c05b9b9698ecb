// SPDX-License-Identifier: Apache-2.0
#include "stg/rational.hpp"

#include <cmath>
#include <cctype>

namespace stg {

namespace {

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

Rational pow10(long e) {
    BigInt p = 1;
    for (long i = 0; i < (e < 0 ? -e : e); ++i) p *= 10;
    return e < 0 ? Rational(BigInt(1), p) : Rational(p);
}

Rational parse_decimal(const std::string& s) {
    size_t i = 0;
    bool neg = false;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) neg = s[i++] == '-';
    BigInt digits = 0;
    long scale = 0;
    bool any = false, dot = false;
    for (; i < s.size(); ++i) {
        char c = s[i];
        if (std::isdigit(static_cast<unsigned char>(c))) {
            digits = digits * 10 + (c - '0');
            if (dot) --scale;
            any = true;
        } else if (c == '.' && !dot) {
            dot = true;
        } else {
            break;
        }
    }
    if (!any) throw UsageError("not a number: '" + s + "'");
    if (i < s.size()) {
        if (s[i] != 'e' && s[i] != 'E') throw UsageError("not a number: '" + s + "'");
        std::string ex = s.substr(i + 1);
        if (ex.empty()) throw UsageError("not a number: '" + s + "'");
        size_t used = 0;
        long e = 0;
        try {
            e = std::stol(ex, &used);
        } catch (const std::exception&) {
            throw UsageError("not a number: '" + s + "'");
        }
        if (used != ex.size() || e > 4000 || e < -4000) throw UsageError("not a number: '" + s + "'");
        scale += e;
    }
    Rational r = Rational(digits) * pow10(scale);
    return neg ? Rational(-r) : r;
}

}  // namespace

Rational parse_rational(const std::string& text) {
    std::string s = trim(text);
    auto slash = s.find('/');
    if (slash == std::string::npos) return parse_decimal(s);
    Rational num = parse_decimal(trim(s.substr(0, slash)));
    Rational den = parse_decimal(trim(s.substr(slash + 1)));
    if (den == 0) throw UsageError("zero denominator in '" + s + "'");
    return num / den;
}

std::string to_string(const Rational& r) {
    if (denominator_of(r) == 1) return numerator_of(r).str();
    return numerator_of(r).str() + "/" + denominator_of(r).str();
}

double to_double(const Rational& r) { return r.convert_to<double>(); }

Rational from_double(double d) {
    if (!std::isfinite(d)) throw DomainError("non-finite value");
    int exp = 0;
    double m = std::frexp(d, &exp);
    // 53 significant bits fit exactly after scaling.
    auto scaled = static_cast<long long>(std::ldexp(m, 53));
    Rational r(scaled);
    exp -= 53;
    BigInt p = 1;
    p <<= (exp < 0 ? -exp : exp);
    return exp < 0 ? Rational(r / Rational(p)) : Rational(r * Rational(p));
}

BigInt lcm(const BigInt& a, const BigInt& b) {
    if (a == 0 || b == 0) return 0;
    return abs(a / boost::multiprecision::gcd(a, b) * b);
}

long to_long_exact(const Rational& r, const char* what) {
    if (!is_integer(r)) throw DomainError(std::string(what) + ": expected an integer, got " + to_string(r));
    BigInt n = numerator_of(r);
    if (n > BigInt(1L << 40) || n < -BigInt(1L << 40)) throw DomainError(std::string(what) + ": integer out of range");
    return n.convert_to<long>();
}

Rational floor_of(const Rational& r) {
    BigInt n = numerator_of(r), d = denominator_of(r);
    BigInt q = n / d;  // truncates toward zero
    if (n < 0 && q * d != n) q -= 1;
    return Rational(q);
}

}  // namespace stg
