// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "stg/rational.hpp"

#include <map>
#include <string>
#include <vector>

namespace stg {

// Closed rational interval [lo, hi].
struct RInterval {
    Rational lo, hi;
    bool contains(const Rational& x) const { return lo <= x && x <= hi; }
    bool excludes_zero() const { return lo > 0 || hi < 0; }
    int sign() const { return lo > 0 ? 1 : (hi < 0 ? -1 : 0); }  // 0 = undecided
    Rational width() const { return hi - lo; }
};

RInterval operator+(const RInterval& a, const RInterval& b);
RInterval operator*(const Rational& c, const RInterval& a);

// Certified enclosure of exp(-1/q) from an n-term alternating Taylor sum.
RInterval exp_neg_inv_enclosure(long q, int terms);

// Outward rounding to multiples of 2^-bits; keeps numerator sizes bounded.
RInterval round_outward(const RInterval& iv, int bits);

// "[0.367879, 0.367880]" with lo rounded down and hi rounded up.
std::string format_enclosure(const RInterval& iv, int digits);
std::string decimal_down(const Rational& r, int digits);
std::string decimal_up(const Rational& r, int digits);

// Element of Q[y, 1/y] with y = exp(-1/q). Probabilities produced by the
// abstraction only use non-negative exponents; negative ones can appear in
// intermediate integration results.
class ExpPoly {
public:
    ExpPoly() = default;
    explicit ExpPoly(long q) : q_(q) {}
    ExpPoly(long q, const Rational& c) : q_(q) {
        if (c != 0) terms_[0] = c;
    }
    static ExpPoly monomial(long q, long exponent, const Rational& c = 1);
    static ExpPoly y(long q) { return monomial(q, 1); }

    long q() const { return q_; }
    const std::map<long, Rational>& terms() const { return terms_; }

    bool is_zero() const { return terms_.empty(); }
    bool is_constant() const { return terms_.empty() || (terms_.size() == 1 && terms_.begin()->first == 0); }
    Rational constant_term() const;
    Rational coeff(long exponent) const;
    long min_exponent() const;  // 0 when zero
    long max_exponent() const;  // 0 when zero

    ExpPoly& operator+=(const ExpPoly& o);
    ExpPoly& operator-=(const ExpPoly& o);
    ExpPoly& operator*=(const ExpPoly& o);
    ExpPoly& operator*=(const Rational& c);
    friend ExpPoly operator+(ExpPoly a, const ExpPoly& b) { return a += b; }
    friend ExpPoly operator-(ExpPoly a, const ExpPoly& b) { return a -= b; }
    friend ExpPoly operator*(ExpPoly a, const ExpPoly& b) { return a *= b; }
    friend ExpPoly operator*(ExpPoly a, const Rational& c) { return a *= c; }
    friend ExpPoly operator*(const Rational& c, ExpPoly a) { return a *= c; }
    ExpPoly operator-() const { return *this * Rational(-1); }
    bool operator==(const ExpPoly& o) const;
    bool operator!=(const ExpPoly& o) const { return !(*this == o); }

    // Multiply by y^k.
    ExpPoly shifted(long k) const;

    RInterval enclose(int terms = 32) const;
    // Evaluate with y given as an enclosure.
    RInterval enclose_at(const RInterval& y) const;
    long double approx() const;

    // "1 - 2*y + 1/2*y^2"
    std::string str() const;
    // "1 - 2*y; y=exp(-1/1)"
    std::string str_with_y() const;

private:
    void adopt_q(const ExpPoly& o);
    long q_ = 1;
    std::map<long, Rational> terms_;
};

// Parse "1 - 2*y + y^2" (the format produced by str()).
ExpPoly parse_exppoly(const std::string& text, long q);

// Sum of coeff * v^k * exp(-beta * v), a function of an entry clock value v.
class TransientExpr {
public:
    struct Term {
        ExpPoly coeff;
        long k = 0;
        Rational beta = 0;
    };

    TransientExpr() = default;
    explicit TransientExpr(long q) : q_(q) {}
    static TransientExpr constant(const ExpPoly& c);

    long q() const { return q_; }
    const std::vector<Term>& terms() const { return terms_; }

    void add_term(const ExpPoly& coeff, long k, const Rational& beta);
    TransientExpr& operator+=(const TransientExpr& o);
    TransientExpr& operator*=(const ExpPoly& c);
    friend TransientExpr operator+(TransientExpr a, const TransientExpr& b) { return a += b; }
    friend TransientExpr operator*(TransientExpr a, const ExpPoly& c) { return a *= c; }

    // Multiply by exp(-alpha * v).
    TransientExpr times_exp(const Rational& alpha) const;

    bool is_constant() const;  // no dependence on v
    ExpPoly constant_value() const;  // only valid if is_constant()

    // Value at a rational point; exp(-beta * v0) must be an integral power of y.
    ExpPoly evaluate(const Rational& v0) const;

    // Bound of an integration range.
    struct Bound {
        enum class Kind { Value, Variable, Infinity } kind = Kind::Value;
        Rational value = 0;
        static Bound at(const Rational& x) { return {Kind::Value, x}; }
        static Bound var() { return {Kind::Variable, 0}; }
        static Bound inf() { return {Kind::Infinity, 0}; }
    };

    // Integral over u in [lower, upper] of exp(-alpha*u) * this(u) du, as a
    // function of v (the Variable bound). Terms whose total decay is <= 0
    // cannot be integrated up to infinity and raise DomainError.
    TransientExpr integrate_times_exp(const Rational& alpha, const Bound& lower, const Bound& upper) const;

    std::string str() const;

private:
    void canonicalize();
    long q_ = 1;
    std::vector<Term> terms_;
};

// y-exponent m with exp(-x) = y^m, i.e. m = x * q; throws DomainError if m is not an integer.
long y_exponent_of(const Rational& x, long q);

}  // namespace stg
