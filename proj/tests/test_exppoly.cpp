// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "stg/exppoly.hpp"

#include <boost/multiprecision/cpp_dec_float.hpp>

#include <cmath>
#include <random>

using namespace stg;
using Dec50 = boost::multiprecision::cpp_dec_float_50;

namespace {

Dec50 to_dec(const Rational& r) {
    return Dec50(numerator_of(r).str()) / Dec50(denominator_of(r).str());
}

// Reference value of p at y = exp(-1/q) to 50 digits, independent of the Taylor enclosure.
Dec50 reference_value(const ExpPoly& p) {
    Dec50 y = exp(Dec50(-1) / Dec50(p.q()));
    Dec50 sum = 0;
    for (const auto& [k, c] : p.terms()) sum += to_dec(c) * pow(y, k);
    return sum;
}

// Slack for comparing against the 50-digit reference: the reference itself is
// only accurate to about 1e-48, while long Taylor enclosures are tighter than that.
const Dec50 kReferenceSlack("1e-45");

ExpPoly random_poly(std::mt19937_64& rng, long q, long min_exp = 0) {
    std::uniform_int_distribution<int> exps(static_cast<int>(min_exp), 4), nums(-6, 6), dens(1, 5), count(0, 4);
    ExpPoly p(q);
    int n = count(rng);
    for (int i = 0; i < n; ++i) p += ExpPoly::monomial(q, exps(rng), Rational(nums(rng), dens(rng)));
    return p;
}

}  // namespace

TEST_CASE("enclosure of exp(-1/q) contains the 50-digit value and shrinks with terms") {
    for (long q : {1L, 2L, 3L, 7L}) {
        Dec50 ref = exp(Dec50(-1) / Dec50(q));
        Rational previous_width = 1;
        for (int terms : {8, 16, 32}) {
            RInterval iv = exp_neg_inv_enclosure(q, terms);
            CHECK(to_dec(iv.lo) <= ref + kReferenceSlack);
            CHECK(ref <= to_dec(iv.hi) + kReferenceSlack);
            CHECK(iv.width() < previous_width);
            previous_width = iv.width();
        }
    }
    CHECK(exp_neg_inv_enclosure(1, 32).width() < Rational(1, 1000000000));
}

TEST_CASE("arithmetic is canonical") {
    ExpPoly y = ExpPoly::y(1);
    ExpPoly one(1, 1);
    ExpPoly a = one - y;
    CHECK((a * a) == one - Rational(2) * y + y * y);
    CHECK((a - a).is_zero());
    CHECK((a + y) == one);
    CHECK((a + y).is_constant());
    CHECK(y.shifted(2) == ExpPoly::monomial(1, 3));
    CHECK(y.shifted(-1) == one);
    CHECK(ExpPoly::monomial(1, -2).min_exponent() == -2);
    CHECK(a.coeff(1) == Rational(-1));
    CHECK(a.constant_term() == Rational(1));
    CHECK(a.str() == "1 - y");
    CHECK((Rational(1, 2) * y * y).str() == "1/2*y^2");
    CHECK(ExpPoly(1).str() == "0");
}

TEST_CASE("the ring laws hold on random polynomials") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        ExpPoly a = random_poly(rng, 2, -2), b = random_poly(rng, 2, -2), c = random_poly(rng, 2, -2);
        CHECK(a + b == b + a);
        CHECK(a * b == b * a);
        CHECK((a + b) * c == a * c + b * c);
        CHECK((a * b) * c == a * (b * c));
        CHECK((a - b) + b == a);
    }
}

TEST_CASE("str and parse_exppoly are inverse") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        ExpPoly p = random_poly(rng, 3);
        CAPTURE(p.str());
        CHECK(parse_exppoly(p.str(), 3) == p);
    }
    CHECK(parse_exppoly("1 - 5/2*y", 1) == ExpPoly(1, 1) - Rational(5, 2) * ExpPoly::y(1));
    CHECK_THROWS(parse_exppoly("1 + z", 1));
}

TEST_CASE("enclosures agree with 50-digit references on random polynomials") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 100; ++trial) {
        long q = 1 + trial % 4;
        ExpPoly p = random_poly(rng, q);
        RInterval iv = p.enclose(40);
        Dec50 ref = reference_value(p);
        CAPTURE(p.str());
        CHECK(to_dec(iv.lo) <= ref + kReferenceSlack);
        CHECK(ref <= to_dec(iv.hi) + kReferenceSlack);
        CHECK(iv.width() < Rational(1, 1000000000));
        CHECK(std::fabs(static_cast<double>(p.approx()) - ref.convert_to<double>()) < 1e-12);
    }
}

TEST_CASE("outward rounding keeps the enclosure and formatting rounds outward") {
    RInterval iv = exp_neg_inv_enclosure(1, 40);
    RInterval r = round_outward(iv, 60);
    CHECK(r.lo <= iv.lo);
    CHECK(r.hi >= iv.hi);
    CHECK(format_enclosure(iv, 6) == "[0.367879, 0.367880]");
    CHECK(decimal_down(Rational(-1, 3), 3) == "-0.334");
    CHECK(decimal_up(Rational(-1, 3), 3) == "-0.333");
}

TEST_CASE("y_exponent_of maps exp(-x) to integral powers of y") {
    CHECK(y_exponent_of(Rational(3), 2) == 6);
    CHECK(y_exponent_of(Rational(1, 2), 2) == 1);
    CHECK_THROWS_AS(y_exponent_of(Rational(1, 3), 2), DomainError);
}

TEST_CASE("integration of transient expressions matches closed forms") {
    using B = TransientExpr::Bound;
    auto one = TransientExpr::constant(ExpPoly(1, 1));
    ExpPoly y = ExpPoly::y(1), unit(1, 1);

    // Integral of e^{-u} over [0, inf) is 1; over [0, 1] it is 1 - y.
    CHECK(one.integrate_times_exp(1, B::at(0), B::inf()).constant_value() == unit);
    CHECK(one.integrate_times_exp(1, B::at(0), B::at(1)).constant_value() == unit - y);
    // Uniform density: integral of 1 over [1/2, 2].
    CHECK(one.integrate_times_exp(0, B::at(Rational(1, 2)), B::at(2)).constant_value() == ExpPoly(1, Rational(3, 2)));

    // As a function of v: integral from v to 1 of e^{-u} = e^{-v} - y.
    TransientExpr f = one.integrate_times_exp(1, B::var(), B::at(1));
    CHECK_FALSE(f.is_constant());
    CHECK(f.evaluate(0) == unit - y);
    CHECK(f.evaluate(1).is_zero());

    // Integral of u e^{-u} over [0, 1] = 1 - 2y.
    TransientExpr u;
    u.add_term(unit, 1, 0);
    CHECK(u.integrate_times_exp(1, B::at(0), B::at(1)).constant_value() == unit - Rational(2) * y);

    // Non-decaying integrand up to infinity is rejected.
    CHECK_THROWS_AS(one.integrate_times_exp(0, B::at(0), B::inf()), DomainError);
}

TEST_CASE("integration agrees with numeric quadrature on random integrands") {
    using B = TransientExpr::Bound;
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> small(0, 2);
    for (int trial = 0; trial < 40; ++trial) {
        TransientExpr f(1);
        int n = 1 + small(rng);
        for (int i = 0; i < n; ++i) f.add_term(ExpPoly(1, Rational(1 + small(rng), 1 + small(rng))), small(rng), small(rng));
        Rational alpha = small(rng), lo = small(rng);
        Rational hi = lo + 1 + small(rng);
        ExpPoly exact = f.integrate_times_exp(alpha, B::at(lo), B::at(hi)).constant_value();

        // Composite Simpson on the double version of the integrand.
        auto integrand = [&](double u) {
            double s = 0;
            for (const auto& t : f.terms())
                s += static_cast<double>(t.coeff.approx()) * std::pow(u, static_cast<double>(t.k)) *
                     std::exp(-to_double(t.beta) * u);
            return s * std::exp(-to_double(alpha) * u);
        };
        const int steps = 2000;
        double a = to_double(lo), b = to_double(hi), h = (b - a) / steps, sum = integrand(a) + integrand(b);
        for (int i = 1; i < steps; ++i) sum += integrand(a + i * h) * (i % 2 ? 4 : 2);
        CAPTURE(f.str());
        CHECK(static_cast<double>(exact.approx()) == doctest::Approx(sum * h / 3).epsilon(1e-9));
    }
}
