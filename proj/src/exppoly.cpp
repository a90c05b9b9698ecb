// SPDX-License-Identifier: Apache-2.0
#include "stg/exppoly.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace stg {

// ---- intervals ----------------------------------------------------------

RInterval operator+(const RInterval& a, const RInterval& b) { return {a.lo + b.lo, a.hi + b.hi}; }

RInterval operator*(const Rational& c, const RInterval& a) {
    if (c >= 0) return {c * a.lo, c * a.hi};
    return {c * a.hi, c * a.lo};
}

RInterval exp_neg_inv_enclosure(long q, int terms) {
    if (q <= 0) throw DomainError("q must be positive");
    if (terms < 2) terms = 2;
    Rational x(1, q);
    Rational term = 1, sum = 1, prev = 1;
    for (int i = 1; i <= terms; ++i) {
        term *= -x / i;
        prev = sum;
        sum += term;
    }
    // 0 < x <= 1: the terms alternate and shrink, so consecutive partial sums bracket the limit.
    RInterval iv = prev < sum ? RInterval{prev, sum} : RInterval{sum, prev};
    return round_outward(iv, 4 * terms + 64);
}

RInterval round_outward(const RInterval& iv, int bits) {
    BigInt scale = 1;
    scale <<= bits;
    Rational s(scale);
    Rational lo = floor_of(iv.lo * s) / s;
    Rational hi = -floor_of(-iv.hi * s) / s;
    return {lo, hi};
}

namespace {

BigInt pow10(int d) {
    BigInt p = 1;
    for (int i = 0; i < d; ++i) p *= 10;
    return p;
}

std::string fixed_point(const BigInt& scaled, int digits) {
    bool neg = scaled < 0;
    std::string s = (neg ? BigInt(-scaled) : scaled).str();
    if (digits > 0) {
        if (static_cast<int>(s.size()) <= digits) s = std::string(digits + 1 - s.size(), '0') + s;
        s.insert(s.size() - digits, ".");
    }
    return (neg ? "-" : "") + s;
}

}  // namespace

std::string decimal_down(const Rational& r, int digits) {
    Rational f = floor_of(r * Rational(pow10(digits)));
    return fixed_point(numerator_of(f), digits);
}

std::string decimal_up(const Rational& r, int digits) {
    Rational f = -floor_of(-r * Rational(pow10(digits)));
    return fixed_point(numerator_of(f), digits);
}

std::string format_enclosure(const RInterval& iv, int digits) {
    return "[" + decimal_down(iv.lo, digits) + ", " + decimal_up(iv.hi, digits) + "]";
}

long y_exponent_of(const Rational& x, long q) {
    Rational m = x * q;
    if (!is_integer(m))
        throw DomainError("exp(-" + to_string(x) + ") is not an integral power of exp(-1/" + std::to_string(q) + ")");
    return to_long_exact(m, "y exponent");
}

// ---- ExpPoly ------------------------------------------------------------

ExpPoly ExpPoly::monomial(long q, long exponent, const Rational& c) {
    ExpPoly p(q);
    if (c != 0) p.terms_[exponent] = c;
    return p;
}

Rational ExpPoly::constant_term() const { return coeff(0); }

Rational ExpPoly::coeff(long e) const {
    auto it = terms_.find(e);
    return it == terms_.end() ? Rational(0) : it->second;
}

long ExpPoly::min_exponent() const { return terms_.empty() ? 0 : terms_.begin()->first; }
long ExpPoly::max_exponent() const { return terms_.empty() ? 0 : terms_.rbegin()->first; }

void ExpPoly::adopt_q(const ExpPoly& o) {
    if (q_ == o.q_) return;
    if (o.is_constant()) return;
    if (is_constant()) {
        q_ = o.q_;
        return;
    }
    throw DomainError("mixing ExpPoly values with q=" + std::to_string(q_) + " and q=" + std::to_string(o.q_));
}

ExpPoly& ExpPoly::operator+=(const ExpPoly& o) {
    adopt_q(o);
    for (const auto& [e, c] : o.terms_) {
        Rational& t = terms_[e];
        t += c;
        if (t == 0) terms_.erase(e);
    }
    return *this;
}

ExpPoly& ExpPoly::operator-=(const ExpPoly& o) {
    adopt_q(o);
    for (const auto& [e, c] : o.terms_) {
        Rational& t = terms_[e];
        t -= c;
        if (t == 0) terms_.erase(e);
    }
    return *this;
}

ExpPoly& ExpPoly::operator*=(const ExpPoly& o) {
    adopt_q(o);
    std::map<long, Rational> r;
    for (const auto& [e1, c1] : terms_)
        for (const auto& [e2, c2] : o.terms_) r[e1 + e2] += c1 * c2;
    terms_.clear();
    for (auto& [e, c] : r)
        if (c != 0) terms_.emplace(e, c);
    return *this;
}

ExpPoly& ExpPoly::operator*=(const Rational& c) {
    if (c == 0) {
        terms_.clear();
        return *this;
    }
    for (auto& [e, t] : terms_) t *= c;
    return *this;
}

bool ExpPoly::operator==(const ExpPoly& o) const {
    if (terms_ != o.terms_) return false;
    return q_ == o.q_ || is_constant();
}

ExpPoly ExpPoly::shifted(long k) const {
    ExpPoly r(q_);
    for (const auto& [e, c] : terms_) r.terms_[e + k] = c;
    return r;
}

RInterval ExpPoly::enclose_at(const RInterval& y) const {
    if (y.lo <= 0) throw DomainError("y enclosure must be positive");
    RInterval acc{0, 0};
    for (const auto& [e, c] : terms_) {
        RInterval p;
        if (e >= 0) {
            Rational lo = 1, hi = 1;
            for (long i = 0; i < e; ++i) {
                lo *= y.lo;
                hi *= y.hi;
            }
            p = {lo, hi};
        } else {
            Rational lo = 1, hi = 1;
            for (long i = 0; i < -e; ++i) {
                lo /= y.hi;
                hi /= y.lo;
            }
            p = {lo, hi};
        }
        acc = acc + c * p;
    }
    return acc;
}

RInterval ExpPoly::enclose(int terms) const { return enclose_at(exp_neg_inv_enclosure(q_, terms)); }

long double ExpPoly::approx() const {
    long double y = std::exp(-1.0L / static_cast<long double>(q_));
    long double s = 0;
    for (const auto& [e, c] : terms_) s += c.convert_to<long double>() * std::pow(y, static_cast<long double>(e));
    return s;
}

std::string ExpPoly::str() const {
    if (terms_.empty()) return "0";
    std::string s;
    bool first = true;
    for (const auto& [e, c] : terms_) {
        Rational a = c < 0 ? Rational(-c) : c;
        if (first) {
            if (c < 0) s += "-";
        } else {
            s += c < 0 ? " - " : " + ";
        }
        first = false;
        if (e == 0) {
            s += to_string(a);
            continue;
        }
        if (a != 1) s += to_string(a) + "*";
        s += "y";
        if (e != 1) s += "^" + std::to_string(e);
    }
    return s;
}

std::string ExpPoly::str_with_y() const { return str() + "; y=exp(-1/" + std::to_string(q_) + ")"; }

ExpPoly parse_exppoly(const std::string& text, long q) {
    ExpPoly out(q);
    std::string s;
    for (char c : text)
        if (!std::isspace(static_cast<unsigned char>(c))) s += c;
    auto semi = s.find(';');
    if (semi != std::string::npos) s = s.substr(0, semi);
    if (s.empty()) throw UsageError("empty polynomial");
    size_t i = 0;
    auto fail = [&] { return UsageError("cannot parse polynomial '" + text + "'"); };
    while (i < s.size()) {
        int sign = 1;
        if (s[i] == '+' || s[i] == '-') {
            sign = s[i] == '-' ? -1 : 1;
            ++i;
        } else if (i != 0) {
            throw fail();
        }
        Rational coeff = 1;
        size_t st = i;
        while (i < s.size() && (std::isdigit(static_cast<unsigned char>(s[i])) || s[i] == '/' || s[i] == '.')) ++i;
        if (i > st) {
            coeff = parse_rational(s.substr(st, i - st));
            if (i < s.size() && s[i] == '*') ++i;
        }
        long exp = 0;
        if (i < s.size() && s[i] == 'y') {
            ++i;
            exp = 1;
            if (i < s.size() && s[i] == '^') {
                ++i;
                size_t es = i;
                if (i < s.size() && s[i] == '-') ++i;
                while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
                if (i == es) throw fail();
                exp = std::stol(s.substr(es, i - es));
            }
        } else if (i == st) {
            throw fail();
        }
        out += ExpPoly::monomial(q, exp, coeff * sign);
    }
    return out;
}

// ---- TransientExpr ------------------------------------------------------

TransientExpr TransientExpr::constant(const ExpPoly& c) {
    TransientExpr t(c.q());
    t.add_term(c, 0, 0);
    return t;
}

void TransientExpr::add_term(const ExpPoly& coeff, long k, const Rational& beta) {
    if (coeff.is_zero()) return;
    for (auto& t : terms_) {
        if (t.k == k && t.beta == beta) {
            t.coeff += coeff;
            canonicalize();
            return;
        }
    }
    terms_.push_back({coeff, k, beta});
}

void TransientExpr::canonicalize() {
    terms_.erase(std::remove_if(terms_.begin(), terms_.end(), [](const Term& t) { return t.coeff.is_zero(); }),
                 terms_.end());
    std::sort(terms_.begin(), terms_.end(), [](const Term& a, const Term& b) {
        if (a.beta != b.beta) return a.beta < b.beta;
        return a.k < b.k;
    });
}

TransientExpr& TransientExpr::operator+=(const TransientExpr& o) {
    for (const auto& t : o.terms_) add_term(t.coeff, t.k, t.beta);
    canonicalize();
    return *this;
}

TransientExpr& TransientExpr::operator*=(const ExpPoly& c) {
    for (auto& t : terms_) t.coeff *= c;
    canonicalize();
    return *this;
}

TransientExpr TransientExpr::times_exp(const Rational& alpha) const {
    TransientExpr r(q_);
    for (const auto& t : terms_) r.add_term(t.coeff, t.k, t.beta + alpha);
    r.canonicalize();
    return r;
}

bool TransientExpr::is_constant() const {
    for (const auto& t : terms_)
        if (t.k != 0 || t.beta != 0) return false;
    return true;
}

ExpPoly TransientExpr::constant_value() const {
    ExpPoly r(q_);
    for (const auto& t : terms_)
        if (t.k == 0 && t.beta == 0) r += t.coeff;
    return r;
}

ExpPoly TransientExpr::evaluate(const Rational& v0) const {
    ExpPoly r(q_);
    for (const auto& t : terms_) {
        Rational p = 1;
        for (long i = 0; i < t.k; ++i) p *= v0;
        if (p == 0) continue;
        long m = y_exponent_of(t.beta * v0, q_);
        r += t.coeff.shifted(m) * p;
    }
    return r;
}

TransientExpr TransientExpr::integrate_times_exp(const Rational& alpha, const Bound& lower,
                                                 const Bound& upper) const {
    TransientExpr out(q_);
    // Antiderivative of coeff * u^k * exp(-g u), added with the given sign at bound b.
    auto add_antiderivative = [&](const Term& t, const Rational& g, const Bound& b, int sign) {
        if (b.kind == Bound::Kind::Infinity) {
            if (g <= 0) throw DomainError("integral of a non-decaying term up to infinity");
            return;  // vanishes at infinity
        }
        if (g == 0) {
            // u^(k+1) / (k+1)
            ExpPoly c = t.coeff * Rational(sign, t.k + 1);
            if (b.kind == Bound::Kind::Variable) {
                out.add_term(c, t.k + 1, 0);
            } else {
                Rational p = 1;
                for (long i = 0; i <= t.k; ++i) p *= b.value;
                out.add_term(c * p, 0, 0);
            }
            return;
        }
        // -exp(-g u) * sum_j k!/(k-j)! u^(k-j) / g^(j+1)
        Rational fall = 1, gp = g;
        for (long j = 0; j <= t.k; ++j) {
            if (j > 0) {
                fall *= (t.k - j + 1);
                gp *= g;
            }
            ExpPoly c = t.coeff * (Rational(-sign) * fall / gp);
            long deg = t.k - j;
            if (b.kind == Bound::Kind::Variable) {
                out.add_term(c, deg, g);
            } else {
                Rational p = 1;
                for (long i = 0; i < deg; ++i) p *= b.value;
                if (p == 0) continue;
                long m = y_exponent_of(g * b.value, q_);
                out.add_term(c.shifted(m) * p, 0, 0);
            }
        }
    };
    for (const auto& t : terms_) {
        Rational g = t.beta + alpha;
        add_antiderivative(t, g, upper, +1);
        add_antiderivative(t, g, lower, -1);
    }
    out.canonicalize();
    return out;
}

std::string TransientExpr::str() const {
    if (terms_.empty()) return "0";
    std::string s;
    for (size_t i = 0; i < terms_.size(); ++i) {
        const Term& t = terms_[i];
        if (i) s += " + ";
        s += "(" + t.coeff.str() + ")";
        if (t.k > 0) s += "*v" + (t.k > 1 ? "^" + std::to_string(t.k) : std::string());
        if (t.beta != 0) s += "*exp(-" + to_string(t.beta) + "*v)";
    }
    return s;
}

}  // namespace stg
