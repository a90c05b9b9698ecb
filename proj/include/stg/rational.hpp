// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <boost/multiprecision/gmp.hpp>

#include <stdexcept>
#include <string>

namespace stg {

using Rational = boost::multiprecision::mpq_rational;
using BigInt = boost::multiprecision::mpz_int;

// Accepts "3", "-3/4", "0.125", "1e-3".
Rational parse_rational(const std::string& text);

std::string to_string(const Rational& r);

double to_double(const Rational& r);

// Exact conversion of a finite double.
Rational from_double(double d);

BigInt lcm(const BigInt& a, const BigInt& b);

inline BigInt numerator_of(const Rational& r) { return boost::multiprecision::numerator(r); }
inline BigInt denominator_of(const Rational& r) { return boost::multiprecision::denominator(r); }

inline bool is_integer(const Rational& r) { return denominator_of(r) == 1; }

// Throws if r is not an integer that fits into long.
long to_long_exact(const Rational& r, const char* what);

Rational floor_of(const Rational& r);

class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SemanticsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IllegalMove : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UnsupportedModel : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DomainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operation applied outside its precondition (e.g. removing a non-deletable node).
class IllegalOperation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InternalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace stg
