// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "stg/exppoly.hpp"
#include "stg/mdp.hpp"

namespace stg {

// ---- Q(y) ---------------------------------------------------------------

// numerator / denominator in Q[y], gcd-reduced, denominator monic, no negative powers.
class RationalFunctionValue {
public:
    RationalFunctionValue() : num_(1), den_(1, 1) {}
    explicit RationalFunctionValue(const ExpPoly& p);
    RationalFunctionValue(const ExpPoly& num, const ExpPoly& den);

    const ExpPoly& num() const { return num_; }
    const ExpPoly& den() const { return den_; }
    long q() const { return den_.q(); }
    bool is_zero() const { return num_.is_zero(); }

    RationalFunctionValue operator+(const RationalFunctionValue& o) const;
    RationalFunctionValue operator-(const RationalFunctionValue& o) const;
    RationalFunctionValue operator*(const RationalFunctionValue& o) const;
    RationalFunctionValue operator/(const RationalFunctionValue& o) const;
    bool operator==(const RationalFunctionValue& o) const { return num_ == o.num_ && den_ == o.den_; }
    bool operator!=(const RationalFunctionValue& o) const { return !(*this == o); }

    RInterval enclose(int terms = 32) const;
    long double approx() const;
    std::string str() const;  // "(1 - y)/(1 + y)" or "1 - y"

private:
    void normalize();
    ExpPoly num_, den_;
};

// Polynomial helpers over Q[y] (non-negative exponents).
std::pair<ExpPoly, ExpPoly> poly_divmod(const ExpPoly& a, const ExpPoly& b);
ExpPoly poly_gcd(ExpPoly a, ExpPoly b);  // monic

// Certified sign of p at y = exp(-1/q): refines the Taylor enclosure (32 terms,
// doubling) until 0 is excluded. Throws DomainError past 4096 terms.
int certified_sign(const ExpPoly& p, int* terms_used = nullptr);
int compare(const RationalFunctionValue& a, const RationalFunctionValue& b);

// ---- games --------------------------------------------------------------

enum class SolveMode { Max, MaxMin };

// Index into MdpState::moves per state; npos for chance and target states.
using PureProfile = std::vector<size_t>;

std::vector<RationalFunctionValue> evaluate_profile(const Mdp& m, const PureProfile& profile);

struct SolveResult {
    RationalFunctionValue value;  // at the initial state
    std::vector<RationalFunctionValue> values;
    PureProfile profile;
    size_t iterations = 0;
};

SolveResult solve_optimal(const Mdp& m, SolveMode mode);

// Number of pure memoryless profiles (saturates at SIZE_MAX).
size_t profile_count(const Mdp& m);

// Max (or max-min) over all pure memoryless profiles; value at the initial state.
SolveResult solve_exhaustive(const Mdp& m, SolveMode mode);

// Float preview by value iteration at y evaluated in long double.
std::vector<long double> value_iteration_preview(const Mdp& m, SolveMode mode, int iterations = 100000,
                                                 long double tolerance = 1e-15L);

// ---- thresholds ---------------------------------------------------------

struct ThresholdQuery {
    Rel rel = Rel::Ge;
    Rational p = 0;
};

ThresholdQuery parse_threshold(const std::string& text);  // ">= 1/2"

struct ThresholdVerdict {
    bool holds = false;
    int comparison = 0;    // sign of value - p
    bool identical = false;  // value - p is identically zero
    RInterval enclosure;     // of the value
    int terms = 0;           // Taylor terms needed to certify the sign
    nlohmann::json to_json(int digits) const;
};

ThresholdVerdict decide_threshold(const RationalFunctionValue& value, const ThresholdQuery& query);

}  // namespace stg
