// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "stg/exppoly.hpp"
#include "stg/model.hpp"
#include "stg/region.hpp"

#include <optional>

namespace stg {

// lcm of the denominators of all exponential rates (1 if there are none).
long rate_denominator_lcm(const Stg& g);

struct PathStep {
    size_t edge = npos;
    std::optional<Rational> delay;  // required for player steps
    std::optional<size_t> piece;    // restrict the firing region (used for region-graph paths)
};

// Entry clock value: a known constant, or a symbolic v ranging over an open
// or unbounded region.
struct Entry {
    bool known = true;
    Rational value = 0;
    size_t region = 0;
    static Entry at(const Rational& v, const RegionLayout& L) { return {true, v, L.of(v)}; }
    static Entry symbolic(size_t region) { return {false, 0, region}; }
};

// Probability of following `steps` from location `loc`, as a function of the
// entry value (a constant TransientExpr when the entry is known).
// Integrates innermost-out, splitting at the region boundaries where the set
// of enabled edges can change.
TransientExpr path_probability(const Stg& g, const RegionLayout& L, long q, size_t loc, const Entry& entry,
                               const std::vector<PathStep>& steps);

// 1-clock models only. Exponential locations need I(s) = R+; uniform
// locations need a known entry value (the start value or a reset).
ExpPoly exact_path_probability(const Stg& g, size_t loc, const Rational& x0, const std::vector<PathStep>& steps);

// From the initial state, with player delays given per step (ignored for stochastic steps).
ExpPoly exact_path_probability(const Stg& g, const std::vector<std::string>& edge_ids,
                               const std::map<size_t, Rational>& player_delays = {});

}  // namespace stg
