// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "stg/rational.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

namespace stg {

constexpr size_t npos = std::numeric_limits<size_t>::max();

enum class Rel { Lt, Le, Eq, Ge, Gt };

const char* rel_symbol(Rel r);

// Bounds are rational; the region pipeline additionally requires integers.
struct Atom {
    size_t clock = 0;
    Rel rel = Rel::Le;
    Rational bound = 0;
    double bound_approx = 0;  // cached for the float simulator
    Atom() = default;
    Atom(size_t c, Rel r, Rational b) : clock(c), rel(r), bound(std::move(b)), bound_approx(to_double(bound)) {}
    bool operator==(const Atom& o) const { return clock == o.clock && rel == o.rel && bound == o.bound; }
};

template <class T>
T atom_bound(const Atom& a) {
    if constexpr (std::is_same_v<T, double>) return a.bound_approx;
    else return T(a.bound);
}

// Conjunction of atoms; empty means true.
struct ClockConstraint {
    std::vector<Atom> atoms;
    bool is_true() const { return atoms.empty(); }
    bool operator==(const ClockConstraint&) const = default;
};

enum class Owner { Box, Diamond, Stochastic };

const char* owner_name(Owner o);
Owner parse_owner(const std::string& s);

struct Location {
    std::string name;
    Owner owner = Owner::Stochastic;
    ClockConstraint invariant;
    bool operator==(const Location&) const = default;
};

struct Edge {
    std::string id;
    size_t source = npos;
    ClockConstraint guard;
    std::vector<size_t> resets;  // sorted clock indices
    size_t target = npos;
    long weight = 1;
    // Names as written in the input; kept so validation can report dangling references.
    std::string source_name, target_name;
    bool operator==(const Edge&) const = default;
};

struct DistributionSpec {
    enum class Kind { Uniform, Exponential };
    Kind kind = Kind::Uniform;
    Rational rate = 1;  // only meaningful for Exponential
    bool operator==(const DistributionSpec&) const = default;
};

template <class T>
using Valuation = std::vector<T>;

struct Stg {
    std::vector<std::string> clocks;
    std::vector<Location> locations;
    std::vector<Edge> edges;
    std::map<size_t, DistributionSpec> distributions;
    size_t initial_location = npos;
    Valuation<Rational> initial_valuation;
    std::vector<size_t> targets;  // sorted location indices
    std::vector<std::string> comments;
    // Problems found while resolving names; surfaced by check_wellformed.
    std::vector<std::string> unresolved;

    // Outgoing edge indices per location, rebuilt by finalize().
    std::vector<std::vector<size_t>> out;
    std::vector<char> target_flag;

    void finalize();

    size_t clock_index(const std::string& name) const;     // npos if unknown
    size_t location_index(const std::string& name) const;  // npos if unknown
    size_t edge_index(const std::string& id) const;        // npos if unknown
    bool is_target(size_t loc) const { return loc < target_flag.size() && target_flag[loc]; }
    const DistributionSpec* distribution(size_t loc) const;

    // Throws ModelError listing every unresolved reference.
    void require_resolved() const;

    bool operator==(const Stg& o) const;
};

// ---- guards -------------------------------------------------------------

// Grammar: atom ("&&" atom)* | "true", atom := clock ("<"|"<="|"="|">="|">") integer.
ClockConstraint parse_constraint(const std::string& text, const std::vector<std::string>& clocks);
std::string format_constraint(const ClockConstraint& g, const std::vector<std::string>& clocks);

template <class T>
bool atom_holds(const T& value, Rel rel, const T& bound) {
    switch (rel) {
        case Rel::Lt: return value < bound;
        case Rel::Le: return value <= bound;
        case Rel::Eq: return value == bound;
        case Rel::Ge: return value >= bound;
        case Rel::Gt: return value > bound;
    }
    return false;
}

template <class T>
bool satisfies(const Valuation<T>& v, const ClockConstraint& g) {
    for (const Atom& a : g.atoms) {
        if (a.clock >= v.size()) throw ModelError("constraint mentions an unknown clock");
        if (!atom_holds<T>(v[a.clock], a.rel, atom_bound<T>(a))) return false;
    }
    return true;
}

// ---- delay intervals ----------------------------------------------------

template <class T>
struct Interval {
    bool empty = true;
    T lo{};
    T hi{};
    bool lo_closed = true;
    bool hi_closed = true;
    bool hi_inf = false;

    static Interval all() {
        Interval i;
        i.empty = false;
        i.lo = T(0);
        i.hi_inf = true;
        i.hi_closed = false;
        return i;
    }
    static Interval none() { return Interval(); }
    static Interval closed(T a, T b) {
        Interval i;
        i.empty = !(a <= b);
        i.lo = a;
        i.hi = b;
        return i;
    }

    bool contains(const T& t) const {
        if (empty) return false;
        if (lo_closed ? t < lo : t <= lo) return false;
        if (hi_inf) return true;
        return hi_closed ? t <= hi : t < hi;
    }
    bool bounded() const { return empty || !hi_inf; }
    // Lebesgue measure; only valid when bounded.
    T length() const { return empty ? T(0) : T(hi - lo); }
    bool operator==(const Interval&) const = default;
};

template <class T>
Interval<T> intersect(const Interval<T>& a, const Interval<T>& b) {
    if (a.empty || b.empty) return Interval<T>::none();
    Interval<T> r;
    r.empty = false;
    if (a.lo > b.lo) {
        r.lo = a.lo;
        r.lo_closed = a.lo_closed;
    } else if (b.lo > a.lo) {
        r.lo = b.lo;
        r.lo_closed = b.lo_closed;
    } else {
        r.lo = a.lo;
        r.lo_closed = a.lo_closed && b.lo_closed;
    }
    if (a.hi_inf && b.hi_inf) {
        r.hi_inf = true;
        r.hi_closed = false;
    } else if (a.hi_inf || (!b.hi_inf && b.hi < a.hi)) {
        r.hi = b.hi;
        r.hi_closed = b.hi_closed;
    } else if (b.hi_inf || a.hi < b.hi) {
        r.hi = a.hi;
        r.hi_closed = a.hi_closed;
    } else {
        r.hi = a.hi;
        r.hi_closed = a.hi_closed && b.hi_closed;
    }
    if (!r.hi_inf) {
        if (r.hi < r.lo) return Interval<T>::none();
        if (r.hi == r.lo && !(r.lo_closed && r.hi_closed)) return Interval<T>::none();
    }
    return r;
}

// Delays t >= 0 with v + t satisfying a single guard atom.
template <class T>
Interval<T> guard_atom_delays(const T& value, const Atom& a) {
    T k = atom_bound<T>(a) - value;  // delay at which the clock equals the bound
    Interval<T> r = Interval<T>::all();
    T zero(0);
    switch (a.rel) {
        case Rel::Lt:
            if (k <= zero) return Interval<T>::none();
            r.hi_inf = false;
            r.hi = k;
            r.hi_closed = false;
            return r;
        case Rel::Le:
            if (k < zero) return Interval<T>::none();
            r.hi_inf = false;
            r.hi = k;
            r.hi_closed = true;
            return r;
        case Rel::Eq:
            if (k < zero) return Interval<T>::none();
            return Interval<T>::closed(k, k);
        case Rel::Ge:
            if (k > zero) r.lo = k;
            return r;
        case Rel::Gt:
            if (k >= zero) {
                r.lo = k;
                r.lo_closed = false;
            }
            return r;
    }
    return r;
}

// Delays t >= 0 such that the invariant holds throughout [0, t].
template <class T>
Interval<T> invariant_delays(const Valuation<T>& v, const ClockConstraint& inv) {
    Interval<T> r = Interval<T>::all();
    for (const Atom& a : inv.atoms) {
        if (!atom_holds<T>(v[a.clock], a.rel, atom_bound<T>(a))) return Interval<T>::none();
        switch (a.rel) {
            case Rel::Lt:
            case Rel::Le:
                r = intersect(r, guard_atom_delays<T>(v[a.clock], a));
                break;
            case Rel::Eq:
                r = intersect(r, Interval<T>::closed(T(0), T(0)));
                break;
            case Rel::Ge:
            case Rel::Gt:
                break;  // already holds at 0, so forever
        }
        if (r.empty) return r;
    }
    return r;
}

template <class T>
Interval<T> enabled_interval(const Stg& g, size_t loc, const Valuation<T>& v, const Edge& e) {
    if (e.source != loc) throw ModelError("edge " + e.id + " does not leave the queried location");
    Interval<T> r = invariant_delays<T>(v, g.locations[loc].invariant);
    for (const Atom& a : e.guard.atoms) {
        if (r.empty) break;
        r = intersect(r, guard_atom_delays<T>(v[a.clock], a));
    }
    return r;
}

// Sorted, merged union of intervals.
template <class T>
std::vector<Interval<T>> normalize_union(std::vector<Interval<T>> parts) {
    parts.erase(std::remove_if(parts.begin(), parts.end(), [](const Interval<T>& i) { return i.empty; }),
                parts.end());
    std::sort(parts.begin(), parts.end(), [](const Interval<T>& a, const Interval<T>& b) {
        if (a.lo != b.lo) return a.lo < b.lo;
        return a.lo_closed && !b.lo_closed;
    });
    std::vector<Interval<T>> out;
    for (const auto& p : parts) {
        if (!out.empty()) {
            Interval<T>& last = out.back();
            bool touches = last.hi_inf || p.lo < last.hi || (p.lo == last.hi && (p.lo_closed || last.hi_closed));
            if (touches) {
                if (last.hi_inf) continue;
                if (p.hi_inf) {
                    last.hi_inf = true;
                    last.hi_closed = false;
                } else if (p.hi > last.hi) {
                    last.hi = p.hi;
                    last.hi_closed = p.hi_closed;
                } else if (p.hi == last.hi) {
                    last.hi_closed = last.hi_closed || p.hi_closed;
                }
                continue;
            }
        }
        out.push_back(p);
    }
    return out;
}

template <class T>
struct EnabledSet {
    std::vector<Interval<T>> parts;                        // I(s), normalized
    std::vector<std::pair<size_t, Interval<T>>> per_edge;  // (edge index, I(s,e)) for every outgoing edge
    bool empty() const { return parts.empty(); }
    bool bounded() const { return parts.empty() || !parts.back().hi_inf; }
    T measure() const {
        T m(0);
        for (const auto& p : parts) m += p.length();
        return m;
    }
};

template <class T>
EnabledSet<T> enabled_set(const Stg& g, size_t loc, const Valuation<T>& v) {
    EnabledSet<T> s;
    std::vector<Interval<T>> all;
    for (size_t ei : g.out[loc]) {
        auto iv = enabled_interval<T>(g, loc, v, g.edges[ei]);
        s.per_edge.emplace_back(ei, iv);
        all.push_back(iv);
    }
    s.parts = normalize_union(std::move(all));
    return s;
}

// Weight shares of the edges enabled at the given (already delayed) valuation.
// Throws SemanticsError when nothing is enabled.
std::map<size_t, Rational> edge_choice_prob(const Stg& g, size_t loc, const Valuation<Rational>& v_after_delay);

// ---- validation ---------------------------------------------------------

struct Finding {
    enum class Severity { Info, Error };
    Severity severity = Severity::Error;
    std::string code;  // e.g. "dangling-reference", "non-blocking"
    std::string message;
};

struct ValidationReport {
    std::vector<Finding> findings;
    bool ok() const;
    bool has(const std::string& code) const;
    nlohmann::json to_json() const;
};

ValidationReport check_wellformed(const Stg& g);

// Largest constant in any guard or invariant, rounded up.
long max_constant(const Stg& g);
// True when every guard and invariant constant is an integer.
bool integer_constants(const Stg& g);

// ---- serialization ------------------------------------------------------

// Lenient: unknown names are recorded in Stg::unresolved instead of throwing,
// so that check_wellformed can report them. Syntax errors throw ModelError.
Stg stg_from_json(const nlohmann::json& j);
nlohmann::json stg_to_json(const Stg& g);
Stg load_stg(const std::string& path);
void save_stg(const Stg& g, const std::string& path);

}  // namespace stg
