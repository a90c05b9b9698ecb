// SPDX-License-Identifier: Apache-2.0
#include "stg/solver.hpp"

#include <cctype>
#include <cmath>
#include <limits>

namespace stg {

// ---- polynomials --------------------------------------------------------

namespace {

Rational leading(const ExpPoly& p) { return p.coeff(p.max_exponent()); }

ExpPoly monic(const ExpPoly& p) {
    if (p.is_zero()) return p;
    return p * (Rational(1) / leading(p));
}

ExpPoly exact_div(const ExpPoly& a, const ExpPoly& b) {
    auto [q, r] = poly_divmod(a, b);
    if (!r.is_zero()) throw InternalError("inexact polynomial division");
    return q;
}

}  // namespace

std::pair<ExpPoly, ExpPoly> poly_divmod(const ExpPoly& a, const ExpPoly& b) {
    if (b.is_zero()) throw DomainError("polynomial division by zero");
    long q = a.is_constant() ? b.q() : a.q();
    ExpPoly quot(q), rem = a;
    long db = b.max_exponent();
    Rational lb = leading(b);
    while (!rem.is_zero() && rem.max_exponent() >= db) {
        long d = rem.max_exponent() - db;
        Rational c = leading(rem) / lb;
        ExpPoly t = ExpPoly::monomial(q, d, c);
        quot += t;
        rem -= t * b;
    }
    return {quot, rem};
}

ExpPoly poly_gcd(ExpPoly a, ExpPoly b) {
    if (a.is_zero() && b.is_zero()) return ExpPoly(b.q(), 1);
    while (!b.is_zero()) {
        ExpPoly r = poly_divmod(a, b).second;
        a = std::move(b);
        b = std::move(r);
    }
    return monic(a);
}

// ---- rational functions -------------------------------------------------

RationalFunctionValue::RationalFunctionValue(const ExpPoly& p) : num_(p), den_(p.q(), 1) { normalize(); }

RationalFunctionValue::RationalFunctionValue(const ExpPoly& num, const ExpPoly& den) : num_(num), den_(den) {
    normalize();
}

void RationalFunctionValue::normalize() {
    if (den_.is_zero()) throw DomainError("rational function with zero denominator");
    long q = num_.is_constant() ? den_.q() : num_.q();
    if (num_.is_zero()) {
        num_ = ExpPoly(q);
        den_ = ExpPoly(q, 1);
        return;
    }
    long k = std::min(num_.min_exponent(), den_.min_exponent());
    if (k != 0) {
        num_ = num_.shifted(-k);
        den_ = den_.shifted(-k);
    }
    ExpPoly g = poly_gcd(num_, den_);
    if (!(g.is_constant())) {
        num_ = exact_div(num_, g);
        den_ = exact_div(den_, g);
    }
    Rational lc = leading(den_);
    num_ *= Rational(1) / lc;
    den_ *= Rational(1) / lc;
}

RationalFunctionValue RationalFunctionValue::operator+(const RationalFunctionValue& o) const {
    if (den_ == o.den_) return RationalFunctionValue(num_ + o.num_, den_);
    return RationalFunctionValue(num_ * o.den_ + o.num_ * den_, den_ * o.den_);
}

RationalFunctionValue RationalFunctionValue::operator-(const RationalFunctionValue& o) const {
    if (den_ == o.den_) return RationalFunctionValue(num_ - o.num_, den_);
    return RationalFunctionValue(num_ * o.den_ - o.num_ * den_, den_ * o.den_);
}

RationalFunctionValue RationalFunctionValue::operator*(const RationalFunctionValue& o) const {
    return RationalFunctionValue(num_ * o.num_, den_ * o.den_);
}

RationalFunctionValue RationalFunctionValue::operator/(const RationalFunctionValue& o) const {
    if (o.is_zero()) throw DomainError("division by the zero rational function");
    return RationalFunctionValue(num_ * o.den_, den_ * o.num_);
}

RInterval RationalFunctionValue::enclose(int terms) const {
    for (int t = terms; t <= 4096; t *= 2) {
        RInterval d = den_.enclose(t);
        if (!d.excludes_zero()) continue;
        RInterval n = num_.enclose(t);
        Rational a = n.lo / d.lo, b = n.lo / d.hi, c = n.hi / d.lo, e = n.hi / d.hi;
        return {std::min({a, b, c, e}), std::max({a, b, c, e})};
    }
    throw DomainError("denominator enclosure does not exclude zero");
}

long double RationalFunctionValue::approx() const { return num_.approx() / den_.approx(); }

std::string RationalFunctionValue::str() const {
    if (den_.is_constant() && den_.constant_term() == 1) return num_.str();
    auto part = [](const ExpPoly& p) { return p.terms().size() > 1 ? "(" + p.str() + ")" : p.str(); };
    return part(num_) + "/" + part(den_);
}

int certified_sign(const ExpPoly& p, int* terms_used) {
    if (terms_used) *terms_used = 0;
    if (p.is_zero()) return 0;
    if (p.is_constant()) return p.constant_term() > 0 ? 1 : -1;
    for (int t = 32; t <= 4096; t *= 2) {
        RInterval iv = p.enclose(t);
        if (iv.excludes_zero()) {
            if (terms_used) *terms_used = t;
            return iv.sign();
        }
    }
    throw DomainError("cannot separate from zero: " + p.str() + " (value may equal the threshold non-identically)");
}

int compare(const RationalFunctionValue& a, const RationalFunctionValue& b) {
    if (a == b) return 0;
    RationalFunctionValue d = a - b;
    return certified_sign(d.num()) * certified_sign(d.den());
}

// ---- profile evaluation -------------------------------------------------

namespace {

bool is_player(const MdpState& s) { return s.owner != Owner::Stochastic; }

// Successors (target, probability) of each state in the chain induced by the profile.
std::vector<std::vector<std::pair<size_t, ExpPoly>>> induced_chain(const Mdp& m, const PureProfile& profile) {
    if (profile.size() != m.states.size()) throw UsageError("profile does not cover every state");
    std::vector<std::vector<std::pair<size_t, ExpPoly>>> succ(m.states.size());
    for (size_t s = 0; s < m.states.size(); ++s) {
        const MdpState& st = m.states[s];
        if (st.target || st.moves.empty()) continue;
        if (is_player(st)) {
            if (profile[s] >= st.moves.size()) throw UsageError("profile has no valid choice at " + st.name);
            succ[s].push_back({st.moves[profile[s]].target, ExpPoly(m.q, 1)});
        } else {
            for (const auto& mv : st.moves) succ[s].push_back({mv.target, mv.prob});
        }
    }
    return succ;
}

}  // namespace

std::vector<RationalFunctionValue> evaluate_profile(const Mdp& m, const PureProfile& profile) {
    size_t n = m.states.size();
    auto succ = induced_chain(m, profile);
    // States with a path to a target; everything else is 0.
    std::vector<char> reach(n, 0);
    for (size_t s = 0; s < n; ++s) reach[s] = m.states[s].target;
    for (bool changed = true; changed;) {
        changed = false;
        for (size_t s = 0; s < n; ++s) {
            if (reach[s]) continue;
            for (const auto& [t, p] : succ[s])
                if (reach[t] && !p.is_zero()) {
                    reach[s] = 1;
                    changed = true;
                    break;
                }
        }
    }
    std::vector<size_t> var(n, npos);
    std::vector<size_t> unknowns;
    for (size_t s = 0; s < n; ++s)
        if (reach[s] && !m.states[s].target) {
            var[s] = unknowns.size();
            unknowns.push_back(s);
        }
    size_t k = unknowns.size();
    RationalFunctionValue zero(ExpPoly(m.q)), one(ExpPoly(m.q, 1));
    // (I - P) x = b over Q(y).
    std::vector<std::vector<RationalFunctionValue>> A(k, std::vector<RationalFunctionValue>(k, zero));
    std::vector<RationalFunctionValue> b(k, zero);
    for (size_t i = 0; i < k; ++i) {
        size_t s = unknowns[i];
        A[i][i] = one;
        for (const auto& [t, p] : succ[s]) {
            RationalFunctionValue pv(p);
            if (m.states[t].target) b[i] = b[i] + pv;
            else if (var[t] != npos) A[i][var[t]] = A[i][var[t]] - pv;
        }
    }
    for (size_t c = 0; c < k; ++c) {
        size_t piv = c;
        while (piv < k && A[piv][c].is_zero()) ++piv;
        if (piv == k) throw InternalError("singular reachability system");
        std::swap(A[piv], A[c]);
        std::swap(b[piv], b[c]);
        RationalFunctionValue inv = one / A[c][c];
        for (size_t j = c; j < k; ++j) A[c][j] = A[c][j] * inv;
        b[c] = b[c] * inv;
        for (size_t r = 0; r < k; ++r) {
            if (r == c || A[r][c].is_zero()) continue;
            RationalFunctionValue f = A[r][c];
            for (size_t j = c; j < k; ++j)
                if (!A[c][j].is_zero()) A[r][j] = A[r][j] - f * A[c][j];
            b[r] = b[r] - f * b[c];
        }
    }
    std::vector<RationalFunctionValue> val(n, zero);
    for (size_t s = 0; s < n; ++s) {
        if (m.states[s].target) val[s] = one;
        else if (var[s] != npos) val[s] = b[var[s]];
    }
    return val;
}

// ---- optimisation -------------------------------------------------------

namespace {

PureProfile initial_profile(const Mdp& m) {
    PureProfile p(m.states.size(), npos);
    for (size_t s = 0; s < m.states.size(); ++s)
        if (is_player(m.states[s]) && !m.states[s].target && !m.states[s].moves.empty()) p[s] = 0;
    return p;
}

// Strict one-step improvement for the given owner. Returns true if anything switched.
bool improve(const Mdp& m, Owner who, const std::vector<RationalFunctionValue>& val, PureProfile& p,
             const std::vector<char>* frozen = nullptr) {
    int want = who == Owner::Diamond ? 1 : -1;
    bool changed = false;
    for (size_t s = 0; s < m.states.size(); ++s) {
        const MdpState& st = m.states[s];
        if (st.owner != who || st.target || st.moves.empty()) continue;
        if (frozen && (*frozen)[s]) continue;
        size_t best = p[s];
        const RationalFunctionValue* best_val = &val[st.moves[best].target];
        for (size_t a = 0; a < st.moves.size(); ++a) {
            const RationalFunctionValue& look = val[st.moves[a].target];
            if (compare(look, *best_val) * want > 0) {
                best = a;
                best_val = &look;
            }
        }
        // Switch only on a strict improvement over the current value.
        if (best != p[s] && compare(*best_val, val[s]) * want > 0) {
            p[s] = best;
            changed = true;
        }
    }
    return changed;
}

// Box best response to the Diamond choices in `p` (Box entries are overwritten).
std::vector<RationalFunctionValue> min_best_response(const Mdp& m, PureProfile& p, size_t& iterations) {
    size_t n = m.states.size();
    // States where Box can avoid the targets surely (value 0).
    std::vector<char> avoid(n, 0);
    for (size_t s = 0; s < n; ++s) avoid[s] = !m.states[s].target;
    for (bool changed = true; changed;) {
        changed = false;
        for (size_t s = 0; s < n; ++s) {
            if (!avoid[s]) continue;
            const MdpState& st = m.states[s];
            if (st.moves.empty()) continue;
            bool keep;
            if (st.owner == Owner::Stochastic) {
                keep = true;
                for (const auto& mv : st.moves) keep = keep && (mv.prob.is_zero() || avoid[mv.target]);
            } else if (st.owner == Owner::Diamond) {
                keep = avoid[st.moves[p[s]].target];
            } else {
                keep = false;
                for (const auto& mv : st.moves) keep = keep || avoid[mv.target];
            }
            if (!keep) {
                avoid[s] = 0;
                changed = true;
            }
        }
    }
    for (size_t s = 0; s < n; ++s) {
        const MdpState& st = m.states[s];
        if (st.owner != Owner::Box || st.target || st.moves.empty()) continue;
        p[s] = 0;
        if (avoid[s])
            for (size_t a = 0; a < st.moves.size(); ++a)
                if (avoid[st.moves[a].target]) {
                    p[s] = a;
                    break;
                }
    }
    std::vector<char> frozen(avoid.begin(), avoid.end());
    auto val = evaluate_profile(m, p);
    while (improve(m, Owner::Box, val, p, &frozen)) {
        ++iterations;
        val = evaluate_profile(m, p);
    }
    return val;
}

bool has_owner(const Mdp& m, Owner o) {
    for (const auto& s : m.states)
        if (s.owner == o && !s.target && !s.moves.empty()) return true;
    return false;
}

}  // namespace

size_t profile_count(const Mdp& m) {
    size_t c = 1;
    for (const auto& s : m.states) {
        if (!is_player(s) || s.target || s.moves.empty()) continue;
        if (c > std::numeric_limits<size_t>::max() / s.moves.size()) return std::numeric_limits<size_t>::max();
        c *= s.moves.size();
    }
    return c;
}

SolveResult solve_optimal(const Mdp& m, SolveMode mode) {
    if (mode == SolveMode::Max && has_owner(m, Owner::Box))
        throw UsageError("the game has Box states; use max-min mode");
    SolveResult r;
    r.profile = initial_profile(m);
    size_t bound = profile_count(m);
    for (;;) {
        if (mode == SolveMode::MaxMin) r.values = min_best_response(m, r.profile, r.iterations);
        else r.values = evaluate_profile(m, r.profile);
        if (!improve(m, Owner::Diamond, r.values, r.profile)) break;
        if (++r.iterations > bound + m.states.size() * 64)
            throw InternalError("policy iteration did not converge within the profile-count bound");
    }
    r.value = r.values[m.initial];
    return r;
}

SolveResult solve_exhaustive(const Mdp& m, SolveMode mode) {
    if (mode == SolveMode::Max && has_owner(m, Owner::Box))
        throw UsageError("the game has Box states; use max-min mode");
    size_t total = profile_count(m);
    if (total > 1000000) throw UsageError("too many profiles for exhaustive enumeration");
    std::vector<size_t> maxers, miners;
    for (size_t s = 0; s < m.states.size(); ++s) {
        const auto& st = m.states[s];
        if (!is_player(st) || st.target || st.moves.empty()) continue;
        (st.owner == Owner::Diamond ? maxers : miners).push_back(s);
    }
    auto advance = [&](PureProfile& p, const std::vector<size_t>& who) {
        for (size_t s : who) {
            if (++p[s] < m.states[s].moves.size()) return true;
            p[s] = 0;
        }
        return false;
    };
    SolveResult best;
    bool have_best = false;
    PureProfile p = initial_profile(m);
    do {
        SolveResult inner;
        bool have_inner = false;
        for (size_t s : miners) p[s] = 0;
        do {
            auto vals = evaluate_profile(m, p);
            if (!have_inner || compare(vals[m.initial], inner.value) < 0) {
                inner.value = vals[m.initial];
                inner.values = vals;
                inner.profile = p;
                have_inner = true;
            }
            ++inner.iterations;
        } while (advance(p, miners));
        if (!have_best || compare(inner.value, best.value) > 0) {
            best = inner;
            have_best = true;
        }
        best.iterations += inner.iterations;
    } while (advance(p, maxers));
    return best;
}

std::vector<long double> value_iteration_preview(const Mdp& m, SolveMode mode, int iterations, long double tolerance) {
    if (mode == SolveMode::Max && has_owner(m, Owner::Box))
        throw UsageError("the game has Box states; use max-min mode");
    size_t n = m.states.size();
    std::vector<std::vector<long double>> probs(n);
    for (size_t s = 0; s < n; ++s)
        for (const auto& mv : m.states[s].moves) probs[s].push_back(mv.prob.approx());
    std::vector<long double> v(n, 0.0L);
    for (size_t s = 0; s < n; ++s)
        if (m.states[s].target) v[s] = 1.0L;
    for (int it = 0; it < iterations; ++it) {
        long double delta = 0;
        for (size_t s = 0; s < n; ++s) {
            const auto& st = m.states[s];
            if (st.target || st.moves.empty()) continue;
            long double nv;
            if (st.owner == Owner::Stochastic) {
                nv = 0;
                for (size_t a = 0; a < st.moves.size(); ++a) nv += probs[s][a] * v[st.moves[a].target];
            } else {
                nv = v[st.moves[0].target];
                for (const auto& mv : st.moves)
                    nv = st.owner == Owner::Diamond ? std::max(nv, v[mv.target]) : std::min(nv, v[mv.target]);
            }
            delta = std::max(delta, std::fabs(nv - v[s]));
            v[s] = nv;
        }
        if (delta < tolerance) break;
    }
    return v;
}

// ---- thresholds ---------------------------------------------------------

ThresholdQuery parse_threshold(const std::string& text) {
    std::string s;
    for (char c : text)
        if (!std::isspace(static_cast<unsigned char>(c))) s += c;
    ThresholdQuery q;
    size_t len = 0;
    if (s.rfind("<=", 0) == 0) q.rel = Rel::Le, len = 2;
    else if (s.rfind(">=", 0) == 0) q.rel = Rel::Ge, len = 2;
    else if (s.rfind("==", 0) == 0) q.rel = Rel::Eq, len = 2;
    else if (s.rfind("<", 0) == 0) q.rel = Rel::Lt, len = 1;
    else if (s.rfind(">", 0) == 0) q.rel = Rel::Gt, len = 1;
    else if (s.rfind("=", 0) == 0) q.rel = Rel::Eq, len = 1;
    else throw UsageError("threshold must start with one of < <= = >= >: '" + text + "'");
    q.p = parse_rational(s.substr(len));
    if (q.p < 0 || q.p > 1) throw UsageError("threshold probability must lie in [0,1]");
    return q;
}

nlohmann::json ThresholdVerdict::to_json(int digits) const {
    return {{"holds", holds},
            {"comparison", comparison},
            {"identical", identical},
            {"enclosure", format_enclosure(enclosure, digits)},
            {"taylor_terms", terms}};
}

ThresholdVerdict decide_threshold(const RationalFunctionValue& value, const ThresholdQuery& query) {
    ThresholdVerdict v;
    ExpPoly diff = value.num() - value.den() * query.p;
    if (diff.is_zero()) {
        v.identical = true;
        v.comparison = 0;
    } else {
        int t1 = 0, t2 = 0;
        int sd = certified_sign(diff, &t1);
        int sden = certified_sign(value.den(), &t2);
        v.comparison = sd * sden;
        v.terms = std::max(t1, t2);
    }
    v.enclosure = value.enclose(std::max(32, v.terms));
    switch (query.rel) {
        case Rel::Lt: v.holds = v.comparison < 0; break;
        case Rel::Le: v.holds = v.comparison <= 0; break;
        case Rel::Eq: v.holds = v.comparison == 0; break;
        case Rel::Ge: v.holds = v.comparison >= 0; break;
        case Rel::Gt: v.holds = v.comparison > 0; break;
    }
    return v;
}

}  // namespace stg
