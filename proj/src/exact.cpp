// SPDX-License-Identifier: Apache-2.0
#include "stg/exact.hpp"

namespace stg {

long rate_denominator_lcm(const Stg& g) {
    BigInt q = 1;
    for (const auto& [loc, d] : g.distributions)
        if (d.kind == DistributionSpec::Kind::Exponential) q = lcm(q, denominator_of(d.rate));
    return to_long_exact(Rational(q), "rate denominator lcm");
}

namespace {

struct Ctx {
    const Stg& g;
    const RegionLayout& L;
    long q;
    const std::vector<PathStep>& steps;
};

// Clock value used to decide which edges fire in `piece`, given the entry.
Rational firing_value(const RegionLayout& L, const Entry& en, size_t piece) {
    if (!en.known) {
        if (piece != en.region) return L.representative(piece);
        if (L.is_unbounded(piece)) return Rational(L.cmax + 2);
        return Rational(L.low(piece)) + Rational(2, 3);
    }
    if (piece != en.region) return L.representative(piece);
    if (L.is_point(piece)) return en.value;
    if (L.is_unbounded(piece)) return en.value + 1;
    return (en.value + Rational(L.low(piece) + 1)) / 2;
}

Rational entry_value(const RegionLayout& L, const Entry& en) {
    return en.known ? en.value : region_entry_rep(L, en.region);
}

// Weight share of edge `edge` among the edges firing in `piece`; 0 if it does not fire.
Rational share_in_piece(const Ctx& c, size_t loc, const Entry& en, size_t piece, size_t edge) {
    Rational v = entry_value(c.L, en);
    Rational t = firing_value(c.L, en, piece) - v;
    Valuation<Rational> val{v};
    long total = 0, mine = 0;
    for (size_t ei : c.g.out[loc]) {
        if (!enabled_interval<Rational>(c.g, loc, val, c.g.edges[ei]).contains(t)) continue;
        total += c.g.edges[ei].weight;
        if (ei == edge) mine = c.g.edges[ei].weight;
    }
    return total == 0 ? Rational(0) : Rational(mine, total);
}

TransientExpr one(long q) { return TransientExpr::constant(ExpPoly(q, 1)); }

TransientExpr prob(const Ctx& c, size_t i, size_t loc, const Entry& en) {
    if (i == c.steps.size()) return one(c.q);
    const PathStep& st = c.steps[i];
    if (st.edge >= c.g.edges.size()) throw UsageError("path step names an unknown edge");
    const Edge& e = c.g.edges[st.edge];
    const Location& Lc = c.g.locations[loc];
    if (e.source != loc) throw UsageError("path is not connected: edge " + e.id + " does not leave " + Lc.name);
    const RegionLayout& L = c.L;
    bool reset = !e.resets.empty();

    if (Lc.owner != Owner::Stochastic) {
        if (!en.known) throw UnsupportedModel("player step " + e.id + " needs a known entry value");
        if (!st.delay) throw UsageError("player step " + e.id + " needs an explicit delay");
        Valuation<Rational> val{en.value};
        if (!enabled_interval<Rational>(c.g, loc, val, e).contains(*st.delay))
            throw IllegalMove("delay " + to_string(*st.delay) + " is not in I(s," + e.id + ")");
        Rational u = en.value + *st.delay;
        if (st.piece && L.of(u) != *st.piece) return TransientExpr(c.q);
        return prob(c, i + 1, e.target, reset ? Entry::at(0, L) : Entry::at(u, L));
    }

    const DistributionSpec* d = c.g.distribution(loc);
    if (!d) throw ModelError("stochastic location " + Lc.name + " has no distribution");
    size_t first = st.piece ? *st.piece : en.region;
    size_t last = st.piece ? *st.piece + 1 : L.count();
    if (first < en.region) return TransientExpr(c.q);

    if (d->kind == DistributionSpec::Kind::Exponential) {
        // I(s) must be R+ (up to measure zero): every non-point piece from the entry on has an enabled edge.
        for (size_t p = en.region; p < L.count(); ++p) {
            if (L.is_point(p)) continue;
            bool covered = false;
            for (size_t ei : c.g.out[loc]) covered = covered || share_in_piece(c, loc, en, p, ei) > 0;
            if (!covered)
                throw UnsupportedModel("exponential location " + Lc.name + " does not have I(s) = R+ (region " +
                                       L.name(p) + ")");
        }
        const Rational& rate = d->rate;
        if (!is_integer(rate * c.q)) throw DomainError("rate denominator does not divide q");
        TransientExpr total(c.q);
        for (size_t p = first; p < last; ++p) {
            if (L.is_point(p)) continue;  // measure zero
            Rational share = share_in_piece(c, loc, en, p, st.edge);
            if (share == 0) continue;
            TransientExpr next = prob(c, i + 1, e.target, reset ? Entry::at(0, L) : Entry::symbolic(p));
            auto lower = p == en.region ? TransientExpr::Bound::var() : TransientExpr::Bound::at(L.low(p));
            auto upper = L.is_unbounded(p) ? TransientExpr::Bound::inf() : TransientExpr::Bound::at(L.low(p) + 1);
            // rate * e^{rate v} * int e^{-rate u} * share * next(u) du
            TransientExpr term = next.integrate_times_exp(rate, lower, upper).times_exp(-rate);
            term *= ExpPoly(c.q, rate * share);
            total += term;
        }
        if (en.known) return TransientExpr::constant(total.evaluate(en.value));
        return total;
    }

    // Uniform over I(s): needs the entry value.
    if (!en.known) throw UnsupportedModel("uniform location " + Lc.name + " entered with a non-constant clock value");
    Valuation<Rational> val{en.value};
    auto es = enabled_set<Rational>(c.g, loc, val);
    if (es.empty()) throw SemanticsError("no edge enabled at " + Lc.name);
    if (!es.bounded()) throw SemanticsError("uniform delay over an unbounded enabled set at " + Lc.name);
    Rational measure = es.measure();
    ExpPoly total(c.q);
    if (measure == 0) {
        // Only isolated points, each equally likely.
        Rational k(static_cast<long>(es.parts.size()));
        for (const auto& part : es.parts) {
            Rational t = part.lo;
            Rational u = en.value + t;
            if (st.piece && L.of(u) != *st.piece) continue;
            long tot = 0, mine = 0;
            for (auto& [ei, iv] : es.per_edge) {
                if (!iv.contains(t)) continue;
                tot += c.g.edges[ei].weight;
                if (ei == st.edge) mine = c.g.edges[ei].weight;
            }
            if (mine == 0) continue;
            ExpPoly next = prob(c, i + 1, e.target, reset ? Entry::at(0, L) : Entry::at(u, L)).constant_value();
            total += next * (Rational(mine, tot) / k);
        }
        return TransientExpr::constant(total);
    }
    for (size_t p = first; p < last; ++p) {
        if (L.is_point(p)) continue;
        Rational share = share_in_piece(c, loc, en, p, st.edge);
        if (share == 0) continue;
        if (L.is_unbounded(p)) throw SemanticsError("uniform delay over an unbounded enabled set at " + Lc.name);
        Rational lo = p == en.region ? en.value : Rational(L.low(p));
        Rational hi = L.low(p) + 1;
        TransientExpr next = prob(c, i + 1, e.target, reset ? Entry::at(0, L) : Entry::symbolic(p));
        TransientExpr integral =
            next.integrate_times_exp(0, TransientExpr::Bound::at(lo), TransientExpr::Bound::at(hi));
        total += integral.constant_value() * (share / measure);
    }
    return TransientExpr::constant(total);
}

}  // namespace

TransientExpr path_probability(const Stg& g, const RegionLayout& L, long q, size_t loc, const Entry& entry,
                               const std::vector<PathStep>& steps) {
    Ctx c{g, L, q, steps};
    return prob(c, 0, loc, entry);
}

ExpPoly exact_path_probability(const Stg& g, size_t loc, const Rational& x0, const std::vector<PathStep>& steps) {
    if (g.clocks.size() != 1)
        throw UnsupportedModel("exact path probabilities need exactly one clock, the model has " +
                               std::to_string(g.clocks.size()));
    g.require_resolved();
    if (!integer_constants(g)) throw UnsupportedModel("exact path probabilities need integer clock constants");
    RegionLayout L{max_constant(g)};
    long q = rate_denominator_lcm(g);
    TransientExpr r = path_probability(g, L, q, loc, Entry::at(x0, L), steps);
    if (!r.is_constant()) throw InternalError("path probability from a known entry is not constant");
    return r.constant_value();
}

ExpPoly exact_path_probability(const Stg& g, const std::vector<std::string>& edge_ids,
                               const std::map<size_t, Rational>& player_delays) {
    std::vector<PathStep> steps;
    for (size_t i = 0; i < edge_ids.size(); ++i) {
        size_t ei = g.edge_index(edge_ids[i]);
        if (ei == npos) throw UsageError("unknown edge " + edge_ids[i]);
        PathStep s;
        s.edge = ei;
        auto it = player_delays.find(i);
        if (it != player_delays.end()) s.delay = it->second;
        steps.push_back(s);
    }
    if (g.initial_valuation.empty()) throw ModelError("model has no initial valuation");
    return exact_path_probability(g, g.initial_location, g.initial_valuation[0], steps);
}

}  // namespace stg
