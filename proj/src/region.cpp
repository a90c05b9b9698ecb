// SPDX-License-Identifier: Apache-2.0
#include "stg/region.hpp"

#include <deque>
#include <functional>
#include <sstream>

namespace stg {

size_t RegionLayout::of(const Rational& v) const {
    if (v > cmax) return unbounded();
    Rational f = floor_of(v);
    long c = to_long_exact(f, "region");
    return v == f ? static_cast<size_t>(2 * c) : static_cast<size_t>(2 * c + 1);
}

Rational RegionLayout::representative(size_t r) const {
    if (is_unbounded(r)) return Rational(cmax + 1);
    if (is_point(r)) return Rational(low(r));
    return Rational(2 * low(r) + 1, 2);
}

std::string RegionLayout::name(size_t r) const {
    if (is_unbounded(r)) return "inf";
    if (r == 0) return "0";
    long c = low(r);
    if (is_point(r)) return "{" + std::to_string(c) + "}";
    return "(" + std::to_string(c) + "," + std::to_string(c + 1) + ")";
}

ClockConstraint RegionLayout::guard(size_t r, size_t clock) const {
    ClockConstraint g;
    long c = low(r);
    if (is_unbounded(r)) g.atoms.push_back({clock, Rel::Gt, cmax});
    else if (is_point(r)) g.atoms.push_back({clock, Rel::Eq, c});
    else {
        g.atoms.push_back({clock, Rel::Gt, c});
        g.atoms.push_back({clock, Rel::Lt, c + 1});
    }
    return g;
}

Rational region_entry_rep(const RegionLayout& L, size_t r) {
    if (L.is_point(r)) return Rational(L.low(r));
    if (L.is_unbounded(r)) return Rational(L.cmax + 1);
    return Rational(L.low(r)) + Rational(1, 3);
}

namespace {

// Clock value at firing, for an entry in region `entry` and firing in `piece`.
Rational firing_rep(const RegionLayout& L, size_t entry, size_t piece) {
    if (piece != entry) return L.representative(piece);
    if (L.is_point(piece)) return Rational(L.low(piece));
    if (L.is_unbounded(piece)) return Rational(L.cmax + 2);
    return Rational(L.low(piece)) + Rational(2, 3);
}

}  // namespace

bool fires_in_piece(const Stg& g, const RegionLayout& L, size_t loc, size_t entry, size_t piece, size_t edge) {
    if (piece < entry) return false;
    Rational v = region_entry_rep(L, entry);
    Rational u = firing_rep(L, entry, piece);
    Valuation<Rational> val{v};
    return enabled_interval<Rational>(g, loc, val, g.edges[edge]).contains(u - v);
}

size_t RegionStg::find(size_t location, size_t region) const {
    for (size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].location == location && nodes[i].region == region) return i;
    return npos;
}

std::string RegionStg::node_name(size_t n) const {
    return game->locations[nodes[n].location].name + "@" + layout.name(nodes[n].region);
}

std::string RegionStg::guard_text(const RegionEdge& e) const {
    return format_constraint(layout.guard(e.piece), game->clocks);
}

RegionStg build_region_stg(const Stg& g) {
    if (g.clocks.size() != 1)
        throw UnsupportedModel("the region abstraction needs exactly one clock, the model has " +
                               std::to_string(g.clocks.size()));
    g.require_resolved();
    if (!integer_constants(g)) throw UnsupportedModel("the region abstraction needs integer clock constants");
    RegionStg rg;
    rg.game = &g;
    rg.layout.cmax = max_constant(g);
    const RegionLayout& L = rg.layout;
    std::map<std::pair<size_t, size_t>, size_t> index;
    auto node_of = [&](size_t loc, size_t r) {
        auto [it, fresh] = index.emplace(std::make_pair(loc, r), rg.nodes.size());
        if (fresh) rg.nodes.push_back({loc, r});
        return it->second;
    };
    rg.initial = node_of(g.initial_location, L.of(g.initial_valuation[0]));
    for (size_t n = 0; n < rg.nodes.size(); ++n) {  // nodes grows while we scan: breadth-first
        RegionNode node = rg.nodes[n];
        bool stochastic = g.locations[node.location].owner == Owner::Stochastic;
        for (size_t ei : g.out[node.location]) {
            const Edge& e = g.edges[ei];
            for (size_t piece = node.region; piece < L.count(); ++piece) {
                if (stochastic && L.is_point(piece)) continue;
                if (!fires_in_piece(g, L, node.location, node.region, piece, ei)) continue;
                bool reset = !e.resets.empty();
                size_t tgt = node_of(e.target, reset ? L.zero() : piece);
                rg.edges.push_back({n, piece, ei, reset, tgt});
            }
        }
    }
    rg.out.assign(rg.nodes.size(), {});
    for (size_t i = 0; i < rg.edges.size(); ++i) rg.out[rg.edges[i].source].push_back(i);
    return rg;
}

nlohmann::json RegionStg::to_json() const {
    nlohmann::json js = nlohmann::json::object();
    nlohmann::json ns = nlohmann::json::array();
    for (size_t i = 0; i < nodes.size(); ++i)
        ns.push_back({{"name", node_name(i)},
                      {"location", game->locations[nodes[i].location].name},
                      {"region", layout.name(nodes[i].region)},
                      {"owner", owner_name(owner(i))}});
    nlohmann::json es = nlohmann::json::array();
    for (const auto& e : edges)
        es.push_back({{"source", node_name(e.source)},
                      {"target", node_name(e.target)},
                      {"edge", game->edges[e.edge].id},
                      {"guard", guard_text(e)},
                      {"reset", e.reset}});
    js["cmax"] = layout.cmax;
    js["initial"] = node_name(initial);
    js["nodes"] = ns;
    js["edges"] = es;
    return js;
}

namespace {

std::string dot_escape(const std::string& s) {
    std::string o;
    for (char c : s) {
        if (c == '"' || c == '\\') o += '\\';
        o += c;
    }
    return o;
}

const char* dot_shape(Owner o) {
    switch (o) {
        case Owner::Box: return "box";
        case Owner::Diamond: return "diamond";
        case Owner::Stochastic: return "circle";
    }
    return "circle";
}

}  // namespace

std::string RegionStg::to_dot() const {
    std::ostringstream os;
    os << "digraph region_stg {\n";
    for (size_t i = 0; i < nodes.size(); ++i)
        os << "  n" << i << " [label=\"" << dot_escape(node_name(i)) << "\", shape=" << dot_shape(owner(i))
           << (game->is_target(nodes[i].location) ? ", peripheries=2" : "") << "];\n";
    for (const auto& e : edges)
        os << "  n" << e.source << " -> n" << e.target << " [label=\"" << dot_escape(game->edges[e.edge].id) << " : "
           << dot_escape(guard_text(e)) << (e.reset ? " / reset" : "") << "\"];\n";
    os << "}\n";
    return os.str();
}

nlohmann::json StarReport::to_json() const {
    nlohmann::json j;
    j["non_zeno"] = {{"pass", non_zeno}, {"witness", zeno_cycle}};
    j["exponential_unbounded"] = {{"pass", exponential_unbounded}, {"witness", exponential_witness}};
    j["initialized"] = {{"pass", initialized}, {"witness", initialized_witness}};
    j["pass"] = all();
    return j;
}

StarReport check_star(const RegionStg& rg) {
    StarReport rep;
    const Stg& g = *rg.game;
    const RegionLayout& L = rg.layout;

    // (1) Cycles made of bounded-guard edges must visit a zero-region node:
    // the graph without zero nodes and without unbounded-guard edges is acyclic.
    std::vector<int> colour(rg.nodes.size(), 0);
    std::vector<size_t> stack;
    std::function<bool(size_t)> dfs = [&](size_t n) -> bool {
        colour[n] = 1;
        stack.push_back(n);
        for (size_t ei : rg.out[n]) {
            const RegionEdge& e = rg.edges[ei];
            if (L.is_unbounded(e.piece) || rg.nodes[e.target].region == L.zero()) continue;
            if (colour[e.target] == 1) {
                auto it = std::find(stack.begin(), stack.end(), e.target);
                for (; it != stack.end(); ++it) rep.zeno_cycle.push_back(rg.node_name(*it));
                rep.zeno_cycle.push_back(rg.node_name(e.target));
                return true;
            }
            if (colour[e.target] == 0 && dfs(e.target)) return true;
        }
        stack.pop_back();
        colour[n] = 2;
        return false;
    };
    for (size_t n = 0; n < rg.nodes.size() && rep.non_zeno; ++n)
        if (colour[n] == 0 && rg.nodes[n].region != L.zero() && dfs(n)) rep.non_zeno = false;

    // (2) Stochastic nodes: exponential delays and I(s) = R+ for every value in the entry region.
    for (size_t n = 0; n < rg.nodes.size() && rep.exponential_unbounded; ++n) {
        size_t loc = rg.nodes[n].location;
        if (g.locations[loc].owner != Owner::Stochastic) continue;
        const DistributionSpec* d = g.distribution(loc);
        bool ok = d && d->kind == DistributionSpec::Kind::Exponential;
        for (size_t piece = rg.nodes[n].region; ok && piece < L.count(); ++piece) {
            bool covered = false;
            for (size_t ei : g.out[loc]) covered = covered || fires_in_piece(g, L, loc, rg.nodes[n].region, piece, ei);
            ok = covered;
        }
        if (!ok) {
            rep.exponential_unbounded = false;
            rep.exponential_witness = rg.node_name(n);
        }
    }

    // (3) Player -> stochastic edges reset the clock.
    for (const auto& e : rg.edges) {
        if (rg.owner(e.source) == Owner::Stochastic || rg.owner(e.target) != Owner::Stochastic) continue;
        if (!e.reset) {
            rep.initialized = false;
            rep.initialized_witness = g.edges[e.edge].id;
            break;
        }
    }
    return rep;
}

}  // namespace stg
