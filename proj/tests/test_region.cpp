// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "stg/exact.hpp"
#include "stg/region.hpp"

#include <random>
#include <set>

using namespace stg;
using nlohmann::json;

namespace {

const std::string kSamples = STG_SAMPLES_DIR;

std::set<std::string> node_names(const RegionStg& rg) {
    std::set<std::string> s;
    for (size_t n = 0; n < rg.nodes.size(); ++n) s.insert(rg.node_name(n));
    return s;
}

json fig1_json() {
    std::ifstream in(kSamples + "/fig1.json");
    return json::parse(in);
}

}  // namespace

TEST_CASE("region layout indexes points, open intervals and the unbounded tail") {
    RegionLayout L{2};
    CHECK(L.count() == 6);
    CHECK(L.of(0) == 0);
    CHECK(L.of(Rational(1, 2)) == 1);
    CHECK(L.of(1) == 2);
    CHECK(L.of(Rational(3, 2)) == 3);
    CHECK(L.of(2) == 4);
    CHECK(L.of(7) == 5);
    CHECK(L.is_point(4));
    CHECK_FALSE(L.is_point(5));
    CHECK(L.is_unbounded(5));
    CHECK(L.name(0) == "0");
    CHECK(L.name(2) == "{1}");
    CHECK(L.name(3) == "(1,2)");
    CHECK(L.name(5) == "inf");
    for (size_t r = 0; r < L.count(); ++r) {
        CAPTURE(r);
        CHECK(L.of(L.representative(r)) == r);
        CHECK(satisfies<Rational>({L.representative(r)}, L.guard(r)));
        CHECK(L.of(region_entry_rep(L, r)) == r);
    }
}

TEST_CASE("region STG of fig1") {
    Stg g = load_stg(kSamples + "/fig1.json");
    RegionStg rg = build_region_stg(g);
    CHECK(rg.nodes.size() == 8);
    CHECK(rg.edges.size() == 13);
    CHECK(rg.node_name(rg.initial) == "A@0");
    CHECK(node_names(rg) == std::set<std::string>{"A@0", "C@0", "B@(0,1)", "E@inf", "A@(0,1)", "E@0", "D@(0,1)", "B@0"});

    // Stochastic sources never fire in a point region.
    for (const auto& e : rg.edges)
        if (rg.owner(e.source) == Owner::Stochastic) CHECK_FALSE(rg.layout.is_point(e.piece));
    // Player E@0 keeps the point piece for e6.
    size_t e0 = rg.find(g.location_index("E"), 0);
    REQUIRE(e0 != npos);
    CHECK(rg.out[e0].size() == 2);

    // Reset edges land in region 0, others in the firing piece.
    for (const auto& e : rg.edges) {
        CHECK(rg.nodes[e.target].location == g.edges[e.edge].target);
        CHECK(rg.nodes[e.target].region == (e.reset ? 0 : e.piece));
    }
    CHECK(rg.to_json()["nodes"].size() == 8);
    CHECK(rg.to_dot().find("digraph") != std::string::npos);
}

TEST_CASE("fires_in_piece is constant on regions (random entry values)") {
    for (std::string name : {"fig1", "example_a", "choice"}) {
        CAPTURE(name);
        Stg g = load_stg(kSamples + "/" + name + ".json");
        RegionLayout L{max_constant(g)};
        std::mt19937_64 rng(21);
        for (size_t loc = 0; loc < g.locations.size(); ++loc) {
            for (size_t entry = 0; entry < L.count(); ++entry) {
                if (L.is_point(entry) && entry != 0) continue;
                for (size_t ei : g.out[loc]) {
                    for (size_t piece = entry; piece < L.count(); ++piece) {
                        bool region_says = fires_in_piece(g, L, loc, entry, piece, ei);
                        // Concrete check at several entry values: the edge is enabled at some clock value in the piece.
                        for (int k = 0; k < 3; ++k) {
                            Rational v = L.is_point(entry) ? Rational(L.low(entry))
                                         : L.is_unbounded(entry)
                                             ? Rational(L.cmax) + Rational(1 + rng() % 7, 3)
                                             : Rational(L.low(entry)) + Rational(1 + rng() % 97, 98);
                            // Clock values inside the piece, at or above v.
                            Rational lo = L.is_point(piece) ? Rational(L.low(piece)) : std::max(v, Rational(L.low(piece)));
                            Rational hi = L.is_point(piece) ? lo : L.is_unbounded(piece) ? lo + 10 : Rational(L.low(piece) + 1);
                            bool concrete = false;
                            for (int s = 0; s <= 40 && !concrete; ++s) {
                                Rational u = lo + (hi - lo) * Rational(s, 40);
                                if (u < v || L.of(u) != piece) continue;
                                auto iv = enabled_interval<Rational>(g, loc, {v}, g.edges[ei]);
                                concrete = iv.contains(u - v);
                            }
                            CAPTURE(g.locations[loc].name);
                            CAPTURE(g.edges[ei].id);
                            CAPTURE(L.name(entry));
                            CAPTURE(L.name(piece));
                            CHECK(region_says == concrete);
                        }
                    }
                }
            }
        }
    }
}

TEST_CASE("the region pipeline rejects models it cannot handle") {
    CHECK_THROWS_AS(build_region_stg(load_stg(kSamples + "/unfair2clock.json")), UnsupportedModel);
    json j = fig1_json();
    j["edges"][0]["guard"] = "x>=1/2";
    CHECK_THROWS_AS(build_region_stg(stg_from_json(j)), UnsupportedModel);
}

TEST_CASE("check_star on fig1 and its mutants") {
    StarReport ok = check_star(build_region_stg(load_stg(kSamples + "/fig1.json")));
    CHECK(ok.all());

    json stripped = fig1_json();
    for (auto& e : stripped["edges"]) e["resets"] = json::array();
    StarReport s = check_star(build_region_stg(stg_from_json(stripped)));
    CHECK_FALSE(s.initialized);
    CHECK(s.initialized_witness == "e8");

    json uniform = fig1_json();
    for (auto& [k, d] : uniform["distributions"].items()) d = {{"kind", "uniform"}};
    StarReport u = check_star(build_region_stg(stg_from_json(uniform)));
    CHECK_FALSE(u.exponential_unbounded);
    CHECK(u.initialized);
    CHECK(u.non_zeno);

    // A reset-free Diamond loop inside (0,1) is a Zeno cycle.
    json zeno = fig1_json();
    zeno["edges"][7]["resets"] = json::array();
    zeno["edges"][7]["guard"] = "x<1";
    StarReport z = check_star(build_region_stg(stg_from_json(zeno)));
    CHECK_FALSE(z.non_zeno);
    CHECK_FALSE(z.zeno_cycle.empty());
}

TEST_CASE("exact path probabilities on the small examples") {
    Stg a = load_stg(kSamples + "/example_a.json");
    CHECK(exact_path_probability(a, {"e1", "e2"}) == ExpPoly(1, Rational(1, 8)));
    // Uniform on [0,1] at A: e1 and e3 are both enabled throughout, so each takes half.
    CHECK(exact_path_probability(a, {"e1"}) == ExpPoly(1, Rational(1, 2)));
    CHECK(exact_path_probability(a, {"e3"}) == ExpPoly(1, Rational(1, 2)));

    Stg f = load_stg(kSamples + "/fig1.json");
    ExpPoly y = ExpPoly::y(1), one(1, 1);
    CHECK(exact_path_probability(f, {"e1"}) == y);
    CHECK(exact_path_probability(f, {"e4"}) == one - y);
    CHECK(exact_path_probability(f, {"e4", "e7"}) == one - Rational(2) * y);
    CHECK(exact_path_probability(f, {"e4", "e5"}) == y);
    CHECK(exact_path_probability(f, {"e1", "e2"}) == y * y);
    // Player step after a reset: E is entered at x = 0 and e6 (x<1) is played at delay 1/2.
    CHECK(exact_path_probability(f, {"e4", "e5", "e6", "e7"}, {{2, Rational(1, 2)}}) == y * (one - y));
    CHECK_THROWS(exact_path_probability(f, {"e4", "e5", "e6"}));
    CHECK_THROWS(exact_path_probability(f, {"e4", "e5", "e6"}, {{2, Rational(2)}}));
    CHECK_THROWS(exact_path_probability(f, {"e2"}));
}

TEST_CASE("one-step path probabilities form a distribution") {
    for (std::string name : {"fig1", "example_a", "choice"}) {
        Stg g = load_stg(kSamples + "/" + name + ".json");
        RegionStg rg = build_region_stg(g);
        for (size_t n = 0; n < rg.nodes.size(); ++n) {
            if (rg.owner(n) != Owner::Stochastic || rg.out[n].empty()) continue;
            CAPTURE(rg.node_name(n));
            const RegionNode& node = rg.nodes[n];
            // Uniform densities over a symbolic entry are only integrated inside macro-paths (mdp suite).
            const DistributionSpec* d = g.distribution(node.location);
            if (node.region != 0 && d && d->kind == DistributionSpec::Kind::Uniform) continue;
            long q = rate_denominator_lcm(g);
            Entry entry = node.region == 0 ? Entry::at(0, rg.layout) : Entry::symbolic(node.region);
            TransientExpr total(q);
            for (size_t re : rg.out[n]) {
                PathStep s;
                s.edge = rg.edges[re].edge;
                s.piece = rg.edges[re].piece;
                total += path_probability(g, rg.layout, q, node.location, entry, {s});
            }
            // Exactly 1 for every entry value in the region.
            REQUIRE(total.is_constant());
            CHECK(total.constant_value() == ExpPoly(q, 1));
        }
    }
}
