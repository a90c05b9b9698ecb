// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "stg/model.hpp"

#include <string>
#include <vector>

namespace stg {

// ---- 1-clock regions ----------------------------------------------------
//
// With M = c_max, region indices are laid out in increasing clock order:
//   2c     -> Point(c)       0 <= c <= M
//   2c + 1 -> Open(c, c+1)   0 <= c <  M
//   2M + 1 -> Unbounded (M, inf)

struct RegionLayout {
    long cmax = 0;

    size_t count() const { return static_cast<size_t>(2 * cmax + 2); }
    size_t zero() const { return 0; }
    size_t unbounded() const { return static_cast<size_t>(2 * cmax + 1); }
    bool is_point(size_t r) const { return r != unbounded() && r % 2 == 0; }
    bool is_unbounded(size_t r) const { return r == unbounded(); }
    // Lower end of the region (the point itself for points).
    long low(size_t r) const { return static_cast<long>(r / 2); }
    size_t of(const Rational& v) const;
    // A value strictly inside the region.
    Rational representative(size_t r) const;
    // "0", "{2}", "(0,1)", "inf"
    std::string name(size_t r) const;
    // Minimal guard for the region: x=c, x>c && x<c+1, x>M.
    ClockConstraint guard(size_t r, size_t clock = 0) const;
};

// ---- region STG ---------------------------------------------------------

struct RegionNode {
    size_t location = npos;
    size_t region = 0;  // entry region
    bool operator==(const RegionNode&) const = default;
};

struct RegionEdge {
    size_t source = npos;  // node index
    size_t piece = 0;      // region R'' in which the edge fires
    size_t edge = npos;    // original edge index
    bool reset = false;
    size_t target = npos;  // node index
};

struct RegionStg {
    const Stg* game = nullptr;
    RegionLayout layout;
    std::vector<RegionNode> nodes;
    std::vector<RegionEdge> edges;
    std::vector<std::vector<size_t>> out;  // region-edge indices per node
    size_t initial = 0;

    size_t find(size_t location, size_t region) const;  // npos if absent
    std::string node_name(size_t n) const;              // "A@(0,1)"
    Owner owner(size_t n) const { return game->locations[nodes[n].location].owner; }
    std::string guard_text(const RegionEdge& e) const;
    nlohmann::json to_json() const;
    std::string to_dot() const;
};

// Requires exactly one clock. Point pieces are dropped for stochastic sources
// (they carry no probability mass under either delay density).
RegionStg build_region_stg(const Stg& g);

// Verdicts of the three restrictions that license the MDP abstraction.
struct StarReport {
    bool non_zeno = true;
    std::vector<std::string> zeno_cycle;  // node names
    bool exponential_unbounded = true;
    std::string exponential_witness;       // node name
    bool initialized = true;
    std::string initialized_witness;       // edge id
    bool all() const { return non_zeno && exponential_unbounded && initialized; }
    nlohmann::json to_json() const;
};

StarReport check_star(const RegionStg& rg);

// Representative entry value for a symbolic entry in region r: the open-region
// midpoint is used for pieces above the entry, 1/3 into the region for the entry itself.
Rational region_entry_rep(const RegionLayout& L, size_t r);

// True iff edge e is enabled at a clock value in region `piece` after entering
// in region `entry`. Ignores measure: build_region_stg drops point pieces of
// stochastic sources on top of this.
bool fires_in_piece(const Stg& g, const RegionLayout& L, size_t loc, size_t entry, size_t piece, size_t edge);

}  // namespace stg
