// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "stg/exact.hpp"
#include "stg/exppoly.hpp"
#include "stg/region.hpp"

#include <set>

namespace stg {

// ---- deletable-node elimination ----------------------------------------

// Stochastic nodes whose entry region is neither 0 nor inf. Throws
// IllegalOperation naming a cycle if they do not induce an acyclic sub-graph.
std::vector<size_t> deletable_nodes(const RegionStg& rg);

// A path of region edges between two nodes; the label is the sequence of original edge ids.
struct MacroPath {
    size_t source = npos;
    size_t target = npos;
    std::vector<size_t> region_edges;
};

struct LabelledGraph {
    const RegionStg* rg = nullptr;
    std::vector<char> removed;
    std::vector<MacroPath> edges;
    std::string label(const MacroPath& p) const;  // "e4e7"
};

LabelledGraph labelled_graph(const RegionStg& rg);

// Replaces every (incoming, outgoing) pair through `node` by one concatenated
// edge and drops the node. Throws IllegalOperation if the node is not deletable.
void remove_node(LabelledGraph& lg, size_t node);

// Probability of following the region path from its (0 or inf) source node.
ExpPoly macro_edge_probability(const RegionStg& rg, const std::vector<size_t>& region_path, long q);

// ---- MDP ----------------------------------------------------------------

struct MdpMove {
    std::vector<std::string> label;  // original edge ids
    ExpPoly prob;                    // 1 for player actions
    size_t target = npos;
    std::string label_text() const;
};

struct MdpState {
    std::string name;
    Owner owner = Owner::Stochastic;  // Stochastic = chance state
    bool target = false;
    std::vector<MdpMove> moves;       // actions (player) or distribution (chance)
};

struct Mdp {
    long q = 1;
    std::vector<MdpState> states;
    size_t initial = 0;

    size_t find(const std::string& name) const;  // npos if absent
    std::set<std::string> labels() const;
    nlohmann::json to_json(int digits = 12) const;
    std::string to_dot() const;
};

Mdp mdp_from_json(const nlohmann::json& j);
Mdp load_mdp(const std::string& path);

// Removes deletable nodes in `order` (or in a topological order when empty),
// then assembles the MDP and checks that every chance state sums to exactly 1.
Mdp build_mdp(const RegionStg& rg, const std::vector<size_t>& order = {});

}  // namespace stg
