// SPDX-License-Identifier: Apache-2.0
#include "stg/mdp.hpp"

#include <fstream>
#include <functional>
#include <sstream>

namespace stg {

namespace {

bool is_deletable(const RegionStg& rg, size_t n) {
    return rg.owner(n) == Owner::Stochastic && rg.nodes[n].region != rg.layout.zero() &&
           !rg.layout.is_unbounded(rg.nodes[n].region);
}

}  // namespace

std::vector<size_t> deletable_nodes(const RegionStg& rg) {
    std::vector<size_t> del;
    std::vector<char> is_del(rg.nodes.size(), 0);
    for (size_t n = 0; n < rg.nodes.size(); ++n)
        if (is_deletable(rg, n)) {
            del.push_back(n);
            is_del[n] = 1;
        }
    std::vector<int> colour(rg.nodes.size(), 0);
    std::vector<size_t> stack;
    std::function<void(size_t)> dfs = [&](size_t n) {
        colour[n] = 1;
        stack.push_back(n);
        for (size_t ei : rg.out[n]) {
            size_t t = rg.edges[ei].target;
            if (!is_del[t]) continue;
            if (colour[t] == 1) {
                std::string cyc;
                for (auto it = std::find(stack.begin(), stack.end(), t); it != stack.end(); ++it)
                    cyc += rg.node_name(*it) + " -> ";
                throw IllegalOperation("deletable nodes form a cycle: " + cyc + rg.node_name(t));
            }
            if (colour[t] == 0) dfs(t);
        }
        stack.pop_back();
        colour[n] = 2;
    };
    for (size_t n : del)
        if (colour[n] == 0) dfs(n);
    return del;
}

std::string LabelledGraph::label(const MacroPath& p) const {
    std::string s;
    for (size_t re : p.region_edges) s += rg->game->edges[rg->edges[re].edge].id;
    return s;
}

LabelledGraph labelled_graph(const RegionStg& rg) {
    LabelledGraph lg;
    lg.rg = &rg;
    lg.removed.assign(rg.nodes.size(), 0);
    for (size_t i = 0; i < rg.edges.size(); ++i) lg.edges.push_back({rg.edges[i].source, rg.edges[i].target, {i}});
    return lg;
}

void remove_node(LabelledGraph& lg, size_t node) {
    const RegionStg& rg = *lg.rg;
    if (node >= rg.nodes.size() || lg.removed[node]) throw IllegalOperation("node is not in the graph");
    if (!is_deletable(rg, node)) throw IllegalOperation("node " + rg.node_name(node) + " is not deletable");
    std::vector<MacroPath> in, out, keep;
    for (auto& p : lg.edges) {
        if (p.source == node && p.target == node)
            throw IllegalOperation("deletable node " + rg.node_name(node) + " has a self-loop");
        if (p.target == node) in.push_back(p);
        else if (p.source == node) out.push_back(p);
        else keep.push_back(p);
    }
    for (const auto& a : in)
        for (const auto& b : out) {
            MacroPath m{a.source, b.target, a.region_edges};
            m.region_edges.insert(m.region_edges.end(), b.region_edges.begin(), b.region_edges.end());
            keep.push_back(std::move(m));
        }
    lg.edges = std::move(keep);
    lg.removed[node] = 1;
}

ExpPoly macro_edge_probability(const RegionStg& rg, const std::vector<size_t>& region_path, long q) {
    if (region_path.empty()) throw IllegalOperation("empty macro-edge");
    const RegionLayout& L = rg.layout;
    size_t src = rg.edges[region_path.front()].source;
    if (rg.owner(src) != Owner::Stochastic) throw IllegalOperation("macro-edge source " + rg.node_name(src) + " is a player node");
    size_t r0 = rg.nodes[src].region;
    if (r0 != L.zero() && !L.is_unbounded(r0))
        throw IllegalOperation("macro-edge source " + rg.node_name(src) + " is deletable");
    std::vector<PathStep> steps;
    for (size_t i = 0; i < region_path.size(); ++i) {
        const RegionEdge& re = rg.edges[region_path[i]];
        if (i > 0 && re.source != rg.edges[region_path[i - 1]].target) throw IllegalOperation("macro-edge is not a path");
        if (i + 1 < region_path.size() && !is_deletable(rg, re.target))
            throw IllegalOperation("intermediate node " + rg.node_name(re.target) + " is not deletable");
        PathStep s;
        s.edge = re.edge;
        s.piece = re.piece;
        steps.push_back(s);
    }
    Entry en = r0 == L.zero() ? Entry::at(0, L) : Entry::symbolic(r0);
    TransientExpr r = path_probability(*rg.game, L, q, rg.nodes[src].location, en, steps);
    if (!r.is_constant())
        throw InternalError("macro-edge probability from " + rg.node_name(src) + " depends on the entry value: " + r.str());
    return r.constant_value();
}

// ---- MDP ----------------------------------------------------------------

std::string MdpMove::label_text() const {
    std::string s;
    for (const auto& l : label) s += l;
    return s;
}

size_t Mdp::find(const std::string& name) const {
    for (size_t i = 0; i < states.size(); ++i)
        if (states[i].name == name) return i;
    return npos;
}

std::set<std::string> Mdp::labels() const {
    std::set<std::string> s;
    for (const auto& st : states)
        for (const auto& m : st.moves) s.insert(m.label_text());
    return s;
}

nlohmann::json Mdp::to_json(int digits) const {
    nlohmann::json js;
    js["q"] = q;
    js["y"] = "exp(-1/" + std::to_string(q) + ")";
    js["initial"] = states.at(initial).name;
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& st : states) {
        nlohmann::json s;
        s["name"] = st.name;
        s["owner"] = owner_name(st.owner);
        s["target"] = st.target;
        nlohmann::json mv = nlohmann::json::array();
        for (const auto& m : st.moves) {
            nlohmann::json o;
            o["label"] = m.label_text();
            o["path"] = m.label;
            o["target"] = states[m.target].name;
            if (st.owner == Owner::Stochastic) {
                o["prob"] = m.prob.str_with_y();
                o["enclosure"] = format_enclosure(m.prob.enclose(), digits);
            }
            mv.push_back(o);
        }
        s["moves"] = mv;
        arr.push_back(s);
    }
    js["states"] = arr;
    return js;
}

std::string Mdp::to_dot() const {
    std::ostringstream os;
    os << "digraph mdp {\n";
    for (size_t i = 0; i < states.size(); ++i) {
        const auto& st = states[i];
        const char* shape = st.owner == Owner::Box ? "box" : st.owner == Owner::Diamond ? "diamond" : "circle";
        os << "  s" << i << " [label=\"" << st.name << "\", shape=" << shape << (st.target ? ", peripheries=2" : "")
           << "];\n";
    }
    for (size_t i = 0; i < states.size(); ++i)
        for (const auto& m : states[i].moves) {
            os << "  s" << i << " -> s" << m.target << " [label=\"" << m.label_text();
            if (states[i].owner == Owner::Stochastic) os << " : " << m.prob.str();
            os << "\"];\n";
        }
    os << "}\n";
    return os.str();
}

Mdp mdp_from_json(const nlohmann::json& j) {
    try {
        Mdp m;
        m.q = j.at("q").get<long>();
        if (m.q <= 0) throw ModelError("q must be positive");
        for (const auto& s : j.at("states")) {
            MdpState st;
            st.name = s.at("name").get<std::string>();
            st.owner = parse_owner(s.at("owner").get<std::string>());
            st.target = s.value("target", false);
            m.states.push_back(st);
        }
        auto state_of = [&](const std::string& n) {
            size_t i = m.find(n);
            if (i == npos) throw ModelError("MDP refers to unknown state " + n);
            return i;
        };
        size_t i = 0;
        for (const auto& s : j.at("states")) {
            for (const auto& mv : s.value("moves", nlohmann::json::array())) {
                MdpMove move;
                if (mv.contains("path")) move.label = mv.at("path").get<std::vector<std::string>>();
                else move.label = {mv.at("label").get<std::string>()};
                move.target = state_of(mv.at("target").get<std::string>());
                move.prob = m.states[i].owner == Owner::Stochastic
                                ? parse_exppoly(mv.at("prob").get<std::string>(), m.q)
                                : ExpPoly(m.q, 1);
                m.states[i].moves.push_back(move);
            }
            ++i;
        }
        m.initial = state_of(j.at("initial").get<std::string>());
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ModelError(std::string("malformed MDP document: ") + e.what());
    } catch (const UsageError& e) {
        throw ModelError(std::string("malformed MDP document: ") + e.what());
    }
}

Mdp load_mdp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ModelError("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ModelError(path + ": " + e.what());
    }
    return mdp_from_json(j);
}

Mdp build_mdp(const RegionStg& rg, const std::vector<size_t>& order) {
    std::vector<size_t> del = deletable_nodes(rg);
    std::vector<size_t> seq = order.empty() ? del : order;
    {
        std::vector<size_t> a = del, b = seq;
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        if (a != b) throw IllegalOperation("elimination order is not a permutation of the deletable nodes");
    }
    LabelledGraph lg = labelled_graph(rg);
    for (size_t n : seq) remove_node(lg, n);

    const Stg& g = *rg.game;
    Mdp m;
    m.q = rate_denominator_lcm(g);
    std::vector<size_t> state_of(rg.nodes.size(), npos);
    for (size_t n = 0; n < rg.nodes.size(); ++n) {
        if (lg.removed[n]) continue;
        state_of[n] = m.states.size();
        MdpState st;
        st.name = rg.node_name(n);
        st.owner = rg.owner(n);
        st.target = g.is_target(rg.nodes[n].location);
        m.states.push_back(st);
    }
    if (state_of[rg.initial] == npos) throw IllegalOperation("initial node " + rg.node_name(rg.initial) + " is deletable");
    m.initial = state_of[rg.initial];

    for (const auto& p : lg.edges) {
        MdpState& st = m.states[state_of[p.source]];
        MdpMove mv;
        for (size_t re : p.region_edges) mv.label.push_back(g.edges[rg.edges[re].edge].id);
        mv.target = state_of[p.target];
        if (st.owner != Owner::Stochastic) {
            if (p.region_edges.size() != 1)
                throw IllegalOperation("player node " + st.name + " moves into a deletable node (model not initialized)");
            mv.prob = ExpPoly(m.q, 1);
            bool dup = false;
            for (const auto& o : st.moves) dup = dup || (o.label == mv.label && o.target == mv.target);
            if (!dup) st.moves.push_back(mv);
            continue;
        }
        mv.prob = macro_edge_probability(rg, p.region_edges, m.q);
        bool merged = false;
        for (auto& o : st.moves)
            if (o.label == mv.label && o.target == mv.target) {
                o.prob += mv.prob;
                merged = true;
            }
        if (!merged) st.moves.push_back(mv);
    }
    for (auto& st : m.states) {
        std::sort(st.moves.begin(), st.moves.end(), [&](const MdpMove& a, const MdpMove& b) {
            if (a.label_text() != b.label_text()) return a.label_text() < b.label_text();
            return m.states[a.target].name < m.states[b.target].name;
        });
        if (st.owner != Owner::Stochastic || (st.target && st.moves.empty())) continue;
        ExpPoly sum(m.q);
        for (const auto& mv : st.moves) sum += mv.prob;
        if (sum != ExpPoly(m.q, 1)) {
            std::string dump;
            for (const auto& mv : st.moves) dump += "\n  " + mv.label_text() + " : " + mv.prob.str();
            throw InternalError("chance state " + st.name + " sums to " + sum.str() + ", not 1:" + dump);
        }
    }
    return m;
}

}  // namespace stg
