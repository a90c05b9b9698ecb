// SPDX-License-Identifier: Apache-2.0
#include "stg/model.hpp"

#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace stg {

const char* rel_symbol(Rel r) {
    switch (r) {
        case Rel::Lt: return "<";
        case Rel::Le: return "<=";
        case Rel::Eq: return "=";
        case Rel::Ge: return ">=";
        case Rel::Gt: return ">";
    }
    return "?";
}

const char* owner_name(Owner o) {
    switch (o) {
        case Owner::Box: return "box";
        case Owner::Diamond: return "diamond";
        case Owner::Stochastic: return "stochastic";
    }
    return "?";
}

Owner parse_owner(const std::string& s) {
    if (s == "box") return Owner::Box;
    if (s == "diamond") return Owner::Diamond;
    if (s == "stochastic") return Owner::Stochastic;
    throw ModelError("unknown owner '" + s + "' (expected box, diamond or stochastic)");
}

// ---- Stg ----------------------------------------------------------------

void Stg::finalize() {
    out.assign(locations.size(), {});
    for (size_t i = 0; i < edges.size(); ++i)
        if (edges[i].source < locations.size()) out[edges[i].source].push_back(i);
    std::sort(targets.begin(), targets.end());
    targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
    target_flag.assign(locations.size(), 0);
    for (size_t t : targets)
        if (t < locations.size()) target_flag[t] = 1;
    for (auto& e : edges) {
        std::sort(e.resets.begin(), e.resets.end());
        e.resets.erase(std::unique(e.resets.begin(), e.resets.end()), e.resets.end());
        if (e.source < locations.size()) e.source_name = locations[e.source].name;
        if (e.target < locations.size()) e.target_name = locations[e.target].name;
    }
}

size_t Stg::clock_index(const std::string& name) const {
    for (size_t i = 0; i < clocks.size(); ++i)
        if (clocks[i] == name) return i;
    return npos;
}

size_t Stg::location_index(const std::string& name) const {
    for (size_t i = 0; i < locations.size(); ++i)
        if (locations[i].name == name) return i;
    return npos;
}

size_t Stg::edge_index(const std::string& id) const {
    for (size_t i = 0; i < edges.size(); ++i)
        if (edges[i].id == id) return i;
    return npos;
}

const DistributionSpec* Stg::distribution(size_t loc) const {
    auto it = distributions.find(loc);
    return it == distributions.end() ? nullptr : &it->second;
}

void Stg::require_resolved() const {
    if (unresolved.empty()) return;
    std::string msg = "model has unresolved references:";
    for (const auto& u : unresolved) msg += "\n  " + u;
    throw ModelError(msg);
}

bool Stg::operator==(const Stg& o) const {
    return clocks == o.clocks && locations == o.locations && edges == o.edges &&
           distributions == o.distributions && initial_location == o.initial_location &&
           initial_valuation == o.initial_valuation && targets == o.targets;
}

// ---- guards -------------------------------------------------------------

ClockConstraint parse_constraint(const std::string& text, const std::vector<std::string>& clocks) {
    ClockConstraint g;
    size_t i = 0;
    auto skip = [&] {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    };
    auto fail = [&](const std::string& why) -> ModelError {
        return ModelError("bad constraint '" + text + "': " + why);
    };
    skip();
    if (i == text.size()) return g;
    if (text.compare(i, 4, "true") == 0) {
        size_t j = i + 4;
        while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j == text.size()) return g;
    }
    while (true) {
        skip();
        size_t start = i;
        while (i < text.size() && (std::isalnum(static_cast<unsigned char>(text[i])) || text[i] == '_')) ++i;
        if (start == i) throw fail("expected a clock name at offset " + std::to_string(start));
        std::string name = text.substr(start, i - start);
        size_t ci = npos;
        for (size_t k = 0; k < clocks.size(); ++k)
            if (clocks[k] == name) ci = k;
        if (ci == npos) throw fail("unknown clock '" + name + "'");
        skip();
        Rel rel;
        if (text.compare(i, 2, "<=") == 0) {
            rel = Rel::Le;
            i += 2;
        } else if (text.compare(i, 2, ">=") == 0) {
            rel = Rel::Ge;
            i += 2;
        } else if (text.compare(i, 2, "==") == 0) {
            rel = Rel::Eq;
            i += 2;
        } else if (i < text.size() && text[i] == '<') {
            rel = Rel::Lt;
            ++i;
        } else if (i < text.size() && text[i] == '>') {
            rel = Rel::Gt;
            ++i;
        } else if (i < text.size() && text[i] == '=') {
            rel = Rel::Eq;
            ++i;
        } else {
            throw fail("expected a relation after '" + name + "'");
        }
        skip();
        size_t ns = i;
        while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
        if (ns == i) throw fail("expected a non-negative bound");
        if (i < text.size() && text[i] == '.') throw fail("bounds must be integers or fractions p/q");
        if (i < text.size() && text[i] == '/') {
            ++i;
            size_t ds = i;
            while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
            if (ds == i) throw fail("expected a denominator after '/'");
        }
        Rational bound;
        try {
            bound = parse_rational(text.substr(ns, i - ns));
        } catch (const std::exception&) {
            throw fail("malformed bound '" + text.substr(ns, i - ns) + "'");
        }
        g.atoms.push_back({ci, rel, bound});
        skip();
        if (i == text.size()) break;
        if (text.compare(i, 2, "&&") != 0) throw fail("expected '&&' at offset " + std::to_string(i));
        i += 2;
    }
    return g;
}

std::string format_constraint(const ClockConstraint& g, const std::vector<std::string>& clocks) {
    if (g.atoms.empty()) return "true";
    std::string s;
    for (size_t i = 0; i < g.atoms.size(); ++i) {
        if (i) s += " && ";
        const Atom& a = g.atoms[i];
        s += (a.clock < clocks.size() ? clocks[a.clock] : "?");
        s += rel_symbol(a.rel);
        s += to_string(a.bound);
    }
    return s;
}

// ---- edge choice --------------------------------------------------------

std::map<size_t, Rational> edge_choice_prob(const Stg& g, size_t loc, const Valuation<Rational>& v) {
    std::map<size_t, Rational> out;
    long total = 0;
    bool inv = satisfies(v, g.locations[loc].invariant);
    if (inv) {
        for (size_t ei : g.out[loc]) {
            if (satisfies(v, g.edges[ei].guard)) {
                out[ei] = g.edges[ei].weight;
                total += g.edges[ei].weight;
            }
        }
    }
    if (total == 0) throw SemanticsError("no edge enabled at location " + g.locations[loc].name);
    for (auto& [ei, w] : out) w /= total;
    return out;
}

// ---- validation ---------------------------------------------------------

bool ValidationReport::ok() const {
    for (const auto& f : findings)
        if (f.severity == Finding::Severity::Error) return false;
    return true;
}

bool ValidationReport::has(const std::string& code) const {
    for (const auto& f : findings)
        if (f.code == code) return true;
    return false;
}

nlohmann::json ValidationReport::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& f : findings)
        arr.push_back({{"severity", f.severity == Finding::Severity::Error ? "error" : "info"},
                       {"code", f.code},
                       {"message", f.message}});
    return {{"ok", ok()}, {"findings", arr}};
}

long max_constant(const Stg& g) {
    Rational m = 0;
    for (const auto& l : g.locations)
        for (const auto& a : l.invariant.atoms) m = std::max(m, a.bound);
    for (const auto& e : g.edges)
        for (const auto& a : e.guard.atoms) m = std::max(m, a.bound);
    Rational f = floor_of(m);
    return to_long_exact(f == m ? f : f + 1, "largest constant");
}

bool integer_constants(const Stg& g) {
    for (const auto& l : g.locations)
        for (const auto& a : l.invariant.atoms)
            if (!is_integer(a.bound)) return false;
    for (const auto& e : g.edges)
        for (const auto& a : e.guard.atoms)
            if (!is_integer(a.bound)) return false;
    return true;
}

namespace {

bool satisfiable(const ClockConstraint& c, size_t nclocks) {
    for (size_t x = 0; x < nclocks; ++x) {
        Interval<Rational> iv = Interval<Rational>::all();
        for (const auto& a : c.atoms) {
            if (a.clock != x) continue;
            // Atom as a set of clock values = delays from value 0.
            iv = intersect(iv, guard_atom_delays<Rational>(Rational(0), a));
        }
        if (iv.empty) return false;
    }
    return true;
}

bool has_upper_bound(const ClockConstraint& c) {
    for (const auto& a : c.atoms)
        if (a.rel == Rel::Lt || a.rel == Rel::Le || a.rel == Rel::Eq) return true;
    return false;
}

// Representative clock value of 1-clock region index r (see region module for the same layout).
Rational region_rep(size_t r, long cmax) {
    if (r == static_cast<size_t>(2 * cmax + 1)) return Rational(2 * cmax + 1, 2);
    if (r % 2 == 0) return Rational(static_cast<long>(r / 2));
    return Rational(static_cast<long>(2 * (r / 2) + 1), 2);
}

size_t region_of(const Rational& v, long cmax) {
    if (v > cmax) return static_cast<size_t>(2 * cmax + 1);
    Rational f = floor_of(v);
    long c = to_long_exact(f, "region");
    return v == f ? static_cast<size_t>(2 * c) : static_cast<size_t>(2 * c + 1);
}

void single_clock_checks(const Stg& g, ValidationReport& rep) {
    long cmax = max_constant(g);
    size_t nreg = static_cast<size_t>(2 * cmax + 2);
    std::vector<char> seen(g.locations.size() * nreg, 0);
    std::vector<std::pair<size_t, size_t>> stack;
    size_t r0 = region_of(g.initial_valuation[0], cmax);
    stack.push_back({g.initial_location, r0});
    seen[g.initial_location * nreg + r0] = 1;
    std::set<std::string> reported;
    while (!stack.empty()) {
        auto [loc, r] = stack.back();
        stack.pop_back();
        const Location& L = g.locations[loc];
        Valuation<Rational> v{region_rep(r, cmax)};
        if (g.is_target(loc)) continue;  // runs stop on entering a target
        auto es = enabled_set<Rational>(g, loc, v);
        std::string where = L.name + " with x in region #" + std::to_string(r);
        if (!satisfies(v, L.invariant)) {
            if (reported.insert("inv" + L.name).second)
                rep.findings.push_back({Finding::Severity::Error, "invariant-on-entry",
                                        "location " + L.name + " can be entered violating its invariant (" + where + ")"});
            continue;
        }
        if (es.empty()) {
            if (g.out[loc].empty() && L.owner != Owner::Stochastic) {
                if (reported.insert("abs" + L.name).second)
                    rep.findings.push_back({Finding::Severity::Info, "absorbing",
                                            "player location " + L.name + " has no outgoing edges (runs end there)"});
            } else if (reported.insert("nb" + L.name).second) {
                rep.findings.push_back({Finding::Severity::Error, "non-blocking",
                                        "no delay enables an edge at " + where});
            }
            continue;
        }
        if (L.owner == Owner::Stochastic) {
            const DistributionSpec* d = g.distribution(loc);
            if (d && d->kind == DistributionSpec::Kind::Uniform && !es.bounded() &&
                reported.insert("ub" + L.name).second)
                rep.findings.push_back({Finding::Severity::Error, "uniform-unbounded",
                                        "uniform delays need a bounded enabled set, unbounded at " + where});
        }
        for (auto& [ei, iv] : es.per_edge) {
            if (iv.empty) continue;
            const Edge& e = g.edges[ei];
            for (size_t r2 = r; r2 < nreg; ++r2) {
                Rational t = (r2 == r) ? Rational(0) : Rational(region_rep(r2, cmax) - v[0]);
                if (!iv.contains(t)) continue;
                size_t nr = e.resets.empty() ? r2 : 0;
                size_t key = e.target * nreg + nr;
                if (!seen[key]) {
                    seen[key] = 1;
                    stack.push_back({e.target, nr});
                }
            }
        }
    }
}

void multi_clock_checks(const Stg& g, ValidationReport& rep) {
    for (size_t loc = 0; loc < g.locations.size(); ++loc) {
        const Location& L = g.locations[loc];
        if (g.is_target(loc)) continue;
        if (g.out[loc].empty()) {
            if (L.owner == Owner::Stochastic)
                rep.findings.push_back({Finding::Severity::Error, "non-blocking",
                                        "stochastic location " + L.name + " has no outgoing edge"});
            else
                rep.findings.push_back({Finding::Severity::Info, "absorbing",
                                        "player location " + L.name + " has no outgoing edges (runs end there)"});
            continue;
        }
        if (L.owner == Owner::Stochastic) {
            const DistributionSpec* d = g.distribution(loc);
            if (!d || d->kind != DistributionSpec::Kind::Uniform) continue;
            bool bounded = has_upper_bound(L.invariant);
            if (!bounded) {
                bounded = true;
                for (size_t ei : g.out[loc]) bounded = bounded && has_upper_bound(g.edges[ei].guard);
            }
            if (!bounded)
                rep.findings.push_back({Finding::Severity::Error, "uniform-unbounded",
                                        "uniform location " + L.name + " has no upper bound on its delays"});
        }
    }
}

}  // namespace

ValidationReport check_wellformed(const Stg& g) {
    ValidationReport rep;
    for (const auto& u : g.unresolved) rep.findings.push_back({Finding::Severity::Error, "dangling-reference", u});
    std::set<std::string> names;
    for (const auto& l : g.locations)
        if (!names.insert(l.name).second)
            rep.findings.push_back({Finding::Severity::Error, "duplicate-name", "duplicate location " + l.name});
    std::set<std::string> ids;
    for (const auto& e : g.edges) {
        if (!ids.insert(e.id).second)
            rep.findings.push_back({Finding::Severity::Error, "duplicate-name", "duplicate edge id " + e.id});
        if (e.weight < 1)
            rep.findings.push_back({Finding::Severity::Error, "bad-weight", "edge " + e.id + " has weight < 1"});
        if (!satisfiable(e.guard, g.clocks.size()))
            rep.findings.push_back({Finding::Severity::Error, "unsatisfiable-guard", "guard of edge " + e.id + " is unsatisfiable"});
    }
    for (size_t i = 0; i < g.locations.size(); ++i) {
        const Location& l = g.locations[i];
        if (!satisfiable(l.invariant, g.clocks.size()))
            rep.findings.push_back({Finding::Severity::Error, "unsatisfiable-guard", "invariant of " + l.name + " is unsatisfiable"});
        const DistributionSpec* d = g.distribution(i);
        if (l.owner == Owner::Stochastic && !d)
            rep.findings.push_back({Finding::Severity::Error, "missing-distribution", "stochastic location " + l.name + " has no distribution"});
        if (l.owner != Owner::Stochastic && d)
            rep.findings.push_back({Finding::Severity::Error, "stray-distribution", "player location " + l.name + " has a distribution"});
        if (d && d->kind == DistributionSpec::Kind::Exponential && d->rate <= 0)
            rep.findings.push_back({Finding::Severity::Error, "bad-rate", "non-positive rate at " + l.name});
    }
    bool structurally_ok = rep.ok();
    if (g.initial_location >= g.locations.size()) {
        rep.findings.push_back({Finding::Severity::Error, "bad-initial", "initial location is missing or unknown"});
        structurally_ok = false;
    } else if (g.initial_valuation.size() != g.clocks.size()) {
        rep.findings.push_back({Finding::Severity::Error, "bad-initial", "initial valuation does not cover every clock"});
        structurally_ok = false;
    } else {
        for (const auto& x : g.initial_valuation)
            if (x < 0) {
                rep.findings.push_back({Finding::Severity::Error, "bad-initial", "negative initial clock value"});
                structurally_ok = false;
            }
        if (structurally_ok && !satisfies(g.initial_valuation, g.locations[g.initial_location].invariant))
            rep.findings.push_back({Finding::Severity::Error, "bad-initial", "initial valuation violates the initial invariant"});
    }
    if (!structurally_ok) return rep;
    if (g.clocks.size() == 1 && integer_constants(g)) {
        single_clock_checks(g, rep);
    } else {
        multi_clock_checks(g, rep);
        rep.findings.push_back({Finding::Severity::Info, "structural-only",
                                g.clocks.size() == 1
                                    ? "non-integer constants: blocking and boundedness checked per location, not per region"
                                    : "multi-clock model: blocking and boundedness checked per location, not per region"});
    }
    return rep;
}

// ---- JSON ---------------------------------------------------------------

namespace {

Rational json_rational(const nlohmann::json& j, const std::string& what) {
    if (j.is_string()) return parse_rational(j.get<std::string>());
    if (j.is_number_integer()) return Rational(j.get<long long>());
    if (j.is_number()) return from_double(j.get<double>());
    throw ModelError(what + ": expected a number or a rational string");
}

}  // namespace

Stg stg_from_json(const nlohmann::json& j) {
    Stg g;
    try {
        for (const auto& c : j.at("clocks")) g.clocks.push_back(c.get<std::string>());
        for (const auto& l : j.at("locations")) {
            Location loc;
            loc.name = l.at("name").get<std::string>();
            loc.owner = parse_owner(l.at("owner").get<std::string>());
            if (l.contains("invariant")) loc.invariant = parse_constraint(l["invariant"].get<std::string>(), g.clocks);
            g.locations.push_back(std::move(loc));
        }
        auto loc_ref = [&](const std::string& name, const std::string& ctx) {
            size_t i = g.location_index(name);
            if (i == npos) g.unresolved.push_back(ctx + " refers to unknown location '" + name + "'");
            return i;
        };
        for (const auto& e : j.at("edges")) {
            Edge ed;
            ed.id = e.at("id").get<std::string>();
            ed.source_name = e.at("source").get<std::string>();
            ed.target_name = e.at("target").get<std::string>();
            ed.source = loc_ref(ed.source_name, "edge " + ed.id + " source");
            ed.target = loc_ref(ed.target_name, "edge " + ed.id + " target");
            if (e.contains("guard")) ed.guard = parse_constraint(e["guard"].get<std::string>(), g.clocks);
            if (e.contains("resets"))
                for (const auto& r : e["resets"]) {
                    size_t ci = g.clock_index(r.get<std::string>());
                    if (ci == npos)
                        g.unresolved.push_back("edge " + ed.id + " resets unknown clock '" + r.get<std::string>() + "'");
                    else
                        ed.resets.push_back(ci);
                }
            if (e.contains("weight")) ed.weight = e["weight"].get<long>();
            g.edges.push_back(std::move(ed));
        }
        if (j.contains("distributions"))
            for (const auto& [name, d] : j["distributions"].items()) {
                size_t li = loc_ref(name, "distribution");
                if (li == npos) continue;
                DistributionSpec spec;
                std::string kind = d.at("kind").get<std::string>();
                if (kind == "uniform") {
                    spec.kind = DistributionSpec::Kind::Uniform;
                } else if (kind == "exponential") {
                    spec.kind = DistributionSpec::Kind::Exponential;
                    spec.rate = json_rational(d.at("rate"), "rate of " + name);
                } else {
                    throw ModelError("unknown distribution kind '" + kind + "'");
                }
                g.distributions[li] = spec;
            }
        const auto& init = j.at("initial");
        g.initial_location = loc_ref(init.at("location").get<std::string>(), "initial state");
        g.initial_valuation.assign(g.clocks.size(), Rational(0));
        if (init.contains("valuation"))
            for (const auto& [name, val] : init["valuation"].items()) {
                size_t ci = g.clock_index(name);
                if (ci == npos)
                    g.unresolved.push_back("initial valuation names unknown clock '" + name + "'");
                else
                    g.initial_valuation[ci] = json_rational(val, "initial value of " + name);
            }
        if (j.contains("targets"))
            for (const auto& t : j["targets"]) {
                size_t li = loc_ref(t.get<std::string>(), "target list");
                if (li != npos) g.targets.push_back(li);
            }
        if (j.contains("comments"))
            for (const auto& c : j["comments"]) g.comments.push_back(c.get<std::string>());
    } catch (const nlohmann::json::exception& ex) {
        throw ModelError(std::string("malformed model document: ") + ex.what());
    }
    g.finalize();
    return g;
}

nlohmann::json stg_to_json(const Stg& g) {
    nlohmann::json j;
    j["clocks"] = g.clocks;
    auto& locs = j["locations"] = nlohmann::json::array();
    for (const auto& l : g.locations) {
        nlohmann::json lj{{"name", l.name}, {"owner", owner_name(l.owner)}};
        if (!l.invariant.is_true()) lj["invariant"] = format_constraint(l.invariant, g.clocks);
        locs.push_back(lj);
    }
    auto& edges = j["edges"] = nlohmann::json::array();
    for (const auto& e : g.edges) {
        nlohmann::json ej{{"id", e.id}, {"source", e.source_name}, {"target", e.target_name},
                          {"guard", format_constraint(e.guard, g.clocks)}};
        nlohmann::json rs = nlohmann::json::array();
        for (size_t c : e.resets) rs.push_back(g.clocks[c]);
        ej["resets"] = rs;
        if (e.weight != 1) ej["weight"] = e.weight;
        edges.push_back(ej);
    }
    auto& dists = j["distributions"] = nlohmann::json::object();
    for (const auto& [li, d] : g.distributions) {
        if (d.kind == DistributionSpec::Kind::Uniform)
            dists[g.locations[li].name] = {{"kind", "uniform"}};
        else
            dists[g.locations[li].name] = {{"kind", "exponential"}, {"rate", to_string(d.rate)}};
    }
    nlohmann::json val = nlohmann::json::object();
    for (size_t c = 0; c < g.clocks.size() && c < g.initial_valuation.size(); ++c)
        val[g.clocks[c]] = to_string(g.initial_valuation[c]);
    j["initial"] = {{"location", g.initial_location < g.locations.size() ? g.locations[g.initial_location].name : ""},
                    {"valuation", val}};
    nlohmann::json ts = nlohmann::json::array();
    for (size_t t : g.targets) ts.push_back(g.locations[t].name);
    j["targets"] = ts;
    if (!g.comments.empty()) j["comments"] = g.comments;
    return j;
}

Stg load_stg(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open model file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& ex) {
        throw ModelError("'" + path + "' is not valid JSON: " + ex.what());
    }
    return stg_from_json(j);
}

void save_stg(const Stg& g, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw UsageError("cannot write '" + path + "'");
    out << stg_to_json(g).dump(2) << "\n";
}

}  // namespace stg
