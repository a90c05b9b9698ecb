// SPDX-License-Identifier: Apache-2.0
#include "stg/tcm.hpp"

#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

namespace stg {

// ---- machines -----------------------------------------------------------

size_t TwoCounterMachine::find(const std::string& label) const {
    for (size_t i = 0; i < program.size(); ++i)
        if (program[i].label == label) return i;
    return npos;
}

std::string TwoCounterMachine::to_text() const {
    std::ostringstream os;
    for (const auto& in : program) {
        os << in.label << ": ";
        std::string c = in.counter == 0 ? "c1" : "c2";
        switch (in.op) {
            case Instruction::Op::Inc: os << "inc " << c << " goto " << program[in.next].label; break;
            case Instruction::Op::Dec: os << "dec " << c << " goto " << program[in.next].label; break;
            case Instruction::Op::Jz:
                os << "jz " << c << " " << program[in.next].label << " " << program[in.alt].label;
                break;
            case Instruction::Op::Halt: os << "halt"; break;
        }
        os << "\n";
    }
    return os.str();
}

TwoCounterMachine parse_tcm(const std::string& text) {
    TwoCounterMachine m;
    std::vector<std::pair<std::string, std::string>> refs;  // (next, alt) labels per instruction
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    static const std::regex label_re(R"([A-Za-z_][A-Za-z0-9_]*)");
    auto fail = [&](const std::string& msg) { return ModelError("line " + std::to_string(lineno) + ": " + msg); };
    while (std::getline(in, line)) {
        ++lineno;
        if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
        // "L:op" without a space: split after the first colon.
        if (auto colon = line.find(':'); colon != std::string::npos) line.insert(colon + 1, " ");
        std::istringstream ls(line);
        std::vector<std::string> tok;
        for (std::string t; ls >> t;) tok.push_back(t);
        if (tok.empty()) continue;
        // Allow "L:" or "L :".
        std::string label = tok[0];
        size_t at = 1;
        if (label.size() > 1 && label.back() == ':') {
            label.pop_back();
        } else if (tok.size() > 1 && tok[1] == ":") {
            at = 2;
        } else {
            throw fail("expected 'LABEL:' at the start of the instruction");
        }
        if (!std::regex_match(label, label_re)) throw fail("bad label '" + label + "'");
        if (m.find(label) != npos) throw fail("duplicate label '" + label + "'");
        std::vector<std::string> rest(tok.begin() + static_cast<long>(at), tok.end());
        if (rest.empty()) throw fail("missing instruction after '" + label + ":'");
        Instruction ins;
        ins.label = label;
        ins.line = lineno;
        auto counter = [&](const std::string& c) {
            if (c == "c1") return 0;
            if (c == "c2") return 1;
            throw fail("unknown counter '" + c + "' (expected c1 or c2)");
        };
        std::pair<std::string, std::string> r;
        const std::string& op = rest[0];
        if (op == "inc" || op == "dec") {
            if (rest.size() != 4 || rest[2] != "goto") throw fail("expected '" + op + " c1|c2 goto LABEL'");
            ins.op = op == "inc" ? Instruction::Op::Inc : Instruction::Op::Dec;
            ins.counter = counter(rest[1]);
            r.first = rest[3];
        } else if (op == "jz") {
            if (rest.size() != 4) throw fail("expected 'jz c1|c2 LABEL LABEL'");
            ins.op = Instruction::Op::Jz;
            ins.counter = counter(rest[1]);
            r = {rest[2], rest[3]};
        } else if (op == "halt") {
            if (rest.size() != 1) throw fail("'halt' takes no operands");
            ins.op = Instruction::Op::Halt;
        } else {
            throw fail("unknown instruction '" + op + "'");
        }
        m.program.push_back(ins);
        refs.push_back(r);
    }
    if (m.program.empty()) throw ModelError("empty program");
    size_t halts = 0;
    for (size_t i = 0; i < m.program.size(); ++i) {
        Instruction& ins = m.program[i];
        auto resolve = [&](const std::string& l) {
            size_t t = m.find(l);
            if (t == npos) throw ModelError("line " + std::to_string(ins.line) + ": undefined label '" + l + "'");
            return t;
        };
        if (ins.op == Instruction::Op::Halt) ++halts;
        if (!refs[i].first.empty()) ins.next = resolve(refs[i].first);
        if (!refs[i].second.empty()) ins.alt = resolve(refs[i].second);
    }
    if (halts == 0) throw ModelError("missing halt instruction");
    if (halts > 1) throw ModelError("more than one halt instruction");
    return m;
}

TwoCounterMachine load_tcm(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ModelError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_tcm(ss.str());
}

nlohmann::json MachineRun::to_json(const TwoCounterMachine& m) const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : configs) arr.push_back({{"label", m.program[c.pc].label}, {"c1", c.c1}, {"c2", c.c2}});
    return {{"halted", halted}, {"steps", steps()}, {"configurations", arr}};
}

MachineRun run_tcm(const TwoCounterMachine& m, size_t max_steps) {
    MachineRun r;
    MachineConfig c;
    r.configs.push_back(c);
    for (size_t s = 0; s < max_steps; ++s) {
        const Instruction& ins = m.program[c.pc];
        long& ctr = ins.counter == 0 ? c.c1 : c.c2;
        switch (ins.op) {
            case Instruction::Op::Halt: r.halted = true; return r;
            case Instruction::Op::Inc:
                ++ctr;
                c.pc = ins.next;
                break;
            case Instruction::Op::Dec:
                if (ctr == 0)
                    throw SemanticsError("step " + std::to_string(s + 1) + ": '" + ins.label + "' decrements a zero counter");
                --ctr;
                c.pc = ins.next;
                break;
            case Instruction::Op::Jz: c.pc = ctr == 0 ? ins.next : ins.alt; break;
        }
        r.configs.push_back(c);
    }
    r.halted = m.program[c.pc].op == Instruction::Op::Halt;
    return r;
}

Variant parse_variant(const std::string& s) {
    if (s == "onehalf") return Variant::OneHalf;
    if (s == "timebounded") return Variant::TimeBounded;
    throw UsageError("unknown variant '" + s + "' (expected onehalf or timebounded)");
}

const char* variant_name(Variant v) { return v == Variant::OneHalf ? "onehalf" : "timebounded"; }

size_t CompiledGame::anchor(size_t instr, int parity, const std::string& gadget) const {
    auto it = anchors.find({instr, parity, gadget});
    return it == anchors.end() ? npos : it->second;
}

size_t CompiledGame::entry_at(const MachineRun& run, size_t step) const {
    if (step >= run.configs.size()) throw UsageError("step " + std::to_string(step) + " is beyond the machine run");
    int parity = variant == Variant::TimeBounded ? static_cast<int>(step % 2) : 0;
    return entry[run.configs[step].pc][parity];
}

// ---- construction helpers -----------------------------------------------

namespace {

Rational pow2(long e) {
    BigInt p = 1;
    p <<= static_cast<unsigned>(e);
    return Rational(p);
}

Rational pow3(long e) {
    BigInt p = 1;
    for (long i = 0; i < e; ++i) p *= 3;
    return Rational(p);
}

class Builder {
public:
    Builder(CompiledGame& cg, std::vector<std::string> clocks) : cg_(cg) { cg_.game.clocks = std::move(clocks); }

    size_t loc(const std::string& name, Owner owner, const std::string& invariant = "", Role role = Role::Plain,
               const std::string& part = "module") {
        Stg& g = cg_.game;
        Location l;
        l.name = name;
        l.owner = owner;
        if (!invariant.empty()) l.invariant = parse_constraint(invariant, g.clocks);
        size_t i = g.locations.size();
        g.locations.push_back(l);
        if (owner == Owner::Stochastic) g.distributions[i] = DistributionSpec{};
        LocationInfo info;
        info.role = role;
        info.instr = instr_;
        info.part = part;
        cg_.info.push_back(info);
        return i;
    }

    size_t sink(const std::string& name, const std::string& part) { return loc(name, Owner::Diamond, "", Role::Plain, part); }

    size_t target(const std::string& name, const std::string& part) {
        size_t t = loc(name, Owner::Diamond, "", Role::Plain, part);
        cg_.game.targets.push_back(t);
        return t;
    }

    size_t edge(size_t src, size_t dst, const std::string& guard, const std::vector<std::string>& resets,
                long weight = 1, const std::string& key = "") {
        Stg& g = cg_.game;
        Edge e;
        e.source = src;
        e.target = dst;
        e.source_name = g.locations[src].name;
        e.target_name = g.locations[dst].name;
        e.id = e.source_name + ">" + e.target_name;
        if (!ids_.insert(e.id).second) {
            int n = 2;
            while (!ids_.insert(e.id + "#" + std::to_string(n)).second) ++n;
            e.id += "#" + std::to_string(n);
        }
        if (!guard.empty()) e.guard = parse_constraint(guard, g.clocks);
        for (const auto& r : resets) e.resets.push_back(clock(r));
        std::sort(e.resets.begin(), e.resets.end());
        e.resets.erase(std::unique(e.resets.begin(), e.resets.end()), e.resets.end());
        e.weight = weight;
        size_t i = g.edges.size();
        g.edges.push_back(e);
        if (!key.empty()) cg_.info[src].edges[key] = i;
        return i;
    }

    // Self-loop "x = bound, reset x".
    void loop(size_t l, const std::string& x, long bound, bool on_tie) {
        size_t e = edge(l, l, x + "=" + std::to_string(bound), {x});
        cg_.info[l].loops.push_back({e, clock(x), Rational(bound), on_tie});
    }

    size_t clock(const std::string& x) const {
        size_t c = cg_.game.clock_index(x);
        if (c == npos) throw InternalError("compiler used unknown clock " + x);
        return c;
    }

    void set_instr(size_t i) { instr_ = i; }
    LocationInfo& info(size_t l) { return cg_.info[l]; }

private:
    CompiledGame& cg_;
    size_t instr_ = npos;
    std::set<std::string> ids_;
};

void finish(CompiledGame& cg) {
    Stg& g = cg.game;
    std::sort(g.targets.begin(), g.targets.end());
    g.finalize();
    cg.is_entry.assign(g.locations.size(), 0);
    for (const auto& e : cg.entry)
        for (size_t l : e)
            if (l != npos) cg.is_entry[l] = 1;
    if (!g.unresolved.empty()) throw InternalError("compiled game has unresolved references");
}

// ---- onehalf ------------------------------------------------------------

// GetProb. Guards use u (the clock holding the error-carrying value) and w
// (the companion clock); `zero` is 0 on entry. With `single_loop_restore` the
// G/H/I/J stage loops on w at 3 and leaves at u = 3; otherwise both
// valued clocks loop at 3 and the stage ends at x4 = 1, which restores the
// entry valuation in either order of the two clocks.
size_t build_getprob(Builder& b, const std::string& p, const std::string& part, const std::string& u,
                     const std::string& w, const std::string& zero, bool single_loop_restore) {
    size_t E0 = b.loc(p + ".E0", Owner::Stochastic, "x4<=2", Role::Plain, part);
    size_t P1 = b.loc(p + ".P1", Owner::Stochastic, "x4<=2", Role::Plain, part);
    size_t P2 = b.loc(p + ".P2", Owner::Stochastic, "x4<=2", Role::Plain, part);
    // E1, E2 feed P2; E3, E4 feed P1.
    struct Arm {
        const char* e;
        const char* g;
        std::string guard;
        size_t to;
    };
    std::vector<Arm> arms = {{"E1", "H", u + ">=1 && x4<=1", P2},
                             {"E2", "G", w + ">=2 && x4<=2", P2},
                             {"E3", "I", u + "<=1", P1},
                             {"E4", "J", "x4>=1 && " + w + "<=2", P1}};
    for (const auto& arm : arms) {
        size_t E = b.loc(p + "." + arm.e, Owner::Diamond, "", Role::Plain, part);
        b.edge(E0, E, arm.guard, {});
        size_t G = b.loc(p + "." + arm.g, Owner::Diamond, "", Role::Plain, part);
        b.edge(E, G, "x4=2", {zero, "x4"}, 1, "main");
        if (single_loop_restore) {
            b.loop(G, w, 3, true);
            size_t G1 = b.loc(p + "." + arm.g + "1", Owner::Diamond, "", Role::Plain, part);
            b.edge(G, G1, u + "=3", {u, zero}, 1, "main");
            b.edge(G1, arm.to, "x4=1", {zero, "x4"}, 1, "main");
        } else {
            b.loop(G, u, 3, true);
            b.loop(G, w, 3, true);
            b.edge(G, arm.to, "x4=1", {zero, "x4"}, 1, "main");
        }
    }
    size_t T1 = b.target(p + ".T1", part), T2 = b.target(p + ".T2", part);
    size_t T3 = b.target(p + ".T3", part), T4 = b.target(p + ".T4", part);
    size_t R1 = b.sink(p + ".R1", part), R2 = b.sink(p + ".R2", part);
    size_t R3 = b.sink(p + ".R3", part), R4 = b.sink(p + ".R4", part);
    b.edge(P2, T1, u + "<=1", {});
    b.edge(P2, T2, "x4>=1 && " + w + "<=2", {});
    b.edge(P2, R1, u + ">=1 && x4<=1", {});
    b.edge(P2, R2, w + ">=2 && x4<=2", {});
    b.edge(P1, T3, u + ">=1 && x4<=1", {});
    b.edge(P1, T4, w + ">=2 && x4<=2", {});
    b.edge(P1, R3, u + "<=1", {});
    b.edge(P1, R4, "x4>=1 && " + w + "<=2", {});
    return E0;
}

}  // namespace

CompiledGame compile_onehalf(const TwoCounterMachine& m) {
    CompiledGame cg;
    cg.variant = Variant::OneHalf;
    cg.machine = m;
    Builder b(cg, {"x1", "x2", "x3", "x4"});
    cg.entry.assign(m.program.size(), {npos, npos});
    for (size_t i = 0; i < m.program.size(); ++i) {
        b.set_instr(i);
        const Instruction& ins = m.program[i];
        Role r = ins.op == Instruction::Op::Dec   ? Role::DecEntry
                 : ins.op == Instruction::Op::Jz  ? Role::ZeroEntry
                                                  : Role::Plain;
        cg.entry[i][0] = b.loc(ins.label, Owner::Diamond, "", r);
    }
    for (size_t i = 0; i < m.program.size(); ++i) {
        b.set_instr(i);
        const Instruction& ins = m.program[i];
        const std::string& p = ins.label;
        size_t li = cg.entry[i][0];
        // c2 modules are the c1 modules with x1 and x2 exchanged.
        std::string X = ins.counter == 0 ? "x1" : "x2", Y = ins.counter == 0 ? "x2" : "x1";
        b.info(li).value_clock = b.clock(X);
        switch (ins.op) {
            case Instruction::Op::Inc: {
                size_t next = cg.entry[ins.next][0];
                b.loop(li, Y, 1, false);
                size_t B = b.loc(p + ".B", Owner::Diamond, "", Role::IncB);
                b.loop(B, Y, 1, false);
                size_t C = b.loc(p + ".C", Owner::Stochastic, "x4=0");
                size_t D = b.loc(p + ".D", Owner::Diamond);
                b.loop(D, Y, 1, false);
                b.edge(li, B, X + "=1", {X, "x4"}, 1, "main");
                b.edge(B, C, X + ">0 && x3<1", {"x4"}, 1, "main");
                b.edge(C, D, "", {X}, 1, "continue");
                size_t E0 = build_getprob(b, p, "getprob", X, "x3", Y, true);
                b.edge(C, E0, "", {Y}, 1, "gadget");
                b.edge(D, next, "x3=1", {"x3", "x4"}, 1, "main");
                cg.anchors[{i, 0, "getprob"}] = E0;
                break;
            }
            case Instruction::Op::Dec: {
                // Reconstructed: t at l_i, zero-delay split at B, continuation through D
                // (reset X, leave at x3 = 1), gadget branch through C (reset Y, leave at X = 1).
                size_t next = cg.entry[ins.next][0];
                b.loop(li, Y, 1, false);
                size_t B = b.loc(p + ".B", Owner::Stochastic, "x4=0");
                size_t D = b.loc(p + ".D", Owner::Diamond);
                b.loop(D, Y, 1, false);
                size_t C = b.loc(p + ".C", Owner::Stochastic, "", Role::Plain, "dec-getprob");
                b.edge(li, B, X + "<1", {"x4"}, 1, "main");
                b.edge(B, D, "", {X}, 1, "continue");
                b.edge(B, C, "", {Y}, 1, "gadget");
                b.edge(D, next, "x3=1", {"x3", "x4"}, 1, "main");
                size_t E0 = build_getprob(b, p, "dec-getprob", "x3", Y, X, false);
                b.edge(C, E0, X + "=1", {X, "x4"});
                cg.anchors[{i, 0, "dec-getprob"}] = E0;
                break;
            }
            case Instruction::Op::Jz: {
                size_t zero = cg.entry[ins.next][0], pos = cg.entry[ins.alt][0];
                size_t B1 = b.loc(p + ".B1", Owner::Stochastic, "x4=0", Role::Plain, "zerotest");
                size_t B2 = b.loc(p + ".B2", Owner::Stochastic, "x4=0", Role::Plain, "zerotest");
                b.edge(li, B1, X + "=1", {}, 1, "zero");
                b.edge(li, B2, X + "<1", {}, 1, "pos");
                b.edge(B1, b.target(p + ".T1", "zerotest"), "", {});
                b.edge(B1, zero, "", {}, 1, "continue");
                b.edge(B2, b.target(p + ".T2", "zerotest"), "", {});
                b.edge(B2, pos, "", {}, 1, "continue");
                cg.anchors[{i, 0, "zerotest"}] = li;
                break;
            }
            case Instruction::Op::Halt:
                break;  // absorbing, not a target
        }
    }
    Stg& g = cg.game;
    g.initial_location = cg.entry[0][0];
    g.initial_valuation = {Rational(1), Rational(1), Rational(0), Rational(0)};
    g.comments.push_back("onehalf reduction of a two-counter machine; module entry invariant x1=1/2^c1, x2=1/2^c2, x3=x4=0");
    finish(cg);
    return cg;
}

// ---- time-bounded -------------------------------------------------------

namespace {

const char* kValueClock[2] = {"x1", "x2"};

// F1 weight towards the failing branch: the Check x widget then tests that the
// second delay equals the entry value divided by (weight + 1).
long checkx_weight(const Instruction& ins) {
    switch (ins.op) {
        case Instruction::Op::Inc: return ins.counter == 0 ? 11 : 17;
        case Instruction::Op::Dec: return ins.counter == 0 ? 2 : 1;
        case Instruction::Op::Jz: return 5;
        case Instruction::Op::Halt: break;
    }
    return 0;
}

size_t build_checkz(Builder& b, const std::string& p) {
    const std::string part = "checkz";
    size_t A0 = b.loc(p + ".A0", Owner::Stochastic, "b=0", Role::Plain, part);
    size_t B0 = b.loc(p + ".B0", Owner::Stochastic, "b<=1", Role::Plain, part);
    size_t D0 = b.loc(p + ".D0", Owner::Stochastic, "b=0", Role::Plain, part);
    size_t E0 = b.loc(p + ".E0", Owner::Diamond, "", Role::Plain, part);
    size_t F0 = b.loc(p + ".F0", Owner::Stochastic, "b<=1", Role::Plain, part);
    b.edge(A0, B0, "", {});
    b.edge(A0, D0, "", {});
    b.edge(B0, b.target(p + ".C0", part), "a<=1", {});
    b.edge(B0, b.sink(p + ".B0miss", part), "a>1", {});
    b.edge(D0, b.sink(p + ".D1", part), "", {});
    b.edge(D0, E0, "", {});
    b.edge(E0, F0, "a=1", {"b"}, 1, "main");
    b.edge(F0, b.target(p + ".G0", part), "z<=2", {});
    b.edge(F0, b.sink(p + ".F0miss", part), "z>2", {});
    return A0;
}

// V holds the entry value, W the freshly written one.
size_t build_checkx(Builder& b, const std::string& p, const std::string& V, const std::string& W, long weight) {
    const std::string part = "checkx";
    size_t A1 = b.loc(p + ".A1", Owner::Stochastic, "b=0", Role::Plain, part);
    size_t B1 = b.loc(p + ".B1", Owner::Stochastic, "b<=1", Role::Plain, part);
    size_t F1 = b.loc(p + ".F1", Owner::Stochastic, "b=0", Role::Plain, part);
    size_t C1 = b.loc(p + ".C1", Owner::Diamond, "", Role::Plain, part);
    size_t D1 = b.loc(p + ".D1", Owner::Diamond, "", Role::Plain, part);
    size_t E1 = b.loc(p + ".E1", Owner::Stochastic, "b<=1", Role::Plain, part);
    b.edge(A1, B1, "", {});
    b.edge(A1, F1, "", {});
    b.edge(B1, b.target(p + ".B1hit", part), W + "<=1", {});
    b.edge(B1, b.sink(p + ".B1miss", part), W + ">1", {});
    b.edge(F1, C1, "", {}, 1, "c1");
    b.edge(F1, b.sink(p + ".C2", part), "", {}, weight, "c2");
    b.edge(C1, D1, "a=1", {"a"}, 1, "main");
    b.edge(D1, E1, V + "=2", {"b"}, 1, "main");
    b.edge(E1, b.target(p + ".E1hit", part), "a<=1", {});
    b.edge(E1, b.sink(p + ".E1miss", part), "a>1", {});
    return A1;
}

// Mul a: hit probability t/2 + (1 - a0)/2 for Rem delay t and Rem entry value a0 of a.
size_t build_mula(Builder& b, const std::string& p) {
    const std::string part = "mula";
    size_t A = b.loc(p + ".A5", Owner::Stochastic, "b=0", Role::Plain, part);
    size_t B3 = b.loc(p + ".B3", Owner::Stochastic, "b<=1", Role::Plain, part);
    size_t C3 = b.loc(p + ".C3", Owner::Diamond, "", Role::Plain, part);
    size_t D3 = b.loc(p + ".D3", Owner::Diamond, "", Role::Plain, part);
    size_t E3 = b.loc(p + ".E3", Owner::Stochastic, "b<=1", Role::Plain, part);
    b.edge(A, B3, "", {});
    b.edge(A, C3, "", {});
    b.edge(B3, b.target(p + ".B3hit", part), "z>1", {});
    b.edge(B3, b.sink(p + ".B3miss", part), "z<=1", {});
    b.edge(C3, D3, "z=1", {"z"}, 1, "main");
    b.edge(D3, E3, "a=2", {"b"}, 1, "main");
    b.edge(E3, b.target(p + ".E3hit", part), "z>1", {});
    b.edge(E3, b.sink(p + ".E3miss", part), "z<=1", {});
    return A;
}

// Mul x: X holds the second Rem delay, Y the source value plus the Rem delay.
size_t build_mulx(Builder& b, const std::string& p, const std::string& X, const std::string& Y) {
    const std::string part = "mulx";
    size_t A4 = b.loc(p + ".A4", Owner::Stochastic, "b=0", Role::Plain, part);
    size_t B4 = b.loc(p + ".B4", Owner::Diamond, "", Role::Plain, part);
    size_t C4 = b.loc(p + ".C4", Owner::Stochastic, "z<=1", Role::Plain, part);
    size_t H = b.loc(p + ".H", Owner::Stochastic, "b=0", Role::Plain, part);
    size_t E4 = b.loc(p + ".E4", Owner::Stochastic, "b<=1", Role::Plain, part);
    b.edge(A4, B4, "", {});
    b.edge(A4, H, "", {});
    b.edge(B4, C4, "z=1", {"z"}, 1, "main");
    b.edge(C4, b.target(p + ".C4hit", part), Y + "<=2", {});
    b.edge(C4, b.sink(p + ".C4miss", part), Y + ">2", {});
    b.edge(H, b.sink(p + ".H1", part), "", {}, 5);
    b.edge(H, E4, "", {}, 1);
    b.edge(E4, b.target(p + ".E4hit", part), X + ">=1", {});
    b.edge(E4, b.sink(p + ".E4miss", part), X + "<1", {});
    return A4;
}

struct MulLoop {
    size_t head = npos;  // A5 / A6
    size_t exit = npos;  // E5 / E6, Box location whose guards decide
};

// Loop multiplying the value in X by `factor` per round. The Box may check a
// round at J: the hit probability from J is (1-t)/4 + v/2 for factor 3 and
// (1-t)/2 + v/2 for factor 2, with t the round's delay and v the value before it.
MulLoop build_mul_loop(Builder& b, const std::string& p, const std::string& X, int factor, Role head_role) {
    const std::string part = "widmul";
    MulLoop m;
    m.head = b.loc(p + ".A", Owner::Diamond, "", head_role, part);
    b.info(m.head).value_clock = b.clock(X);
    size_t B = b.loc(p + ".B", Owner::Box, "b=0", Role::BoxLoop, part);
    size_t J = b.loc(p + ".J", Owner::Stochastic, "b=0", Role::Plain, part);
    size_t L = b.loc(p + ".L", Owner::Stochastic, "b<=1", Role::Plain, part);
    size_t P = b.loc(p + ".P", Owner::Diamond, "", Role::Plain, part);
    size_t Q = b.loc(p + ".Q", Owner::Diamond, "", Role::Plain, part);
    size_t R = b.loc(p + ".R", Owner::Stochastic, "b<=1", Role::Plain, part);
    m.exit = b.loc(p + ".E", Owner::Box, "b=0", Role::BoxForced, part);
    b.edge(m.head, B, X + "<=1", {"b"}, 1, "loop");
    b.edge(m.head, m.exit, X + "<=1", {"b"}, 1, "stop");
    b.edge(m.head, b.sink(p + ".Over", part), X + ">1", {}, 1, "sink");
    b.edge(B, m.head, X + "<=1", {"a"}, 1, "continue");
    b.edge(B, J, "", {}, 1, "check");
    if (factor == 3) {
        size_t K = b.loc(p + ".K", Owner::Stochastic, "b=0", Role::Plain, part);
        b.edge(J, K, "", {});
        b.edge(K, L, "", {});
        b.edge(K, b.sink(p + ".K1", part), "", {});
    } else {
        b.edge(J, L, "", {});
    }
    b.edge(J, P, "", {});
    b.edge(L, b.target(p + ".Lhit", part), "a<=1", {});
    b.edge(L, b.sink(p + ".Lmiss", part), "a>1", {});
    b.edge(P, Q, "a=1", {"a"}, 1, "main");
    b.edge(Q, R, X + "=2", {"b"}, 1, "main");
    b.edge(R, b.target(p + ".Rhit", part), "a<=1", {});
    b.edge(R, b.sink(p + ".Rmiss", part), "a>1", {});
    return m;
}

// Final coin once the value clock should read 1.
size_t build_final_coin(Builder& b, const std::string& p, const std::string& part) {
    size_t G = b.loc(p, Owner::Stochastic, "b=0", Role::Plain, part);
    b.edge(G, b.target(p + "hit", part), "", {});
    b.edge(G, b.sink(p + "miss", part), "", {});
    return G;
}

// Wid for the guess `zero` about counter `tested`, value in X. The first loop
// strips the other counter's prime; on the positive side a second loop strips
// the tested counter's prime, after which X must read 1.
size_t build_wid(Builder& b, const std::string& p, const std::string& X, int tested, bool zero) {
    int strip_other = tested == 0 ? 3 : 2, strip_tested = tested == 0 ? 2 : 3;
    MulLoop first = build_mul_loop(b, p + ".W5", X, strip_other, Role::WidA5);
    if (zero) {
        b.edge(first.exit, build_final_coin(b, p + ".G5", "wid"), X + "=1", {}, 1, "one");
        b.edge(first.exit, b.sink(p + ".R5", "wid"), X + "<1", {}, 1, "below");
    } else {
        MulLoop second = build_mul_loop(b, p + ".W6", X, strip_tested, Role::WidA6);
        b.edge(first.exit, b.sink(p + ".I5", "wid"), X + "=1", {}, 1, "one");
        b.edge(first.exit, second.head, X + "<1", {"a"}, 1, "below");
        b.edge(second.exit, build_final_coin(b, p + ".G6", "wid"), X + "=1", {}, 1, "one");
        b.edge(second.exit, b.sink(p + ".R6", "wid"), X + "<1", {}, 1, "below");
    }
    return first.head;
}

// Rem chain for one guess branch: Rem widgets writing into x1 and x2 in
// turn, each doubling a, until a = 1 hands over to Wid. Returns the A2
// location per destination clock.
std::array<size_t, 2> build_rem_chain(Builder& b, const std::string& p, int tested, bool zero) {
    std::array<size_t, 2> a2{}, wid{};
    for (int d = 0; d < 2; ++d) {
        a2[d] = b.loc(p + ".Rem" + kValueClock[d] + ".A2", Owner::Diamond, "z=0", Role::RemA2, "rem");
        b.info(a2[d]).value_clock = b.clock(kValueClock[d]);
    }
    for (int d = 0; d < 2; ++d) wid[d] = build_wid(b, p + ".Wid" + kValueClock[d], kValueClock[d], tested, zero);
    for (int d = 0; d < 2; ++d) {
        std::string X = kValueClock[d], Y = kValueClock[1 - d];
        std::string q = p + ".Rem" + X;
        size_t T = b.loc(q + ".T", Owner::Stochastic, "z=0", Role::Plain, "rem");
        size_t A0 = b.loc(q + ".A0", Owner::Diamond, "", Role::RemA0, "rem");
        size_t B2 = b.loc(q + ".B2", Owner::Diamond, "", Role::RemB2, "rem");
        size_t C = b.loc(q + ".Check", Owner::Box, "b=0", Role::BoxRemCheck, "rem");
        b.info(A0).value_clock = b.info(B2).value_clock = b.info(C).value_clock = b.clock(X);
        b.edge(a2[d], A0, "a<=1/2", {}, 1, "continue");
        b.edge(a2[d], T, "a=1/2 && " + Y + "=1/6", {}, 1, "base");
        // Both counters are zero here: a hit only on the zero guess.
        if (zero) b.edge(T, b.target(q + ".Thit", "rem"), "", {});
        else b.edge(T, b.sink(q + ".Tmiss2", "rem"), "", {});
        b.edge(T, b.sink(q + ".Tmiss", "rem"), "", {});
        b.edge(A0, B2, X + "<=1", {X}, 1, "main");
        b.edge(B2, C, X + "<=1", {"b"}, 1, "main");
        b.edge(C, a2[1 - d], "a<1", {"z", Y}, 1, "continue");
        b.edge(C, wid[d], "a=1", {"a"}, 1, "wid");
        b.edge(C, build_mula(b, q + ".MulA"), "", {}, 1, "mula");
        b.edge(C, build_mulx(b, q + ".MulX", X, Y), "", {}, 1, "mulx");
    }
    return a2;
}

std::string parity_name(int parity) { return parity == 0 ? "even" : "odd"; }

}  // namespace

CompiledGame compile_timebounded(const TwoCounterMachine& m) {
    CompiledGame cg;
    cg.variant = Variant::TimeBounded;
    cg.machine = m;
    Builder b(cg, {"x1", "x2", "z", "a", "b"});
    cg.entry.assign(m.program.size(), {npos, npos});
    for (size_t i = 0; i < m.program.size(); ++i) {
        b.set_instr(i);
        const Instruction& ins = m.program[i];
        for (int par = 0; par < 2; ++par) {
            std::string name = ins.label + "." + parity_name(par);
            size_t l = ins.op == Instruction::Op::Halt
                           ? b.loc(name, Owner::Stochastic, "b<=0", Role::Plain, "halt")
                           : b.loc(name, Owner::Diamond, "", Role::TbEntry);
            b.info(l).value_clock = b.clock(kValueClock[par]);
            cg.entry[i][par] = l;
        }
    }
    for (size_t i = 0; i < m.program.size(); ++i) {
        b.set_instr(i);
        const Instruction& ins = m.program[i];
        if (ins.op == Instruction::Op::Halt) {
            for (int par = 0; par < 2; ++par) {
                size_t l = cg.entry[i][par];
                std::string p = ins.label + "." + parity_name(par);
                b.edge(l, b.target(p + ".hit", "halt"), "", {});
                b.edge(l, b.sink(p + ".miss", "halt"), "", {});
                cg.anchors[{i, par, "halt"}] = l;
            }
            continue;
        }
        // Guess branches share their Rem/Wid chains between parities.
        std::array<size_t, 2> rem_eq{}, rem_gt{};
        if (ins.op == Instruction::Op::Jz) {
            rem_eq = build_rem_chain(b, ins.label + ".eq", ins.counter, true);
            rem_gt = build_rem_chain(b, ins.label + ".gt", ins.counter, false);
        }
        for (int par = 0; par < 2; ++par) {
            std::string p = ins.label + "." + parity_name(par);
            std::string V = kValueClock[par], W = kValueClock[1 - par];
            size_t li = cg.entry[i][par];
            size_t B = b.loc(p + ".B", Owner::Diamond, "", Role::TbB);
            size_t Check = b.loc(p + ".Check", Owner::Box, "b=0", Role::BoxCheck);
            b.info(B).value_clock = b.info(Check).value_clock = b.clock(V);
            b.edge(li, B, "a<1", {W}, 1, "main");
            b.edge(B, Check, "a<1", {"b"}, 1, "main");
            size_t cz = build_checkz(b, p + ".chkz");
            size_t cx = build_checkx(b, p + ".chkx", V, W, checkx_weight(ins));
            b.edge(Check, cz, "", {}, 1, "checkz");
            b.edge(Check, cx, "", {}, 1, "checkx");
            cg.anchors[{i, par, "checkz"}] = cz;
            cg.anchors[{i, par, "checkx"}] = cx;
            if (ins.op != Instruction::Op::Jz) {
                b.edge(Check, cg.entry[ins.next][1 - par], "", {V, "a"}, 1, "continue");
                continue;
            }
            size_t D = b.loc(p + ".D", Owner::Diamond, "b=0", Role::TbGuess, "zerocheck");
            size_t EQ = b.loc(p + ".EQ", Owner::Box, "b=0", Role::BoxGuess, "zerocheck");
            size_t GT = b.loc(p + ".GT", Owner::Box, "b=0", Role::BoxGuess, "zerocheck");
            b.edge(Check, D, "", {V}, 1, "continue");
            b.edge(D, EQ, "", {}, 1, "zero");
            b.edge(D, GT, "", {}, 1, "pos");
            b.edge(EQ, cg.entry[ins.next][1 - par], "", {"a"}, 1, "continue");
            b.edge(GT, cg.entry[ins.alt][1 - par], "", {"a"}, 1, "continue");
            // The Rem chain writes into the clock cleared at Check.
            b.edge(EQ, rem_eq[par], "", {"z"}, 1, "rem");
            b.edge(GT, rem_gt[par], "", {"z"}, 1, "rem");
            cg.anchors[{i, par, "zerocheck"}] = D;
            cg.anchors[{i, par, "rem-eq"}] = rem_eq[par];
            cg.anchors[{i, par, "rem-gt"}] = rem_gt[par];
        }
    }
    Stg& g = cg.game;
    g.initial_location = cg.entry[0][0];
    g.initial_valuation = {Rational(1), Rational(0), Rational(0), Rational(0), Rational(0)};
    g.comments.push_back("time-bounded reduction of a two-counter machine; at step k the value clock (x1 for even k, x2 for odd k) holds 1/(2^(k+c1) 3^(k+c2)) and z = 1 - 1/2^k");
    g.comments.push_back("Rem widgets continue on a<=1/2 so that a=1/2 without the base case still proceeds");
    finish(cg);
    return cg;
}

CompiledGame compile(const TwoCounterMachine& m, Variant v) {
    return v == Variant::OneHalf ? compile_onehalf(m) : compile_timebounded(m);
}

// ---- laws ---------------------------------------------------------------

namespace {

Rational param(const std::map<std::string, Rational>& p, const std::string& name) {
    auto it = p.find(name);
    if (it == p.end()) throw DomainError("missing law parameter '" + name + "'");
    return it->second;
}

long int_param(const std::map<std::string, Rational>& p, const std::string& name) {
    Rational r = param(p, name);
    if (!is_integer(r) || r < 0) throw DomainError("law parameter '" + name + "' must be a non-negative integer");
    return to_long_exact(r, name.c_str());
}

void require(bool ok, const std::string& what) {
    if (!ok) throw DomainError(what);
}

Rational in_unit(Rational r, const std::string& law) {
    if (r < 0 || r > 1) throw InternalError(law + " law left [0,1]");
    return r;
}

std::vector<GadgetLaw> make_laws() {
    std::vector<GadgetLaw> laws;
    const Rational half(1, 2), quarter(1, 4);
    laws.push_back({"getprob", "1/2 (1 - 4 eps^2)", {"epsilon", "c"}, [=](const auto& p) {
                        Rational e = param(p, "epsilon");
                        long c = int_param(p, "c");
                        Rational lim = 1 / pow2(c + 1);
                        require(e > -lim && e < lim, "getprob: |epsilon| must be below 1/2^(c+1)");
                        return in_unit(half * (1 - 4 * e * e), "getprob");
                    }});
    auto dec_domain = [](const std::map<std::string, Rational>& p) {
        Rational e = param(p, "epsilon");
        long c = int_param(p, "c");
        require(c >= 1, "dec-getprob: the counter must be positive");
        require(e >= 2 / pow2(c) - 1 && e < 1 / pow2(c), "dec-getprob: epsilon must lie in [2/2^c - 1, 1/2^c)");
        return e;
    };
    laws.push_back({"dec-getprob", "1/2 (1 - 2 eps^2)", {"epsilon", "c"}, [=](const auto& p) {
                        Rational e = dec_domain(p);
                        return in_unit(half * (1 - 2 * e * e), "dec-getprob");
                    }});
    laws.push_back({"dec-getprob-derived", "1/2 (1 - eps^2)", {"epsilon", "c"}, [=](const auto& p) {
                        Rational e = dec_domain(p);
                        return in_unit(half * (1 - e * e), "dec-getprob-derived");
                    }});
    laws.push_back({"zerotest", "1", {}, [](const auto&) { return Rational(1); }});
    laws.push_back({"checkz", "1/2 (1 - t) + 1/4 * 1/2^k", {"t", "k"}, [=](const auto& p) {
                        Rational t = param(p, "t");
                        long k = int_param(p, "k");
                        require(t >= 0 && t < 1, "checkz: t must lie in [0,1)");
                        return in_unit(half * (1 - t) + quarter / pow2(k), "checkz");
                    }});
    laws.push_back({"checkx", "1/2 (1 - t2) + n / (2 (w + 1))", {"t2", "n", "w"}, [=](const auto& p) {
                        Rational t2 = param(p, "t2"), n = param(p, "n");
                        long w = int_param(p, "w");
                        require(t2 >= 0 && t2 <= 1, "checkx: t2 must lie in [0,1]");
                        require(n > 0 && n <= 1, "checkx: n must lie in (0,1]");
                        require(w >= 1, "checkx: weight must be positive");
                        return in_unit(half * (1 - t2) + n / (2 * (w + 1)), "checkx");
                    }});
    laws.push_back({"mula", "t/2 + (1 - a)/2", {"t", "a"}, [=](const auto& p) {
                        Rational t = param(p, "t"), a = param(p, "a");
                        require(t >= 0 && t <= 1, "mula: t must lie in [0,1]");
                        require(a > 0 && a <= 1, "mula: a must lie in (0,1]");
                        return in_unit(half * t + half * (1 - a), "mula");
                    }});
    laws.push_back({"mulx", "(1 - n)/2 + t2/12", {"t2", "n"}, [=](const auto& p) {
                        Rational t2 = param(p, "t2"), n = param(p, "n");
                        require(t2 >= 0 && t2 <= 1, "mulx: t2 must lie in [0,1]");
                        require(n > 0 && n <= 1, "mulx: n must lie in (0,1]");
                        return in_unit(half * (1 - n) + t2 / 12, "mulx");
                    }});
    laws.push_back({"wid-triple", "(1 - t)/4 + v/2", {"t", "v"}, [=](const auto& p) {
                        Rational t = param(p, "t"), v = param(p, "v");
                        require(t >= 0 && t <= 1 && v > 0 && v <= 1, "wid-triple: t in [0,1], v in (0,1]");
                        return in_unit(quarter * (1 - t) + half * v, "wid-triple");
                    }});
    laws.push_back({"wid-double", "(1 - t)/2 + v/2", {"t", "v"}, [=](const auto& p) {
                        Rational t = param(p, "t"), v = param(p, "v");
                        require(t >= 0 && t <= 1 && v > 0 && v <= 1, "wid-double: t in [0,1], v in (0,1]");
                        return in_unit(half * (1 - t) + half * v, "wid-double");
                    }});
    laws.push_back({"zerocheck", "1/2", {}, [=](const auto&) { return half; }});
    laws.push_back({"halt", "1/2", {}, [=](const auto&) { return half; }});
    return laws;
}

}  // namespace

const std::vector<GadgetLaw>& gadget_laws() {
    static const std::vector<GadgetLaw> laws = make_laws();
    return laws;
}

const GadgetLaw& gadget_law(const std::string& name) {
    for (const auto& l : gadget_laws())
        if (l.name == name) return l;
    throw UsageError("unknown gadget law '" + name + "'");
}

Rational halting_sum(const TwoCounterMachine& m, const MachineRun& run) {
    if (!run.halted) throw UsageError("the halting sum needs a halting run");
    Rational sum = 0, weight = 1;
    for (size_t s = 0; s < run.steps(); ++s) {
        const MachineConfig& c = run.configs[s];
        const Instruction& ins = m.program[c.pc];
        weight /= 2;
        Rational law;
        std::map<std::string, Rational> p{{"epsilon", Rational(0)}, {"c", Rational(c.counter(ins.counter))}};
        switch (ins.op) {
            case Instruction::Op::Inc: law = gadget_law("getprob")(p); break;
            case Instruction::Op::Dec: law = gadget_law("dec-getprob")(p); break;
            case Instruction::Op::Jz: law = gadget_law("zerotest")({}); break;
            case Instruction::Op::Halt: break;
        }
        sum += weight * law;
    }
    return sum;
}

// ---- strategies ---------------------------------------------------------

namespace {

template <class T>
T conv(const Rational& r) {
    if constexpr (std::is_same_v<T, double>) return to_double(r);
    else return r;
}

constexpr double kTieTolerance = 1e-9;

template <class T>
bool same_value(const T& a, const T& b) {
    if constexpr (std::is_same_v<T, double>) return std::abs(a - b) <= kTieTolerance;
    else return a == b;
}

template <class T>
struct Move {
    T delay;
    size_t edge;
};

// Step bookkeeping shared by both players' logic, fed from the run history.
struct StepTracker {
    size_t first_step = 0;
    size_t completed = 0;  // module entries seen in this run
    size_t seen = 0;       // history prefix already processed
    int rem_moves = 0, loop_moves = 0, remcheck_visits = 0, loop_visits = 0;

    void reset() { *this = StepTracker{first_step}; }

    void sync(const CompiledGame& cg, const std::vector<size_t>& history) {
        for (; seen < history.size(); ++seen) {
            const Edge& e = cg.game.edges[history[seen]];
            if (e.target != e.source && cg.is_entry[e.target]) {
                ++completed;
                rem_moves = loop_moves = remcheck_visits = loop_visits = 0;
            }
        }
    }
    size_t config_index(const MachineRun& run) const {
        return std::min(first_step + completed, run.configs.size() - 1);
    }
};

size_t named_edge(const CompiledGame& cg, size_t loc, const std::string& key) {
    const auto& m = cg.info[loc].edges;
    auto it = m.find(key);
    if (it != m.end()) return it->second;
    if (key == "main" && cg.game.out[loc].size() == 1) return cg.game.out[loc][0];
    return npos;
}

// Entry value 1/(2^(k+c1) 3^(k+c2)) of the time-bounded encoding.
Rational tb_value(const MachineConfig& c, size_t k) {
    return 1 / (pow2(static_cast<long>(k) + c.c1) * pow3(static_cast<long>(k) + c.c2));
}

long tb_divisor(const Instruction& ins) { return checkx_weight(ins) + 1; }

struct TbPlan {
    Rational t1, t2;
};

TbPlan tb_plan(const CompiledGame& cg, const MachineRun& run, size_t k, Rational eps_total, Rational eps_second) {
    const MachineConfig& c = run.configs[k];
    const Instruction& ins = cg.machine.program[c.pc];
    Rational t2 = tb_value(c, k) / tb_divisor(ins);
    Rational t1 = 1 / pow2(static_cast<long>(k) + 1) - t2;
    return {t1 + eps_total - eps_second, t2 + eps_second};
}

template <class T>
class FaithfulLogic {
public:
    FaithfulLogic(const CompiledGame& cg, const MachineRun& run, std::optional<Perturbation> pert, size_t first_step)
        : cg_(&cg), run_(&run), pert_(std::move(pert)) {
        tracker_.first_step = first_step;
        if (run.configs.empty()) throw UsageError("empty machine run");
    }

    void reset() {
        tracker_.reset();
        pending_t2_.reset();
    }

    Move<T> decide(size_t loc, const std::vector<T>& v, const T& dwell, const std::vector<size_t>& history) {
        tracker_.sync(*cg_, history);
        const LocationInfo& info = cg_->info[loc];
        size_t k = tracker_.config_index(*run_);
        const MachineConfig& cfg = run_->configs[k];
        const Stg& g = cg_->game;
        auto eps = [&](Perturbation::Target target) {
            return pert_ && pert_->step == k + 1 && pert_->target == target ? pert_->epsilon : Rational(0);
        };
        auto clock = [&](const char* name) { return g.clock_index(name); };
        const Instruction* ins = info.instr == npos ? nullptr : &cg_->machine.program[info.instr];
        switch (info.role) {
            case Role::IncB: {
                long c = cfg.counter(ins->counter);
                Rational planned = 1 / pow2(c + 1) + eps(Perturbation::Target::Total);
                return with_loops(loc, v, named_edge(*cg_, loc, "main"), conv<T>(planned) - dwell);
            }
            case Role::DecEntry: {
                long c = cfg.counter(ins->counter);
                Rational planned = 1 - (c >= 1 ? 1 / pow2(c - 1) : Rational(2)) + eps(Perturbation::Target::Total);
                return with_loops(loc, v, named_edge(*cg_, loc, "main"), conv<T>(planned) - dwell);
            }
            case Role::ZeroEntry: {
                size_t e = named_edge(*cg_, loc, cfg.counter(ins->counter) == 0 ? "zero" : "pos");
                return with_loops(loc, v, e, eq_delay(v, g.edges[e]));
            }
            case Role::TbEntry:
            case Role::TbB: {
                TbPlan plan = tb_plan(*cg_, *run_, k, eps(Perturbation::Target::Total), eps(Perturbation::Target::Second));
                return {clamp(conv<T>(info.role == Role::TbEntry ? plan.t1 : plan.t2)), named_edge(*cg_, loc, "main")};
            }
            case Role::TbGuess:
                return {T(0), named_edge(*cg_, loc, cfg.counter(ins->counter) == 0 ? "zero" : "pos")};
            case Role::RemA2: {
                size_t base = named_edge(*cg_, loc, "base");
                if (satisfies(v, g.edges[base].guard)) return {T(0), base};
                return {T(0), named_edge(*cg_, loc, "continue")};
            }
            case Role::RemA0: {
                size_t X = info.value_clock, Y = X == clock("x1") ? clock("x2") : clock("x1");
                bool first = tracker_.rem_moves++ == 0;
                T t2 = T(6) * v[Y];
                T t1 = v[clock("a")] - t2;
                if (first) {
                    Rational et = eps(Perturbation::Target::RemTotal), es = eps(Perturbation::Target::RemSecond);
                    t1 += conv<T>(et - es);
                    t2 += conv<T>(es);
                }
                pending_t2_ = t2;
                return {clamp(t1), named_edge(*cg_, loc, "main")};
            }
            case Role::RemB2:
                return {clamp(pending_t2_.value_or(T(0))), named_edge(*cg_, loc, "main")};
            case Role::WidA5:
            case Role::WidA6: {
                int tested = ins->counter;
                bool first_loop = info.role == Role::WidA5;
                // The first loop strips the other counter's prime, the second the tested one's.
                int factor = (tested == 0) == first_loop ? 3 : 2;
                Rational goal = first_loop ? 1 / (tested == 0 ? pow2(cfg.c1) : pow3(cfg.c2)) : Rational(1);
                const T& x = v[info.value_clock];
                if (same_value(x, conv<T>(goal)) || x > conv<T>(goal)) return {T(0), named_edge(*cg_, loc, "stop")};
                T d = T(factor - 1) * x;
                if (tracker_.loop_moves++ == 0) d += conv<T>(eps(Perturbation::Target::WidDelay));
                return {clamp(d), named_edge(*cg_, loc, "loop")};
            }
            default: break;
        }
        size_t main = named_edge(*cg_, loc, "main");
        if (main == npos) {
            // Fall back to the earliest enabled move.
            for (size_t e : g.out[loc]) {
                auto iv = enabled_interval<T>(g, loc, v, g.edges[e]);
                if (!iv.empty) return {iv.lo_closed ? iv.lo : iv.lo + (iv.hi_inf ? T(1) : (iv.hi - iv.lo)) / T(2), e};
            }
            throw IllegalMove("no enabled move at " + g.locations[loc].name);
        }
        return with_loops(loc, v, main, eq_delay(v, g.edges[main]));
    }

private:
    static T clamp(const T& d) { return d < T(0) ? T(0) : d; }

    // Delay after which every equality atom of the guard holds (0 if none).
    static T eq_delay(const std::vector<T>& v, const Edge& e) {
        T d(0);
        for (const Atom& a : e.guard.atoms)
            if (a.rel == Rel::Eq) d = std::max(d, T(atom_bound<T>(a) - v[a.clock]));
        return d;
    }

    // Takes a reset loop when its clock reaches the bound before the main move is due.
    Move<T> with_loops(size_t loc, const std::vector<T>& v, size_t main, T main_delay) const {
        main_delay = clamp(main_delay);
        const LoopEdge* best = nullptr;
        T best_delay(0);
        T tol(0);
        if constexpr (std::is_same_v<T, double>) tol = kTieTolerance;
        for (const LoopEdge& l : cg_->info[loc].loops) {
            T d = conv<T>(l.bound) - v[l.clock];
            if (d < -tol) continue;
            d = clamp(d);
            bool due = d < main_delay - tol || (l.on_tie && d <= main_delay + tol);
            if (due && (!best || d < best_delay)) {
                best = &l;
                best_delay = d;
            }
        }
        if (best) return {best_delay, best->edge};
        if (main == npos) throw InternalError("no main edge at " + cg_->game.locations[loc].name);
        return {main_delay, main};
    }

    const CompiledGame* cg_;
    const MachineRun* run_;
    std::optional<Perturbation> pert_;
    StepTracker tracker_;
    std::optional<T> pending_t2_;
};

bool is_rem_widget(const std::string& w) { return w == "rem" || w == "mula" || w == "mulx" || w == "widmul"; }

template <class T>
class BoxLogic {
public:
    BoxLogic(const CompiledGame& cg, BoxPolicy policy, size_t first_step) : cg_(&cg), policy_(std::move(policy)) {
        tracker_.first_step = first_step;
    }
    void reset() { tracker_.reset(); }

    Move<T> decide(size_t loc, const std::vector<T>& v, const std::vector<size_t>& history) {
        tracker_.sync(*cg_, history);
        const LocationInfo& info = cg_->info[loc];
        size_t step = tracker_.first_step + tracker_.completed + 1;
        bool here = policy_.kind == BoxPolicy::Kind::CheckAt && policy_.step == step;
        const std::string& w = policy_.widget;
        std::string want = "continue";
        switch (info.role) {
            case Role::BoxCheck:
                if (here && (w == "checkz" || w == "checkx")) want = w;
                break;
            case Role::BoxGuess:
                if (here && is_rem_widget(w)) want = "rem";
                break;
            case Role::BoxRemCheck:
                if (here && (w == "mula" || w == "mulx") && tracker_.remcheck_visits == 0) want = w;
                ++tracker_.remcheck_visits;
                break;
            case Role::BoxLoop:
                if (here && w == "widmul" && tracker_.loop_visits == 0) want = "check";
                ++tracker_.loop_visits;
                break;
            default: want.clear(); break;
        }
        const Stg& g = cg_->game;
        auto enabled_now = [&](size_t e) { return e != npos && enabled_interval<T>(g, loc, v, g.edges[e]).contains(T(0)); };
        if (!want.empty()) {
            size_t e = named_edge(*cg_, loc, want);
            if (enabled_now(e)) return {T(0), e};
        }
        // Rem Check: carry on while a < 1, hand over to Wid at a = 1. Others: whatever the guards allow.
        for (const char* k : {"continue", "wid", "one", "below"})
            if (size_t e = named_edge(*cg_, loc, k); enabled_now(e)) return {T(0), e};
        for (size_t e : g.out[loc])
            if (enabled_now(e)) return {T(0), e};
        throw IllegalMove("no move for player Box at " + g.locations[loc].name);
    }

private:
    const CompiledGame* cg_;
    BoxPolicy policy_;
    StepTracker tracker_;
};

class FaithfulDiamond : public Strategy {
public:
    FaithfulDiamond(const CompiledGame& cg, const MachineRun& run, std::optional<Perturbation> p, size_t first)
        : logic_(cg, run, std::move(p), first) {}
    Decision decide(const RunView& view) override {
        Move<double> m = logic_.decide(view.location, *view.valuation, view.dwell, *view.history);
        return {m.delay, m.edge};
    }
    void reset() override { logic_.reset(); }
    std::unique_ptr<Strategy> clone() const override { return std::make_unique<FaithfulDiamond>(*this); }

private:
    FaithfulLogic<double> logic_;
};

class BoxPlayer : public Strategy {
public:
    BoxPlayer(const CompiledGame& cg, const BoxPolicy& policy, size_t first) : logic_(cg, policy, first) {}
    Decision decide(const RunView& view) override {
        Move<double> m = logic_.decide(view.location, *view.valuation, *view.history);
        return {m.delay, m.edge};
    }
    void reset() override { logic_.reset(); }
    std::unique_ptr<Strategy> clone() const override { return std::make_unique<BoxPlayer>(*this); }

private:
    BoxLogic<double> logic_;
};

const Instruction& instruction_at(const CompiledGame& cg, const MachineRun& run, size_t step) {
    if (step == 0 || step > run.configs.size()) throw UsageError("step " + std::to_string(step) + " is outside the machine run");
    return cg.machine.program[run.configs[step - 1].pc];
}

// First multiplication round the faithful Diamond plays in the Wid widgets of
// a zero test at step k+1: the other counter's loop if it runs at all,
// otherwise the tested counter's loop on the positive side.
struct WidRound {
    int factor = 0;
    Rational value;  // clock value before the round
};

std::optional<WidRound> first_wid_round(const CompiledGame& cg, const MachineRun& run, size_t k) {
    const MachineConfig& c = run.configs[k];
    const Instruction& ins = cg.machine.program[c.pc];
    if (ins.op != Instruction::Op::Jz) return std::nullopt;
    int tested = ins.counter;
    long other = c.counter(1 - tested), tv = c.counter(tested);
    if (other > 0) return WidRound{tested == 0 ? 3 : 2, 1 / (pow2(c.c1) * pow3(c.c2))};
    if (tv > 0) return WidRound{tested == 0 ? 2 : 3, 1 / (tested == 0 ? pow2(tv) : pow3(tv))};
    return std::nullopt;
}

// Rejects perturbations that would make the faithful move illegal.
void check_perturbation(const CompiledGame& cg, const MachineRun& run, const Perturbation& p) {
    const Instruction& ins = instruction_at(cg, run, p.step);
    const MachineConfig& c = run.configs[p.step - 1];
    const Rational& e = p.epsilon;
    size_t k = p.step - 1;
    using Tg = Perturbation::Target;
    if (cg.variant == Variant::OneHalf) {
        if (p.target != Tg::Total) throw DomainError("onehalf perturbations apply to the planned delay only");
        long cv = c.counter(ins.counter);
        if (ins.op == Instruction::Op::Inc) {
            Rational lim = 1 / pow2(cv + 1);
            if (!(e > -lim && e < lim)) throw DomainError("epsilon must lie in (-1/2^(c+1), 1/2^(c+1)) = (" + to_string(-lim) + ", " + to_string(lim) + ")");
        } else if (ins.op == Instruction::Op::Dec) {
            if (!(e >= 2 / pow2(cv) - 1 && e < 1 / pow2(cv)))
                throw DomainError("epsilon must lie in [2/2^c - 1, 1/2^c) for this decrement");
        } else if (e != 0) {
            throw DomainError("only increment and decrement steps take a perturbation");
        }
        return;
    }
    if (ins.op == Instruction::Op::Halt) {
        if (e != 0) throw DomainError("the halt step takes no perturbation");
        return;
    }
    TbPlan plan = tb_plan(cg, run, k, 0, 0);
    Rational a0 = 1 / pow2(static_cast<long>(k) + 1), n = tb_value(c, k);
    switch (p.target) {
        case Tg::Total:
            if (!(plan.t1 + e >= 0 && plan.t1 + plan.t2 + e < 1)) throw DomainError("perturbed delays leave [0,1)");
            break;
        case Tg::Second:
            if (!(plan.t2 + e >= 0 && plan.t1 - e >= 0)) throw DomainError("perturbed delays must stay non-negative");
            break;
        case Tg::RemTotal:
            if (!(a0 - n + e >= 0 && 2 * a0 + e <= 1)) throw DomainError("perturbed Rem delay out of range");
            break;
        case Tg::RemSecond:
            if (!(n + e >= 0 && a0 - n - e >= 0)) throw DomainError("perturbed Rem delays must stay non-negative");
            break;
        case Tg::WidDelay: {
            auto round = first_wid_round(cg, run, k);
            if (!round) throw DomainError("this step plays no multiplication round");
            Rational t = (round->factor - 1) * round->value + e;
            if (!(t >= 0 && round->value + t <= 1)) throw DomainError("perturbed loop delay must keep the clock within [0,1]");
            break;
        }
    }
}

}  // namespace

std::unique_ptr<Strategy> faithful_diamond(const CompiledGame& cg, const MachineRun& run, std::optional<Perturbation> p,
                                           size_t first_step) {
    if (p) check_perturbation(cg, run, *p);
    return std::make_unique<FaithfulDiamond>(cg, run, std::move(p), first_step);
}

std::string BoxPolicy::name() const {
    if (kind == Kind::AlwaysContinue) return "continue";
    return "check:" + std::to_string(step) + ":" + widget;
}

BoxPolicy parse_box_policy(const std::string& text) {
    if (text == "continue") return {};
    static const std::regex re(R"(check:(\d+):(checkz|checkx|rem|mula|mulx|widmul))");
    std::smatch m;
    if (!std::regex_match(text, m, re))
        throw UsageError("box policy must be 'continue' or 'check:STEP:WIDGET' with WIDGET one of checkz, checkx, rem, mula, mulx, widmul");
    BoxPolicy p;
    p.kind = BoxPolicy::Kind::CheckAt;
    p.step = std::stoul(m[1]);
    p.widget = m[2];
    if (p.step == 0) throw UsageError("box policy steps count from 1");
    return p;
}

std::vector<BoxPolicy> shipped_box_policies(const CompiledGame& cg, const MachineRun& run) {
    std::vector<BoxPolicy> out{BoxPolicy{}};
    if (cg.variant != Variant::TimeBounded) return out;
    for (size_t s = 1; s <= run.steps(); ++s) {
        const Instruction& ins = cg.machine.program[run.configs[s - 1].pc];
        std::vector<std::string> widgets = {"checkz", "checkx"};
        if (ins.op == Instruction::Op::Jz) widgets.insert(widgets.end(), {"rem", "mula", "mulx", "widmul"});
        if (ins.op == Instruction::Op::Halt) widgets.clear();
        for (const auto& w : widgets) out.push_back({BoxPolicy::Kind::CheckAt, s, w});
    }
    return out;
}

std::unique_ptr<Strategy> box_strategy(const CompiledGame& cg, const BoxPolicy& policy, size_t first_step) {
    return std::make_unique<BoxPlayer>(cg, policy, first_step);
}

// ---- exact replay -------------------------------------------------------

std::vector<EntrySnapshot> faithful_replay(const CompiledGame& cg, const MachineRun& run, size_t max_steps) {
    const Stg& g = cg.game;
    FaithfulLogic<Rational> diamond(cg, run, std::nullopt, 0);
    BoxLogic<Rational> box(cg, BoxPolicy{}, 0);
    size_t loc = g.initial_location;
    Valuation<Rational> v = g.initial_valuation;
    Rational elapsed = 0, dwell_start = 0;
    std::vector<size_t> history;
    std::vector<EntrySnapshot> snaps{{0, loc, v, elapsed}};
    // Generous bound on transitions per step (loops and Rem chains included).
    const size_t limit = 10000 * (max_steps + 1);
    for (size_t n = 0; n < limit && snaps.back().step < max_steps; ++n) {
        if (g.out[loc].empty()) break;
        Move<Rational> mv{Rational(0), npos};
        switch (g.locations[loc].owner) {
            case Owner::Diamond: mv = diamond.decide(loc, v, elapsed - dwell_start, history); break;
            case Owner::Box: mv = box.decide(loc, v, history); break;
            case Owner::Stochastic: mv.edge = named_edge(cg, loc, "continue"); break;
        }
        if (mv.edge == npos) break;  // stochastic location off the simulation path
        Valuation<Rational> next = step<Rational>(g, loc, v, mv.delay, mv.edge);
        elapsed += mv.delay;
        history.push_back(mv.edge);
        size_t target = g.edges[mv.edge].target;
        if (target != loc) {
            dwell_start = elapsed;
            if (cg.is_entry[target]) snaps.push_back({snaps.back().step + 1, target, next, elapsed});
        }
        loc = target;
        v = std::move(next);
    }
    return snaps;
}

Valuation<Rational> expected_entry_valuation(Variant v, const MachineConfig& c, size_t step) {
    if (v == Variant::OneHalf) return {1 / pow2(c.c1), 1 / pow2(c.c2), Rational(0), Rational(0)};
    Valuation<Rational> out(5, Rational(0));
    out[step % 2] = tb_value(c, step);
    out[2] = 1 - 1 / pow2(static_cast<long>(step));
    return out;
}

// ---- gadget verification ------------------------------------------------

nlohmann::json GadgetVerification::to_json() const {
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [k, v] : parameters) params[k] = to_string(v);
    nlohmann::json j = {{"gadget", gadget},
                        {"step", step},
                        {"epsilon", to_string(epsilon)},
                        {"law_name", law_name},
                        {"law_formula", gadget_law(law_name).formula},
                        {"law", to_string(law)},
                        {"law_decimal", to_double(law)},
                        {"parameters", params},
                        {"estimate", estimate.to_json()},
                        {"sigma", sigma},
                        {"z_score", z_score},
                        {"pass", pass}};
    if (derived) j["derived_law"] = {{"value", to_string(*derived)}, {"decimal", to_double(*derived)}};
    return j;
}

namespace {

struct GadgetPlan {
    std::string law_name;
    std::map<std::string, Rational> params;
    Rational scale = 1;  // hit probability = scale * law
    std::optional<Perturbation> perturbation;
    std::optional<BoxPolicy> box;
    size_t anchor = npos;  // onehalf: runs that never enter it are rejected
    std::optional<std::string> derived_law;
};

bool gadget_fits(const CompiledGame& cg, const MachineRun& run, const std::string& gadget, size_t step) {
    if (step == 0 || step > run.configs.size()) return false;
    const Instruction& ins = cg.machine.program[run.configs[step - 1].pc];
    const MachineConfig& c = run.configs[step - 1];
    using Op = Instruction::Op;
    if (cg.variant == Variant::OneHalf) {
        if (gadget == "getprob") return ins.op == Op::Inc;
        if (gadget == "dec-getprob") return ins.op == Op::Dec;
        if (gadget == "zerotest") return ins.op == Op::Jz;
        return false;
    }
    if (gadget == "halt") return ins.op == Op::Halt;
    if (gadget == "checkz" || gadget == "checkx") return ins.op != Op::Halt;
    if (ins.op != Op::Jz) return false;
    bool base_case = step == 1 && c.c1 == 0 && c.c2 == 0;  // Rem ends at T before any Check
    if (gadget == "zerocheck") return true;
    if (gadget == "mula" || gadget == "mulx") return !base_case;
    if (gadget == "widmul") {
        long tested = c.counter(ins.counter), other = c.counter(1 - ins.counter);
        return !base_case && (other > 0 || tested > 0);
    }
    return false;
}

GadgetPlan plan_gadget(const CompiledGame& cg, const MachineRun& run, const std::string& gadget, const Rational& eps,
                       size_t step) {
    GadgetPlan plan;
    const MachineConfig& c = run.configs[step - 1];
    const Instruction& ins = cg.machine.program[c.pc];
    size_t instr = c.pc, k = step - 1;
    using Tg = Perturbation::Target;
    auto perturb = [&](Tg t) { plan.perturbation = Perturbation{step, eps, t}; };
    auto check_at = [&](const std::string& w) { plan.box = BoxPolicy{BoxPolicy::Kind::CheckAt, step, w}; };
    auto no_eps = [&]() {
        if (eps != 0) throw UsageError("gadget " + gadget + " takes no epsilon");
    };
    if (cg.variant == Variant::OneHalf) {
        long cv = c.counter(ins.counter);
        if (gadget == "zerotest") {
            no_eps();
            plan.law_name = "zerotest";
            plan.scale = Rational(1, 2);  // the module enters the test with probability 1/2
            plan.anchor = cg.anchor(instr, 0, "zerotest");
            return plan;
        }
        plan.law_name = gadget;
        plan.params = {{"epsilon", eps}, {"c", Rational(cv)}};
        plan.anchor = cg.anchor(instr, 0, gadget);
        perturb(Tg::Total);
        if (gadget == "dec-getprob") plan.derived_law = "dec-getprob-derived";
        return plan;
    }
    Rational n = tb_value(c, k), a0 = 1 / pow2(static_cast<long>(k) + 1);
    if (gadget == "halt") {
        no_eps();
        plan.law_name = "halt";
    } else if (gadget == "checkz") {
        plan.law_name = "checkz";
        plan.params = {{"t", a0 + eps}, {"k", Rational(static_cast<long>(k))}};
        perturb(Tg::Total);
        check_at("checkz");
    } else if (gadget == "checkx") {
        long w = checkx_weight(ins);
        plan.law_name = "checkx";
        plan.params = {{"t2", n / (w + 1) + eps}, {"n", n}, {"w", Rational(w)}};
        perturb(Tg::Second);
        check_at("checkx");
    } else if (gadget == "mula") {
        plan.law_name = "mula";
        plan.params = {{"t", a0 + eps}, {"a", a0}};
        perturb(Tg::RemTotal);
        check_at("mula");
    } else if (gadget == "mulx") {
        plan.law_name = "mulx";
        plan.params = {{"t2", n + eps}, {"n", n / 6}};
        perturb(Tg::RemSecond);
        check_at("mulx");
    } else if (gadget == "widmul") {
        auto round = first_wid_round(cg, run, k);
        if (!round) throw UsageError("step " + std::to_string(step) + " plays no multiplication round");
        int factor = round->factor;
        Rational v = round->value;
        plan.law_name = factor == 3 ? "wid-triple" : "wid-double";
        plan.params = {{"t", (factor - 1) * v + eps}, {"v", v}};
        perturb(Tg::WidDelay);
        check_at("widmul");
    } else if (gadget == "zerocheck") {
        no_eps();
        plan.law_name = "zerocheck";
        check_at("rem");
    } else {
        throw UsageError("unknown gadget '" + gadget + "'");
    }
    if (!plan.box) plan.box = BoxPolicy{};
    return plan;
}

}  // namespace

GadgetVerification verify_gadget(const CompiledGame& cg, const MachineRun& run, const std::string& gadget,
                                 const Rational& epsilon, std::optional<size_t> step, SampleSpec spec) {
    static const std::vector<std::string> onehalf = {"getprob", "dec-getprob", "zerotest"};
    static const std::vector<std::string> timebounded = {"checkz", "checkx", "mula", "mulx", "widmul", "zerocheck", "halt"};
    const auto& known = cg.variant == Variant::OneHalf ? onehalf : timebounded;
    if (std::find(known.begin(), known.end(), gadget) == known.end()) {
        std::string list;
        for (const auto& k : known) list += (list.empty() ? "" : ", ") + k;
        throw UsageError("gadget '" + gadget + "' is not part of the " + variant_name(cg.variant) + " construction (known: " + list + ")");
    }
    size_t j = 0;
    if (step) {
        if (!gadget_fits(cg, run, gadget, *step))
            throw UsageError("step " + std::to_string(*step) + " does not run gadget " + gadget);
        j = *step;
    } else {
        for (size_t s = 1; s <= run.configs.size() && !j; ++s)
            if (gadget_fits(cg, run, gadget, s)) j = s;
        if (!j) throw UsageError("no step of the machine run exercises gadget " + gadget);
    }
    GadgetPlan plan = plan_gadget(cg, run, gadget, epsilon, j);

    GadgetVerification out;
    out.gadget = gadget;
    out.step = j;
    out.epsilon = epsilon;
    out.law_name = plan.law_name;
    out.parameters = plan.params;
    out.law = plan.scale * gadget_law(plan.law_name)(plan.params);
    if (plan.derived_law) out.derived = plan.scale * gadget_law(*plan.derived_law)(plan.params);

    auto snaps = faithful_replay(cg, run, j - 1);
    if (snaps.size() < j || snaps[j - 1].step != j - 1)
        throw InternalError("faithful replay did not reach step " + std::to_string(j));
    const EntrySnapshot& snap = snaps[j - 1];
    StartState start{snap.location, {}};
    for (const auto& x : snap.valuation) start.valuation.push_back(to_double(x));

    Profile profile;
    profile.diamond = faithful_diamond(cg, run, plan.perturbation, j - 1);
    if (plan.box) profile.box = box_strategy(cg, *plan.box, j - 1);
    spec.start = start;
    if (spec.limits.max_steps < 100000) spec.limits.max_steps = 100000;

    Classifier classify = reach_verdict;
    if (cg.variant == Variant::OneHalf) {
        const std::vector<char>* entries = &cg.is_entry;
        size_t origin = start.location;
        // The module's job ends at the next module entry.
        spec.limits.stop_when = [entries, origin](size_t loc, const std::vector<double>&) {
            return (*entries)[loc] && loc != origin;
        };
        if (plan.anchor != npos && plan.anchor != origin) {
            size_t anchor = plan.anchor;
            const Stg* g = &cg.game;
            spec.count_accepted = true;
            classify = [anchor, g](const RunRecord& r) {
                for (size_t e : r.history)
                    if (g->edges[e].target == anchor) return r.outcome == Outcome::TargetHit ? Verdict::Hit : Verdict::Miss;
                return Verdict::Reject;
            };
        }
    }
    out.estimate = estimate(cg.game, profile, classify, spec);
    double law = to_double(out.law);
    double diff = out.estimate.point - law;
    out.sigma = out.estimate.samples ? std::sqrt(law * (1 - law) / static_cast<double>(out.estimate.samples)) : 0;
    out.z_score = out.sigma > 0 ? diff / out.sigma : (diff == 0 ? 0 : std::copysign(INFINITY, diff));
    out.pass = out.estimate.samples > 0 && std::abs(diff) <= 3 * out.sigma;
    return out;
}

}  // namespace stg
