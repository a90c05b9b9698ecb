// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "stg/model.hpp"
#include "stg/sim.hpp"

#include <array>
#include <functional>
#include <optional>
#include <tuple>

namespace stg {

// ---- two-counter machines -----------------------------------------------

struct Instruction {
    enum class Op { Inc, Dec, Jz, Halt };
    Op op = Op::Halt;
    int counter = 0;  // 0 = c1, 1 = c2
    std::string label;
    size_t next = npos;  // Inc/Dec successor; Jz branch taken when the counter is zero
    size_t alt = npos;   // Jz branch taken when the counter is positive
    int line = 0;
};

struct TwoCounterMachine {
    std::vector<Instruction> program;  // program[0] is the initial instruction
    size_t find(const std::string& label) const;  // npos if absent
    std::string to_text() const;
};

// Grammar, one instruction per line, '#' starts a comment:
//   L: inc c1 goto L' | L: dec c2 goto L' | L: jz c1 Lzero Lpos | L: halt
TwoCounterMachine parse_tcm(const std::string& text);
TwoCounterMachine load_tcm(const std::string& path);

struct MachineConfig {
    size_t pc = 0;
    long c1 = 0, c2 = 0;
    long counter(int i) const { return i == 0 ? c1 : c2; }
};

struct MachineRun {
    std::vector<MachineConfig> configs;  // configs[s] = configuration after s steps
    bool halted = false;
    size_t steps() const { return configs.empty() ? 0 : configs.size() - 1; }
    nlohmann::json to_json(const TwoCounterMachine& m) const;
};

// Deterministic run from (l0, 0, 0), truncated after max_steps steps.
// Throws SemanticsError when a decrement meets a zero counter.
MachineRun run_tcm(const TwoCounterMachine& m, size_t max_steps);

// ---- compiled games -----------------------------------------------------

enum class Variant { OneHalf, TimeBounded };
Variant parse_variant(const std::string& s);
const char* variant_name(Variant v);

// Global time budget of the time-bounded construction.
inline constexpr long kTimeBudget = 5;

// What the canned strategies need to know about a location.
enum class Role {
    Plain,      // player move fixed by an equality guard (or delay 0)
    IncB,       // onehalf increment: planned delay 1/2^(c+1)
    DecEntry,   // onehalf decrement: planned delay 1 - 1/2^(c-1)
    ZeroEntry,  // onehalf zero test: pick the branch matching the counter
    TbEntry,    // time-bounded module entry: delay t1
    TbB,        // time-bounded second location: delay t2
    TbGuess,    // zero-check guess
    RemA2,
    RemA0,
    RemB2,
    WidA5,      // multiply-by-3 loop head
    WidA6,      // multiply-by-2 loop head
    BoxCheck,
    BoxGuess,
    BoxRemCheck,
    BoxLoop,    // B5/B6: keep looping or check the multiplication
    BoxForced,  // guards leave at most one edge enabled
};

struct LoopEdge {
    size_t edge = npos;
    size_t clock = npos;
    Rational bound;
    bool on_tie = false;  // also fire when the loop and the main move are due together
};

struct LocationInfo {
    Role role = Role::Plain;
    size_t instr = npos;                    // instruction whose module owns the location
    std::string part;                       // "module", "getprob", "checkz", ...
    std::map<std::string, size_t> edges;    // named outgoing edges ("main", "continue", ...)
    std::vector<LoopEdge> loops;
    size_t value_clock = npos;              // clock holding the encoded value, where relevant
};

struct CompiledGame {
    Variant variant = Variant::OneHalf;
    TwoCounterMachine machine;
    Stg game;
    // Module entry per (instruction, parity); onehalf uses parity 0 only.
    std::vector<std::array<size_t, 2>> entry;
    std::vector<char> is_entry;  // per location
    std::vector<LocationInfo> info;
    // (instruction, parity, gadget) -> gadget entry location
    std::map<std::tuple<size_t, int, std::string>, size_t> anchors;

    size_t anchor(size_t instr, int parity, const std::string& gadget) const;  // npos if absent
    // Module entry reached after `step` faithful steps of `run`.
    size_t entry_at(const MachineRun& run, size_t step) const;
};

// Four clocks x1..x4, uniform delays, Diamond + stochastic locations.
CompiledGame compile_onehalf(const TwoCounterMachine& m);
// Five clocks x1, x2, z, a, b, uniform delays, all three owners.
CompiledGame compile_timebounded(const TwoCounterMachine& m);
CompiledGame compile(const TwoCounterMachine& m, Variant v);

// ---- closed-form laws ---------------------------------------------------

struct GadgetLaw {
    std::string name;
    std::string formula;
    std::vector<std::string> params;
    std::function<Rational(const std::map<std::string, Rational>&)> eval;  // throws DomainError
    Rational operator()(const std::map<std::string, Rational>& p) const { return eval(p); }
};

const std::vector<GadgetLaw>& gadget_laws();
const GadgetLaw& gadget_law(const std::string& name);  // UsageError if unknown

// Sum over the steps of a halting onehalf run of (1/2)^i times the step's hit law
// (getprob for inc, dec-getprob for dec, zerotest for jz), all at zero error.
Rational halting_sum(const TwoCounterMachine& m, const MachineRun& run);

// ---- strategies ---------------------------------------------------------

struct Perturbation {
    enum class Target {
        Total,      // onehalf: the planned delay; time-bounded: t = t1 + t2
        Second,     // time-bounded: t2, with t1 absorbing the change
        RemTotal,   // first Rem iteration of the step: t1 + t2
        RemSecond,  // first Rem iteration of the step: t2
        WidDelay,   // first multiply-by-3 loop of the step
    };
    size_t step = 1;  // 1-based instruction count
    Rational epsilon = 0;
    Target target = Target::Total;
};

// Diamond plays the delays of a faithful simulation of `run`, with an
// optional error injected at one step. `first_step` is the number of steps
// already completed when the run starts (for runs started at a later module).
std::unique_ptr<Strategy> faithful_diamond(const CompiledGame& cg, const MachineRun& run,
                                           std::optional<Perturbation> perturbation = {}, size_t first_step = 0);

struct BoxPolicy {
    enum class Kind { AlwaysContinue, CheckAt };
    Kind kind = Kind::AlwaysContinue;
    size_t step = 0;     // 1-based
    std::string widget;  // checkz, checkx, rem, mula, mulx, widmul
    std::string name() const;
};

BoxPolicy parse_box_policy(const std::string& text);  // "continue" or "check:STEP:WIDGET"
std::vector<BoxPolicy> shipped_box_policies(const CompiledGame& cg, const MachineRun& run);
std::unique_ptr<Strategy> box_strategy(const CompiledGame& cg, const BoxPolicy& policy, size_t first_step = 0);

// ---- exact replay -------------------------------------------------------

struct EntrySnapshot {
    size_t step = 0;
    size_t location = npos;
    Valuation<Rational> valuation;
    Rational elapsed = 0;
};

// Follows the faithful Diamond, an always-continue Box and the continuing
// branch at every stochastic split, in exact arithmetic, recording each module entry.
std::vector<EntrySnapshot> faithful_replay(const CompiledGame& cg, const MachineRun& run, size_t max_steps);

// Module-entry valuation the encoding prescribes after `step` steps ending in `c`.
Valuation<Rational> expected_entry_valuation(Variant v, const MachineConfig& c, size_t step);

// ---- gadget verification ------------------------------------------------

struct GadgetVerification {
    std::string gadget;
    size_t step = 0;
    Rational epsilon = 0;
    std::string law_name;
    Rational law;                       // expected hit probability
    std::map<std::string, Rational> parameters;
    std::optional<Rational> derived;    // our own derivation, when it differs from the stated law
    ReachEstimate estimate;
    double sigma = 0;                   // sqrt(law (1 - law) / samples)
    double z_score = 0;
    bool pass = false;                  // |estimate - law| <= 3 sigma
    nlohmann::json to_json() const;
};

// Gadgets: onehalf getprob, dec-getprob, zerotest; time-bounded checkz,
// checkx, mula, mulx, widmul, zerocheck, halt. Without `step` the first step
// running a suitable instruction is used. `spec.samples` counts accepted runs.
GadgetVerification verify_gadget(const CompiledGame& cg, const MachineRun& run, const std::string& gadget,
                                 const Rational& epsilon, std::optional<size_t> step, SampleSpec spec);

}  // namespace stg
