// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "stg/model.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>

namespace stg {

// ---- single transitions -------------------------------------------------

// Advance by delay, take edge, apply resets. Throws IllegalMove if the delay is
// not in I(s, edge) and ModelError if the target invariant fails on entry.
template <class T>
Valuation<T> step(const Stg& g, size_t loc, const Valuation<T>& v, const T& delay, size_t edge) {
    const Edge& e = g.edges.at(edge);
    if (e.source != loc) throw IllegalMove("edge " + e.id + " does not leave " + g.locations[loc].name);
    if (!enabled_interval<T>(g, loc, v, e).contains(delay))
        throw IllegalMove("delay is not in the enabled interval of edge " + e.id);
    Valuation<T> out = v;
    for (auto& x : out) x += delay;
    for (size_t c : e.resets) out[c] = T(0);
    if (!satisfies(out, g.locations[e.target].invariant))
        throw ModelError("entering " + g.locations[e.target].name + " violates its invariant");
    return out;
}

// ---- strategies ---------------------------------------------------------

struct Decision {
    double delay = 0;
    size_t edge = npos;
};

// What a strategy may look at: the current state and the run prefix.
struct RunView {
    const Stg* game = nullptr;
    size_t location = npos;
    const std::vector<double>* valuation = nullptr;
    double elapsed = 0;
    const std::vector<size_t>* history = nullptr;  // edge indices taken so far
    double dwell = 0;      // time spent in this location since it was entered by a non-self-loop edge
    uint32_t visits = 0;   // entries into this location in the current run, including this one
};

class Strategy {
public:
    virtual ~Strategy() = default;
    virtual Decision decide(const RunView& view) = 0;
    virtual void reset() {}  // called at the start of every run
    virtual std::unique_ptr<Strategy> clone() const = 0;
};

// Per location, the n-th visit plays schedule[n] (the last entry repeats).
class FixedSchedule : public Strategy {
public:
    struct Move {
        Rational delay;
        std::string edge;
    };
    FixedSchedule(const Stg& g, const std::map<std::string, std::vector<Move>>& schedule);
    Decision decide(const RunView& view) override;
    std::unique_ptr<Strategy> clone() const override { return std::make_unique<FixedSchedule>(*this); }

private:
    std::map<size_t, std::vector<std::pair<double, size_t>>> moves_;
};

enum class DelayRule { Fixed, Earliest, Latest, Midpoint };

// Location -> (delay rule, edge). Earliest/Latest/Midpoint refer to the
// chosen edge's enabled interval from the current state.
class Positional : public Strategy {
public:
    struct Rule {
        DelayRule rule = DelayRule::Earliest;
        Rational delay = 0;  // for Fixed
        std::string edge;
    };
    Positional(const Stg& g, const std::map<std::string, Rule>& rules);
    Decision decide(const RunView& view) override;
    std::unique_ptr<Strategy> clone() const override { return std::make_unique<Positional>(*this); }

private:
    struct Resolved {
        DelayRule rule;
        double delay;
        size_t edge;
    };
    std::map<size_t, Resolved> rules_;
};

class Scripted : public Strategy {
public:
    using Fn = std::function<Decision(const RunView&)>;
    explicit Scripted(Fn fn, std::function<void()> on_reset = {}) : fn_(std::move(fn)), on_reset_(std::move(on_reset)) {}
    Decision decide(const RunView& view) override { return fn_(view); }
    void reset() override {
        if (on_reset_) on_reset_();
    }
    std::unique_ptr<Strategy> clone() const override { return std::make_unique<Scripted>(*this); }

private:
    Fn fn_;
    std::function<void()> on_reset_;
};

// Delay for a rule on a (non-empty) interval; open endpoints are nudged inwards.
double pick_delay(const Interval<double>& iv, DelayRule rule, double fixed);

// Strategy file (JSON): {"kind":"positional","rules":{"L":{"edge":"e1","delay":"earliest"|"latest"|"midpoint"|"1/2"}}}
// or {"kind":"schedule","moves":{"L":[{"edge":"e1","delay":"1/2"}, ...]}}.
std::unique_ptr<Strategy> strategy_from_json(const Stg& g, const nlohmann::json& j);

struct Profile {
    std::unique_ptr<Strategy> diamond;
    std::unique_ptr<Strategy> box;
    Profile clone() const {
        return {diamond ? diamond->clone() : nullptr, box ? box->clone() : nullptr};
    }
};

// ---- runs ---------------------------------------------------------------

enum class Outcome { TargetHit, LimitReached, Blocked, Absorbed, Stopped, TimeExceeded };
const char* outcome_name(Outcome o);

struct RunLimits {
    size_t max_steps = 10000;
    std::optional<double> time_bound;
    bool record_steps = false;
    // Checked after every transition; returning true ends the run with Outcome::Stopped.
    std::function<bool(size_t loc, const std::vector<double>& v)> stop_when;
};

struct RunStep {
    double delay;
    size_t edge;
    size_t location;
    std::vector<double> valuation;
};

struct RunRecord {
    Outcome outcome = Outcome::LimitReached;
    double elapsed = 0;
    size_t location = npos;
    std::vector<double> valuation;
    std::vector<size_t> history;   // edge indices
    std::vector<RunStep> steps;    // only with record_steps
    uint64_t resamples = 0;        // measure-zero draws that enabled nothing
};

struct StartState {
    size_t location;
    std::vector<double> valuation;
};

// Reusable simulator; one instance per worker.
class Simulator {
public:
    explicit Simulator(const Stg& g);
    // Runs from the initial state (or `start`). The record is reused between calls.
    const RunRecord& run(Profile& profile, std::mt19937_64& rng, const RunLimits& limits,
                         const StartState* start = nullptr);

private:
    double sample_stochastic_delay(size_t loc, std::mt19937_64& rng, bool& nothing);
    const Stg& g_;
    RunRecord rec_;
    std::vector<Interval<double>> per_edge_;
    std::vector<Interval<double>> parts_;
    std::vector<uint32_t> visits_;
    std::vector<double> tmp_;
    std::vector<double> exp_rate_;
    std::vector<std::vector<double>> fraction_points_;
};

// ---- estimation ---------------------------------------------------------

enum class Verdict { Reject, Miss, Hit };
using Classifier = std::function<Verdict(const RunRecord&)>;

// Hit iff a target was entered (within the time bound, if any).
Verdict reach_verdict(const RunRecord& r);

struct SampleSpec {
    uint64_t samples = 100000;
    uint64_t seed = 0;
    unsigned threads = 1;
    double confidence = 0.99;
    RunLimits limits;
    std::optional<StartState> start;
    // When set, `samples` counts accepted (non-rejected) runs instead of all runs.
    bool count_accepted = false;
    uint64_t max_runs = 0;  // safety cap for count_accepted; 0 = 100 * samples
};

struct ReachEstimate {
    uint64_t hits = 0;
    uint64_t samples = 0;   // accepted runs
    uint64_t runs = 0;      // all runs including rejected ones
    uint64_t resamples = 0;
    double point = 0;
    double ci_low = 0, ci_high = 0;
    double confidence = 0.99;
    uint64_t seed = 0;
    double stderr_ = 0;     // sqrt(p(1-p)/n)
    nlohmann::json to_json() const;
};

// Wilson score interval.
std::pair<double, double> wilson_interval(uint64_t hits, uint64_t n, double confidence);

// Runs are grouped into fixed-size chunks whose RNG streams depend only on
// (seed, chunk index), so the result does not depend on `threads`.
ReachEstimate estimate(const Stg& g, const Profile& profile, const Classifier& classify, const SampleSpec& spec);

inline ReachEstimate estimate_reach(const Stg& g, const Profile& profile, const SampleSpec& spec) {
    return estimate(g, profile, reach_verdict, spec);
}

// Stream seed for chunk `index`.
uint64_t chunk_seed(uint64_t seed, uint64_t index);

}  // namespace stg
