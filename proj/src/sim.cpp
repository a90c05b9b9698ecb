// SPDX-License-Identifier: Apache-2.0
#include "stg/sim.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <thread>

namespace stg {

namespace {

constexpr double kSnap = 1e-12;
constexpr double kMoveTolerance = 1e-9;
constexpr uint64_t kChunk = 4096;

size_t require_edge(const Stg& g, const std::string& id, size_t loc) {
    size_t ei = g.edge_index(id);
    if (ei == npos) throw UsageError("strategy names unknown edge " + id);
    if (g.edges[ei].source != loc)
        throw UsageError("strategy edge " + id + " does not leave " + g.locations[loc].name);
    return ei;
}

size_t require_location(const Stg& g, const std::string& name) {
    size_t l = g.location_index(name);
    if (l == npos) throw UsageError("strategy names unknown location " + name);
    return l;
}

uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

}  // namespace

double pick_delay(const Interval<double>& iv, DelayRule rule, double fixed) {
    if (iv.empty) throw IllegalMove("no delay enables the chosen edge");
    double nudge = iv.hi_inf ? 1e-6 : std::min(1e-6, (iv.hi - iv.lo) / 2);
    switch (rule) {
        case DelayRule::Fixed: return fixed;
        case DelayRule::Earliest: return iv.lo_closed ? iv.lo : iv.lo + nudge;
        case DelayRule::Latest:
            if (iv.hi_inf) throw IllegalMove("latest delay of an unbounded interval");
            return iv.hi_closed ? iv.hi : iv.hi - nudge;
        case DelayRule::Midpoint: return iv.hi_inf ? iv.lo + 1 : (iv.lo + iv.hi) / 2;
    }
    return fixed;
}

FixedSchedule::FixedSchedule(const Stg& g, const std::map<std::string, std::vector<Move>>& schedule) {
    for (const auto& [name, moves] : schedule) {
        size_t loc = require_location(g, name);
        auto& dst = moves_[loc];
        for (const auto& m : moves) dst.emplace_back(to_double(m.delay), require_edge(g, m.edge, loc));
        if (dst.empty()) throw UsageError("empty schedule for " + name);
    }
}

Decision FixedSchedule::decide(const RunView& view) {
    auto it = moves_.find(view.location);
    if (it == moves_.end()) throw IllegalMove("schedule has no move at " + view.game->locations[view.location].name);
    size_t i = std::min<size_t>(view.visits == 0 ? 0 : view.visits - 1, it->second.size() - 1);
    return {it->second[i].first, it->second[i].second};
}

Positional::Positional(const Stg& g, const std::map<std::string, Rule>& rules) {
    for (const auto& [name, r] : rules) {
        size_t loc = require_location(g, name);
        rules_[loc] = {r.rule, to_double(r.delay), require_edge(g, r.edge, loc)};
    }
}

Decision Positional::decide(const RunView& view) {
    auto it = rules_.find(view.location);
    if (it == rules_.end()) throw IllegalMove("positional strategy has no rule at " + view.game->locations[view.location].name);
    const auto& r = it->second;
    if (r.rule == DelayRule::Fixed) return {r.delay, r.edge};
    auto iv = enabled_interval<double>(*view.game, view.location, *view.valuation, view.game->edges[r.edge]);
    return {pick_delay(iv, r.rule, r.delay), r.edge};
}

std::unique_ptr<Strategy> strategy_from_json(const Stg& g, const nlohmann::json& j) {
    std::string kind = j.value("kind", "");
    auto delay_of = [](const nlohmann::json& d, DelayRule& rule, Rational& value) {
        std::string s = d.is_string() ? d.get<std::string>() : d.dump();
        if (s == "earliest") rule = DelayRule::Earliest;
        else if (s == "latest") rule = DelayRule::Latest;
        else if (s == "midpoint") rule = DelayRule::Midpoint;
        else {
            rule = DelayRule::Fixed;
            value = parse_rational(s);
        }
    };
    if (kind == "positional") {
        std::map<std::string, Positional::Rule> rules;
        for (const auto& [name, r] : j.at("rules").items()) {
            Positional::Rule rule;
            rule.edge = r.at("edge").get<std::string>();
            delay_of(r.contains("delay") ? r.at("delay") : nlohmann::json("earliest"), rule.rule, rule.delay);
            rules[name] = rule;
        }
        return std::make_unique<Positional>(g, rules);
    }
    if (kind == "schedule") {
        std::map<std::string, std::vector<FixedSchedule::Move>> moves;
        for (const auto& [name, list] : j.at("moves").items()) {
            for (const auto& m : list) {
                DelayRule rule;
                Rational d = 0;
                delay_of(m.at("delay"), rule, d);
                if (rule != DelayRule::Fixed) throw UsageError("schedule delays must be numbers");
                moves[name].push_back({d, m.at("edge").get<std::string>()});
            }
        }
        return std::make_unique<FixedSchedule>(g, moves);
    }
    throw UsageError("unknown strategy kind '" + kind + "'");
}

const char* outcome_name(Outcome o) {
    switch (o) {
        case Outcome::TargetHit: return "target";
        case Outcome::LimitReached: return "limit";
        case Outcome::Blocked: return "blocked";
        case Outcome::Absorbed: return "absorbed";
        case Outcome::Stopped: return "stopped";
        case Outcome::TimeExceeded: return "time-exceeded";
    }
    return "?";
}

// ---- simulator ----------------------------------------------------------

Simulator::Simulator(const Stg& g) : g_(g) {
    exp_rate_.assign(g.locations.size(), 0.0);
    for (const auto& [loc, d] : g.distributions)
        if (d.kind == DistributionSpec::Kind::Exponential) exp_rate_[loc] = to_double(d.rate);
    visits_.assign(g.locations.size(), 0);
    // Non-integer constants per clock; values this close to one are snapped like integers are.
    fraction_points_.assign(g.clocks.size(), {});
    auto note = [&](const ClockConstraint& c) {
        for (const auto& a : c.atoms)
            if (!is_integer(a.bound)) fraction_points_[a.clock].push_back(a.bound_approx);
    };
    for (const auto& l : g.locations) note(l.invariant);
    for (const auto& e : g.edges) note(e.guard);
    for (auto& f : fraction_points_) {
        std::sort(f.begin(), f.end());
        f.erase(std::unique(f.begin(), f.end()), f.end());
    }
}

double Simulator::sample_stochastic_delay(size_t loc, std::mt19937_64& rng, bool& nothing) {
    nothing = false;
    const auto& v = rec_.valuation;
    per_edge_.clear();
    for (size_t ei : g_.out[loc]) per_edge_.push_back(enabled_interval<double>(g_, loc, v, g_.edges[ei]));
    parts_ = normalize_union(per_edge_);
    if (parts_.empty()) {
        nothing = true;
        return 0;
    }
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const DistributionSpec* d = g_.distribution(loc);
    if (!d) throw ModelError("stochastic location " + g_.locations[loc].name + " has no distribution");
    if (d->kind == DistributionSpec::Kind::Exponential) {
        double rate = exp_rate_[loc];
        for (int attempt = 0; attempt < 1000000; ++attempt) {
            double t = -std::log1p(-unit(rng)) / rate;
            for (const auto& p : parts_)
                if (p.contains(t)) return t;
            ++rec_.resamples;
        }
        throw SemanticsError("exponential delay never lands in I(s) at " + g_.locations[loc].name);
    }
    if (!parts_.back().hi_inf) {
        double measure = 0;
        for (const auto& p : parts_) measure += p.hi - p.lo;
        if (measure <= 0) {
            // Only isolated points: each is equally likely.
            std::uniform_int_distribution<size_t> pick(0, parts_.size() - 1);
            return parts_[pick(rng)].lo;
        }
        double u = unit(rng) * measure;
        for (const auto& p : parts_) {
            double len = p.hi - p.lo;
            if (u < len || &p == &parts_.back()) return p.lo + std::min(u, len);
            u -= len;
        }
    }
    throw SemanticsError("uniform delay over an unbounded enabled set at " + g_.locations[loc].name);
}

const RunRecord& Simulator::run(Profile& profile, std::mt19937_64& rng, const RunLimits& limits, const StartState* start) {
    rec_.history.clear();
    rec_.steps.clear();
    rec_.resamples = 0;
    rec_.elapsed = 0;
    if (start) {
        rec_.location = start->location;
        rec_.valuation = start->valuation;
    } else {
        rec_.location = g_.initial_location;
        rec_.valuation.resize(g_.clocks.size());
        for (size_t i = 0; i < g_.clocks.size(); ++i) rec_.valuation[i] = to_double(g_.initial_valuation[i]);
    }
    std::fill(visits_.begin(), visits_.end(), 0);
    visits_[rec_.location] = 1;
    double dwell_start = 0;
    if (profile.diamond) profile.diamond->reset();
    if (profile.box) profile.box->reset();

    auto finish = [&](Outcome o) -> const RunRecord& {
        rec_.outcome = o;
        return rec_;
    };
    if (g_.is_target(rec_.location)) return finish(Outcome::TargetHit);

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (size_t n = 0; n < limits.max_steps; ++n) {
        size_t loc = rec_.location;
        const Location& L = g_.locations[loc];
        auto& v = rec_.valuation;
        double delay = 0;
        size_t chosen = npos;
        if (g_.out[loc].empty()) return finish(L.owner == Owner::Stochastic ? Outcome::Blocked : Outcome::Absorbed);
        if (L.owner == Owner::Stochastic) {
            for (int attempt = 0;; ++attempt) {
                bool nothing = false;
                delay = sample_stochastic_delay(loc, rng, nothing);
                if (nothing) return finish(Outcome::Blocked);
                long total = 0;
                const auto& out = g_.out[loc];
                for (size_t i = 0; i < out.size(); ++i)
                    if (per_edge_[i].contains(delay)) total += g_.edges[out[i]].weight;
                if (total > 0) {
                    long pick = static_cast<long>(unit(rng) * static_cast<double>(total));
                    if (pick >= total) pick = total - 1;
                    for (size_t i = 0; i < out.size(); ++i) {
                        if (!per_edge_[i].contains(delay)) continue;
                        pick -= g_.edges[out[i]].weight;
                        if (pick < 0) {
                            chosen = out[i];
                            break;
                        }
                    }
                    break;
                }
                ++rec_.resamples;  // boundary point of measure zero
                if (attempt > 1000000) throw SemanticsError("sampling never enables an edge at " + L.name);
            }
        } else {
            Strategy* s = L.owner == Owner::Diamond ? profile.diamond.get() : profile.box.get();
            if (!s) throw UsageError(std::string("no strategy for player ") + owner_name(L.owner));
            RunView view{&g_, loc, &v, rec_.elapsed, &rec_.history, rec_.elapsed - dwell_start, visits_[loc]};
            Decision d = s->decide(view);
            if (d.edge >= g_.edges.size() || g_.edges[d.edge].source != loc)
                throw IllegalMove("strategy chose an edge that does not leave " + L.name);
            auto iv = enabled_interval<double>(g_, loc, v, g_.edges[d.edge]);
            if (iv.empty) throw IllegalMove("edge " + g_.edges[d.edge].id + " cannot be taken from the current state at " + L.name);
            if (!iv.contains(d.delay)) {
                // Accept float noise around the interval, clamped inwards.
                if (std::abs(d.delay - iv.lo) <= kMoveTolerance && iv.lo_closed) d.delay = iv.lo;
                else if (!iv.hi_inf && std::abs(d.delay - iv.hi) <= kMoveTolerance && iv.hi_closed) d.delay = iv.hi;
                else
                    throw IllegalMove("delay " + std::to_string(d.delay) + " is outside I(s," + g_.edges[d.edge].id + ") at " + L.name);
            }
            delay = d.delay;
            chosen = d.edge;
        }
        const Edge& e = g_.edges[chosen];
        for (size_t c = 0; c < v.size(); ++c) {
            double& x = v[c];
            x += delay;
            double r = std::round(x);
            if (std::abs(x - r) < kSnap) x = r;
            for (double f : fraction_points_[c])
                if (std::abs(x - f) < kSnap) x = f;
        }
        for (size_t c : e.resets) v[c] = 0;
        rec_.elapsed += delay;
        rec_.history.push_back(chosen);
        if (e.target != loc) dwell_start = rec_.elapsed;
        ++visits_[e.target];
        rec_.location = e.target;
        if (limits.record_steps) rec_.steps.push_back({delay, chosen, e.target, v});
        if (!satisfies(v, g_.locations[e.target].invariant))
            throw ModelError("entering " + g_.locations[e.target].name + " violates its invariant");
        if (limits.time_bound && rec_.elapsed > *limits.time_bound) return finish(Outcome::TimeExceeded);
        if (g_.is_target(e.target)) return finish(Outcome::TargetHit);
        if (limits.stop_when && limits.stop_when(e.target, v)) return finish(Outcome::Stopped);
    }
    return finish(Outcome::LimitReached);
}

// ---- estimation ---------------------------------------------------------

Verdict reach_verdict(const RunRecord& r) { return r.outcome == Outcome::TargetHit ? Verdict::Hit : Verdict::Miss; }

std::pair<double, double> wilson_interval(uint64_t hits, uint64_t n, double confidence) {
    if (n == 0) return {0.0, 1.0};
    boost::math::normal_distribution<double> normal;
    double z = boost::math::quantile(normal, 1 - (1 - confidence) / 2);
    double nn = static_cast<double>(n);
    double p = static_cast<double>(hits) / nn;
    double denom = 1 + z * z / nn;
    double centre = (p + z * z / (2 * nn)) / denom;
    double half = z * std::sqrt(p * (1 - p) / nn + z * z / (4 * nn * nn)) / denom;
    double lo = std::max(0.0, centre - half), hi = std::min(1.0, centre + half);
    // Guard the invariant ci_low <= point <= ci_high against rounding.
    return {std::min(lo, p), std::max(hi, p)};
}

uint64_t chunk_seed(uint64_t seed, uint64_t index) { return splitmix64(splitmix64(seed) ^ (index * 0xD1B54A32D192ED03ULL)); }

nlohmann::json ReachEstimate::to_json() const {
    return {{"hits", hits},        {"samples", samples},   {"runs", runs},     {"point", point},
            {"ci_low", ci_low},    {"ci_high", ci_high},   {"confidence", confidence},
            {"seed", seed},        {"resamples", resamples}};
}

namespace {

struct ChunkResult {
    std::vector<uint8_t> verdicts;  // Verdict per run
    uint64_t resamples = 0;
};

struct Worker {
    Worker(const Stg& g, const Profile& p) : sim(g), profile(p.clone()) {}
    Simulator sim;
    Profile profile;
};

void run_chunk(Worker& w, const Classifier& classify, const SampleSpec& spec, uint64_t index, uint64_t count,
               ChunkResult& out) {
    std::mt19937_64 rng(chunk_seed(spec.seed, index));
    out.verdicts.resize(count);
    out.resamples = 0;
    const StartState* start = spec.start ? &*spec.start : nullptr;
    for (uint64_t i = 0; i < count; ++i) {
        const RunRecord& r = w.sim.run(w.profile, rng, spec.limits, start);
        out.resamples += r.resamples;
        out.verdicts[i] = static_cast<uint8_t>(classify(r));
    }
}

}  // namespace

ReachEstimate estimate(const Stg& g, const Profile& profile, const Classifier& classify, const SampleSpec& spec) {
    if (spec.samples == 0) throw UsageError("sample count must be at least 1");
    unsigned threads = std::max(1u, spec.threads);
    std::vector<std::unique_ptr<Worker>> workers;
    for (unsigned t = 0; t < threads; ++t) workers.push_back(std::make_unique<Worker>(g, profile));

    ReachEstimate est;
    est.seed = spec.seed;
    est.confidence = spec.confidence;
    uint64_t max_runs = spec.count_accepted ? (spec.max_runs ? spec.max_runs : 100 * spec.samples) : spec.samples;
    uint64_t next_chunk = 0;
    bool done = false;
    std::vector<ChunkResult> wave(threads);
    while (!done) {
        uint64_t first = next_chunk;
        std::vector<uint64_t> counts(threads, 0);
        for (unsigned t = 0; t < threads; ++t) {
            uint64_t begin = (first + t) * kChunk;
            counts[t] = begin >= max_runs ? 0 : std::min(kChunk, max_runs - begin);
        }
        if (threads == 1) {
            if (counts[0]) run_chunk(*workers[0], classify, spec, first, counts[0], wave[0]);
        } else {
            std::vector<std::thread> pool;
            for (unsigned t = 0; t < threads; ++t)
                if (counts[t])
                    pool.emplace_back([&, t] { run_chunk(*workers[t], classify, spec, first + t, counts[t], wave[t]); });
            for (auto& th : pool) th.join();
        }
        next_chunk += threads;
        // Fold in chunk order so the result is independent of the thread count.
        for (unsigned t = 0; t < threads && !done; ++t) {
            if (!counts[t]) {
                done = true;
                break;
            }
            est.resamples += wave[t].resamples;
            for (uint64_t i = 0; i < counts[t]; ++i) {
                auto v = static_cast<Verdict>(wave[t].verdicts[i]);
                ++est.runs;
                if (v != Verdict::Reject) {
                    ++est.samples;
                    if (v == Verdict::Hit) ++est.hits;
                }
                if (spec.count_accepted ? est.samples == spec.samples : est.runs == spec.samples) {
                    done = true;
                    break;
                }
            }
        }
        if (est.runs >= max_runs) done = true;
    }
    if (spec.count_accepted && est.samples < spec.samples)
        throw SemanticsError("only " + std::to_string(est.samples) + " of " + std::to_string(est.runs) +
                             " runs were accepted; raise max_runs");
    est.point = est.samples ? static_cast<double>(est.hits) / static_cast<double>(est.samples) : 0.0;
    auto [lo, hi] = wilson_interval(est.hits, est.samples, spec.confidence);
    est.ci_low = lo;
    est.ci_high = hi;
    est.stderr_ = est.samples ? std::sqrt(est.point * (1 - est.point) / static_cast<double>(est.samples)) : 0.0;
    return est;
}

}  // namespace stg
