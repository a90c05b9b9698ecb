// SPDX-License-Identifier: Apache-2.0
// Command-line front end. Exit codes: 0 success / true verdict, 1 false
// verdict, 2 usage error, 3 model error.
#include "stg/exact.hpp"
#include "stg/mdp.hpp"
#include "stg/model.hpp"
#include "stg/region.hpp"
#include "stg/sim.hpp"
#include "stg/solver.hpp"
#include "stg/tcm.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

using namespace stg;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kFalse = 1, kUsage = 2, kModel = 3 };

struct Globals {
    uint64_t seed = 0;
    std::string threads = "auto";
    int precision = 12;
    std::string output = "text";

    bool as_json() const { return output == "json"; }
    unsigned worker_count() const {
        if (threads == "auto") return std::max(1u, std::thread::hardware_concurrency());
        try {
            size_t used = 0;
            long n = std::stol(threads, &used);
            if (used == threads.size() && n >= 1 && n <= 1024) return static_cast<unsigned>(n);
        } catch (const std::exception&) {
        }
        throw UsageError("--threads must be a positive count or 'auto'");
    }
};

void emit(const Globals& g, const json& doc, const std::string& text) {
    if (g.as_json()) std::cout << doc.dump(2) << "\n";
    else std::cout << text;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ModelError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw UsageError("cannot write " + path);
    out << content;
}

Stg load_checked(const std::string& path) {
    Stg g = load_stg(path);
    g.require_resolved();
    return g;
}

std::string enclosure_text(const RInterval& iv, int digits) { return format_enclosure(iv, digits); }

// ---- subcommands --------------------------------------------------------

int cmd_validate(const Globals& G, const std::string& model) {
    Stg g = load_stg(model);
    ValidationReport r = check_wellformed(g);
    std::ostringstream os;
    for (const auto& f : r.findings)
        os << (f.severity == Finding::Severity::Error ? "error" : "info") << " [" << f.code << "] " << f.message << "\n";
    os << (r.ok() ? "ok" : "not well-formed") << "\n";
    json doc = r.to_json();
    doc["model"] = model;
    emit(G, doc, os.str());
    return r.ok() ? kOk : kModel;
}

struct SimOptions {
    std::string model, diamond, box;
    uint64_t samples = 100000;
    double time_bound = -1;
    size_t max_steps = 10000;
    double confidence = 0.99;
};

int cmd_simulate(const Globals& G, const SimOptions& o) {
    Stg g = load_checked(o.model);
    Profile profile;
    if (!o.diamond.empty()) profile.diamond = strategy_from_json(g, json::parse(read_file(o.diamond)));
    if (!o.box.empty()) profile.box = strategy_from_json(g, json::parse(read_file(o.box)));
    SampleSpec spec;
    spec.samples = o.samples;
    spec.seed = G.seed;
    spec.threads = G.worker_count();
    spec.confidence = o.confidence;
    spec.limits.max_steps = o.max_steps;
    if (o.time_bound >= 0) spec.limits.time_bound = o.time_bound;
    ReachEstimate e = estimate_reach(g, profile, spec);
    std::ostringstream os;
    os.precision(G.precision);
    os << "estimate " << e.point << " (" << e.hits << "/" << e.samples << ")\n"
       << "ci" << static_cast<int>(e.confidence * 100) << " [" << e.ci_low << ", " << e.ci_high << "]\n";
    json doc = e.to_json();
    doc["model"] = o.model;
    emit(G, doc, os.str());
    return kOk;
}

int cmd_exact_path(const Globals& G, const std::string& model, const std::string& path,
                   const std::vector<std::string>& delays) {
    Stg g = load_checked(model);
    std::vector<std::string> ids;
    std::stringstream ss(path);
    for (std::string id; std::getline(ss, id, ',');)
        if (!id.empty()) ids.push_back(id);
    if (ids.empty()) throw UsageError("--path needs at least one edge id");
    std::map<size_t, Rational> player;
    for (const auto& d : delays) {
        auto eq = d.find('=');
        if (eq == std::string::npos) throw UsageError("--delay takes STEP=VALUE (0-based step)");
        player[std::stoul(d.substr(0, eq))] = parse_rational(d.substr(eq + 1));
    }
    ExpPoly p = exact_path_probability(g, ids, player);
    RInterval iv = p.enclose(64);
    json doc = {{"path", ids}, {"probability", p.str()}, {"q", p.q()}, {"enclosure", enclosure_text(iv, G.precision)},
                {"exact_rational", p.is_constant() ? json(to_string(p.constant_term())) : json(nullptr)}};
    std::ostringstream os;
    os << "P = " << p.str() << (p.is_constant() ? "" : "   (y = exp(-1/" + std::to_string(p.q()) + "))") << "\n"
       << "  ~ " << enclosure_text(iv, G.precision) << "\n";
    emit(G, doc, os.str());
    return kOk;
}

int cmd_regions(const Globals& G, const std::string& model, bool dot) {
    Stg g = load_checked(model);
    RegionStg rg = build_region_stg(g);
    if (dot) {
        std::cout << rg.to_dot();
        return kOk;
    }
    std::ostringstream os;
    os << rg.nodes.size() << " region nodes, " << rg.edges.size() << " region edges\n";
    for (size_t n = 0; n < rg.nodes.size(); ++n) {
        os << rg.node_name(n) << " [" << owner_name(rg.owner(n)) << "]\n";
        for (size_t e : rg.out[n]) {
            const RegionEdge& re = rg.edges[e];
            os << "  " << g.edges[re.edge].id << " : " << rg.guard_text(re) << (re.reset ? " reset" : "") << " -> "
               << rg.node_name(re.target) << "\n";
        }
    }
    emit(G, rg.to_json(), os.str());
    return kOk;
}

int cmd_check_star(const Globals& G, const std::string& model) {
    Stg g = load_checked(model);
    RegionStg rg = build_region_stg(g);
    StarReport r = check_star(rg);
    std::ostringstream os;
    os << "structurally non-Zeno: " << (r.non_zeno ? "yes" : "no");
    if (!r.non_zeno) {
        os << " (cycle";
        for (const auto& n : r.zeno_cycle) os << " " << n;
        os << ")";
    }
    os << "\nexponential only on unbounded I(s): " << (r.exponential_unbounded ? "yes" : "no")
       << (r.exponential_unbounded ? "" : " (" + r.exponential_witness + ")") << "\ninitialized: "
       << (r.initialized ? "yes" : "no") << (r.initialized ? "" : " (edge " + r.initialized_witness + ")") << "\n";
    emit(G, r.to_json(), os.str());
    return r.all() ? kOk : kFalse;
}

Mdp abstract_model(const std::string& model) {
    Stg g = load_checked(model);
    RegionStg rg = build_region_stg(g);
    return build_mdp(rg);
}

std::string mdp_text(const Mdp& m, int digits) {
    std::ostringstream os;
    os << m.states.size() << " states (y = exp(-1/" << m.q << "))\n";
    for (const auto& s : m.states) {
        os << s.name << " [" << (s.target ? "target" : owner_name(s.owner)) << "]\n";
        for (const auto& mv : s.moves) {
            os << "  " << mv.label_text() << " -> " << m.states[mv.target].name;
            if (s.owner == Owner::Stochastic) os << " : " << mv.prob.str() << "  ~ " << format_enclosure(mv.prob.enclose(), digits);
            os << "\n";
        }
    }
    return os.str();
}

int cmd_abstract(const Globals& G, const std::string& model, bool dot, const std::string& out) {
    Mdp m = abstract_model(model);
    if (!out.empty()) write_file(out, m.to_json(G.precision).dump(2) + "\n");
    if (dot) {
        std::cout << m.to_dot();
        return kOk;
    }
    emit(G, m.to_json(G.precision), mdp_text(m, G.precision));
    return kOk;
}

int cmd_solve(const Globals& G, const std::string& mdp_path, const std::string& model, const std::string& threshold,
              const std::string& mode_text, bool preview) {
    if (mdp_path.empty() == model.empty()) throw UsageError("give exactly one of --mdp and --model");
    Mdp m = mdp_path.empty() ? abstract_model(model) : load_mdp(mdp_path);
    SolveMode mode;
    if (mode_text == "max") mode = SolveMode::Max;
    else if (mode_text == "maxmin") mode = SolveMode::MaxMin;
    else throw UsageError("--mode must be max or maxmin");
    std::optional<ThresholdQuery> query;
    if (!threshold.empty()) query = parse_threshold(threshold);
    if (preview) {
        auto vals = value_iteration_preview(m, mode);
        long double v = vals[m.initial];
        json doc = {{"mode", mode_text}, {"preview", true}, {"value", static_cast<double>(v)}};
        std::ostringstream os;
        os.precision(G.precision);
        os << "value (preview, floating point) ~ " << static_cast<double>(v) << "\n";
        int code = kOk;
        if (query) {
            // Preview verdicts are advisory: floating point cannot separate near-ties.
            Rational vp = from_double(static_cast<double>(v));
            bool holds = atom_holds<Rational>(vp, query->rel, query->p);
            doc["verdict"] = holds;
            os << "verdict (preview): " << (holds ? "true" : "false") << "\n";
            code = holds ? kOk : kFalse;
        }
        emit(G, doc, os.str());
        return code;
    }
    SolveResult r = solve_optimal(m, mode);
    json strat = json::object();
    std::ostringstream os;
    os << "value = " << r.value.str() << "   (y = exp(-1/" << r.value.q() << "))\n"
       << "      ~ " << format_enclosure(r.value.enclose(64), G.precision) << "\n"
       << "strategy:\n";
    for (size_t s = 0; s < m.states.size(); ++s) {
        if (r.profile[s] == npos) continue;
        const MdpMove& mv = m.states[s].moves[r.profile[s]];
        strat[m.states[s].name] = mv.label_text();
        os << "  " << m.states[s].name << " [" << owner_name(m.states[s].owner) << "] -> " << mv.label_text() << "\n";
    }
    json doc = {{"mode", mode_text},
                {"value", r.value.str()},
                {"q", r.value.q()},
                {"enclosure", format_enclosure(r.value.enclose(64), G.precision)},
                {"strategy", strat},
                {"iterations", r.iterations}};
    int code = kOk;
    if (query) {
        ThresholdVerdict v = decide_threshold(r.value, *query);
        doc["threshold"] = threshold;
        doc["verdict"] = v.to_json(G.precision);
        os << "threshold " << threshold << ": " << (v.holds ? "true" : "false")
           << (v.identical ? " (value - p is identically zero)" : "") << "\n";
        code = v.holds ? kOk : kFalse;
    }
    emit(G, doc, os.str());
    return code;
}

int cmd_compile(const Globals& G, const std::string& program, const std::string& variant, const std::string& out) {
    TwoCounterMachine m = load_tcm(program);
    CompiledGame cg = compile(m, parse_variant(variant));
    json model = stg_to_json(cg.game);
    size_t boxes = 0;
    for (const auto& l : cg.game.locations) boxes += l.owner == Owner::Box;
    json doc = {{"program", program},
                {"variant", variant},
                {"clocks", cg.game.clocks.size()},
                {"locations", cg.game.locations.size()},
                {"edges", cg.game.edges.size()},
                {"box_locations", boxes},
                {"targets", cg.game.targets.size()}};
    if (!out.empty()) {
        write_file(out, model.dump(2) + "\n");
        doc["out"] = out;
        std::ostringstream os;
        os << "wrote " << out << ": " << cg.game.clocks.size() << " clocks, " << cg.game.locations.size()
           << " locations, " << cg.game.edges.size() << " edges\n";
        emit(G, doc, os.str());
    } else {
        std::cout << model.dump(2) << "\n";
    }
    return kOk;
}

int cmd_run(const Globals& G, const std::string& program, size_t max_steps) {
    TwoCounterMachine m = load_tcm(program);
    MachineRun r = run_tcm(m, max_steps);
    std::ostringstream os;
    for (size_t s = 0; s < r.configs.size(); ++s) {
        const auto& c = r.configs[s];
        os << s << ": " << m.program[c.pc].label << " c1=" << c.c1 << " c2=" << c.c2 << "\n";
    }
    os << (r.halted ? "halted" : "truncated") << " after " << r.steps() << " steps\n";
    emit(G, r.to_json(m), os.str());
    return kOk;
}

struct GadgetOptions {
    std::string program, variant = "onehalf", gadget, epsilon = "0";
    uint64_t samples = 100000;
    long step = -1;
};

int cmd_gadget_verify(const Globals& G, const GadgetOptions& o) {
    TwoCounterMachine m = load_tcm(o.program);
    MachineRun run = run_tcm(m, 10000);
    CompiledGame cg = compile(m, parse_variant(o.variant));
    SampleSpec spec;
    spec.samples = o.samples;
    spec.seed = G.seed;
    spec.threads = G.worker_count();
    std::optional<size_t> step;
    if (o.step >= 0) step = static_cast<size_t>(o.step);
    GadgetVerification v = verify_gadget(cg, run, o.gadget, parse_rational(o.epsilon), step, spec);
    std::ostringstream os;
    os.precision(G.precision);
    os << "gadget " << v.gadget << " at step " << v.step << ", epsilon " << to_string(v.epsilon) << "\n"
       << "law " << v.law_name << ": " << gadget_law(v.law_name).formula << " = " << to_string(v.law) << " ~ "
       << to_double(v.law) << "\n";
    if (v.derived) os << "derived law: " << to_string(*v.derived) << " ~ " << to_double(*v.derived) << "\n";
    os << "estimate " << v.estimate.point << " (" << v.estimate.hits << "/" << v.estimate.samples << " accepted of "
       << v.estimate.runs << " runs)\n"
       << "ci" << static_cast<int>(v.estimate.confidence * 100) << " [" << v.estimate.ci_low << ", " << v.estimate.ci_high
       << "]\n"
       << "sigma " << v.sigma << ", z " << v.z_score << "\n"
       << (v.pass ? "PASS" : "FAIL") << " (|estimate - law| <= 3 sigma)\n";
    emit(G, v.to_json(), os.str());
    return v.pass ? kOk : kFalse;
}

struct Sim2Options {
    std::string program, variant = "timebounded", box = "continue";
    uint64_t samples = 10000;
    double time_bound = -1;
};

int cmd_simulate_2cm(const Globals& G, const Sim2Options& o) {
    TwoCounterMachine m = load_tcm(o.program);
    MachineRun run = run_tcm(m, 10000);
    CompiledGame cg = compile(m, parse_variant(o.variant));
    Profile profile;
    profile.diamond = faithful_diamond(cg, run);
    if (cg.variant == Variant::TimeBounded) profile.box = box_strategy(cg, parse_box_policy(o.box));
    SampleSpec spec;
    spec.samples = o.samples;
    spec.seed = G.seed;
    spec.threads = G.worker_count();
    spec.limits.max_steps = 1000000;
    if (o.time_bound >= 0) spec.limits.time_bound = o.time_bound;
    ReachEstimate e = estimate_reach(cg.game, profile, spec);
    json doc = e.to_json();
    doc["program"] = o.program;
    doc["variant"] = o.variant;
    doc["box"] = o.box;
    std::ostringstream os;
    os.precision(G.precision);
    os << "estimate " << e.point << " (" << e.hits << "/" << e.samples << ")\n"
       << "ci" << static_cast<int>(e.confidence * 100) << " [" << e.ci_low << ", " << e.ci_high << "]\n";
    if (cg.variant == Variant::OneHalf && run.halted) {
        Rational s = halting_sum(m, run);
        doc["halting_sum"] = to_string(s);
        os << "halting sum " << to_string(s) << " ~ " << to_double(s) << "\n";
    }
    emit(G, doc, os.str());
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stochastic timed games: simulation, exact abstraction, solving and two-counter reductions"};
    app.require_subcommand(1);
    app.fallthrough();  // global options may follow the subcommand
    Globals G;
    app.add_option("--seed", G.seed, "RNG seed (default 0)");
    app.add_option("--threads", G.threads, "worker count or 'auto'");
    app.add_option("--precision", G.precision, "decimal digits for enclosures")->check(CLI::Range(6, 200));
    app.add_option("--output", G.output, "text or json")->check(CLI::IsMember({"text", "json"}));

    std::string model, path, mdp, threshold, mode = "max", out, program;
    bool dot = false, preview = false, exact = false;
    std::vector<std::string> delays;
    size_t max_steps = 1000;
    SimOptions sim;
    GadgetOptions gad;
    Sim2Options sim2;
    std::function<int()> action;

    auto* validate = app.add_subcommand("validate", "check that a model is well-formed");
    validate->add_option("--model", model, "model JSON")->required();
    validate->callback([&] { action = [&] { return cmd_validate(G, model); }; });

    auto* simulate = app.add_subcommand("simulate", "Monte Carlo reachability estimate");
    simulate->add_option("--model", sim.model, "model JSON")->required();
    simulate->add_option("--diamond", sim.diamond, "strategy JSON for player Diamond");
    simulate->add_option("--box", sim.box, "strategy JSON for player Box");
    simulate->add_option("--samples", sim.samples, "number of runs")->check(CLI::PositiveNumber);
    simulate->add_option("--time-bound", sim.time_bound, "global time budget");
    simulate->add_option("--max-steps", sim.max_steps, "transition limit per run");
    simulate->add_option("--confidence", sim.confidence, "confidence level")->check(CLI::Range(0.5, 0.999999));
    simulate->callback([&] { action = [&] { return cmd_simulate(G, sim); }; });

    auto* ep = app.add_subcommand("exact-path", "exact probability of an edge sequence from the initial state");
    ep->add_option("--model", model, "model JSON")->required();
    ep->add_option("--path", path, "comma-separated edge ids")->required();
    ep->add_option("--delay", delays, "STEP=VALUE delay for a player step (0-based)");
    ep->callback([&] { action = [&] { return cmd_exact_path(G, model, path, delays); }; });

    auto* regions = app.add_subcommand("regions", "region STG of a 1-clock model");
    regions->add_option("--model", model, "model JSON")->required();
    regions->add_flag("--dot", dot, "emit Graphviz");
    regions->callback([&] { action = [&] { return cmd_regions(G, model, dot); }; });

    auto* star = app.add_subcommand("check-star", "check the three restrictions licensing the abstraction");
    star->add_option("--model", model, "model JSON")->required();
    star->callback([&] { action = [&] { return cmd_check_star(G, model); }; });

    auto* abs = app.add_subcommand("abstract", "build the finite MDP of a 1-clock model");
    abs->add_option("--model", model, "model JSON")->required();
    abs->add_option("--out", out, "write the MDP JSON here");
    abs->add_flag("--dot", dot, "emit Graphviz");
    abs->callback([&] { action = [&] { return cmd_abstract(G, model, dot, out); }; });

    auto* solve = app.add_subcommand("solve", "optimal reachability value and threshold verdict");
    solve->add_option("--mdp", mdp, "MDP JSON");
    solve->add_option("--model", model, "model JSON (abstracted first)");
    solve->add_option("--threshold", threshold, "e.g. \">= 1/2\"");
    solve->add_option("--mode", mode, "max or maxmin")->check(CLI::IsMember({"max", "maxmin"}));
    auto* exact_flag = solve->add_flag("--exact", exact, "exact policy iteration (default)");
    solve->add_flag("--preview", preview, "floating-point value iteration")->excludes(exact_flag);
    solve->callback([&] { action = [&] { return cmd_solve(G, mdp, model, threshold, mode, preview); }; });

    auto* comp = app.add_subcommand("compile-2cm", "compile a two-counter machine into an STG");
    comp->add_option("--program", program, "machine program")->required();
    comp->add_option("--variant", gad.variant, "onehalf or timebounded")->check(CLI::IsMember({"onehalf", "timebounded"}));
    comp->add_option("--out", out, "write the model JSON here (stdout otherwise)");
    comp->callback([&] { action = [&] { return cmd_compile(G, program, gad.variant, out); }; });

    auto* run = app.add_subcommand("run-2cm", "interpret a two-counter machine");
    run->add_option("--program", program, "machine program")->required();
    run->add_option("--max-steps", max_steps, "truncate after this many steps");
    run->callback([&] { action = [&] { return cmd_run(G, program, max_steps); }; });

    auto* gv = app.add_subcommand("gadget-verify", "Monte Carlo check of a gadget against its closed-form law");
    gv->add_option("--program", gad.program, "machine program")->required();
    gv->add_option("--variant", gad.variant, "onehalf or timebounded")->check(CLI::IsMember({"onehalf", "timebounded"}));
    gv->add_option("--gadget", gad.gadget, "getprob, dec-getprob, zerotest, checkz, checkx, mula, mulx, widmul, zerocheck, halt")->required();
    gv->add_option("--epsilon", gad.epsilon, "simulation error injected at the step (rational or decimal)");
    gv->add_option("--samples", gad.samples, "accepted runs")->check(CLI::PositiveNumber);
    gv->add_option("--step", gad.step, "1-based machine step (default: first suitable)");
    gv->callback([&] { action = [&] { return cmd_gadget_verify(G, gad); }; });

    auto* s2 = app.add_subcommand("simulate-2cm", "simulate a compiled machine under the faithful Diamond");
    s2->add_option("--program", sim2.program, "machine program")->required();
    s2->add_option("--variant", sim2.variant, "onehalf or timebounded")->check(CLI::IsMember({"onehalf", "timebounded"}));
    s2->add_option("--box", sim2.box, "Box policy: continue or check:STEP:WIDGET");
    s2->add_option("--samples", sim2.samples, "number of runs")->check(CLI::PositiveNumber);
    s2->add_option("--time-bound", sim2.time_bound, "global time budget");
    s2->callback([&] { action = [&] { return cmd_simulate_2cm(G, sim2); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }
    try {
        return action();
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const DomainError& e) {
        std::cerr << "domain error: " << e.what() << "\n";
        return kUsage;
    } catch (const json::exception& e) {
        std::cerr << "model error: " << e.what() << "\n";
        return kModel;
    } catch (const std::exception& e) {
        std::cerr << "model error: " << e.what() << "\n";
        return kModel;
    }
}
