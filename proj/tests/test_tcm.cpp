// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "stg/tcm.hpp"

#include <random>

using namespace stg;

namespace {

const std::string kSamples = STG_SAMPLES_DIR;

std::map<std::string, Rational> params(std::initializer_list<std::pair<const std::string, Rational>> list) {
    return std::map<std::string, Rational>(list);
}

// Random program over labels L0..L(n-1); the last instruction halts.
TwoCounterMachine random_machine(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> len(2, 6), op(0, 2), ctr(1, 2);
    int n = len(rng);
    std::uniform_int_distribution<int> label(0, n - 1);
    std::string text;
    for (int i = 0; i < n - 1; ++i) {
        std::string l = "L" + std::to_string(i) + ": ";
        std::string c = " c" + std::to_string(ctr(rng));
        switch (op(rng)) {
            case 0: text += l + "inc" + c + " goto L" + std::to_string(label(rng)) + "\n"; break;
            case 1: text += l + "dec" + c + " goto L" + std::to_string(label(rng)) + "\n"; break;
            default:
                text += l + "jz" + c + " L" + std::to_string(label(rng)) + " L" + std::to_string(label(rng)) + "\n";
        }
    }
    text += "L" + std::to_string(n - 1) + ": halt\n";
    return parse_tcm(text);
}

}  // namespace

TEST_CASE("parsing two-counter programs") {
    auto m = parse_tcm("# comment\nstart: inc c1 goto b\nb:jz c2 end start   # trailing\nend: halt\n");
    REQUIRE(m.program.size() == 3);
    CHECK(m.program[0].op == Instruction::Op::Inc);
    CHECK(m.program[0].counter == 0);
    CHECK(m.program[0].next == 1);
    CHECK(m.program[1].op == Instruction::Op::Jz);
    CHECK(m.program[1].counter == 1);
    CHECK(m.program[1].next == 2);
    CHECK(m.program[1].alt == 0);
    CHECK(m.find("end") == 2);
    CHECK(m.find("nope") == npos);

    auto again = parse_tcm(m.to_text());
    REQUIRE(again.program.size() == m.program.size());
    for (size_t i = 0; i < m.program.size(); ++i) {
        CHECK(again.program[i].op == m.program[i].op);
        CHECK(again.program[i].counter == m.program[i].counter);
        CHECK(again.program[i].next == m.program[i].next);
        CHECK(again.program[i].alt == m.program[i].alt);
    }

    CHECK_THROWS_AS(parse_tcm("a: inc c3 goto b\nb: halt\n"), ModelError);
    CHECK_THROWS_AS(parse_tcm("a: inc c1 goto zz\nb: halt\n"), ModelError);
    CHECK_THROWS_AS(parse_tcm("a: inc c1 goto a\n"), ModelError);
    CHECK_THROWS_AS(parse_tcm("a: halt\nb: halt\n"), ModelError);
    CHECK_THROWS_AS(parse_tcm("a: halt\na: halt\n"), ModelError);
    CHECK_THROWS_AS(parse_tcm("a: fly c1\nb: halt\n"), ModelError);
}

TEST_CASE("interpreting two-counter programs") {
    auto halt3 = load_tcm(kSamples + "/halt3.tcm");
    auto run = run_tcm(halt3, 100);
    CHECK(run.halted);
    CHECK(run.steps() == 3);
    CHECK(run.configs.back().c1 == 0);
    CHECK(run.configs[1].c1 == 1);
    CHECK(run.to_json(halt3)["halted"] == true);

    auto loop = run_tcm(load_tcm(kSamples + "/loop.tcm"), 10);
    CHECK_FALSE(loop.halted);
    CHECK(loop.steps() == 10);
    CHECK(loop.configs.back().c1 == 10);

    CHECK_THROWS_AS(run_tcm(parse_tcm("a: dec c1 goto b\nb: halt\n"), 5), SemanticsError);
}

TEST_CASE("closed-form laws at their reference points") {
    CHECK(gadget_law("getprob")(params({{"epsilon", 0}, {"c", 0}})) == Rational(1, 2));
    CHECK(gadget_law("getprob")(params({{"epsilon", Rational(1, 10)}, {"c", 0}})) == Rational(12, 25));
    CHECK(gadget_law("getprob")(params({{"epsilon", Rational(1, 5)}, {"c", 0}})) == Rational(21, 50));
    CHECK_THROWS_AS(gadget_law("getprob")(params({{"epsilon", Rational(1, 2)}, {"c", 0}})), DomainError);
    CHECK_THROWS_AS(gadget_law("getprob")(params({{"epsilon", 0}})), DomainError);

    CHECK(gadget_law("dec-getprob")(params({{"epsilon", Rational(1, 10)}, {"c", 1}})) == Rational(49, 100));
    CHECK(gadget_law("dec-getprob-derived")(params({{"epsilon", Rational(1, 10)}, {"c", 1}})) == Rational(99, 200));
    CHECK_THROWS_AS(gadget_law("dec-getprob")(params({{"epsilon", 0}, {"c", 0}})), DomainError);

    for (long k = 0; k <= 4; ++k)
        CHECK(gadget_law("checkz")(params({{"t", Rational(1, 2 << k)}, {"k", k}})) == Rational(1, 2));
    // Faithful t2 = n/(w+1) balances checkx at 1/2 for any n and weight.
    for (long w : {1L, 2L, 5L, 11L, 17L})
        for (Rational n : {Rational(1), Rational(1, 6), Rational(1, 36)})
            CHECK(gadget_law("checkx")(params({{"t2", n / (w + 1)}, {"n", n}, {"w", w}})) == Rational(1, 2));
    CHECK(gadget_law("mula")(params({{"t", Rational(1, 3)}, {"a", Rational(1, 3)}})) == Rational(1, 2));
    CHECK(gadget_law("mulx")(params({{"t2", Rational(1, 2)}, {"n", Rational(1, 12)}})) == Rational(1, 2));
    CHECK(gadget_law("wid-double")(params({{"t", Rational(1, 4)}, {"v", Rational(1, 4)}})) == Rational(1, 2));
    CHECK(gadget_law("wid-triple")(params({{"t", Rational(1, 2)}, {"v", Rational(1, 4)}})) == Rational(1, 4));
    CHECK(gadget_law("zerotest")({}) == Rational(1));
    CHECK_THROWS_AS(gadget_law("no-such-law"), UsageError);
    CHECK(gadget_laws().size() == 12);
}

TEST_CASE("halting sum of halt3") {
    auto m = load_tcm(kSamples + "/halt3.tcm");
    CHECK(halting_sum(m, run_tcm(m, 100)) == Rational(9, 16));
    auto inc = load_tcm(kSamples + "/inc-halt.tcm");
    CHECK(halting_sum(inc, run_tcm(inc, 100)) == Rational(1, 4));
}

TEST_CASE("compiled games are well-formed and shaped as documented") {
    for (std::string file : {"inc-halt", "halt3", "dec", "loop"}) {
        auto m = load_tcm(kSamples + "/" + file + ".tcm");
        for (Variant v : {Variant::OneHalf, Variant::TimeBounded}) {
            CAPTURE(file);
            CAPTURE(variant_name(v));
            CompiledGame cg = compile(m, v);
            CHECK(cg.game.clocks.size() == (v == Variant::OneHalf ? 4u : 5u));
            auto rep = check_wellformed(cg.game);
            for (const auto& f : rep.findings)
                if (f.severity == Finding::Severity::Error) FAIL_CHECK(f.code << ": " << f.message);
            CHECK(cg.entry.size() == m.program.size());
            CHECK(cg.is_entry[cg.entry[0][0]]);
            CHECK(cg.info.size() == cg.game.locations.size());
            CHECK(parse_variant(variant_name(v)) == v);
        }
    }
    CHECK_THROWS_AS(parse_variant("threehalves"), UsageError);

    auto cg = compile_onehalf(load_tcm(kSamples + "/inc-halt.tcm"));
    CHECK(cg.game.initial_valuation == Valuation<Rational>{1, 1, 0, 0});
    CHECK(cg.anchor(0, 0, "getprob") != npos);
    CHECK(cg.anchor(0, 0, "zerotest") == npos);
    auto tb = compile_timebounded(load_tcm(kSamples + "/halt3.tcm"));
    CHECK(tb.game.initial_valuation == Valuation<Rational>{1, 0, 0, 0, 0});
    for (const char* g : {"checkz", "checkx"}) CHECK(tb.anchor(0, 0, g) != npos);
    CHECK(tb.anchor(1, 1, "zerocheck") != npos);
}

TEST_CASE("increment-c1 weights at F1 give shares 1/12 and 11/12") {
    auto cg = compile_timebounded(load_tcm(kSamples + "/inc-halt.tcm"));
    size_t check = cg.anchor(0, 0, "checkx");
    REQUIRE(check != npos);
    // Walk to the stochastic location carrying the c1/c2 edges.
    size_t f1 = npos;
    for (size_t loc = 0; loc < cg.info.size(); ++loc)
        if (cg.info[loc].part == "checkx" && cg.info[loc].instr == 0 && cg.info[loc].edges.count("c1") &&
            cg.game.locations[loc].owner == Owner::Stochastic && cg.game.edges[cg.info[loc].edges.at("c1")].source == loc) {
            f1 = loc;
            break;
        }
    REQUIRE(f1 != npos);
    Valuation<Rational> v(5, Rational(0));
    std::vector<Rational> shares;
    for (const auto& [edge, p] : edge_choice_prob(cg.game, f1, v)) shares.push_back(p);
    std::sort(shares.begin(), shares.end());
    CHECK(shares == std::vector<Rational>{Rational(1, 12), Rational(11, 12)});
}

TEST_CASE("exact replay reaches the encoded valuation at every module entry") {
    std::mt19937_64 rng(2024);
    std::vector<TwoCounterMachine> machines;
    for (std::string file : {"inc-halt", "halt3", "dec", "loop"}) machines.push_back(load_tcm(kSamples + "/" + file + ".tcm"));
    while (machines.size() < 30) {
        auto m = random_machine(rng);
        try {
            run_tcm(m, 6);
        } catch (const SemanticsError&) {
            continue;  // decrement of zero: not encodable
        }
        machines.push_back(m);
    }
    for (const auto& m : machines) {
        auto run = run_tcm(m, 6);
        for (Variant v : {Variant::OneHalf, Variant::TimeBounded}) {
            CAPTURE(m.to_text());
            CAPTURE(variant_name(v));
            CompiledGame cg = compile(m, v);
            auto snaps = faithful_replay(cg, run, run.steps());
            REQUIRE(snaps.size() == run.steps() + 1);
            for (const auto& s : snaps) {
                CAPTURE(s.step);
                CHECK(s.location == cg.entry_at(run, s.step));
                CHECK(s.valuation == expected_entry_valuation(v, run.configs[s.step], s.step));
                if (v == Variant::TimeBounded) CHECK(s.elapsed < kTimeBudget);
            }
        }
    }
}

TEST_CASE("Box policies") {
    auto m = load_tcm(kSamples + "/halt3.tcm");
    auto cg = compile_timebounded(m);
    auto run = run_tcm(m, 100);
    auto policies = shipped_box_policies(cg, run);
    CHECK(policies.size() == 11);
    for (const auto& p : policies) CHECK(parse_box_policy(p.name()).name() == p.name());
    CHECK(parse_box_policy("continue").kind == BoxPolicy::Kind::AlwaysContinue);
    auto p = parse_box_policy("check:2:mula");
    CHECK(p.step == 2);
    CHECK(p.widget == "mula");
    CHECK_THROWS_AS(parse_box_policy("check:x:mula"), UsageError);
    CHECK_THROWS_AS(parse_box_policy("check:1:dance"), UsageError);
}

TEST_CASE("perturbations outside the law's domain are rejected") {
    auto m = load_tcm(kSamples + "/inc-halt.tcm");
    auto run = run_tcm(m, 10);
    auto cg = compile_onehalf(m);
    Perturbation big{1, Rational(1, 2), Perturbation::Target::Total};
    CHECK_THROWS_AS(faithful_diamond(cg, run, big), DomainError);
    Perturbation ok{1, Rational(1, 10), Perturbation::Target::Total};
    CHECK(faithful_diamond(cg, run, ok) != nullptr);
}

TEST_CASE("gadget verification at small sample sizes") {
    SampleSpec spec;
    spec.samples = 20000;
    spec.seed = 5;
    auto inc = load_tcm(kSamples + "/inc-halt.tcm");
    auto inc_run = run_tcm(inc, 10);
    auto r = verify_gadget(compile_onehalf(inc), inc_run, "getprob", Rational(1, 10), std::nullopt, spec);
    CHECK(r.law == Rational(12, 25));
    CHECK(r.pass);
    CHECK(r.estimate.samples == 20000);
    CHECK(r.to_json()["law_name"] == "getprob");

    auto halt3 = load_tcm(kSamples + "/halt3.tcm");
    auto run = run_tcm(halt3, 100);
    auto tb = compile_timebounded(halt3);
    for (const char* g : {"checkz", "checkx", "zerocheck"}) {
        CAPTURE(g);
        auto res = verify_gadget(tb, run, g, 0, std::nullopt, spec);
        CHECK(res.law == Rational(1, 2));
        CHECK(res.pass);
    }
    CHECK_THROWS_AS(verify_gadget(tb, run, "getprob", 0, std::nullopt, spec), UsageError);
}
