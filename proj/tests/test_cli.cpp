// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

using nlohmann::json;

namespace {

const std::string kCli = STG_CLI_PATH;
const std::string kSamples = STG_SAMPLES_DIR;
const std::string kGolden = STG_GOLDEN_DIR;

struct CliResult {
    int exit_code = -1;
    std::string out;
};

// Runs the CLI with stderr discarded.
CliResult run_cli(const std::string& args) {
    std::string cmd = "'" + kCli + "' " + args + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CliResult r;
    std::array<char, 4096> buf{};
    while (size_t n = fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), n);
    int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    return json::parse(in);
}

std::string sample(const std::string& name) { return "'" + kSamples + "/" + name + "'"; }

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("stg-cli-test-" + name)).string();
}

void write_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    out << j.dump(2);
}

}  // namespace

TEST_CASE("golden JSON outputs") {
    struct Golden {
        std::string args, file;
        int exit_code = 0;
    };
    std::vector<Golden> cases = {
        {"exact-path --model " + sample("example_a.json") + " --path e1,e2", "exact_path_example_a.json"},
        {"abstract --model " + sample("fig1.json"), "abstract_fig1.json"},
        {"solve --mdp " + sample("mdp/choice.mdp.json") + " --mode maxmin --threshold '>= 1/2'", "solve_choice.json", 1},  // threshold does not hold
        {"run-2cm --program " + sample("halt3.tcm"), "run_halt3.json"},
        {"check-star --model " + sample("fig1.json"), "check_star_fig1.json"},
    };
    for (const auto& c : cases) {
        CAPTURE(c.args);
        auto r = run_cli("--output json " + c.args);
        CHECK(r.exit_code == c.exit_code);
        CHECK(json::parse(r.out) == read_json(kGolden + "/" + c.file));
    }
}

TEST_CASE("exit codes") {
    CHECK(run_cli("validate --model " + sample("fig1.json")).exit_code == 0);
    CHECK(run_cli("validate --model /nonexistent.json").exit_code == 2);
    CHECK(run_cli("no-such-command").exit_code == 2);
    CHECK(run_cli("exact-path --model " + sample("fig1.json")).exit_code == 2);  // missing --path
    CHECK(run_cli("--threads zero simulate --model " + sample("fig1.json")).exit_code == 2);
    CHECK(run_cli("solve --model " + sample("choice.json")).exit_code == 2);  // Box states need max-min
    CHECK(run_cli("abstract --model " + sample("example_a.json")).exit_code == 3);
    CHECK(run_cli("abstract --model " + sample("unfair2clock.json")).exit_code == 3);
    CHECK(run_cli("gadget-verify --program " + sample("inc-halt.tcm") + " --gadget getprob --epsilon 0.9 --samples 100")
              .exit_code == 2);

    // Ill-formed model: stochastic location without a distribution.
    json bad = read_json(kSamples + "/fig1.json");
    bad["distributions"].erase("A");
    std::string path = temp_path("bad.json");
    write_json(path, bad);
    auto r = run_cli("--output json validate --model '" + path + "'");
    CHECK(r.exit_code == 3);
    CHECK(json::parse(r.out)["ok"] == false);
}

TEST_CASE("check-star flags the reset-stripped mutant") {
    json m = read_json(kSamples + "/fig1.json");
    for (auto& e : m["edges"]) e["resets"] = json::array();
    std::string path = temp_path("stripped.json");
    write_json(path, m);
    auto r = run_cli("--output json check-star --model '" + path + "'");
    CHECK(r.exit_code == 1);
    auto j = json::parse(r.out);
    CHECK(j["initialized"]["pass"] == false);
    CHECK(j["initialized"]["witness"] == "e8");
}

TEST_CASE("simulation output depends on the seed only") {
    std::string d = temp_path("diamond.json"), b = temp_path("box.json");
    write_json(d, json::parse(R"({"kind":"positional","rules":{"S0":{"edge":"a2","delay":"earliest"}}})"));
    write_json(b, json::parse(R"({"kind":"positional","rules":{"M":{"edge":"m1","delay":"midpoint"}}})"));
    std::string args = "simulate --model " + sample("choice.json") + " --diamond '" + d + "' --box '" + b + "' --samples 5000";
    auto one = run_cli("--output json --seed 9 --threads 1 " + args);
    auto two = run_cli("--output json --seed 9 --threads 2 " + args);
    auto other = run_cli("--output json --seed 10 " + args);
    REQUIRE(one.exit_code == 0);
    CHECK(json::parse(one.out)["hits"] == json::parse(two.out)["hits"]);
    CHECK(json::parse(one.out)["hits"] != json::parse(other.out)["hits"]);
    // Global options are also accepted after the subcommand.
    auto after = run_cli(args + " --seed 9 --output json");
    CHECK(after.exit_code == 0);
    CHECK(json::parse(after.out)["hits"] == json::parse(one.out)["hits"]);
}

TEST_CASE("compiled games round-trip through validate and regions") {
    for (std::string variant : {"onehalf", "timebounded"}) {
        CAPTURE(variant);
        std::string out = temp_path("halt3-" + variant + ".json");
        auto c = run_cli("compile-2cm --program " + sample("halt3.tcm") + " --variant " + variant + " --out '" + out + "'");
        CHECK(c.exit_code == 0);
        CHECK(run_cli("validate --model '" + out + "'").exit_code == 0);
        // Multi-clock games are outside the region pipeline.
        CHECK(run_cli("regions --model '" + out + "'").exit_code == 3);
    }
}

TEST_CASE("gadget-verify and simulate-2cm") {
    auto r = run_cli("--output json gadget-verify --program " + sample("inc-halt.tcm") +
                     " --gadget getprob --epsilon 0.2 --samples 20000");
    CHECK(r.exit_code == 0);
    auto j = json::parse(r.out);
    CHECK(j["law"] == "21/50");
    CHECK(j["pass"] == true);

    auto s = run_cli("--output json simulate-2cm --program " + sample("halt3.tcm") + " --variant onehalf --samples 20000");
    CHECK(s.exit_code == 0);
    auto sj = json::parse(s.out);
    CHECK(sj["halting_sum"] == "9/16");
    double est = sj["point"];
    CHECK(std::abs(est - 0.5625) < 4 * std::sqrt(0.5625 * 0.4375 / 20000));
}
