// Copyright 2026 The Retain Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <catch_amalgamated.hpp>

#include <sstream>

#include "cli.hpp"
#include "retain/workspace.hpp"
#include "support.hpp"

using namespace retain;
using retain::testing::TempDir;
using retain::testing::write_file;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    int code = cli::run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

// One scripted model whose answer comes from `script`.
std::string write_setup(const TempDir& dir, const std::string& name, const std::string& script) {
    write_file(dir / (name + ".json"), script);
    write_file(dir / "doc.txt", "The museum adds a night opening on Fridays.");
    const std::string cfg = "prompts: [\"Summarize: {{document}}\"]\n"
                            "providers:\n"
                            "- {id: 'local:model', kind: scripted, script: " +
                            name + ".json}\n"
                            "tests:\n"
                            "- vars: {document: 'file://doc.txt'}\n"
                            "  assert: [{type: bleu, value: 'The museum opens late on Fridays.'}]\n"
                            "- vars: {document: 'Second document.'}\n"
                            "  assert: [{type: bleu, value: 'Second summary.'}]\n"
                            "defaults: {tolerance: 0.05}\n";
    auto path = dir / (name + ".yaml");
    write_file(path, cfg);
    return path.string();
}

const char* kGood = R"({"rules":[{"match":"substring","pattern":"museum","response":"The museum opens late on Fridays."},
                                 {"match":"any","response":"Second summary."}]})";
const char* kWorse = R"({"rules":[{"match":"substring","pattern":"museum","response":"Totally unrelated words here."},
                                  {"match":"any","response":"Second summary."}]})";

} // namespace

TEST_CASE("two identical runs pass the gate") {
    TempDir dir;
    auto cfg = write_setup(dir, "good", kGood);
    auto ws = (dir / "ws").string();
    auto first = run({"eval", "-c", cfg, "--out", ws});
    CHECK(first.code == 0);
    CHECK(first.out.find("no previous run") != std::string::npos);
    auto second = run({"eval", "-c", cfg, "--out", ws});
    CHECK(second.code == 0);
    CHECK(second.out.find("0 regression(s)") != std::string::npos);
    CHECK(workspace::Workspace(ws).list_runs().size() == 2);
}

TEST_CASE("a planted drop beyond tolerance fails the gate") {
    TempDir dir;
    auto good = write_setup(dir, "good", kGood);
    auto worse = write_setup(dir, "worse", kWorse);
    auto ws = (dir / "ws").string();
    CHECK(run({"eval", "-c", good, "--out", ws}).code == 0);
    auto r = run({"eval", "-c", worse, "--out", ws});
    CHECK(r.code == 1);
    CHECK(r.out.find("regression: test 0 bleu") != std::string::npos);
    CHECK(r.out.find("1 regression(s)") != std::string::npos);
    // and recovering is an improvement, not a regression
    CHECK(run({"eval", "-c", good, "--out", ws}).code == 0);
}

TEST_CASE("usage and config errors exit 2") {
    TempDir dir;
    CHECK(run({}).code == 2);
    CHECK(run({"eval"}).code == 2);
    CHECK(run({"eval", "-c", (dir / "missing.yaml").string()}).code == 2);
    write_file(dir / "bad.yaml", "prompts: [a\n");
    CHECK(run({"eval", "-c", (dir / "bad.yaml").string(), "--out", (dir / "ws").string()}).code == 2);
    write_file(dir / "ref.yaml", "prompts: [a]\nproviders: [x:y]\ntests: [{vars: {d: 'file://nope.txt'}}]\n");
    auto r = run({"eval", "-c", (dir / "ref.yaml").string(), "--out", (dir / "ws").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("nope.txt") != std::string::npos);
    CHECK(run({"bench", "synth", "--v", "0.5"}).code == 2);
    CHECK(run({"bench", "synth", "--v", "0.75"}).code == 2);
    CHECK(run({"bench", "synth", "--hermetic", "--live"}).code == 2);
    CHECK(run({"bench", "synth", "--live"}).code == 2);
    CHECK(run({"--help"}).code == 0);
}

TEST_CASE("provider failure exits 3") {
    TempDir dir;
    auto cfg = write_setup(dir, "down", R"({"rules":[{"match":"any","error":"transport"}]})");
    auto r = run({"eval", "-c", cfg, "--out", (dir / "ws").string()});
    CHECK(r.code == 3);
    CHECK(r.err.find("run.aborted") != std::string::npos);

    // a chat provider with no key fails before any network call
    write_file(dir / "chat.yaml", "prompts: [a]\nproviders: [{id: 'acme:m', base_url: 'http://127.0.0.1:9/v1', "
                                  "credentials_env: RETAIN_TEST_UNSET_KEY}]\ntests: [{vars: {}}]\n");
    CHECK(run({"eval", "-c", (dir / "chat.yaml").string(), "--out", (dir / "ws2").string()}).code == 3);
}

TEST_CASE("hermetic bench is deterministic") {
    auto a = run({"bench", "synth", "--hermetic", "--n", "10", "--v", "0.8", "--seed", "3", "--cases", "6", "--json"});
    auto b = run({"bench", "synth", "--hermetic", "--n", "10", "--v", "0.8", "--seed", "3", "--cases", "6", "--json"});
    REQUIRE(a.code == 0);
    CHECK(a.out == b.out);
    auto j = nlohmann::json::parse(a.out);
    CHECK(j["cases"].size() == 6);
    CHECK(j["coverage"]["recall"] == 1.0);
    CHECK(j["mode"] == "hermetic");

    auto table = run({"bench", "synth", "--seed", "3", "--cases", "4"});
    CHECK(table.code == 0);
    CHECK(table.out.find("Error Relevance") != std::string::npos);
}

TEST_CASE("discover from the command line") {
    TempDir dir;
    auto ws = (dir / "ws").string();
    auto offline = (testing::source_dir() / "configs/offline/retain.yaml").string();
    REQUIRE(run({"eval", "-c", offline, "--out", ws}).code == 0);
    auto id = workspace::Workspace(ws).latest_run_id().value();
    auto r = run({"--workspace", ws, "discover", "--run", id, "--goal", "How do the openings differ?"});
    CHECK(r.code == 0);
    CHECK(r.out.find("conversational preamble") != std::string::npos);
    CHECK(run({"--workspace", ws, "discover", "--run", "missing", "--goal", "x"}).code == 2);
}
