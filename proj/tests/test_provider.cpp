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

#include <httplib.h>

#include <atomic>
#include <thread>

#include <nlohmann/json.hpp>

#include "retain/provider.hpp"
#include "retain/text.hpp"
#include "support.hpp"

using namespace retain;
using namespace retain::provider;
using retain::testing::catch_all;
using retain::testing::rule;
using retain::testing::scripted;
using namespace std::chrono_literals;

namespace {

CompletionRequest req(std::string prompt) { return {"p", std::move(prompt), 0.0, 64}; }

std::string completion_body(const std::string& content) {
    nlohmann::json j = {{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}};
    return j.dump();
}

// Local chat-completions stub on an ephemeral port.
class StubServer {
public:
    using Handler = std::function<void(const httplib::Request&, httplib::Response&, int call)>;

    explicit StubServer(Handler h) : handler_(std::move(h)) {
        svr_.Post(R"(/v1/(chat/completions|embeddings))", [this](const httplib::Request& rq, httplib::Response& rs) {
            int n = ++calls_;
            last_auth_ = rq.get_header_value("Authorization");
            last_body_ = rq.body;
            handler_(rq, rs, n);
        });
        port_ = svr_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { svr_.listen_after_bind(); });
        svr_.wait_until_ready();
    }
    ~StubServer() {
        svr_.stop();
        thread_.join();
    }

    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
    int calls() const { return calls_; }
    std::string last_auth() const { return last_auth_; }
    std::string last_body() const { return last_body_; }

private:
    httplib::Server svr_;
    Handler handler_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> calls_{0};
    std::string last_auth_;
    std::string last_body_;
};

struct SleepLog {
    std::vector<std::chrono::milliseconds> delays;
    Sleeper sleeper() {
        return [this](std::chrono::milliseconds d) { delays.push_back(d); };
    }
};

ChatOptions options_for(const StubServer& s) {
    ChatOptions o;
    o.base_url = s.base_url();
    o.model = "stub-model";
    o.api_key = "sk-test";
    o.request_timeout = 2000ms;
    return o;
}

class SlowProvider final : public Provider {
public:
    SlowProvider(int limit) : Provider("slow", limit) {}
    std::atomic<int> active{0};
    std::atomic<int> max_seen{0};

protected:
    CompletionResult do_complete(const CompletionRequest&) override {
        int now = ++active;
        int prev = max_seen.load();
        while (now > prev && !max_seen.compare_exchange_weak(prev, now)) {
        }
        std::this_thread::sleep_for(5ms);
        --active;
        return {"ok", 5, 1};
    }
    std::vector<double> do_embed(std::string_view) override { return {1.0}; }
};

} // namespace

TEST_CASE("scripted rules answer by order") {
    auto p = scripted("s", {
                               catch_all("fallback"),
                               rule(MatchKind::Substring, "cat", "substring", 5),
                               rule(MatchKind::Exact, "the cat", "exact", 1),
                               rule(MatchKind::Regex, "^d.g$", "regex", 2),
                           });
    CHECK(p->complete(req("the cat")).text == "exact");
    CHECK(p->complete(req("a cat!")).text == "substring");
    CHECK(p->complete(req("dog")).text == "regex");
    CHECK(p->complete(req("bird")).text == "fallback");
    CHECK(p->complete(req("bird")).attempt_count == 1);
}

TEST_CASE("ties in order keep declaration order") {
    auto p = scripted("s", {rule(MatchKind::Substring, "a", "first", 1), rule(MatchKind::Substring, "a", "second", 1),
                            catch_all("x")});
    CHECK(p->complete(req("a")).text == "first");
}

TEST_CASE("a script without a catch-all is rejected") {
    CHECK_THROWS_AS(scripted("s", {rule(MatchKind::Exact, "x", "y")}), ValidationError);
    CHECK_THROWS_AS(scripted("s", {}), ValidationError);
    // empty substring counts as a catch-all
    CHECK_NOTHROW(scripted("s", {rule(MatchKind::Substring, "", "y")}));
    CHECK_THROWS_AS(scripted("s", {rule(MatchKind::Regex, "(", "y"), catch_all("z")}), ValidationError);
}

TEST_CASE("scripted failures raise the matching provider errors") {
    auto fail = [](ScriptedFailure f) {
        ScriptRule r = rule(MatchKind::Substring, "boom", "");
        r.failure = f;
        return scripted("s", {r, catch_all("fine")});
    };
    CHECK_THROWS_AS(fail(ScriptedFailure::Timeout)->complete(req("boom")), Timeout);
    CHECK_THROWS_AS(fail(ScriptedFailure::RateLimited)->complete(req("boom")), RateLimited);
    CHECK_THROWS_AS(fail(ScriptedFailure::Transport)->complete(req("boom")), TransportError);
    CHECK_THROWS_AS(fail(ScriptedFailure::Auth)->complete(req("boom")), AuthError);
    CHECK(fail(ScriptedFailure::Timeout)->complete(req("calm")).text == "fine");
}

TEST_CASE("request validation") {
    auto p = scripted("s", {catch_all("x")});
    CHECK_THROWS_AS(p->complete({"s", "hi", -0.1, 10}), ValidationError);
    CHECK_THROWS_AS(p->complete({"s", "hi", 0.0, 0}), ValidationError);
}

TEST_CASE("scripted embeddings are hashed token bags") {
    auto p = scripted("s", {catch_all("x")});
    auto v = p->embed("The cat the");
    REQUIRE(v.size() == ScriptedProvider::kDefaultDimension);
    std::vector<double> expected(ScriptedProvider::kDefaultDimension, 0.0);
    expected[text::fnv1a64("the") % 64] += 2.0;
    expected[text::fnv1a64("cat") % 64] += 1.0;
    CHECK(v == expected);
    CHECK(p->embed("The cat the") == v);
    CHECK(p->bucket_of("cat") == text::fnv1a64("cat") % 64);
}

TEST_CASE("cosine") {
    CHECK(cosine({1, 0}, {0, 1}) == 0.0);
    CHECK(cosine({1, 2}, {2, 4}) == Catch::Approx(1.0));
    CHECK(cosine({0, 0}, {1, 1}) == 0.0);
    CHECK_THROWS_AS(cosine({1}, {1, 2}), ValidationError);
}

TEST_CASE("script files") {
    auto p = parse_script("s", R"({"rules":[{"match":"exact","pattern":"hi","response":"hello"},
        {"match":"substring","pattern":"slow","error":"timeout"},{"match":"any","response":"?"}],"embedding_dim":8})");
    CHECK(p->complete(req("hi")).text == "hello");
    CHECK(p->complete(req("other")).text == "?");
    CHECK_THROWS_AS(p->complete(req("too slow")), Timeout);
    CHECK(p->dimension() == 8);

    CHECK_THROWS_AS(parse_script("s", "{nope"), SyntaxError);
    CHECK_THROWS_AS(parse_script("s", R"({"rules":{}})"), ValidationError);
    CHECK_THROWS_AS(parse_script("s", R"({"rules":[{"match":"glob","pattern":"x"},{"match":"any"}]})"),
                    ValidationError);
    CHECK_THROWS_AS(parse_script("s", R"({"rules":[{"match":"any","error":"melted"}]})"), ValidationError);
    CHECK_THROWS_AS(load_script("s", "/nonexistent/script.json"), FileNotFound);
}

TEST_CASE("in-flight limit bounds concurrency") {
    SlowProvider p(3);
    std::vector<std::thread> threads;
    for (int i = 0; i < 16; ++i) {
        threads.emplace_back([&] {
            for (int k = 0; k < 4; ++k) p.complete(req("x"));
        });
    }
    for (auto& t : threads) t.join();
    CHECK(p.max_seen.load() <= 3);
    CHECK(p.peak_in_flight() <= 3);
    CHECK(p.peak_in_flight() >= 1);
    CHECK_THROWS_AS(SlowProvider(0), ValidationError);
}

TEST_CASE("backoff schedule") {
    RetryPolicy policy;
    CHECK(backoff_delay(policy, 1) == 500ms);
    CHECK(backoff_delay(policy, 2) == 1000ms);
    CHECK(backoff_delay(policy, 3) == 2000ms);
    CHECK(backoff_delay(policy, 5) == 8000ms);
    CHECK(backoff_delay(policy, 9) == 8000ms);
}

TEST_CASE("with_retry") {
    RetryPolicy policy;
    SleepLog log;
    int attempts = 0;

    SECTION("transient then success") {
        int calls = 0;
        auto v = with_retry(policy, log.sleeper(), attempts, [&] {
            if (++calls < 3) throw TransportError("x");
            return 7;
        });
        CHECK(v == 7);
        CHECK(attempts == 3);
        CHECK(log.delays == std::vector<std::chrono::milliseconds>{500ms, 1000ms});
    }
    SECTION("non-transient errors are not retried") {
        CHECK_THROWS_AS(with_retry(policy, log.sleeper(), attempts, []() -> int { throw AuthError("x"); }), AuthError);
        CHECK(attempts == 1);
        CHECK(log.delays.empty());
    }
    SECTION("attempts are capped") {
        CHECK_THROWS_AS(with_retry(policy, log.sleeper(), attempts, []() -> int { throw Timeout("x"); }), Timeout);
        CHECK(attempts == 3);
    }
    SECTION("a zero deadline allows one attempt") {
        policy.total_deadline = 0ms;
        CHECK_THROWS_AS(with_retry(policy, log.sleeper(), attempts, []() -> int { throw RateLimited("x"); }),
                        RateLimited);
        CHECK(attempts == 1);
    }
}

TEST_CASE("chat provider: 500 then 200 succeeds on the second attempt") {
    StubServer stub([](const httplib::Request&, httplib::Response& res, int call) {
        if (call == 1) {
            res.status = 500;
            res.set_content("oops", "text/plain");
        } else {
            res.set_content(completion_body("hello there"), "application/json");
        }
    });
    SleepLog log;
    ChatProvider p("stub:model", options_for(stub), log.sleeper());
    auto r = p.complete(req("Say hi"));
    CHECK(r.text == "hello there");
    CHECK(r.attempt_count == 2);
    CHECK(stub.calls() == 2);
    CHECK(stub.last_auth() == "Bearer sk-test");
    auto body = nlohmann::json::parse(stub.last_body());
    CHECK(body["model"] == "stub-model");
    CHECK(body["messages"][0]["content"] == "Say hi");
    CHECK(log.delays == std::vector<std::chrono::milliseconds>{500ms});
}

TEST_CASE("chat provider: 401 is not retried") {
    StubServer stub([](const httplib::Request&, httplib::Response& res, int) { res.status = 401; });
    SleepLog log;
    ChatProvider p("stub:model", options_for(stub), log.sleeper());
    CHECK_THROWS_AS(p.complete(req("x")), AuthError);
    CHECK(stub.calls() == 1);
    CHECK(log.delays.empty());
}

TEST_CASE("chat provider: 429 three times exhausts retries") {
    StubServer stub([](const httplib::Request&, httplib::Response& res, int) { res.status = 429; });
    SleepLog log;
    ChatProvider p("stub:model", options_for(stub), log.sleeper());
    CHECK_THROWS_AS(p.complete(req("x")), RateLimited);
    CHECK(stub.calls() == 3);
    CHECK(log.delays == std::vector<std::chrono::milliseconds>{500ms, 1000ms});
}

TEST_CASE("chat provider: other statuses") {
    SECTION("400 is rejected without retry") {
        StubServer stub([](const httplib::Request&, httplib::Response& res, int) { res.status = 400; });
        SleepLog log;
        ChatProvider p("stub:model", options_for(stub), log.sleeper());
        CHECK_THROWS_AS(p.complete(req("x")), RequestRejected);
        CHECK(stub.calls() == 1);
    }
    SECTION("malformed payload") {
        StubServer stub(
            [](const httplib::Request&, httplib::Response& res, int) { res.set_content("{}", "application/json"); });
        SleepLog log;
        ChatProvider p("stub:model", options_for(stub), log.sleeper());
        CHECK_THROWS_AS(p.complete(req("x")), TransportError);
    }
}

TEST_CASE("chat provider: slow responses time out") {
    StubServer stub([](const httplib::Request&, httplib::Response& res, int) {
        std::this_thread::sleep_for(600ms);
        res.set_content(completion_body("late"), "application/json");
    });
    SleepLog log;
    auto opts = options_for(stub);
    opts.request_timeout = 150ms;
    opts.retry.max_attempts = 1;
    ChatProvider p("stub:model", opts, log.sleeper());
    CHECK_THROWS_AS(p.complete(req("x")), Timeout);
}

TEST_CASE("chat provider: missing key fails before any request") {
    StubServer stub([](const httplib::Request&, httplib::Response& res, int) {
        res.set_content(completion_body("x"), "application/json");
    });
    auto opts = options_for(stub);
    opts.api_key.reset();
    ChatProvider p("stub:model", opts);
    CHECK_THROWS_AS(p.complete(req("x")), AuthError);
    CHECK(stub.calls() == 0);
}

TEST_CASE("chat provider: embeddings") {
    StubServer stub([](const httplib::Request& rq, httplib::Response& res, int) {
        if (rq.path.ends_with("/embeddings")) {
            res.set_content(R"({"data":[{"embedding":[0.5,0.25]}]})", "application/json");
        } else {
            res.status = 404;
        }
    });
    ChatProvider p("stub:model", options_for(stub));
    CHECK(p.embed("hello") == std::vector<double>{0.5, 0.25});
}

TEST_CASE("make_provider and build_registry") {
    auto env = [](const std::string& name) -> std::optional<std::string> {
        if (name == "OPENAI_API_KEY") return "sk-x";
        return std::nullopt;
    };

    config::ProviderSpec unknown_family;
    unknown_family.id = "acme:big";
    unknown_family.credentials_env = "ACME_API_KEY";
    CHECK_THROWS_AS(make_provider(unknown_family, env), ValidationError);

    config::ProviderSpec openai;
    openai.id = "openai:gpt-4o";
    openai.credentials_env = "OPENAI_API_KEY";
    auto p = make_provider(openai, env);
    CHECK(p->id() == "openai:gpt-4o");
    CHECK(default_base_url("openai") == "https://api.openai.com/v1");
    CHECK_FALSE(default_base_url("acme").has_value());

    retain::testing::TempDir dir;
    retain::testing::write_file(dir / "s.json", R"({"rules":[{"match":"any","response":"ok"}]})");
    config::EvalConfig cfg;
    config::ProviderSpec s;
    s.id = "local:s";
    s.kind = config::ProviderKind::Scripted;
    s.script = (dir / "s.json").string();
    cfg.providers = {openai, s};
    cfg.roles["judge"] = openai;
    cfg.roles["discovery_generator"] = s;
    auto reg = build_registry(cfg, env);
    CHECK(reg.contains("openai:gpt-4o"));
    CHECK(reg.contains("local:s"));
    CHECK_FALSE(reg.contains("nope"));
    CHECK(&reg.role("judge") == &reg.get("openai:gpt-4o"));
    CHECK(reg.has_role("discovery_generator"));
    CHECK_FALSE(reg.has_role("writer"));
    CHECK(reg.complete({"local:s", "hi", 0.0, 10}).text == "ok");
    CHECK_THROWS_AS(reg.get("nope"), UnknownProvider);
    CHECK_THROWS_AS(reg.role("writer"), UnknownProvider);
}
