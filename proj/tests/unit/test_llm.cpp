#include <doctest.h>

#include <filesystem>
#include <thread>

#include <httplib.h>

#include "statepipe/core/error.hpp"
#include "statepipe/llm/labeler.hpp"
#include "statepipe/llm/prompts.hpp"
#include "statepipe/util/binary.hpp"
#include "statepipe/util/hash.hpp"
#include "statepipe/util/text.hpp"
#include "unit/helpers.hpp"
#include "unit/malformed_suite.hpp"

using namespace statepipe;
using namespace statepipe::llm;
using L = TernaryLabel;

namespace {

StateVocabulary egg_vocab() {
    return StateVocabulary("egg", {},
                           {StateDef{"cracked", "The shell is broken open.", "The egg is cracked"},
                            StateDef{"whisked", "Beaten until uniform.", "The egg is whisked"},
                            StateDef{"fried", "Cooked in hot oil.", "The egg is fried"}});
}

NarrationTranscript transcript(std::size_t n) {
    NarrationTranscript t;
    t.video_id = "vid";
    for (std::size_t i = 0; i < n; ++i)
        t.sentences.push_back({"now I do step " + std::to_string(i) + " with the egg", 3.0 * i, 3.0 * i + 2.5});
    t.duration_s = 3.0 * n;
    return t;
}

std::vector<std::string> lines_between(const std::string& text, const std::string& after, const std::string& until) {
    auto b = text.find(after);
    REQUIRE(b != std::string::npos);
    b += after.size();
    const auto e = until.empty() ? text.size() : text.find(until, b);
    std::vector<std::string> out;
    for (auto& l : util::split_lines(text.substr(b, e - b)))
        if (!l.empty()) out.push_back(l);
    return out;
}

std::string unquote(std::string s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return s;
}

// Verdict lookup used by the scripted model for stage (c): a function of the
// prefix length and the state.
std::string lookup_answer(std::size_t prefix_len, const std::string& state_text) {
    const auto k = state_text == "The egg is cracked" ? 0u : state_text == "The egg is whisked" ? 1u : 2u;
    switch ((prefix_len + k) % 3) {
    case 0: return "Judging points: a\n\nComparison: b\n\nAnswer: Yes, it fits.";
    case 1: return "Judging points: a\n\nComparison: b\n\nAnswer: No, it does not.";
    default: return "Judging points: a\n\nComparison: b\n\nAnswer: Ambiguous";
    }
}

TernaryLabel lookup_label(std::size_t prefix_len, std::size_t k) {
    switch ((prefix_len + k) % 3) {
    case 0: return L::Positive;
    case 1: return L::Negative;
    default: return L::Unassigned;
    }
}

std::string scripted_model(const std::string& prompt) {
    if (prompt.rfind("Analyze a segment of video transcript", 0) == 0) {
        std::string out = "\"action\",\"support\"\n";
        for (const auto& l : lines_between(prompt, "no headers.\n", "\n\n")) {
            const auto s = unquote(l);
            out += "\"Doing " + s + ".\",\"" + s + "\"\n";
        }
        return out;
    }
    if (prompt.rfind("You will be given a sequence of actions.", 0) == 0) {
        std::string out;
        for (const auto& a : lines_between(prompt, "Here is the sequence of actions.\n", ""))
            out += "\"" + a + "\",\"The egg after " + a + "\"\n";
        return out;
    }
    if (prompt.rfind("This is a history of state of", 0) == 0) {
        const auto history = lines_between(prompt, ":\n", "\n\nNow");
        const auto s0 = prompt.find("definition of \"") + 15;
        const auto state = prompt.substr(s0, prompt.find('"', s0) - s0);
        return lookup_answer(history.size(), state);
    }
    return "unexpected";
}

ClientConfig live_config() {
    ClientConfig c;
    c.mode = ClientMode::Live;
    c.backoff = std::chrono::milliseconds(1);
    return c;
}

} // namespace

TEST_CASE("action rows: header dropped, quoted commas kept, one-column rows counted") {
    ParseStats st;
    const auto rows = parse_action_rows("\"action\",\"support\"\n"
                                        "\"Adding whisked eggs into the pan.\",\"let's add the whisked eggs into the pan\"\n"
                                        "\"Cut, then fold.\",\"cut it, fold it\"\n"
                                        "\"only one column\"\n",
                                        st);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].summary == "Adding whisked eggs into the pan.");
    CHECK(rows[1].support == "cut it, fold it");
    CHECK(st.malformed == 1);
    CHECK(st.rows == 3);
}

TEST_CASE("support text locates the matching sentence or falls back to the block") {
    const std::vector<NarrationSentence> block = {{"first we heat the pan", 10.0, 12.0},
                                                  {"Let's add the whisked eggs into the pan!", 12.0, 15.5},
                                                  {"and stir", 15.5, 18.0}};
    auto m = locate_support("let's add the whisked eggs into the pan", block);
    CHECK(m.matched);
    CHECK(m.start_s == 12.0);
    CHECK(m.end_s == 15.5);
    m = locate_support("completely unrelated words", block);
    CHECK_FALSE(m.matched);
    CHECK(m.start_s == 10.0);
    CHECK(m.end_s == 18.0);
    m = locate_support("first we heat the pan let's add the whisked eggs into the pan", block);
    CHECK(m.matched);
    CHECK(m.start_s == 10.0);
    CHECK(m.end_s == 15.5);
}

TEST_CASE("extract_actions over one block") {
    NarrationTranscript t;
    t.video_id = "v";
    t.sentences = {{"hello everyone", 0.0, 12.0}, {"let's add the whisked eggs into the pan", 12.0, 15.5}};
    auto transport = std::make_shared<testutil::FakeTransport>([](const std::string&) {
        return "\"Adding whisked eggs into the pan.\",\"let's add the whisked eggs into the pan\"\n"
               "\"Stirring the eggs.\",\"we stir gently\"\n"
               "\"broken row\"";
    });
    LabelerClient client(live_config(), transport);
    ParseStats st;
    const auto actions = extract_actions(t, client, st);
    REQUIRE(actions.size() == 2);
    CHECK(actions[0].start_s == 12.0);
    CHECK(actions[0].end_s == 15.5);
    CHECK(actions[0].support_matched);
    CHECK_FALSE(actions[1].support_matched);
    CHECK(actions[1].start_s == 0.0);
    CHECK(actions[1].end_s == 15.5);
    CHECK(actions[1].index == 1);
    CHECK(st.malformed == 1);
    CHECK(transport->prompts[0] == action_extraction_prompt(t.sentences));
}

TEST_CASE("extraction chunks 10 sentences per block and preserves order") {
    auto transport = std::make_shared<testutil::FakeTransport>(scripted_model);
    LabelerClient client(live_config(), transport);
    ParseStats st;
    const auto actions = extract_actions(transcript(25), client, st);
    CHECK(transport->calls == 3);
    REQUIRE(actions.size() == 25);
    for (std::size_t i = 0; i < actions.size(); ++i) {
        CHECK(actions[i].index == i);
        CHECK(actions[i].start_s == 3.0 * i);
    }
    CHECK(st.malformed == 0);
}

TEST_CASE("state description rows: seed sentence, carry-forward repair, format check") {
    ParseStats st;
    std::string rows;
    for (int i = 0; i < 9; ++i) rows += "\"a" + std::to_string(i) + "\",\"The egg has " + std::to_string(i) + "\"\n";
    const auto d = parse_description_rows(rows, "egg", 10, "The state of egg is unknown.", st);
    REQUIRE(d.size() == 10);
    CHECK(d[9] == d[8]);
    CHECK(st.malformed == 1);

    ParseStats st2;
    const auto e = parse_description_rows("\"Cracking the egg into a bowl\",\"Broken shell everywhere\"\n"
                                          "\"Whisking\",\"The egg is whisked\"\n",
                                          "egg", 2, "The egg is whole", st2);
    CHECK(e[0] == "The egg is whole");
    CHECK(e[1] == "The egg is whisked");
    CHECK(st2.malformed == 1);

    ParseStats st3;
    const auto f = parse_description_rows("\"a\",\"The egg 1\"\n\"b\",\"The egg 2\"\n\"c\",\"The egg 3\"\n", "egg", 2,
                                          "x", st3);
    CHECK(f == std::vector<std::string>{"The egg 1", "The egg 2"});
    CHECK(st3.malformed == 1);
}

TEST_CASE("describe_states threads the previous block's last description") {
    auto transport = std::make_shared<testutil::FakeTransport>(scripted_model);
    LabelerClient client(live_config(), transport);
    std::vector<ManipulationAction> actions;
    for (std::size_t i = 0; i < 13; ++i) actions.push_back({i, "act" + std::to_string(i), "", 0, 1, true});
    ParseStats st;
    const auto d = describe_states(actions, "egg", client, st);
    REQUIRE(d.size() == 13);
    REQUIRE(transport->prompts.size() == 2);
    CHECK(transport->prompts[0].find("The state of egg is unknown.") != std::string::npos);
    CHECK(transport->prompts[1].find("\"The egg after act9\"") != std::string::npos);
    CHECK(d[12].text == "The egg after act12");
    CHECK(d[12].action_index == 12);
    CHECK(st.malformed == 0);
}

TEST_CASE("state answers") {
    CHECK(parse_state_answer("Judging points: x\nAnswer: Yes, because the apple retains slice shape.").verdict ==
          L::Positive);
    CHECK(parse_state_answer("Answer: no").verdict == L::Negative);
    const auto amb = parse_state_answer("Answer: Ambiguous");
    CHECK(amb.verdict == L::Unassigned);
    CHECK_FALSE(amb.malformed);
    const auto none = parse_state_answer("I think yes.");
    CHECK(none.verdict == L::Unassigned);
    CHECK(none.malformed);
    const auto both = parse_state_answer("Answer: yes or no");
    CHECK(both.verdict == L::Unassigned);
    CHECK(both.malformed);
    CHECK(parse_state_answer("Answer: No\nmore text\nANSWER: YES.").verdict == L::Positive);
}

TEST_CASE("changeit answers") {
    CHECK(parse_changeit_answer("Current State: x\n\nAnswer: End").phase == ChangePhase::End);
    CHECK(parse_changeit_answer("Answer: Action \xE2\x80\x94 the egg is now being fried").phase == ChangePhase::Action);
    CHECK(parse_changeit_answer("Answer: initial, not started").phase == ChangePhase::Initial);
    const auto bad = parse_changeit_answer("who knows");
    CHECK(bad.phase == ChangePhase::Ambiguous);
    CHECK(bad.malformed);
}

TEST_CASE("infer_labels sees the full prefix and reproduces a lookup exactly") {
    const auto vocab = egg_vocab();
    auto transport = std::make_shared<testutil::FakeTransport>(scripted_model);
    LabelerClient client(live_config(), transport);
    std::vector<StateDescription> d;
    for (std::size_t i = 0; i < 6; ++i) d.push_back({i, "The egg after step " + std::to_string(i), "egg"});
    ParseStats st;
    const auto v = infer_labels(d, vocab, client, st);
    REQUIRE(v.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
        REQUIRE(v[i].size() == 3);
        for (std::size_t k = 0; k < 3; ++k) {
            CHECK(v[i][k].verdict == lookup_label(i + 1, k));
            CHECK(v[i][k].action_index == i);
            CHECK(v[i][k].state_index == k);
        }
    }
    CHECK(transport->calls == 18);
    CHECK(st.malformed == 0);
    const std::vector<std::string> prefix = {d[0].text, d[1].text, d[2].text};
    const auto expected = state_inference_prompt("egg", prefix, vocab[1]);
    CHECK(std::find(transport->prompts.begin(), transport->prompts.end(), expected) != transport->prompts.end());
}

TEST_CASE("infer_labels with concurrency matches the sequential result") {
    const auto vocab = egg_vocab();
    std::vector<StateDescription> d;
    for (std::size_t i = 0; i < 7; ++i) d.push_back({i, "The egg after step " + std::to_string(i), "egg"});
    LabelerClient a(live_config(), std::make_shared<testutil::FakeTransport>(scripted_model));
    LabelerClient b(live_config(), std::make_shared<testutil::FakeTransport>(scripted_model));
    ParseStats sa, sb;
    ChainOptions par;
    par.concurrency = 4;
    CHECK(infer_labels(d, vocab, a, sa) == infer_labels(d, vocab, b, sb, par));
}

TEST_CASE("description context cap") {
    std::vector<StateDescription> d;
    for (std::size_t i = 0; i < 5; ++i) d.push_back({i, "d" + std::to_string(i), "egg"});
    CHECK(description_context(d, 3, 0) == std::vector<std::string>{"d0", "d1", "d2", "d3"});
    CHECK(description_context(d, 3, 2) == std::vector<std::string>{"d2", "d3"});
}

TEST_CASE("changeit labels") {
    auto transport = std::make_shared<testutil::FakeTransport>([](const std::string& p) {
        return p.find("step 1") != std::string::npos ? "Answer: End" : "Answer: Initial";
    });
    LabelerClient client(live_config(), transport);
    std::vector<StateDescription> d = {{0, "The egg at step 0", "egg"}, {1, "The egg at step 1", "egg"}};
    ParseStats st;
    const auto phases = infer_changeit_labels(d, ChangeCategory{"egg", "frying", {"fried"}}, client, st);
    CHECK(phases == std::vector<ChangePhase>{ChangePhase::Initial, ChangePhase::End});
    CHECK_THROWS_AS(infer_changeit_labels(d, ChangeCategory{"egg", "frying", {}}, client, st), ValidationError);
}

TEST_CASE("run_chain composition, record then replay") {
    const auto vocab = egg_vocab();
    testutil::TempDir dir("llm");
    ClientConfig cfg = live_config();
    cfg.mode = ClientMode::Record;
    cfg.cache_dir = dir.str();
    auto transport = std::make_shared<testutil::FakeTransport>(scripted_model);
    LabelerClient rec(cfg, transport);
    const auto chain = run_chain(transcript(12), vocab, rec);
    CHECK(chain.actions.size() == 12);
    CHECK(chain.descriptions.size() == chain.actions.size());
    REQUIRE(chain.verdicts.size() == 12);
    for (const auto& row : chain.verdicts) CHECK(row.size() == vocab.size());
    CHECK(chain.malformed_count() == 0);
    const auto first_calls = transport->calls.load();

    cfg.mode = ClientMode::Replay;
    auto offline = std::make_shared<testutil::NoNetworkTransport>();
    LabelerClient replay(cfg, offline);
    const auto again = run_chain(transcript(12), vocab, replay);
    CHECK(offline->calls == 0);
    CHECK(replay.network_calls() == 0);
    CHECK(replay.cache_hits() == first_calls);
    CHECK(encode_chain(again) == encode_chain(chain));
    CHECK(decode_chain(encode_chain(chain)) == chain);
}

TEST_CASE("empty transcript gives an empty chain without requests") {
    auto transport = std::make_shared<testutil::FakeTransport>(scripted_model);
    LabelerClient client(live_config(), transport);
    const auto chain = run_chain(transcript(0), egg_vocab(), client);
    CHECK(chain.actions.empty());
    CHECK(chain.verdicts.empty());
    CHECK(transport->calls == 0);
}

TEST_CASE("stage failures carry the stage tag") {
    testutil::TempDir dir("llm");
    ClientConfig cfg;
    cfg.mode = ClientMode::Replay;
    cfg.cache_dir = dir.str();
    LabelerClient client(cfg, std::make_shared<testutil::NoNetworkTransport>());
    try {
        run_chain(transcript(3), egg_vocab(), client);
        FAIL("expected a stage error");
    } catch (const StageError& e) {
        CHECK(e.stage() == "extract");
    }
}

TEST_CASE("client cache: key, replay miss, record store, live bypass") {
    testutil::TempDir dir("llm");
    ClientConfig cfg;
    cfg.cache_dir = dir.str();
    cfg.mode = ClientMode::Replay;
    auto offline = std::make_shared<testutil::NoNetworkTransport>();
    LabelerClient replay(cfg, offline);
    CHECK_THROWS_AS(replay.complete("hi"), EndpointError);
    CHECK(offline->calls == 0);

    const auto body = replay.make_request("hi");
    CHECK(body.at("model") == "gpt-3.5-turbo-1106");
    CHECK(body.at("temperature") == 0.0);
    CHECK(replay.cache_key(body) == util::sha256_hex(body.dump()));

    cfg.mode = ClientMode::Record;
    auto transport = std::make_shared<testutil::FakeTransport>([](const std::string& p) { return "echo " + p; });
    LabelerClient rec(cfg, transport);
    CHECK(rec.complete("hi") == "echo hi");
    CHECK(rec.complete("hi") == "echo hi");
    CHECK(transport->calls == 1);
    CHECK(util::read_file_text(dir / replay.cache_key(body)) == "echo hi");
    CHECK(replay.complete("hi") == "echo hi");

    ClientConfig other = cfg;
    other.model = "another-model";
    LabelerClient different(other, transport);
    CHECK(different.cache_key(different.make_request("hi")) != replay.cache_key(body));

    cfg.mode = ClientMode::Live;
    LabelerClient live(cfg, transport);
    live.complete("hi");
    CHECK(transport->calls == 2);
}

TEST_CASE("client retries then fails") {
    struct Flaky final : ChatTransport {
        int failures;
        int calls = 0;
        explicit Flaky(int f) : failures(f) {}
        std::string post(const std::string&) override {
            if (calls++ < failures) throw IoError("connection reset");
            return testutil::chat_response("ok");
        }
    };
    auto flaky = std::make_shared<Flaky>(2);
    LabelerClient ok(live_config(), flaky);
    CHECK(ok.complete("x") == "ok");
    CHECK(flaky->calls == 3);
    auto dead = std::make_shared<Flaky>(10);
    LabelerClient fail(live_config(), dead);
    CHECK_THROWS_AS(fail.complete("x"), EndpointError);
    CHECK(dead->calls == 3);
}

TEST_CASE("message content extraction") {
    CHECK(extract_message_content(testutil::chat_response("abc")) == "abc");
    CHECK_THROWS_AS(extract_message_content("{\"choices\":[]}"), EndpointError);
    CHECK_THROWS_AS(extract_message_content("not json"), EndpointError);
}

TEST_CASE("HTTP transport speaks the chat-completion protocol") {
    httplib::Server server;
    std::string seen_auth, seen_body;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        seen_auth = req.get_header_value("Authorization");
        seen_body = req.body;
        res.set_content(testutil::chat_response("pong"), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    ClientConfig cfg = live_config();
    cfg.endpoint_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    cfg.api_key = "secret";
    LabelerClient client(cfg);
    const auto reply = client.complete("ping");
    server.stop();
    th.join();
    CHECK(reply == "pong");
    CHECK(seen_auth == "Bearer secret");
    const auto j = nlohmann::json::parse(seen_body);
    CHECK(j.at("messages").at(0).at("content") == "ping");
    CHECK(client.network_calls() == 1);
}

TEST_CASE("environment configuration") {
    ::setenv("STATEPIPE_LLM_URL", "http://example.invalid/v1", 1);
    ::setenv("STATEPIPE_LLM_KEY", "k", 1);
    const auto cfg = ClientConfig::from_environment({});
    CHECK(cfg.endpoint_url == "http://example.invalid/v1");
    CHECK(cfg.api_key == "k");
    ::unsetenv("STATEPIPE_LLM_URL");
    ::unsetenv("STATEPIPE_LLM_KEY");
    CHECK(parse_client_mode("record") == ClientMode::Record);
    CHECK_THROWS_AS(parse_client_mode("offline"), ConfigError);
}

TEST_CASE("malformed model output fixtures are all classified") {
    const auto outcomes = testutil::run_malformed_suite(std::string(STATEPIPE_FIXTURES) + "/malformed/cases.json");
    CHECK(outcomes.size() >= 20);
    for (const auto& o : outcomes) {
        INFO(o.name << ": " << o.detail);
        CHECK(o.ok);
    }
}
