#include <doctest.h>

#include <algorithm>

#include "statepipe/core/error.hpp"
#include "statepipe/ingest/ingest.hpp"
#include "statepipe/llm/prompts.hpp"
#include "statepipe/nn/rng.hpp"
#include "statepipe/util/binary.hpp"
#include "unit/helpers.hpp"

using namespace statepipe;
using namespace statepipe::ingest;

namespace {

StateVocabulary apple_vocab() {
    return StateVocabulary("apple", {},
                           {StateDef{"sliced", "Cut into thin pieces.", "The apple is sliced"},
                            StateDef{"peeled", "Skin removed.", "The apple is peeled"}});
}

VideoRecord video(std::string id, std::string title, std::vector<std::string> lines) {
    LoadedTranscript lt;
    lt.transcript.video_id = id;
    lt.title = std::move(title);
    double t = 0;
    for (auto& l : lines) {
        lt.transcript.sentences.push_back({std::move(l), t, t + 2});
        t += 2;
    }
    lt.transcript.duration_s = t;
    return make_video_record(std::move(lt));
}

VerbLexicon lexicon(std::vector<std::vector<std::string>> verbs) {
    VerbLexicon lx;
    lx.object = "apple";
    lx.verbs = std::move(verbs);
    return lx;
}

} // namespace

TEST_CASE("unsorted transcript lines are sorted and flagged") {
    const auto r = parse_transcript("{\"text\":\"b\",\"start_s\":5,\"end_s\":6}\n"
                                    "{\"text\":\"a\",\"start_s\":2,\"end_s\":3}\n",
                                    "v", std::nullopt, "");
    CHECK(r.resorted);
    REQUIRE(r.transcript.sentences.size() == 2);
    CHECK(r.transcript.sentences[0].text == "a");
    CHECK(r.transcript.sentences[1].start_s == 5.0);
}

TEST_CASE("empty transcript has no sentences") {
    const auto r = parse_transcript("", "v", std::nullopt, "");
    CHECK(r.transcript.sentences.empty());
    CHECK_FALSE(r.resorted);
}

TEST_CASE("transcript validation reports the line") {
    try {
        parse_transcript("{\"text\":\"a\",\"start_s\":1,\"end_s\":2}\n{\"text\":\"b\",\"start_s\":4,\"end_s\":4}\n", "v",
                         std::nullopt, "");
        FAIL("expected an error");
    } catch (const FormatError& e) {
        CHECK(e.offset() == 2);
    }
    CHECK_THROWS_AS(parse_transcript("{\"text\":\"a\",\"start_s\":1\n", "v", std::nullopt, ""), FormatError);
    CHECK_THROWS_AS(parse_transcript("{\"text\":\"a\",\"start_s\":1,\"end_s\":50}\n", "v", 10.0, ""),
                    ValidationError);
    CHECK_NOTHROW(parse_transcript("{\"text\":\"a\",\"start_s\":1,\"end_s\":10.5}\n", "v", 10.0, ""));
}

TEST_CASE("transcript files load with their sidecar") {
    testutil::TempDir dir("ingest");
    util::write_file_text(dir / "x.jsonl", "{\"text\":\"I peel the apple\",\"start_s\":0,\"end_s\":2}\n");
    util::write_file_text(dir / "x.meta.json", "{\"video_id\":\"vid7\",\"duration_s\":3,\"title\":\"Apple pie\"}");
    util::write_file_text(dir / "y.jsonl", "{\"text\":\"hello there\",\"start_s\":0,\"end_s\":2}\n");
    CHECK(sidecar_path(dir / "x.jsonl") == dir / "x.meta.json");
    const auto r = load_transcript(dir / "x.jsonl");
    CHECK(r.transcript.video_id == "vid7");
    CHECK(r.title == "Apple pie");
    CHECK(r.transcript.duration_s == 3.0);
    const auto all = load_transcript_dir(dir.str());
    REQUIRE(all.size() == 2);
    CHECK(all[0].video_id == "vid7");
    CHECK(all[0].word_count == 4);
    CHECK(all[1].video_id == "y");
}

TEST_CASE("word count is the sum of whitespace tokens") {
    const auto v = video("v", "", {"one two  three", " four\tfive ", ""});
    CHECK(v.word_count == 5);
}

TEST_CASE("curate keeps, drops on length, drops without a verb") {
    const auto vocab = apple_vocab();
    const auto lx = lexicon({{"slice"}, {"peel"}});
    auto kept = video("a", "apple pie", {"first we peel it"});
    kept.word_count = 500;
    auto long_one = video("b", "apple pie", {"first we peel it"});
    long_one.word_count = 12001;
    auto no_verb = video("c", "apple pie", {"first we bake it"});
    const auto out = curate({kept, long_one, no_verb}, vocab, lx, CurateOptions{12000, false});
    REQUIRE(out.size() == 1);
    CHECK(out[0].record.video_id == "a");
    CHECK(out[0].object_match == ObjectMatch::Title);
    auto exact = video("d", "apple", {"peel"});
    exact.word_count = 12000;
    CHECK(curate({exact}, vocab, lx, CurateOptions{12000, false}).size() == 1);
    CHECK_THROWS_AS(curate({}, vocab, lx, CurateOptions{0, false}), ConfigError);
}

TEST_CASE("curate object modes") {
    const auto vocab = apple_vocab();
    const auto lx = lexicon({{"slice"}, {"peel"}});
    const auto title_only = video("a", "Apple pie", {"peel it"});
    const auto narration_only = video("b", "pie", {"peel the apples"});
    const auto both = video("c", "Apple", {"peel the apple"});
    const auto neither = video("d", "pie", {"peel the pineapple"});
    const auto lenient = curate({title_only, narration_only, both, neither}, vocab, lx, {});
    REQUIRE(lenient.size() == 3);
    CHECK(lenient[1].object_match == ObjectMatch::Narration);
    CHECK(lenient[2].object_match == ObjectMatch::Both);
    const auto strict = curate({title_only, narration_only, both, neither}, vocab, lx, CurateOptions{12000, true});
    REQUIRE(strict.size() == 1);
    CHECK(strict[0].record.video_id == "c");
}

TEST_CASE("verb matching is left-anchored and case-insensitive") {
    CHECK(verb_stem("slice") == "slic");
    CHECK(verb_stem("peel") == "peel");
    CHECK(verb_stem("cut") == "cut");
    CHECK(mentions_verb("The apple was Peeled.", "peel"));
    CHECK(mentions_verb("peeling now", "peel"));
    CHECK_FALSE(mentions_verb("let me repeel it", "peel"));
    CHECK(mentions_verb("SLICING thin", "slice"));
    CHECK(mentions_verb("sliced", "slice"));
    CHECK_FALSE(mentions_verb("cutlery drawer", "cutter"));
    CHECK(mentions_object("Two Apples", "apple"));
    CHECK_FALSE(mentions_object("pineapple", "apple"));
}

TEST_CASE("curate is monotone in max_words and order preserving") {
    const auto vocab = apple_vocab();
    const auto lx = lexicon({{"slice"}, {"peel"}});
    nn::Rng rng(21);
    std::vector<VideoRecord> videos;
    for (int i = 0; i < 40; ++i) {
        auto v = video("v" + std::to_string(i), rng.below(2) ? "apple" : "pear",
                       {rng.below(3) ? "we peel it" : "we bake it"});
        v.word_count = rng.below(200);
        videos.push_back(v);
    }
    std::vector<std::string> prev;
    for (std::size_t mw = 1; mw <= 220; mw += 7) {
        const auto out = curate(videos, vocab, lx, CurateOptions{mw, false});
        std::vector<std::string> ids;
        for (const auto& c : out) ids.push_back(c.record.video_id);
        for (const auto& id : prev) CHECK(std::find(ids.begin(), ids.end(), id) != ids.end());
        std::size_t last = 0;
        for (const auto& id : ids) {
            const auto pos = static_cast<std::size_t>(
                std::find_if(videos.begin(), videos.end(), [&](const auto& v) { return v.video_id == id; }) -
                videos.begin());
            CHECK(pos >= last);
            last = pos;
        }
        prev = ids;
    }
}

TEST_CASE("verb lexicon rows") {
    const auto vocab = apple_vocab();
    const auto lx = parse_verb_lexicon("\"The apple is peeled\",\"peel,slice,cut,core,dip\"\n", vocab);
    CHECK(lx.verbs[1] == std::vector<std::string>{"peel", "slice", "cut", "core", "dip"});
    CHECK(lx.skipped_rows == 0);

    const auto missing = parse_verb_lexicon("\"The apple is peeled\"\n\"The apple is sliced\",\"cut\"\n", vocab);
    CHECK(missing.skipped_rows == 1);
    CHECK(missing.verbs[0] == std::vector<std::string>{"cut"});

    const auto dup = parse_verb_lexicon("\"The apple is sliced\",\"Cut,cut,slice\"\n"
                                        "\"The apple is peeled\",\"cut,peel\"\n",
                                        vocab);
    CHECK(dup.verbs[0] == std::vector<std::string>{"cut", "slice"});
    CHECK(dup.verbs[1] == std::vector<std::string>{"cut", "peel"});

    const auto unknown = parse_verb_lexicon("\"The apple is frozen\",\"freeze\"\n", vocab);
    CHECK(unknown.skipped_rows == 1);
}

TEST_CASE("verb lexicon through the client and file round-trip") {
    const auto vocab = apple_vocab();
    auto transport = std::make_shared<testutil::FakeTransport>([](const std::string&) {
        return "\"The apple is sliced\",\"slice,cut\"\n\"The apple is peeled\",\"peel\"";
    });
    llm::ClientConfig cfg;
    cfg.mode = llm::ClientMode::Live;
    llm::LabelerClient client(cfg, transport);
    const auto lx = build_verb_lexicon(vocab, client);
    CHECK(transport->calls == 1);
    CHECK(transport->prompts[0] == llm::verb_list_prompt(vocab));
    CHECK(lx.verbs[0] == std::vector<std::string>{"slice", "cut"});
    testutil::TempDir dir("ingest");
    util::write_file_text(dir / "lex.json", encode_lexicon(lx, vocab));
    const auto back = read_lexicon_file(dir / "lex.json", vocab);
    CHECK(back.verbs == lx.verbs);
}
