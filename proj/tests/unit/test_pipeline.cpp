#include <doctest.h>

#include <algorithm>
#include <filesystem>

#include "statepipe/core/error.hpp"
#include "statepipe/core/io.hpp"
#include "statepipe/pipeline/pipeline.hpp"
#include "statepipe/pipeline/synthetic.hpp"
#include "statepipe/util/binary.hpp"
#include "unit/helpers.hpp"

using namespace statepipe;
using namespace statepipe::pipeline;
namespace fs = std::filesystem;

namespace {

constexpr const char* kTinyTrain =
    "batch_size=4\nepochs_stage1=2\nepochs_stage2=2\nlr=1e-3\nmlp_hidden=8\ntcn_channels=6\n"
    "tcn_layers=3\ntcn_stages=2\ndropout=0.0\n";

SyntheticSpec tiny_spec(std::uint64_t seed, double mask_rate) {
    SyntheticSpec s;
    s.seed = seed;
    s.videos = 3;
    s.frames = 40;
    s.dim = 6;
    s.states = 3;
    s.mask_rate = mask_rate;
    return s;
}

SyntheticWorld write_world(const testutil::TempDir& dir, const SyntheticSpec& spec) {
    auto world = generate_world(spec);
    SyntheticWriteOptions opt;
    opt.train_config = kTinyTrain;
    write_synthetic(world, dir.str(), opt);
    return world;
}

RunOptions offline(std::shared_ptr<testutil::NoNetworkTransport> t) {
    RunOptions o;
    o.transport = std::move(t);
    return o;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file())
            out[fs::relative(e.path(), root).string()] = util::read_file_text(e.path().string());
    return out;
}

} // namespace

TEST_CASE("synthetic fixtures are byte-identical for a fixed seed") {
    testutil::TempDir a("pipe_a"), b("pipe_b"), c("pipe_c");
    write_world(a, tiny_spec(5, 0.3));
    write_world(b, tiny_spec(5, 0.3));
    write_world(c, tiny_spec(6, 0.3));
    const auto sa = snapshot(a.str());
    CHECK(sa.size() > 10);
    CHECK(sa == snapshot(b.str()));
    CHECK_FALSE(sa == snapshot(c.str()));
}

TEST_CASE("synthetic spec validation and round-trip") {
    auto s = tiny_spec(1, 0.2);
    s.transitions = {{0}, {1, 2}};
    CHECK(decode_spec(encode_spec(s)).transitions == s.transitions);
    CHECK(encode_spec(decode_spec(encode_spec(s))) == encode_spec(s));
    s.transitions = {{3}};
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = tiny_spec(1, 1.0);
    CHECK_THROWS_AS(generate_world(s), ConfigError);
}

TEST_CASE("mask rate sets the fraction of assigned cells") {
    auto spec = tiny_spec(11, 0.4);
    spec.videos = 10;
    spec.frames = 250;
    spec.states = 4;
    const auto world = generate_world(spec);
    std::size_t assigned = 0, cells = 0;
    for (const auto& v : world.videos) {
        const auto m = masked_labels(v);
        assigned += m.assigned_count();
        cells += m.num_frames() * m.num_states();
        for (std::size_t t = 0; t < m.num_frames(); ++t)
            for (std::size_t k = 0; k < m.num_states(); ++k)
                CHECK(m.at(t, k) == (v.masked[t] ? TernaryLabel::Unassigned : v.truth.at(t, k)));
    }
    REQUIRE(cells >= 10000);
    CHECK(std::abs(static_cast<double>(assigned) / static_cast<double>(cells) - 0.6) <= 0.02);
}

TEST_CASE("config validation fails before any stage runs") {
    testutil::TempDir dir("pipe_cfg");
    write_world(dir, tiny_spec(2, 0.0));
    auto cfg = read_pipeline_config(dir / "pipeline.json");
    CHECK_NOTHROW(cfg.validate());
    fs::remove(dir / "vocab.json");
    auto transport = std::make_shared<testutil::NoNetworkTransport>();
    CHECK_THROWS_AS(run_pipeline(read_pipeline_config(dir / "pipeline.json"), offline(transport)), ConfigError);
    CHECK_FALSE(fs::exists(fs::path(cfg.resolve(cfg.work_dir)) / "manifest.json"));
    CHECK_THROWS_AS(parse_pipeline_config("{\"vocab\":\"v\",\"scorer\":{\"backend\":\"magic\"}}", dir.str()).validate(),
                    ConfigError);
    CHECK_THROWS_AS(parse_pipeline_config("not json", dir.str()), ConfigError);
}

TEST_CASE("manifest encodes and decodes") {
    PipelineManifest m;
    m.stages["curate"] = {{{"a.json", "ff00"}}, {{"work/curated.json", "00ff"}}};
    m.videos["v"] = {"aligned", 2, 10, 1, 0.75};
    m.counters["mAP"] = 0.5;
    const auto back = PipelineManifest::decode(m.encode());
    CHECK(back.encode() == m.encode());
    CHECK(back.videos.at("v").malformed_rows == 2);
    CHECK(back.stages.at("curate").outputs.at("work/curated.json") == "00ff");
    CHECK_THROWS(PipelineManifest::decode("{"));
}

TEST_CASE("offline run recovers ground truth, then reruns nothing") {
    testutil::TempDir dir("pipe_run");
    const auto world = write_world(dir, tiny_spec(3, 0.0));
    const auto cfg = read_pipeline_config(dir / "pipeline.json");
    auto transport = std::make_shared<testutil::NoNetworkTransport>();
    const auto first = run_pipeline(cfg, offline(transport));
    CHECK(first.network_calls == 0);
    CHECK(transport->calls == 0);
    CHECK(first.skipped.empty());
    CHECK(std::find(first.executed.begin(), first.executed.end(), "eval") != first.executed.end());
    CHECK(first.manifest.counters.at("assignment_rate") == 1.0);
    for (const auto& v : world.videos) {
        const auto labels = read_label_file((fs::path(cfg.resolve(cfg.work_dir)) / "labels" / (v.video_id + ".json")).string());
        CHECK(labels.num_frames() == v.truth.num_frames());
        bool equal = true;
        for (std::size_t t = 0; t < labels.num_frames(); ++t)
            for (std::size_t k = 0; k < labels.num_states(); ++k) equal = equal && labels.at(t, k) == v.truth.at(t, k);
        CHECK(equal);
    }

    const auto second = run_pipeline(cfg, offline(transport));
    CHECK(second.executed.empty());
    CHECK(second.skipped.size() == first.executed.size());

    // A damaged label file re-runs its align stage and everything downstream of it.
    const auto victim = (fs::path(cfg.resolve(cfg.work_dir)) / "labels" / (world.videos[1].video_id + ".json")).string();
    util::write_file_text(victim, "{}");
    const auto third = run_pipeline(cfg, offline(transport));
    const auto ran = [&](const std::string& s) {
        return std::find(third.executed.begin(), third.executed.end(), s) != third.executed.end();
    };
    CHECK(ran("align:" + world.videos[1].video_id));
    CHECK_FALSE(ran("align:" + world.videos[0].video_id));
    CHECK_FALSE(ran("curate"));
    CHECK(ran("train"));
    CHECK(ran("selftrain"));
    CHECK(ran("eval"));
    CHECK(util::read_file_text(victim) != "{}");
    CHECK(run_pipeline(cfg, offline(transport)).executed.empty());
}

TEST_CASE("masked frames stay unassigned after the run") {
    testutil::TempDir dir("pipe_mask");
    const auto world = write_world(dir, tiny_spec(4, 0.4));
    const auto cfg = read_pipeline_config(dir / "pipeline.json");
    auto transport = std::make_shared<testutil::NoNetworkTransport>();
    const auto r = run_pipeline(cfg, offline(transport));
    CHECK(transport->calls == 0);
    CHECK(std::abs(r.manifest.counters.at("assignment_rate") - 0.6) <= 0.02);
    const auto held = read_heldout_file(dir / "heldout.json");
    for (const auto& v : world.videos) {
        const auto labels = read_label_file((fs::path(cfg.resolve(cfg.work_dir)) / "labels" / (v.video_id + ".json")).string());
        const auto expect = masked_labels(v);
        bool equal = labels.num_frames() == expect.num_frames();
        for (std::size_t t = 0; equal && t < labels.num_frames(); ++t)
            for (std::size_t k = 0; k < labels.num_states(); ++k) equal = equal && labels.at(t, k) == expect.at(t, k);
        CHECK(equal);
        std::size_t masked = 0;
        for (auto m : v.masked) masked += m;
        CHECK(held.at(v.video_id).size() == masked);
    }
}
