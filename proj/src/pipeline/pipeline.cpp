#include "statepipe/pipeline/pipeline.hpp"

#include <filesystem>
#include <functional>
#include <set>

#include <json.hpp>

#include "statepipe/core/error.hpp"
#include "statepipe/core/io.hpp"
#include "statepipe/metrics/metrics.hpp"
#include "statepipe/models/model_io.hpp"
#include "statepipe/train/trainer.hpp"
#include "statepipe/util/binary.hpp"
#include "statepipe/util/hash.hpp"
#include "statepipe/util/parallel.hpp"

namespace statepipe::pipeline {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

std::string PipelineConfig::resolve(const std::string& path) const {
    if (path.empty()) return path;
    const fs::path p(path);
    if (p.is_absolute() || base_dir.empty()) return p.lexically_normal().string();
    return (fs::path(base_dir) / p).lexically_normal().string();
}

void PipelineConfig::validate() const {
    const auto need = [&](const std::string& what, const std::string& path, bool dir) {
        if (path.empty()) throw ConfigError("pipeline config: " + what + " is not set");
        const auto full = resolve(path);
        if (dir ? !fs::is_directory(full) : !fs::is_regular_file(full))
            throw ConfigError("pipeline config: " + what + " not found: " + full);
    };
    need("vocab", vocab, false);
    need("transcripts", transcripts, true);
    need("features", features, true);
    need("train_config", train_config, false);
    if (!lexicon.empty()) need("lexicon", lexicon, false);
    if (!ground_truth.empty()) need("ground_truth", ground_truth, true);
    if (scorer_backend == "stub") need("scorer fixture", scorer_fixture, false);
    else if (scorer_backend == "vlm") need("frames_dir", frames_dir, true);
    else throw ConfigError("pipeline config: unknown scorer backend '" + scorer_backend + "'");
    if (work_dir.empty()) throw ConfigError("pipeline config: work_dir is not set");
    align.validate();
}

PipelineConfig parse_pipeline_config(const std::string& text, const std::string& base_dir) {
    PipelineConfig c;
    c.base_dir = base_dir;
    try {
        const auto j = ordered_json::parse(text);
        c.vocab = j.value("vocab", std::string{});
        c.transcripts = j.value("transcripts", std::string{});
        c.features = j.value("features", std::string{});
        c.ground_truth = j.value("ground_truth", std::string{});
        c.lexicon = j.value("lexicon", std::string{});
        c.train_config = j.value("train_config", std::string{});
        c.work_dir = j.value("work_dir", std::string{"work"});
        c.seed = j.value("seed", std::uint64_t{0});

        c.llm = llm::ClientConfig::from_environment(c.llm);
        if (j.contains("llm")) {
            const auto& l = j.at("llm");
            c.llm.cache_dir = c.resolve(l.value("cache_dir", std::string{}));
            if (l.contains("mode")) c.llm.mode = llm::parse_client_mode(l.at("mode").get<std::string>());
            c.llm.model = l.value("model", c.llm.model);
            if (l.contains("endpoint_url")) c.llm.endpoint_url = l.at("endpoint_url").get<std::string>();
            if (l.contains("timeout_ms"))
                c.llm.timeout = std::chrono::milliseconds(l.at("timeout_ms").get<long>());
            c.llm.max_attempts = l.value("max_attempts", c.llm.max_attempts);
        }
        if (j.contains("scorer")) {
            const auto& s = j.at("scorer");
            c.scorer_backend = s.value("backend", c.scorer_backend);
            c.scorer_fixture = s.value("fixture", std::string{});
            c.frames_dir = s.value("frames_dir", std::string{});
            c.vlm_cache_dir = s.value("cache_dir", std::string{});
            c.background = s.value("background", c.background);
        }
        if (j.contains("chain")) {
            const auto& ch = j.at("chain");
            c.chain.sentences_per_block = ch.value("sentences_per_block", c.chain.sentences_per_block);
            c.chain.actions_per_block = ch.value("actions_per_block", c.chain.actions_per_block);
            c.chain.max_context = ch.value("max_context", c.chain.max_context);
            c.chain.concurrency = ch.value("concurrency", c.chain.concurrency);
        }
        if (j.contains("align")) {
            const auto& a = j.at("align");
            c.align.delta_t = a.value("delta_t", c.align.delta_t);
            c.align.background_threshold = a.value("background_threshold", c.align.background_threshold);
            if (a.contains("background_prompts"))
                c.align.background_prompts = a.at("background_prompts").get<std::vector<std::string>>();
            c.align.restrict_to_action_interval =
                a.value("restrict_to_action_interval", c.align.restrict_to_action_interval);
            c.align.state_filter = a.value("state_filter", c.align.state_filter);
        }
        if (j.contains("curate")) {
            const auto& cu = j.at("curate");
            c.curate.max_words = cu.value("max_words", c.curate.max_words);
            c.curate.require_title_and_narration =
                cu.value("require_title_and_narration", c.curate.require_title_and_narration);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("pipeline config: ") + e.what());
    }
    return c;
}

PipelineConfig read_pipeline_config(const std::string& path) {
    if (!fs::is_regular_file(path)) throw ConfigError("pipeline config not found: " + path);
    return parse_pipeline_config(util::read_file_text(path), fs::absolute(path).parent_path().string());
}

std::string PipelineManifest::encode() const {
    ordered_json j;
    j["version"] = 1;
    ordered_json st = ordered_json::object();
    for (const auto& [key, rec] : stages)
        st[key] = ordered_json{{"inputs", rec.inputs}, {"outputs", rec.outputs}};
    j["stages"] = std::move(st);
    ordered_json vids = ordered_json::object();
    for (const auto& [id, v] : videos)
        vids[id] = ordered_json{{"stage", v.stage},
                                {"malformed_rows", v.malformed_rows},
                                {"total_rows", v.total_rows},
                                {"unmatched", v.unmatched},
                                {"assignment_rate", v.assignment_rate}};
    j["videos"] = std::move(vids);
    j["counters"] = counters;
    return j.dump(2) + "\n";
}

PipelineManifest PipelineManifest::decode(const std::string& text) {
    PipelineManifest m;
    try {
        const auto j = ordered_json::parse(text);
        for (const auto& [key, rec] : j.at("stages").items())
            m.stages[key] = StageRecord{rec.at("inputs").get<std::map<std::string, std::string>>(),
                                        rec.at("outputs").get<std::map<std::string, std::string>>()};
        for (const auto& [id, v] : j.at("videos").items())
            m.videos[id] = VideoStatus{v.at("stage").get<std::string>(),
                                       v.at("malformed_rows").get<std::size_t>(),
                                       v.at("total_rows").get<std::size_t>(),
                                       v.at("unmatched").get<std::size_t>(),
                                       v.at("assignment_rate").get<double>()};
        m.counters = j.at("counters").get<std::map<std::string, double>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest: ") + e.what(), 0);
    }
    return m;
}

namespace {

using Files = std::map<std::string, std::string>;

class Runner {
public:
    Runner(const PipelineConfig& cfg, PipelineManifest& manifest, RunResult& result)
        : cfg_(cfg), manifest_(manifest), result_(result) {}

    std::string key(const std::string& path) const {
        const auto rel = fs::path(path).lexically_relative(cfg_.base_dir.empty() ? "." : cfg_.base_dir);
        return rel.empty() ? path : rel.generic_string();
    }

    void add_file(Files& files, const std::string& path) const {
        files[key(path)] = util::sha256_file(path);
    }

    bool up_to_date(const std::string& stage, const Files& inputs) const {
        const auto it = manifest_.stages.find(stage);
        if (it == manifest_.stages.end() || it->second.inputs != inputs) return false;
        for (const auto& [path, hash] : it->second.outputs) {
            const auto full = cfg_.resolve(path);
            if (hash.empty() || util::sha256_file(full) != hash) return false;
        }
        return !it->second.outputs.empty();
    }

    void record(const std::string& stage, Files inputs, const std::vector<std::string>& outputs) {
        StageRecord rec{std::move(inputs), {}};
        for (const auto& o : outputs) add_file(rec.outputs, o);
        manifest_.stages[stage] = std::move(rec);
        result_.executed.push_back(stage);
    }

    void skip(const std::string& stage) { result_.skipped.push_back(stage); }

    // Returns true when the stage executed.
    bool run(const std::string& stage, const Files& inputs, bool forced,
             const std::function<std::vector<std::string>()>& body) {
        if (!forced && up_to_date(stage, inputs)) {
            skip(stage);
            return false;
        }
        record(stage, inputs, body());
        return true;
    }

private:
    const PipelineConfig& cfg_;
    PipelineManifest& manifest_;
    RunResult& result_;
};

std::string config_digest(const ordered_json& j) { return util::sha256_hex(j.dump()); }

template <typename Fn>
auto in_stage(const std::string& stage, const std::string& video, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, video, e.what());
    }
}

std::vector<std::string> sorted_files(const std::string& dir, const std::string& ext) {
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace

RunResult run_pipeline(const PipelineConfig& config, const RunOptions& options) {
    config.validate();
    const auto vocab = read_vocabulary_file(config.resolve(config.vocab));
    const auto names = vocab.state_names();
    auto train_cfg = train::read_train_config(config.resolve(config.train_config));
    if (config.seed_override) train_cfg.seed = *config.seed_override;

    const fs::path work(config.resolve(config.work_dir));
    for (const char* sub : {"chains", "labels", "teachers", "student", "predictions"})
        fs::create_directories(work / sub);
    const auto manifest_path = (work / "manifest.json").string();

    RunResult result;
    auto& manifest = result.manifest;
    if (fs::is_regular_file(manifest_path)) {
        try {
            manifest = PipelineManifest::decode(util::read_file_text(manifest_path));
        } catch (const FormatError&) {
            manifest = {};
        }
    }
    Runner runner(config, manifest, result);

    auto llm_cfg = config.llm;
    if (options.mode) llm_cfg.mode = *options.mode;
    if (options.cache_dir) llm_cfg.cache_dir = *options.cache_dir;
    auto client = std::make_shared<llm::LabelerClient>(llm_cfg, options.transport);

    const auto features_path = [&](const std::string& id) {
        return (fs::path(config.resolve(config.features)) / (id + ".fsq")).string();
    };
    const auto chain_path = [&](const std::string& id) { return (work / "chains" / (id + ".json")).string(); };
    const auto label_path = [&](const std::string& id) { return (work / "labels" / (id + ".json")).string(); };
    const auto pred_path = [&](const std::string& id) { return (work / "predictions" / (id + ".fsq")).string(); };

    // ---- curate
    const auto curated_path = (work / "curated.json").string();
    const auto lexicon_path = (work / "lexicon.csv").string();
    Files curate_in;
    runner.add_file(curate_in, config.resolve(config.vocab));
    for (const auto& f : sorted_files(config.resolve(config.transcripts), ".jsonl")) {
        runner.add_file(curate_in, f);
        runner.add_file(curate_in, ingest::sidecar_path(f));
    }
    if (!config.lexicon.empty()) runner.add_file(curate_in, config.resolve(config.lexicon));
    curate_in["@config"] = config_digest(
        ordered_json{{"max_words", config.curate.max_words},
                     {"both", config.curate.require_title_and_narration},
                     {"model", llm_cfg.model}});
    const bool curated_ran = runner.run("curate", curate_in, false, [&] {
        return in_stage("curate", "", [&] {
            const auto videos = ingest::load_transcript_dir(config.resolve(config.transcripts));
            const auto lexicon = config.lexicon.empty()
                                     ? ingest::build_verb_lexicon(vocab, *client)
                                     : ingest::read_lexicon_file(config.resolve(config.lexicon), vocab);
            util::write_file_text(lexicon_path, ingest::encode_lexicon(lexicon, vocab));
            ordered_json list = ordered_json::array();
            for (const auto& c : ingest::curate(videos, vocab, lexicon, config.curate))
                list.push_back(ordered_json{{"video_id", c.record.video_id},
                                            {"title", c.record.title},
                                            {"word_count", c.record.word_count},
                                            {"object_match", ingest::to_string(c.object_match)},
                                            {"transcript", runner.key(c.record.source_path)}});
            util::write_file_text(curated_path,
                                  ordered_json{{"object", vocab.object_name()}, {"videos", list}}.dump(2) + "\n");
            return std::vector<std::string>{curated_path, lexicon_path};
        });
    });

    struct Curated {
        std::string id;
        std::string transcript;
    };
    std::vector<Curated> curated;
    const auto curated_json = ordered_json::parse(util::read_file_text(curated_path));
    for (const auto& v : curated_json.at("videos"))
        curated.push_back({v.at("video_id").get<std::string>(), config.resolve(v.at("transcript").get<std::string>())});
    for (const auto& c : curated)
        if (!fs::is_regular_file(features_path(c.id)))
            throw StageError("curate", c.id, "no feature file at " + features_path(c.id));

    // ---- label
    const auto chain_digest = config_digest(
        ordered_json{{"sentences_per_block", config.chain.sentences_per_block},
                     {"actions_per_block", config.chain.actions_per_block},
                     {"max_context", config.chain.max_context},
                     {"model", llm_cfg.model}});
    std::vector<Files> label_in(curated.size());
    std::vector<std::uint8_t> label_todo(curated.size(), 0);
    for (std::size_t i = 0; i < curated.size(); ++i) {
        runner.add_file(label_in[i], curated[i].transcript);
        runner.add_file(label_in[i], ingest::sidecar_path(curated[i].transcript));
        runner.add_file(label_in[i], config.resolve(config.vocab));
        label_in[i]["@config"] = chain_digest;
        label_todo[i] = curated_ran || !runner.up_to_date("label:" + curated[i].id, label_in[i]);
    }
    std::vector<llm::ActionStateChain> chains(curated.size());
    util::parallel_for(curated.size(), options.threads, [&](std::size_t i) {
        if (!label_todo[i]) return;
        const auto& c = curated[i];
        in_stage("label", c.id, [&] {
            const auto loaded = ingest::load_transcript(c.transcript);
            chains[i] = llm::run_chain(loaded.transcript, vocab, *client, config.chain);
            util::write_file_text(chain_path(c.id), llm::encode_chain(chains[i]));
        });
    });
    for (std::size_t i = 0; i < curated.size(); ++i) {
        const auto& id = curated[i].id;
        auto& status = manifest.videos[id];
        if (label_todo[i]) {
            runner.record("label:" + id, label_in[i], {chain_path(id)});
            status.stage = "labeled";
            status.malformed_rows = chains[i].malformed_count();
            status.total_rows = chains[i].total_rows();
        } else {
            runner.skip("label:" + id);
        }
    }

    // ---- align
    std::optional<align::StubScorer> stub;
    std::shared_ptr<align::ChatVlmScorer> vlm;
    if (config.scorer_backend == "stub") {
        stub = align::StubScorer::from_file(config.resolve(config.scorer_fixture));
    } else {
        auto vcfg = llm::ClientConfig::from_environment(llm_cfg, "STATEPIPE_VLM_URL", "STATEPIPE_LLM_KEY");
        if (!config.vlm_cache_dir.empty()) vcfg.cache_dir = config.resolve(config.vlm_cache_dir);
        vlm = std::make_shared<align::ChatVlmScorer>(
            std::make_shared<llm::LabelerClient>(vcfg, options.transport), config.resolve(config.frames_dir));
    }
    const auto align_digest = config_digest(
        ordered_json{{"delta_t", config.align.delta_t},
                     {"background_threshold", config.align.background_threshold},
                     {"background_prompts", config.align.background_prompts},
                     {"restrict", config.align.restrict_to_action_interval},
                     {"state_filter", config.align.state_filter},
                     {"background", config.background},
                     {"backend", config.scorer_backend}});
    std::vector<Files> align_in(curated.size());
    std::vector<std::uint8_t> align_todo(curated.size(), 0);
    for (std::size_t i = 0; i < curated.size(); ++i) {
        const auto& id = curated[i].id;
        runner.add_file(align_in[i], chain_path(id));
        runner.add_file(align_in[i], features_path(id));
        runner.add_file(align_in[i], config.resolve(config.vocab));
        if (stub) runner.add_file(align_in[i], config.resolve(config.scorer_fixture));
        align_in[i]["@config"] = align_digest;
        align_todo[i] = label_todo[i] || !runner.up_to_date("align:" + id, align_in[i]);
    }
    std::vector<align::AlignStats> align_stats(curated.size());
    std::vector<double> rates(curated.size(), 0.0);
    util::parallel_for(curated.size(), options.threads, [&](std::size_t i) {
        if (!align_todo[i]) return;
        const auto& id = curated[i].id;
        in_stage("align", id, [&] {
            const auto chain = llm::decode_chain(util::read_file_text(chain_path(id)));
            const auto features = read_feature_file(features_path(id));
            std::optional<align::StubScorer> local = stub;
            align::Scorers scorers;
            if (local) {
                scorers.choice = scorers.boolean = &*local;
                if (config.background) scorers.embedding = &*local;
            } else {
                scorers.choice = scorers.boolean = vlm.get();
            }
            auto aligned = align::align(chain, features.num_frames, vocab, scorers, config.align);
            align_stats[i] = aligned.stats;
            rates[i] = aligned.timeline.assignment_rate();
            write_label_file(aligned.timeline, vocab.object_name(), names, label_path(id));
        });
    });
    bool any_align = false;
    for (std::size_t i = 0; i < curated.size(); ++i) {
        const auto& id = curated[i].id;
        auto& status = manifest.videos[id];
        if (align_todo[i]) {
            runner.record("align:" + id, align_in[i], {label_path(id)});
            status.stage = "aligned";
            status.unmatched = align_stats[i].unmatched;
            status.assignment_rate = rates[i];
            any_align = true;
        } else {
            runner.skip("align:" + id);
        }
    }

    // ---- train
    const auto train_cfg_path = config.resolve(config.train_config);
    const auto teachers_dir = (work / "teachers").string();
    const auto student_dir = (work / "student").string();
    const auto model_files = [](const std::string& dir, std::initializer_list<const char*> names_) {
        std::vector<std::string> out;
        for (const char* n : names_) {
            out.push_back((fs::path(dir) / (std::string(n) + ".spw")).string());
            out.push_back((fs::path(dir) / (std::string(n) + ".json")).string());
        }
        return out;
    };
    const auto load_examples = [&] {
        std::vector<train::Example> data;
        for (const auto& c : curated)
            data.push_back(train::make_example(read_feature_file(features_path(c.id)),
                                               read_label_file(label_path(c.id))));
        return data;
    };
    const auto seed_digest = config_digest(ordered_json{{"seed", train_cfg.seed}});

    Files train_in;
    for (const auto& c : curated) {
        runner.add_file(train_in, label_path(c.id));
        runner.add_file(train_in, features_path(c.id));
    }
    runner.add_file(train_in, train_cfg_path);
    train_in["@seed"] = seed_digest;
    const auto teacher_outputs = model_files(teachers_dir, {"mlp", "tcn"});
    const bool trained = runner.run("train", train_in, curated_ran || any_align, [&] {
        return in_stage("train", "", [&] {
            const auto data = load_examples();
            train::LossHistory history;
            const auto teachers = train::train_teachers(data, train_cfg, &history);
            models::save_mlp(teachers.mlp, teachers_dir, "mlp");
            models::save_tcn(teachers.tcn, teachers_dir, "tcn");
            return teacher_outputs;
        });
    });

    // ---- selftrain
    Files self_in = train_in;
    for (const auto& f : teacher_outputs) runner.add_file(self_in, f);
    const auto student_outputs = model_files(student_dir, {"tcn", "mlp"});
    const bool self_trained = runner.run("selftrain", self_in, trained, [&] {
        return in_stage("selftrain", "", [&] {
            const auto data = load_examples();
            train::Teachers teachers{models::load_mlp(teachers_dir, "mlp"),
                                     models::load_tcn(teachers_dir, "tcn")};
            const auto r = train::self_train(std::move(teachers), data, train_cfg);
            models::save_tcn(r.student_tcn, student_dir, "tcn");
            models::save_mlp(r.student_mlp, student_dir, "mlp");
            return student_outputs;
        });
    });

    // ---- predict
    Files pred_in;
    runner.add_file(pred_in, student_outputs[0]);
    runner.add_file(pred_in, student_outputs[1]);
    for (const auto& c : curated) runner.add_file(pred_in, features_path(c.id));
    const bool predicted = runner.run("predict", pred_in, self_trained, [&] {
        return in_stage("predict", "", [&] {
            const auto tcn = models::load_tcn(student_dir, "tcn");
            std::vector<std::string> outs;
            for (const auto& c : curated) {
                const auto features = read_feature_file(features_path(c.id));
                const auto probs = tcn.predict(train::to_matrix(features));
                FeatureSequence pred{c.id, probs.rows(), probs.cols(), features.fps, probs.values()};
                write_feature_file(pred, pred_path(c.id));
                outs.push_back(pred_path(c.id));
            }
            return outs;
        });
    });

    // ---- eval
    if (!config.ground_truth.empty()) {
        const auto report_path = (work / "report.json").string();
        std::vector<std::string> gt_files;
        for (const auto& c : curated) {
            const auto p = (fs::path(config.resolve(config.ground_truth)) / (c.id + ".json")).string();
            if (fs::is_regular_file(p)) gt_files.push_back(p);
        }
        if (!gt_files.empty()) {
            Files eval_in;
            for (const auto& c : curated) runner.add_file(eval_in, pred_path(c.id));
            for (const auto& g : gt_files) runner.add_file(eval_in, g);
            runner.run("eval", eval_in, predicted, [&] {
                return in_stage("eval", "", [&] {
                    std::vector<FeatureSequence> preds;
                    for (const auto& c : curated) {
                        auto p = read_feature_file(pred_path(c.id));
                        p.video_id = c.id;
                        preds.push_back(std::move(p));
                    }
                    std::vector<PseudoLabelTimeline> gts;
                    for (const auto& g : gt_files) gts.push_back(read_ground_truth_file(g));
                    const auto report = metrics::evaluate(preds, gts, names, vocab.object_name());
                    util::write_file_text(report_path, metrics::encode_report(report));
                    manifest.counters["mAP"] = report.map;
                    manifest.counters["mean_f1_max"] = report.mean_f1;
                    return std::vector<std::string>{report_path};
                });
            });
        }
    }

    std::size_t malformed = 0, rows = 0, unmatched = 0;
    double assigned = 0.0, cells = 0.0;
    for (const auto& c : curated) {
        const auto& s = manifest.videos[c.id];
        malformed += s.malformed_rows;
        rows += s.total_rows;
        unmatched += s.unmatched;
        const auto labels = read_label_file(label_path(c.id));
        assigned += static_cast<double>(labels.assigned_count());
        cells += static_cast<double>(labels.num_frames() * labels.num_states());
    }
    manifest.counters["videos_curated"] = static_cast<double>(curated.size());
    manifest.counters["malformed_rows"] = static_cast<double>(malformed);
    manifest.counters["total_rows"] = static_cast<double>(rows);
    manifest.counters["unmatched_answers"] = static_cast<double>(unmatched);
    manifest.counters["assignment_rate"] = cells > 0 ? assigned / cells : 0.0;
    result.network_calls = client->network_calls();
    util::write_file_text(manifest_path, manifest.encode());
    return result;
}

} // namespace statepipe::pipeline
