#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "statepipe/align/aligner.hpp"
#include "statepipe/align/scorer.hpp"
#include "statepipe/core/error.hpp"
#include "statepipe/core/io.hpp"
#include "statepipe/ingest/ingest.hpp"
#include "statepipe/llm/client.hpp"
#include "statepipe/llm/labeler.hpp"
#include "statepipe/metrics/metrics.hpp"
#include "statepipe/models/model_io.hpp"
#include "statepipe/pipeline/pipeline.hpp"
#include "statepipe/pipeline/synthetic.hpp"
#include "statepipe/train/trainer.hpp"
#include "statepipe/util/binary.hpp"
#include "statepipe/util/parallel.hpp"

namespace fs = std::filesystem;
using namespace statepipe;
using ordered_json = nlohmann::ordered_json;

namespace {

struct Globals {
    std::string cache;
    std::string mode;
    std::optional<std::uint64_t> seed;
    std::size_t threads = 1;
    bool deterministic = false;
    std::string model;
};

std::size_t effective_threads(const Globals& g) { return g.deterministic ? 1 : std::max<std::size_t>(1, g.threads); }

llm::ClientConfig client_config(const Globals& g) {
    auto cfg = llm::ClientConfig::from_environment({});
    if (!g.cache.empty()) cfg.cache_dir = g.cache;
    if (!g.mode.empty()) cfg.mode = llm::parse_client_mode(g.mode);
    if (!g.model.empty()) cfg.model = g.model;
    return cfg;
}

std::vector<std::string> files_with_ext(const std::string& dir, const std::string& ext) {
    if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir);
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

std::string stem(const std::string& path) { return fs::path(path).stem().string(); }

void require_file(const std::string& what, const std::string& path) {
    if (!fs::is_regular_file(path)) throw ConfigError(what + " not found: " + path);
}

// Features and labels joined by video id; labels without features are an error.
std::vector<train::Example> load_examples(const std::string& features_dir, const std::string& labels_dir) {
    std::vector<train::Example> data;
    for (const auto& lp : files_with_ext(labels_dir, ".json")) {
        const auto fp = (fs::path(features_dir) / (stem(lp) + ".fsq")).string();
        require_file("feature file", fp);
        data.push_back(train::make_example(read_feature_file(fp), read_label_file(lp)));
    }
    if (data.empty()) throw ConfigError("no label files in " + labels_dir);
    return data;
}

train::TrainConfig train_config(const std::string& path, const Globals& g) {
    auto cfg = path.empty() ? train::TrainConfig{} : train::read_train_config(path);
    if (g.seed) cfg.seed = *g.seed;
    return cfg;
}

void print_history(const train::LossHistory& h) {
    for (std::size_t e = 0; e < h.mlp.size(); ++e)
        std::printf("epoch %zu  mlp %.6f  tcn %.6f\n", e + 1, h.mlp[e], e < h.tcn.size() ? h.tcn[e] : 0.0);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"statepipe: pseudo-labeled object-state recognition from narrated videos"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--cache", g.cache, "LLM response cache directory");
    app.add_option("--mode", g.mode, "LLM client mode")->check(CLI::IsMember({"live", "replay", "record"}));
    app.add_option("--seed", g.seed, "Random seed (overrides config files)");
    app.add_option("--threads", g.threads, "Worker threads for per-video stages");
    app.add_flag("--deterministic", g.deterministic, "Force a single thread");
    app.add_option("--model", g.model, "Chat model id");

    // synth
    pipeline::SyntheticSpec spec;
    std::string synth_out, synth_train_cfg;
    auto* synth = app.add_subcommand("synth", "Generate an offline synthetic fixture set");
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--videos", spec.videos);
    synth->add_option("--frames", spec.frames);
    synth->add_option("--dim", spec.dim);
    synth->add_option("--states", spec.states);
    synth->add_option("--action-rate", spec.action_rate);
    synth->add_option("--mask-rate", spec.mask_rate);
    synth->add_option("--noise", spec.noise);
    synth->add_option("--object", spec.object);
    synth->add_option("--train-config", synth_train_cfg, "hyperparameter file to copy in place of the small default")
        ->check(CLI::ExistingFile);

    // curate
    std::string vocab_path, transcripts_dir, lexicon_path, out_path, lexicon_out;
    std::size_t max_words = 12000;
    auto* curate = app.add_subcommand("curate", "Filter transcripts by object and verb mentions");
    curate->add_option("--vocab", vocab_path)->required();
    curate->add_option("--transcripts", transcripts_dir)->required();
    curate->add_option("--lexicon", lexicon_path, "Verb lexicon CSV; built through the LLM when omitted");
    curate->add_option("--lexicon-out", lexicon_out);
    curate->add_option("--max-words", max_words);
    bool strict = false;
    curate->add_flag("--strict-title-and-narration", strict, "Require the object name in both title and narration");
    curate->add_option("--out", out_path, "Curated list: JSON, or JSON lines when the name ends in .jsonl")->required();

    // label
    std::string label_out;
    llm::ChainOptions chain_opt;
    auto* label = app.add_subcommand("label", "Run the LLM chain over transcripts");
    label->add_option("--vocab", vocab_path)->required();
    std::string transcript_file;
    auto* tdir = label->add_option("--transcripts", transcripts_dir, "Directory of .jsonl transcripts");
    auto* tfile = label->add_option("--transcript", transcript_file, "Single transcript; --out is then a file");
    tdir->excludes(tfile);
    label->add_option("--out", label_out, "Output directory, or chain file with --transcript")->required();
    label->add_option("--sentences-per-block", chain_opt.sentences_per_block);
    label->add_option("--actions-per-block", chain_opt.actions_per_block);
    label->add_option("--max-context", chain_opt.max_context);

    // align
    std::string chains_dir, features_dir, scorer_fixture, align_out;
    align::AlignmentConfig align_cfg;
    bool no_background = false;
    auto* alignc = app.add_subcommand("align", "Align chain labels to frames");
    alignc->add_option("--vocab", vocab_path)->required();
    alignc->add_option("--chains", chains_dir)->required();
    alignc->add_option("--features", features_dir)->required();
    alignc->add_option("--scorer", scorer_fixture, "Stub scorer fixture (JSON)")->required();
    alignc->add_option("--out", align_out, "Output directory for label files")->required();
    alignc->add_option("--delta-t", align_cfg.delta_t);
    alignc->add_option("--background-threshold", align_cfg.background_threshold);
    alignc->add_flag("--no-background", no_background);

    // train
    std::string labels_dir, cfg_path, model_out;
    auto* trainc = app.add_subcommand("train", "Train the teacher MLP and TCN");
    trainc->add_option("--features", features_dir)->required();
    trainc->add_option("--labels", labels_dir)->required();
    trainc->add_option("--config", cfg_path, "train.cfg");
    trainc->add_option("--out", model_out)->required();

    // selftrain
    std::string teachers_dir;
    auto* selfc = app.add_subcommand("selftrain", "Mean-teacher self-training of the student TCN");
    selfc->add_option("--features", features_dir)->required();
    selfc->add_option("--labels", labels_dir, "Pseudo-labels; only needed with selftrain_assigned_only");
    selfc->add_option("--teachers", teachers_dir)->required();
    selfc->add_option("--config", cfg_path, "train.cfg");
    selfc->add_option("--out", model_out)->required();

    // predict
    std::string model_dir, model_name = "tcn", pred_out;
    auto* predict = app.add_subcommand("predict", "Write per-frame state probabilities");
    predict->add_option("--features", features_dir)->required();
    predict->add_option("--model", model_dir)->required();
    predict->add_option("--name", model_name, "Checkpoint name: tcn or mlp");
    predict->add_option("--out", pred_out)->required();

    // eval
    std::string preds_dir, gt_dir, heldout_path;
    bool per_video = false;
    auto* evalc = app.add_subcommand("eval", "F1-max and mAP against ground truth");
    evalc->add_option("--vocab", vocab_path)->required();
    evalc->add_option("--pred,--predictions", preds_dir)->required();
    evalc->add_option("--gt", gt_dir)->required();
    evalc->add_option("--heldout", heldout_path, "Restrict to the frames listed per video");
    evalc->add_flag("--per-video-f1", per_video);
    evalc->add_option("--out", out_path);

    // eval-changeit
    auto* evalci = app.add_subcommand("eval-changeit", "Causally ordered precision@1");
    evalci->add_option("--pred,--predictions", preds_dir)->required();
    evalci->add_option("--gt,--truth", gt_dir)->required();
    evalci->add_option("--out", out_path);

    // run
    std::string pipeline_path;
    auto* run = app.add_subcommand("run", "Run every stage from a pipeline.json");
    run->add_option("--config", pipeline_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // usage errors share the configuration exit status; --help still exits 0
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*synth) {
            if (g.seed) spec.seed = *g.seed;
            pipeline::SyntheticWriteOptions wopt;
            if (!synth_train_cfg.empty()) wopt.train_config = util::read_file_text(synth_train_cfg);
            if (!g.model.empty()) wopt.model = g.model;
            const auto world = pipeline::generate_world(spec);
            pipeline::write_synthetic(world, synth_out, wopt);
            std::printf("wrote %zu videos to %s\n", world.videos.size(), synth_out.c_str());
        } else if (*curate) {
            const auto vocab = read_vocabulary_file(vocab_path);
            llm::LabelerClient client(client_config(g));
            const auto lexicon = lexicon_path.empty() ? ingest::build_verb_lexicon(vocab, client)
                                                      : ingest::read_lexicon_file(lexicon_path, vocab);
            if (!lexicon_out.empty()) util::write_file_text(lexicon_out, ingest::encode_lexicon(lexicon, vocab));
            const auto videos = ingest::load_transcript_dir(transcripts_dir);
            ingest::CurateOptions copt;
            copt.max_words = max_words;
            copt.require_title_and_narration = strict;
            ordered_json list = ordered_json::array();
            for (const auto& c : ingest::curate(videos, vocab, lexicon, copt))
                list.push_back({{"video_id", c.record.video_id},
                                {"title", c.record.title},
                                {"word_count", c.record.word_count},
                                {"object_match", ingest::to_string(c.object_match)},
                                {"transcript", c.record.source_path}});
            if (fs::path(out_path).extension() == ".jsonl") {
                std::string lines;
                for (const auto& v : list) lines += v.dump() + "\n";
                util::write_file_text(out_path, lines);
            } else {
                util::write_file_text(out_path,
                                      ordered_json{{"object", vocab.object_name()}, {"videos", list}}.dump(2) + "\n");
            }
            std::printf("curated %zu of %zu videos\n", list.size(), videos.size());
        } else if (*label) {
            const auto vocab = read_vocabulary_file(vocab_path);
            llm::LabelerClient client(client_config(g));
            if (transcript_file.empty() && transcripts_dir.empty())
                throw ConfigError("label needs --transcript or --transcripts");
            const bool single = !transcript_file.empty();
            if (!single) fs::create_directories(label_out);
            const auto files = single ? std::vector<std::string>{transcript_file} : files_with_ext(transcripts_dir, ".jsonl");
            std::vector<std::string> summary(files.size());
            util::parallel_for(files.size(), effective_threads(g), [&](std::size_t i) {
                const auto loaded = ingest::load_transcript(files[i]);
                const auto& id = loaded.transcript.video_id;
                try {
                    const auto chain = llm::run_chain(loaded.transcript, vocab, client, chain_opt);
                    util::write_file_text(single ? label_out : (fs::path(label_out) / (id + ".json")).string(),
                                          llm::encode_chain(chain));
                    summary[i] = id + ": " + std::to_string(chain.actions.size()) + " actions, " +
                                 std::to_string(chain.malformed_count()) + " malformed rows";
                } catch (const StageError&) {
                    throw;
                } catch (const std::exception& e) {
                    throw StageError("label", id, e.what());
                }
            });
            for (const auto& s : summary) std::printf("%s\n", s.c_str());
            std::printf("network calls %zu, cache hits %zu\n", client.network_calls(), client.cache_hits());
        } else if (*alignc) {
            const auto vocab = read_vocabulary_file(vocab_path);
            const auto names = vocab.state_names();
            const auto prototype = align::StubScorer::from_file(scorer_fixture);
            fs::create_directories(align_out);
            for (const auto& cp : files_with_ext(chains_dir, ".json")) {
                const auto id = stem(cp);
                try {
                    const auto chain = llm::decode_chain(util::read_file_text(cp));
                    const auto fp = (fs::path(features_dir) / (id + ".fsq")).string();
                    require_file("feature file", fp);
                    const auto features = read_feature_file(fp);
                    auto scorer = prototype;
                    align::Scorers scorers;
                    scorers.choice = scorers.boolean = &scorer;
                    if (!no_background) scorers.embedding = &scorer;
                    const auto r = align::align(chain, features.num_frames, vocab, scorers, align_cfg);
                    write_label_file(r.timeline, vocab.object_name(), names,
                                     (fs::path(align_out) / (id + ".json")).string());
                    std::printf("%s: assignment rate %.4f, unmatched %zu\n", id.c_str(),
                                r.timeline.assignment_rate(), r.stats.unmatched);
                } catch (const StageError&) {
                    throw;
                } catch (const std::exception& e) {
                    throw StageError("align", id, e.what());
                }
            }
        } else if (*trainc) {
            const auto cfg = train_config(cfg_path, g);
            const auto data = load_examples(features_dir, labels_dir);
            train::LossHistory history;
            const auto teachers = train::train_teachers(data, cfg, &history);
            models::save_mlp(teachers.mlp, model_out, "mlp");
            models::save_tcn(teachers.tcn, model_out, "tcn");
            print_history(history);
        } else if (*selfc) {
            const auto cfg = train_config(cfg_path, g);
            train::Teachers teachers{models::load_mlp(teachers_dir, "mlp"), models::load_tcn(teachers_dir, "tcn")};
            std::vector<train::Example> data;
            if (!labels_dir.empty()) {
                data = load_examples(features_dir, labels_dir);
            } else {
                if (cfg.selftrain_assigned_only) throw ConfigError("selftrain_assigned_only needs --labels");
                const auto k = teachers.tcn.config().num_states;
                for (const auto& fp : files_with_ext(features_dir, ".fsq")) {
                    const auto f = read_feature_file(fp);
                    data.push_back(train::make_example(f, PseudoLabelTimeline(stem(fp), f.num_frames, k)));
                }
            }
            train::LossHistory history;
            const auto r = train::self_train(std::move(teachers), data, cfg, &history);
            models::save_tcn(r.student_tcn, model_out, "tcn");
            models::save_mlp(r.student_mlp, model_out, "mlp");
            print_history(history);
        } else if (*predict) {
            fs::create_directories(pred_out);
            std::optional<models::Tcn<float>> tcn;
            std::optional<models::Mlp<float>> mlp;
            if (model_name == "mlp") mlp = models::load_mlp(model_dir, model_name);
            else tcn = models::load_tcn(model_dir, model_name);
            for (const auto& fp : files_with_ext(features_dir, ".fsq")) {
                const auto features = read_feature_file(fp);
                const auto x = train::to_matrix(features);
                const auto probs = tcn ? tcn->predict(x) : mlp->predict(x);
                write_feature_file(FeatureSequence{stem(fp), probs.rows(), probs.cols(), features.fps, probs.values()},
                                   (fs::path(pred_out) / (stem(fp) + ".fsq")).string());
            }
        } else if (*evalc) {
            const auto vocab = read_vocabulary_file(vocab_path);
            std::vector<FeatureSequence> preds;
            std::vector<PseudoLabelTimeline> gts;
            std::vector<std::vector<std::uint8_t>> masks;
            std::map<std::string, std::vector<std::size_t>> heldout;
            if (!heldout_path.empty()) heldout = pipeline::read_heldout_file(heldout_path);
            for (const auto& gp : files_with_ext(gt_dir, ".json")) {
                const auto id = stem(gp);
                const auto pp = (fs::path(preds_dir) / (id + ".fsq")).string();
                if (!fs::is_regular_file(pp)) continue;
                auto p = read_feature_file(pp);
                p.video_id = id;
                gts.push_back(read_ground_truth_file(gp));
                if (!heldout_path.empty()) {
                    std::vector<std::uint8_t> m(gts.back().num_frames(), 0);
                    for (auto t : heldout[id])
                        if (t < m.size()) m[t] = 1;
                    masks.push_back(std::move(m));
                }
                preds.push_back(std::move(p));
            }
            metrics::EvalOptions eopt;
            eopt.per_video_f1 = per_video;
            const auto report = metrics::evaluate(preds, gts, vocab.state_names(), vocab.object_name(),
                                                  heldout_path.empty() ? nullptr : &masks, eopt);
            const auto text = metrics::encode_report(report);
            if (!out_path.empty()) util::write_file_text(out_path, text);
            std::printf("mAP %.4f  mean F1-max %.4f  (%zu videos, %zu frames, %zu states excluded)\n", report.map,
                        report.mean_f1, report.videos, report.frames, report.excluded);
        } else if (*evalci) {
            std::vector<FeatureSequence> preds;
            std::vector<metrics::ChangeItTruth> truths;
            for (const auto& tp : files_with_ext(gt_dir, ".json")) {
                auto truth = metrics::read_changeit_truth(tp);
                const auto pp = (fs::path(preds_dir) / (truth.video_id + ".fsq")).string();
                require_file("prediction", pp);
                auto p = read_feature_file(pp);
                p.video_id = truth.video_id;
                preds.push_back(std::move(p));
                truths.push_back(std::move(truth));
            }
            const auto report = metrics::evaluate_changeit(preds, truths);
            if (!out_path.empty()) util::write_file_text(out_path, metrics::encode_changeit_report(report));
            std::printf("state precision@1 %.4f  action %.4f  (initial %.4f, end %.4f)\n", report.state,
                        report.action, report.initial, report.end);
        } else if (*run) {
            auto cfg = pipeline::read_pipeline_config(pipeline_path);
            cfg.seed_override = g.seed;
            pipeline::RunOptions opt;
            if (!g.mode.empty()) opt.mode = llm::parse_client_mode(g.mode);
            if (!g.cache.empty()) opt.cache_dir = g.cache;
            if (!g.model.empty()) cfg.llm.model = g.model;
            opt.threads = effective_threads(g);
            opt.deterministic = g.deterministic;
            const auto r = pipeline::run_pipeline(cfg, opt);
            for (const auto& s : r.executed) std::printf("ran     %s\n", s.c_str());
            for (const auto& s : r.skipped) std::printf("skipped %s\n", s.c_str());
            for (const auto& [k, v] : r.manifest.counters) std::printf("%s = %g\n", k.c_str(), v);
            std::printf("network calls %zu\n", r.network_calls);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
