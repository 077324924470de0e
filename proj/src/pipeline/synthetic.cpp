#include "statepipe/pipeline/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include <json.hpp>

#include "statepipe/align/aligner.hpp"
#include "statepipe/align/scorer.hpp"
#include "statepipe/core/error.hpp"
#include "statepipe/core/io.hpp"
#include "statepipe/llm/client.hpp"
#include "statepipe/llm/prompts.hpp"
#include "statepipe/nn/rng.hpp"
#include "statepipe/util/binary.hpp"
#include "statepipe/util/csv.hpp"

namespace statepipe::pipeline {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

struct StateWord {
    const char* state;
    const char* verb;
    const char* description;
};

constexpr StateWord kWords[] = {
    {"sliced", "slice", "The object has been cut into thin pieces."},
    {"peeled", "peel", "The outer skin of the object has been removed."},
    {"washed", "wash", "The object has been cleaned with water."},
    {"folded", "fold", "The object has been bent over onto itself."},
    {"pressed", "press", "The object has been flattened by pushing down on it."},
    {"twisted", "twist", "The object has been rotated around its own axis."},
    {"painted", "paint", "A coat of paint covers the object."},
    {"wrapped", "wrap", "The object is covered with a wrapping layer."},
};

std::string state_name(std::size_t k) {
    if (k < std::size(kWords)) return kWords[k].state;
    return "tuned" + std::to_string(k);
}

std::string state_verb(std::size_t k) {
    if (k < std::size(kWords)) return kWords[k].verb;
    return "tune" + std::to_string(k);
}

std::string state_definition(std::size_t k) {
    if (k < std::size(kWords)) return kWords[k].description;
    return "Setting " + std::to_string(k) + " of the object has been adjusted.";
}

std::string capitalize(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

std::string describe(const std::string& object, const std::vector<std::string>& names,
                     const std::vector<std::uint8_t>& state) {
    std::string out = "The " + object + " is ";
    for (std::size_t k = 0; k < names.size(); ++k) {
        if (k) out += k + 1 == names.size() ? " and " : ", ";
        if (!state[k]) out += "not ";
        out += names[k];
    }
    return out + ".";
}

// Random composition of `total` into `parts` non-negative pieces.
std::vector<std::size_t> composition(std::size_t total, std::size_t parts, nn::Rng& rng) {
    std::vector<std::size_t> cuts;
    for (std::size_t i = 0; i + 1 < parts; ++i) cuts.push_back(rng.below(total + 1));
    std::sort(cuts.begin(), cuts.end());
    std::vector<std::size_t> out;
    std::size_t prev = 0;
    for (auto c : cuts) {
        out.push_back(c - prev);
        prev = c;
    }
    out.push_back(total - prev);
    return out;
}

// Exactly round(rate * T) masked frames, laid out as a few contiguous runs.
std::vector<std::uint8_t> make_mask(std::size_t frames, double rate, nn::Rng& rng) {
    std::vector<std::uint8_t> mask(frames, 0);
    const auto masked = static_cast<std::size_t>(std::llround(rate * static_cast<double>(frames)));
    if (masked == 0) return mask;
    const std::size_t target_run = std::max<std::size_t>(1, frames / 8);
    const std::size_t runs = std::max<std::size_t>(1, std::min(masked, (masked + target_run - 1) / target_run));
    // each run gets at least one frame
    auto lengths = composition(masked - runs, runs, rng);
    for (auto& l : lengths) ++l;
    const auto gaps = composition(frames - masked, runs + 1, rng);
    std::size_t t = 0;
    for (std::size_t r = 0; r < runs; ++r) {
        t += gaps[r];
        for (std::size_t i = 0; i < lengths[r]; ++i) mask[t++] = 1;
    }
    return mask;
}

} // namespace

void SyntheticSpec::validate() const {
    if (videos == 0 || frames == 0 || dim == 0 || states == 0)
        throw ConfigError("synthetic spec: videos, frames, dim and states must be positive");
    if (!(action_rate > 0.0 && action_rate <= 1.0))
        throw ConfigError("synthetic spec: action_rate must lie in (0, 1]");
    if (!(mask_rate >= 0.0 && mask_rate < 1.0))
        throw ConfigError("synthetic spec: mask_rate must lie in [0, 1)");
    if (!(noise >= 0.0)) throw ConfigError("synthetic spec: noise must be non-negative");
    if (object.empty()) throw ConfigError("synthetic spec: object name is empty");
    for (const auto& row : transitions) {
        if (row.empty()) throw ConfigError("synthetic spec: an action type toggles no state");
        for (auto k : row)
            if (k >= states)
                throw ConfigError("synthetic spec: transition names state " + std::to_string(k) +
                                  " but only " + std::to_string(states) + " exist");
    }
}

std::vector<std::vector<std::size_t>> SyntheticSpec::transition_table() const {
    if (!transitions.empty()) return transitions;
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t k = 0; k < states; ++k) out.push_back({k});
    if (states > 1) out.push_back({0, states - 1});
    return out;
}

SyntheticWorld generate_world(const SyntheticSpec& spec) {
    spec.validate();
    const auto table = spec.transition_table();
    const auto K = spec.states;
    const auto D = spec.dim;

    std::vector<StateDef> defs;
    std::vector<std::string> names;
    for (std::size_t k = 0; k < K; ++k) {
        defs.push_back(StateDef{state_name(k), state_definition(k), ""});
        names.push_back(state_name(k));
    }
    SyntheticWorld world{spec, StateVocabulary(spec.object, {}, defs), {}, {}};
    for (std::size_t a = 0; a < table.size(); ++a) {
        // an action type is named after the first state it toggles
        auto verb = state_verb(table[a].front());
        if (std::find(world.action_verbs.begin(), world.action_verbs.end(), verb) !=
            world.action_verbs.end())
            verb = "re" + verb;
        world.action_verbs.push_back(verb);
    }

    nn::Rng rng(nn::mix_seed(spec.seed, 0x73796e));
    // +-1 state codes embedded linearly
    std::vector<double> embed(K * D);
    for (auto& e : embed) e = rng.normal();
    std::vector<double> offset(D);
    for (auto& o : offset) o = 0.1 * rng.normal();

    const double mean_len = 1.0 / spec.action_rate;
    const auto lo = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(mean_len * 0.5)));
    const auto hi = std::max<std::size_t>(lo, static_cast<std::size_t>(std::ceil(mean_len * 1.5)));

    for (std::size_t v = 0; v < spec.videos; ++v) {
        SyntheticVideo video;
        char id[32];
        std::snprintf(id, sizeof id, "syn_%03zu", v);
        video.video_id = id;
        video.transcript.video_id = id;
        video.transcript.duration_s = static_cast<double>(spec.frames);
        video.truth = PseudoLabelTimeline(id, spec.frames, K);

        std::vector<std::uint8_t> state(K, 0);
        for (std::size_t t = 0; t < spec.frames;) {
            const auto len = lo + rng.below(hi - lo + 1);
            SyntheticSegment seg;
            seg.start = t;
            seg.end = std::min(spec.frames, t + len);
            seg.action_type = rng.below(table.size());
            for (auto k : table[seg.action_type]) state[k] ^= 1;
            seg.state_after = state;
            const auto step = video.segments.size() + 1;
            const auto& verb = world.action_verbs[seg.action_type];
            seg.summary = capitalize(verb) + " the " + spec.object + " (step " + std::to_string(step) + ")";
            seg.sentence = "Now I " + verb + " the " + spec.object + " for step " + std::to_string(step) + ".";
            seg.description = describe(spec.object, names, state);
            for (std::size_t f = seg.start; f < seg.end; ++f)
                for (std::size_t k = 0; k < K; ++k)
                    video.truth.set(f, k, state[k] ? TernaryLabel::Positive : TernaryLabel::Negative,
                                    Provenance{-1, "synthetic"});
            video.transcript.sentences.push_back(
                {seg.sentence, static_cast<double>(seg.start), static_cast<double>(seg.end)});
            video.segments.push_back(std::move(seg));
            t += len;
        }
        video.title = "How to " + world.action_verbs[video.segments.front().action_type] + " a " +
                      spec.object + " at home";

        video.features = FeatureSequence{id, spec.frames, D, 1.0f, std::vector<float>(spec.frames * D)};
        for (std::size_t f = 0; f < spec.frames; ++f)
            for (std::size_t d = 0; d < D; ++d) {
                double x = offset[d];
                for (std::size_t k = 0; k < K; ++k) {
                    const double code = video.truth.at(f, k) == TernaryLabel::Positive ? 1.0 : -1.0;
                    x += code * embed[k * D + d];
                }
                x += spec.noise * rng.normal();
                video.features.data[f * D + d] = static_cast<float>(x);
            }
        video.masked = make_mask(spec.frames, spec.mask_rate, rng);
        world.videos.push_back(std::move(video));
    }
    return world;
}

PseudoLabelTimeline masked_labels(const SyntheticVideo& video) {
    auto out = video.truth;
    for (std::size_t t = 0; t < out.num_frames(); ++t)
        if (video.masked[t])
            for (std::size_t k = 0; k < out.num_states(); ++k) out.clear(t, k);
    return out;
}

std::string encode_spec(const SyntheticSpec& spec) {
    ordered_json j{{"seed", spec.seed},         {"videos", spec.videos},
                   {"frames", spec.frames},     {"dim", spec.dim},
                   {"states", spec.states},     {"action_rate", spec.action_rate},
                   {"transitions", spec.transitions}, {"mask_rate", spec.mask_rate},
                   {"noise", spec.noise},       {"object", spec.object}};
    return j.dump(2) + "\n";
}

SyntheticSpec decode_spec(const std::string& text) {
    try {
        const auto j = ordered_json::parse(text);
        SyntheticSpec s;
        s.seed = j.value("seed", s.seed);
        s.videos = j.value("videos", s.videos);
        s.frames = j.value("frames", s.frames);
        s.dim = j.value("dim", s.dim);
        s.states = j.value("states", s.states);
        s.action_rate = j.value("action_rate", s.action_rate);
        if (j.contains("transitions"))
            s.transitions = j.at("transitions").get<std::vector<std::vector<std::size_t>>>();
        s.mask_rate = j.value("mask_rate", s.mask_rate);
        s.noise = j.value("noise", s.noise);
        s.object = j.value("object", s.object);
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("synthetic spec: ") + e.what());
    }
}

namespace {

std::string inference_response(const StateDef& state, bool positive) {
    return "Judging points: the definition of \"" + state.state_text + "\".\n\n" +
           "Comparison: the history says the object is " + (positive ? "" : "not ") + state.name +
           ".\n\n" + "Answer: " + (positive ? "Yes, the current state matches the definition."
                                            : "No, the current state does not match the definition.");
}

void script_cache(const SyntheticWorld& world, llm::LabelerClient& client,
                  const llm::ChainOptions& chain) {
    const auto& vocab = world.vocab;
    const auto& object = vocab.object_name();
    const auto table = world.spec.transition_table();

    // verb lexicon
    std::string lexicon;
    for (std::size_t k = 0; k < vocab.size(); ++k) {
        std::vector<std::string> verbs;
        for (std::size_t a = 0; a < table.size(); ++a)
            if (std::find(table[a].begin(), table[a].end(), k) != table[a].end())
                verbs.push_back(world.action_verbs[a]);
        if (verbs.empty()) verbs.push_back(state_verb(k));
        std::string joined;
        for (std::size_t i = 0; i < verbs.size(); ++i) joined += (i ? "," : "") + verbs[i];
        lexicon += util::csv_quoted(vocab[k].state_text) + "," + util::csv_quoted(joined) + "\n";
    }
    client.store(client.make_request(llm::verb_list_prompt(vocab)), lexicon);

    const auto sent_block = std::max<std::size_t>(1, chain.sentences_per_block);
    const auto act_block = std::max<std::size_t>(1, chain.actions_per_block);
    for (const auto& video : world.videos) {
        const auto& sentences = video.transcript.sentences;
        const auto& segs = video.segments;
        for (std::size_t b = 0; b < sentences.size(); b += sent_block) {
            const auto n = std::min(sent_block, sentences.size() - b);
            std::string response = "\"action\",\"support\"\n";
            for (std::size_t i = 0; i < n; ++i)
                response += util::csv_quoted(segs[b + i].summary) + "," +
                            util::csv_quoted(segs[b + i].sentence) + "\n";
            client.store(client.make_request(llm::action_extraction_prompt(
                             std::span<const NarrationSentence>(sentences.data() + b, n))),
                         response);
        }

        std::string previous = llm::unknown_state_sentence(object);
        for (std::size_t b = 0; b < segs.size(); b += act_block) {
            const auto n = std::min(act_block, segs.size() - b);
            std::vector<std::string> summaries;
            std::string response = "\"action\",\"state\"\n";
            for (std::size_t i = 0; i < n; ++i) {
                summaries.push_back(segs[b + i].summary);
                response += util::csv_quoted(segs[b + i].summary) + "," +
                            util::csv_quoted(segs[b + i].description) + "\n";
            }
            client.store(client.make_request(llm::state_description_prompt(object, previous, summaries)),
                         response);
            previous = segs[b + n - 1].description;
        }

        std::vector<llm::StateDescription> descriptions;
        for (std::size_t i = 0; i < segs.size(); ++i)
            descriptions.push_back({i, segs[i].description, object});
        for (std::size_t i = 0; i < segs.size(); ++i) {
            const auto context = llm::description_context(descriptions, i, chain.max_context);
            for (std::size_t k = 0; k < vocab.size(); ++k)
                client.store(client.make_request(llm::state_inference_prompt(object, context, vocab[k])),
                             inference_response(vocab[k], segs[i].state_after[k] != 0));
        }
    }
}

} // namespace

void write_synthetic(const SyntheticWorld& world, const std::string& dir,
                     const SyntheticWriteOptions& options) {
    const fs::path root(dir);
    for (const char* sub : {"transcripts", "features", "gt", "llm_cache"})
        fs::create_directories(root / sub);

    const auto names = world.vocab.state_names();
    util::write_file_text((root / "vocab.json").string(), encode_vocabulary(world.vocab));
    util::write_file_text((root / "synth.json").string(), encode_spec(world.spec));

    align::StubScorer scorer;
    scorer.set_default(align::QueryKind::Boolean,
                       "The action is complete. The answer is True");
    scorer.set_default(align::QueryKind::Similarity, "1");
    ordered_json heldout = ordered_json::array();

    for (const auto& video : world.videos) {
        std::string jsonl;
        for (const auto& s : video.transcript.sentences)
            jsonl += ordered_json{{"text", s.text}, {"start_s", s.start_s}, {"end_s", s.end_s}}.dump() + "\n";
        util::write_file_text((root / "transcripts" / (video.video_id + ".jsonl")).string(), jsonl);
        util::write_file_text(
            (root / "transcripts" / (video.video_id + ".meta.json")).string(),
            ordered_json{{"video_id", video.video_id},
                         {"duration_s", video.transcript.duration_s},
                         {"title", video.title}}
                    .dump(2) + "\n");
        write_feature_file(video.features, (root / "features" / (video.video_id + ".fsq")).string());
        write_label_file(video.truth, world.vocab.object_name(), names,
                         (root / "gt" / (video.video_id + ".json")).string());

        for (const auto& seg : video.segments)
            scorer.add({video.video_id, seg.start, seg.end, align::QueryKind::Choice, std::nullopt,
                        seg.summary});
        std::vector<std::size_t> masked;
        for (std::size_t t = 0; t < video.masked.size(); ++t) {
            if (!video.masked[t]) continue;
            masked.push_back(t);
            scorer.add({video.video_id, t, t + 1, align::QueryKind::Choice, std::nullopt,
                        align::kOthersOption});
        }
        heldout.push_back(ordered_json{{"video_id", video.video_id}, {"masked_frames", masked}});
    }
    util::write_file_text((root / "scorer.json").string(), scorer.to_json());
    util::write_file_text((root / "heldout.json").string(), heldout.dump(2) + "\n");
    auto train_cfg = options.train_config;
    if (!train_cfg.empty() && train_cfg.back() != '\n') train_cfg += '\n';
    util::write_file_text((root / "train.cfg").string(),
                          train_cfg + "seed=" + std::to_string(world.spec.seed) + "\n");

    llm::ClientConfig cfg;
    cfg.cache_dir = (root / "llm_cache").string();
    cfg.mode = llm::ClientMode::Replay;
    cfg.model = options.model;
    llm::LabelerClient client(cfg);
    script_cache(world, client, options.chain);

    ordered_json pipeline{
        {"vocab", "vocab.json"},
        {"transcripts", "transcripts"},
        {"features", "features"},
        {"ground_truth", "gt"},
        {"train_config", "train.cfg"},
        {"work_dir", "work"},
        {"llm", ordered_json{{"cache_dir", "llm_cache"}, {"mode", "replay"}, {"model", options.model}}},
        {"scorer", ordered_json{{"backend", "stub"}, {"fixture", "scorer.json"}, {"background", true}}},
        {"chain", ordered_json{{"sentences_per_block", options.chain.sentences_per_block},
                               {"actions_per_block", options.chain.actions_per_block},
                               {"max_context", options.chain.max_context}}},
        {"align", ordered_json{{"delta_t", 10.0}, {"background_threshold", 0.2}}},
        {"curate", ordered_json{{"max_words", 12000}}},
        {"seed", world.spec.seed}};
    util::write_file_text((root / "pipeline.json").string(), pipeline.dump(2) + "\n");
}

std::map<std::string, std::vector<std::size_t>> read_heldout_file(const std::string& path) {
    std::map<std::string, std::vector<std::size_t>> out;
    try {
        for (const auto& v : ordered_json::parse(util::read_file_text(path)))
            out[v.at("video_id").get<std::string>()] = v.at("masked_frames").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": " + e.what(), 0);
    }
    return out;
}

} // namespace statepipe::pipeline
