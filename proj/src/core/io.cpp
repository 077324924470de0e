#include "statepipe/core/io.hpp"

#include <cmath>
#include <filesystem>
#include <limits>

#include <json.hpp>

#include "statepipe/core/error.hpp"
#include "statepipe/util/binary.hpp"

namespace statepipe {

using ordered_json = nlohmann::ordered_json;

std::vector<std::uint8_t> encode_features(const FeatureSequence& seq) {
    if (seq.num_frames > std::numeric_limits<std::uint32_t>::max() ||
        seq.dim > std::numeric_limits<std::uint32_t>::max())
        throw ValidationError("feature sequence dimensions exceed u32");
    if (seq.data.size() != seq.num_frames * seq.dim)
        throw ShapeError("feature sequence '" + seq.video_id + "': data holds " +
                         std::to_string(seq.data.size()) + " values, expected " +
                         std::to_string(seq.num_frames * seq.dim));
    for (std::size_t i = 0; i < seq.data.size(); ++i)
        if (!std::isfinite(seq.data[i]))
            throw ValidationError("feature sequence '" + seq.video_id +
                                  "': non-finite value at frame " + std::to_string(i / seq.dim));
    util::ByteWriter w;
    w.raw("FSQ1");
    w.u32(kFeatureFormatVersion);
    w.u32(static_cast<std::uint32_t>(seq.num_frames));
    w.u32(static_cast<std::uint32_t>(seq.dim));
    w.f32(seq.fps);
    for (float v : seq.data) w.f32(v);
    return std::move(w).take();
}

FeatureSequence decode_features(std::span<const std::uint8_t> bytes, std::string video_id) {
    util::ByteReader r(bytes);
    if (r.raw(4, "magic") != "FSQ1") throw FormatError("bad feature file magic", 0);
    const auto version = r.u32("version");
    if (version != kFeatureFormatVersion)
        throw FormatError("unsupported feature file version " + std::to_string(version), 4);
    FeatureSequence seq;
    seq.video_id = std::move(video_id);
    seq.num_frames = r.u32("frame count");
    seq.dim = r.u32("feature dimension");
    seq.fps = r.f32("fps");
    const std::uint64_t count = static_cast<std::uint64_t>(seq.num_frames) * seq.dim;
    if (count > std::numeric_limits<std::uint64_t>::max() / 4 ||
        count > std::numeric_limits<std::size_t>::max() / 4)
        throw FormatError("feature dimensions overflow", 8);
    const std::uint64_t expected = count * 4;
    if (r.remaining() < expected)
        throw FormatError("truncated feature payload: expected " + std::to_string(expected) +
                              " bytes, found " + std::to_string(r.remaining()),
                          r.offset());
    if (r.remaining() > expected)
        throw FormatError("trailing bytes after feature payload: expected " +
                              std::to_string(expected) + " bytes, found " +
                              std::to_string(r.remaining()),
                          r.offset() + expected);
    seq.data.resize(static_cast<std::size_t>(count));
    for (auto& v : seq.data) {
        const auto at = r.offset();
        v = r.f32("payload");
        if (!std::isfinite(v)) throw FormatError("non-finite feature value", at);
    }
    return seq;
}

FeatureSequence read_feature_file(const std::string& path) {
    const auto bytes = util::read_file_bytes(path);
    return decode_features(bytes, std::filesystem::path(path).stem().string());
}

void write_feature_file(const FeatureSequence& seq, const std::string& path) {
    const auto bytes = encode_features(seq);
    util::write_file_bytes(path, bytes);
}

namespace {

ordered_json provenance_json(const Provenance& p) {
    return ordered_json{{"action", p.action_index}, {"stage", p.stage}};
}

} // namespace

std::string encode_labels(const PseudoLabelTimeline& timeline, const std::string& object,
                          const std::vector<std::string>& states) {
    if (states.size() != timeline.num_states())
        throw ShapeError("label file: " + std::to_string(states.size()) + " state names for " +
                         std::to_string(timeline.num_states()) + " label columns");
    ordered_json j;
    j["video_id"] = timeline.video_id();
    j["fps"] = 1.0;
    j["num_frames"] = timeline.num_frames();
    j["object"] = object;
    j["states"] = states;
    ordered_json runs = ordered_json::array();
    for (std::size_t k = 0; k < timeline.num_states(); ++k) {
        ordered_json column = ordered_json::array();
        std::size_t t = 0;
        while (t < timeline.num_frames()) {
            const auto label = timeline.at(t, k);
            if (label == TernaryLabel::Unassigned) {
                ++t;
                continue;
            }
            const auto& prov = *timeline.provenance(t, k);
            std::size_t end = t + 1;
            while (end < timeline.num_frames() && timeline.at(end, k) == label &&
                   *timeline.provenance(end, k) == prov)
                ++end;
            column.push_back(ordered_json{{"start_frame", t},
                                          {"end_frame_exclusive", end},
                                          {"label", to_string(label)},
                                          {"provenance", provenance_json(prov)}});
            t = end;
        }
        runs.push_back(std::move(column));
    }
    j["runs"] = std::move(runs);
    return j.dump(2) + "\n";
}

PseudoLabelTimeline decode_labels(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("label file is not valid JSON: ") + e.what(), e.byte);
    }
    try {
        const auto states = j.at("states").get<std::vector<std::string>>();
        const auto frames = j.at("num_frames").get<std::size_t>();
        PseudoLabelTimeline out(j.at("video_id").get<std::string>(), frames, states.size());
        const auto& runs = j.at("runs");
        if (!runs.is_array() || runs.size() != states.size())
            throw ValidationError("label file: runs must hold one list per state");
        for (std::size_t k = 0; k < states.size(); ++k) {
            for (const auto& run : runs[k]) {
                const auto begin = run.at("start_frame").get<std::size_t>();
                const auto end = run.at("end_frame_exclusive").get<std::size_t>();
                const auto label_text = run.at("label").get<std::string>();
                TernaryLabel label;
                if (label_text == "pos") label = TernaryLabel::Positive;
                else if (label_text == "neg") label = TernaryLabel::Negative;
                else throw ValidationError("label file: unknown label '" + label_text + "'");
                if (begin >= end || end > frames)
                    throw ValidationError("label file: run [" + std::to_string(begin) + "," +
                                          std::to_string(end) + ") outside " +
                                          std::to_string(frames) + " frames");
                Provenance prov{run.at("provenance").at("action").get<std::int32_t>(),
                                run.at("provenance").at("stage").get<std::string>()};
                for (std::size_t t = begin; t < end; ++t) {
                    if (out.at(t, k) != TernaryLabel::Unassigned)
                        throw ValidationError("label file: overlapping runs at frame " +
                                              std::to_string(t));
                    out.set(t, k, label, prov);
                }
            }
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("label file: ") + e.what());
    }
}

PseudoLabelTimeline read_label_file(const std::string& path) {
    return decode_labels(util::read_file_text(path));
}

void write_label_file(const PseudoLabelTimeline& timeline, const std::string& object,
                      const std::vector<std::string>& states, const std::string& path) {
    util::write_file_text(path, encode_labels(timeline, object, states));
}

PseudoLabelTimeline read_ground_truth_file(const std::string& path) {
    auto gt = read_label_file(path);
    for (std::size_t t = 0; t < gt.num_frames(); ++t)
        for (std::size_t k = 0; k < gt.num_states(); ++k)
            if (gt.at(t, k) == TernaryLabel::Unassigned)
                throw ValidationError("ground truth '" + path + "' has an unassigned cell at frame " +
                                      std::to_string(t) + ", state " + std::to_string(k));
    return gt;
}

StateVocabulary read_vocabulary_file(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(util::read_file_text(path));
        std::vector<StateDef> states;
        for (const auto& s : j.at("states"))
            states.push_back(StateDef{s.at("name").get<std::string>(),
                                      s.at("description").get<std::string>(),
                                      s.value("state_text", std::string{})});
        return StateVocabulary(j.at("object").get<std::string>(),
                               j.value("secondary_names", std::vector<std::string>{}),
                               std::move(states));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("vocabulary '" + path + "': " + e.what());
    }
}

std::string encode_vocabulary(const StateVocabulary& vocab) {
    ordered_json j;
    j["object"] = vocab.object_name();
    j["secondary_names"] = vocab.secondary_names();
    ordered_json states = ordered_json::array();
    for (const auto& s : vocab.states())
        states.push_back(ordered_json{
            {"name", s.name}, {"description", s.description}, {"state_text", s.state_text}});
    j["states"] = std::move(states);
    return j.dump(2) + "\n";
}

} // namespace statepipe
