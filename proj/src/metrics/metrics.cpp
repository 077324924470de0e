#include "statepipe/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>
#include <map>
#include <numeric>

#include <json.hpp>

#include "statepipe/core/error.hpp"
#include "statepipe/util/binary.hpp"

namespace statepipe::metrics {

using ordered_json = nlohmann::ordered_json;

namespace {

void check_inputs(std::span<const double> scores, std::span<const std::uint8_t> labels,
                  const char* what) {
    if (scores.size() != labels.size())
        throw ShapeError(std::string(what) + ": " + std::to_string(scores.size()) + " scores, " +
                         std::to_string(labels.size()) + " labels");
    if (scores.empty()) throw ValidationError(std::string(what) + ": empty input");
}

std::vector<std::size_t> descending_order(std::span<const double> scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

double f1_from_counts(std::size_t tp, std::size_t fp, std::size_t positives) {
    const std::size_t denom = tp + fp + positives;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

} // namespace

double f1_at(std::span<const double> scores, std::span<const std::uint8_t> labels, double tau) {
    check_inputs(scores, labels, "f1");
    std::size_t tp = 0, fp = 0, p = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        p += labels[i] != 0;
        if (scores[i] >= tau) (labels[i] ? tp : fp) += 1;
    }
    return f1_from_counts(tp, fp, p);
}

F1Result f1_max(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    check_inputs(scores, labels, "f1_max");
    std::size_t positives = 0;
    for (auto l : labels) positives += l != 0;
    F1Result best;
    if (positives == 0) return best;
    best.defined = true;
    const auto order = descending_order(scores);
    std::size_t tp = 0, fp = 0;
    for (std::size_t a = 0; a < order.size();) {
        std::size_t b = a;
        const double tau = scores[order[a]];
        while (b < order.size() && scores[order[b]] == tau) {
            (labels[order[b]] ? tp : fp) += 1;
            ++b;
        }
        const double f1 = f1_from_counts(tp, fp, positives);
        if (f1 > best.f1) {
            best.f1 = f1;
            best.threshold = tau;
        }
        a = b;
    }
    return best;
}

ApResult average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    check_inputs(scores, labels, "average_precision");
    std::size_t positives = 0;
    for (auto l : labels) positives += l != 0;
    if (positives == 0) return {};
    const auto order = descending_order(scores);
    double total = 0.0;
    std::size_t n_before = 0, p_before = 0;
    for (std::size_t a = 0; a < order.size();) {
        std::size_t b = a, pg = 0;
        while (b < order.size() && scores[order[b]] == scores[order[a]]) {
            pg += labels[order[b]] != 0;
            ++b;
        }
        const std::size_t ng = b - a;
        if (pg > 0) {
            // Each slot u of the tie group holds a positive with probability
            // pg/ng; given that, the other positives fill the earlier slots at
            // rate (pg-1)/(ng-1).
            const double other = ng > 1 ? static_cast<double>(pg - 1) / static_cast<double>(ng - 1) : 0.0;
            double group = 0.0;
            for (std::size_t u = 1; u <= ng; ++u) {
                const double hits = static_cast<double>(p_before) + 1.0 + static_cast<double>(u - 1) * other;
                group += hits / static_cast<double>(n_before + u);
            }
            total += group * static_cast<double>(pg) / static_cast<double>(ng);
        }
        n_before += ng;
        p_before += pg;
        a = b;
    }
    return {total / static_cast<double>(positives), true};
}

MapResult map_over_states(std::span<const std::optional<double>> aps) {
    MapResult r;
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& ap : aps) {
        if (!ap) {
            ++r.excluded;
            continue;
        }
        sum += *ap;
        ++n;
    }
    if (n == 0) throw ValidationError("mAP undefined: no state has a positive frame");
    r.map = sum / static_cast<double>(n);
    return r;
}

EvalReport evaluate(std::span<const FeatureSequence> predictions,
                    std::span<const PseudoLabelTimeline> ground_truth,
                    std::span<const std::string> state_names, const std::string& object,
                    const std::vector<std::vector<std::uint8_t>>* frame_masks, EvalOptions opt) {
    const std::size_t k_states = state_names.size();
    if (ground_truth.empty()) throw ValidationError("evaluation needs at least one video");
    if (frame_masks && frame_masks->size() != ground_truth.size())
        throw ShapeError("frame masks do not match the ground-truth videos");
    std::map<std::string, const FeatureSequence*> by_id;
    for (const auto& p : predictions) by_id[p.video_id] = &p;

    EvalReport report;
    report.object = object;
    report.videos = ground_truth.size();
    std::vector<std::vector<double>> scores(k_states);
    std::vector<std::vector<std::uint8_t>> labels(k_states);
    std::vector<std::vector<double>> per_video_f1(k_states);

    for (std::size_t v = 0; v < ground_truth.size(); ++v) {
        const auto& gt = ground_truth[v];
        const auto it = by_id.find(gt.video_id());
        if (it == by_id.end())
            throw ValidationError("no prediction for video " + gt.video_id());
        const auto& pred = *it->second;
        if (pred.num_frames != gt.num_frames() || pred.dim != k_states || gt.num_states() != k_states)
            throw ShapeError("video " + gt.video_id() + ": prediction " +
                             std::to_string(pred.num_frames) + "x" + std::to_string(pred.dim) +
                             " vs ground truth " + std::to_string(gt.num_frames()) + "x" +
                             std::to_string(gt.num_states()));
        const std::vector<std::uint8_t>* mask = frame_masks ? &(*frame_masks)[v] : nullptr;
        if (mask && mask->size() != gt.num_frames())
            throw ShapeError("frame mask length mismatch for video " + gt.video_id());
        std::size_t frames = 0;
        for (std::size_t k = 0; k < k_states; ++k) {
            std::vector<double> vs;
            std::vector<std::uint8_t> vl;
            for (std::size_t t = 0; t < gt.num_frames(); ++t) {
                if (mask && !(*mask)[t]) continue;
                const auto l = gt.at(t, k);
                if (l == TernaryLabel::Unassigned) continue;
                vs.push_back(pred.at(t, k));
                vl.push_back(l == TernaryLabel::Positive ? 1 : 0);
            }
            frames = std::max(frames, vs.size());
            if (opt.per_video_f1 && !vs.empty()) {
                const auto f = f1_max(vs, vl);
                if (f.defined) per_video_f1[k].push_back(f.f1);
            }
            scores[k].insert(scores[k].end(), vs.begin(), vs.end());
            labels[k].insert(labels[k].end(), vl.begin(), vl.end());
        }
        report.frames += frames;
    }

    std::vector<std::optional<double>> aps;
    double f1_sum = 0.0;
    std::size_t f1_n = 0;
    for (std::size_t k = 0; k < k_states; ++k) {
        StateScore s;
        s.name = state_names[k];
        for (auto l : labels[k]) s.positives += l;
        if (!scores[k].empty() && s.positives > 0) {
            const auto f = f1_max(scores[k], labels[k]);
            const auto ap = average_precision(scores[k], labels[k]);
            s.defined = true;
            s.f1 = f.f1;
            s.threshold = f.threshold;
            s.ap = ap.ap;
            if (opt.per_video_f1) {
                const auto& fs = per_video_f1[k];
                s.f1 = fs.empty() ? 0.0
                                  : std::accumulate(fs.begin(), fs.end(), 0.0) /
                                        static_cast<double>(fs.size());
            }
            f1_sum += s.f1;
            ++f1_n;
            aps.push_back(s.ap);
        } else {
            aps.push_back(std::nullopt);
        }
        report.states.push_back(std::move(s));
    }
    const auto m = map_over_states(aps);
    report.map = m.map;
    report.excluded = m.excluded;
    report.mean_f1 = f1_sum / static_cast<double>(f1_n);
    return report;
}

std::string encode_report(const EvalReport& report) {
    ordered_json j;
    j["object"] = report.object;
    j["videos"] = report.videos;
    j["frames"] = report.frames;
    j["mAP"] = report.map;
    j["mean_f1_max"] = report.mean_f1;
    j["excluded_states"] = report.excluded;
    ordered_json states = ordered_json::array();
    for (const auto& s : report.states) {
        ordered_json o;
        o["name"] = s.name;
        o["defined"] = s.defined;
        o["positives"] = s.positives;
        o["f1_max"] = s.f1;
        if (std::isfinite(s.threshold)) o["threshold"] = s.threshold;
        else o["threshold"] = nullptr;
        o["ap"] = s.ap;
        states.push_back(std::move(o));
    }
    j["states"] = std::move(states);
    return j.dump(2) + "\n";
}

CausalSelection causal_select(const PhaseScores& phases) {
    const auto n = phases.initial.size();
    if (phases.action.size() != n || phases.end.size() != n)
        throw ShapeError("phase score lengths differ");
    if (n < 3) throw ValidationError("causal selection needs at least 3 frames");
    // best_i[j]: first argmax of initial over [0, j); best_k[j]: first argmax of end over (j, n)
    std::vector<std::size_t> best_i(n, 0), best_k(n, n - 1);
    for (std::size_t j = 1; j < n; ++j) {
        best_i[j] = best_i[j - 1];
        if (j >= 2 && phases.initial[j - 1] > phases.initial[best_i[j]]) best_i[j] = j - 1;
    }
    for (std::size_t j = n - 1; j-- > 0;) {
        if (j == n - 2) {
            best_k[j] = n - 1;
            continue;
        }
        best_k[j] = phases.end[j + 1] >= phases.end[best_k[j + 1]] ? j + 1 : best_k[j + 1];
    }
    CausalSelection best;
    bool found = false;
    for (std::size_t j = 1; j + 1 < n; ++j) {
        const auto i = best_i[j];
        const auto k = best_k[j];
        const double s = (phases.initial[i] + phases.action[j]) + phases.end[k];
        const bool better = !found || s > best.score ||
                            (s == best.score && std::tie(i, j, k) < std::tie(best.i, best.j, best.k));
        if (better) {
            best = {i, j, k, s};
            found = true;
        }
    }
    return best;
}

PhaseHits causal_precision_at_1(const PhaseScores& phases, const ChangeItTruth& truth) {
    const auto sel = causal_select(phases);
    const auto has = [](const std::vector<std::size_t>& v, std::size_t t) {
        return std::find(v.begin(), v.end(), t) != v.end();
    };
    return {has(truth.initial, sel.i), has(truth.action, sel.j), has(truth.end, sel.k)};
}

ChangeItTruth decode_changeit_truth(const std::string& text) {
    try {
        const auto j = ordered_json::parse(text);
        ChangeItTruth t;
        t.video_id = j.at("video_id").get<std::string>();
        t.initial = j.at("initial").get<std::vector<std::size_t>>();
        t.action = j.at("action").get<std::vector<std::size_t>>();
        t.end = j.at("end").get<std::vector<std::size_t>>();
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("phase ground truth: ") + e.what(), 0);
    }
}

ChangeItTruth read_changeit_truth(const std::string& path) {
    return decode_changeit_truth(util::read_file_text(path));
}

std::string encode_changeit_truth(const ChangeItTruth& truth) {
    ordered_json j{{"video_id", truth.video_id},
                   {"initial", truth.initial},
                   {"action", truth.action},
                   {"end", truth.end}};
    return j.dump(2) + "\n";
}

ChangeItReport evaluate_changeit(std::span<const FeatureSequence> predictions,
                                 std::span<const ChangeItTruth> truths) {
    if (truths.empty()) throw ValidationError("evaluation needs at least one video");
    std::map<std::string, const FeatureSequence*> by_id;
    for (const auto& p : predictions) by_id[p.video_id] = &p;
    ChangeItReport r;
    for (const auto& truth : truths) {
        const auto it = by_id.find(truth.video_id);
        if (it == by_id.end()) throw ValidationError("no prediction for video " + truth.video_id);
        const auto& pred = *it->second;
        if (pred.dim != 3)
            throw ShapeError("video " + truth.video_id + ": phase predictions need 3 columns, found " +
                             std::to_string(pred.dim));
        PhaseScores ps;
        for (std::size_t t = 0; t < pred.num_frames; ++t) {
            ps.initial.push_back(pred.at(t, 0));
            ps.action.push_back(pred.at(t, 1));
            ps.end.push_back(pred.at(t, 2));
        }
        ChangeItVideo v{truth.video_id, causal_select(ps), {}};
        v.hits = causal_precision_at_1(ps, truth);
        r.initial += v.hits.initial;
        r.action += v.hits.action;
        r.end += v.hits.end;
        r.videos.push_back(std::move(v));
    }
    const double n = static_cast<double>(r.videos.size());
    r.initial /= n;
    r.action /= n;
    r.end /= n;
    r.state = 0.5 * (r.initial + r.end);
    return r;
}

std::string encode_changeit_report(const ChangeItReport& report) {
    ordered_json j;
    j["videos_evaluated"] = report.videos.size();
    j["precision_at_1"] = ordered_json{{"initial", report.initial},
                                       {"action", report.action},
                                       {"end", report.end},
                                       {"state", report.state}};
    ordered_json vids = ordered_json::array();
    for (const auto& v : report.videos)
        vids.push_back(ordered_json{{"video_id", v.video_id},
                                    {"frames", {v.selection.i, v.selection.j, v.selection.k}},
                                    {"hits", {v.hits.initial, v.hits.action, v.hits.end}}});
    j["videos"] = std::move(vids);
    return j.dump(2) + "\n";
}

} // namespace statepipe::metrics
