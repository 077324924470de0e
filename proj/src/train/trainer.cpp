#include "statepipe/train/trainer.hpp"

#include <charconv>
#include <numeric>
#include <sstream>

#include "statepipe/util/binary.hpp"
#include "statepipe/util/text.hpp"

namespace statepipe::train {

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0))
        throw ConfigError("ema_momentum must lie in [0, 1]");
    if (mlp_hidden == 0 || tcn_channels == 0 || tcn_stages == 0)
        throw ConfigError("model sizes must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

models::MlpConfig TrainConfig::mlp_config(std::size_t input_dim, std::size_t num_states) const {
    return {input_dim, mlp_hidden, num_states};
}

models::TcnConfig TrainConfig::tcn_config(std::size_t input_dim, std::size_t num_states) const {
    return {input_dim, num_states, tcn_channels, tcn_layers, tcn_stages, dropout};
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const auto* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc{} || ptr != end)
        throw ConfigError("train config: bad value for " + key + ": '" + value + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    const auto v = util::to_lower(value);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("train config: bad boolean for " + key + ": '" + value + "'");
}

} // namespace

TrainConfig parse_train_config(const std::string& text) {
    TrainConfig cfg;
    std::size_t line_no = 0;
    for (const auto& raw : util::split_lines(text)) {
        ++line_no;
        auto line = raw;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = util::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("train config line " + std::to_string(line_no) + ": expected key=value");
        const auto key = util::trim(line.substr(0, eq));
        const auto value = util::trim(line.substr(eq + 1));
        if (key == "batch_size") cfg.batch_size = parse_number<std::size_t>(key, value);
        else if (key == "epochs_stage1") cfg.epochs_stage1 = parse_number<std::size_t>(key, value);
        else if (key == "epochs_stage2") cfg.epochs_stage2 = parse_number<std::size_t>(key, value);
        else if (key == "lr") cfg.lr = parse_number<double>(key, value);
        else if (key == "weight_decay") cfg.weight_decay = parse_number<double>(key, value);
        else if (key == "alpha") cfg.alpha = parse_number<double>(key, value);
        else if (key == "ema_momentum") cfg.ema_momentum = parse_number<double>(key, value);
        else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
        else if (key == "mlp_hidden") cfg.mlp_hidden = parse_number<std::size_t>(key, value);
        else if (key == "tcn_channels") cfg.tcn_channels = parse_number<std::size_t>(key, value);
        else if (key == "tcn_layers") cfg.tcn_layers = parse_number<std::size_t>(key, value);
        else if (key == "tcn_stages") cfg.tcn_stages = parse_number<std::size_t>(key, value);
        else if (key == "dropout") cfg.dropout = parse_number<double>(key, value);
        else if (key == "ema_per_epoch") cfg.ema_per_epoch = parse_bool(key, value);
        else if (key == "selftrain_assigned_only") cfg.selftrain_assigned_only = parse_bool(key, value);
        else throw ConfigError("train config: unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

TrainConfig read_train_config(const std::string& path) {
    return parse_train_config(util::read_file_text(path));
}

std::string encode_train_config(const TrainConfig& cfg) {
    std::ostringstream os;
    os.precision(17);
    os << "batch_size=" << cfg.batch_size << "\n"
       << "epochs_stage1=" << cfg.epochs_stage1 << "\n"
       << "epochs_stage2=" << cfg.epochs_stage2 << "\n"
       << "lr=" << cfg.lr << "\n"
       << "weight_decay=" << cfg.weight_decay << "\n"
       << "alpha=" << cfg.alpha << "\n"
       << "ema_momentum=" << cfg.ema_momentum << "\n"
       << "seed=" << cfg.seed << "\n"
       << "mlp_hidden=" << cfg.mlp_hidden << "\n"
       << "tcn_channels=" << cfg.tcn_channels << "\n"
       << "tcn_layers=" << cfg.tcn_layers << "\n"
       << "tcn_stages=" << cfg.tcn_stages << "\n"
       << "dropout=" << cfg.dropout << "\n"
       << "ema_per_epoch=" << (cfg.ema_per_epoch ? "true" : "false") << "\n"
       << "selftrain_assigned_only=" << (cfg.selftrain_assigned_only ? "true" : "false") << "\n";
    return os.str();
}

Matrix<float> to_matrix(const FeatureSequence& seq) {
    return Matrix<float>(seq.num_frames, seq.dim, seq.data);
}

Example make_example(const FeatureSequence& features, const PseudoLabelTimeline& labels) {
    if (features.num_frames != labels.num_frames())
        throw ShapeError("video " + features.video_id + ": features have " +
                         std::to_string(features.num_frames) + " frames, labels have " +
                         std::to_string(labels.num_frames()));
    return {features.video_id, to_matrix(features), nn::targets_from_labels<float>(labels)};
}

Mlp<float> init_mlp(const TrainConfig& cfg, std::size_t input_dim, std::size_t num_states,
                    std::uint64_t role) {
    nn::Rng rng(nn::mix_seed(cfg.seed, role * 16 + 1));
    return Mlp<float>(cfg.mlp_config(input_dim, num_states), rng);
}

Tcn<float> init_tcn(const TrainConfig& cfg, std::size_t input_dim, std::size_t num_states,
                    std::uint64_t role) {
    nn::Rng rng(nn::mix_seed(cfg.seed, role * 16 + 2));
    return Tcn<float>(cfg.tcn_config(input_dim, num_states), rng);
}

namespace {

struct Shapes {
    std::size_t dim = 0;
    std::size_t states = 0;
};

Shapes check_dataset(std::span<const Example> data) {
    if (data.empty()) throw ValidationError("dataset empty");
    Shapes s{data.front().features.cols(), data.front().targets.y.cols()};
    for (const auto& ex : data) {
        if (ex.features.cols() != s.dim || ex.targets.y.cols() != s.states ||
            ex.features.rows() != ex.targets.y.rows())
            throw ShapeError("video " + ex.video_id + ": features " + nn::shape_str(ex.features) +
                             " and targets " + nn::shape_str(ex.targets.y) +
                             " disagree with the dataset");
    }
    return s;
}

template <typename Model>
std::vector<nn::Param<float>*> param_ptrs(Model& m) {
    std::vector<nn::Param<float>*> out;
    for (auto& p : m.parameters()) out.push_back(p.param);
    return out;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::vector<std::size_t>& order, nn::Rng& rng,
                                                    std::size_t batch_size) {
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < order.size(); i += batch_size)
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
    return out;
}

// Accumulates gradients of the batch loss (sum over cells / batch_valid) and
// returns the unnormalized cell-loss sum.
double accumulate_mlp(Mlp<float>& mlp, const Matrix<float>& x, const nn::Targets<float>& targets,
                      float scale) {
    Mlp<float>::Cache cache;
    const auto logits = mlp.forward(x, &cache);
    Matrix<float> grad(logits.rows(), logits.cols());
    const double sum = nn::masked_bce_sum(logits, targets, &grad, scale);
    mlp.backward(cache, grad);
    return sum;
}

double accumulate_tcn(Tcn<float>& tcn, const Matrix<float>& x, const nn::Targets<float>& targets,
                      float scale, std::uint64_t dropout_seed) {
    Tcn<float>::Cache cache;
    const auto logits = tcn.forward(x, &cache, {true, dropout_seed});
    std::vector<Matrix<float>> grads;
    double sum = 0.0;
    for (const auto& z : logits) {
        Matrix<float> g(z.rows(), z.cols());
        sum += nn::masked_bce_sum(z, targets, &g, scale);
        grads.push_back(std::move(g));
    }
    tcn.backward(cache, grads);
    return sum;
}

std::uint64_t dropout_seed(std::uint64_t seed, std::uint64_t phase, std::size_t step,
                           std::size_t index) {
    return nn::mix_seed(nn::mix_seed(nn::mix_seed(seed, phase), step), index);
}

} // namespace

Teachers train_teachers(std::span<const Example> data, const TrainConfig& cfg,
                        LossHistory* history) {
    cfg.validate();
    const auto shapes = check_dataset(data);
    std::size_t total_valid = 0;
    for (const auto& ex : data) total_valid += ex.targets.valid_count();
    if (total_valid == 0) throw ValidationError("zero assigned cells");

    Teachers t{init_mlp(cfg, shapes.dim, shapes.states, kTeacherRole),
               init_tcn(cfg, shapes.dim, shapes.states, kTeacherRole)};
    auto mlp_params = param_ptrs(t.mlp);
    auto tcn_params = param_ptrs(t.tcn);
    nn::AdamWState<float> mlp_opt, tcn_opt;
    const auto opt = cfg.optimizer();

    nn::Rng shuffle_rng(nn::mix_seed(cfg.seed, 0x7465616368ULL));
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs_stage1; ++epoch) {
        double mlp_sum = 0.0, tcn_sum = 0.0;
        std::size_t cells = 0;
        for (const auto& batch : epoch_batches(order, shuffle_rng, cfg.batch_size)) {
            std::size_t valid = 0;
            for (auto i : batch) valid += data[i].targets.valid_count();
            if (valid == 0) continue;
            const float scale = 1.0f / static_cast<float>(valid);
            t.mlp.zero_grad();
            t.tcn.zero_grad();
            for (auto i : batch) {
                mlp_sum += accumulate_mlp(t.mlp, data[i].features, data[i].targets, scale);
                tcn_sum += accumulate_tcn(t.tcn, data[i].features, data[i].targets, scale,
                                          dropout_seed(cfg.seed, 1, step, i));
            }
            nn::adamw_step<float>(mlp_params, mlp_opt, opt);
            nn::adamw_step<float>(tcn_params, tcn_opt, opt);
            cells += valid;
            ++step;
        }
        if (history) {
            history->mlp.push_back(cells ? mlp_sum / static_cast<double>(cells) : 0.0);
            history->tcn.push_back(cells ? tcn_sum / static_cast<double>(cells) : 0.0);
        }
    }
    if (history) history->steps += step;
    return t;
}

SelfTrainResult self_train(Teachers teachers, std::span<const Example> data,
                           const TrainConfig& cfg, LossHistory* history) {
    cfg.validate();
    const auto shapes = check_dataset(data);
    SelfTrainResult r{init_tcn(cfg, shapes.dim, shapes.states, kStudentRole),
                      init_mlp(cfg, shapes.dim, shapes.states, kStudentRole), std::move(teachers)};
    if (r.teachers.mlp.config() != cfg.mlp_config(shapes.dim, shapes.states) ||
        r.teachers.tcn.config() != cfg.tcn_config(shapes.dim, shapes.states))
        throw ShapeError("teacher architectures do not match the training configuration");

    auto mlp_params = param_ptrs(r.student_mlp);
    auto tcn_params = param_ptrs(r.student_tcn);
    nn::AdamWState<float> mlp_opt, tcn_opt;
    const auto opt = cfg.optimizer();

    const auto apply_ema = [&] {
        const auto tm = r.teachers.mlp.parameters();
        const auto sm = std::as_const(r.student_mlp).parameters();
        ema_update<float>(tm, sm, cfg.ema_momentum);
        const auto tt = r.teachers.tcn.parameters();
        const auto st = std::as_const(r.student_tcn).parameters();
        ema_update<float>(tt, st, cfg.ema_momentum);
    };

    nn::Rng shuffle_rng(nn::mix_seed(cfg.seed, 0x73656c66ULL));
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs_stage2; ++epoch) {
        double mlp_sum = 0.0, tcn_sum = 0.0;
        std::size_t cells = 0;
        for (const auto& batch : epoch_batches(order, shuffle_rng, cfg.batch_size)) {
            // targets come from the teacher snapshot that precedes this step
            std::vector<nn::Targets<float>> targets;
            std::size_t valid = 0;
            for (auto i : batch) {
                const auto& x = data[i].features;
                auto y = ensemble_target(r.teachers.tcn.predict(x), r.teachers.mlp.predict(x),
                                         cfg.alpha);
                auto tg = nn::soft_targets(std::move(y));
                if (cfg.selftrain_assigned_only) tg.mask = data[i].targets.mask;
                valid += tg.valid_count();
                targets.push_back(std::move(tg));
            }
            if (valid == 0) continue;
            const float scale = 1.0f / static_cast<float>(valid);
            r.student_mlp.zero_grad();
            r.student_tcn.zero_grad();
            for (std::size_t b = 0; b < batch.size(); ++b) {
                const auto i = batch[b];
                mlp_sum += accumulate_mlp(r.student_mlp, data[i].features, targets[b], scale);
                tcn_sum += accumulate_tcn(r.student_tcn, data[i].features, targets[b], scale,
                                          dropout_seed(cfg.seed, 2, step, i));
            }
            nn::adamw_step<float>(mlp_params, mlp_opt, opt);
            nn::adamw_step<float>(tcn_params, tcn_opt, opt);
            if (!cfg.ema_per_epoch) apply_ema();
            cells += valid;
            ++step;
        }
        if (cfg.ema_per_epoch) apply_ema();
        if (history) {
            history->mlp.push_back(cells ? mlp_sum / static_cast<double>(cells) : 0.0);
            history->tcn.push_back(cells ? tcn_sum / static_cast<double>(cells) : 0.0);
        }
    }
    if (history) history->steps += step;
    return r;
}

} // namespace statepipe::train
