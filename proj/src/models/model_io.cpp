#include "statepipe/models/model_io.hpp"

#include <filesystem>

#include <json.hpp>

#include "statepipe/nn/checkpoint.hpp"
#include "statepipe/util/binary.hpp"

namespace statepipe::models {

using ordered_json = nlohmann::ordered_json;

template <typename T>
MultiStageLoss<T> multi_stage_loss(const std::vector<Matrix<T>>& stage_logits,
                                   const nn::Targets<T>& targets) {
    if (stage_logits.empty()) throw ShapeError("multi-stage loss needs at least one stage");
    MultiStageLoss<T> out;
    for (const auto& z : stage_logits) {
        auto r = nn::masked_bce(z, targets);
        out.loss += r.loss;
        out.grads.push_back(std::move(r.grad));
    }
    return out;
}

template MultiStageLoss<float> multi_stage_loss(const std::vector<Matrix<float>>&,
                                                const nn::Targets<float>&);
template MultiStageLoss<double> multi_stage_loss(const std::vector<Matrix<double>>&,
                                                 const nn::Targets<double>&);

std::string encode_config(const MlpConfig& cfg) {
    ordered_json j{{"architecture", "mlp"},
                   {"input_dim", cfg.input_dim},
                   {"hidden", cfg.hidden},
                   {"num_states", cfg.num_states}};
    return j.dump(2) + "\n";
}

std::string encode_config(const TcnConfig& cfg) {
    ordered_json j{{"architecture", "tcn"},        {"input_dim", cfg.input_dim},
                   {"num_states", cfg.num_states}, {"channels", cfg.channels},
                   {"layers", cfg.layers},         {"stages", cfg.stages},
                   {"dropout", cfg.dropout}};
    return j.dump(2) + "\n";
}

namespace {

ordered_json parse_sidecar(const std::string& text, const char* arch) {
    try {
        auto j = ordered_json::parse(text);
        if (j.at("architecture").get<std::string>() != arch)
            throw ConfigError(std::string("model sidecar is not a ") + arch);
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model sidecar: ") + e.what());
    }
}

std::string path_for(const std::string& dir, const std::string& name, const char* ext) {
    return (std::filesystem::path(dir) / (name + ext)).string();
}

} // namespace

MlpConfig decode_mlp_config(const std::string& text) {
    const auto j = parse_sidecar(text, "mlp");
    try {
        MlpConfig cfg{j.at("input_dim").get<std::size_t>(), j.at("hidden").get<std::size_t>(),
                      j.at("num_states").get<std::size_t>()};
        cfg.validate();
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("mlp sidecar: ") + e.what());
    }
}

TcnConfig decode_tcn_config(const std::string& text) {
    const auto j = parse_sidecar(text, "tcn");
    try {
        TcnConfig cfg;
        cfg.input_dim = j.at("input_dim").get<std::size_t>();
        cfg.num_states = j.at("num_states").get<std::size_t>();
        cfg.channels = j.at("channels").get<std::size_t>();
        cfg.layers = j.at("layers").get<std::size_t>();
        cfg.stages = j.at("stages").get<std::size_t>();
        cfg.dropout = j.at("dropout").get<double>();
        cfg.validate();
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("tcn sidecar: ") + e.what());
    }
}

void save_mlp(const Mlp<float>& model, const std::string& dir, const std::string& name) {
    std::filesystem::create_directories(dir);
    const auto params = model.parameters();
    const auto tensors = nn::to_tensors<float>(params);
    nn::write_checkpoint(path_for(dir, name, ".spw"), tensors);
    util::write_file_text(path_for(dir, name, ".json"), encode_config(model.config()));
}

void save_tcn(const Tcn<float>& model, const std::string& dir, const std::string& name) {
    std::filesystem::create_directories(dir);
    const auto params = model.parameters();
    const auto tensors = nn::to_tensors<float>(params);
    nn::write_checkpoint(path_for(dir, name, ".spw"), tensors);
    util::write_file_text(path_for(dir, name, ".json"), encode_config(model.config()));
}

Mlp<float> load_mlp(const std::string& dir, const std::string& name) {
    const auto cfg = decode_mlp_config(util::read_file_text(path_for(dir, name, ".json")));
    nn::Rng rng(0);
    Mlp<float> model(cfg, rng);
    const auto tensors = nn::read_checkpoint(path_for(dir, name, ".spw"));
    const auto params = model.parameters();
    nn::load_tensors<float>(tensors, params);
    return model;
}

Tcn<float> load_tcn(const std::string& dir, const std::string& name) {
    const auto cfg = decode_tcn_config(util::read_file_text(path_for(dir, name, ".json")));
    nn::Rng rng(0);
    Tcn<float> model(cfg, rng);
    const auto tensors = nn::read_checkpoint(path_for(dir, name, ".spw"));
    const auto params = model.parameters();
    nn::load_tensors<float>(tensors, params);
    return model;
}

} // namespace statepipe::models
