#pragma once

#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "rpdro/model.hpp"
#include "rpdro/param_set.hpp"
#include "rpdro/weighting.hpp"

namespace rpdro {

// ---------------------------------------------------------------------------
// ModelSpec <-> JSON
// ---------------------------------------------------------------------------

inline nlohmann::json spec_to_json(const ModelSpec& spec) {
    return {{"architecture", spec.architecture == Arch::Linear ? "linear" : "mlp"},
            {"input_dim", spec.input_dim},
            {"hidden_sizes", spec.hidden_sizes},
            {"activation", spec.activation == Activation::Relu ? "relu" : "tanh"},
            {"output_dim", spec.output_dim}};
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
    ModelSpec spec;
    const std::string arch = j.at("architecture").get<std::string>();
    if (arch == "linear") spec.architecture = Arch::Linear;
    else if (arch == "mlp") spec.architecture = Arch::Mlp;
    else throw std::invalid_argument("spec_from_json: unknown architecture " + arch);
    spec.input_dim = j.at("input_dim").get<int>();
    spec.hidden_sizes = j.value("hidden_sizes", std::vector<int>{});
    const std::string act = j.value("activation", std::string("tanh"));
    if (act == "relu") spec.activation = Activation::Relu;
    else if (act == "tanh") spec.activation = Activation::Tanh;
    else throw std::invalid_argument("spec_from_json: unknown activation " + act);
    spec.output_dim = j.at("output_dim").get<int>();
    spec.validate();
    return spec;
}

// ---------------------------------------------------------------------------
// StrategyConfig <-> JSON (exactly the active kind's fields)
// ---------------------------------------------------------------------------

inline nlohmann::json strategy_to_json(const StrategyConfig& s) {
    nlohmann::json j = {{"kind", strategy_name(s.kind)}};
    switch (s.kind) {
        case StrategyKind::Erm: break;
        case StrategyKind::Rpdro:
            j["norm_mode"] = s.norm_mode == NormMode::Batch ? "batch" : "self";
            j["tau"] = s.tau;
            if (s.norm_mode == NormMode::Self) j["beta"] = s.beta;
            break;
        case StrategyKind::NpKl: j["kappa"] = s.kappa; break;
        case StrategyKind::NpCvar: j["alpha"] = s.alpha; break;
        case StrategyKind::NpChi2: j["rho"] = s.rho; break;
        case StrategyKind::GroupDro: j["eta_q"] = s.eta_q; break;
    }
    return j;
}

inline StrategyConfig strategy_from_json(const nlohmann::json& j) {
    StrategyConfig s;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "erm") s.kind = StrategyKind::Erm;
    else if (kind == "rpdro") s.kind = StrategyKind::Rpdro;
    else if (kind == "np-kl") s.kind = StrategyKind::NpKl;
    else if (kind == "np-cvar") s.kind = StrategyKind::NpCvar;
    else if (kind == "np-chi2") s.kind = StrategyKind::NpChi2;
    else if (kind == "group-dro" || kind == "oracle-dro") s.kind = StrategyKind::GroupDro;
    else throw std::invalid_argument("strategy_from_json: unknown kind " + kind);
    switch (s.kind) {
        case StrategyKind::Erm: break;
        case StrategyKind::Rpdro: {
            const std::string norm = j.value("norm_mode", std::string("batch"));
            if (norm == "batch") s.norm_mode = NormMode::Batch;
            else if (norm == "self") s.norm_mode = NormMode::Self;
            else throw std::invalid_argument("strategy_from_json: unknown norm_mode " + norm);
            s.tau = j.value("tau", 0.1);
            if (s.norm_mode == NormMode::Self) s.beta = j.value("beta", 1.0);
            break;
        }
        case StrategyKind::NpKl: s.kappa = j.at("kappa").get<double>(); break;
        case StrategyKind::NpCvar: s.alpha = j.at("alpha").get<double>(); break;
        case StrategyKind::NpChi2: s.rho = j.at("rho").get<double>(); break;
        case StrategyKind::GroupDro: s.eta_q = j.at("eta_q").get<double>(); break;
    }
    s.validate();
    return s;
}

// ---------------------------------------------------------------------------
// Checkpoint files: {spec, named parameter arrays, step, seed, strategy}.
// Doubles survive the JSON round trip bit-exactly.
// ---------------------------------------------------------------------------

inline nlohmann::json params_to_json(const ParamSet& params) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, tensor] : params) {
        j[name] = {{"shape", tensor.shape}, {"values", tensor.values}};
    }
    return j;
}

inline ParamSet params_from_json(const nlohmann::json& j) {
    ParamSet params;
    for (auto it = j.begin(); it != j.end(); ++it) {
        Shape shape = it.value().at("shape").get<Shape>();
        std::vector<double> values = it.value().at("values").get<std::vector<double>>();
        params.add(it.key(), Tensor(std::move(shape), std::move(values)));
    }
    return params;
}

inline nlohmann::json checkpoint_to_json(const ModelSpec& spec, const ParamSet& params,
                                         std::int64_t step, std::uint64_t seed,
                                         const StrategyConfig& strategy) {
    return {{"spec", spec_to_json(spec)},
            {"params", params_to_json(params)},
            {"step", step},
            {"seed", seed},
            {"strategy", strategy_to_json(strategy)}};
}

struct LoadedCheckpoint {
    ModelSpec spec;
    ParamSet params;
    std::int64_t step = 0;
    std::uint64_t seed = 0;
    StrategyConfig strategy;
};

inline LoadedCheckpoint checkpoint_from_json(const nlohmann::json& j) {
    LoadedCheckpoint c;
    c.spec = spec_from_json(j.at("spec"));
    c.params = params_from_json(j.at("params"));
    c.step = j.at("step").get<std::int64_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.strategy = strategy_from_json(j.at("strategy"));
    return c;
}

inline void write_json_file(const nlohmann::json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_json_file: cannot open " + path);
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("write_json_file: write failed for " + path);
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_json_file: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("read_json_file: parse error in " + path + ": " + e.what());
    }
    return j;
}

}  // namespace rpdro
