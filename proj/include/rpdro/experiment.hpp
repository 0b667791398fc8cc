#pragma once

#include <charconv>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rpdro/data.hpp"
#include "rpdro/selection.hpp"
#include "rpdro/serialize.hpp"
#include "rpdro/training.hpp"

namespace rpdro {

// Shortest decimal that round-trips the double; keeps emitted CSVs
// byte-stable across reruns.
inline std::string fmt_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string json_csv_value(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_float()) return fmt_double(v.get<double>());
    return v.dump();
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string config_hash(const nlohmann::json& cfg) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(cfg.dump());
    return os.str();
}

// ---------------------------------------------------------------------------
// Experiment configuration (JSON)
//
// {
//   "seed": 1,
//   "data": { "generator": "toy2domain"|"spurious", ...params,
//             "valid_n":..., "test_n":..., "p_noise":...,
//             or "train"/"valid"/"test" jsonl paths },
//   "train": { "method","norm","tau","beta","kappa","alpha","rho","eta_q",
//              "batch_size","epochs","lr","optimizer","schedule","adv_steps",
//              "ckpt_interval","model":{...},"adversary":{...} },
//   "selection": { "criterion","kl_threshold","loss" }
// }
// ---------------------------------------------------------------------------

struct ResolvedData {
    Dataset train;
    Dataset valid;
    Dataset test;
};

// Generator-backed configs draw train/valid/test with seeds derived from the
// run seed; evaluation sets use balanced group mixes so per-group accuracies
// are well resolved (toy: minority_frac 0.45; spurious: bias_rate 0.5).
inline ResolvedData resolve_datasets(const nlohmann::json& cfg) {
    const nlohmann::json& data = cfg.at("data");
    const std::uint64_t seed = cfg.value("seed", std::uint64_t{0});
    ResolvedData out;
    if (data.contains("generator")) {
        const std::string gen = data.at("generator").get<std::string>();
        const std::size_t n = data.at("n").get<std::size_t>();
        const std::size_t valid_n = data.value("valid_n", n / 2);
        const std::size_t test_n = data.value("test_n", n);
        if (gen == "toy2domain") {
            const double mf = data.value("minority_frac", 0.05);
            const double sigma = data.value("sigma", 0.3);
            const double eval_mf = data.value("eval_minority_frac", 0.45);
            out.train = gen_two_domain(n, mf, sigma, mix_seed(seed, 11));
            out.valid = gen_two_domain(valid_n, eval_mf, sigma, mix_seed(seed, 12));
            out.test = gen_two_domain(test_n, eval_mf, sigma, mix_seed(seed, 13));
        } else if (gen == "spurious") {
            const double bias = data.value("bias_rate", 0.95);
            const int d = data.value("d", 20);
            const double signal = data.value("signal", 0.5);
            const double amp = data.value("distractor_amp", 2.0);
            const double test_bias = data.value("test_bias_rate", 0.5);
            out.train = gen_spurious(n, bias, d, signal, amp, mix_seed(seed, 11));
            out.valid = gen_spurious(valid_n, bias, d, signal, amp, mix_seed(seed, 12));
            out.test = gen_spurious(test_n, test_bias, d, signal, amp, mix_seed(seed, 13));
        } else {
            throw std::invalid_argument("resolve_datasets: unknown generator " + gen);
        }
        const double p_noise = data.value("p_noise", 0.0);
        if (p_noise > 0.0) out.train = inject_label_noise(out.train, p_noise, mix_seed(seed, 14));
    } else {
        out.train = load_jsonl(data.at("train").get<std::string>());
        out.valid = load_jsonl(data.at("valid").get<std::string>());
        if (data.contains("test")) out.test = load_jsonl(data.at("test").get<std::string>());
        else out.test = out.valid;
    }
    return out;
}

inline ModelSpec model_spec_from_config(const nlohmann::json& node, int input_dim,
                                        int output_dim) {
    ModelSpec spec;
    if (!node.is_null()) {
        nlohmann::json j = node;
        if (!j.contains("input_dim")) j["input_dim"] = input_dim;
        if (!j.contains("output_dim")) j["output_dim"] = output_dim;
        if (!j.contains("architecture"))
            j["architecture"] = j.value("hidden_sizes", std::vector<int>{}).empty() ? "linear" : "mlp";
        spec = spec_from_json(j);
    } else {
        spec.architecture = Arch::Linear;
        spec.input_dim = input_dim;
        spec.output_dim = output_dim;
    }
    return spec;
}

inline TrainConfig build_train_config(const nlohmann::json& cfg, const Dataset& train) {
    const nlohmann::json& t = cfg.at("train");
    TrainConfig tc;
    nlohmann::json strat = t;
    strat["kind"] = t.value("method", std::string("erm"));
    if (t.contains("norm")) strat["norm_mode"] = t.at("norm");
    tc.strategy = strategy_from_json(strat);
    tc.model_spec = model_spec_from_config(t.value("model", nlohmann::json()), train.feature_dim,
                                           train.num_classes);
    tc.adversary_spec = model_spec_from_config(t.value("adversary", nlohmann::json()),
                                               train.feature_dim, train.num_classes);
    const std::string opt = t.value("optimizer", std::string("sgd"));
    if (opt == "sgd") tc.optimizer = OptKind::Sgd;
    else if (opt == "adam") tc.optimizer = OptKind::Adam;
    else throw std::invalid_argument("build_train_config: unknown optimizer " + opt);
    const std::string sched = t.value("schedule", std::string("constant"));
    if (sched == "constant") tc.schedule.kind = ScheduleKind::Constant;
    else if (sched == "linear") tc.schedule.kind = ScheduleKind::LinearDecay;
    else throw std::invalid_argument("build_train_config: unknown schedule " + sched);
    tc.lr = t.value("lr", 0.1);
    tc.batch_size = t.value("batch_size", 32);
    tc.epochs = t.value("epochs", 1);
    tc.adversary_steps = t.value("adv_steps", 1);
    tc.checkpoint_interval = t.value("ckpt_interval", std::int64_t{100});
    tc.seed = cfg.value("seed", std::uint64_t{0});
    tc.validate();
    return tc;
}

struct SelectionSpec {
    std::string criterion = "minmax";  // minmax | oracle | average
    double kl_threshold = kDefaultKlThreshold;
    SelectionLoss loss = SelectionLoss::ZeroOne;
};

inline SelectionSpec selection_spec_from_config(const nlohmann::json& cfg) {
    SelectionSpec s;
    if (!cfg.contains("selection")) return s;
    const nlohmann::json& j = cfg.at("selection");
    s.criterion = j.value("criterion", std::string("minmax"));
    if (s.criterion != "minmax" && s.criterion != "oracle" && s.criterion != "average")
        throw std::invalid_argument("selection: unknown criterion " + s.criterion);
    s.kl_threshold = j.value("kl_threshold", kDefaultKlThreshold);
    const std::string loss = j.value("loss", std::string("zero-one"));
    if (loss == "zero-one") s.loss = SelectionLoss::ZeroOne;
    else if (loss == "nll") s.loss = SelectionLoss::Nll;
    else throw std::invalid_argument("selection: unknown loss " + loss);
    return s;
}

// ---------------------------------------------------------------------------
// Artifact writing
// ---------------------------------------------------------------------------

inline void write_step_metrics_csv(const std::vector<StepMetrics>& steps,
                                   const StrategyConfig& strategy, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << "step,epoch,strategy,train_weighted_loss,kl_term,mean_weight_entropy,lr\n";
    for (const StepMetrics& s : steps) {
        out << s.step << "," << s.epoch << "," << strategy_name(strategy.kind) << ","
            << fmt_double(s.train_weighted_loss) << "," << fmt_double(s.kl_term) << ","
            << fmt_double(s.mean_weight_entropy) << "," << fmt_double(s.lr) << "\n";
    }
}

inline void write_ckpt_evals_csv(const std::vector<CheckpointEval>& evals, int num_groups,
                                 const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << "step,train_loss,valid_robust,valid_average";
    for (int g = 0; g < num_groups; ++g) out << ",group_" << g;
    out << "\n";
    for (const CheckpointEval& ev : evals) {
        out << ev.step << "," << fmt_double(ev.train_loss);
        if (ev.has_valid) {
            out << "," << fmt_double(ev.valid.robust_accuracy) << ","
                << fmt_double(ev.valid.average_accuracy);
            for (int g = 0; g < num_groups; ++g) {
                auto it = ev.valid.per_group_accuracy.find(g);
                out << ",";
                if (it != ev.valid.per_group_accuracy.end()) out << fmt_double(it->second);
            }
        } else {
            out << ",,";
            for (int g = 0; g < num_groups; ++g) out << ",";
        }
        out << "\n";
    }
}

inline std::string step_tag(std::int64_t step) {
    std::ostringstream os;
    os << std::setw(8) << std::setfill('0') << step;
    return os.str();
}

// Writes config.json, metrics.csv, ckpt_evals.csv and per-checkpoint model /
// adversary JSON files under dir.
inline TrainResult train_and_write(const nlohmann::json& cfg, const Dataset& train,
                                   const Dataset* valid, const std::string& dir) {
    namespace fs = std::filesystem;
    const TrainConfig tc = build_train_config(cfg, train);
    fs::create_directories(fs::path(dir) / "ckpts");
    write_json_file(cfg, (fs::path(dir) / "config.json").string());

    TrainResult result = train_run(train, valid, tc);
    write_step_metrics_csv(result.steps, tc.strategy, (fs::path(dir) / "metrics.csv").string());
    const int groups = valid ? valid->num_groups : train.num_groups;
    write_ckpt_evals_csv(result.evals, groups, (fs::path(dir) / "ckpt_evals.csv").string());
    for (const Checkpoint& c : result.checkpoints) {
        write_json_file(
            checkpoint_to_json(tc.model_spec, c.model, c.step, tc.seed, tc.strategy),
            (fs::path(dir) / "ckpts" / ("model_" + step_tag(c.step) + ".json")).string());
        write_json_file(
            checkpoint_to_json(tc.adversary_spec, c.adversary, c.step, tc.seed, tc.strategy),
            (fs::path(dir) / "ckpts" / ("adversary_" + step_tag(c.step) + ".json")).string());
    }
    return result;
}

// ---------------------------------------------------------------------------
// Selection over a checkpoint log
// ---------------------------------------------------------------------------

struct SelectionOutcome {
    std::size_t model_index = 0;
    std::int64_t selected_step = 0;
    nlohmann::json report;
};

inline SelectionOutcome select_from_pool(const CandidatePool& pool, const Dataset& valid,
                                         const SelectionSpec& spec) {
    if (pool.models.empty()) throw std::invalid_argument("select_from_pool: empty pool");
    SelectionOutcome out;
    nlohmann::json report = {{"criterion", spec.criterion}};

    nlohmann::json per_ckpt = nlohmann::json::array();
    for (std::size_t i = 0; i < pool.models.size(); ++i) {
        const GroupMetrics m = evaluate_groups(pool.models[i], pool.model_spec, valid);
        per_ckpt.push_back({{"step", pool.steps[i]},
                            {"valid_robust", m.robust_accuracy},
                            {"valid_average", m.average_accuracy}});
    }
    report["per_checkpoint"] = per_ckpt;

    if (spec.criterion == "minmax") {
        std::vector<std::vector<double>> ratios;
        ratios.reserve(pool.adversaries.size());
        for (const ParamSet& adv : pool.adversaries)
            ratios.push_back(full_set_weights(adv, pool.adversary_spec, valid));
        const auto candidates = kl_filter(ratios, valid.size(), spec.kl_threshold);
        const MinmaxResult res = minmax_select(pool, candidates, valid, spec.loss);
        out.model_index = res.model_index;
        nlohmann::json kl_values = nlohmann::json::array();
        for (const auto& r : ratios) kl_values.push_back(kl_estimate_mean1(r));
        nlohmann::json cand = nlohmann::json::array();
        for (const auto& c : candidates)
            cand.push_back(c.is_uniform ? nlohmann::json("uniform")
                                        : nlohmann::json(c.source_index));
        report["kl_values"] = kl_values;
        report["threshold"] = spec.kl_threshold;
        report["candidates"] = cand;
        report["matrix"] = res.matrix;
    } else if (spec.criterion == "oracle") {
        out.model_index = oracle_select(pool.models, pool.model_spec, valid);
    } else {
        out.model_index = average_select(pool.models, pool.model_spec, valid);
    }
    out.selected_step = pool.steps[out.model_index];
    report["selected_step"] = out.selected_step;
    report["selected_index"] = out.model_index;
    out.report = std::move(report);
    return out;
}

inline CandidatePool pool_from_result(const TrainResult& result, const TrainConfig& cfg) {
    CandidatePool pool;
    pool.model_spec = cfg.model_spec;
    pool.adversary_spec = cfg.adversary_spec;
    for (const Checkpoint& c : result.checkpoints) {
        pool.models.push_back(c.model);
        pool.adversaries.push_back(c.adversary);
        pool.steps.push_back(c.step);
    }
    return pool;
}

// ---------------------------------------------------------------------------
// One end-to-end run
// ---------------------------------------------------------------------------

struct RunRecord {
    nlohmann::json config;
    std::uint64_t seed = 0;
    std::string criterion;
    std::int64_t selected_step = 0;
    GroupMetrics test;
    double wall_seconds = 0.0;
    std::string status = "ok";
};

inline nlohmann::json run_record_to_json(const RunRecord& r) {
    nlohmann::json per_group = nlohmann::json::object();
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [g, acc] : r.test.per_group_accuracy) per_group[std::to_string(g)] = acc;
    for (const auto& [g, c] : r.test.group_counts) counts[std::to_string(g)] = c;
    return {{"config", r.config},
            {"seed", r.seed},
            {"criterion", r.criterion},
            {"selected_step", r.selected_step},
            {"test",
             {{"robust_accuracy", r.test.robust_accuracy},
              {"average_accuracy", r.test.average_accuracy},
              {"per_group_accuracy", per_group},
              {"group_counts", counts}}},
            {"wall_seconds", r.wall_seconds},
            {"status", r.status}};
}

// train -> kl_filter -> selection -> test evaluation, artifacts under dir.
// Failures are recorded in the returned status instead of thrown, so sweep
// cells can proceed past a bad cell.
inline RunRecord run_experiment(const nlohmann::json& cfg, const std::string& dir) {
    namespace fs = std::filesystem;
    const auto t0 = std::chrono::steady_clock::now();
    RunRecord record;
    record.config = cfg;
    record.seed = cfg.value("seed", std::uint64_t{0});
    const SelectionSpec sel = selection_spec_from_config(cfg);
    record.criterion = sel.criterion;
    try {
        const ResolvedData data = resolve_datasets(cfg);
        const TrainConfig tc = build_train_config(cfg, data.train);
        const TrainResult result = train_and_write(cfg, data.train, &data.valid, dir);
        const CandidatePool pool = pool_from_result(result, tc);
        const SelectionOutcome outcome = select_from_pool(pool, data.valid, sel);
        write_json_file(outcome.report, (fs::path(dir) / "selection.json").string());
        record.selected_step = outcome.selected_step;
        record.test = evaluate_groups(pool.models[outcome.model_index], tc.model_spec, data.test);
    } catch (const std::exception& e) {
        record.status = std::string("failed: ") + e.what();
        fs::create_directories(dir);
    }
    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json_file(run_record_to_json(record), (fs::path(dir) / "run.json").string());
    return record;
}

}  // namespace rpdro
