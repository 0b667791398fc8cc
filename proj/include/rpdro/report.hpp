#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rpdro/experiment.hpp"

namespace rpdro {

enum class FigureKind { Noise, NoiseGroups, AdvSteps, SelfnormBeta, BatchSize, Trajectories };

inline FigureKind figure_kind_from_string(const std::string& s) {
    if (s == "noise") return FigureKind::Noise;
    if (s == "noise-groups") return FigureKind::NoiseGroups;
    if (s == "adv-steps") return FigureKind::AdvSteps;
    if (s == "selfnorm-beta") return FigureKind::SelfnormBeta;
    if (s == "batch-size") return FigureKind::BatchSize;
    if (s == "trajectories") return FigureKind::Trajectories;
    throw std::invalid_argument("unknown figure kind " + s);
}

// A completed run on disk: run.json plus the per-checkpoint eval CSV.
struct RunOnDisk {
    nlohmann::json record;
    std::string dir;
};

inline std::vector<RunOnDisk> scan_runs(const std::string& runs_dir) {
    namespace fs = std::filesystem;
    std::vector<std::string> dirs;
    for (const auto& entry : fs::directory_iterator(runs_dir)) {
        if (entry.is_directory() && fs::exists(entry.path() / "run.json"))
            dirs.push_back(entry.path().string());
    }
    std::sort(dirs.begin(), dirs.end());
    std::vector<RunOnDisk> runs;
    for (const std::string& d : dirs)
        runs.push_back({read_json_file((fs::path(d) / "run.json").string()), d});
    if (runs.empty()) throw std::invalid_argument("no runs with run.json under " + runs_dir);
    return runs;
}

// Method label for plots: strategy kind, with the normalization mode for
// rpdro (rpdro-batch / rpdro-self).
inline std::string method_label(const nlohmann::json& config) {
    const nlohmann::json& t = config.at("train");
    std::string m = t.value("method", std::string("erm"));
    if (m == "rpdro") m += "-" + t.value("norm", std::string("batch"));
    return m;
}

inline std::string adversary_label(const nlohmann::json& config) {
    const nlohmann::json adv = config.at("train").value("adversary", nlohmann::json());
    if (adv.is_null()) return "linear";
    if (adv.value("architecture", std::string("linear")) == "linear") return "linear";
    std::string label = "mlp";
    for (int h : adv.value("hidden_sizes", std::vector<int>{})) label += "-" + std::to_string(h);
    return label;
}

namespace detail {

inline nlohmann::json axis_value(const RunOnDisk& run, const std::string& section,
                                 const std::string& key, const std::string& figure) {
    const nlohmann::json& config = run.record.at("config");
    if (!config.contains(section) || !config.at(section).contains(key))
        throw std::invalid_argument("figure " + figure + ": run " + run.dir +
                                    " is missing axis " + key);
    return config.at(section).at(key);
}

inline void emit_row(std::ostream& out, const std::string& axis, const std::string& method,
                     const nlohmann::json& seed, const std::string& metric, double value) {
    out << axis << "," << method << "," << seed.dump() << "," << metric << ","
        << fmt_double(value) << "\n";
}

}  // namespace detail

// Long-format figure data: axis value, method, seed, metric, value.
inline void emit_figure_csv(const std::vector<RunOnDisk>& runs, FigureKind kind,
                            const std::string& out_path) {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("emit_figure_csv: cannot open " + out_path);

    auto test_metric = [&](const RunOnDisk& r, const char* name) {
        return r.record.at("test").at(name).get<double>();
    };

    switch (kind) {
        case FigureKind::Noise: {
            out << "p_noise,method,seed,metric,value\n";
            for (const RunOnDisk& r : runs) {
                const std::string axis =
                    json_csv_value(detail::axis_value(r, "data", "p_noise", "noise"));
                const std::string m = method_label(r.record.at("config"));
                detail::emit_row(out, axis, m, r.record.at("seed"), "robust_acc",
                                 test_metric(r, "robust_accuracy"));
                detail::emit_row(out, axis, m, r.record.at("seed"), "average_acc",
                                 test_metric(r, "average_accuracy"));
            }
            return;
        }
        case FigureKind::NoiseGroups: {
            out << "p_noise,method,seed,metric,value\n";
            for (const RunOnDisk& r : runs) {
                const std::string axis =
                    json_csv_value(detail::axis_value(r, "data", "p_noise", "noise-groups"));
                const std::string m = method_label(r.record.at("config"));
                const nlohmann::json& groups = r.record.at("test").at("per_group_accuracy");
                for (auto it = groups.begin(); it != groups.end(); ++it)
                    detail::emit_row(out, axis, m, r.record.at("seed"),
                                     "group_" + it.key() + "_acc", it.value().get<double>());
            }
            return;
        }
        case FigureKind::AdvSteps: {
            out << "adv_steps,method,seed,metric,value\n";
            for (const RunOnDisk& r : runs) {
                const std::string axis =
                    json_csv_value(detail::axis_value(r, "train", "adv_steps", "adv-steps"));
                const std::string m = adversary_label(r.record.at("config"));
                detail::emit_row(out, axis, m, r.record.at("seed"), "robust_acc",
                                 test_metric(r, "robust_accuracy"));
                detail::emit_row(out, axis, m, r.record.at("seed"), "average_acc",
                                 test_metric(r, "average_accuracy"));
            }
            return;
        }
        case FigureKind::SelfnormBeta: {
            out << "beta,method,seed,metric,value\n";
            for (const RunOnDisk& r : runs) {
                const std::string m = method_label(r.record.at("config"));
                // erm and rpdro-batch rows are reference lines without a beta
                std::string axis;
                if (m == "rpdro-self")
                    axis = json_csv_value(detail::axis_value(r, "train", "beta", "selfnorm-beta"));
                detail::emit_row(out, axis, m, r.record.at("seed"), "robust_acc",
                                 test_metric(r, "robust_accuracy"));
                detail::emit_row(out, axis, m, r.record.at("seed"), "average_acc",
                                 test_metric(r, "average_accuracy"));
            }
            return;
        }
        case FigureKind::BatchSize: {
            out << "batch_size,method,seed,metric,value\n";
            for (const RunOnDisk& r : runs) {
                const std::string axis =
                    json_csv_value(detail::axis_value(r, "train", "batch_size", "batch-size"));
                const std::string m = method_label(r.record.at("config"));
                detail::emit_row(out, axis, m, r.record.at("seed"), "robust_acc",
                                 test_metric(r, "robust_accuracy"));
                detail::emit_row(out, axis, m, r.record.at("seed"), "average_acc",
                                 test_metric(r, "average_accuracy"));
            }
            return;
        }
        case FigureKind::Trajectories: {
            // per-checkpoint per-domain validation accuracies
            out << "step,method,seed,metric,value\n";
            namespace fs = std::filesystem;
            for (const RunOnDisk& r : runs) {
                const fs::path evals = fs::path(r.dir) / "ckpt_evals.csv";
                std::ifstream in(evals);
                if (!in)
                    throw std::invalid_argument("figure trajectories: run " + r.dir +
                                                " is missing ckpt_evals.csv");
                const std::string m = method_label(r.record.at("config")) + "-k" +
                                      std::to_string(r.record.at("config")
                                                         .at("train")
                                                         .value("adv_steps", 1));
                std::string line;
                std::getline(in, line);  // header
                std::vector<std::string> cols;
                {
                    std::stringstream ss(line);
                    std::string c;
                    while (std::getline(ss, c, ',')) cols.push_back(c);
                }
                while (std::getline(in, line)) {
                    std::stringstream ss(line);
                    std::vector<std::string> vals;
                    std::string c;
                    while (std::getline(ss, c, ',')) vals.push_back(c);
                    if (vals.empty()) continue;
                    for (std::size_t i = 4; i < cols.size() && i < vals.size(); ++i) {
                        if (vals[i].empty()) continue;
                        detail::emit_row(out, vals[0], m, r.record.at("seed"),
                                         "domain_" + cols[i].substr(6) + "_acc",
                                         std::stod(vals[i]));
                    }
                }
            }
            return;
        }
    }
}

}  // namespace rpdro
