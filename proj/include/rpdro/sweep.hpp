#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "rpdro/experiment.hpp"

namespace rpdro {

// Hyper-parameter grid: a base experiment config plus named axes whose
// cartesian product is enumerated in deterministic order (rightmost axis
// fastest), each cell run once per seed.
struct SweepGrid {
    nlohmann::json base;
    std::vector<std::string> axis_names;
    std::vector<std::vector<nlohmann::json>> axis_values;
    std::vector<std::uint64_t> seeds;

    std::size_t num_cells() const {
        std::size_t n = 1;
        for (const auto& v : axis_values) n *= v.size();
        return n;
    }
};

inline SweepGrid sweep_grid_from_json(const nlohmann::json& j) {
    SweepGrid g;
    g.base = j.at("base");
    for (const nlohmann::json& axis : j.at("axes")) {
        g.axis_names.push_back(axis.at("name").get<std::string>());
        std::vector<nlohmann::json> values(axis.at("values").begin(), axis.at("values").end());
        if (values.empty()) throw std::invalid_argument("sweep: empty axis " + g.axis_names.back());
        g.axis_values.push_back(std::move(values));
    }
    for (const nlohmann::json& s : j.at("seeds")) g.seeds.push_back(s.get<std::uint64_t>());
    if (g.seeds.empty()) throw std::invalid_argument("sweep: needs at least one seed");
    return g;
}

// Shorthand adversary / model architectures: "linear", "mlp-4", "mlp-8-8".
inline nlohmann::json parse_arch_shorthand(const std::string& s) {
    if (s == "linear") return {{"architecture", "linear"}};
    if (s.rfind("mlp-", 0) == 0) {
        std::vector<int> hidden;
        std::size_t pos = 4;
        while (pos < s.size()) {
            std::size_t dash = s.find('-', pos);
            if (dash == std::string::npos) dash = s.size();
            hidden.push_back(std::stoi(s.substr(pos, dash - pos)));
            pos = dash + 1;
        }
        return {{"architecture", "mlp"}, {"hidden_sizes", hidden}, {"activation", "tanh"}};
    }
    throw std::invalid_argument("unknown architecture shorthand " + s);
}

// Applies one axis value into a config. Known names map to their homes;
// dotted names fall through as raw paths into the config object.
inline void apply_axis(nlohmann::json& cfg, const std::string& name, const nlohmann::json& value) {
    static const std::map<std::string, std::string> kTrainAxes = {
        {"tau", "tau"},       {"beta", "beta"},   {"kappa", "kappa"},
        {"alpha", "alpha"},   {"rho", "rho"},     {"eta_q", "eta_q"},
        {"batch_size", "batch_size"}, {"epochs", "epochs"}, {"lr", "lr"},
        {"adv_steps", "adv_steps"},   {"ckpt_interval", "ckpt_interval"},
        {"method", "method"}, {"norm", "norm"},   {"optimizer", "optimizer"},
    };
    static const std::map<std::string, std::string> kDataAxes = {
        {"p_noise", "p_noise"}, {"n", "n"}, {"bias_rate", "bias_rate"},
        {"minority_frac", "minority_frac"}, {"sigma", "sigma"},
    };
    if (auto it = kTrainAxes.find(name); it != kTrainAxes.end()) {
        cfg["train"][it->second] = value;
        return;
    }
    if (auto it = kDataAxes.find(name); it != kDataAxes.end()) {
        cfg["data"][it->second] = value;
        return;
    }
    if (name == "adversary" || name == "model") {
        cfg["train"][name] = value.is_string()
                                 ? parse_arch_shorthand(value.get<std::string>())
                                 : value;
        return;
    }
    // dotted path fallback, e.g. "train.adversary.hidden_sizes"
    if (name.find('.') != std::string::npos) {
        nlohmann::json* node = &cfg;
        std::size_t pos = 0;
        while (true) {
            std::size_t dot = name.find('.', pos);
            if (dot == std::string::npos) {
                (*node)[name.substr(pos)] = value;
                return;
            }
            node = &(*node)[name.substr(pos, dot - pos)];
            pos = dot + 1;
        }
    }
    throw std::invalid_argument("sweep: unknown axis " + name);
}

inline nlohmann::json cell_config(const SweepGrid& grid, std::size_t cell) {
    nlohmann::json cfg = grid.base;
    std::size_t rem = cell;
    std::vector<std::size_t> idx(grid.axis_names.size(), 0);
    for (std::size_t a = grid.axis_names.size(); a-- > 0;) {
        idx[a] = rem % grid.axis_values[a].size();
        rem /= grid.axis_values[a].size();
    }
    for (std::size_t a = 0; a < grid.axis_names.size(); ++a)
        apply_axis(cfg, grid.axis_names[a], grid.axis_values[a][idx[a]]);
    return cfg;
}

struct SweepRow {
    std::size_t cell = 0;
    std::vector<nlohmann::json> axis_values;
    std::uint64_t seed = 0;
    std::string status = "ok";
    std::int64_t selected_step = 0;
    double robust = 0.0;
    double average = 0.0;
};

// Cells run in parallel workers (each owns its run directory and RNG); rows
// are written in enumeration order so the CSV is byte-stable.
inline std::vector<SweepRow> run_sweep(const SweepGrid& grid, const std::string& out_dir,
                                       int workers = 1) {
    namespace fs = std::filesystem;
    if (workers < 1) throw std::invalid_argument("run_sweep: workers must be >= 1");
    fs::create_directories(out_dir);

    struct Job {
        std::size_t cell;
        std::size_t seed_idx;
        nlohmann::json cfg;
        std::string dir;
    };
    std::vector<Job> jobs;
    for (std::size_t cell = 0; cell < grid.num_cells(); ++cell) {
        nlohmann::json cfg = cell_config(grid, cell);
        for (std::size_t s = 0; s < grid.seeds.size(); ++s) {
            nlohmann::json run_cfg = cfg;
            run_cfg["seed"] = grid.seeds[s];
            const std::string dir =
                (fs::path(out_dir) / ("cell" + std::to_string(cell) + "_seed" +
                                      std::to_string(grid.seeds[s]) + "_" + config_hash(run_cfg)))
                    .string();
            jobs.push_back({cell, s, std::move(run_cfg), dir});
        }
    }

    std::vector<SweepRow> rows(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            const Job& job = jobs[i];
            SweepRow row;
            row.cell = job.cell;
            row.seed = grid.seeds[job.seed_idx];
            std::size_t rem = job.cell;
            std::vector<std::size_t> idx(grid.axis_names.size(), 0);
            for (std::size_t a = grid.axis_names.size(); a-- > 0;) {
                idx[a] = rem % grid.axis_values[a].size();
                rem /= grid.axis_values[a].size();
            }
            for (std::size_t a = 0; a < grid.axis_names.size(); ++a)
                row.axis_values.push_back(grid.axis_values[a][idx[a]]);
            try {
                const RunRecord rec = run_experiment(job.cfg, job.dir);
                row.status = rec.status;
                row.selected_step = rec.selected_step;
                row.robust = rec.test.robust_accuracy;
                row.average = rec.test.average_accuracy;
            } catch (const std::exception& e) {
                row.status = std::string("failed: ") + e.what();
            }
            rows[i] = std::move(row);
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    // raw rows in enumeration order, then one aggregate row per cell
    std::ofstream out(fs::path(out_dir) / "sweep.csv");
    if (!out) throw std::runtime_error("run_sweep: cannot open sweep.csv");
    out << "row_kind,cell";
    for (const std::string& a : grid.axis_names) out << "," << a;
    out << ",seed,status,selected_step,robust_acc,average_acc,robust_std,average_std\n";
    for (const SweepRow& r : rows) {
        out << "run," << r.cell;
        for (const auto& v : r.axis_values) out << "," << json_csv_value(v);
        out << "," << r.seed << "," << (r.status == "ok" ? "ok" : "failed") << ","
            << r.selected_step << "," << fmt_double(r.robust) << "," << fmt_double(r.average)
            << ",,\n";
    }
    const std::size_t seeds = grid.seeds.size();
    for (std::size_t cell = 0; cell < grid.num_cells(); ++cell) {
        double rm = 0.0, am = 0.0;
        std::size_t ok = 0;
        for (std::size_t s = 0; s < seeds; ++s) {
            const SweepRow& r = rows[cell * seeds + s];
            if (r.status != "ok") continue;
            rm += r.robust;
            am += r.average;
            ok += 1;
        }
        if (ok > 0) {
            rm /= static_cast<double>(ok);
            am /= static_cast<double>(ok);
        }
        double rv = 0.0, av = 0.0;
        for (std::size_t s = 0; s < seeds; ++s) {
            const SweepRow& r = rows[cell * seeds + s];
            if (r.status != "ok") continue;
            rv += (r.robust - rm) * (r.robust - rm);
            av += (r.average - am) * (r.average - am);
        }
        // sample standard deviation across seeds
        const double denom = ok > 1 ? static_cast<double>(ok - 1) : 1.0;
        const double rs = std::sqrt(rv / denom);
        const double as = std::sqrt(av / denom);
        out << "aggregate," << cell;
        for (const auto& v : rows[cell * seeds].axis_values) out << "," << json_csv_value(v);
        out << ",," << (ok == seeds ? "ok" : "partial") << ",," << fmt_double(rm) << ","
            << fmt_double(am) << "," << fmt_double(rs) << "," << fmt_double(as) << "\n";
    }
    return rows;
}

}  // namespace rpdro
