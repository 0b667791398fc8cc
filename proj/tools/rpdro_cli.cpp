// Command-line front end: dataset generation, label noise, training,
// checkpoint selection, evaluation, sweeps and figure-data reports.
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rpdro/rpdro.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GenArgs {
    std::string kind;
    std::size_t n = 2000;
    double bias_rate = 0.95;
    double minority_frac = 0.05;
    double sigma = 0.3;
    int d = 20;
    double signal = 0.5;
    double distractor_amp = 2.0;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_gen(const GenArgs& a) {
    rpdro::Dataset data;
    if (a.kind == "toy2domain") {
        data = rpdro::gen_two_domain(a.n, a.minority_frac, a.sigma, a.seed);
    } else if (a.kind == "spurious") {
        data = rpdro::gen_spurious(a.n, a.bias_rate, a.d, a.signal, a.distractor_amp, a.seed);
    } else {
        throw std::invalid_argument("gen: unknown kind " + a.kind);
    }
    rpdro::save_jsonl(data, a.out);
    std::cout << "wrote " << data.size() << " examples to " << a.out << "\n";
    return 0;
}

int cmd_noise(const std::string& in, double p, std::uint64_t seed, const std::string& out) {
    const rpdro::Dataset data = rpdro::load_jsonl(in);
    rpdro::save_jsonl(rpdro::inject_label_noise(data, p, seed), out);
    std::cout << "wrote noisy dataset to " << out << "\n";
    return 0;
}

struct TrainArgs {
    std::string train_path, valid_path, out_dir;
    std::string method = "erm";
    std::string norm = "batch";
    double tau = 0.1, beta = 1.0, kappa = 1.0, alpha = 0.5, rho = 1.0, eta_q = 0.1;
    int batch_size = 32, epochs = 1, adv_steps = 1;
    std::int64_t ckpt_interval = 100;
    double lr = 0.1;
    std::string optimizer = "sgd";
    std::string schedule = "constant";
    std::string model_arch = "linear";
    std::string adversary_arch = "linear";
    std::uint64_t seed = 0;
};

json train_config_json(const TrainArgs& a) {
    json train = {{"method", a.method},
                  {"norm", a.norm},
                  {"tau", a.tau},
                  {"beta", a.beta},
                  {"kappa", a.kappa},
                  {"alpha", a.alpha},
                  {"rho", a.rho},
                  {"eta_q", a.eta_q},
                  {"batch_size", a.batch_size},
                  {"epochs", a.epochs},
                  {"lr", a.lr},
                  {"optimizer", a.optimizer},
                  {"schedule", a.schedule},
                  {"adv_steps", a.adv_steps},
                  {"ckpt_interval", a.ckpt_interval},
                  {"model", rpdro::parse_arch_shorthand(a.model_arch)},
                  {"adversary", rpdro::parse_arch_shorthand(a.adversary_arch)}};
    return {{"seed", a.seed},
            {"data", {{"train", a.train_path}, {"valid", a.valid_path}}},
            {"train", train}};
}

int cmd_train(const TrainArgs& a) {
    const json cfg = train_config_json(a);
    const rpdro::ResolvedData data = rpdro::resolve_datasets(cfg);
    const rpdro::TrainResult result = rpdro::train_and_write(cfg, data.train, &data.valid, a.out_dir);
    std::cout << "trained " << result.steps.size() << " steps, " << result.checkpoints.size()
              << " checkpoints under " << a.out_dir << "\n";
    return 0;
}

rpdro::CandidatePool load_pool(const std::string& ckpt_dir) {
    fs::path dir(ckpt_dir);
    if (fs::exists(dir / "ckpts")) dir /= "ckpts";
    std::vector<std::string> model_files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("model_", 0) == 0 && entry.path().extension() == ".json")
            model_files.push_back(entry.path().string());
    }
    std::sort(model_files.begin(), model_files.end());
    if (model_files.empty())
        throw std::invalid_argument("select: no model_*.json checkpoints under " + ckpt_dir);

    rpdro::CandidatePool pool;
    for (const std::string& mf : model_files) {
        const auto model = rpdro::checkpoint_from_json(rpdro::read_json_file(mf));
        pool.model_spec = model.spec;
        pool.models.push_back(model.params);
        pool.steps.push_back(model.step);
        const std::string af = mf.substr(0, mf.rfind("model_")) + "adversary_" +
                               mf.substr(mf.rfind("model_") + 6);
        if (fs::exists(af)) {
            const auto adv = rpdro::checkpoint_from_json(rpdro::read_json_file(af));
            pool.adversary_spec = adv.spec;
            pool.adversaries.push_back(adv.params);
        }
    }
    return pool;
}

int cmd_select(const std::string& ckpt_dir, const std::string& valid_path,
               const std::string& criterion, double kl_threshold, const std::string& loss,
               const std::string& out) {
    rpdro::SelectionSpec spec;
    spec.criterion = criterion;
    spec.kl_threshold = kl_threshold;
    if (loss == "zero-one") spec.loss = rpdro::SelectionLoss::ZeroOne;
    else if (loss == "nll") spec.loss = rpdro::SelectionLoss::Nll;
    else throw std::invalid_argument("select: unknown loss " + loss);

    const rpdro::CandidatePool pool = load_pool(ckpt_dir);
    const rpdro::Dataset valid = rpdro::load_jsonl(valid_path);
    const rpdro::SelectionOutcome outcome = rpdro::select_from_pool(pool, valid, spec);
    rpdro::write_json_file(outcome.report, out);
    std::cout << "selected step " << outcome.selected_step << " (" << criterion << ") -> " << out
              << "\n";
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_path, const std::string& out) {
    const auto ckpt = rpdro::checkpoint_from_json(rpdro::read_json_file(model_path));
    const rpdro::Dataset data = rpdro::load_jsonl(data_path);
    const rpdro::GroupMetrics m = rpdro::evaluate_groups(ckpt.params, ckpt.spec, data);
    json per_group = json::object();
    json counts = json::object();
    for (const auto& [g, acc] : m.per_group_accuracy) per_group[std::to_string(g)] = acc;
    for (const auto& [g, c] : m.group_counts) counts[std::to_string(g)] = c;
    rpdro::write_json_file({{"robust_accuracy", m.robust_accuracy},
                            {"average_accuracy", m.average_accuracy},
                            {"per_group_accuracy", per_group},
                            {"group_counts", counts},
                            {"step", ckpt.step}},
                           out);
    std::cout << "robust " << m.robust_accuracy << ", average " << m.average_accuracy << " -> "
              << out << "\n";
    return 0;
}

int cmd_sweep(const std::string& grid_path, const std::string& out_dir, int workers) {
    const rpdro::SweepGrid grid = rpdro::sweep_grid_from_json(rpdro::read_json_file(grid_path));
    const auto rows = rpdro::run_sweep(grid, out_dir, workers);
    std::size_t failed = 0;
    for (const auto& r : rows) failed += (r.status != "ok");
    std::cout << "sweep: " << rows.size() << " runs, " << failed << " failed -> " << out_dir
              << "/sweep.csv\n";
    return failed == 0 ? 0 : 2;
}

int cmd_report(const std::string& runs_dir, const std::string& figure, const std::string& out) {
    const auto runs = rpdro::scan_runs(runs_dir);
    rpdro::emit_figure_csv(runs, rpdro::figure_kind_from_string(figure), out);
    std::cout << "figure " << figure << " over " << runs.size() << " runs -> " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RP-DRO: distributionally robust training with parametric likelihood ratios"};
    app.require_subcommand(1);

    GenArgs gen;
    CLI::App* gen_cmd = app.add_subcommand("gen", "generate a synthetic dataset");
    gen_cmd->add_option("--kind", gen.kind, "toy2domain|spurious")->required();
    gen_cmd->add_option("--n", gen.n, "number of examples")->required();
    gen_cmd->add_option("--bias-rate", gen.bias_rate, "spurious: distractor agreement rate");
    gen_cmd->add_option("--minority-frac", gen.minority_frac, "toy2domain: minority proportion");
    gen_cmd->add_option("--sigma", gen.sigma, "toy2domain: noise scale");
    gen_cmd->add_option("--d", gen.d, "spurious: feature dimension");
    gen_cmd->add_option("--signal", gen.signal, "spurious: true-signal strength");
    gen_cmd->add_option("--distractor-amp", gen.distractor_amp, "spurious: distractor amplitude");
    gen_cmd->add_option("--seed", gen.seed, "rng seed");
    gen_cmd->add_option("--out", gen.out, "output .jsonl path")->required();

    std::string noise_in, noise_out;
    double noise_p = 0.0;
    std::uint64_t noise_seed = 0;
    CLI::App* noise_cmd = app.add_subcommand("noise", "inject label noise");
    noise_cmd->add_option("--in", noise_in, "input .jsonl")->required();
    noise_cmd->add_option("--p", noise_p, "noise probability")->required();
    noise_cmd->add_option("--seed", noise_seed, "rng seed");
    noise_cmd->add_option("--out", noise_out, "output .jsonl")->required();

    TrainArgs train;
    CLI::App* train_cmd = app.add_subcommand("train", "train a model with a weighting strategy");
    train_cmd->add_option("--train", train.train_path, "training .jsonl")->required();
    train_cmd->add_option("--valid", train.valid_path, "validation .jsonl")->required();
    train_cmd->add_option("--method", train.method,
                          "erm|rpdro|np-kl|np-cvar|np-chi2|group-dro|oracle-dro");
    train_cmd->add_option("--norm", train.norm, "rpdro normalization: batch|self");
    train_cmd->add_option("--tau", train.tau, "rpdro KL penalty weight");
    train_cmd->add_option("--beta", train.beta, "rpdro/self normalization weight");
    train_cmd->add_option("--kappa", train.kappa, "np-kl ball radius");
    train_cmd->add_option("--alpha", train.alpha, "np-cvar level");
    train_cmd->add_option("--rho", train.rho, "np-chi2 ball radius");
    train_cmd->add_option("--eta-q", train.eta_q, "group-dro step size");
    train_cmd->add_option("--batch-size", train.batch_size, "mini-batch size");
    train_cmd->add_option("--epochs", train.epochs, "training epochs");
    train_cmd->add_option("--lr", train.lr, "learning rate (model and adversary)");
    train_cmd->add_option("--optimizer", train.optimizer, "sgd|adam");
    train_cmd->add_option("--schedule", train.schedule, "constant|linear");
    train_cmd->add_option("--adv-steps", train.adv_steps, "adversary steps per model step");
    train_cmd->add_option("--ckpt-interval", train.ckpt_interval, "checkpoint every N steps");
    train_cmd->add_option("--model", train.model_arch, "model arch: linear|mlp-H[-H...]");
    train_cmd->add_option("--adversary", train.adversary_arch, "adversary arch shorthand");
    train_cmd->add_option("--seed", train.seed, "rng seed");
    train_cmd->add_option("--out", train.out_dir, "run directory")->required();

    std::string sel_dir, sel_valid, sel_out;
    std::string sel_criterion = "minmax";
    std::string sel_loss = "zero-one";
    double sel_threshold = rpdro::kDefaultKlThreshold;
    CLI::App* select_cmd = app.add_subcommand("select", "pick a checkpoint on validation data");
    select_cmd->add_option("--ckpt-dir", sel_dir, "train run directory (or its ckpts/)")->required();
    select_cmd->add_option("--valid", sel_valid, "validation .jsonl")->required();
    select_cmd->add_option("--criterion", sel_criterion, "minmax|oracle|average");
    select_cmd->add_option("--kl-threshold", sel_threshold, "minmax adversary KL cutoff");
    select_cmd->add_option("--loss", sel_loss, "minmax loss: zero-one|nll");
    select_cmd->add_option("--out", sel_out, "selection report .json")->required();

    std::string eval_model, eval_data, eval_out;
    CLI::App* eval_cmd = app.add_subcommand("eval", "group-wise evaluation of a checkpoint");
    eval_cmd->add_option("--model", eval_model, "model checkpoint .json")->required();
    eval_cmd->add_option("--data", eval_data, "dataset .jsonl")->required();
    eval_cmd->add_option("--out", eval_out, "metrics .json")->required();

    std::string sweep_grid, sweep_out;
    int sweep_workers = 1;
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "run a hyper-parameter grid");
    sweep_cmd->add_option("--grid", sweep_grid, "grid .json")->required();
    sweep_cmd->add_option("--out", sweep_out, "sweep output directory")->required();
    sweep_cmd->add_option("--workers", sweep_workers, "parallel workers");

    std::string report_runs, report_figure, report_out;
    CLI::App* report_cmd = app.add_subcommand("report", "emit figure data from run records");
    report_cmd->add_option("--runs", report_runs, "directory of run directories")->required();
    report_cmd
        ->add_option("--figure", report_figure,
                     "noise|noise-groups|adv-steps|selfnorm-beta|batch-size|trajectories")
        ->required();
    report_cmd->add_option("--out", report_out, "figure .csv")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen_cmd->parsed()) return cmd_gen(gen);
        if (noise_cmd->parsed()) return cmd_noise(noise_in, noise_p, noise_seed, noise_out);
        if (train_cmd->parsed()) return cmd_train(train);
        if (select_cmd->parsed())
            return cmd_select(sel_dir, sel_valid, sel_criterion, sel_threshold, sel_loss, sel_out);
        if (eval_cmd->parsed()) return cmd_eval(eval_model, eval_data, eval_out);
        if (sweep_cmd->parsed()) return cmd_sweep(sweep_grid, sweep_out, sweep_workers);
        if (report_cmd->parsed()) return cmd_report(report_runs, report_figure, report_out);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
