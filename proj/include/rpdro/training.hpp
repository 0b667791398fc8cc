#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rpdro/data.hpp"
#include "rpdro/evaluation.hpp"
#include "rpdro/model.hpp"
#include "rpdro/optimizer.hpp"
#include "rpdro/weighting.hpp"

namespace rpdro {

// Deterministic seed derivation (splitmix64 step on seed ^ tag).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed ^ (tag * 0x9e3779b97f4a7c15ULL);
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct TrainConfig {
    StrategyConfig strategy;
    ModelSpec model_spec;
    ModelSpec adversary_spec;
    OptKind optimizer = OptKind::Sgd;
    double lr = 0.1;                 // shared by model and adversary
    Schedule schedule;               // LinearDecay total_steps filled at run start if 0
    int batch_size = 32;
    int epochs = 1;
    int adversary_steps = 1;         // k; k = 1 routes to simultaneous updates
    std::int64_t checkpoint_interval = 100;
    std::uint64_t seed = 0;

    void validate() const {
        strategy.validate();
        model_spec.validate();
        adversary_spec.validate();
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
        if (adversary_steps < 1) throw std::invalid_argument("TrainConfig: adversary_steps must be >= 1");
        if (checkpoint_interval < 1)
            throw std::invalid_argument("TrainConfig: checkpoint_interval must be >= 1");
        if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
    }
};

struct Batch {
    Tensor X;
    std::vector<int> labels;
    std::vector<int> groups;
    std::vector<std::size_t> indices;  // positions in the source dataset

    std::size_t size() const { return labels.size(); }
};

// Seeded uniform shuffle partitioned into consecutive batches; the final
// partial batch is kept.
inline std::vector<Batch> make_batches(const Dataset& dataset, int batch_size,
                                       std::uint64_t epoch_seed) {
    if (dataset.size() == 0) throw std::invalid_argument("make_batches: empty dataset");
    if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");

    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(epoch_seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
        Batch b;
        b.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
        b.X = dataset.features(b.indices);
        b.labels.reserve(b.indices.size());
        b.groups.reserve(b.indices.size());
        for (std::size_t i : b.indices) {
            b.labels.push_back(dataset.examples[i].y);
            b.groups.push_back(dataset.examples[i].group);
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

// Grad tensors for one ParamSet, pulled out of a backward pass.
inline std::map<std::string, Tensor> collect_grads(const std::vector<Tensor>& grads,
                                                   const std::map<std::string, NodeId>& ids) {
    std::map<std::string, Tensor> out;
    for (const auto& [name, id] : ids) out.emplace(name, grads[id]);
    return out;
}

struct StepDiagnostics {
    double objective = 0.0;
    double weighted_loss = 0.0;
    double kl_term = 0.0;         // KL(weights || uniform) over the batch
    double weight_entropy = 0.0;  // -sum w log w
};

namespace detail {

struct TapedObjective {
    Tape tape;
    std::map<std::string, NodeId> model_ids;
    std::map<std::string, NodeId> adversary_ids;
    NodeId losses = 0;
    NodeId objective = 0;
    StepDiagnostics diag;
};

// One tape computing the RP-DRO objective (Eq. with batch or self norm) from
// the given parameters on the given batch.
inline TapedObjective build_rpdro_objective(const ParamSet& model, const ParamSet& adversary,
                                            const TrainConfig& cfg, const Batch& batch) {
    TapedObjective t;
    t.model_ids = stage_params(t.tape, model);
    t.adversary_ids = stage_params(t.tape, adversary);
    const NodeId x = t.tape.leaf(batch.X);
    const NodeId logits = forward_logits(t.tape, t.model_ids, cfg.model_spec, x);
    t.losses = nll_per_example(t.tape, logits, batch.labels);
    const NodeId adv_out = forward_logits(t.tape, t.adversary_ids, cfg.adversary_spec, x);
    const NodeId scores = t.tape.select_columns(adv_out, batch.labels);

    if (cfg.strategy.norm_mode == NormMode::Batch) {
        const BatchWeights w = batch_normalized_weights(t.tape, scores);
        t.objective = rpdro_batch_objective(t.tape, w, t.losses, cfg.strategy.tau);
        t.diag.weighted_loss = 0.0;
        for (std::size_t i = 0; i < w.weights.numel(); ++i)
            t.diag.weighted_loss += w.weights.values[i] * t.tape.value(t.losses).values[i];
        t.diag.kl_term = weights_kl_to_uniform(w.weights.values);
        t.diag.weight_entropy = weight_entropy(w.weights.values);
    } else {
        t.objective = selfnorm_objective(t.tape, scores, t.losses, cfg.strategy.beta,
                                         cfg.strategy.tau);
        const Tensor& s = t.tape.value(scores);
        std::vector<double> r(s.values);
        for (double& v : r) v = std::exp(std::clamp(v, -30.0, 30.0));
        const double mean_r = kahan_sum(r) / static_cast<double>(r.size());
        double weighted = 0.0, kl = 0.0;
        for (std::size_t i = 0; i < r.size(); ++i) {
            weighted += r[i] * t.tape.value(t.losses).values[i];
            kl += xlogx(r[i]);
        }
        t.diag.weighted_loss = weighted / static_cast<double>(r.size());
        t.diag.kl_term = kl / static_cast<double>(r.size());
        std::vector<double> w(r);
        const double z = mean_r * static_cast<double>(r.size());
        for (double& v : w) v /= z;
        t.diag.weight_entropy = weight_entropy(w);
    }
    t.diag.objective = t.tape.value(t.objective).item();
    return t;
}

// Objective for fixed (off-tape) weights: sum_i w_i * nll_i.
inline TapedObjective build_weighted_objective(const ParamSet& model, const TrainConfig& cfg,
                                               const Batch& batch,
                                               const std::vector<double>& weights) {
    TapedObjective t;
    t.model_ids = stage_params(t.tape, model);
    const NodeId x = t.tape.leaf(batch.X);
    const NodeId logits = forward_logits(t.tape, t.model_ids, cfg.model_spec, x);
    t.losses = nll_per_example(t.tape, logits, batch.labels);
    const NodeId w = t.tape.leaf(Tensor({weights.size()}, weights));
    t.objective = t.tape.sum(t.tape.mul(w, t.losses));
    t.diag.objective = t.tape.value(t.objective).item();
    t.diag.weighted_loss = t.diag.objective;
    t.diag.kl_term = weights_kl_to_uniform(weights);
    t.diag.weight_entropy = weight_entropy(weights);
    return t;
}

}  // namespace detail

// One simultaneous update: both gradients are taken at the entry parameters,
// then theta descends and psi ascends. Applying the two updates in either
// order gives the same result.
inline StepDiagnostics simultaneous_step(ParamSet& model, ParamSet& adversary, const Batch& batch,
                                         const TrainConfig& cfg, OptimizerState& model_state,
                                         OptimizerState& adversary_state, double model_lr,
                                         double adversary_lr) {
    if (cfg.strategy.kind != StrategyKind::Rpdro)
        throw std::invalid_argument("simultaneous_step: strategy must be rpdro");
    detail::TapedObjective t = detail::build_rpdro_objective(model, adversary, cfg, batch);
    const std::vector<Tensor> grads = t.tape.backward(t.objective);
    const auto model_grads = collect_grads(grads, t.model_ids);
    const auto adversary_grads = collect_grads(grads, t.adversary_ids);
    optimizer_step(model, model_grads, model_state, Direction::Descend, model_lr);
    optimizer_step(adversary, adversary_grads, adversary_state, Direction::Ascend, adversary_lr);
    return t.diag;
}

// k ascent steps on psi against frozen theta, then one descent step on theta
// using the final psi. The k = 1 regime is handled by simultaneous_step, not
// by calling this with k = 1.
inline StepDiagnostics adversary_extra_steps(ParamSet& model, ParamSet& adversary,
                                             const Batch& batch, int k, const TrainConfig& cfg,
                                             OptimizerState& model_state,
                                             OptimizerState& adversary_state, double model_lr,
                                             double adversary_lr) {
    if (cfg.strategy.kind != StrategyKind::Rpdro)
        throw std::invalid_argument("adversary_extra_steps: strategy must be rpdro");
    if (k < 1) throw std::invalid_argument("adversary_extra_steps: k must be >= 1");
    for (int i = 0; i < k; ++i) {
        detail::TapedObjective t = detail::build_rpdro_objective(model, adversary, cfg, batch);
        const std::vector<Tensor> grads = t.tape.backward(t.objective);
        optimizer_step(adversary, collect_grads(grads, t.adversary_ids), adversary_state,
                       Direction::Ascend, adversary_lr);
    }
    detail::TapedObjective t = detail::build_rpdro_objective(model, adversary, cfg, batch);
    const std::vector<Tensor> grads = t.tape.backward(t.objective);
    optimizer_step(model, collect_grads(grads, t.model_ids), model_state, Direction::Descend,
                   model_lr);
    return t.diag;
}

struct StepMetrics {
    std::int64_t step = 0;
    int epoch = 0;
    double train_weighted_loss = 0.0;
    double kl_term = 0.0;
    double mean_weight_entropy = 0.0;
    double lr = 0.0;
};

struct Checkpoint {
    std::int64_t step = 0;
    ParamSet model;
    ParamSet adversary;
};

struct CheckpointEval {
    std::int64_t step = 0;
    double train_loss = 0.0;  // weighted loss at the checkpointed step
    bool has_valid = false;
    GroupMetrics valid;
};

struct TrainResult {
    std::vector<Checkpoint> checkpoints;   // steps strictly increasing
    std::vector<StepMetrics> steps;
    std::vector<CheckpointEval> evals;
    GroupWeights final_group_weights;      // group-dro only
};

// Full training loop: epochs x batches steps, strategy-dispatched updates,
// snapshots every checkpoint_interval steps and at the final step.
inline TrainResult train_run(const Dataset& train, const Dataset* valid, TrainConfig cfg) {
    cfg.validate();
    train.validate();
    if (train.size() == 0) throw std::invalid_argument("train_run: empty training set");
    if (cfg.model_spec.input_dim != train.feature_dim)
        throw std::invalid_argument("train_run: model input_dim != dataset feature_dim");

    const std::size_t batches_per_epoch =
        (train.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
        static_cast<std::size_t>(cfg.batch_size);
    const std::int64_t total_steps =
        static_cast<std::int64_t>(batches_per_epoch) * cfg.epochs;
    if (cfg.schedule.kind == ScheduleKind::LinearDecay && cfg.schedule.total_steps == 0)
        cfg.schedule.total_steps = total_steps;

    ParamSet model = init_params(cfg.model_spec, cfg.seed);
    ParamSet adversary = init_params(cfg.adversary_spec, mix_seed(cfg.seed, 0xADuLL));
    OptimizerState model_state = OptimizerState::make(cfg.optimizer, model);
    OptimizerState adversary_state = OptimizerState::make(cfg.optimizer, adversary);
    GroupWeights q{std::vector<double>(static_cast<std::size_t>(train.num_groups),
                                       1.0 / static_cast<double>(train.num_groups))};

    TrainResult result;
    std::int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::vector<Batch> batches =
            make_batches(train, cfg.batch_size, mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
        for (const Batch& batch : batches) {
            const double lr = lr_at_step(cfg.schedule, cfg.lr, step);
            StepDiagnostics diag;
            try {
                switch (cfg.strategy.kind) {
                    case StrategyKind::Rpdro:
                        diag = (cfg.adversary_steps == 1)
                                   ? simultaneous_step(model, adversary, batch, cfg, model_state,
                                                       adversary_state, lr, lr)
                                   : adversary_extra_steps(model, adversary, batch,
                                                           cfg.adversary_steps, cfg, model_state,
                                                           adversary_state, lr, lr);
                        break;
                    case StrategyKind::Erm: {
                        const std::vector<double> w(batch.size(),
                                                    1.0 / static_cast<double>(batch.size()));
                        auto t = detail::build_weighted_objective(model, cfg, batch, w);
                        optimizer_step(model, collect_grads(t.tape.backward(t.objective), t.model_ids),
                                       model_state, Direction::Descend, lr);
                        diag = t.diag;
                        break;
                    }
                    case StrategyKind::NpKl:
                    case StrategyKind::NpCvar:
                    case StrategyKind::NpChi2: {
                        // closed-form weights from the current per-example losses
                        Tape probe;
                        const auto ids = stage_params(probe, model);
                        const NodeId x = probe.leaf(batch.X);
                        const NodeId losses = nll_per_example(
                            probe, forward_logits(probe, ids, cfg.model_spec, x), batch.labels);
                        const std::vector<double>& lv = probe.value(losses).values;
                        BatchWeights w;
                        if (batch.size() == 1) {
                            w = uniform_weights(1, cfg.strategy.kind);
                        } else if (cfg.strategy.kind == StrategyKind::NpKl) {
                            w = nonparam_kl_weights(lv, cfg.strategy.kappa);
                        } else if (cfg.strategy.kind == StrategyKind::NpCvar) {
                            w = nonparam_cvar_weights(lv, cfg.strategy.alpha);
                        } else {
                            w = nonparam_chi2_weights(lv, cfg.strategy.rho);
                        }
                        auto t = detail::build_weighted_objective(model, cfg, batch,
                                                                  w.weights.values);
                        optimizer_step(model, collect_grads(t.tape.backward(t.objective), t.model_ids),
                                       model_state, Direction::Descend, lr);
                        diag = t.diag;
                        break;
                    }
                    case StrategyKind::GroupDro: {
                        Tape probe;
                        const auto ids = stage_params(probe, model);
                        const NodeId x = probe.leaf(batch.X);
                        const NodeId losses = nll_per_example(
                            probe, forward_logits(probe, ids, cfg.model_spec, x), batch.labels);
                        const std::vector<double>& lv = probe.value(losses).values;
                        std::map<int, double> group_loss;
                        std::map<int, std::size_t> group_count;
                        for (std::size_t i = 0; i < batch.size(); ++i) {
                            group_loss[batch.groups[i]] += lv[i];
                            group_count[batch.groups[i]] += 1;
                        }
                        for (auto& [g, sum] : group_loss) sum /= static_cast<double>(group_count[g]);
                        q = groupdro_reweight(q, group_loss, cfg.strategy.eta_q);
                        const BatchWeights w = groupdro_example_weights(q, batch.groups);
                        auto t = detail::build_weighted_objective(model, cfg, batch,
                                                                  w.weights.values);
                        optimizer_step(model, collect_grads(t.tape.backward(t.objective), t.model_ids),
                                       model_state, Direction::Descend, lr);
                        diag = t.diag;
                        break;
                    }
                }
            } catch (const NumericsError& e) {
                throw std::runtime_error("train_run: aborted at step " + std::to_string(step + 1) +
                                         ": " + e.what());
            } catch (const std::runtime_error& e) {
                throw std::runtime_error("train_run: aborted at step " + std::to_string(step + 1) +
                                         ": " + e.what());
            }
            step += 1;
            result.steps.push_back(
                {step, epoch, diag.weighted_loss, diag.kl_term, diag.weight_entropy, lr});

            if (step % cfg.checkpoint_interval == 0 || step == total_steps) {
                result.checkpoints.push_back({step, model, adversary});
                CheckpointEval ev;
                ev.step = step;
                ev.train_loss = diag.weighted_loss;
                if (valid != nullptr && valid->size() > 0) {
                    ev.has_valid = true;
                    ev.valid = evaluate_groups(model, cfg.model_spec, *valid);
                }
                result.evals.push_back(std::move(ev));
            }
        }
    }
    result.final_group_weights = q;
    return result;
}

}  // namespace rpdro
