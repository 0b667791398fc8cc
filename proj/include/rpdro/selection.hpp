#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "rpdro/data.hpp"
#include "rpdro/evaluation.hpp"
#include "rpdro/model.hpp"
#include "rpdro/weighting.hpp"

namespace rpdro {

// Checkpointed models and adversaries competing on one validation set.
struct CandidatePool {
    std::vector<ParamSet> models;
    std::vector<ParamSet> adversaries;
    std::vector<std::int64_t> steps;  // checkpoint step per entry, for reporting/ties
    ModelSpec model_spec;
    ModelSpec adversary_spec;
};

// Mean-1 ratios over the full set: r_i = N * e^{s_i} / sum_j e^{s_j} with
// s_i = f_psi(x_i, y_i), computed with max subtraction.
inline std::vector<double> full_set_weights(const ParamSet& adversary, const ModelSpec& spec,
                                            const Dataset& dataset) {
    if (dataset.size() == 0) throw std::invalid_argument("full_set_weights: empty dataset");
    Tape tape;
    const auto ids = stage_params(tape, adversary);
    const NodeId x = tape.leaf(dataset.all_features());
    const NodeId out = forward_logits(tape, ids, spec, x);
    const NodeId scores = tape.select_columns(out, dataset.labels());
    const Tensor& s = tape.value(scores);

    const double n = static_cast<double>(s.numel());
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : s.values) mx = std::max(mx, v);
    std::vector<double> ratios(s.values.size());
    for (std::size_t i = 0; i < ratios.size(); ++i) ratios[i] = std::exp(s.values[i] - mx);
    const double z = kahan_sum(ratios);
    for (double& r : ratios) r *= n / z;
    return ratios;
}

struct AdversaryCandidate {
    std::size_t source_index = 0;  // index into the pool's adversaries
    bool is_uniform = false;       // the always-appended uniform candidate
    std::vector<double> ratios;    // mean-1 over the validation set
    double kl = 0.0;
};

constexpr double kDefaultKlThreshold = 2.302585092994046;  // log 10

// Keeps adversaries whose estimated KL stays under the threshold and always
// appends the uniform adversary, so the candidate set is never empty.
inline std::vector<AdversaryCandidate> kl_filter(const std::vector<std::vector<double>>& ratios,
                                                 std::size_t valid_size, double threshold) {
    if (!(threshold > 0.0)) throw std::invalid_argument("kl_filter: threshold must be > 0");
    std::vector<AdversaryCandidate> kept;
    for (std::size_t j = 0; j < ratios.size(); ++j) {
        AdversaryCandidate c;
        c.source_index = j;
        c.ratios = ratios[j];
        c.kl = kl_estimate_mean1(c.ratios);
        if (c.kl <= threshold) kept.push_back(std::move(c));
    }
    AdversaryCandidate uniform;
    uniform.is_uniform = true;
    uniform.ratios.assign(valid_size, 1.0);
    uniform.kl = 0.0;
    kept.push_back(std::move(uniform));
    return kept;
}

enum class SelectionLoss { ZeroOne, Nll };

struct MinmaxResult {
    std::size_t model_index = 0;
    std::vector<std::vector<double>> matrix;  // matrix[i][j] weighted valid loss
    std::vector<double> row_max;
};

namespace detail {

inline std::vector<double> valid_losses(const ParamSet& model, const ModelSpec& spec,
                                        const Dataset& valid, SelectionLoss loss_kind) {
    Tape tape;
    const auto ids = stage_params(tape, model);
    const NodeId x = tape.leaf(valid.all_features());
    const NodeId logits = forward_logits(tape, ids, spec, x);
    if (loss_kind == SelectionLoss::ZeroOne)
        return zero_one_per_example(tape.value(logits), valid.labels()).values;
    return tape.value(nll_per_example(tape, logits, valid.labels())).values;
}

}  // namespace detail

// Exact min-max over the candidate matrix M[i][j] = (1/N) sum r_j * loss_i.
// Ties go to the earliest checkpoint.
inline MinmaxResult minmax_select(const CandidatePool& pool,
                                  const std::vector<AdversaryCandidate>& candidates,
                                  const Dataset& valid,
                                  SelectionLoss loss_kind = SelectionLoss::ZeroOne) {
    if (pool.models.empty()) throw std::invalid_argument("minmax_select: empty model list");
    if (candidates.empty()) throw std::invalid_argument("minmax_select: empty candidate list");
    const double n = static_cast<double>(valid.size());

    MinmaxResult result;
    result.matrix.resize(pool.models.size());
    result.row_max.resize(pool.models.size());
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pool.models.size(); ++i) {
        const std::vector<double> losses =
            detail::valid_losses(pool.models[i], pool.model_spec, valid, loss_kind);
        double row_max = -std::numeric_limits<double>::infinity();
        result.matrix[i].resize(candidates.size());
        for (std::size_t j = 0; j < candidates.size(); ++j) {
            double acc = 0.0;
            for (std::size_t v = 0; v < losses.size(); ++v)
                acc += candidates[j].ratios[v] * losses[v];
            result.matrix[i][j] = acc / n;
            row_max = std::max(row_max, result.matrix[i][j]);
        }
        result.row_max[i] = row_max;
        if (row_max < best) {
            best = row_max;
            result.model_index = i;
        }
    }
    return result;
}

// Highest worst-group validation accuracy; needs group ids.
inline std::size_t oracle_select(const std::vector<ParamSet>& models, const ModelSpec& spec,
                                 const Dataset& valid) {
    if (models.empty()) throw std::invalid_argument("oracle_select: empty model list");
    std::size_t best = 0;
    double best_robust = -1.0;
    for (std::size_t i = 0; i < models.size(); ++i) {
        const double robust = evaluate_groups(models[i], spec, valid).robust_accuracy;
        if (robust > best_robust) {
            best_robust = robust;
            best = i;
        }
    }
    return best;
}

// Highest average validation accuracy.
inline std::size_t average_select(const std::vector<ParamSet>& models, const ModelSpec& spec,
                                  const Dataset& valid) {
    if (models.empty()) throw std::invalid_argument("average_select: empty model list");
    std::size_t best = 0;
    double best_avg = -1.0;
    for (std::size_t i = 0; i < models.size(); ++i) {
        const double avg = evaluate_groups(models[i], spec, valid).average_accuracy;
        if (avg > best_avg) {
            best_avg = avg;
            best = i;
        }
    }
    return best;
}

}  // namespace rpdro
