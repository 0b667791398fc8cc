#pragma once

#include <map>
#include <stdexcept>
#include <vector>

#include "rpdro/data.hpp"
#include "rpdro/model.hpp"

namespace rpdro {

// Group-wise accuracy summary. robust_accuracy is the min over groups that
// actually have examples; empty groups are excluded.
struct GroupMetrics {
    std::map<int, double> per_group_accuracy;
    std::map<int, std::size_t> group_counts;
    double robust_accuracy = 0.0;
    double average_accuracy = 0.0;
};

inline std::vector<int> predict(const ParamSet& params, const ModelSpec& spec,
                                const Dataset& dataset) {
    Tape tape;
    const auto ids = stage_params(tape, params);
    const NodeId x = tape.leaf(dataset.all_features());
    const NodeId logits = forward_logits(tape, ids, spec, x);
    return argmax_rows(tape.value(logits));
}

inline GroupMetrics evaluate_groups(const ParamSet& params, const ModelSpec& spec,
                                    const Dataset& dataset) {
    if (dataset.size() == 0) throw std::invalid_argument("evaluate_groups: empty dataset");
    const std::vector<int> preds = predict(params, spec, dataset);

    GroupMetrics m;
    std::map<int, std::size_t> correct;
    std::size_t total_correct = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const Example& e = dataset.examples[i];
        m.group_counts[e.group] += 1;
        if (preds[i] == e.y) {
            correct[e.group] += 1;
            total_correct += 1;
        }
    }
    m.average_accuracy = static_cast<double>(total_correct) / static_cast<double>(dataset.size());
    m.robust_accuracy = 1.0;
    for (const auto& [g, count] : m.group_counts) {
        const double acc = static_cast<double>(correct[g]) / static_cast<double>(count);
        m.per_group_accuracy[g] = acc;
        if (acc < m.robust_accuracy) m.robust_accuracy = acc;
    }
    return m;
}

}  // namespace rpdro
