#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "rpdro/param_set.hpp"
#include "rpdro/tape.hpp"

namespace rpdro {

// A function under test: stages the given parameters as leaves on the tape,
// builds a scalar objective, and reports the leaf id of every parameter.
using TapeBuilder =
    std::function<NodeId(Tape&, const ParamSet&, std::map<std::string, NodeId>& leaf_ids)>;

// Max over all coordinates of the relative gap between reverse-mode gradients
// and central finite differences with step h.
inline double finite_diff_check(const TapeBuilder& function, const ParamSet& point, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: h must be positive");

    Tape tape;
    std::map<std::string, NodeId> ids;
    const NodeId out = function(tape, point, ids);
    const std::vector<Tensor> grads = tape.backward(out);

    auto eval_at = [&](const ParamSet& p) {
        Tape t;
        std::map<std::string, NodeId> unused;
        return t.value(function(t, p, unused)).item();
    };

    double worst = 0.0;
    for (const auto& [name, tensor] : point) {
        const Tensor& analytic = grads.at(ids.at(name));
        for (std::size_t i = 0; i < tensor.numel(); ++i) {
            ParamSet plus = point;
            ParamSet minus = point;
            Tensor tp = tensor, tm = tensor;
            tp.values[i] += h;
            tm.values[i] -= h;
            plus.set(name, tp);
            minus.set(name, tm);
            const double central = (eval_at(plus) - eval_at(minus)) / (2.0 * h);
            const double a = analytic.values[i];
            const double rel =
                std::abs(a - central) / std::max(1e-8, std::abs(a) + std::abs(central));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace rpdro
