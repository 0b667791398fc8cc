#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include "rpdro/param_set.hpp"

namespace rpdro {

enum class OptKind { Sgd, Adam };
enum class Direction { Descend, Ascend };

struct OptimizerState {
    OptKind kind = OptKind::Sgd;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::int64_t step = 0;
    std::map<std::string, Tensor> m;  // first moments (adam)
    std::map<std::string, Tensor> v;  // second moments (adam)

    static OptimizerState make(OptKind kind, const ParamSet& params) {
        OptimizerState s;
        s.kind = kind;
        if (kind == OptKind::Adam) {
            for (const auto& [name, tensor] : params) {
                s.m.emplace(name, Tensor(tensor.shape));
                s.v.emplace(name, Tensor(tensor.shape));
            }
        }
        return s;
    }
};

// One sgd or adam update. Adam keeps raw-gradient moments; the ascent/descent
// sign is applied to the final step only.
inline void optimizer_step(ParamSet& params, const std::map<std::string, Tensor>& grads,
                           OptimizerState& state, Direction direction, double lr) {
    const double sign = (direction == Direction::Descend) ? -1.0 : 1.0;
    state.step += 1;
    for (auto& [name, p] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) throw std::invalid_argument("optimizer_step: no gradient for " + name);
        const Tensor& g = git->second;
        if (!(g.shape == p.shape)) {
            throw std::invalid_argument("optimizer_step: gradient shape " + shape_str(g.shape) +
                                        " mismatches parameter " + name + " " + shape_str(p.shape));
        }
        if (!g.all_finite()) {
            throw std::runtime_error("optimizer_step: non-finite gradient for " + name);
        }
        if (state.kind == OptKind::Sgd) {
            for (std::size_t i = 0; i < p.numel(); ++i) p.values[i] += sign * lr * g.values[i];
        } else {
            Tensor& m = state.m.at(name);
            Tensor& v = state.v.at(name);
            const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
            const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
            for (std::size_t i = 0; i < p.numel(); ++i) {
                m.values[i] = state.beta1 * m.values[i] + (1.0 - state.beta1) * g.values[i];
                v.values[i] = state.beta2 * v.values[i] + (1.0 - state.beta2) * g.values[i] * g.values[i];
                const double mhat = m.values[i] / bc1;
                const double vhat = v.values[i] / bc2;
                p.values[i] += sign * lr * mhat / (std::sqrt(vhat) + state.epsilon);
            }
        }
    }
}

enum class ScheduleKind { Constant, LinearDecay };

struct Schedule {
    ScheduleKind kind = ScheduleKind::Constant;
    std::int64_t total_steps = 0;  // LinearDecay reaches 0 here
};

inline double lr_at_step(const Schedule& schedule, double base_lr, std::int64_t step) {
    if (schedule.kind == ScheduleKind::Constant) return base_lr;
    if (step >= schedule.total_steps) return 0.0;
    return base_lr * (1.0 - static_cast<double>(step) / static_cast<double>(schedule.total_steps));
}

}  // namespace rpdro
