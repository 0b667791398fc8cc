#pragma once

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "rpdro/param_set.hpp"
#include "rpdro/tape.hpp"

namespace rpdro {

enum class Arch { Linear, Mlp };
enum class Activation { Relu, Tanh };

// Classifier or adversary-scorer architecture. The adversary scores a pair
// (x, y) as the y-th output of a classifier-shaped network over x.
struct ModelSpec {
    Arch architecture = Arch::Linear;
    int input_dim = 1;
    std::vector<int> hidden_sizes;  // empty for linear
    Activation activation = Activation::Tanh;
    int output_dim = 2;

    void validate() const {
        if (input_dim < 1) throw std::invalid_argument("ModelSpec: input_dim must be >= 1");
        if (output_dim < 2) throw std::invalid_argument("ModelSpec: output_dim must be >= 2");
        if (architecture == Arch::Linear && !hidden_sizes.empty())
            throw std::invalid_argument("ModelSpec: linear model takes no hidden sizes");
        if (architecture == Arch::Mlp && hidden_sizes.empty())
            throw std::invalid_argument("ModelSpec: mlp needs at least one hidden layer");
        for (int h : hidden_sizes)
            if (h < 1) throw std::invalid_argument("ModelSpec: hidden sizes must be >= 1");
    }

    // Layer widths including input and output.
    std::vector<int> layer_dims() const {
        std::vector<int> dims{input_dim};
        dims.insert(dims.end(), hidden_sizes.begin(), hidden_sizes.end());
        dims.push_back(output_dim);
        return dims;
    }
};

// Glorot-uniform weights, zero biases; deterministic in the seed.
inline ParamSet init_params(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    ParamSet params;
    const std::vector<int> dims = spec.layer_dims();
    for (std::size_t layer = 0; layer + 1 < dims.size(); ++layer) {
        const std::size_t fan_in = static_cast<std::size_t>(dims[layer]);
        const std::size_t fan_out = static_cast<std::size_t>(dims[layer + 1]);
        const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-a, a);
        Tensor w({fan_in, fan_out});
        for (double& v : w.values) v = dist(rng);
        params.add("w" + std::to_string(layer), std::move(w));
        params.add("b" + std::to_string(layer), Tensor({fan_out}));
    }
    return params;
}

// Registers every parameter as a tape leaf; returns name -> leaf id.
inline std::map<std::string, NodeId> stage_params(Tape& tape, const ParamSet& params) {
    std::map<std::string, NodeId> ids;
    for (const auto& [name, tensor] : params) ids.emplace(name, tape.leaf(tensor));
    return ids;
}

// Per-example class scores, differentiable w.r.t. the staged parameters.
inline NodeId forward_logits(Tape& tape, const std::map<std::string, NodeId>& param_ids,
                             const ModelSpec& spec, NodeId x) {
    const Tensor& xv = tape.value(x);
    if (xv.rank() != 2 || xv.cols() != static_cast<std::size_t>(spec.input_dim)) {
        throw ShapeError("forward_logits: input " + shape_str(xv.shape) + " does not match input_dim " +
                         std::to_string(spec.input_dim));
    }
    const std::size_t layers = spec.layer_dims().size() - 1;
    NodeId h = x;
    for (std::size_t layer = 0; layer < layers; ++layer) {
        const NodeId w = param_ids.at("w" + std::to_string(layer));
        const NodeId b = param_ids.at("b" + std::to_string(layer));
        h = tape.add(tape.matmul(h, w), b);
        if (layer + 1 < layers) {
            h = (spec.activation == Activation::Relu) ? tape.relu(h) : tape.tanh(h);
        }
    }
    return h;
}

inline void check_labels(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2 || labels.size() != logits.rows()) {
        throw std::invalid_argument("labels: need one label per logits row");
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= logits.cols()) {
            throw std::invalid_argument("label " + std::to_string(y) + " out of range for " +
                                        std::to_string(logits.cols()) + " classes");
        }
    }
}

// Softmax cross-entropy, fused as logsumexp(logits) - logits[y] for stability.
inline NodeId nll_per_example(Tape& tape, NodeId logits, const std::vector<int>& labels) {
    check_labels(tape.value(logits), labels);
    const NodeId lse = tape.logsumexp(logits, 1);
    const NodeId picked = tape.select_columns(logits, labels);
    return tape.sub(lse, picked);
}

// 1 on misclassification, 0 otherwise; argmax ties go to the lowest class.
inline Tensor zero_one_per_example(const Tensor& logits, const std::vector<int>& labels) {
    check_labels(logits, labels);
    Tensor out({logits.rows()});
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c)
            if (logits.at(i, c) > logits.at(i, best)) best = c;
        out.values[i] = (best == static_cast<std::size_t>(labels[i])) ? 0.0 : 1.0;
    }
    return out;
}

inline std::vector<int> argmax_rows(const Tensor& logits) {
    std::vector<int> preds(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c)
            if (logits.at(i, c) > logits.at(i, best)) best = c;
        preds[i] = static_cast<int>(best);
    }
    return preds;
}

}  // namespace rpdro
