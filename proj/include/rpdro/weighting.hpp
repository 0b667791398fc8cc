#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "rpdro/tape.hpp"

namespace rpdro {

enum class StrategyKind { Erm, Rpdro, NpKl, NpCvar, NpChi2, GroupDro };
enum class NormMode { Batch, Self };

inline const char* strategy_name(StrategyKind k) {
    switch (k) {
        case StrategyKind::Erm: return "erm";
        case StrategyKind::Rpdro: return "rpdro";
        case StrategyKind::NpKl: return "np-kl";
        case StrategyKind::NpCvar: return "np-cvar";
        case StrategyKind::NpChi2: return "np-chi2";
        case StrategyKind::GroupDro: return "group-dro";
    }
    return "?";
}

// Adversary / reweighting rule. Only the active kind's fields are meaningful.
struct StrategyConfig {
    StrategyKind kind = StrategyKind::Erm;
    NormMode norm_mode = NormMode::Batch;  // rpdro
    double tau = 0.1;                      // rpdro KL-penalty weight
    double beta = 1.0;                     // rpdro/self normalization weight
    double kappa = 1.0;                    // np-kl ball radius
    double alpha = 0.5;                    // np-cvar level
    double rho = 1.0;                      // np-chi2 ball radius
    double eta_q = 0.1;                    // group-dro step size

    void validate() const {
        switch (kind) {
            case StrategyKind::Erm: return;
            case StrategyKind::Rpdro:
                if (tau < 0.0) throw std::invalid_argument("rpdro: tau must be >= 0");
                if (norm_mode == NormMode::Self && beta < 0.0)
                    throw std::invalid_argument("rpdro/self: beta must be >= 0");
                return;
            case StrategyKind::NpKl:
                if (!(kappa > 0.0)) throw std::invalid_argument("np-kl: kappa must be > 0");
                return;
            case StrategyKind::NpCvar:
                if (!(alpha > 0.0 && alpha <= 1.0))
                    throw std::invalid_argument("np-cvar: alpha must be in (0,1]");
                return;
            case StrategyKind::NpChi2:
                if (!(rho > 0.0)) throw std::invalid_argument("np-chi2: rho must be > 0");
                return;
            case StrategyKind::GroupDro:
                if (!(eta_q > 0.0)) throw std::invalid_argument("group-dro: eta_q must be > 0");
                return;
        }
    }
};

// Weights over one batch; convention: nonnegative, summing to 1.
struct BatchWeights {
    Tensor weights;
    StrategyKind provenance = StrategyKind::Erm;
    NodeId node = static_cast<NodeId>(-1);         // set when the weights live on a tape
    NodeId scores_node = static_cast<NodeId>(-1);  // adversary scores behind them, if any

    bool on_tape() const { return node != static_cast<NodeId>(-1); }
};

struct GroupWeights {
    std::vector<double> q;  // simplex over known groups
};

inline BatchWeights uniform_weights(std::size_t n, StrategyKind provenance) {
    BatchWeights w;
    w.weights = Tensor({n}, 1.0 / static_cast<double>(n));
    w.provenance = provenance;
    return w;
}

// ---------------------------------------------------------------------------
// RP-DRO objectives (on tape)
// ---------------------------------------------------------------------------

// Mini-batch softmax of adversary scores: w_i = e^{s_i} / sum_j e^{s_j}.
// Stable via max subtraction; n = 1 degenerates to weight 1 (ERM).
inline BatchWeights batch_normalized_weights(Tape& tape, NodeId scores) {
    const Tensor& s = tape.value(scores);
    if (s.rank() != 1 || s.numel() < 1)
        throw ShapeError("batch_normalized_weights: scores must be a non-empty vector, got " +
                         shape_str(s.shape));
    BatchWeights w;
    w.node = tape.softmax(scores, 0);
    w.scores_node = scores;
    w.weights = tape.value(w.node);
    w.provenance = StrategyKind::Rpdro;
    return w;
}

// L = sum_i w_i l_i - tau * sum_i w_i log w_i. The adversary ascends, the
// model descends; log w is computed as s - logsumexp(s) so weights that
// underflow to 0 contribute 0 (0*log0 convention).
inline NodeId rpdro_batch_objective(Tape& tape, const BatchWeights& weights, NodeId losses,
                                    double tau) {
    if (!weights.on_tape())
        throw std::invalid_argument("rpdro_batch_objective: weights must come from "
                                    "batch_normalized_weights on the same tape");
    NodeId obj = tape.sum(tape.mul(weights.node, losses));
    if (tau != 0.0) {
        const NodeId lse = tape.logsumexp(weights.scores_node, 0);
        const NodeId log_w = tape.sub(weights.scores_node, lse);
        const NodeId kl = tape.sum(tape.mul(weights.node, log_w));
        obj = tape.sub(obj, tape.scalar_mul(kl, tau));
    }
    return obj;
}

// Self-normalized objective with unnormalized ratios r = e^{s}:
//   L = mean(r l) - beta * (log mean r)^2 - tau * mean(r log r).
// Scores are clamped to [-30, 30] before exp.
inline NodeId selfnorm_objective(Tape& tape, NodeId scores, NodeId losses, double beta,
                                 double tau) {
    const Tensor& s = tape.value(scores);
    if (s.rank() != 1 || s.numel() < 1)
        throw ShapeError("selfnorm_objective: scores must be a non-empty vector, got " +
                         shape_str(s.shape));
    if (beta < 0.0 || tau < 0.0)
        throw std::invalid_argument("selfnorm_objective: beta and tau must be >= 0");
    const NodeId clipped = tape.clamp(scores, -30.0, 30.0);
    const NodeId ratios = tape.exp(clipped);
    NodeId obj = tape.mean(tape.mul(ratios, losses));
    if (beta != 0.0) {
        const NodeId log_norm = tape.log(tape.mean(ratios));
        obj = tape.sub(obj, tape.scalar_mul(tape.square(log_norm), beta));
    }
    if (tau != 0.0) {
        // r log r = r * clipped score, exactly
        const NodeId kl = tape.mean(tape.mul(ratios, clipped));
        obj = tape.sub(obj, tape.scalar_mul(kl, tau));
    }
    return obj;
}

// ---------------------------------------------------------------------------
// Nonparametric closed forms (value space)
// ---------------------------------------------------------------------------

namespace detail {

// softmax of losses/T with KL(w || uniform) = sum w log(n w)
inline std::vector<double> softmax_scaled(const std::vector<double>& losses, double inv_t) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double l : losses) mx = std::max(mx, l * inv_t);
    std::vector<double> w(losses.size());
    double z = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        w[i] = std::exp(losses[i] * inv_t - mx);
        z += w[i];
    }
    for (double& x : w) x /= z;
    return w;
}

inline double kl_to_uniform(const std::vector<double>& w) {
    const double n = static_cast<double>(w.size());
    double kl = 0.0;
    for (double x : w) kl += xlogx(x);
    return kl + std::log(n);
}

inline bool all_equal(const std::vector<double>& xs) {
    for (double x : xs)
        if (x != xs.front()) return false;
    return true;
}

// chi-square divergence to uniform with the 1/2 convention:
// D(q) = (1/(2n)) sum (n q_i - 1)^2
inline double chi2_to_uniform(const std::vector<double>& q) {
    const double n = static_cast<double>(q.size());
    double d = 0.0;
    for (double x : q) {
        const double t = n * x - 1.0;
        d += t * t;
    }
    return d / (2.0 * n);
}

}  // namespace detail

// KL-constrained batch solution: w_i(T) = softmax(l_i / T), at the smallest
// temperature keeping KL(w || uniform) <= kappa. Bisection runs on log T over
// [log 1e-4, log 1e4] to 1e-6 absolute tolerance in KL and returns the
// feasible endpoint, so the result sits in [kappa - tol, kappa] whenever the
// vertex solution is infeasible.
inline BatchWeights nonparam_kl_weights(const std::vector<double>& losses, double kappa) {
    const std::size_t n = losses.size();
    if (n < 2) throw std::invalid_argument("nonparam_kl_weights: need n >= 2");
    if (!(kappa > 0.0)) throw std::invalid_argument("nonparam_kl_weights: kappa must be > 0");
    if (detail::all_equal(losses)) return uniform_weights(n, StrategyKind::NpKl);

    const double log_t_min = std::log(1e-4);
    const double log_t_max = std::log(1e4);
    auto weights_at = [&](double log_t) {
        return detail::softmax_scaled(losses, std::exp(-log_t));
    };

    std::vector<double> w_lo = weights_at(log_t_min);
    if (detail::kl_to_uniform(w_lo) <= kappa) {
        BatchWeights out;
        out.weights = Tensor({n}, std::move(w_lo));
        out.provenance = StrategyKind::NpKl;
        return out;
    }
    std::vector<double> w_hi = weights_at(log_t_max);
    if (detail::kl_to_uniform(w_hi) > kappa) {
        return uniform_weights(n, StrategyKind::NpKl);  // unreachable for kappa > tolerance
    }

    double lo = log_t_min, hi = log_t_max;  // KL(lo) > kappa >= KL(hi)
    for (int iter = 0; iter < 200; ++iter) {
        const double mid = 0.5 * (lo + hi);
        std::vector<double> w = weights_at(mid);
        const double kl = detail::kl_to_uniform(w);
        if (kl <= kappa) {
            hi = mid;
            w_hi = std::move(w);
            if (kappa - kl <= 1e-6) break;
        } else {
            lo = mid;
        }
    }
    BatchWeights out;
    out.weights = Tensor({n}, std::move(w_hi));
    out.provenance = StrategyKind::NpKl;
    return out;
}

// Exact CVaR batch weights: capacity c = alpha*n; the top floor(c) losses get
// 1/c, the boundary example gets the fractional remainder, the rest 0. Ties
// sort by lower original index.
inline BatchWeights nonparam_cvar_weights(const std::vector<double>& losses, double alpha) {
    const std::size_t n = losses.size();
    if (n < 1) throw std::invalid_argument("nonparam_cvar_weights: need n >= 1");
    if (!(alpha > 0.0 && alpha <= 1.0))
        throw std::invalid_argument("nonparam_cvar_weights: alpha must be in (0,1]");

    double c = alpha * static_cast<double>(n);
    if (std::abs(c - std::round(c)) < 1e-9 * static_cast<double>(n)) c = std::round(c);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return losses[a] > losses[b]; });

    BatchWeights out;
    out.weights = Tensor({n});
    out.provenance = StrategyKind::NpCvar;
    const std::size_t full = static_cast<std::size_t>(std::floor(c));
    for (std::size_t i = 0; i < full && i < n; ++i) out.weights.values[order[i]] = 1.0 / c;
    if (full < n) {
        const double frac = c - std::floor(c);
        if (frac > 0.0) out.weights.values[order[full]] = frac / c;
    }
    return out;
}

// chi-square-constrained batch solution of max_q sum q_i l_i over the simplex
// with D(q || uniform) <= rho. Solution family q_i(eta) = max(l_i - eta, 0)/Z;
// eta is bisected so the divergence meets min(rho, divergence of the vertex
// solution) to 1e-6. The lower bracket starts at min(l) - 1 and doubles its
// offset until feasible, since small rho can need eta far below min(l).
inline BatchWeights nonparam_chi2_weights(const std::vector<double>& losses, double rho) {
    const std::size_t n = losses.size();
    if (n < 2) throw std::invalid_argument("nonparam_chi2_weights: need n >= 2");
    if (!(rho > 0.0)) throw std::invalid_argument("nonparam_chi2_weights: rho must be > 0");
    if (detail::all_equal(losses)) return uniform_weights(n, StrategyKind::NpChi2);

    const double max_l = *std::max_element(losses.begin(), losses.end());
    const double min_l = *std::min_element(losses.begin(), losses.end());

    // vertex solution: uniform over the argmax set
    std::vector<double> vertex(n, 0.0);
    std::size_t argmax_count = 0;
    for (double l : losses) argmax_count += (l == max_l) ? 1 : 0;
    for (std::size_t i = 0; i < n; ++i)
        if (losses[i] == max_l) vertex[i] = 1.0 / static_cast<double>(argmax_count);
    if (detail::chi2_to_uniform(vertex) <= rho) {
        BatchWeights out;
        out.weights = Tensor({n}, std::move(vertex));
        out.provenance = StrategyKind::NpChi2;
        return out;
    }

    auto weights_at = [&](double eta) {
        std::vector<double> q(n);
        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            q[i] = std::max(losses[i] - eta, 0.0);
            z += q[i];
        }
        for (double& x : q) x /= z;
        return q;
    };

    double offset = 1.0;
    double lo = min_l - offset;
    while (detail::chi2_to_uniform(weights_at(lo)) > rho) {
        offset *= 2.0;
        lo = min_l - offset;
        if (offset > 1e12) return uniform_weights(n, StrategyKind::NpChi2);
    }
    double hi = max_l;  // divergence -> vertex level (> rho) as eta -> max_l

    std::vector<double> best = weights_at(lo);
    for (int iter = 0; iter < 200; ++iter) {
        const double mid = 0.5 * (lo + hi);
        std::vector<double> q = weights_at(mid);
        const double d = detail::chi2_to_uniform(q);
        if (d <= rho) {
            lo = mid;
            best = std::move(q);
            if (rho - d <= 1e-6) break;
        } else {
            hi = mid;
        }
    }
    BatchWeights out;
    out.weights = Tensor({n}, std::move(best));
    out.provenance = StrategyKind::NpChi2;
    return out;
}

// ---------------------------------------------------------------------------
// Group DRO
// ---------------------------------------------------------------------------

// Exponentiated-gradient ascent on the group simplex; groups without a loss
// entry (absent from the batch) keep their multiplier at 1.
inline GroupWeights groupdro_reweight(const GroupWeights& q,
                                      const std::map<int, double>& group_losses, double eta_q) {
    if (!(eta_q >= 0.0)) throw std::invalid_argument("groupdro_reweight: eta_q must be >= 0");
    GroupWeights out = q;
    for (const auto& [g, loss] : group_losses) {
        if (g < 0 || static_cast<std::size_t>(g) >= q.q.size())
            throw std::invalid_argument("groupdro_reweight: group id " + std::to_string(g) +
                                        " outside the known groups");
        if (!std::isfinite(loss))
            throw std::invalid_argument("groupdro_reweight: non-finite loss for group " +
                                        std::to_string(g));
        out.q[static_cast<std::size_t>(g)] *= std::exp(eta_q * loss);
    }
    double z = kahan_sum(out.q);
    for (double& x : out.q) x /= z;
    return out;
}

// Example weights w_i = q_g / (n p-hat_g), renormalized over the batch: the
// mass of groups absent from this batch is renormalized away.
inline BatchWeights groupdro_example_weights(const GroupWeights& q,
                                             const std::vector<int>& group_ids) {
    const std::size_t n = group_ids.size();
    if (n == 0) throw std::invalid_argument("groupdro_example_weights: empty batch");
    std::map<int, std::size_t> counts;
    for (int g : group_ids) counts[g] += 1;
    BatchWeights out;
    out.weights = Tensor({n});
    out.provenance = StrategyKind::GroupDro;
    for (std::size_t i = 0; i < n; ++i)
        out.weights.values[i] = q.q.at(static_cast<std::size_t>(group_ids[i])) /
                                static_cast<double>(counts.at(group_ids[i]));
    const double z = kahan_sum(out.weights.values);
    for (double& x : out.weights.values) x /= z;
    return out;
}

// ---------------------------------------------------------------------------
// Validation KL estimate
// ---------------------------------------------------------------------------

// (1/N) sum r log r over mean-1 ratios; nonnegative by Jensen.
inline double kl_estimate_mean1(const std::vector<double>& rhat) {
    if (rhat.empty()) throw std::invalid_argument("kl_estimate_mean1: empty input");
    for (double r : rhat)
        if (r < 0.0) throw std::invalid_argument("kl_estimate_mean1: negative ratio");
    const double mean = kahan_sum(rhat) / static_cast<double>(rhat.size());
    if (std::abs(mean - 1.0) > 1e-9)
        throw std::invalid_argument("kl_estimate_mean1: ratios must average to 1, got mean " +
                                    std::to_string(mean));
    double acc = 0.0;
    for (double r : rhat) acc += xlogx(r);
    return acc / static_cast<double>(rhat.size());
}

// Diagnostics over sum-1 batch weights.
inline double weight_entropy(const std::vector<double>& w) {
    double h = 0.0;
    for (double x : w) h -= xlogx(x);
    return h;
}

inline double weights_kl_to_uniform(const std::vector<double>& w) {
    return detail::kl_to_uniform(w);
}

}  // namespace rpdro
