#pragma once

// Independent brute-force / closed-form oracles used only by tests. These
// deliberately avoid the library's solver paths.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace oracles {

inline double chi2_divergence(const std::vector<double>& q) {
    const double n = static_cast<double>(q.size());
    double d = 0.0;
    for (double x : q) d += (n * x - 1.0) * (n * x - 1.0);
    return d / (2.0 * n);
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Exhaustive simplex grid (compositions of `grid` parts) for tiny n.
// Returns the best objective sum q_i l_i subject to the chi2 ball.
inline double chi2_grid_oracle(const std::vector<double>& losses, double rho, int grid) {
    const std::size_t n = losses.size();
    double best = -std::numeric_limits<double>::infinity();
    std::vector<int> parts(n, 0);
    // odometer over compositions of `grid` into n nonnegative parts
    std::vector<double> q(n);
    std::function<void(std::size_t, int)> rec = [&](std::size_t i, int remaining) {
        if (i + 1 == n) {
            parts[i] = remaining;
            for (std::size_t k = 0; k < n; ++k) q[k] = static_cast<double>(parts[k]) / grid;
            if (chi2_divergence(q) <= rho) best = std::max(best, dot(q, losses));
            return;
        }
        for (int p = 0; p <= remaining; ++p) {
            parts[i] = p;
            rec(i + 1, remaining - p);
        }
    };
    rec(0, grid);
    return best;
}

// Exact oracle by support enumeration: on each support S the problem reduces
// to maximizing a linear function over (sphere) intersect (affine simplex
// slice), which has a closed form. Extreme points of the feasible set either
// have the ball active (covered per support) or are vertices (|S| = 1);
// uniform is added for the degenerate all-equal case.
inline double chi2_support_oracle(const std::vector<double>& losses, double rho) {
    const std::size_t n = losses.size();
    const double nd = static_cast<double>(n);
    double best = -std::numeric_limits<double>::infinity();

    std::vector<double> uniform(n, 1.0 / nd);
    if (chi2_divergence(uniform) <= rho) best = std::max(best, dot(uniform, losses));

    // u_i = n q_i - 1: sum u = 0, ||u||^2 <= 2 n rho, u >= -1
    const double ball = 2.0 * nd * rho;
    for (std::size_t mask = 1; mask < (std::size_t{1} << n); ++mask) {
        std::vector<std::size_t> support;
        for (std::size_t i = 0; i < n; ++i)
            if (mask & (std::size_t{1} << i)) support.push_back(i);
        const double s = static_cast<double>(support.size());
        const double off = nd - s;                  // coordinates pinned at u = -1
        const double c = off / s;                   // mean of u on the support
        const double r2 = ball - off - s * c * c;   // radius^2 left for the centered part
        if (r2 < 0.0) continue;

        double mean_l = 0.0;
        for (std::size_t i : support) mean_l += losses[i];
        mean_l /= s;
        double proj_norm2 = 0.0;
        for (std::size_t i : support) {
            const double d = losses[i] - mean_l;
            proj_norm2 += d * d;
        }

        std::vector<double> u(n, -1.0);
        if (proj_norm2 > 0.0) {
            const double scale = std::sqrt(r2 / proj_norm2);
            for (std::size_t i : support) u[i] = c + scale * (losses[i] - mean_l);
        } else {
            for (std::size_t i : support) u[i] = c;
        }
        bool feasible = true;
        for (std::size_t i : support)
            if (u[i] < -1.0 - 1e-12) feasible = false;
        if (!feasible) continue;

        std::vector<double> q(n);
        for (std::size_t i = 0; i < n; ++i) q[i] = (1.0 + u[i]) / nd;
        best = std::max(best, dot(q, losses));
    }
    return best;
}

// Geometric temperature grid for the KL-constrained weights; returns the
// weights at the smallest grid temperature with KL(w || uniform) <= kappa.
struct KlGridResult {
    std::vector<double> weights;
    double kl = 0.0;
    bool monotone = true;  // KL non-increasing in T along the grid
};

inline KlGridResult kl_grid_oracle(const std::vector<double>& losses, double kappa,
                                   int points = 20000) {
    const std::size_t n = losses.size();
    auto weights_at = [&](double t) {
        double mx = -std::numeric_limits<double>::infinity();
        for (double l : losses) mx = std::max(mx, l / t);
        std::vector<double> w(n);
        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            w[i] = std::exp(losses[i] / t - mx);
            z += w[i];
        }
        for (double& x : w) x /= z;
        return w;
    };
    auto kl_of = [&](const std::vector<double>& w) {
        double kl = std::log(static_cast<double>(n));
        for (double x : w)
            if (x > 0.0) kl += x * std::log(x);
        return kl;
    };

    KlGridResult res;
    double prev_kl = std::numeric_limits<double>::infinity();
    bool found = false;
    for (int i = 0; i < points; ++i) {
        const double log_t =
            std::log(1e-4) + (std::log(1e4) - std::log(1e-4)) * i / (points - 1);
        const std::vector<double> w = weights_at(std::exp(log_t));
        const double kl = kl_of(w);
        if (kl > prev_kl + 1e-9) res.monotone = false;
        prev_kl = kl;
        if (!found && kl <= kappa) {
            res.weights = w;
            res.kl = kl;
            found = true;
        }
    }
    if (!found) {
        res.weights.assign(n, 1.0 / static_cast<double>(n));
        res.kl = 0.0;
    }
    return res;
}

}  // namespace oracles
