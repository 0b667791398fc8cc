#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rpdro/tensor.hpp"

namespace rpdro {

struct Example {
    std::vector<double> x;
    int y = 0;
    int group = 0;
    int domain = 0;
};

struct DatasetMeta {
    std::string generator;      // "toy2domain", "spurious", ...
    nlohmann::json params;      // generator parameters, warnings
    std::uint64_t seed = 0;
};

// Immutable after construction; the empirical distribution p is uniform over
// the examples.
struct Dataset {
    std::vector<Example> examples;
    int feature_dim = 0;
    int num_classes = 2;
    int num_groups = 1;
    DatasetMeta metadata;

    std::size_t size() const { return examples.size(); }

    void validate() const {
        for (std::size_t i = 0; i < examples.size(); ++i) {
            const Example& e = examples[i];
            if (static_cast<int>(e.x.size()) != feature_dim)
                throw std::invalid_argument("Dataset: example " + std::to_string(i) +
                                            " has feature_dim " + std::to_string(e.x.size()) +
                                            ", expected " + std::to_string(feature_dim));
            if (e.y < 0 || e.y >= num_classes)
                throw std::invalid_argument("Dataset: label out of range at example " +
                                            std::to_string(i));
            if (e.group < 0 || e.group >= num_groups)
                throw std::invalid_argument("Dataset: group out of range at example " +
                                            std::to_string(i));
        }
    }

    Tensor features(const std::vector<std::size_t>& idx) const {
        Tensor x({idx.size(), static_cast<std::size_t>(feature_dim)});
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (int c = 0; c < feature_dim; ++c)
                x.at(r, static_cast<std::size_t>(c)) = examples[idx[r]].x[static_cast<std::size_t>(c)];
        return x;
    }

    Tensor all_features() const {
        std::vector<std::size_t> idx(size());
        for (std::size_t i = 0; i < size(); ++i) idx[i] = i;
        return features(idx);
    }

    std::vector<int> labels() const {
        std::vector<int> y(size());
        for (std::size_t i = 0; i < size(); ++i) y[i] = examples[i].y;
        return y;
    }

    std::vector<int> groups() const {
        std::vector<int> g(size());
        for (std::size_t i = 0; i < size(); ++i) g[i] = examples[i].group;
        return g;
    }
};

// Binary toy task with two domains whose separating directions conflict:
// majority means at +/-(1, 0), minority means at +/-(-0.5, 1), so a model
// that fits only the majority misclassifies the minority. Group id = domain
// (0 = majority, 1 = minority).
inline Dataset gen_two_domain(std::size_t n, double minority_frac = 0.05, double sigma = 0.3,
                              std::uint64_t seed = 0) {
    if (!(minority_frac > 0.0 && minority_frac < 0.5))
        throw std::invalid_argument("gen_two_domain: minority_frac must be in (0, 0.5)");
    if (!(sigma > 0.0)) throw std::invalid_argument("gen_two_domain: sigma must be > 0");
    if (n == 0) throw std::invalid_argument("gen_two_domain: n must be >= 1");

    std::mt19937_64 rng(seed);
    std::bernoulli_distribution label_coin(0.5);
    std::bernoulli_distribution minority_coin(minority_frac);
    std::normal_distribution<double> noise(0.0, sigma);

    Dataset d;
    d.feature_dim = 2;
    d.num_classes = 2;
    d.num_groups = 2;
    d.metadata.generator = "toy2domain";
    d.metadata.seed = seed;
    d.metadata.params = {{"n", n}, {"minority_frac", minority_frac}, {"sigma", sigma}};
    const bool small_sample = static_cast<double>(n) < 20.0 / minority_frac;
    if (small_sample) d.metadata.params["small_sample_warning"] = true;

    d.examples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Example e;
        e.y = label_coin(rng) ? 1 : 0;
        const double s = e.y == 1 ? 1.0 : -1.0;
        const bool minority = minority_coin(rng);
        e.domain = minority ? 1 : 0;
        e.group = e.domain;
        if (minority) {
            e.x = {s * -0.5 + noise(rng), s * 1.0 + noise(rng)};
        } else {
            e.x = {s * 1.0 + noise(rng), s * 0.0 + noise(rng)};
        }
        d.examples.push_back(std::move(e));
    }
    return d;
}

// Spurious-shortcut task: a weak true signal along a fixed unit direction in
// the first d-1 coordinates, plus a high-amplitude distractor coordinate that
// agrees with the label at bias_rate. Groups are 2y + b (4 groups); b != y
// groups are the minority the shortcut sacrifices.
inline Dataset gen_spurious(std::size_t n, double bias_rate = 0.95, int d = 20,
                            double signal = 0.5, double distractor_amp = 2.0,
                            std::uint64_t seed = 0) {
    if (!(bias_rate >= 0.5 && bias_rate <= 1.0))
        throw std::invalid_argument("gen_spurious: bias_rate must be in [0.5, 1]");
    if (d < 2) throw std::invalid_argument("gen_spurious: d must be >= 2");
    if (n == 0) throw std::invalid_argument("gen_spurious: n must be >= 1");

    std::mt19937_64 rng(seed);
    // fixed seeded unit direction for the true signal
    std::vector<double> v(static_cast<std::size_t>(d - 1));
    {
        std::normal_distribution<double> g(0.0, 1.0);
        double norm2 = 0.0;
        for (double& c : v) {
            c = g(rng);
            norm2 += c * c;
        }
        const double inv = 1.0 / std::sqrt(norm2);
        for (double& c : v) c *= inv;
    }

    std::bernoulli_distribution label_coin(0.5);
    std::bernoulli_distribution agree_coin(bias_rate);
    std::normal_distribution<double> unit_noise(0.0, 1.0);
    std::normal_distribution<double> distractor_noise(0.0, 0.1);

    Dataset data;
    data.feature_dim = d;
    data.num_classes = 2;
    data.num_groups = 4;
    data.metadata.generator = "spurious";
    data.metadata.seed = seed;
    data.metadata.params = {{"n", n},
                            {"bias_rate", bias_rate},
                            {"d", d},
                            {"signal", signal},
                            {"distractor_amp", distractor_amp}};

    data.examples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Example e;
        e.y = label_coin(rng) ? 1 : 0;
        const double s = e.y == 1 ? 1.0 : -1.0;
        const int b = agree_coin(rng) ? e.y : 1 - e.y;
        e.x.resize(static_cast<std::size_t>(d));
        for (int c = 0; c + 1 < d; ++c)
            e.x[static_cast<std::size_t>(c)] = s * signal * v[static_cast<std::size_t>(c)] + unit_noise(rng);
        e.x[static_cast<std::size_t>(d - 1)] = static_cast<double>(b) * distractor_amp + distractor_noise(rng);
        e.group = 2 * e.y + b;
        e.domain = e.group;
        data.examples.push_back(std::move(e));
    }
    return data;
}

// With probability p_noise an example's label is redrawn uniformly over all
// classes (the redraw may repeat the original label). Groups and domains are
// untouched; the input dataset is not modified.
inline Dataset inject_label_noise(const Dataset& dataset, double p_noise, std::uint64_t seed) {
    if (!(p_noise >= 0.0 && p_noise <= 1.0))
        throw std::invalid_argument("inject_label_noise: p_noise must be in [0, 1]");
    Dataset noisy = dataset;
    noisy.metadata.params["p_noise"] = p_noise;
    noisy.metadata.params["noise_seed"] = seed;
    if (p_noise == 0.0) return noisy;
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution flip(p_noise);
    std::uniform_int_distribution<int> redrawn(0, dataset.num_classes - 1);
    for (Example& e : noisy.examples) {
        if (flip(rng)) e.y = redrawn(rng);
    }
    return noisy;
}

// ---------------------------------------------------------------------------
// JSON Lines serialization: line 0 is a metadata header, then one example
// per line as {"x":[...],"y":int,"group":int,"domain":int}.
// ---------------------------------------------------------------------------

inline void save_jsonl(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_jsonl: cannot open " + path);
    nlohmann::json header = {{"feature_dim", dataset.feature_dim},
                             {"num_classes", dataset.num_classes},
                             {"num_groups", dataset.num_groups},
                             {"generator", dataset.metadata.generator},
                             {"params", dataset.metadata.params},
                             {"seed", dataset.metadata.seed}};
    out << header.dump() << "\n";
    for (const Example& e : dataset.examples) {
        nlohmann::json line = {{"x", e.x}, {"y", e.y}, {"group", e.group}, {"domain", e.domain}};
        out << line.dump() << "\n";
    }
    if (!out) throw std::runtime_error("save_jsonl: write failed for " + path);
}

inline Dataset load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_jsonl: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.empty())
        throw std::runtime_error("load_jsonl: no metadata header in " + path);

    Dataset d;
    try {
        nlohmann::json header = nlohmann::json::parse(line);
        d.feature_dim = header.at("feature_dim").get<int>();
        d.num_classes = header.at("num_classes").get<int>();
        d.num_groups = header.at("num_groups").get<int>();
        d.metadata.generator = header.value("generator", std::string{});
        d.metadata.params = header.value("params", nlohmann::json::object());
        d.metadata.seed = header.value("seed", std::uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_jsonl: bad metadata header in " + path + ": " + e.what());
    }

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        Example e;
        try {
            nlohmann::json j = nlohmann::json::parse(line);
            e.x = j.at("x").get<std::vector<double>>();
            e.y = j.at("y").get<int>();
            e.group = j.at("group").get<int>();
            e.domain = j.at("domain").get<int>();
        } catch (const nlohmann::json::exception& ex) {
            throw std::runtime_error("load_jsonl: malformed line " + std::to_string(line_no) +
                                     " in " + path + ": " + ex.what());
        }
        if (static_cast<int>(e.x.size()) != d.feature_dim)
            throw std::runtime_error("load_jsonl: inconsistent feature_dim at line " +
                                     std::to_string(line_no) + " in " + path);
        d.examples.push_back(std::move(e));
        ++line_no;
    }
    return d;
}

// Seeded shuffle then contiguous slices; cumulative rounding so sizes differ
// from exact fractions by less than one example.
inline std::vector<Dataset> split(const Dataset& dataset, const std::vector<double>& fractions,
                                  std::uint64_t seed) {
    if (fractions.empty()) throw std::invalid_argument("split: no fractions");
    double total = 0.0;
    for (double f : fractions) {
        if (!(f > 0.0)) throw std::invalid_argument("split: fractions must be positive");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("split: fractions must sum to 1");

    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<Dataset> parts;
    double cum = 0.0;
    std::size_t start = 0;
    for (std::size_t k = 0; k < fractions.size(); ++k) {
        cum += fractions[k];
        const std::size_t end = (k + 1 == fractions.size())
                                    ? dataset.size()
                                    : static_cast<std::size_t>(std::llround(cum * static_cast<double>(dataset.size())));
        if (end <= start)
            throw std::invalid_argument("split: fraction " + std::to_string(k) +
                                        " produces an empty split");
        Dataset part;
        part.feature_dim = dataset.feature_dim;
        part.num_classes = dataset.num_classes;
        part.num_groups = dataset.num_groups;
        part.metadata = dataset.metadata;
        part.metadata.params["split_seed"] = seed;
        part.metadata.params["split_index"] = k;
        part.examples.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) part.examples.push_back(dataset.examples[order[i]]);
        parts.push_back(std::move(part));
        start = end;
    }
    return parts;
}

}  // namespace rpdro
