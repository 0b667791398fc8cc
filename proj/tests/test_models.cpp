#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "rpdro/gradcheck.hpp"
#include "rpdro/model.hpp"
#include "rpdro/optimizer.hpp"
#include "rpdro/serialize.hpp"
#include "rpdro/training.hpp"

using namespace rpdro;

namespace {

ModelSpec linear_spec(int in, int out) {
    ModelSpec s;
    s.input_dim = in;
    s.output_dim = out;
    return s;
}

ModelSpec mlp_spec(int in, std::vector<int> hidden, int out,
                   Activation act = Activation::Tanh) {
    ModelSpec s;
    s.architecture = Arch::Mlp;
    s.input_dim = in;
    s.hidden_sizes = std::move(hidden);
    s.activation = act;
    s.output_dim = out;
    return s;
}

}  // namespace

TEST_CASE("init_params shapes and determinism") {
    ParamSet p = init_params(linear_spec(2, 2), 3);
    CHECK(p.at("w0").shape == Shape{2, 2});
    CHECK(p.at("b0").shape == Shape{2});
    for (double v : p.at("b0").values) CHECK(v == 0.0);
    const double bound = std::sqrt(6.0 / 4.0);
    for (double v : p.at("w0").values) CHECK(std::abs(v) <= bound);

    CHECK(init_params(linear_spec(2, 2), 3) == p);
    CHECK_FALSE(init_params(linear_spec(2, 2), 4) == p);

    ParamSet mlp = init_params(mlp_spec(2, {4}, 2), 1);
    CHECK(mlp.at("w0").shape == Shape{2, 4});
    CHECK(mlp.at("w1").shape == Shape{4, 2});
    CHECK(mlp.size() == 4);
}

TEST_CASE("invalid specs are rejected") {
    CHECK_THROWS_AS(init_params(linear_spec(0, 2), 1), std::invalid_argument);
    CHECK_THROWS_AS(init_params(linear_spec(2, 1), 1), std::invalid_argument);
    CHECK_THROWS_AS(init_params(mlp_spec(2, {0}, 2), 1), std::invalid_argument);
}

TEST_CASE("forward_logits basic cases") {
    SECTION("hand-set weights select rows") {
        ParamSet p;
        p.add("w0", Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
        p.add("b0", Tensor({2}));
        Tape t;
        auto ids = stage_params(t, p);
        NodeId logits = forward_logits(t, ids, linear_spec(2, 2), t.leaf(Tensor({1, 2}, {1.0, 0.0})));
        CHECK(t.value(logits).values == std::vector<double>{1.0, 2.0});
    }
    SECTION("zero weights give zero logits") {
        ParamSet p;
        p.add("w0", Tensor({3, 2}));
        p.add("b0", Tensor({2}));
        Tape t;
        auto ids = stage_params(t, p);
        NodeId logits =
            forward_logits(t, ids, linear_spec(3, 2), t.leaf(Tensor({2, 3}, {1, -2, 3, 4, 5, -6})));
        for (double v : t.value(logits).values) CHECK(v == 0.0);
    }
    SECTION("dimension mismatch") {
        ParamSet p = init_params(linear_spec(3, 2), 0);
        Tape t;
        auto ids = stage_params(t, p);
        CHECK_THROWS_AS(forward_logits(t, ids, linear_spec(3, 2), t.leaf(Tensor({2, 2}))),
                        ShapeError);
    }
    SECTION("mlp-2 produces finite logits and passes the gradient check") {
        const ModelSpec spec = mlp_spec(2, {2}, 2);
        ParamSet p = init_params(spec, 5);
        std::mt19937_64 rng(6);
        std::uniform_real_distribution<double> dist(-2.0, 2.0);
        Tensor x({4, 2});
        for (double& v : x.values) v = dist(rng);
        const TapeBuilder f = [&](Tape& t, const ParamSet& ps, auto& ids) {
            ids = stage_params(t, ps);
            return t.mean(nll_per_example(t, forward_logits(t, ids, spec, t.leaf(x)), {0, 1, 1, 0}));
        };
        CHECK(finite_diff_check(f, p, 1e-5) < 1e-5);
    }
}

TEST_CASE("nll_per_example values") {
    Tape t;
    SECTION("all-zero logits give log 2 exactly") {
        NodeId logits = t.leaf(Tensor({1, 2}, {0.0, 0.0}));
        CHECK(t.value(nll_per_example(t, logits, {1})).values[0] == std::log(2.0));
    }
    SECTION("confident correct prediction is near zero") {
        NodeId logits = t.leaf(Tensor({1, 2}, {10.0, -10.0}));
        const double v = t.value(nll_per_example(t, logits, {0})).values[0];
        // the fused form carries ~1 ulp of the logsumexp magnitude here
        CHECK(v == Catch::Approx(std::log1p(std::exp(-20.0))).margin(1e-14));
        CHECK(v > 0.0);
        CHECK(v < 1e-8);
    }
    SECTION("confident wrong prediction costs about the margin") {
        NodeId logits = t.leaf(Tensor({1, 2}, {10.0, -10.0}));
        const double v = t.value(nll_per_example(t, logits, {1})).values[0];
        CHECK(v == Catch::Approx(20.0).margin(1e-8));
    }
    SECTION("out-of-range labels are rejected") {
        NodeId logits = t.leaf(Tensor({1, 2}, {0.0, 0.0}));
        CHECK_THROWS_AS(nll_per_example(t, logits, {2}), std::invalid_argument);
        CHECK_THROWS_AS(nll_per_example(t, logits, {-1}), std::invalid_argument);
    }
}

TEST_CASE("nll properties") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> dist(-3.0, 3.0);
    for (int trial = 0; trial < 50; ++trial) {
        Tape t;
        Tensor logits({4, 3});
        for (double& v : logits.values) v = dist(rng);
        const Tensor nll = t.value(nll_per_example(t, t.leaf(logits), {0, 2, 1, 0}));
        for (double v : nll.values) CHECK(v >= 0.0);
    }
    // equal logits cost log |Y|
    Tape t;
    const Tensor nll =
        t.value(nll_per_example(t, t.leaf(Tensor({1, 3}, {1.3, 1.3, 1.3})), {2}));
    CHECK(nll.values[0] == Catch::Approx(std::log(3.0)).margin(1e-12));
}

TEST_CASE("zero_one_per_example") {
    Tensor logits({3, 2}, {2.0, 1.0, 1.0, 2.0, 1.0, 1.0});
    const Tensor z = zero_one_per_example(logits, {0, 0, 0});
    CHECK(z.values == std::vector<double>{0.0, 1.0, 0.0});  // tie goes to class 0

    CHECK_THROWS_AS(zero_one_per_example(logits, {0, 0, 5}), std::invalid_argument);

    // invariance under strictly increasing transforms of each row
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor raw({5, 3});
        for (double& v : raw.values) v = dist(rng);
        const std::vector<int> labels{0, 1, 2, 1, 0};
        Tensor warped = raw;
        for (double& v : warped.values) v = std::tanh(v) * 3.0 + 1.0;
        CHECK(zero_one_per_example(raw, labels).values ==
              zero_one_per_example(warped, labels).values);
    }
}

TEST_CASE("optimizer_step sgd") {
    ParamSet p;
    p.add("w", Tensor({1}, {1.0}));
    std::map<std::string, Tensor> g;
    g.emplace("w", Tensor({1}, {0.5}));
    OptimizerState s = OptimizerState::make(OptKind::Sgd, p);

    optimizer_step(p, g, s, Direction::Descend, 0.1);
    CHECK(p.at("w").values[0] == 0.95);
    optimizer_step(p, g, s, Direction::Ascend, 0.1);
    CHECK(p.at("w").values[0] == 1.0);
    CHECK(s.step == 2);
}

TEST_CASE("sgd descend then ascend returns to the start") {
    // IEEE round-to-nearest makes (p - t) + t == p only approximately for
    // arbitrary values; exact at the reference point, <= 1 ulp in general.
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> pd(-2.0, 2.0), gd(-1.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        ParamSet p;
        p.add("w", Tensor({1}, {pd(rng)}));
        const double start = p.at("w").values[0];
        std::map<std::string, Tensor> g;
        g.emplace("w", Tensor({1}, {gd(rng)}));
        OptimizerState s = OptimizerState::make(OptKind::Sgd, p);
        optimizer_step(p, g, s, Direction::Descend, 0.1);
        optimizer_step(p, g, s, Direction::Ascend, 0.1);
        CHECK(p.at("w").values[0] == Catch::Approx(start).epsilon(1e-15));
    }
}

TEST_CASE("adam first step has magnitude about lr") {
    ParamSet p;
    p.add("w", Tensor({1}, {1.0}));
    std::map<std::string, Tensor> g;
    g.emplace("w", Tensor({1}, {0.5}));
    OptimizerState s = OptimizerState::make(OptKind::Adam, p);
    optimizer_step(p, g, s, Direction::Descend, 0.1);
    const double delta = 1.0 - p.at("w").values[0];
    CHECK(delta > 0.1 - 1e-7);
    CHECK(delta <= 0.1);
}

TEST_CASE("optimizer_step rejects bad gradients") {
    ParamSet p;
    p.add("w", Tensor({2}, {1.0, 2.0}));
    OptimizerState s = OptimizerState::make(OptKind::Sgd, p);
    std::map<std::string, Tensor> wrong_shape;
    wrong_shape.emplace("w", Tensor({3}));
    CHECK_THROWS_AS(optimizer_step(p, wrong_shape, s, Direction::Descend, 0.1),
                    std::invalid_argument);
    std::map<std::string, Tensor> nonfinite;
    Tensor bad({2});
    bad.values[0] = std::numeric_limits<double>::quiet_NaN();
    nonfinite.emplace("w", bad);
    CHECK_THROWS_AS(optimizer_step(p, nonfinite, s, Direction::Descend, 0.1), std::runtime_error);
}

TEST_CASE("one small sgd step on mean nll decreases it") {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> dist(-1.5, 1.5);
    const ModelSpec spec = linear_spec(3, 2);
    for (int trial = 0; trial < 20; ++trial) {
        ParamSet p = init_params(spec, 100 + static_cast<std::uint64_t>(trial));
        Tensor x({6, 3});
        for (double& v : x.values) v = dist(rng);
        const std::vector<int> y{0, 1, 0, 1, 1, 0};

        auto mean_nll = [&](const ParamSet& ps) {
            Tape t;
            auto ids = stage_params(t, ps);
            return t.value(t.mean(nll_per_example(t, forward_logits(t, ids, spec, t.leaf(x)), y)))
                .item();
        };
        const double before = mean_nll(p);
        Tape t;
        auto ids = stage_params(t, p);
        const NodeId obj = t.mean(nll_per_example(t, forward_logits(t, ids, spec, t.leaf(x)), y));
        OptimizerState s = OptimizerState::make(OptKind::Sgd, p);
        optimizer_step(p, collect_grads(t.backward(obj), ids), s, Direction::Descend, 1e-3);
        CHECK(mean_nll(p) < before);
    }
}

TEST_CASE("lr_at_step") {
    Schedule linear{ScheduleKind::LinearDecay, 100};
    CHECK(lr_at_step(linear, 0.1, 0) == 0.1);
    CHECK(lr_at_step(linear, 0.1, 50) == Catch::Approx(0.05).margin(1e-15));
    CHECK(lr_at_step(linear, 0.1, 100) == 0.0);
    CHECK(lr_at_step(linear, 0.1, 150) == 0.0);
    Schedule constant{ScheduleKind::Constant, 0};
    CHECK(lr_at_step(constant, 0.1, 12345) == 0.1);
}

TEST_CASE("checkpoint json round-trips parameters bit-exactly") {
    const ModelSpec spec = mlp_spec(3, {4}, 2, Activation::Relu);
    ParamSet p = init_params(spec, 77);
    StrategyConfig strat;
    strat.kind = StrategyKind::Rpdro;
    strat.tau = 0.1;

    const nlohmann::json j = checkpoint_to_json(spec, p, 42, 7, strat);
    const std::string text = j.dump();
    const LoadedCheckpoint back = checkpoint_from_json(nlohmann::json::parse(text));
    CHECK(back.params == p);
    CHECK(back.step == 42);
    CHECK(back.seed == 7);
    CHECK(back.spec.architecture == Arch::Mlp);
    CHECK(back.spec.hidden_sizes == std::vector<int>{4});
    CHECK(back.strategy.kind == StrategyKind::Rpdro);
}
