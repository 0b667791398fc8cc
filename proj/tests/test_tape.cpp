#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "rpdro/gradcheck.hpp"
#include "rpdro/model.hpp"
#include "rpdro/tape.hpp"

using namespace rpdro;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.values) v = dist(rng);
    return t;
}

// keep samples away from a kink so central differences stay valid
void nudge_away_from(Tensor& t, double point, double margin) {
    for (double& v : t.values)
        if (std::abs(v - point) < margin) v = point + (v >= point ? margin : -margin);
}

double fd_for(const TapeBuilder& f, const ParamSet& p) { return finite_diff_check(f, p, 1e-5); }

}  // namespace

TEST_CASE("shape rules for basic primitives") {
    Tape tape;
    NodeId a = tape.leaf(Tensor({2, 3}, 1.0));
    NodeId b = tape.leaf(Tensor({2, 3}, 2.0));
    CHECK(tape.value(tape.add(a, b)).shape == Shape{2, 3});

    NodeId m = tape.leaf(Tensor({3, 4}, 0.5));
    CHECK(tape.value(tape.matmul(a, m)).shape == Shape{2, 4});

    NodeId s = tape.leaf(Tensor({3}, 0.0));
    const Tensor& soft = tape.value(tape.softmax(s, 0));
    for (double v : soft.values) CHECK(v == Catch::Approx(1.0 / 3.0).margin(1e-15));
}

TEST_CASE("shape mismatch errors name the primitive and both shapes") {
    Tape tape;
    NodeId a = tape.leaf(Tensor({2, 3}));
    NodeId b = tape.leaf(Tensor({4, 3}));
    try {
        tape.matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4,3]") != std::string::npos);
    }
    try {
        tape.add(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("add") != std::string::npos);
    }
}

TEST_CASE("backward of x*x at 3 is 6") {
    Tape tape;
    NodeId x = tape.leaf(Tensor::scalar(3.0));
    NodeId y = tape.mul(x, x);
    auto grads = tape.backward(y);
    CHECK(grads[x].item() == Catch::Approx(6.0).margin(1e-14));
}

TEST_CASE("constant output yields all-zero gradients") {
    Tape tape;
    NodeId x = tape.leaf(Tensor({3}, 1.5));
    NodeId c = tape.leaf(Tensor::scalar(7.0));
    auto grads = tape.backward(c);
    for (double v : grads[x].values) CHECK(v == 0.0);
}

TEST_CASE("backward rejects non-scalar outputs") {
    Tape tape;
    NodeId x = tape.leaf(Tensor({2}, 1.0));
    CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("fused softmax cross-entropy gradient matches finite differences") {
    ParamSet p;
    p.add("logits", Tensor({1, 2}, {1.0, 0.0}));
    const TapeBuilder f = [](Tape& t, const ParamSet& ps, std::map<std::string, NodeId>& ids) {
        ids = stage_params(t, ps);
        return t.mean(nll_per_example(t, ids.at("logits"), {0}));
    };
    CHECK(fd_for(f, p) < 1e-6);

    // analytic gradient is softmax - onehot
    Tape t;
    auto ids = stage_params(t, p);
    auto grads = t.backward(t.mean(nll_per_example(t, ids.at("logits"), {0})));
    const double s0 = std::exp(1.0) / (std::exp(1.0) + 1.0);
    CHECK(grads[ids.at("logits")].values[0] == Catch::Approx(s0 - 1.0).epsilon(1e-10));
    CHECK(grads[ids.at("logits")].values[1] == Catch::Approx(1.0 - s0).epsilon(1e-10));
}

TEST_CASE("every primitive matches central finite differences over 100 trials") {
    std::mt19937_64 rng(20240817);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        ParamSet p;
        p.add("a", random_tensor({2, 3}, rng));
        p.add("b", random_tensor({2, 3}, rng));
        p.add("m", random_tensor({3, 2}, rng));
        p.add("v", random_tensor({3}, rng));
        p.add("pos", random_tensor({2, 3}, rng, 0.1, 2.0));  // log domain
        p.add("b2", random_tensor({2}, rng));
        Tensor relu_in = random_tensor({2, 3}, rng);
        nudge_away_from(relu_in, 0.0, 1e-3);
        p.add("r", relu_in);
        Tensor clamp_in = random_tensor({3}, rng);
        nudge_away_from(clamp_in, -1.0, 1e-3);
        nudge_away_from(clamp_in, 1.0, 1e-3);
        p.add("c", clamp_in);

        struct Case {
            const char* name;
            TapeBuilder f;
        };
        const Case cases[] = {
            {"matmul", [](Tape& t, const ParamSet& ps, auto& ids) {
                 (void)ps;
                 ids = stage_params(t, ps);
                 return t.sum(t.matmul(ids.at("a"), ids.at("m")));
             }},
            {"add", [](Tape& t, const ParamSet& ps, auto& ids) {
                 (void)ps;
                 ids = stage_params(t, ps);
                 return t.sum(t.add(ids.at("a"), ids.at("b")));
             }},
            {"add-bias", [](Tape& t, const ParamSet& ps, auto& ids) {
                 (void)ps;
                 ids = stage_params(t, ps);
                 return t.sum(t.add(t.matmul(ids.at("a"), ids.at("m")), ids.at("b2")));
             }},
            {"sub", [](Tape& t, const ParamSet& ps, auto& ids) {
                 (void)ps;
                 ids = stage_params(t, ps);
                 return t.sum(t.sub(ids.at("a"), ids.at("b")));
             }},
            {"sub-scalar", [](Tape& t, const ParamSet& ps, auto& ids) {
                 (void)ps;
                 ids = stage_params(t, ps);
                 return t.sum(t.sub(ids.at("v"), t.mean(ids.at("b"))));
             }},
            {"mul", [](Tape& t, const ParamSet& ps, auto& ids) {
                 (void)ps;
                 ids = stage_params(t, ps);
                 return t.sum(t.mul(ids.at("a"), ids.at("b")));
             }},
            {"mul-scalar", [](Tape& t, const ParamSet& ps, auto& ids) {
                 (void)ps;
                 ids = stage_params(t, ps);
                 return t.sum(t.mul(ids.at("v"), t.mean(ids.at("a"))));
             }},
            {"scalar-mul", [](Tape& t, const ParamSet& ps, auto& ids) {
                 (void)ps;
                 ids = stage_params(t, ps);
                 return t.sum(t.scalar_mul(ids.at("a"), 1.7));
             }},
            {"relu", [](Tape& t, const ParamSet& ps, auto& ids) {
                 (void)ps;
                 ids = stage_params(t, ps);
                 return t.sum(t.relu(ids.at("r")));
             }},
            {"tanh", [](Tape& t, const ParamSet& ps, auto& ids) {
                 (void)ps;
                 ids = stage_params(t, ps);
                 return t.sum(t.tanh(ids.at("a")));
             }},
            {"exp", [](Tape& t, const ParamSet& ps, auto& ids) {
                 (void)ps;
                 ids = stage_params(t, ps);
                 return t.sum(t.exp(ids.at("a")));
             }},
            {"log", [](Tape& t, const ParamSet& ps, auto& ids) {
                 (void)ps;
                 ids = stage_params(t, ps);
                 return t.sum(t.log(ids.at("pos")));
             }},
            {"clamp", [](Tape& t, const ParamSet& ps, auto& ids) {
                 (void)ps;
                 ids = stage_params(t, ps);
                 return t.sum(t.clamp(ids.at("c"), -1.0, 1.0));
             }},
            {"square", [](Tape& t, const ParamSet& ps, auto& ids) {
                 (void)ps;
                 ids = stage_params(t, ps);
                 return t.sum(t.square(ids.at("a")));
             }},
            {"mean", [](Tape& t, const ParamSet& ps, auto& ids) {
                 (void)ps;
                 ids = stage_params(t, ps);
                 return t.mean(t.mul(ids.at("a"), ids.at("b")));
             }},
            {"logsumexp-1d", [](Tape& t, const ParamSet& ps, auto& ids) {
                 (void)ps;
                 ids = stage_params(t, ps);
                 return t.logsumexp(ids.at("v"), 0);
             }},
            {"logsumexp-rows", [](Tape& t, const ParamSet& ps, auto& ids) {
                 (void)ps;
                 ids = stage_params(t, ps);
                 return t.sum(t.logsumexp(ids.at("a"), 1));
             }},
            {"softmax-1d", [](Tape& t, const ParamSet& ps, auto& ids) {
                 (void)ps;
                 ids = stage_params(t, ps);
                 return t.sum(t.mul(t.softmax(ids.at("v"), 0),
                                    t.select_columns(ids.at("m"), {0, 1, 0})));
             }},
            {"softmax-rows", [](Tape& t, const ParamSet& ps, auto& ids) {
                 (void)ps;
                 ids = stage_params(t, ps);
                 return t.sum(t.mul(t.select_columns(t.softmax(ids.at("a"), 1), {0, 2}),
                                    ids.at("b2")));
             }},
            {"select-columns", [](Tape& t, const ParamSet& ps, auto& ids) {
                 (void)ps;
                 ids = stage_params(t, ps);
                 return t.sum(t.square(t.select_columns(ids.at("a"), {2, 0})));
             }},
        };
        for (const Case& c : cases) {
            const double gap = fd_for(c.f, p);
            INFO("primitive " << c.name << " trial " << trial);
            REQUIRE(gap < 1e-5);
            worst = std::max(worst, gap);
        }
    }
    INFO("worst relative gap " << worst);
    CHECK(worst < 1e-5);
}

TEST_CASE("forward replay reproduces recorded values bit-exactly") {
    std::mt19937_64 rng(7);
    Tape tape;
    NodeId a = tape.leaf(random_tensor({3, 3}, rng));
    NodeId b = tape.leaf(random_tensor({3, 3}, rng));
    NodeId c = tape.matmul(tape.add(a, b), tape.softmax(b, 1));
    NodeId d = tape.mean(tape.mul(c, tape.tanh(a)));
    (void)d;
    const auto replayed = tape.replay();
    REQUIRE(replayed.size() == tape.size());
    for (std::size_t i = 0; i < tape.size(); ++i) {
        REQUIRE(replayed[i].shape == tape.value(i).shape);
        for (std::size_t k = 0; k < replayed[i].numel(); ++k)
            REQUIRE(replayed[i].values[k] == tape.value(i).values[k]);
    }
}

TEST_CASE("logsumexp is stable for inputs up to +-700") {
    Tape tape;
    NodeId x = tape.leaf(Tensor({3}, {700.0, -700.0, 0.0}));
    const double lse = tape.value(tape.logsumexp(x, 0)).item();
    CHECK(std::isfinite(lse));
    CHECK(lse == Catch::Approx(700.0).margin(1e-9));

    NodeId big = tape.leaf(Tensor({2, 2}, {700.0, 699.0, -700.0, -699.0}));
    const Tensor& soft = tape.value(tape.softmax(big, 1));
    CHECK(soft.all_finite());
}

TEST_CASE("softmax output is a simplex point and shift invariant") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor s = random_tensor({7}, rng, -5.0, 5.0);
        Tape tape;
        const Tensor& w = tape.value(tape.softmax(tape.leaf(s), 0));
        double sum = 0.0;
        for (double v : w.values) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);

        Tensor shifted = s;
        for (double& v : shifted.values) v += 7.0;
        const Tensor& w2 = tape.value(tape.softmax(tape.leaf(shifted), 0));
        for (std::size_t i = 0; i < w.numel(); ++i)
            CHECK(w.values[i] == Catch::Approx(w2.values[i]).margin(1e-12));
    }
}

TEST_CASE("log and exp domain violations raise numerics errors at the node") {
    Tape tape;
    NodeId neg = tape.leaf(Tensor({2}, {-1.0, 1.0}));
    try {
        tape.log(neg);
        FAIL("expected NumericsError");
    } catch (const NumericsError& e) {
        CHECK(std::string(e.what()).find("log") != std::string::npos);
    }
    NodeId huge = tape.leaf(Tensor({1}, {800.0}));
    CHECK_THROWS_AS(tape.exp(huge), NumericsError);
}

TEST_CASE("non-finite gradients raise an error carrying the node id") {
    Tape tape;
    NodeId x = tape.leaf(Tensor({1}, {5e-324}));  // log is finite, 1/x overflows
    NodeId y = tape.sum(tape.log(x));
    try {
        tape.backward(y);
        FAIL("expected NumericsError");
    } catch (const NumericsError& e) {
        CHECK(e.node == x);
        CHECK(std::string(e.what()).find("node") != std::string::npos);
    }
}

TEST_CASE("finite_diff_check on reference functions") {
    std::mt19937_64 rng(5);

    SECTION("linear map w.x has near-exact gradients") {
        ParamSet p;
        p.add("w", random_tensor({1, 4}, rng));
        const Tensor x = random_tensor({4, 1}, rng);
        const TapeBuilder f = [&x](Tape& t, const ParamSet& ps, auto& ids) {
            ids = stage_params(t, ps);
            return t.sum(t.matmul(ids.at("w"), t.leaf(x)));
        };
        CHECK(finite_diff_check(f, p, 1e-5) < 1e-7);
    }

    SECTION("two-layer tanh mlp passes at 1e-5") {
        ModelSpec spec;
        spec.architecture = Arch::Mlp;
        spec.input_dim = 3;
        spec.hidden_sizes = {4};
        spec.activation = Activation::Tanh;
        spec.output_dim = 2;
        ParamSet p = init_params(spec, 11);
        const Tensor x = random_tensor({5, 3}, rng);
        const TapeBuilder f = [&](Tape& t, const ParamSet& ps, auto& ids) {
            ids = stage_params(t, ps);
            return t.mean(nll_per_example(t, forward_logits(t, ids, spec, t.leaf(x)),
                                          {0, 1, 0, 1, 1}));
        };
        CHECK(finite_diff_check(f, p, 1e-5) < 1e-5);
    }

    SECTION("constant function has zero error") {
        ParamSet p;
        p.add("w", random_tensor({2}, rng));
        const TapeBuilder f = [](Tape& t, const ParamSet& ps, auto& ids) {
            ids = stage_params(t, ps);
            return t.leaf(Tensor::scalar(4.2));
        };
        CHECK(finite_diff_check(f, p, 1e-5) == 0.0);
    }

    SECTION("h must be positive") {
        ParamSet p;
        p.add("w", Tensor({1}, {1.0}));
        const TapeBuilder f = [](Tape& t, const ParamSet& ps, auto& ids) {
            ids = stage_params(t, ps);
            return t.sum(ids.at("w"));
        };
        CHECK_THROWS_AS(finite_diff_check(f, p, 0.0), std::invalid_argument);
    }
}
