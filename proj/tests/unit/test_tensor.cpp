#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>

#include "deal/tensor/checkpoint.hpp"
#include "deal/tensor/gradcheck.hpp"
#include "deal/tensor/losses.hpp"
#include "deal/tensor/nn.hpp"
#include "deal/tensor/ops.hpp"
#include "deal/tensor/optim.hpp"
#include "op_cases.hpp"
#include "oracles.hpp"

using namespace deal;

namespace {

void set_identity(nn::Linear& linear) {
    auto w = linear.weight.mutable_data();
    const std::size_t n = linear.out_features();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = (i / n == i % n) ? 1.0 : 0.0;
    for (auto& b : linear.bias.mutable_data()) b = 0.0;
}

nn::AttentionWeights identity_attention(nn::ParameterStore& store, std::size_t d) {
    nn::Rng rng(1);
    nn::AttentionWeights w(store, "attn", d, d, d, rng);
    set_identity(w.q);
    set_identity(w.k);
    set_identity(w.v);
    set_identity(w.out);
    return w;
}

}  // namespace

TEST_CASE("tensor shape invariants") {
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), DimensionError);
    CHECK_THROWS_AS(Tensor::zeros({}), DimensionError);
    CHECK_THROWS_AS(Tensor::zeros({2, 0}), DimensionError);
    const Tensor t = Tensor::full({2, 3}, 1.5);
    CHECK(t.numel() == 6);
    CHECK(t.rank() == 2);
    CHECK(t.at(5) == 1.5);
}

TEST_CASE("conv2d examples") {
    std::mt19937_64 rng(3);
    SUBCASE("identity kernel") {
        const Tensor x = oracle::random_tensor({1, 1, 4, 4}, rng, -1, 1, false);
        const Tensor y = ops::conv2d(x, Tensor::full({1, 1, 1, 1}, 1.0), 1, 0);
        CHECK(y.shape() == x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.at(i) == x.at(i));
    }
    SUBCASE("hand convolution") {
        const Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
        const Tensor k = Tensor::from_data({1, 1, 2, 2}, {1, 0, 0, 1});
        const Tensor y = ops::conv2d(x, k, 1, 0);
        CHECK(y.shape() == Shape{1, 1, 1, 1});
        CHECK(y.item() == 5.0);
    }
    SUBCASE("output arithmetic") {
        const Tensor x = Tensor::zeros({1, 2, 7, 9});
        const Tensor k = Tensor::zeros({4, 2, 3, 3});
        CHECK(ops::conv2d(x, k, 2, 1).shape() == Shape{1, 4, 4, 5});
        CHECK(ops::conv2d(x, k, 1, 0).shape() == Shape{1, 4, 5, 7});
    }
    SUBCASE("kernel gradient") {
        const Tensor x = oracle::random_tensor({1, 2, 5, 5}, rng, -1, 1, false);
        const auto r = check_gradients(
            [x](std::span<const Tensor> in) { return ops::sum(ops::conv2d(x, in[0], 1, 1)); },
            {oracle::random_tensor({3, 2, 3, 3}, rng)});
        CHECK(r.worst() <= 1e-4);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(ops::conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 1, 1}), 1, 0), DimensionError);
        CHECK_THROWS_AS(ops::conv2d(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 1, 1}), 0, 0), ArgumentError);
        CHECK_THROWS_AS(ops::conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 5, 5}), 1, 0), DimensionError);
    }
}

TEST_CASE("multi-head attention examples") {
    nn::ParameterStore store;
    const auto w = identity_attention(store, 4);
    SUBCASE("identical keys average the values") {
        const Tensor q = Tensor::from_data({1, 4}, {0.3, -0.2, 0.9, 0.1});
        const Tensor k = Tensor::from_data({3, 4}, {1, 2, 3, 4, 1, 2, 3, 4, 1, 2, 3, 4});
        const Tensor v = Tensor::from_data({3, 4}, {1, 0, 0, 2, 0, 1, 0, 4, 0, 0, 1, 6});
        const Tensor out = nn::multi_head_attention(q, k, v, w, 1);
        const double expected[] = {1.0 / 3, 1.0 / 3, 1.0 / 3, 4.0};
        for (std::size_t i = 0; i < 4; ++i) CHECK(out.at(i) == doctest::Approx(expected[i]).epsilon(1e-12));
    }
    SUBCASE("single key returns its value") {
        const Tensor q = Tensor::from_data({1, 4}, {5, 1, -2, 0});
        const Tensor kv = Tensor::from_data({1, 4}, {0.5, -1.5, 2.5, 3.0});
        const Tensor out = nn::multi_head_attention(q, kv, kv, w, 2);
        for (std::size_t i = 0; i < 4; ++i) CHECK(out.at(i) == doctest::Approx(kv.at(i)).epsilon(1e-12));
    }
    SUBCASE("gradient k=3 m=5 d=8 heads=2") {
        std::mt19937_64 rng(11);
        nn::ParameterStore s;
        nn::Rng init(5);
        nn::AttentionWeights aw(s, "a", 8, 8, 8, init);
        std::vector<Tensor> inputs{oracle::random_tensor({3, 8}, rng), oracle::random_tensor({5, 8}, rng),
                                   oracle::random_tensor({5, 8}, rng)};
        for (const auto& [name, t] : s.all()) inputs.push_back(t);
        const auto r = check_gradients(
            [aw](std::span<const Tensor> in) {
                return ops::sum(ops::square(nn::multi_head_attention(in[0], in[1], in[2], aw, 2)));
            },
            inputs);
        CHECK(r.worst() <= 1e-4);
    }
    SUBCASE("heads must divide width") {
        const Tensor x = Tensor::zeros({2, 4});
        CHECK_THROWS_AS(nn::multi_head_attention(x, x, x, w, 3), ArgumentError);
    }
}

TEST_CASE("bilinear sampling examples") {
    const Tensor f = Tensor::from_data({1, 2, 2}, {0, 1, 2, 3});
    CHECK(ops::bilinear_sample(f, 0.5, 0.5).item() == 1.5);
    CHECK(ops::bilinear_sample(f, 1.0, 0.0).item() == 1.0);
    CHECK(ops::bilinear_sample(f, 0.0, 1.0).item() == 2.0);
    CHECK_THROWS_AS(ops::bilinear_sample(f, 1.01, 0.0), RangeError);
    CHECK_THROWS_AS(ops::bilinear_sample(f, 0.0, -0.01), RangeError);

    std::mt19937_64 rng(2);
    const auto r = check_gradients(
        [](std::span<const Tensor> in) { return ops::sum(ops::square(ops::bilinear_sample(in[0], 1.3, 2.7))); },
        {oracle::random_tensor({3, 4, 4}, rng)});
    CHECK(r.worst() <= 1e-4);
}

TEST_CASE("focal loss examples") {
    const Tensor target = Tensor::from_data({1, 4}, {1, 0, 1, 0});
    CHECK(ops::focal_loss(target, target, 0.25, 2.0).item() <= 1e-5);
    const double element = ops::focal_loss(Tensor::full({1, 1}, 0.5), Tensor::full({1, 1}, 1.0), 0.25, 2.0).item();
    CHECK(element == doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-12));
    CHECK(element == doctest::Approx(0.04332).epsilon(1e-4));
    CHECK_THROWS_AS(ops::focal_loss(Tensor::zeros({1, 4}), Tensor::zeros({4, 1})), DimensionError);

    std::mt19937_64 rng(9);
    Tensor y = oracle::random_tensor({8, 8}, rng, 0, 1, false);
    for (auto& v : y.mutable_data()) v = v < 0.3 ? 1.0 : 0.0;
    const auto r = check_gradients([y](std::span<const Tensor> in) { return ops::focal_loss(in[0], y, 0.25, 2.0); },
                                   {oracle::random_tensor({8, 8}, rng, 0.01, 0.99)});
    CHECK(r.worst() <= 1e-4);
}

TEST_CASE("optimizer examples") {
    std::map<std::string, Tensor> params{{"w", Tensor::full({1}, 1.0, true)}};
    auto set_grad = [&](double g) {
        Tensor& w = params.at("w");
        w.zero_grad();
        ops::mul_scalar(w, g).backward();
    };
    SUBCASE("zero learning rate") {
        set_grad(0.7);
        optim::OptimizerState state;
        optim::optimizer_step(params, {.learning_rate = 0.0}, state);
        CHECK(params.at("w").item() == 1.0);
    }
    SUBCASE("plain sgd") {
        set_grad(0.5);
        optim::OptimizerState state;
        optim::optimizer_step(params, {.learning_rate = 0.1, .plain_sgd = true}, state);
        CHECK(params.at("w").item() == doctest::Approx(0.95).epsilon(1e-15));
    }
    SUBCASE("adam first step") {
        set_grad(0.5);
        optim::OptimizerState state;
        optim::optimizer_step(params, {.learning_rate = 1e-3}, state);
        CHECK(params.at("w").item() - 1.0 == doctest::Approx(-1e-3).epsilon(1e-6));
        CHECK(state.step == 1);
    }
    SUBCASE("adam is deterministic") {
        std::map<std::string, Tensor> other{{"w", Tensor::full({1}, 1.0, true)}};
        optim::OptimizerState s1, s2;
        for (int i = 0; i < 5; ++i) {
            set_grad(0.3 + i);
            other.at("w").zero_grad();
            ops::mul_scalar(other.at("w"), 0.3 + i).backward();
            optim::optimizer_step(params, {}, s1);
            optim::optimizer_step(other, {}, s2);
        }
        CHECK(params.at("w").item() == other.at("w").item());
    }
    SUBCASE("missing gradient names the parameter") {
        params.emplace("bias", Tensor::zeros({2}, true));
        set_grad(0.5);
        optim::OptimizerState state;
        try {
            optim::optimizer_step(params, {}, state);
            FAIL("expected MissingGradientError");
        } catch (const optim::MissingGradientError& e) {
            CHECK(e.parameter() == "bias");
            CHECK(std::string(e.what()).find("bias") != std::string::npos);
        }
    }
}

TEST_CASE("gradient checker examples") {
    const auto linear = check_gradients([](std::span<const Tensor> in) { return ops::sum(in[0]); },
                                        {Tensor::from_data({3}, {0.2, -1.0, 4.0})});
    CHECK(linear.worst() <= 1e-10);

    Tensor x = Tensor::from_data({3}, {1, 2, 3});
    const auto quad = check_gradients([](std::span<const Tensor> in) { return ops::sum(ops::mul(in[0], in[0])); }, {x});
    CHECK(quad.worst() <= 1e-8);
    x.zero_grad();
    ops::sum(ops::mul(x, x)).backward();
    CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{2, 4, 6});

    try {
        check_gradients([](std::span<const Tensor> in) { return ops::sum(ops::log(in[0], 0.0)); },
                        {Tensor::from_data({3}, {1.0, 2.0, 5e-6})});
        FAIL("expected GradientProbeError");
    } catch (const GradientProbeError& e) {
        CHECK(e.input() == 0);
        CHECK(e.coordinate() == 2);
    }
}

TEST_CASE("every differentiable op passes a gradient check") {
    std::mt19937_64 rng(20260101);
    for (const auto& c : oracle::differentiable_op_cases()) {
        for (int rep = 0; rep < 3; ++rep) {
            auto problem = c.make(rng);
            const auto r = check_gradients(problem.forward, problem.inputs);
            INFO(c.name << " " << problem.shape_note);
            CHECK(r.worst() <= 1e-4);
        }
    }
}

TEST_CASE("softmax rows and sigmoid range") {
    std::mt19937_64 rng(4);
    const Tensor x = oracle::random_tensor({6, 9}, rng, -30, 30, false);
    const Tensor s = ops::softmax_rows(x);
    for (std::size_t r = 0; r < 6; ++r) {
        double total = 0;
        for (std::size_t c = 0; c < 9; ++c) total += s.at(r * 9 + c);
        CHECK(std::abs(total - 1.0) <= 1e-12);
    }
    const Tensor g = ops::sigmoid(Tensor::from_data({4}, {-30, -1, 2, 30}));
    for (double v : g.data()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("backward is linear in the loss") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor a = oracle::random_tensor({3, 4}, rng);
        Tensor b = oracle::random_tensor({4, 2}, rng);
        auto loss1 = [&] { return ops::sum(ops::silu(ops::matmul(a, b))); };
        auto loss2 = [&] { return ops::mean(ops::square(ops::sub(ops::matmul(a, b), Tensor::full({1, 1}, 0.3)))); };

        ops::add(loss1(), loss2()).backward();
        const std::vector<double> ga(a.grad().begin(), a.grad().end()), gb(b.grad().begin(), b.grad().end());
        a.zero_grad();
        b.zero_grad();
        loss1().backward();
        std::vector<double> sa(a.grad().begin(), a.grad().end()), sb(b.grad().begin(), b.grad().end());
        a.zero_grad();
        b.zero_grad();
        loss2().backward();
        for (std::size_t i = 0; i < sa.size(); ++i) CHECK(ga[i] == doctest::Approx(sa[i] + a.grad()[i]).epsilon(1e-12));
        for (std::size_t i = 0; i < sb.size(); ++i) CHECK(gb[i] == doctest::Approx(sb[i] + b.grad()[i]).epsilon(1e-12));
    }
}

TEST_CASE("tape visits shared nodes once and reaches every leaf") {
    Tensor x = Tensor::from_data({2}, {1.0, -2.0}, true);
    Tensor y = Tensor::from_data({2}, {0.5, 0.25}, true);
    const Tensor shared = ops::mul(x, y);
    const Tensor left = ops::sigmoid(shared);
    const Tensor right = ops::square(shared);
    const Tensor root = ops::sum(ops::add(left, right));
    const auto tape = ComputationTape::record(root);
    std::set<const void*> unique(tape.nodes().begin(), tape.nodes().end());
    CHECK(unique.size() == tape.size());
    CHECK(tape.size() == 7);  // x, y, shared, left, right, add, sum
    root.backward();
    CHECK(x.has_grad());
    CHECK(y.has_grad());
    CHECK(x.grad().size() == 2);
}

TEST_CASE("forward passes are bit-identical") {
    auto run = [] {
        std::mt19937_64 rng(77);
        const Tensor x = oracle::random_tensor({1, 3, 8, 8}, rng, -1, 1, false);
        const Tensor k = oracle::random_tensor({4, 3, 3, 3}, rng, -1, 1, false);
        const Tensor y = ops::silu(ops::conv2d(x, k, 2, 1));
        return std::vector<double>(y.data().begin(), y.data().end());
    };
    CHECK(run() == run());
}

TEST_CASE("checkpoint round trip") {
    std::mt19937_64 rng(6);
    std::map<std::string, Tensor> weights{{"a.weight", oracle::random_tensor({3, 2}, rng)},
                                          {"b", oracle::random_tensor({1, 4, 1, 1}, rng)}};
    const auto bytes = encode_checkpoint(weights);
    CHECK(bytes == encode_checkpoint(weights));
    CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "DEALCKPT");

    const auto dir = std::filesystem::temp_directory_path() / "deal_test_tensor_ckpt";
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / "w.ckpt", weights);
    const auto loaded = load_checkpoint(dir / "w.ckpt");
    REQUIRE(loaded.size() == 2);
    for (const auto& [name, t] : weights) {
        CHECK(loaded.at(name).shape() == t.shape());
        CHECK(std::vector<double>(loaded.at(name).data().begin(), loaded.at(name).data().end()) ==
              std::vector<double>(t.data().begin(), t.data().end()));
    }

    std::map<std::string, Tensor> target{{"a.weight", Tensor::zeros({3, 2})}, {"b", Tensor::zeros({1, 4, 1, 1})}};
    assign_checkpoint(loaded, target);
    CHECK(target.at("a.weight").at(3) == weights.at("a.weight").at(3));

    std::map<std::string, Tensor> wrong{{"a.weight", Tensor::zeros({2, 3})}, {"b", Tensor::zeros({1, 4, 1, 1})}};
    CHECK_THROWS_AS(assign_checkpoint(loaded, wrong), CheckpointError);

    auto bad_version = bytes;
    bad_version[8] = 9;
    CHECK_THROWS_AS(decode_checkpoint(bad_version), CheckpointError);
    CHECK_THROWS_AS(decode_checkpoint({bytes.begin(), bytes.begin() + 20}), CheckpointError);
    std::filesystem::remove_all(dir);
}
