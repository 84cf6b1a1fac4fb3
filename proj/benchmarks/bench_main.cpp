#include <benchmark/benchmark.h>

#include <random>

#include "deal/data/generator.hpp"
#include "deal/eval/metrics.hpp"
#include "deal/model/deal_model.hpp"
#include "deal/model/matcher.hpp"
#include "deal/tensor/nn.hpp"
#include "deal/tensor/ops.hpp"
#include "deal/train/pgcpp.hpp"

using namespace deal;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool grad = false) {
    std::normal_distribution<double> n;
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = n(rng);
    return Tensor::from_data(std::move(shape), std::move(v), grad);
}

void BM_Conv2d(benchmark::State& state) {
    const auto size = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(1);
    const Tensor x = random_tensor({1, 32, size, size}, rng);
    const Tensor k = random_tensor({32, 32, 3, 3}, rng);
    NoGradGuard no_grad;
    for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, k, 1, 1));
}
BENCHMARK(BM_Conv2d)->Arg(16)->Arg(32)->Arg(64);

void BM_Conv2dBackward(benchmark::State& state) {
    std::mt19937_64 rng(2);
    const Tensor x = random_tensor({1, 32, 32, 32}, rng, true);
    const Tensor k = random_tensor({32, 32, 3, 3}, rng, true);
    for (auto _ : state) {
        Tensor y = ops::sum(ops::conv2d(x, k, 1, 1));
        y.backward();
    }
}
BENCHMARK(BM_Conv2dBackward);

void BM_Attention(benchmark::State& state) {
    const auto tokens = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(3);
    nn::ParameterStore store;
    nn::Rng init(4);
    const nn::AttentionWeights w(store, "a", 64, 64, 64, init);
    const Tensor q = random_tensor({16, 64}, rng), kv = random_tensor({tokens, 64}, rng);
    NoGradGuard no_grad;
    for (auto _ : state) benchmark::DoNotOptimize(nn::multi_head_attention(q, kv, kv, w, 4));
}
BENCHMARK(BM_Attention)->Arg(64)->Arg(256)->Arg(1024);

void BM_ModelForward(benchmark::State& state) {
    const model::DealModel model(model::ModelConfig{});
    const auto scene = data::generate_scene(data::GeneratorConfig{}, 7, "b");
    const Tensor input = train::scene_input(scene);
    data::PointPromptSet prompts;
    for (const auto& a : scene.annotations) prompts.prompts.push_back({a.box.cx(), a.box.cy(), a.category});
    NoGradGuard no_grad;
    for (auto _ : state) benchmark::DoNotOptimize(model.run_prompts(model.encode(input), prompts));
}
BENCHMARK(BM_ModelForward)->Unit(benchmark::kMillisecond);

void BM_Hungarian(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    model::CostMatrix cost;
    cost.rows = n;
    cost.cols = 2 * n;
    cost.values.resize(cost.rows * cost.cols);
    for (auto& v : cost.values) v = u(rng);
    for (auto _ : state) benchmark::DoNotOptimize(model::hungarian_match(cost));
}
BENCHMARK(BM_Hungarian)->Arg(10)->Arg(50)->Arg(200);

void BM_AveragePrecision(benchmark::State& state) {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 200.0), s(0.0, 1.0);
    std::vector<eval::ImageDetections> images(100);
    for (auto& img : images) {
        for (int g = 0; g < 10; ++g) img.ground_truth.push_back({u(rng), u(rng), 8, 8});
        for (int d = 0; d < 30; ++d) img.detections.push_back({{u(rng), u(rng), 8, 8}, s(rng)});
    }
    for (auto _ : state) benchmark::DoNotOptimize(eval::compute_ap(images, 0.5));
}
BENCHMARK(BM_AveragePrecision);

}  // namespace
BENCHMARK_MAIN();
