#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "deal/data/generator.hpp"
#include "deal/eval/metrics.hpp"
#include "deal/model/deal_model.hpp"
#include "deal/model/losses.hpp"
#include "deal/model/matcher.hpp"
#include "deal/model/targets.hpp"
#include "deal/tensor/gradcheck.hpp"
#include "deal/tensor/ops.hpp"
#include "deal/train/pgcpp.hpp"
#include "loss_problem.hpp"
#include "oracles.hpp"

using namespace deal;
using namespace deal::model;

namespace {

const DealModel& default_model() {
    static const DealModel m(ModelConfig{});
    return m;
}

data::Scene toy_scene(std::uint64_t seed) { return data::generate_scene(data::GeneratorConfig{}, seed, "t"); }

data::PointPromptSet prompts_of(std::vector<data::PointPrompt> p) {
    data::PointPromptSet s;
    s.prompts = std::move(p);
    return s;
}

DensityMap density_of(std::size_t h, std::size_t w, std::vector<double> values) {
    return DensityMap{Tensor::from_data({1, 1, h, w}, std::move(values)), 8};
}

void check_close(const Tensor& a, const Tensor& b, double tol) {
    REQUIRE(a.shape() == b.shape());
    double worst = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a.at(i) - b.at(i)));
    CHECK(worst <= tol);
}

std::vector<Tensor> with_parameters(std::vector<Tensor> inputs, const DealModel& m, const std::string& prefix) {
    for (const auto& [name, t] : m.parameters().all()) {
        if (name.rfind(prefix, 0) == 0) inputs.push_back(t);
    }
    return inputs;
}

}  // namespace

TEST_CASE("backbone shapes and degenerate input") {
    NoGradGuard no_grad;
    const auto p = default_model().backbone_forward(Tensor::zeros({3, 128, 128}));
    CHECK(p.l2.shape() == Shape{1, 32, 32, 32});
    CHECK(p.l3.shape() == Shape{1, 32, 16, 16});
    CHECK(p.l4.shape() == Shape{1, 32, 8, 8});
    CHECK(p.l5.shape() == Shape{1, 32, 4, 4});
    for (const Tensor* t : {&p.l2, &p.l3, &p.l4, &p.l5}) {
        for (double v : t->data()) CHECK(std::isfinite(v));
    }
    try {
        default_model().backbone_forward(Tensor::zeros({3, 100, 128}));
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        CHECK(std::string(e.what()).find("pad") != std::string::npos);
    }
}

TEST_CASE("shape chain for any multiple of 32") {
    NoGradGuard no_grad;
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{64, 96}, {32, 160}, {128, 64}}) {
        const auto f = default_model().encode(Tensor::zeros({1, 3, h, w}));
        CHECK(f.enhanced.s3.shape() == Shape{1, 32, h / 8, w / 8});
        const auto out = default_model().run_prompts(f, prompts_of({{10, 10, 0}}));
        CHECK(out.density.grid.shape() == Shape{1, 1, h / 8, w / 8});
    }
}

TEST_CASE("backbone gradient through all levels") {
    const DealModel m(oracle::tiny_model_config(3));
    std::mt19937_64 rng(1);
    const auto r = check_gradients(
        [&m](std::span<const Tensor> in) {
            const auto p = m.backbone_forward(in[0]);
            return ops::add(ops::add(ops::sum(ops::square(p.l2)), ops::sum(p.l3)),
                            ops::add(ops::sum(ops::square(p.l4)), ops::sum(p.l5)));
        },
        with_parameters({oracle::random_tensor({1, 3, 32, 32}, rng, 0, 1)}, m, "backbone."));
    CHECK(r.worst() <= 1e-4);
}

TEST_CASE("hfe shapes, determinism and gradient") {
    {
        NoGradGuard no_grad;
        const Tensor img = train::scene_input(toy_scene(4));
        const auto a = default_model().encode(img);
        const auto b = default_model().encode(img);
        CHECK(a.enhanced.s3.shape() == Shape{1, 32, 16, 16});
        CHECK(std::equal(a.enhanced.s3.data().begin(), a.enhanced.s3.data().end(), b.enhanced.s3.data().begin()));
    }
    const DealModel m(oracle::tiny_model_config(8));
    std::mt19937_64 rng(2);
    std::vector<Tensor> levels{oracle::random_tensor({1, 4, 16, 16}, rng), oracle::random_tensor({1, 4, 8, 8}, rng),
                               oracle::random_tensor({1, 4, 4, 4}, rng), oracle::random_tensor({1, 4, 2, 2}, rng)};
    const auto r = check_gradients(
        [&m](std::span<const Tensor> in) {
            FeaturePyramid p{in[0], in[1], in[2], in[3], 64, 64};
            return ops::sum(m.hfe_forward(p).s3);
        },
        with_parameters(levels, m, "hfe."));
    CHECK(r.worst() <= 1e-4);

    FeaturePyramid wrong{Tensor::zeros({1, 8, 16, 16}), Tensor::zeros({1, 8, 8, 8}), Tensor::zeros({1, 8, 4, 4}),
                         Tensor::zeros({1, 8, 2, 2}), 64, 64};
    CHECK_THROWS_AS(m.hfe_forward(wrong), ConfigurationError);
}

TEST_CASE("prompt embedding") {
    NoGradGuard no_grad;
    const auto f = default_model().encode(train::scene_input(toy_scene(5)));
    const auto one = default_model().embed_prompts(prompts_of({{40, 50, 1}}), f.pyramid);
    CHECK(one.pe.shape() == Shape{1, 64});
    CHECK(one.group_ids == std::vector<CategoryId>{1});

    const auto abc = default_model().embed_prompts(prompts_of({{10, 12, 0}, {70, 90, 1}, {127, 3, 0}}), f.pyramid);
    const auto cab = default_model().embed_prompts(prompts_of({{127, 3, 0}, {10, 12, 0}, {70, 90, 1}}), f.pyramid);
    const std::size_t map[] = {1, 2, 0};  // row i of abc is row map[i] of cab
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t t = 0; t < 64; ++t) CHECK(std::abs(abc.pe.at(i * 64 + t) - cab.pe.at(map[i] * 64 + t)) <= 1e-12);
    }

    CHECK_THROWS_AS(default_model().embed_prompts(prompts_of({}), f.pyramid), ArgumentError);
    CHECK_THROWS_AS(default_model().embed_prompts(prompts_of({{129, 3, 0}}), f.pyramid), RangeError);
}

TEST_CASE("prompt embedding gradient w.r.t. the pyramid") {
    const DealModel m(oracle::tiny_model_config(11));
    std::mt19937_64 rng(3);
    std::vector<Tensor> levels{oracle::random_tensor({1, 4, 16, 16}, rng), oracle::random_tensor({1, 4, 8, 8}, rng),
                               oracle::random_tensor({1, 4, 4, 4}, rng), oracle::random_tensor({1, 4, 2, 2}, rng)};
    const auto points = prompts_of({{5.3, 7.1, 0}, {40.2, 20.9, 1}, {60.5, 61.7, 0}});
    const auto r = check_gradients(
        [&](std::span<const Tensor> in) {
            FeaturePyramid p{in[0], in[1], in[2], in[3], 64, 64};
            return ops::sum(ops::square(m.embed_prompts(points, p).pe));
        },
        levels);
    CHECK(r.worst() <= 1e-4);
}

TEST_CASE("density activation") {
    NoGradGuard no_grad;
    const auto f = default_model().encode(train::scene_input(toy_scene(6)));
    const auto single = default_model().run_prompts(f, prompts_of({{30, 30, 0}}));
    const auto twice = default_model().run_prompts(f, prompts_of({{30, 30, 0}, {30, 30, 0}}));
    CHECK(single.density.grid.shape() == Shape{1, 1, 16, 16});
    for (double v : single.density.grid.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    check_close(single.density.grid, twice.density.grid, 1e-12);
}

TEST_CASE("query allocation") {
    std::vector<double> cells(10, 0.64);
    CHECK(allocate_queries(density_of(1, 10, cells), 1, 300) == 6);
    CHECK(allocate_queries(density_of(1, 2, {0.1, 0.1}), 1, 300) == 1);
    CHECK(allocate_queries(density_of(1, 1000, std::vector<double>(1000, 0.5)), 1, 300) == 300);
    CHECK(allocate_queries(density_of(1, 2, {0.5, 0.5}), 3, 4) == 3);
    CHECK_THROWS_AS(allocate_queries(density_of(1, 1, {0.5}), 5, 4), ArgumentError);

    const std::vector<double> v{0.2, 0.9, 0.2, 0.9, 0.5};
    CHECK(top_cells(v, 3) == std::vector<std::size_t>{1, 3, 4});
    CHECK(top_cells(v, 5) == std::vector<std::size_t>{1, 3, 4, 0, 2});
}

TEST_CASE("decoder queries and seeding") {
    NoGradGuard no_grad;
    const auto f = default_model().encode(train::scene_input(toy_scene(7)));
    const auto pe = default_model().embed_prompts(prompts_of({{64, 64, 0}}), f.pyramid);
    auto enhanced = f.enhanced;
    const auto dm = default_model().activate_prompts(pe, enhanced);
    const auto five = default_model().modulate_and_decode(enhanced, dm, pe, 5);
    CHECK(five.detections.size() == 5);
    CHECK(five.boxes.shape() == Shape{5, 4});
    CHECK(enhanced.modulated.has_value());

    std::vector<double> onehot(256, 0.0);
    onehot[37] = 0.8;
    const auto seeded = default_model().modulate_and_decode(enhanced, density_of(16, 16, onehot), pe, 1);
    CHECK(seeded.query_cells == std::vector<std::size_t>{37});

    const auto clamped = default_model().modulate_and_decode(enhanced, dm, pe, 1000);
    CHECK(clamped.detections.size() == 256);
    CHECK(clamped.warnings.size() == 1);

    const QueryPlan plan{{3, 3, 200}};
    CHECK(default_model().modulate_and_decode(enhanced, dm, pe, 1, &plan).query_cells == plan.cells);
}

TEST_CASE("detection invariants on random weights") {
    NoGradGuard no_grad;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        ModelConfig c = oracle::tiny_model_config(seed);
        c.channels = 8;
        c.hidden = 16;
        const DealModel m(c);
        const auto scene = toy_scene(1000 + seed);
        const auto prompts = data::sample_prompts(scene, data::setting_from_int(1 + seed % 4), seed);
        const auto f = m.encode(train::scene_input(scene));
        const auto out = m.run_prompts(f, prompts, seed % 7);
        CHECK(out.n_query >= c.n_min);
        CHECK(out.n_query <= c.n_max);
        CHECK(out.decoded.detections.size() == out.n_query);
        for (const auto& d : out.decoded.detections) {
            CHECK(d.box.w > 0.0);
            CHECK(d.box.h > 0.0);
            CHECK((d.box.cx >= 0.0 && d.box.cx <= 1.0 && d.box.cy >= 0.0 && d.box.cy <= 1.0));
            CHECK((d.score >= 0.0 && d.score <= 1.0));
            const auto cats = prompts.categories();
            CHECK(std::find(cats.begin(), cats.end(), d.prompt_group) != cats.end());
        }
        for (double v : out.density.grid.data()) CHECK((v >= 0.0 && v <= 1.0));
    }
}

TEST_CASE("prompt permutation leaves density and detections unchanged") {
    NoGradGuard no_grad;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto scene = toy_scene(50 + seed);
        auto prompts = data::sample_prompts(scene, data::Setting::S2, seed);
        auto shuffled = prompts;
        std::mt19937_64 rng(seed);
        std::shuffle(shuffled.prompts.begin(), shuffled.prompts.end(), rng);
        const auto f = default_model().encode(train::scene_input(scene));
        const auto a = default_model().run_prompts(f, prompts, 3);
        const auto b = default_model().run_prompts(f, shuffled, 3);
        check_close(a.density.grid, b.density.grid, 1e-12);
        CHECK(a.decoded.query_cells == b.decoded.query_cells);
        check_close(a.decoded.boxes, b.decoded.boxes, 1e-10);
        check_close(a.decoded.scores, b.decoded.scores, 1e-10);
    }
}

TEST_CASE("hungarian examples") {
    CHECK(hungarian_match(CostMatrix(1, 1, {4.5})) == Assignment{{0, 0}});
    const CostMatrix two(2, 2, {1, 2, 3, 1});
    CHECK(hungarian_match(two) == Assignment{{0, 0}, {1, 1}});
    CHECK(assignment_cost(two, hungarian_match(two)) == 2.0);
    const CostMatrix tall(3, 2, {5, 9, 1, 8, 7, 2});
    CHECK(hungarian_match(tall) == Assignment{{1, 0}, {2, 1}});
    CHECK(hungarian_match(CostMatrix(0, 3, {})).empty());
    CHECK_THROWS_AS(hungarian_match(CostMatrix(1, 2, {1.0, std::nan("")})), ArgumentError);
    CHECK_THROWS_AS(hungarian_match(CostMatrix(1, 1, {INFINITY})), ArgumentError);
}

TEST_CASE("hungarian equals enumeration") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t rows = 1 + rng() % 7, cols = 1 + rng() % 7;
        const auto cost = oracle::random_dyadic_costs(rows, cols, rng);
        const auto a = hungarian_match(cost);
        CHECK(a.size() == std::min(rows, cols));
        std::vector<bool> used(cols, false);
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (i) CHECK(a[i - 1].first < a[i].first);
            CHECK(!used[a[i].second]);
            used[a[i].second] = true;
        }
        CHECK(assignment_cost(cost, a) == oracle::brute_force_min_cost(cost));
    }
}

TEST_CASE("matching cost terms") {
    ModelConfig c;
    const std::vector<double> scores{0.9, 0.1};
    const std::vector<NormalizedBox> preds{{0.5, 0.5, 0.1, 0.1}, {0.2, 0.2, 0.1, 0.1}};
    const std::vector<NormalizedBox> gts{{0.5, 0.5, 0.1, 0.1}};
    const auto m = matching_cost(scores, preds, gts, c);
    REQUIRE(m.rows == 2);
    REQUIRE(m.cols == 1);
    auto cls = [&](double p) {
        return c.alpha * std::pow(1 - p, c.gamma) * -std::log(p) - (1 - c.alpha) * std::pow(p, c.gamma) * -std::log(1 - p);
    };
    CHECK(m.at(0, 0) == doctest::Approx(2.0 * cls(0.9) - 2.0).epsilon(1e-12));
    const Box pb = to_pixels(preds[1], 1, 1), gb = to_pixels(gts[0], 1, 1);
    CHECK(m.at(1, 0) == doctest::Approx(2.0 * cls(0.1) + 5.0 * 0.6 - 2.0 * eval::giou(pb, gb)).epsilon(1e-12));
}

TEST_CASE("density targets") {
    using data::Annotation;
    std::vector<Annotation> seven;
    for (int i = 0; i < 7; ++i) seven.push_back({{8.0 * i + 1, 20, 4, 4}, 0});
    const std::vector<CategoryId> zero{0};
    CHECK(ops::sum(build_density_target(seven, zero, 8, 16, 16)).item() == 7.0);

    std::vector<Annotation> six;
    for (int i = 0; i < 5; ++i) six.push_back({{8.0 * i + 1, 40, 4, 4}, 0});
    six.push_back({{2, 41, 3, 3}, 0});  // center shares a cell with the first
    CHECK(ops::sum(build_density_target(six, zero, 8, 16, 16)).item() == 5.0);

    const std::vector<CategoryId> one{1};
    CHECK(ops::sum(build_density_target(seven, one, 8, 16, 16)).item() == 0.0);

    const Tensor t = build_density_target(std::vector<Annotation>{{{17, 9, 4, 4}, 0}}, zero, 8, 4, 4);
    CHECK(t.shape() == Shape{1, 1, 4, 4});
    CHECK(t.at(1 * 4 + 2) == 1.0);  // center (19, 11) -> row 1, column 2

    const Tensor edge = build_density_target(std::vector<Annotation>{{{28, 28, 4, 4}, 0}}, zero, 8, 4, 4);
    CHECK(edge.at(15) == 1.0);  // center on the far boundary stays in the grid
}

TEST_CASE("density target counts equal object counts for distinct cells") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        const auto scene = toy_scene(rng());
        const std::vector<CategoryId> prompted{static_cast<CategoryId>(rng() % 2)};
        const auto objects = prompted_annotations(scene.annotations, prompted);
        std::set<std::pair<long, long>> cells;
        for (const auto& a : objects) cells.insert({std::lround(std::floor(a.box.cx() / 8)), std::lround(std::floor(a.box.cy() / 8))});
        const double total = ops::sum(build_density_target(scene.annotations, prompted, 8, 16, 16)).item();
        CHECK(total == static_cast<double>(cells.size()));
        if (cells.size() == objects.size()) CHECK(total == static_cast<double>(objects.size()));
    }
}

TEST_CASE("loss on a perfect prediction") {
    ModelConfig c;
    const std::vector<NormalizedBox> targets{{0.3, 0.4, 0.1, 0.05}, {0.7, 0.2, 0.06, 0.08}};
    DecoderOutput d;
    d.scores = Tensor::full({2, 1}, 1.0);
    d.boxes = Tensor::from_data({2, 4}, {0.3, 0.4, 0.1, 0.05, 0.7, 0.2, 0.06, 0.08});
    const Tensor dm_gt = Tensor::from_data({1, 1, 2, 2}, {1, 0, 0, 1});
    const DensityMap dm{dm_gt.clone(), 8};
    const Assignment a{{0, 0}, {1, 1}};
    const auto l = compute_losses(d, targets, a, dm, dm_gt, 1.0, c);
    CHECK(l.regression == doctest::Approx(0.0));
    CHECK(l.classification <= 1e-5);
    CHECK(l.density <= 1e-5);
    CHECK(l.total.item() <= 1e-5);
}

TEST_CASE("loss terms and lambda") {
    ModelConfig c;
    const std::vector<NormalizedBox> targets{{0.5, 0.5, 0.2, 0.2}};
    DecoderOutput d;
    d.scores = Tensor::from_data({2, 1}, {0.7, 0.2});
    d.boxes = Tensor::from_data({2, 4}, {0.55, 0.5, 0.2, 0.2, 0.1, 0.1, 0.1, 0.1});
    const Tensor dm_gt = Tensor::from_data({1, 1, 1, 2}, {1, 0});
    const Assignment a{{0, 0}};
    const auto base = compute_losses(d, targets, a, DensityMap{Tensor::from_data({1, 1, 1, 2}, {0.6, 0.3}), 8}, dm_gt, 0.0, c);
    const auto moved = compute_losses(d, targets, a, DensityMap{Tensor::from_data({1, 1, 1, 2}, {0.1, 0.9}), 8}, dm_gt, 0.0, c);
    CHECK(base.total.item() == moved.total.item());

    // L1 over 4 coordinates per matched pair, normalised by the match count.
    CHECK(base.l1 == doctest::Approx(0.05).epsilon(1e-12));
    const double g = eval::giou(Box{0.35, 0.4, 0.2, 0.2}, Box{0.4, 0.4, 0.2, 0.2});
    CHECK(base.giou == doctest::Approx(1.0 - g).epsilon(1e-12));
    CHECK(base.regression == doctest::Approx(5.0 * base.l1 + 2.0 * base.giou).epsilon(1e-12));
    const double fl_pos = 0.25 * 0.3 * 0.3 * -std::log(0.7);
    const double fl_neg = 0.75 * 0.2 * 0.2 * -std::log(0.8);
    CHECK(base.classification == doctest::Approx(fl_pos + fl_neg).epsilon(1e-12));

    const auto weighted = compute_losses(d, targets, a, DensityMap{Tensor::from_data({1, 1, 1, 2}, {0.6, 0.3}), 8}, dm_gt, 2.0, c);
    CHECK(weighted.total.item() == doctest::Approx(base.total.item() + 2.0 * weighted.density).epsilon(1e-12));
}

TEST_CASE("full loss gradient over all parameters") {
    const auto lp = oracle::full_loss_problem(17);
    INFO(lp.problem.shape_note);
    CHECK(lp.matched > 0);
    const auto r = check_gradients(lp.problem.forward, lp.problem.inputs);
    CHECK(r.worst() <= 1e-4);
}
