// Runs every primary acceptance criterion and prints one PASS/FAIL line per
// criterion. Trained toy models are cached under --cache.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <nlohmann/json.hpp>
#include <random>
#include <set>
#include <sstream>

#include "deal/data/generator.hpp"
#include "deal/data/preprocess.hpp"
#include "deal/eval/evaluate.hpp"
#include "deal/model/targets.hpp"
#include "deal/service/infer.hpp"
#include "deal/service/run_config.hpp"
#include "deal/tensor/checkpoint.hpp"
#include "deal/tensor/gradcheck.hpp"
#include "deal/train/pgcpp.hpp"
#include "loss_problem.hpp"
#include "oracles.hpp"
#include "pgcpp_checks.hpp"
#include "preprocess_vectors.hpp"
#include "service_checks.hpp"

using namespace deal;

namespace {

// Bump when a code change invalidates cached checkpoints.
constexpr const char* kCacheTag = "toy-v3";
constexpr std::size_t kSeeds = 5;
constexpr std::size_t kTrainScenes = 2000;
constexpr std::size_t kTestScenes = 200;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* pattern, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, pattern, args...);
    return buf;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// 1. Gradient suite.
Outcome gradient_suite() {
    constexpr int kConfigs = 20;
    constexpr double kTol = 1e-4;
    const auto start = Clock::now();
    std::mt19937_64 rng(424242);
    double worst = 0.0;
    std::string worst_case;
    std::size_t failures = 0, checks = 0;
    for (const auto& c : oracle::differentiable_op_cases()) {
        for (int rep = 0; rep < kConfigs; ++rep) {
            auto problem = c.make(rng);
            const double err = check_gradients(problem.forward, problem.inputs).worst();
            ++checks;
            failures += err > kTol;
            if (err > worst) {
                worst = err;
                worst_case = c.name + " " + problem.shape_note;
            }
        }
    }
    const std::size_t ops = checks / kConfigs;
    double loss_worst = 0.0;
    std::size_t redraws = 0;
    for (int rep = 0; rep < kConfigs; ++rep) {
        auto lp = oracle::full_loss_problem(9000 + rep);
        redraws += lp.redraws;
        const double err = check_gradients(lp.problem.forward, lp.problem.inputs).worst();
        ++checks;
        failures += err > kTol;
        loss_worst = std::max(loss_worst, err);
    }
    const double elapsed = seconds_since(start);
    Outcome o;
    o.pass = failures == 0 && elapsed <= 300.0;
    o.detail = fmt("%zu ops x %d configs + %d full-loss configs (%zu kink redraws); worst op err %.2e (%s), worst loss err "
                   "%.2e; %zu over 1e-4; %.0f s (limit 300 s)",
                   ops, kConfigs, kConfigs, redraws, worst, worst_case.c_str(), loss_worst, failures, elapsed);
    return o;
}

// 2. Matcher optimality.
Outcome matcher_optimality() {
    const auto start = Clock::now();
    std::mt19937_64 rng(777);
    std::uniform_int_distribution<std::size_t> size(1, 7);
    std::size_t mismatches = 0, invalid = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const auto cost = oracle::random_dyadic_costs(size(rng), size(rng), rng);
        const auto a = model::hungarian_match(cost);
        std::set<std::size_t> rows, cols;
        for (const auto& [r, c] : a) {
            rows.insert(r);
            cols.insert(c);
        }
        const std::size_t expected = std::min(cost.rows, cost.cols);
        invalid += a.size() != expected || rows.size() != expected || cols.size() != expected;
        mismatches += model::assignment_cost(cost, a) != oracle::brute_force_min_cost(cost);
    }
    const double elapsed = seconds_since(start);
    return {mismatches == 0 && invalid == 0 && elapsed <= 30.0,
            fmt("200 matrices up to 7x7: %zu cost mismatches, %zu invalid assignments; %.2f s (limit 30 s)", mismatches,
                invalid, elapsed)};
}

// 3. AP oracle equivalence and forced cases.
Outcome ap_equivalence() {
    const auto start = Clock::now();
    std::mt19937_64 rng(31337);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto images = oracle::random_ap_instance(rng);
        for (double t : eval::kIouThresholds) {
            worst = std::max(worst, std::abs(eval::compute_ap(images, t).ap - oracle::prefix_sweep_ap(images, t)));
        }
    }
    // One detection at IoU 0.6 with its ground truth.
    const std::vector<eval::ImageDetections> pair{{{{Box{0, 0, 6, 10}, 0.9}}, {Box{0, 0, 10, 10}}}};
    const bool forced = eval::compute_ap(pair, 0.5).ap == 1.0 && eval::compute_ap(pair, 0.75).ap == 0.0;

    data::GeneratorConfig g;
    const auto dataset = data::generate_dataset(g, 20, 5, "echo");
    bool echo = true;
    for (int s = 1; s <= 4; ++s) {
        eval::EvalOptions options;
        options.setting = data::setting_from_int(s);
        const auto report = eval::evaluate_setting(eval::GroundTruthEcho{}, dataset, options);
        for (const auto& [t, ap] : report.ap_by_iou) echo &= ap == 1.0;
        for (const auto& [name, ap] : report.ap_by_scale) echo &= report.scale_empty.at(name) || ap == 1.0;
    }
    const double elapsed = seconds_since(start);
    return {worst <= 1e-9 && forced && echo && elapsed <= 30.0,
            fmt("100 random instances x 3 thresholds: max |diff| %.1e; IoU-0.6 pair %s; GT echo %s; %.2f s (limit 30 s)",
                worst, forced ? "ok" : "WRONG", echo ? "1.0 everywhere" : "WRONG", elapsed)};
}

// 4. Density-target counting.
Outcome density_counting() {
    std::size_t qualifying = 0, wrong = 0;
    const std::vector<std::vector<data::CategoryId>> choices{{0}, {1}, {0, 1}};
    for (std::uint64_t i = 0; i < 500; ++i) {
        const auto scene = data::generate_scene(data::GeneratorConfig{}, 60000 + i, "d");
        const auto& prompted = choices[i % 3];
        const std::size_t gh = scene.height() / model::kDensityStride, gw = scene.width() / model::kDensityStride;
        std::set<std::size_t> cells;
        std::size_t count = 0;
        for (const auto& a : scene.annotations) {
            if (std::find(prompted.begin(), prompted.end(), a.category) == prompted.end()) continue;
            ++count;
            const auto cx = std::min(gw - 1, static_cast<std::size_t>(a.box.cx() / model::kDensityStride));
            const auto cy = std::min(gh - 1, static_cast<std::size_t>(a.box.cy() / model::kDensityStride));
            cells.insert(cy * gw + cx);
        }
        if (cells.size() != count) continue;
        ++qualifying;
        const Tensor target = model::build_density_target(scene.annotations, prompted, model::kDensityStride, gh, gw);
        double total = 0.0;
        for (double v : target.data()) total += v;
        wrong += total != static_cast<double>(count);
    }
    return {wrong == 0 && qualifying > 0,
            fmt("500 scenes, %zu with distinct prompted centre cells: %zu count mismatches", qualifying, wrong)};
}

// 5. Prompting-cycle structure.
Outcome cycle_structure(const model::DealModel& model) {
    NoGradGuard no_grad;
    std::mt19937_64 rng(5150);
    std::size_t violations = 0;
    std::string first;
    for (int trial = 0; trial < 200; ++trial) {
        const auto scene = data::generate_scene(data::GeneratorConfig{}, 70000 + trial, "c");
        const auto kind = trial % 2 ? train::CycleKind::Inter : train::CycleKind::Intra;
        const std::size_t k = 1 + static_cast<std::size_t>(trial / 2) % 3;
        const auto present = scene.present_categories();
        const auto category = present[rng() % present.size()];
        const auto cycle = train::run_cycle(model, scene, kind, category, train::CycleOptions{k}, rng());
        const std::size_t initial = kind == train::CycleKind::Inter ? present.size() : 1;
        const auto audit = oracle::audit_cycle(cycle, scene, initial, k, train::WorstPolicy::Safe);
        if (!audit.ok() && first.empty()) first = "trial " + std::to_string(trial) + ": " + audit.violations.front();
        violations += audit.violations.size();
    }
    return {violations == 0, fmt("200 cycles (intra/inter, K in {1,2,3}, safe policy): %zu violations%s%s", violations,
                                 first.empty() ? "" : "; first: ", first.c_str())};
}

// 8. Preprocessing vectors.
Outcome preprocessing_vectors() {
    auto blank = [](std::size_t w, std::size_t h, const std::vector<Box>& boxes) {
        data::Scene s;
        s.id = "v";
        s.image = data::Image(w, h);
        for (const auto& b : boxes) s.annotations.push_back({b, 0});
        return s;
    };
    std::size_t wrong = 0, total = 0;
    for (const auto& v : oracle::filter_vectors()) {
        ++total;
        wrong += data::filter_large_objects(blank(v.width, v.height, v.boxes)) != v.keep;
    }
    for (const auto& v : oracle::offset_vectors()) {
        ++total;
        wrong += data::tile_offsets(v.extent, data::kUnifiedResolution) != v.offsets;
    }
    for (const auto& v : oracle::tiling_vectors()) {
        ++total;
        const auto tiles = data::unify_resolution(blank(v.width, v.height, v.boxes));
        std::vector<oracle::TileBox> got;
        bool sizes = tiles.size() == v.tiles;
        for (std::size_t t = 0; t < tiles.size(); ++t) {
            sizes &= tiles[t].width() == data::kUnifiedResolution && tiles[t].height() == data::kUnifiedResolution;
            for (const auto& a : tiles[t].annotations) got.push_back({t, a.box});
        }
        bool same = sizes && got.size() == v.expected.size();
        for (std::size_t i = 0; same && i < got.size(); ++i) {
            same = got[i].tile == v.expected[i].tile && got[i].box == v.expected[i].box;
        }
        wrong += !same;
    }
    return {wrong == 0, fmt("%zu filter / offset / tiling vectors: %zu mismatches", total, wrong)};
}

// 9. Service contract.
Outcome service_contract(const std::filesystem::path& checkpoint, const data::Dataset& test) {
    service::ServiceState state;
    state.model = service::load_model(model::ModelConfig{}, checkpoint);
    for (std::size_t i = 0; i < 40; ++i) state.images[test.scenes[i].id] = {{}, test.scenes[i].image};
    std::mt19937_64 rng(99);
    std::size_t violations = 0, requests = 0;
    double slowest = 0.0;
    std::string first;
    auto note = [&](const std::string& what) {
        ++violations;
        if (first.empty()) first = what;
    };
    auto timed = [&](const service::InferRequest& request) {
        const auto start = Clock::now();
        auto r = service::handle_infer(request, state);
        slowest = std::max(slowest, seconds_since(start));
        ++requests;
        return r;
    };
    for (std::size_t i = 0; i < 40; ++i) {
        const auto& scene = test.scenes[i];
        service::InferRequest request;
        request.image_id = scene.id;
        const std::size_t k = 1 + i % 3;
        for (std::size_t j = 0; j < std::min(k, scene.annotations.size()); ++j) {
            request.prompts.push_back(data::prompt_in_box(scene.annotations[j], 0.2, rng));
        }
        const auto r = timed(request);
        for (const auto& v : oracle::audit_response(r, request.prompts, scene.width(), scene.height(), 0.2)) {
            note(scene.id + ": " + v);
        }
        if (service::infer_response_to_json({r.detections, r.n_query, r.density_map, 0.0}) !=
            service::infer_response_to_json([&] {
                auto again = timed(request);
                again.timing_ms = 0.0;
                return again;
            }())) {
            note(scene.id + ": repeated request differs");
        }
        // Duplicating the first prompt must not change the answer.
        auto single = request;
        single.prompts.resize(1);
        single.score_threshold = 0.0;
        auto doubled = single;
        doubled.prompts.push_back(single.prompts.front());
        const auto a = timed(single), b = timed(doubled);
        bool same = a.n_query == b.n_query && a.detections.size() == b.detections.size();
        for (std::size_t d = 0; same && d < a.detections.size(); ++d) {
            same = std::abs(a.detections[d].score - b.detections[d].score) <= 1e-9 &&
                   std::abs(a.detections[d].box.cx - b.detections[d].box.cx) <= 1e-9 &&
                   std::abs(a.detections[d].box.w - b.detections[d].box.w) <= 1e-9;
        }
        for (std::size_t c = 0; same && c < a.density_map.values.size(); ++c) {
            same = std::abs(a.density_map.values[c] - b.density_map.values[c]) <= 1e-9;
        }
        if (!same) note(scene.id + ": duplicate prompt changed the response");
    }
    auto status = [&](const service::InferRequest& r, const service::ServiceState& s) {
        try {
            service::handle_infer(r, s);
        } catch (const service::InferError& e) {
            return std::make_pair(e.status(), std::string(e.what()));
        }
        return std::make_pair(200, std::string());
    };
    service::InferRequest empty;
    empty.image_id = test.scenes[0].id;
    const auto zero = status(empty, state);
    if (zero.first != 400 || zero.second != service::kZeroPromptMessage) note("zero-prompt request not rejected");
    auto outside = empty;
    outside.prompts = {{5, 5, 0}, {500, 5, 0}};
    const auto oob = status(outside, state);
    if (oob.first != 400 || oob.second.find("prompt 1") == std::string::npos) note("out-of-bounds prompt not rejected");
    service::ServiceState unloaded;
    unloaded.images = state.images;
    auto valid = empty;
    valid.prompts = {{5, 5, 0}};
    if (status(valid, unloaded).first != 503) note("missing checkpoint not a 5xx error");

    return {violations == 0 && slowest <= 1.0,
            fmt("%zu requests on a trained toy checkpoint: %zu violations%s%s; slowest %.0f ms (limit 1000 ms)", requests,
                violations, first.empty() ? "" : "; first: ", first.c_str(), slowest * 1e3)};
}

struct SeedRun {
    std::shared_ptr<model::DealModel> model;
    std::filesystem::path checkpoint;
    double train_seconds = 0.0;
    bool cached = false;
    data::Dataset test;
};

train::TrainConfig toy_training(std::uint64_t seed) {
    train::TrainConfig c;
    c.seed = seed;
    c.epochs = 3 * train::kOneXEpochs;
    c.checkpoint_every = 0;
    return c;
}

data::Dataset toy_split(std::uint64_t seed, std::size_t count, std::uint64_t stream, const char* prefix) {
    return data::generate_dataset(data::GeneratorConfig{}, count, data::derive_seed(seed, stream), prefix);
}

SeedRun trained(std::uint64_t seed, const std::filesystem::path& cache) {
    SeedRun run;
    run.test = toy_split(seed, kTestScenes, 2, "test");
    model::ModelConfig mc;
    mc.init_seed = seed;
    service::RunConfig description;
    description.seed = seed;
    description.model = mc;
    description.training = toy_training(seed);
    const auto key = std::hash<std::string>{}(std::string(kCacheTag) + service::run_config_to_json(description));
    const auto stem = fmt("seed%llu_%016zx", static_cast<unsigned long long>(seed), key);
    run.checkpoint = cache / (stem + ".ckpt");
    const auto sidecar = cache / (stem + ".json");
    run.model = std::make_shared<model::DealModel>(mc);
    if (std::filesystem::exists(run.checkpoint) && std::filesystem::exists(sidecar)) {
        assign_checkpoint(load_checkpoint(run.checkpoint), run.model->parameters().all());
        run.train_seconds = nlohmann::json::parse(std::ifstream(sidecar))["train_seconds"].get<double>();
        run.cached = true;
        return run;
    }
    const auto data = toy_split(seed, kTrainScenes, 1, "train");
    const auto scratch = cache / (stem + "_run");
    const auto start = Clock::now();
    const auto result = train::train(*run.model, data, toy_training(seed), scratch);
    run.train_seconds = seconds_since(start);
    std::filesystem::copy_file(result.final_checkpoint, run.checkpoint, std::filesystem::copy_options::overwrite_existing);
    std::filesystem::remove_all(scratch);
    std::ofstream(sidecar) << nlohmann::json{{"train_seconds", run.train_seconds}}.dump() << '\n';
    return run;
}

struct SeedMetrics {
    double s2 = 0, s3 = 0, s3_three = 0, s4 = 0, s4_off = 0;
    std::vector<double> s3_jitter;  // at kJitters
};

const std::vector<double> kJitters{0.1, 0.25};

SeedMetrics evaluate_seed(const SeedRun& run, std::uint64_t seed) {
    const eval::DealDetector detector(*run.model);
    auto ap = [&](data::Setting s, std::size_t points, double jitter, std::optional<double>* off = nullptr) {
        eval::EvalOptions o;
        o.setting = s;
        o.seed = seed;
        o.sampling.points = points;
        o.sampling.jitter = jitter;
        const auto report = eval::evaluate_setting(detector, run.test, o);
        if (off) *off = report.non_prompted_fraction;
        return report.ap_by_iou.at(0.5);
    };
    SeedMetrics m;
    m.s2 = ap(data::Setting::S2, 1, 0.0);
    m.s3 = ap(data::Setting::S3, 1, 0.0);
    m.s3_three = ap(data::Setting::S3, 3, 0.0);
    std::optional<double> off;
    m.s4 = ap(data::Setting::S4, 1, 0.0, &off);
    m.s4_off = off.value_or(1.0);
    for (double j : kJitters) m.s3_jitter.push_back(ap(data::Setting::S3, 1, j));
    return m;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance suite"};
    std::string cache = "acceptance_cache";
    std::vector<int> only;
    app.add_option("--cache", cache, "Directory for trained toy checkpoints");
    app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 9));
    CLI11_PARSE(app, argc, argv);
    std::filesystem::create_directories(cache);
    auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

    std::map<int, Outcome> outcomes;
    auto run = [&](int id, const std::function<Outcome()>& f) {
        if (!wanted(id)) return;
        try {
            outcomes[id] = f();
        } catch (const std::exception& e) {
            outcomes[id] = {false, std::string("threw: ") + e.what()};
        }
        std::cerr << "criterion " << id << " done\n";
    };

    run(1, gradient_suite);
    run(2, matcher_optimality);
    run(3, ap_equivalence);
    run(4, density_counting);
    run(8, preprocessing_vectors);

    const bool need_models = wanted(5) || wanted(6) || wanted(7) || wanted(9);
    std::vector<SeedRun> runs;
    std::vector<SeedMetrics> metrics;
    std::string training_error;
    if (need_models) {
        try {
            for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
                runs.push_back(trained(seed, cache));
                std::cerr << "seed " << seed << (runs.back().cached ? " loaded from cache" : " trained") << " ("
                          << runs.back().train_seconds << " s)\n";
                if (wanted(6) || wanted(7)) metrics.push_back(evaluate_seed(runs.back(), seed));
            }
        } catch (const std::exception& e) {
            training_error = std::string("training failed: ") + e.what();
        }
    }
    auto needs_runs = [&](int id, const std::function<Outcome()>& f) {
        run(id, [&] { return training_error.empty() ? f() : Outcome{false, training_error}; });
    };

    needs_runs(5, [&] { return cycle_structure(*runs.front().model); });
    needs_runs(6, [&] {
        std::vector<double> s2, off, minutes;
        for (std::size_t i = 0; i < metrics.size(); ++i) {
            s2.push_back(metrics[i].s2);
            off.push_back(metrics[i].s4_off);
            minutes.push_back(runs[i].train_seconds / 60.0);
        }
        const double worst_minutes = *std::max_element(minutes.begin(), minutes.end());
        return Outcome{median(s2) >= 0.5 && median(off) <= 0.10 && worst_minutes <= 60.0,
                       fmt("%zu seeds, %zu train / %zu test scenes: median S2 AP0.5 %.3f (>= 0.50); median S4 "
                           "non-prompted fraction %.3f (<= 0.10); longest training %.1f min (<= 60)",
                           metrics.size(), kTrainScenes, kTestScenes, median(s2), median(off), worst_minutes)};
    });
    needs_runs(7, [&] {
        std::vector<double> s3, s4, three;
        std::vector<std::vector<double>> jitter(kJitters.size());
        for (const auto& m : metrics) {
            s3.push_back(m.s3);
            s4.push_back(m.s4);
            three.push_back(m.s3_three);
            for (std::size_t j = 0; j < kJitters.size(); ++j) jitter[j].push_back(m.s3_jitter[j]);
        }
        double jitter_shift = 0.0;
        std::string shifts;
        for (std::size_t j = 0; j < kJitters.size(); ++j) {
            const double d = median(jitter[j]) - median(s3);
            jitter_shift = std::max(jitter_shift, std::abs(d));
            shifts += fmt(" %.0f%%: %+.3f", kJitters[j] * 100, d);
        }
        const bool setting_trend = median(s4) >= median(s3) - 0.02;
        const bool prompt_trend = median(three) >= median(s3) - 0.01;
        const bool jitter_trend = jitter_shift <= 0.05;
        return Outcome{setting_trend && prompt_trend && jitter_trend,
                       fmt("medians: S4 %.3f vs S3 %.3f (%s); 3-point %.3f vs 1-point %.3f (%s); S3 jitter shift%s (%s)",
                           median(s4), median(s3), setting_trend ? "ok" : "FAIL", median(three), median(s3),
                           prompt_trend ? "ok" : "FAIL", shifts.c_str(), jitter_trend ? "ok" : "FAIL")};
    });
    needs_runs(9, [&] { return service_contract(runs.front().checkpoint, runs.front().test); });

    static const char* names[] = {"",
                                  "gradient suite",
                                  "matcher optimality",
                                  "AP oracle equivalence",
                                  "density-target counting",
                                  "prompting-cycle structure",
                                  "toy end-to-end",
                                  "trend reproduction",
                                  "preprocessing vectors",
                                  "service contract"};
    bool all = true;
    for (const auto& [id, o] : outcomes) {
        std::cout << "criterion " << id << " (" << names[id] << "): " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail
                  << '\n';
        all &= o.pass;
    }
    return all ? 0 : 1;
}
