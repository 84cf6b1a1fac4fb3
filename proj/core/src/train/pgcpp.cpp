#include "deal/train/pgcpp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numbers>
#include <numeric>

#include "deal/data/generator.hpp"
#include "deal/eval/metrics.hpp"
#include "deal/model/losses.hpp"
#include "deal/model/targets.hpp"
#include "deal/tensor/checkpoint.hpp"

namespace deal::train {

namespace {

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

std::vector<NormalizedBox> normalized_targets(std::span<const data::Annotation> gts, double w, double h) {
    std::vector<NormalizedBox> out;
    out.reserve(gts.size());
    for (const auto& a : gts) out.push_back(normalize(a.box, w, h));
    return out;
}

}  // namespace

Tensor scene_input(const data::Scene& scene) {
    Tensor t = scene.image.to_tensor(round_up(scene.height(), model::kInputMultiple),
                                     round_up(scene.width(), model::kInputMultiple));
    // Centre and scale so colour differences are not swamped by the mean.
    for (auto& v : t.mutable_data()) v = (v - kInputMean) / kInputScale;
    return t;
}

MatchQuality match_quality(const model::Detection& detection, const data::Annotation& gt, double image_width,
                           double image_height) {
    MatchQuality q;
    q.score = std::clamp(detection.score, 0.0, 1.0);
    q.iou = eval::iou(to_pixels(detection.box, image_width, image_height), gt.box);
    q.value = q.score * q.iou;
    return q;
}

std::string policy_name(WorstPolicy policy) { return policy == WorstPolicy::Safe ? "safe" : "literal"; }

WorstPolicy policy_from_name(const std::string& name) {
    if (name == "safe") return WorstPolicy::Safe;
    if (name == "literal") return WorstPolicy::Literal;
    throw std::invalid_argument("unknown worst-selection policy '" + name + "' (expected safe or literal)");
}

Selection select_worst(std::span<const model::Detection> detections, std::span<const data::Annotation> gts,
                       double image_width, double image_height, WorstPolicy policy,
                       const model::Assignment& assignment) {
    if (gts.empty()) throw SelectionError("select_worst: no ground truth of a prompted category");
    Selection sel;
    if (policy == WorstPolicy::Safe) {
        sel.qualities.assign(gts.size(), 0.0);
        for (std::size_t g = 0; g < gts.size(); ++g) {
            for (const auto& det : detections) {
                sel.qualities[g] = std::max(sel.qualities[g], match_quality(det, gts[g], image_width, image_height).value);
            }
        }
        sel.index = static_cast<std::size_t>(std::min_element(sel.qualities.begin(), sel.qualities.end()) -
                                             sel.qualities.begin());
        const auto& box = gts[sel.index].box;
        sel.prompt = data::PointPrompt{box.cx(), box.cy(), gts[sel.index].category};
        return sel;
    }
    if (assignment.empty()) throw SelectionError("select_worst: literal policy needs a detection-to-GT assignment");
    // Qualities of the matched detections, indexed like `assignment`.
    std::size_t best = 0;
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        const auto [d, g] = assignment[i];
        if (d >= detections.size() || g >= gts.size()) throw SelectionError("select_worst: assignment out of range");
        sel.qualities.push_back(match_quality(detections[d], gts[g], image_width, image_height).value);
        if (sel.qualities[i] < sel.qualities[best]) best = i;
    }
    const auto [d, g] = assignment[best];
    sel.index = d;
    const auto& box = detections[d].box;
    sel.prompt = data::PointPrompt{std::clamp(box.cx, 0.0, 1.0) * image_width,
                                   std::clamp(box.cy, 0.0, 1.0) * image_height, gts[g].category};
    return sel;
}

std::vector<data::PointPrompt> initial_points(const data::Scene& scene, std::mt19937_64& rng) {
    std::vector<data::PointPrompt> out;
    for (auto c : scene.present_categories()) {
        const auto members = scene.indices_of(c);
        std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
        out.push_back(data::uniform_prompt_in_box(scene.annotations[members[pick(rng)]], rng));
    }
    return out;
}

CycleState run_cycle(const model::DealModel& model, const model::ImageFeatures& features, const data::Scene& scene,
                     CycleKind kind, const data::PointPromptSet& initial, const CycleOptions& options) {
    if (initial.size() == 0) throw SelectionError("run_cycle: empty initial prompt set");
    CycleState state;
    state.kind = kind;
    state.category = initial.prompts.front().category;
    state.prompts = initial;

    const auto categories = initial.categories();
    const auto gts = model::prompted_annotations(scene.annotations, categories);
    if (gts.empty()) throw SelectionError("run_cycle: scene " + scene.id + " has no object of the prompted categories");
    const double w = static_cast<double>(features.pyramid.image_width);
    const double h = static_cast<double>(features.pyramid.image_height);
    const auto targets = normalized_targets(gts, w, h);
    const auto& cfg = model.config();
    const std::size_t grid_h = features.enhanced.s3.dim(2), grid_w = features.enhanced.s3.dim(3);
    const Tensor dm_gt = model::build_density_target(gts, categories, model::kDensityStride, grid_h, grid_w);

    std::vector<Tensor> losses;
    for (std::size_t k = 0; k <= options.steps; ++k) {
        const auto out = model.run_prompts(features, state.prompts, targets.size());
        for (const Tensor* t : {&out.decoded.scores, &out.decoded.boxes, &out.density.grid}) {
            for (double v : t->data()) {
                if (!std::isfinite(v)) throw NonFiniteError("run_cycle: non-finite prediction on scene " + scene.id);
            }
        }
        const auto assignment = model::match_detections(out.decoded, targets, cfg);
        const auto loss =
            model::compute_losses(out.decoded, targets, assignment, out.density, dm_gt, options.lambda, cfg);
        CycleStep step;
        step.prompt_count = state.prompts.size();
        step.classification = loss.classification;
        step.regression = loss.regression;
        step.density = loss.density;
        step.total = loss.total.item();
        step.detections = out.decoded.detections;
        losses.push_back(loss.total);
        if (k < options.steps) {
            step.selection = select_worst(out.decoded.detections, gts, w, h, options.policy, assignment);
            state.prompts.prompts.push_back(step.selection->prompt);
            ++state.step;
        }
        state.history.push_back(std::move(step));
    }
    state.loss = ops::mul_scalar(ops::add_n(losses), 1.0 / static_cast<double>(losses.size()));
    return state;
}

CycleState run_cycle(const model::DealModel& model, const data::Scene& scene, CycleKind kind,
                     data::CategoryId category, const CycleOptions& options, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    data::PointPromptSet initial;
    initial.seed = seed;
    if (kind == CycleKind::Intra) {
        const auto members = scene.indices_of(category);
        if (members.empty()) {
            throw SelectionError("run_cycle: scene " + scene.id + " has no object of category " +
                                 std::to_string(category));
        }
        std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
        initial.prompts.push_back(data::uniform_prompt_in_box(scene.annotations[members[pick(rng)]], rng));
    } else {
        initial.prompts = initial_points(scene, rng);
    }
    const auto features = model.encode(scene_input(scene));
    return run_cycle(model, features, scene, kind, initial, options);
}

ImageLoss image_loss(const model::DealModel& model, const data::Scene& scene, const CycleOptions& options,
                     std::mt19937_64& rng) {
    ImageLoss out;
    const auto features = model.encode(scene_input(scene));
    const auto starts = initial_points(scene, rng);
    std::vector<Tensor> sums;
    std::size_t passes = 0;
    for (const auto& p : starts) {
        data::PointPromptSet initial;
        initial.prompts = {p};
        out.cycles.push_back(run_cycle(model, features, scene, CycleKind::Intra, initial, options));
    }
    data::PointPromptSet joint;
    joint.prompts = starts;
    out.cycles.push_back(run_cycle(model, features, scene, CycleKind::Inter, joint, options));
    for (const auto& c : out.cycles) {
        const double n = static_cast<double>(c.history.size());
        sums.push_back(ops::mul_scalar(c.loss, n));
        passes += c.history.size();
    }
    out.loss = ops::mul_scalar(ops::add_n(sums), 1.0 / static_cast<double>(passes));
    return out;
}

void validate(const TrainConfig& c) {
    auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
    if (c.cycles < 1) fail("cycles (T) must be at least 1");
    if (c.inner_steps < 1) fail("inner_steps (K) must be at least 1");
    if (c.epochs < 1) fail("epochs must be at least 1");
    if (c.batch_size < 1) fail("batch_size must be at least 1");
    if (!(c.lambda >= 0.0)) fail("lambda must be non-negative");
    if (!(c.optimizer.learning_rate > 0.0)) fail("learning_rate must be positive");
    if (!(c.min_lr_fraction >= 0.0 && c.min_lr_fraction <= 1.0)) fail("min_lr_fraction must lie in [0,1]");
}

double learning_rate_at(const TrainConfig& config, std::size_t step, std::size_t total_steps) {
    const double base = config.optimizer.learning_rate;
    if (step < config.warmup_steps) {
        return base * static_cast<double>(step + 1) / static_cast<double>(config.warmup_steps);
    }
    const std::size_t span = total_steps > config.warmup_steps ? total_steps - config.warmup_steps : 1;
    const double progress = std::min(1.0, static_cast<double>(step - config.warmup_steps) / static_cast<double>(span));
    const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    return base * (config.min_lr_fraction + (1.0 - config.min_lr_fraction) * cosine);
}

std::string to_json_line(const StepRecord& r) {
    nlohmann::json j{{"step", r.step},
                     {"epoch", r.epoch},
                     {"scene", r.scene},
                     {"cycle", r.cycle},
                     {"k", r.k},
                     {"L_cls", r.classification},
                     {"L_reg", r.regression},
                     {"L_density", r.density},
                     {"total", r.total}};
    return j.dump();
}

TrainResult train(model::DealModel& model, const data::Dataset& dataset, const TrainConfig& config,
                  const std::filesystem::path& output, const ProgressCallback& progress) {
    validate(config);
    if (dataset.scenes.empty()) throw std::invalid_argument("train: empty dataset");
    std::filesystem::create_directories(output);
    std::ofstream log(output / "metrics.ndjson", std::ios::trunc);
    if (!log) throw std::runtime_error("train: cannot write " + (output / "metrics.ndjson").string());

    const auto& params = model.parameters().all();
    const std::size_t n = dataset.scenes.size();
    const std::size_t units_per_epoch = n * config.cycles;
    const std::size_t steps_per_epoch = (units_per_epoch + config.batch_size - 1) / config.batch_size;
    const std::size_t total_steps = steps_per_epoch * config.epochs;
    const CycleOptions options{config.inner_steps, config.lambda, config.policy};

    optim::OptimizerState state;
    optim::OptimizerConfig opt = config.optimizer;
    TrainResult result;
    model.parameters().zero_grad();
    std::size_t pending = 0;

    auto abort_at = [&](const std::string& scene_id) {
        log.flush();
        const auto last_good = output / "last_good.ckpt";
        save_checkpoint(last_good, params);
        throw TrainingAborted(scene_id, last_good);
    };
    std::string last_scene;

    auto apply_update = [&] {
        // Refuse to step on a poisoned gradient, so the weights stay usable.
        if (!std::isfinite(optim::global_grad_norm(params))) abort_at(last_scene);
        opt.learning_rate = learning_rate_at(config, result.optimizer_steps, total_steps);
        optim::optimizer_step(params, opt, state);
        model.parameters().zero_grad();
        ++result.optimizer_steps;
        pending = 0;
    };

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 shuffle_rng(data::derive_seed(config.seed, 0x5eed0000ULL + epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t position = 0; position < n; ++position) {
            const auto& scene = dataset.scenes[order[position]];
            std::mt19937_64 rng(data::derive_seed(config.seed, epoch * n + order[position]));
            for (std::size_t t = 0; t < config.cycles; ++t) {
                last_scene = scene.id;
                ImageLoss il;
                try {
                    il = image_loss(model, scene, options, rng);
                } catch (const NonFiniteError&) {
                    abort_at(scene.id);
                }
                const double value = il.loss.item();
                for (const auto& cycle : il.cycles) {
                    for (std::size_t k = 0; k < cycle.history.size(); ++k) {
                        const auto& s = cycle.history[k];
                        StepRecord rec{result.optimizer_steps, epoch, scene.id,
                                       cycle.kind == CycleKind::Inter ? "inter" : "intra:" + std::to_string(cycle.category),
                                       k, s.classification, s.regression, s.density, s.total};
                        log << to_json_line(rec) << '\n';
                        if (progress) progress(rec);
                    }
                }
                if (!std::isfinite(value)) abort_at(scene.id);
                ops::mul_scalar(il.loss, 1.0 / static_cast<double>(config.batch_size)).backward();
                result.last_loss = value;
                if (++pending == config.batch_size) apply_update();
            }
        }
        if (pending > 0) apply_update();
        if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof name, "epoch_%03zu.ckpt", epoch + 1);
            save_checkpoint(output / name, params);
            result.checkpoints.push_back(output / name);
        }
        log.flush();
    }
    result.final_checkpoint = output / "final.ckpt";
    save_checkpoint(result.final_checkpoint, params);
    return result;
}

}  // namespace deal::train
