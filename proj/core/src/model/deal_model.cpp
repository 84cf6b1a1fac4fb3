#include "deal/model/deal_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace deal::model {

using namespace deal::ops;

void validate(const ModelConfig& c) {
    auto fail = [](const std::string& what) { throw ConfigurationError("model config: " + what); };
    if (c.channels == 0 || c.channels % 4 != 0) fail("channels must be a positive multiple of 4");
    if (c.hidden == 0 || c.hidden % 4 != 0) fail("hidden must be a positive multiple of 4");
    if (c.heads == 0 || c.channels % c.heads != 0 || c.hidden % c.heads != 0) {
        fail("heads must divide both channels and hidden");
    }
    if (c.stem_channels == 0 || c.ffn_hidden == 0 || c.correlation_channels == 0) fail("widths must be positive");
    if (c.decoder_layers == 0) fail("decoder_layers must be at least 1");
    if (c.n_min == 0 || c.n_min > c.n_max) fail("need 1 <= n_min <= n_max");
    if (!(c.lambda >= 0.0) || !(c.alpha > 0.0 && c.alpha < 1.0) || !(c.gamma >= 0.0)) {
        fail("lambda >= 0, 0 < alpha < 1, gamma >= 0 required");
    }
    if (!(c.score_threshold >= 0.0 && c.score_threshold <= 1.0)) fail("score_threshold must lie in [0,1]");
}

double DensityMap::total() const {
    const auto v = grid.data();
    return std::accumulate(v.begin(), v.end(), 0.0);
}

std::size_t allocate_queries(const DensityMap& dm, std::size_t n_min, std::size_t n_max) {
    if (n_min > n_max) throw ArgumentError("allocate_queries: n_min > n_max");
    const double total = dm.total();
    const double rounded = std::round(total);
    if (!(rounded >= static_cast<double>(n_min))) return n_min;
    if (rounded >= static_cast<double>(n_max)) return n_max;
    return static_cast<std::size_t>(rounded);
}

std::vector<std::size_t> top_cells(std::span<const double> values, std::size_t n) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    n = std::min(n, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (values[a] != values[b]) return values[a] > values[b];
                          return a < b;
                      });
    order.resize(n);
    return order;
}

namespace {

constexpr double kPriorLogit = -4.59511985013459;  // logit(0.01)

void fill(Tensor t, double value) {
    for (auto& v : t.mutable_data()) v = value;
}

}  // namespace

DealModel::DealModel(ModelConfig config) : config_(config) {
    validate(config_);
    nn::Rng rng(config_.init_seed);
    const std::size_t c = config_.channels;
    const std::size_t d = config_.hidden;
    auto& s = store_;

    stem_ = nn::Conv2d(s, "backbone.stem", 3, config_.stem_channels, 3, 2, rng);
    for (std::size_t i = 0; i < 4; ++i) {
        const std::string name = "backbone.stage" + std::to_string(i + 2);
        stages_[i].down = nn::Conv2d(s, name + ".down", i == 0 ? config_.stem_channels : c, c, 3, 2, rng);
        for (std::size_t j = 0; j < config_.stage_depth; ++j) {
            stages_[i].body.emplace_back(s, name + ".body" + std::to_string(j), c, c, 3, 1, rng);
        }
    }

    l5_encoder_ = EncoderBlock{nn::AttentionWeights(s, "hfe.l5.attn", c, c, c, rng), nn::LayerNorm(s, "hfe.l5.norm1", c),
                               nn::LayerNorm(s, "hfe.l5.norm2", c), nn::FeedForward(s, "hfe.l5.ffn", c, 2 * c, rng)};
    lateral5_ = nn::Conv2d(s, "hfe.lateral5", c, c, 1, 1, rng);
    lateral4_ = nn::Conv2d(s, "hfe.lateral4", c, c, 1, 1, rng);
    lateral3_ = nn::Conv2d(s, "hfe.lateral3", c, c, 1, 1, rng);
    smooth4_ = nn::Conv2d(s, "hfe.smooth4", c, c, 3, 1, rng);
    smooth3_ = nn::Conv2d(s, "hfe.smooth3", c, c, 3, 1, rng);
    bottom_up_ = nn::Conv2d(s, "hfe.bottom_up", c, c, 3, 2, rng);
    fuse_reduce_ = nn::Conv2d(s, "hfe.fuse_reduce", 2 * c, c, 1, 1, rng);
    fuse_out_ = nn::Conv2d(s, "hfe.fuse_out", c, c, 3, 1, rng);

    prompt_project_ = nn::Linear(s, "prompt.project", 3 * c, d, rng);
    prompt_encoder_ =
        EncoderBlock{nn::AttentionWeights(s, "prompt.attn", d, d, d, rng), nn::LayerNorm(s, "prompt.norm1", d),
                     nn::LayerNorm(s, "prompt.norm2", d), nn::FeedForward(s, "prompt.ffn", d, config_.ffn_hidden, rng)};

    kernel_attention_ = nn::AttentionWeights(s, "density.kernel_attn", d, c, d, rng);
    kernel_norm_ = nn::LayerNorm(s, "density.kernel_norm", d);
    kernel_project_ = nn::Linear(s, "density.kernel_project", d, config_.correlation_channels * c, rng);
    density_conv_ = nn::Conv2d(s, "density.conv", config_.correlation_channels, 1, 3, 1, rng);
    fill(density_conv_.bias, kPriorLogit);

    memory_project_ = nn::Linear(s, "decoder.memory", c, d, rng);
    for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
        const std::string name = "decoder.layer" + std::to_string(l);
        DecoderLayer layer{nn::AttentionWeights(s, name + ".self_attn", d, d, d, rng),
                           nn::AttentionWeights(s, name + ".cross_attn", d, d, d, rng),
                           nn::LayerNorm(s, name + ".norm1", d),
                           nn::LayerNorm(s, name + ".norm2", d),
                           nn::LayerNorm(s, name + ".norm3", d),
                           nn::FeedForward(s, name + ".ffn", d, config_.ffn_hidden, rng),
                           nn::Linear(s, name + ".box_hidden", d, d, rng, std::numbers::sqrt2),
                           nn::Linear(s, name + ".box_out", d, 4, rng)};
        // Start every layer as the identity refinement of its reference box.
        fill(layer.box_out.weight, 0.0);
        decoder_.push_back(std::move(layer));
    }
    score_head_ = nn::Linear(s, "decoder.score", d, 1, rng);
    fill(score_head_.bias, kPriorLogit);
}

Tensor DealModel::encoder_block(const EncoderBlock& block, const Tensor& x, const Tensor* position) const {
    const Tensor qk = position ? add(x, *position) : x;
    Tensor h = block.norm1(add(x, nn::multi_head_attention(qk, qk, x, block.attention, config_.heads)));
    return block.norm2(add(h, block.ffn(h)));
}

FeaturePyramid DealModel::backbone_forward(const Tensor& image) const {
    Tensor x = image;
    if (x.rank() == 3) x = reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
    if (x.rank() != 4 || x.dim(0) != 1 || x.dim(1) != 3) {
        throw DimensionError("backbone_forward: expected a 3xHxW image, got " + shape_to_string(image.shape()));
    }
    const std::size_t h = x.dim(2), w = x.dim(3);
    if (h == 0 || w == 0 || h % kInputMultiple != 0 || w % kInputMultiple != 0) {
        throw DimensionError("backbone_forward: image " + std::to_string(h) + "x" + std::to_string(w) +
                             " is not divisible by 32; pad height and width up to a multiple of 32");
    }
    Tensor f = silu(stem_(x));
    Tensor levels[4];
    for (std::size_t i = 0; i < 4; ++i) {
        f = silu(stages_[i].down(f));
        for (const auto& conv : stages_[i].body) f = silu(conv(f));
        levels[i] = f;
    }
    return FeaturePyramid{levels[0], levels[1], levels[2], levels[3], h, w};
}

EnhancedFeature DealModel::hfe_forward(const FeaturePyramid& p) const {
    const std::size_t c = config_.channels;
    for (const Tensor* level : {&p.l2, &p.l3, &p.l4, &p.l5}) {
        if (!level->defined() || level->rank() != 4 || level->dim(1) != c) {
            throw ConfigurationError("hfe_forward: pyramid level width does not match configured channels " +
                                     std::to_string(c));
        }
    }
    const std::size_t h5 = p.l5.dim(2), w5 = p.l5.dim(3);
    const Tensor position = nn::sine_position_grid(h5, w5, c);
    const Tensor l5 = nn::from_tokens(encoder_block(l5_encoder_, nn::to_tokens(p.l5), &position), h5, w5);

    const Tensor p5 = lateral5_(l5);
    const Tensor p4 = silu(smooth4_(add(lateral4_(p.l4), upsample_nearest2x(p5))));
    const Tensor p3 = silu(smooth3_(add(lateral3_(p.l3), upsample_nearest2x(p4))));
    const Tensor b3 = silu(bottom_up_(p.l2));
    const Tensor both[] = {p3, b3};
    const Tensor s3 = fuse_out_(silu(fuse_reduce_(concat(both, 1))));
    return EnhancedFeature{s3, std::nullopt};
}

PromptEmbedding DealModel::embed_prompts(const data::PointPromptSet& points, const FeaturePyramid& p) const {
    const std::size_t k = points.size();
    if (k == 0) throw ArgumentError("embed_prompts: at least one point prompt is required");
    const double width = static_cast<double>(p.image_width), height = static_cast<double>(p.image_height);
    for (const auto& pt : points.prompts) {
        if (!(pt.x >= 0.0 && pt.x <= width && pt.y >= 0.0 && pt.y <= height)) {
            throw RangeError("embed_prompts: point (" + std::to_string(pt.x) + ", " + std::to_string(pt.y) +
                             ") outside the " + std::to_string(p.image_width) + "x" +
                             std::to_string(p.image_height) + " image");
        }
    }
    std::vector<Tensor> samples;
    for (const Tensor* level : {&p.l3, &p.l4, &p.l5}) {
        const double stride = width / static_cast<double>(level->dim(3));
        const double max_x = static_cast<double>(level->dim(3) - 1);
        const double max_y = static_cast<double>(level->dim(2) - 1);
        std::vector<double> xs(k), ys(k);
        for (std::size_t i = 0; i < k; ++i) {
            xs[i] = std::clamp(points.prompts[i].x / stride - 0.5, 0.0, max_x);
            ys[i] = std::clamp(points.prompts[i].y / stride - 0.5, 0.0, max_y);
        }
        samples.push_back(bilinear_sample_points(*level, xs, ys));
    }
    const Tensor rows = prompt_project_(concat(samples, 1));
    PromptEmbedding pe;
    pe.pe = encoder_block(prompt_encoder_, rows, nullptr);
    for (const auto& pt : points.prompts) pe.group_ids.push_back(pt.category);
    return pe;
}

DensityMap DealModel::activate_prompts(const PromptEmbedding& pe, const EnhancedFeature& enhanced) const {
    const std::size_t c = config_.channels;
    if (pe.pe.rank() != 2 || pe.pe.dim(1) != config_.hidden) {
        throw DimensionError("activate_prompts: prompt embedding width must be " + std::to_string(config_.hidden));
    }
    const std::size_t h = enhanced.s3.dim(2), w = enhanced.s3.dim(3);
    const Tensor tokens = nn::to_tokens(enhanced.s3);
    // Cross-attention layer with the usual query residual, so each kernel
    // keeps its own prompt's appearance next to the gathered image context.
    const Tensor kernels = kernel_project_(
        kernel_norm_(add(pe.pe, nn::multi_head_attention(pe.pe, tokens, tokens, kernel_attention_, config_.heads))));
    const std::size_t corr = config_.correlation_channels;
    const double scale = 1.0 / std::sqrt(static_cast<double>(c));
    std::vector<Tensor> responses;
    responses.reserve(pe.size());
    for (std::size_t i = 0; i < pe.pe.dim(0); ++i) {
        const Tensor kernel = reshape(slice(kernels, 0, i, 1), {corr, c});
        responses.push_back(mul_scalar(matmul_nt(kernel, tokens), scale));
    }
    const Tensor c3 = reshape(max_reduce(responses), {1, corr, h, w});
    return DensityMap{sigmoid(density_conv_(c3)), kDensityStride};
}

DecoderOutput DealModel::modulate_and_decode(EnhancedFeature& enhanced, const DensityMap& dm,
                                             const PromptEmbedding& pe, std::size_t n_query,
                                             const QueryPlan* plan) const {
    const std::size_t h = enhanced.s3.dim(2), w = enhanced.s3.dim(3);
    if (dm.height() != h || dm.width() != w) throw DimensionError("modulate_and_decode: density map and S3 differ");
    if (n_query == 0 && !plan) throw ArgumentError("modulate_and_decode: n_query must be at least 1");

    DecoderOutput out;
    enhanced.modulated = mul(enhanced.s3, dm.grid);
    const Tensor memory = memory_project_(nn::to_tokens(*enhanced.modulated));
    const std::size_t d = config_.hidden;
    const Tensor grid_position = nn::sine_position_grid(h, w, d);
    const Tensor memory_key = add(memory, grid_position);

    if (plan) {
        out.query_cells = plan->cells;
        for (auto cell : out.query_cells) {
            if (cell >= h * w) throw RangeError("modulate_and_decode: planned cell out of range");
        }
    } else {
        if (n_query > h * w) {
            out.warnings.push_back("n_query " + std::to_string(n_query) + " exceeds " + std::to_string(h * w) +
                                   " density cells; clamped");
            n_query = h * w;
        }
        out.query_cells = top_cells(dm.grid.data(), n_query);
    }
    const std::size_t n = out.query_cells.size();

    std::vector<double> ref_logits(n * 4);
    const double cell_logit = std::log((1.0 / static_cast<double>(w)) / (1.0 - 1.0 / static_cast<double>(w)));
    const double cell_logit_y = std::log((1.0 / static_cast<double>(h)) / (1.0 - 1.0 / static_cast<double>(h)));
    for (std::size_t i = 0; i < n; ++i) {
        const double cx = (static_cast<double>(out.query_cells[i] % w) + 0.5) / static_cast<double>(w);
        const double cy = (static_cast<double>(out.query_cells[i] / w) + 0.5) / static_cast<double>(h);
        ref_logits[i * 4 + 0] = std::log(cx / (1.0 - cx));
        ref_logits[i * 4 + 1] = std::log(cy / (1.0 - cy));
        ref_logits[i * 4 + 2] = cell_logit;
        ref_logits[i * 4 + 3] = cell_logit_y;
    }
    Tensor logits = Tensor::from_data({n, 4}, std::move(ref_logits));
    const Tensor query_position = gather_rows(grid_position, out.query_cells);
    Tensor q = gather_rows(memory, out.query_cells);
    for (const auto& layer : decoder_) {
        const Tensor qk = add(q, query_position);
        q = layer.norm1(add(q, nn::multi_head_attention(qk, qk, q, layer.self_attention, config_.heads)));
        q = layer.norm2(add(q, nn::multi_head_attention(add(q, query_position), memory_key, memory,
                                                        layer.cross_attention, config_.heads)));
        q = layer.norm3(add(q, layer.ffn(q)));
        logits = add(logits, layer.box_out(silu(layer.box_hidden(q))));
    }
    out.boxes = sigmoid(logits);
    out.scores = sigmoid(score_head_(q));
    out.query_features = q;

    // Prompt attribution by cosine affinity between final queries and PE rows.
    const auto qv = q.data();
    const auto pv = pe.pe.data();
    const std::size_t k = pe.size();
    std::vector<double> pe_norm(k);
    for (std::size_t j = 0; j < k; ++j) {
        double s = 0.0;
        for (std::size_t t = 0; t < d; ++t) s += pv[j * d + t] * pv[j * d + t];
        pe_norm[j] = std::sqrt(s);
    }
    const auto bv = out.boxes.data();
    const auto sv = out.scores.data();
    for (std::size_t i = 0; i < n; ++i) {
        double qn = 0.0;
        for (std::size_t t = 0; t < d; ++t) qn += qv[i * d + t] * qv[i * d + t];
        qn = std::sqrt(qn);
        std::size_t best = 0;
        double best_affinity = -2.0;
        for (std::size_t j = 0; j < k; ++j) {
            double dot = 0.0;
            for (std::size_t t = 0; t < d; ++t) dot += qv[i * d + t] * pv[j * d + t];
            const double affinity = dot / std::max(qn * pe_norm[j], 1e-12);
            if (affinity > best_affinity) {
                best_affinity = affinity;
                best = j;
            }
        }
        Detection det;
        det.box = NormalizedBox{bv[i * 4 + 0], bv[i * 4 + 1], bv[i * 4 + 2], bv[i * 4 + 3]};
        det.score = sv[i];
        det.prompt_group = k ? pe.group_ids[best] : 0;
        out.detections.push_back(det);
    }
    return out;
}

ImageFeatures DealModel::encode(const Tensor& image) const {
    ImageFeatures f;
    f.pyramid = backbone_forward(image);
    f.enhanced = hfe_forward(f.pyramid);
    return f;
}

PromptedOutput DealModel::run_prompts(const ImageFeatures& features, const data::PointPromptSet& points,
                                      std::size_t min_queries, const QueryPlan* plan) const {
    PromptedOutput out;
    out.embedding = embed_prompts(points, features.pyramid);
    out.density = activate_prompts(out.embedding, features.enhanced);
    out.n_query = std::max(allocate_queries(out.density, config_.n_min, config_.n_max), min_queries);
    EnhancedFeature enhanced = features.enhanced;
    out.decoded = modulate_and_decode(enhanced, out.density, out.embedding, out.n_query, plan);
    if (plan) out.n_query = plan->cells.size();
    return out;
}

}  // namespace deal::model
