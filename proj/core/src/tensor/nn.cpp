#include "deal/tensor/nn.hpp"

#include <cmath>
#include <numbers>

namespace deal::nn {

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng, double gain) {
    const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = dist(rng);
    return Tensor::from_data(std::move(shape), std::move(data), true);
}

Tensor ParameterStore::create(const std::string& name, Tensor init) {
    if (params_.count(name)) throw ArgumentError("duplicate parameter name: " + name);
    init.set_requires_grad(true);
    params_.emplace(name, init);
    return init;
}

const Tensor& ParameterStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ArgumentError("unknown parameter: " + name);
    return it->second;
}

std::size_t ParameterStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& [name, t] : params_) {
        Tensor handle = t;
        handle.zero_grad();
    }
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
               double gain) {
    weight = store.create(name + ".weight", kaiming_uniform({in, out}, in, rng, gain));
    bias = store.create(name + ".bias", Tensor::zeros({1, out}));
}

Tensor Linear::operator()(const Tensor& x) const { return ops::add(ops::matmul(x, weight), bias); }

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, std::size_t width) {
    gamma = store.create(name + ".gamma", Tensor::full({1, width}, 1.0));
    beta = store.create(name + ".beta", Tensor::zeros({1, width}));
}

Tensor LayerNorm::operator()(const Tensor& x) const {
    return ops::add(ops::mul(ops::normalize_rows(x), gamma), beta);
}

Conv2d::Conv2d(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
               std::size_t kernel_size, std::size_t stride_, Rng& rng)
    : stride(stride_), padding(kernel_size / 2) {
    kernel = store.create(name + ".kernel",
                          kaiming_uniform({out, in, kernel_size, kernel_size}, in * kernel_size * kernel_size, rng));
    bias = store.create(name + ".bias", Tensor::zeros({1, out, 1, 1}));
}

Tensor Conv2d::operator()(const Tensor& x) const { return ops::add(ops::conv2d(x, kernel, stride, padding), bias); }

AttentionWeights::AttentionWeights(ParameterStore& store, const std::string& name, std::size_t query_dim,
                                   std::size_t kv_dim, std::size_t model_dim, Rng& rng)
    : q(store, name + ".q", query_dim, model_dim, rng),
      k(store, name + ".k", kv_dim, model_dim, rng),
      v(store, name + ".v", kv_dim, model_dim, rng),
      out(store, name + ".out", model_dim, model_dim, rng) {}

Tensor multi_head_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                            const AttentionWeights& weights, std::size_t heads) {
    const std::size_t d = weights.model_dim();
    if (heads == 0 || d % heads != 0) {
        throw ArgumentError("multi_head_attention: width " + std::to_string(d) + " not divisible by " +
                            std::to_string(heads) + " heads");
    }
    if (key.dim(0) != value.dim(0)) throw DimensionError("multi_head_attention: key/value row counts differ");
    const Tensor q = weights.q(query);
    const Tensor k = weights.k(key);
    const Tensor v = weights.v(value);
    const std::size_t head_dim = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    if (heads == 1) {
        Tensor attn = ops::softmax_rows(ops::mul_scalar(ops::matmul_nt(q, k), scale));
        return weights.out(ops::matmul(attn, v));
    }
    std::vector<Tensor> per_head;
    per_head.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor qh = ops::slice(q, 1, h * head_dim, head_dim);
        Tensor kh = ops::slice(k, 1, h * head_dim, head_dim);
        Tensor vh = ops::slice(v, 1, h * head_dim, head_dim);
        Tensor attn = ops::softmax_rows(ops::mul_scalar(ops::matmul_nt(qh, kh), scale));
        per_head.push_back(ops::matmul(attn, vh));
    }
    return weights.out(ops::concat(per_head, 1));
}

FeedForward::FeedForward(ParameterStore& store, const std::string& name, std::size_t width, std::size_t hidden,
                         Rng& rng)
    : up(store, name + ".up", width, hidden, rng, std::numbers::sqrt2), down(store, name + ".down", hidden, width, rng) {}

Tensor FeedForward::operator()(const Tensor& x) const { return down(ops::silu(up(x))); }

namespace {

void fill_sine_row(double px, double py, std::size_t width, double* row) {
    const std::size_t quarter = width / 4;
    for (std::size_t i = 0; i < quarter; ++i) {
        const double freq = 2.0 * std::numbers::pi * std::pow(64.0, static_cast<double>(i) / static_cast<double>(quarter));
        row[i] = std::sin(px * freq);
        row[quarter + i] = std::cos(px * freq);
        row[2 * quarter + i] = std::sin(py * freq);
        row[3 * quarter + i] = std::cos(py * freq);
    }
}

}  // namespace

Tensor sine_position_grid(std::size_t h, std::size_t w, std::size_t width) {
    if (width % 4 != 0) throw ArgumentError("sine_position_grid: width must be divisible by 4");
    std::vector<double> data(h * w * width);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            fill_sine_row((static_cast<double>(x) + 0.5) / static_cast<double>(w),
                          (static_cast<double>(y) + 0.5) / static_cast<double>(h), width, data.data() + (y * w + x) * width);
        }
    }
    return Tensor::from_data({h * w, width}, std::move(data));
}

Tensor sine_position_points(std::span<const double> xs, std::span<const double> ys, std::size_t width) {
    if (width % 4 != 0) throw ArgumentError("sine_position_points: width must be divisible by 4");
    std::vector<double> data(xs.size() * width);
    for (std::size_t i = 0; i < xs.size(); ++i) fill_sine_row(xs[i], ys[i], width, data.data() + i * width);
    return Tensor::from_data({xs.size(), width}, std::move(data));
}

Tensor to_tokens(const Tensor& feature) {
    if (feature.rank() != 4 || feature.dim(0) != 1) {
        throw DimensionError("to_tokens: expected 1xCxHxW, got " + shape_to_string(feature.shape()));
    }
    const std::size_t c = feature.dim(1);
    return ops::transpose(ops::reshape(feature, {c, feature.dim(2) * feature.dim(3)}));
}

Tensor from_tokens(const Tensor& tokens, std::size_t h, std::size_t w) {
    if (tokens.rank() != 2 || tokens.dim(0) != h * w) {
        throw DimensionError("from_tokens: " + shape_to_string(tokens.shape()) + " is not " + std::to_string(h * w) +
                             " tokens");
    }
    const std::size_t c = tokens.dim(1);
    return ops::reshape(ops::transpose(tokens), {1, c, h, w});
}

}  // namespace deal::nn
