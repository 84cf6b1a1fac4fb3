#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "deal/tensor/ops.hpp"

namespace deal::nn {

using Rng = std::mt19937_64;

// Uniform Kaiming-style fan-in init: U(-b, b) with b = gain * sqrt(3 / fan_in).
Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng, double gain = 1.4142135623730951);

// Named parameters in a sorted map so iteration order (and therefore
// checkpoints and optimizer updates) is stable.
class ParameterStore {
  public:
    Tensor create(const std::string& name, Tensor init);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const { return params_.count(name) != 0; }
    const std::map<std::string, Tensor>& all() const { return params_; }
    std::size_t parameter_count() const;
    void zero_grad();

  private:
    std::map<std::string, Tensor> params_;
};

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [1, out]

    Linear() = default;
    Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
           double gain = 1.0);
    Tensor operator()(const Tensor& x) const;
    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }
};

struct LayerNorm {
    Tensor gamma;  // [1, n]
    Tensor beta;   // [1, n]

    LayerNorm() = default;
    LayerNorm(ParameterStore& store, const std::string& name, std::size_t width);
    Tensor operator()(const Tensor& x) const;
};

struct Conv2d {
    Tensor kernel;  // [out, in, k, k]
    Tensor bias;    // [1, out, 1, 1]
    std::size_t stride = 1;
    std::size_t padding = 0;

    Conv2d() = default;
    Conv2d(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel_size,
           std::size_t stride, Rng& rng);
    Tensor operator()(const Tensor& x) const;
};

// Projection weights of one multi-head attention block. Query rows have width
// `query_dim`, key/value rows `kv_dim`; everything is projected to `model_dim`.
struct AttentionWeights {
    Linear q, k, v, out;

    AttentionWeights() = default;
    AttentionWeights(ParameterStore& store, const std::string& name, std::size_t query_dim, std::size_t kv_dim,
                     std::size_t model_dim, Rng& rng);
    std::size_t model_dim() const { return out.out_features(); }
};

// softmax(Q K^T / sqrt(d/heads)) V per head, heads concatenated and passed
// through the output projection.
Tensor multi_head_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                            const AttentionWeights& weights, std::size_t heads);

struct FeedForward {
    Linear up, down;

    FeedForward() = default;
    FeedForward(ParameterStore& store, const std::string& name, std::size_t width, std::size_t hidden, Rng& rng);
    Tensor operator()(const Tensor& x) const;
};

// 2-D sine/cosine position code for an h x w grid, one row per cell in
// row-major order, `width` columns (width divisible by 4).
Tensor sine_position_grid(std::size_t h, std::size_t w, std::size_t width);
// Same code at arbitrary normalized (x, y) positions in [0,1].
Tensor sine_position_points(std::span<const double> xs, std::span<const double> ys, std::size_t width);

// [1, C, H, W] feature map -> [H*W, C] token matrix, and back.
Tensor to_tokens(const Tensor& feature);
Tensor from_tokens(const Tensor& tokens, std::size_t h, std::size_t w);

}  // namespace deal::nn
