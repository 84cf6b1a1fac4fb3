#include "deal/tensor/optim.hpp"

#include <cmath>

namespace deal::optim {

double global_grad_norm(const std::map<std::string, Tensor>& params) {
    double total = 0.0;
    for (const auto& [name, t] : params) {
        for (double g : t.grad()) total += g * g;
    }
    return std::sqrt(total);
}

void optimizer_step(const std::map<std::string, Tensor>& params, const OptimizerConfig& config,
                    OptimizerState& state) {
    for (const auto& [name, t] : params) {
        if (!t.has_grad()) throw MissingGradientError(name);
        if (t.grad().size() != t.numel()) throw DimensionError("gradient of '" + name + "' has the wrong size");
    }
    double clip = 1.0;
    if (config.max_grad_norm > 0.0) {
        const double norm = global_grad_norm(params);
        if (norm > config.max_grad_norm) clip = config.max_grad_norm / norm;
    }
    ++state.step;
    const double lr = config.learning_rate;
    const double bias1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double bias2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    for (const auto& [name, t] : params) {
        Tensor param = t;
        auto w = param.mutable_data();
        auto g = t.grad();
        if (config.plain_sgd) {
            for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * (clip * g[i] + config.weight_decay * w[i]);
            continue;
        }
        auto& m = state.moments[name];
        if (m.first.size() != w.size()) {
            m.first.assign(w.size(), 0.0);
            m.second.assign(w.size(), 0.0);
        }
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = clip * g[i];
            m.first[i] = config.beta1 * m.first[i] + (1.0 - config.beta1) * gi;
            m.second[i] = config.beta2 * m.second[i] + (1.0 - config.beta2) * gi * gi;
            const double m_hat = m.first[i] / bias1;
            const double v_hat = m.second[i] / bias2;
            w[i] -= lr * (m_hat / (std::sqrt(v_hat) + config.epsilon) + config.weight_decay * w[i]);
        }
    }
}

}  // namespace deal::optim
