#pragma once

#include <map>
#include <string>
#include <vector>

#include "deal/tensor/tensor.hpp"

namespace deal::optim {

struct OptimizerConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;  // decoupled (AdamW-style)
    double max_grad_norm = 0.0; // 0 disables global-norm clipping
    bool plain_sgd = false;
};

struct MomentBuffers {
    std::vector<double> first;
    std::vector<double> second;
};

struct OptimizerState {
    std::size_t step = 0;
    std::map<std::string, MomentBuffers> moments;
};

class MissingGradientError : public std::runtime_error {
  public:
    explicit MissingGradientError(const std::string& name)
        : std::runtime_error("parameter '" + name + "' has no gradient"), name_(name) {}
    const std::string& parameter() const { return name_; }

  private:
    std::string name_;
};

// One update over every parameter using the gradients stored on the
// tensors. Adam with bias correction unless `plain_sgd`.
void optimizer_step(const std::map<std::string, Tensor>& params, const OptimizerConfig& config,
                    OptimizerState& state);

double global_grad_norm(const std::map<std::string, Tensor>& params);

}  // namespace deal::optim
