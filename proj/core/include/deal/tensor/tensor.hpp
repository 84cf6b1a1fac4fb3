#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace deal {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class DimensionError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

class ArgumentError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

class RangeError : public std::out_of_range {
  public:
    using std::out_of_range::out_of_range;
};

namespace detail {

// One vertex of the computation graph. Interior nodes own their inputs so a
// loss tensor keeps the whole graph alive until it is dropped.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until backward touches the node
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const double> data() const { return node_->data; }
    // Direct mutation is reserved for leaves (optimizers, gradient probes).
    std::span<double> mutable_data() { return node_->data; }
    double item() const;
    double at(std::size_t flat_index) const { return node_->data.at(flat_index); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool value) { node_->requires_grad = value; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    bool is_leaf() const { return node_->inputs.empty(); }
    const char* op_name() const { return node_->op; }

    // Reverse-mode pass seeded with d(self)/d(self) = 1. Requires a scalar.
    void backward() const;

    // Same values, cut from the graph.
    Tensor detach() const;
    Tensor clone() const { return detach(); }

    bool same_node(const Tensor& other) const { return node_ == other.node_; }
    const std::shared_ptr<detail::Node>& node() const { return node_; }

    // Builds an op output. Inputs are recorded only when grad mode is on and
    // at least one input requires a gradient.
    static Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                              std::vector<Tensor> inputs,
                              std::function<void(detail::Node&)> backward);

  private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

// Reverse-topological execution order for one backward pass.
class ComputationTape {
  public:
    static ComputationTape record(const Tensor& root);

    // Nodes in topological order (inputs before consumers).
    std::span<detail::Node* const> nodes() const { return order_; }
    std::size_t size() const { return order_.size(); }

    void run_backward(const Tensor& root) const;

  private:
    std::vector<detail::Node*> order_;
};

bool grad_mode_enabled();

// RAII guard disabling graph recording on the current thread.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

}  // namespace deal
