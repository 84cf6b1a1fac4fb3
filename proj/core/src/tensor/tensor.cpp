#include "deal/tensor/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace deal {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_mode_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must be non-empty");
    for (auto d : shape) {
        if (d == 0) throw DimensionError("tensor shape " + shape_to_string(shape) + " has a zero extent");
    }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    validate_shape(shape);
    auto node = std::make_shared<detail::Node>();
    node->data.assign(shape_numel(shape), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    validate_shape(shape);
    if (data.size() != shape_numel(shape)) {
        throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                             shape_to_string(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return full({1}, value, requires_grad); }

double Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_to_string(shape()));
    return node_->data[0];
}

Tensor Tensor::detach() const {
    auto node = std::make_shared<detail::Node>();
    node->shape = node_->shape;
    node->data = node_->data;
    return Tensor(std::move(node));
}

Tensor Tensor::make_result(Shape shape, std::vector<double> data, const char* op, std::vector<Tensor> inputs,
                           std::function<void(detail::Node&)> backward) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    bool needs_grad = false;
    if (g_grad_enabled) {
        for (const auto& t : inputs) needs_grad = needs_grad || t.requires_grad();
    }
    if (needs_grad) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& t : inputs) node->inputs.push_back(t.node_);
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

void Tensor::backward() const {
    if (numel() != 1) throw DimensionError("backward() requires a scalar, got " + shape_to_string(shape()));
    ComputationTape::record(*this).run_backward(*this);
}

ComputationTape ComputationTape::record(const Tensor& root) {
    ComputationTape tape;
    if (!root.defined() || !root.requires_grad()) return tape;
    // Iterative post-order DFS; each node is emitted once, after all inputs.
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            detail::Node* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            tape.order_.push_back(node);
            stack.pop_back();
        }
    }
    return tape;
}

void ComputationTape::run_backward(const Tensor& root) const {
    if (order_.empty()) return;
    for (auto* node : order_) node->ensure_grad();
    auto& root_node = *root.node();
    for (auto& g : root_node.grad) g += 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        detail::Node* node = *it;
        if (node->backward) {
            for (auto& in : node->inputs) {
                if (in->requires_grad) in->ensure_grad();
            }
            node->backward(*node);
        }
    }
    // Interior gradients are scratch space; only leaves keep theirs.
    for (auto* node : order_) {
        if (!node->inputs.empty() && node != &root_node) std::vector<double>().swap(node->grad);
    }
}

}  // namespace deal
