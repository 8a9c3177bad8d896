#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "cipher/nn/tensor.hpp"

namespace cipher::nn {

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    // Adds g into grad, allocating zeros on first use.
    void accumulate(const Tensor& g);
    Tensor& grad_buffer();
    bool has_grad() const { return !grad.empty(); }
};

// Shared handle onto a graph node. Copies alias the same value and gradient.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::int64_t dim(std::size_t i) const { return node_->value.dim(i); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool has_grad() const { return node_->has_grad(); }
    const Tensor& grad() const { return node_->grad; }
    void zero_grad() { node_->grad = Tensor{}; }

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

bool grad_enabled();

// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Builds an op result. The backward callback is recorded only when grad mode is on
// and at least one input requires a gradient.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

// Reverse-mode sweep from a scalar root.
void backward(const Var& root);

}  // namespace cipher::nn
