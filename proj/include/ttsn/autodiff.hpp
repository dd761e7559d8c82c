#pragma once

#include <cassert>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ttsn/tensor.hpp"

namespace ttsn {

namespace detail {

struct NodeImpl {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<NodeImpl>> inputs;
    // Reads this->grad and accumulates into inputs[i]->grad.
    std::function<void(NodeImpl&)> backward_fn;

    bool is_leaf() const noexcept { return inputs.empty(); }
};

inline void check_finite([[maybe_unused]] const Tensor& t, [[maybe_unused]] const char* op) {
#ifndef NDEBUG
    for (double v : t.data()) {
        assert(std::isfinite(v) && "non-finite value produced by forward op");
    }
#endif
}

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

} // namespace detail

/// Disables graph recording on this thread for its lifetime (evaluation).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Handle to a value in the computation graph. Copies share the same underlying node.
class Node {
public:
    Node() = default;

    /// Leaf node holding `value`.
    explicit Node(Tensor value, bool requires_grad = false) : impl_(std::make_shared<detail::NodeImpl>()) {
        impl_->grad = requires_grad ? Tensor::zeros(value.shape()) : Tensor();
        impl_->value = std::move(value);
        impl_->requires_grad = requires_grad;
    }

    const Tensor& value() const { return impl_->value; }
    const Shape& shape() const { return impl_->value.shape(); }
    std::size_t numel() const { return impl_->value.numel(); }

    /// Gradient buffer; zeros (of the value's shape) until a backward pass reaches this node.
    const Tensor& grad() const {
        if (impl_->grad.shape() != impl_->value.shape()) impl_->grad = Tensor::zeros(impl_->value.shape());
        return impl_->grad;
    }

    bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }
    bool is_leaf() const noexcept { return impl_->is_leaf(); }
    const char* op_name() const noexcept { return impl_->op; }
    bool valid() const noexcept { return static_cast<bool>(impl_); }

    void zero_grad() { impl_->grad = Tensor::zeros(impl_->value.shape()); }

    detail::NodeImpl& impl() const { return *impl_; }
    const std::shared_ptr<detail::NodeImpl>& ptr() const { return impl_; }

    /// Build an op result. `inputs` are recorded only when at least one of them needs a gradient.
    static Node make_op(const char* op, Tensor value, std::vector<Node> inputs,
                        std::function<void(detail::NodeImpl&)> backward_fn) {
        detail::check_finite(value, op);
        Node out;
        out.impl_ = std::make_shared<detail::NodeImpl>();
        out.impl_->value = std::move(value);
        out.impl_->op = op;
        bool needs = false;
        if (detail::grad_mode())
            for (const auto& in : inputs) needs = needs || in.requires_grad();
        if (needs) {
            out.impl_->requires_grad = true;
            out.impl_->inputs.reserve(inputs.size());
            for (auto& in : inputs) out.impl_->inputs.push_back(in.impl_);
            out.impl_->backward_fn = std::move(backward_fn);
        }
        return out;
    }

private:
    std::shared_ptr<detail::NodeImpl> impl_;
};

namespace detail {

inline Tensor& grad_buffer(NodeImpl& n) {
    if (n.grad.shape() != n.value.shape()) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
}

} // namespace detail

/// Reverse-mode sweep from a scalar root. Leaf gradients accumulate across calls;
/// interior gradients are recomputed each call.
inline void backward(const Node& loss) {
    if (!loss.valid() || loss.numel() != 1) {
        throw ContractError("backward() requires a scalar root, got shape " +
                            (loss.valid() ? shape_str(loss.shape()) : std::string("<null>")));
    }
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order (inputs before consumers).
    std::vector<detail::NodeImpl*> topo;
    std::unordered_set<detail::NodeImpl*> seen;
    std::vector<std::pair<detail::NodeImpl*, std::size_t>> stack;
    stack.emplace_back(&loss.impl(), 0);
    seen.insert(&loss.impl());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            detail::NodeImpl* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* n : topo) {
        if (!n->is_leaf()) n->grad = Tensor::zeros(n->value.shape());
    }
    detail::grad_buffer(loss.impl())[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        detail::NodeImpl* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
    // Interior buffers are not needed after the sweep.
    for (auto* n : topo) {
        if (!n->is_leaf()) n->grad = Tensor();
    }
}

/// Named learnable tensor.
struct Parameter {
    std::string name;
    Node node;

    Parameter() = default;
    Parameter(std::string n, Tensor init) : name(std::move(n)), node(std::move(init), true) {}

    const Tensor& value() const { return node.value(); }
    const Tensor& grad() const { return node.grad(); }
    const Shape& shape() const { return node.shape(); }

    /// Overwrite the value (checkpoint load, test setup). Shape must match.
    void assign(const Tensor& t) {
        if (t.shape() != node.shape()) {
            throw DimensionError("parameter '" + name + "' expects shape " + shape_str(node.shape()) +
                                 ", got " + shape_str(t.shape()));
        }
        node.impl().value = t;
    }

    operator const Node&() const { return node; } // NOLINT: parameters are used directly as op inputs
};

inline void zero_grads(std::span<Parameter* const> params) {
    for (auto* p : params) p->node.zero_grad();
}

/// p <- p - lr * grad(p), then zero the gradient.
inline void sgd_step(std::span<Parameter* const> params, double lr) {
    for (auto* p : params) {
        auto& impl = p->node.impl();
        Tensor& g = detail::grad_buffer(impl);
        auto v = impl.value.data();
        auto gd = g.data();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * gd[i];
        g.fill(0.0);
    }
}

} // namespace ttsn
