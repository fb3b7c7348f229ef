#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lcl/error.hpp"
#include "lcl/tensor.hpp"

namespace lcl {

/// Handle to a node of a Graph.
struct Var {
    std::size_t id = 0;
};

/// Tape of operations recorded during a forward pass.
///
/// Nodes are appended in execution order, so the tape is topologically sorted
/// by construction and backward() is a single reverse sweep. Parameter leaves
/// refer to tensors owned elsewhere (the model); their gradients are added to
/// the owning tensor's grad buffer at the end of backward(). A graph is used
/// by one thread and discarded after its backward pass.
template <class T>
class Graph {
public:
    /// Called during backward with the finished output gradient of the node.
    using BackwardFn = std::function<void(Graph&, std::span<const T>)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;

    /// Leaf holding a copy of `value`; never receives a gradient.
    Var constant(Tensor<T> value) {
        Node node;
        node.op = "constant";
        node.value = std::move(value);
        return push(std::move(node));
    }

    /// Leaf bound to a tensor owned by the caller. When the tensor
    /// requires_grad, backward() accumulates into its grad buffer.
    Var parameter(Tensor<T>& leaf) {
        Node node;
        node.op = "parameter";
        node.leaf = &leaf;
        node.grad_target = &leaf;
        node.needs_grad = leaf.requires_grad();
        return push(std::move(node));
    }

    /// Read-only leaf bound to a tensor owned by the caller; never receives
    /// a gradient.
    Var view(const Tensor<T>& leaf) {
        Node node;
        node.op = "view";
        node.leaf = &leaf;
        return push(std::move(node));
    }

    /// Appends the result of an operation. `backward` may be empty for
    /// operations with no differentiable inputs.
    Var record(const char* op, Tensor<T> value, std::vector<Var> inputs, BackwardFn backward) {
        Node node;
        node.op = op;
        node.value = std::move(value);
        for (const auto& in : inputs) {
            check(in);
            node.inputs.push_back(in.id);
            node.needs_grad = node.needs_grad || nodes_[in.id].needs_grad;
        }
        if (node.needs_grad) {
            node.backward = std::move(backward);
        }
        return push(std::move(node));
    }

    const Tensor<T>& value(Var v) const {
        check(v);
        const auto& n = nodes_[v.id];
        return n.leaf ? *n.leaf : n.value;
    }

    const Shape& shape(Var v) const { return value(v).shape(); }

    bool needs_grad(Var v) const {
        check(v);
        return nodes_[v.id].needs_grad;
    }

    /// Gradient accumulator of `v`, allocated on first use. Used by backward
    /// functions to push gradient into their inputs.
    std::span<T> grad_buffer(Var v) {
        check(v);
        auto& n = nodes_[v.id];
        if (n.grad.empty()) {
            n.grad.assign(value(v).size(), T{0});
        }
        return n.grad;
    }

    /// Gradient of the last backward() with respect to `v`; empty when no
    /// gradient reached it.
    std::span<const T> grad(Var v) const {
        check(v);
        return nodes_[v.id].grad;
    }

    std::size_t size() const noexcept { return nodes_.size(); }
    const std::string& op_name(Var v) const { return nodes_.at(v.id).op; }
    const std::vector<std::size_t>& inputs(Var v) const { return nodes_.at(v.id).inputs; }

    /// Reverse sweep from a scalar node. Every requires_grad parameter
    /// reachable from `loss` gets d(loss)/d(parameter) added to its grad.
    void backward(Var loss) {
        check(loss);
        if (value(loss).size() != 1) {
            throw ContractError("backward() needs a scalar loss, got shape " + to_string(shape(loss)));
        }
        for (auto& n : nodes_) {
            n.grad.clear();
        }
        grad_buffer(loss)[0] = T{1};
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (!n.needs_grad || n.grad.empty()) {
                continue;
            }
            if (n.grad_target) {
                auto dst = n.grad_target->ensure_grad();
                for (std::size_t j = 0; j < dst.size(); ++j) {
                    dst[j] += n.grad[j];
                }
            } else if (n.backward) {
                // Inputs always precede the node, so n.grad is not touched.
                n.backward(*this, std::span<const T>(n.grad));
            }
        }
    }

private:
    struct Node {
        std::string op;
        Tensor<T> value;
        const Tensor<T>* leaf = nullptr;
        Tensor<T>* grad_target = nullptr;
        std::vector<std::size_t> inputs;
        std::vector<T> grad;
        BackwardFn backward;
        bool needs_grad = false;
    };

    Var push(Node node) {
        nodes_.push_back(std::move(node));
        return Var{nodes_.size() - 1};
    }

    void check(Var v) const {
        if (v.id >= nodes_.size()) {
            throw ContractError("variable " + std::to_string(v.id) + " does not belong to this graph");
        }
    }

    std::vector<Node> nodes_;
};

} // namespace lcl
