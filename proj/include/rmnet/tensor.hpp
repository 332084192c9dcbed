#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "rmnet/errors.hpp"

namespace rmnet {

using Index = std::int64_t;
using Shape = std::vector<Index>;

template <typename S>
using Buffer = Eigen::Array<S, Eigen::Dynamic, 1>;

template <typename S>
using MatrixR = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Mode { train, eval };

inline Index element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

// Graph recording is on by default; NoGradGuard switches it off for the
// current thread, which is what batch-parallel evaluation relies on.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <typename S>
struct Node {
    Shape shape;
    Buffer<S> value;
    Buffer<S> grad;  // empty until something flows into it
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    bool is_leaf() const { return !backward; }

    Buffer<S>& grad_buffer() {
        if (grad.size() != value.size()) grad = Buffer<S>::Zero(value.size());
        return grad;
    }
};

template <typename S>
class Tensor {
public:
    using Scalar = S;

    Tensor() = default;

    explicit Tensor(Shape shape, S fill = S(0), bool requires_grad = false)
        : node_(std::make_shared<Node<S>>()) {
        for (Index e : shape) {
            if (e <= 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
        }
        node_->value = Buffer<S>::Constant(element_count(shape), fill);
        node_->shape = std::move(shape);
        node_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, Buffer<S> values, bool requires_grad = false)
        : node_(std::make_shared<Node<S>>()) {
        if (element_count(shape) != values.size()) {
            throw DimensionError("shape " + shape_string(shape) + " needs " +
                                 std::to_string(element_count(shape)) + " values, got " +
                                 std::to_string(values.size()));
        }
        node_->shape = std::move(shape);
        node_->value = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor from(Shape shape, const std::vector<S>& values, bool requires_grad = false) {
        Buffer<S> buf = Eigen::Map<const Buffer<S>>(values.data(), static_cast<Index>(values.size()));
        return Tensor(std::move(shape), std::move(buf), requires_grad);
    }

    static Tensor wrap(std::shared_ptr<Node<S>> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

    bool defined() const { return static_cast<bool>(node_); }

    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    Index dim(int axis) const { return node_->shape.at(static_cast<std::size_t>(axis)); }
    Index size() const { return node_->value.size(); }

    Buffer<S>& data() { return node_->value; }
    const Buffer<S>& data() const { return node_->value; }
    S* raw() { return node_->value.data(); }
    const S* raw() const { return node_->value.data(); }
    S operator[](Index i) const { return node_->value[i]; }

    S item() const {
        if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        node_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    const Buffer<S>& grad() const { return node_->grad; }
    Buffer<S>& grad_buffer() { return node_->grad_buffer(); }
    void zero_grad() { node_->grad.resize(0); }

    const char* op() const { return node_->op; }
    const std::shared_ptr<Node<S>>& node() const { return node_; }

    // New leaf holding a copy of the values.
    Tensor detach() const { return Tensor(shape(), data(), false); }

    template <typename T>
    Tensor<T> cast() const {
        return Tensor<T>(shape(), data().template cast<T>(), requires_grad());
    }

    // Reverse-mode sweep seeded with ones (scalar outputs) or an explicit seed.
    void backward() const { backward(Buffer<S>::Ones(size())); }

    void backward(const Buffer<S>& seed) const {
        if (seed.size() != size()) throw DimensionError("backward seed size does not match output");
        std::vector<Node<S>*> order;
        topo_order(order);
        node_->grad_buffer() += seed;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node<S>* n = *it;
            if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
        }
        // Graph is single-use; drop saved contexts so activations are freed.
        for (Node<S>* n : order) {
            if (n->backward) {
                n->backward = nullptr;
                n->inputs.clear();
            }
        }
    }

private:
    void topo_order(std::vector<Node<S>*>& order) const {
        std::unordered_set<Node<S>*> seen;
        std::vector<std::pair<Node<S>*, std::size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->inputs.size()) {
                Node<S>* child = n->inputs[next++].get();
                if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node<S>> node_;
};

// Builds an op output; the graph edge and backward closure are only recorded
// when recording is enabled and some input needs a gradient.
template <typename S>
Tensor<S> make_result(const char* op, Shape shape, Buffer<S> value,
                      std::vector<std::shared_ptr<Node<S>>> inputs,
                      std::function<void(Node<S>&)> backward) {
    Tensor<S> out(std::move(shape), std::move(value));
    auto& node = *out.node();
    node.op = op;
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& in : inputs) needs = needs || (in && in->requires_grad);
    }
    if (needs) {
        node.requires_grad = true;
        node.inputs = std::move(inputs);
        node.backward = std::move(backward);
    }
    return out;
}

}  // namespace rmnet
