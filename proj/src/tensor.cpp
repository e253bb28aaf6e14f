#include "survnet/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace survnet {

int numel(const Shape& shape) {
    int n = 1;
    for (int e : shape) {
        if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

TensorPtr Tensor::zeros(const Shape& shape, bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    t->shape = shape;
    t->data.assign(static_cast<std::size_t>(numel(shape)), 0.0);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr Tensor::full(const Shape& shape, double value, bool requires_grad) {
    auto t = zeros(shape, requires_grad);
    std::fill(t->data.begin(), t->data.end(), value);
    return t;
}

TensorPtr Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
    if (static_cast<int>(values.size()) != numel(shape)) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not fill shape " + shape_str(shape));
    }
    auto t = std::make_shared<Tensor>();
    t->shape = shape;
    t->data = std::move(values);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr Tensor::randn(const Shape& shape, std::mt19937_64& rng, double stddev,
                        bool requires_grad) {
    auto t = zeros(shape, requires_grad);
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t->data) v = dist(rng);
    return t;
}

double Tensor::item() const {
    if (!is_scalar()) throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape));
    return data[0];
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
    std::fill(grad.begin(), grad.end(), 0.0);
}

void Tensor::accumulate_grad(const double* g, std::size_t n) {
    ensure_grad();
    for (std::size_t i = 0; i < n; ++i) grad[i] += g[i];
}

Graph Graph::trace(const TensorPtr& root) {
    Graph graph;
    if (!root) return graph;
    // Iterative post-order DFS: a node is emitted after all of its parents,
    // which puts ancestors strictly before descendants.
    std::vector<std::pair<Tensor*, std::size_t>> stack;
    std::unordered_set<Tensor*> visited;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Tensor* parent = node->parents[next++].get();
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            graph.order.push_back(node);
            stack.pop_back();
        }
    }
    return graph;
}

void backward(const TensorPtr& loss) {
    if (!loss) throw ShapeError("backward: null tensor");
    if (!loss->is_scalar()) {
        throw ShapeError("backward requires a scalar, got " + shape_str(loss->shape));
    }
    Graph graph = Graph::trace(loss);
    // Interior nodes get a fresh gradient each sweep; only leaves accumulate
    // across sweeps (until zero_grad). Unallocated grads are already zero.
    for (Tensor* node : graph.order) {
        if (!node->parents.empty() && !node->grad.empty()) {
            std::fill(node->grad.begin(), node->grad.end(), 0.0);
        }
    }
    loss->ensure_grad();
    loss->grad[0] += 1.0;
    for (auto it = graph.order.rbegin(); it != graph.order.rend(); ++it) {
        Tensor* node = *it;
        if (node->backprop) {
            node->ensure_grad();
            node->backprop(*node);
        }
    }
}

} // namespace survnet
