#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "survnet/errors.hpp"

namespace survnet {

using Shape = std::vector<int>;

int numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Node in a reverse-mode differentiation DAG.
///
/// Values are 64-bit floats in row-major order. Every op produces a fresh
/// node whose `parents` point at its inputs and whose `backprop` closure
/// scatters this node's gradient into them. `grad` is allocated lazily on
/// first accumulation, so forward-only evaluation pays nothing for it.
class Tensor {
public:
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;

    std::vector<TensorPtr> parents;
    std::function<void(Tensor&)> backprop;

    static TensorPtr zeros(const Shape& shape, bool requires_grad = false);
    static TensorPtr full(const Shape& shape, double value, bool requires_grad = false);
    static TensorPtr from(const Shape& shape, std::vector<double> values,
                          bool requires_grad = false);
    static TensorPtr randn(const Shape& shape, std::mt19937_64& rng, double stddev = 1.0,
                           bool requires_grad = false);

    int size() const { return static_cast<int>(data.size()); }
    bool is_scalar() const { return data.size() == 1; }
    /// Value of a single-element tensor.
    double item() const;

    void ensure_grad();
    void zero_grad();
    void accumulate_grad(const double* g, std::size_t n);
};

/// Topologically ordered record of the nodes reachable from a root: every
/// node appears after all of its parents. The order depends only on the
/// graph structure, so repeated traces of the same graph are identical.
struct Graph {
    std::vector<Tensor*> order;
    static Graph trace(const TensorPtr& root);
};

/// Reverse-mode sweep from a scalar loss. Seeds the loss gradient with 1 and
/// visits nodes in exact reverse topological order; gradient accumulation
/// order is therefore deterministic. Throws ShapeError for non-scalar roots.
void backward(const TensorPtr& loss);

} // namespace survnet
