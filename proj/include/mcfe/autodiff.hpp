#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mcfe/tensor.hpp"

namespace mcfe {

class Graph;

/// Handle to a node recorded on a Graph.
struct Var {
    Graph* graph = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

/// Define-by-run tape for reverse-mode differentiation. Every op evaluates
/// eagerly and appends a node, so insertion order is a topological order.
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::size_t self)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Leaf that never receives a gradient slot.
    Var constant(Tensor value);
    /// Trainable leaf. Named leaves are reported by parameter_grads().
    Var parameter(std::string name, Tensor value);
    Var input(Tensor value, bool trainable);

    /// Appends an op node. Throws numeric_overflow on non-finite output.
    Var record(std::string_view op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

    void backward(Var loss);

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    const Tensor& grad(Var v) const;
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

    /// Gradient accumulator of node `id`, allocated on first use.
    Tensor& grad_slot(std::size_t id);

    std::map<std::string, Tensor> parameter_grads() const;

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        std::string op;
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        bool trainable_leaf = false;
        std::string name;
    };

    Var leaf(Tensor value, bool trainable, std::string name);

    std::vector<Node> nodes_;
};

// Primitive ops. All shape checks raise shape_mismatch naming the op.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double c);

/// [M,K] x [K,N] -> [M,N]
Var matmul(Var a, Var b);
/// x:[M,N] + bias:[N] broadcast over rows.
Var add_row_bias(Var x, Var bias);
/// x:[M,K] W:[K,N] b:[N]
Var linear(Var x, Var w, Var b);

/// Stride-1 "same" convolution. x:[B,Ci,H,W], w:[Co,Ci,K,K] (K odd), b:[Co].
Var conv2d(Var x, Var w, Var b);
/// Nearest-neighbour upsampling by an integer factor over the last two axes.
Var upsample(Var x, std::size_t factor);
/// Non-overlapping average pooling by an integer factor over the last two axes.
Var avg_pool(Var x, std::size_t factor);
/// [B,C,H,W] -> [B,C]
Var global_avg_pool(Var x);
/// Concatenate [B,C1,H,W] and [B,C2,H,W] along channels.
Var concat_channels(Var a, Var b);

Var relu(Var a);
Var sigmoid(Var a);
/// Natural log with the argument clamped to >= 1e-12.
Var log(Var a);
/// Row-wise softmax over the last axis of a rank-1 or rank-2 tensor.
Var softmax(Var a);

Var sum(Var a);
Var mean(Var a);
/// Mean absolute difference over all elements.
Var l1_distance(Var a, Var b);
/// Sum of squares.
Var squared_l2_norm(Var a);
/// Per-row mean absolute difference: [B,...] x [B,...] -> [B].
Var l1_rows(Var a, Var b);
/// Per-row Euclidean distance: [B,...] x [B,...] -> [B].
Var l2_rows(Var a, Var b);
/// Batch-mean KL divergence sum_j p_j (log p_j - log q_j) over rows.
/// q is clamped to >= 1e-12; entries with p == 0 contribute nothing.
Var kl_divergence(Var p, Var q);

/// Maximum relative error between analytic and central-difference gradients
/// of a scalar function with respect to one leaf:
///   |a - cd| / (|a| + |cd| + 1e-12).
/// `skip` lets callers exclude coordinates (e.g. near a ReLU kink).
using LossBuilder = std::function<Var(Graph&, Var leaf)>;
double gradient_check(const LossBuilder& build, const Tensor& leaf, double eps,
                      const std::function<bool(std::size_t)>& skip = {});

}  // namespace mcfe
