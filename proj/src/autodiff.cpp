#include "mcfe/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "mcfe/error.hpp"

namespace mcfe {

namespace {

constexpr double kLogFloor = 1e-12;

// Output rows [lo,hi) whose tap at offset d stays inside an extent of n.
std::pair<std::size_t, std::size_t> tap_range(std::ptrdiff_t d, std::size_t n) {
    const auto sn = static_cast<std::ptrdiff_t>(n);
    const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(-d, 0, sn), hi = std::clamp<std::ptrdiff_t>(sn - d, 0, sn);
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))};
}

Graph& graph_of(Var a, Var b) {
    if (a.graph == nullptr || a.graph != b.graph) throw Error(ErrorKind::invalid_argument, "vars belong to different graphs");
    return *a.graph;
}

[[noreturn]] void shape_error(std::string_view op, const Shape& a, const Shape& b) {
    throw Error(ErrorKind::shape_mismatch,
                std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

void require_same(std::string_view op, Var a, Var b) {
    if (a.shape() != b.shape()) shape_error(op, a.shape(), b.shape());
}

void require_rank(std::string_view op, Var a, std::size_t rank) {
    if (a.value().rank() != rank) {
        throw Error(ErrorKind::shape_mismatch,
                    std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(a.shape()));
    }
}

// Adds `scale * g` into the gradient slot of node `id` when it participates.
void accumulate(Graph& graph, std::size_t id, std::span<const double> g, double factor = 1.0) {
    if (!graph.requires_grad(id)) return;
    auto dst = graph.grad_slot(id).data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * g[i];
}

std::size_t rows_of(const Tensor& t) { return t.rank() == 1 ? 1 : t.dim(0); }

}  // namespace

const Tensor& Var::value() const {
    if (graph == nullptr) throw Error(ErrorKind::invalid_argument, "unbound Var");
    return graph->value(id);
}

Var Graph::leaf(Tensor value, bool trainable, std::string name) {
    if (!value.all_finite()) throw Error(ErrorKind::numeric_overflow, "non-finite leaf value");
    Node node;
    node.op = "leaf";
    node.value = std::move(value);
    node.requires_grad = trainable;
    node.trainable_leaf = trainable;
    node.name = std::move(name);
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
}

Var Graph::constant(Tensor value) { return leaf(std::move(value), false, {}); }

Var Graph::parameter(std::string name, Tensor value) { return leaf(std::move(value), true, std::move(name)); }

Var Graph::input(Tensor value, bool trainable) { return leaf(std::move(value), trainable, {}); }

Var Graph::record(std::string_view op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
    if (!value.all_finite()) throw Error(ErrorKind::numeric_overflow, std::string(op) + ": non-finite output");
    Node node;
    node.op = std::string(op);
    node.value = std::move(value);
    node.inputs = std::move(inputs);
    node.requires_grad = std::any_of(node.inputs.begin(), node.inputs.end(),
                                     [this](std::size_t i) { return nodes_[i].requires_grad; });
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
}

Tensor& Graph::grad_slot(std::size_t id) {
    Node& node = nodes_.at(id);
    if (node.grad.empty()) node.grad = Tensor(node.value.shape(), 0.0);
    return node.grad;
}

const Tensor& Graph::grad(Var v) const {
    const Node& node = nodes_.at(v.id);
    if (!node.requires_grad) throw Error(ErrorKind::missing_gradient, "node has no gradient slot");
    if (node.grad.empty()) {
        // Participating leaf that the loss never reached: expose zeros.
        const_cast<Node&>(node).grad = Tensor(node.value.shape(), 0.0);
    }
    return node.grad;
}

void Graph::backward(Var loss) {
    if (loss.graph != this) throw Error(ErrorKind::invalid_argument, "loss belongs to another graph");
    if (loss.value().size() != 1) {
        throw Error(ErrorKind::shape_mismatch, "backward: loss must be scalar, got " + shape_string(loss.shape()));
    }
    for (auto& node : nodes_) {
        if (!node.grad.empty()) std::fill(node.grad.data().begin(), node.grad.data().end(), 0.0);
    }
    if (!nodes_[loss.id].requires_grad) return;
    grad_slot(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!node.requires_grad || !node.backward || node.grad.empty()) continue;
        node.backward(*this, i);
    }
}

std::map<std::string, Tensor> Graph::parameter_grads() const {
    std::map<std::string, Tensor> out;
    for (const auto& node : nodes_) {
        if (!node.trainable_leaf || node.name.empty()) continue;
        Tensor g = node.grad.empty() ? Tensor(node.value.shape(), 0.0) : node.grad;
        // A parameter bound more than once gets the sum of its uses.
        auto [it, fresh] = out.try_emplace(node.name, std::move(g));
        if (!fresh) {
            if (it->second.shape() != node.value.shape()) throw Error(ErrorKind::shape_mismatch, "parameter '" + node.name + "' bound with two shapes");
            for (std::size_t i = 0; i < it->second.size(); ++i) it->second[i] += node.grad.empty() ? 0.0 : node.grad[i];
        }
    }
    return out;
}

// ---------------------------------------------------------------- elementwise

Var add(Var a, Var b) {
    Graph& g = graph_of(a, b);
    require_same("add", a, b);
    Tensor out = a.value();
    auto o = out.data();
    const auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
    return g.record("add", std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Graph& gr, std::size_t self) {
        const auto gs = gr.grad_slot(self).data();
        accumulate(gr, a, gs);
        accumulate(gr, b, gs);
    });
}

Var sub(Var a, Var b) {
    Graph& g = graph_of(a, b);
    require_same("sub", a, b);
    Tensor out = a.value();
    auto o = out.data();
    const auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
    return g.record("sub", std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Graph& gr, std::size_t self) {
        const auto gs = gr.grad_slot(self).data();
        accumulate(gr, a, gs);
        accumulate(gr, b, gs, -1.0);
    });
}

Var mul(Var a, Var b) {
    Graph& g = graph_of(a, b);
    require_same("mul", a, b);
    Tensor out = a.value();
    auto o = out.data();
    const auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
    return g.record("mul", std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Graph& gr, std::size_t self) {
        const auto gs = gr.grad_slot(self).data();
        const auto av = gr.value(a).data();
        const auto bv = gr.value(b).data();
        if (gr.requires_grad(a)) {
            auto da = gr.grad_slot(a).data();
            for (std::size_t i = 0; i < da.size(); ++i) da[i] += gs[i] * bv[i];
        }
        if (gr.requires_grad(b)) {
            auto db = gr.grad_slot(b).data();
            for (std::size_t i = 0; i < db.size(); ++i) db[i] += gs[i] * av[i];
        }
    });
}

Var scale(Var a, double factor) {
    Tensor out = a.value();
    for (auto& v : out.data()) v *= factor;
    return a.graph->record("scale", std::move(out), {a.id}, [a = a.id, factor](Graph& gr, std::size_t self) {
        accumulate(gr, a, gr.grad_slot(self).data(), factor);
    });
}

Var add_scalar(Var a, double c) {
    Tensor out = a.value();
    for (auto& v : out.data()) v += c;
    return a.graph->record("add_scalar", std::move(out), {a.id}, [a = a.id](Graph& gr, std::size_t self) {
        accumulate(gr, a, gr.grad_slot(self).data());
    });
}

Var relu(Var a) {
    Tensor out = a.value();
    for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
    return a.graph->record("relu", std::move(out), {a.id}, [a = a.id](Graph& gr, std::size_t self) {
        if (!gr.requires_grad(a)) return;
        const auto gs = gr.grad_slot(self).data();
        const auto x = gr.value(a).data();
        auto da = gr.grad_slot(a).data();
        for (std::size_t i = 0; i < da.size(); ++i) {
            if (x[i] > 0.0) da[i] += gs[i];
        }
    });
}

Var sigmoid(Var a) {
    Tensor out = a.value();
    for (auto& v : out.data()) {
        if (v >= 0.0) {
            v = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            v = e / (1.0 + e);
        }
    }
    return a.graph->record("sigmoid", std::move(out), {a.id}, [a = a.id](Graph& gr, std::size_t self) {
        if (!gr.requires_grad(a)) return;
        const auto gs = gr.grad_slot(self).data();
        const auto y = gr.value(self).data();
        auto da = gr.grad_slot(a).data();
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += gs[i] * y[i] * (1.0 - y[i]);
    });
}

Var log(Var a) {
    Tensor out = a.value();
    for (auto& v : out.data()) v = std::log(std::max(v, kLogFloor));
    return a.graph->record("log", std::move(out), {a.id}, [a = a.id](Graph& gr, std::size_t self) {
        if (!gr.requires_grad(a)) return;
        const auto gs = gr.grad_slot(self).data();
        const auto x = gr.value(a).data();
        auto da = gr.grad_slot(a).data();
        for (std::size_t i = 0; i < da.size(); ++i) {
            if (x[i] >= kLogFloor) da[i] += gs[i] / x[i];
        }
    });
}

Var softmax(Var a) {
    const Tensor& x = a.value();
    if (x.rank() != 1 && x.rank() != 2) throw Error(ErrorKind::shape_mismatch, "softmax: expected rank 1 or 2, got " + shape_string(x.shape()));
    const std::size_t rows = rows_of(x);
    const std::size_t cols = x.size() / rows;
    Tensor out = x;
    auto o = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        auto row = o.subspan(r * cols, cols);
        const double m = *std::max_element(row.begin(), row.end());
        double total = 0.0;
        for (auto& v : row) {
            v = std::exp(v - m);
            total += v;
        }
        for (auto& v : row) v /= total;
    }
    return a.graph->record("softmax", std::move(out), {a.id}, [a = a.id, rows, cols](Graph& gr, std::size_t self) {
        if (!gr.requires_grad(a)) return;
        const auto gs = gr.grad_slot(self).data();
        const auto y = gr.value(self).data();
        auto da = gr.grad_slot(a).data();
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) dot += gs[r * cols + j] * y[r * cols + j];
            for (std::size_t j = 0; j < cols; ++j) {
                const std::size_t i = r * cols + j;
                da[i] += y[i] * (gs[i] - dot);
            }
        }
    });
}

// ------------------------------------------------------------------ reductions

Var sum(Var a) {
    double total = 0.0;
    for (double v : a.value().data()) total += v;
    return a.graph->record("sum", Tensor::scalar(total), {a.id}, [a = a.id](Graph& gr, std::size_t self) {
        if (!gr.requires_grad(a)) return;
        const double gs = gr.grad_slot(self)[0];
        for (auto& d : gr.grad_slot(a).data()) d += gs;
    });
}

Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    double total = 0.0;
    for (double v : a.value().data()) total += v;
    return a.graph->record("mean", Tensor::scalar(total / n), {a.id}, [a = a.id, n](Graph& gr, std::size_t self) {
        if (!gr.requires_grad(a)) return;
        const double gs = gr.grad_slot(self)[0] / n;
        for (auto& d : gr.grad_slot(a).data()) d += gs;
    });
}

Var l1_distance(Var a, Var b) {
    Graph& g = graph_of(a, b);
    require_same("l1_distance", a, b);
    const auto av = a.value().data();
    const auto bv = b.value().data();
    const double n = static_cast<double>(av.size());
    double total = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) total += std::abs(av[i] - bv[i]);
    return g.record("l1_distance", Tensor::scalar(total / n), {a.id, b.id},
                    [a = a.id, b = b.id, n](Graph& gr, std::size_t self) {
                        const double gs = gr.grad_slot(self)[0] / n;
                        const auto av = gr.value(a).data();
                        const auto bv = gr.value(b).data();
                        for (std::size_t side = 0; side < 2; ++side) {
                            const std::size_t id = side == 0 ? a : b;
                            if (!gr.requires_grad(id)) continue;
                            const double sign = side == 0 ? 1.0 : -1.0;
                            auto d = gr.grad_slot(id).data();
                            for (std::size_t i = 0; i < d.size(); ++i) {
                                const double diff = av[i] - bv[i];
                                if (diff > 0.0) d[i] += sign * gs;
                                else if (diff < 0.0) d[i] -= sign * gs;
                            }
                        }
                    });
}

Var squared_l2_norm(Var a) {
    double total = 0.0;
    for (double v : a.value().data()) total += v * v;
    return a.graph->record("squared_l2_norm", Tensor::scalar(total), {a.id}, [a = a.id](Graph& gr, std::size_t self) {
        if (!gr.requires_grad(a)) return;
        const double gs = gr.grad_slot(self)[0];
        const auto x = gr.value(a).data();
        auto d = gr.grad_slot(a).data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += 2.0 * gs * x[i];
    });
}

Var l1_rows(Var a, Var b) {
    Graph& g = graph_of(a, b);
    require_same("l1_rows", a, b);
    const std::size_t rows = a.value().dim(0);
    const std::size_t cols = a.value().size() / rows;
    const auto av = a.value().data();
    const auto bv = b.value().data();
    Tensor out({rows}, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double total = 0.0;
        for (std::size_t j = 0; j < cols; ++j) total += std::abs(av[r * cols + j] - bv[r * cols + j]);
        out[r] = total / static_cast<double>(cols);
    }
    return g.record("l1_rows", std::move(out), {a.id, b.id}, [a = a.id, b = b.id, rows, cols](Graph& gr, std::size_t self) {
        const auto gs = gr.grad_slot(self).data();
        const auto av = gr.value(a).data();
        const auto bv = gr.value(b).data();
        const double inv = 1.0 / static_cast<double>(cols);
        for (std::size_t side = 0; side < 2; ++side) {
            const std::size_t id = side == 0 ? a : b;
            if (!gr.requires_grad(id)) continue;
            const double sign = side == 0 ? 1.0 : -1.0;
            auto d = gr.grad_slot(id).data();
            for (std::size_t r = 0; r < rows; ++r) {
                const double step = sign * gs[r] * inv;
                for (std::size_t j = 0; j < cols; ++j) {
                    const std::size_t i = r * cols + j;
                    const double diff = av[i] - bv[i];
                    if (diff > 0.0) d[i] += step;
                    else if (diff < 0.0) d[i] -= step;
                }
            }
        }
    });
}

Var l2_rows(Var a, Var b) {
    Graph& g = graph_of(a, b);
    require_same("l2_rows", a, b);
    const std::size_t rows = a.value().dim(0);
    const std::size_t cols = a.value().size() / rows;
    const auto av = a.value().data();
    const auto bv = b.value().data();
    Tensor out({rows}, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double total = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double d = av[r * cols + j] - bv[r * cols + j];
            total += d * d;
        }
        out[r] = std::sqrt(total);
    }
    return g.record("l2_rows", std::move(out), {a.id, b.id}, [a = a.id, b = b.id, rows, cols](Graph& gr, std::size_t self) {
        const auto gs = gr.grad_slot(self).data();
        const auto norms = gr.value(self).data();
        const auto av = gr.value(a).data();
        const auto bv = gr.value(b).data();
        for (std::size_t side = 0; side < 2; ++side) {
            const std::size_t id = side == 0 ? a : b;
            if (!gr.requires_grad(id)) continue;
            const double sign = side == 0 ? 1.0 : -1.0;
            auto d = gr.grad_slot(id).data();
            for (std::size_t r = 0; r < rows; ++r) {
                if (norms[r] == 0.0) continue;
                const double step = sign * gs[r] / norms[r];
                for (std::size_t j = 0; j < cols; ++j) {
                    const std::size_t i = r * cols + j;
                    d[i] += step * (av[i] - bv[i]);
                }
            }
        }
    });
}

Var kl_divergence(Var p, Var q) {
    Graph& g = graph_of(p, q);
    require_same("kl_divergence", p, q);
    const std::size_t rows = rows_of(p.value());
    const auto pv = p.value().data();
    const auto qv = q.value().data();
    double total = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        if (pv[i] > 0.0) total += pv[i] * (std::log(pv[i]) - std::log(std::max(qv[i], kLogFloor)));
    }
    const double inv_rows = 1.0 / static_cast<double>(rows);
    return g.record("kl_divergence", Tensor::scalar(total * inv_rows), {p.id, q.id},
                    [p = p.id, q = q.id, inv_rows](Graph& gr, std::size_t self) {
                        const double gs = gr.grad_slot(self)[0] * inv_rows;
                        const auto pv = gr.value(p).data();
                        const auto qv = gr.value(q).data();
                        if (gr.requires_grad(p)) {
                            auto d = gr.grad_slot(p).data();
                            for (std::size_t i = 0; i < d.size(); ++i) {
                                if (pv[i] > 0.0) d[i] += gs * (std::log(pv[i]) - std::log(std::max(qv[i], kLogFloor)) + 1.0);
                            }
                        }
                        if (gr.requires_grad(q)) {
                            auto d = gr.grad_slot(q).data();
                            for (std::size_t i = 0; i < d.size(); ++i) {
                                if (pv[i] > 0.0 && qv[i] >= kLogFloor) d[i] -= gs * pv[i] / qv[i];
                            }
                        }
                    });
}

// --------------------------------------------------------------- linear algebra

Var matmul(Var a, Var b) {
    Graph& g = graph_of(a, b);
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    const std::size_t m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(1);
    if (b.value().dim(0) != k) shape_error("matmul", a.shape(), b.shape());
    const auto av = a.value().data();
    const auto bv = b.value().data();
    Tensor out({m, n}, 0.0);
    auto o = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double x = av[i * k + p];
            for (std::size_t j = 0; j < n; ++j) o[i * n + j] += x * bv[p * n + j];
        }
    }
    return g.record("matmul", std::move(out), {a.id, b.id}, [a = a.id, b = b.id, m, k, n](Graph& gr, std::size_t self) {
        const auto gs = gr.grad_slot(self).data();
        const auto av = gr.value(a).data();
        const auto bv = gr.value(b).data();
        if (gr.requires_grad(a)) {
            auto da = gr.grad_slot(a).data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += gs[i * n + j] * bv[p * n + j];
                    da[i * k + p] += acc;
                }
        }
        if (gr.requires_grad(b)) {
            auto db = gr.grad_slot(b).data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double x = av[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) db[p * n + j] += x * gs[i * n + j];
                }
        }
    });
}

Var add_row_bias(Var x, Var bias) {
    Graph& g = graph_of(x, bias);
    require_rank("add_row_bias", x, 2);
    const std::size_t m = x.value().dim(0), n = x.value().dim(1);
    if (bias.value().size() != n) shape_error("add_row_bias", x.shape(), bias.shape());
    Tensor out = x.value();
    auto o = out.data();
    const auto bv = bias.value().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) o[i * n + j] += bv[j];
    return g.record("add_row_bias", std::move(out), {x.id, bias.id}, [x = x.id, bias = bias.id, m, n](Graph& gr, std::size_t self) {
        const auto gs = gr.grad_slot(self).data();
        accumulate(gr, x, gs);
        if (gr.requires_grad(bias)) {
            auto db = gr.grad_slot(bias).data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) db[j] += gs[i * n + j];
        }
    });
}

Var linear(Var x, Var w, Var b) { return add_row_bias(matmul(x, w), b); }

// ------------------------------------------------------------- spatial ops

Var conv2d(Var x, Var w, Var b) {
    Graph& g = graph_of(x, w);
    graph_of(x, b);
    require_rank("conv2d", x, 4);
    require_rank("conv2d", w, 4);
    const Tensor& xt = x.value();
    const Tensor& wt = w.value();
    const std::size_t batch = xt.dim(0), cin = xt.dim(1), h = xt.dim(2), wd = xt.dim(3);
    const std::size_t cout = wt.dim(0), kh = wt.dim(2), kw = wt.dim(3);
    if (wt.dim(1) != cin || kh != kw || kh % 2 == 0) shape_error("conv2d", xt.shape(), wt.shape());
    if (b.value().size() != cout) shape_error("conv2d", wt.shape(), b.shape());
    const auto pad = static_cast<std::ptrdiff_t>(kh / 2);
    const std::size_t plane = h * wd;

    Tensor out({batch, cout, h, wd}, 0.0);
    {
        auto o = out.data();
        const auto xv = xt.data();
        const auto wv = wt.data();
        const auto bv = b.value().data();
        for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t co = 0; co < cout; ++co) {
                double* dst = o.data() + (n * cout + co) * plane;
                std::fill(dst, dst + plane, bv[co]);
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    const double* src = xv.data() + (n * cin + ci) * plane;
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
                        const auto [y0, y1] = tap_range(dy, h);
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
                            const auto [x0, x1] = tap_range(dx, wd);
                            const double k = wv[((co * cin + ci) * kh + ky) * kw + kx];
                            for (std::size_t yy = y0; yy < y1; ++yy) {
                                double* drow = dst + yy * wd;
                                const double* srow = src + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(yy) + dy) * wd;
                                for (std::size_t xx = x0; xx < x1; ++xx) {
                                    drow[xx] += k * srow[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(xx) + dx)];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    return g.record("conv2d", std::move(out), {x.id, w.id, b.id},
                    [x = x.id, w = w.id, b = b.id, batch, cin, cout, h, wd, kh, kw, pad, plane](Graph& gr, std::size_t self) {
                        const auto gs = gr.grad_slot(self).data();
                        const auto xv = gr.value(x).data();
                        const auto wv = gr.value(w).data();
                        const bool need_x = gr.requires_grad(x);
                        const bool need_w = gr.requires_grad(w);
                        if (gr.requires_grad(b)) {
                            auto db = gr.grad_slot(b).data();
                            for (std::size_t n = 0; n < batch; ++n)
                                for (std::size_t co = 0; co < cout; ++co) {
                                    const double* src = gs.data() + (n * cout + co) * plane;
                                    double acc = 0.0;
                                    for (std::size_t i = 0; i < plane; ++i) acc += src[i];
                                    db[co] += acc;
                                }
                        }
                        if (!need_x && !need_w) return;
                        double* dx_data = need_x ? gr.grad_slot(x).data().data() : nullptr;
                        double* dw_data = need_w ? gr.grad_slot(w).data().data() : nullptr;
                        for (std::size_t n = 0; n < batch; ++n) {
                            for (std::size_t co = 0; co < cout; ++co) {
                                const double* go = gs.data() + (n * cout + co) * plane;
                                for (std::size_t ci = 0; ci < cin; ++ci) {
                                    const double* src = xv.data() + (n * cin + ci) * plane;
                                    double* dsrc = need_x ? dx_data + (n * cin + ci) * plane : nullptr;
                                    for (std::size_t ky = 0; ky < kh; ++ky) {
                                        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
                                        const auto [y0, y1] = tap_range(dy, h);
                                        for (std::size_t kx = 0; kx < kw; ++kx) {
                                            const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
                                            const auto [x0, x1] = tap_range(dx, wd);
                                            const std::size_t widx = ((co * cin + ci) * kh + ky) * kw + kx;
                                            const double k = wv[widx];
                                            double acc = 0.0;
                                            for (std::size_t yy = y0; yy < y1; ++yy) {
                                                const double* grow = go + yy * wd;
                                                const std::size_t sy = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(yy) + dy) * wd;
                                                const double* srow = src + sy;
                                                if (dsrc != nullptr) {
                                                    double* drow = dsrc + sy;
                                                    for (std::size_t xx = x0; xx < x1; ++xx) {
                                                        const std::size_t sx = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(xx) + dx);
                                                        drow[sx] += k * grow[xx];
                                                        acc += grow[xx] * srow[sx];
                                                    }
                                                } else {
                                                    for (std::size_t xx = x0; xx < x1; ++xx) {
                                                        acc += grow[xx] * srow[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(xx) + dx)];
                                                    }
                                                }
                                            }
                                            if (dw_data != nullptr) dw_data[widx] += acc;
                                        }
                                    }
                                }
                            }
                        }
                    });
}

Var upsample(Var x, std::size_t factor) {
    const Tensor& xt = x.value();
    if (xt.rank() < 2 || factor == 0) throw Error(ErrorKind::shape_mismatch, "upsample: bad input " + shape_string(xt.shape()));
    const std::size_t h = xt.dim(xt.rank() - 2), w = xt.dim(xt.rank() - 1);
    const std::size_t planes = xt.size() / (h * w);
    Shape shape = xt.shape();
    shape[shape.size() - 2] = h * factor;
    shape[shape.size() - 1] = w * factor;
    Tensor out(shape, 0.0);
    auto o = out.data();
    const auto xv = xt.data();
    const std::size_t oh = h * factor, ow = w * factor;
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) o[(p * oh + y) * ow + xx] = xv[(p * h + y / factor) * w + xx / factor];
    return x.graph->record("upsample", std::move(out), {x.id}, [x = x.id, planes, h, w, factor](Graph& gr, std::size_t self) {
        if (!gr.requires_grad(x)) return;
        const auto gs = gr.grad_slot(self).data();
        auto dx = gr.grad_slot(x).data();
        const std::size_t oh = h * factor, ow = w * factor;
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xx = 0; xx < ow; ++xx) dx[(p * h + y / factor) * w + xx / factor] += gs[(p * oh + y) * ow + xx];
    });
}

Var avg_pool(Var x, std::size_t factor) {
    const Tensor& xt = x.value();
    if (xt.rank() < 2 || factor == 0) throw Error(ErrorKind::shape_mismatch, "avg_pool: bad input " + shape_string(xt.shape()));
    const std::size_t h = xt.dim(xt.rank() - 2), w = xt.dim(xt.rank() - 1);
    if (h % factor != 0 || w % factor != 0) {
        throw Error(ErrorKind::shape_mismatch, "avg_pool: extent " + shape_string(xt.shape()) + " not divisible by " + std::to_string(factor));
    }
    const std::size_t planes = xt.size() / (h * w);
    const std::size_t oh = h / factor, ow = w / factor;
    Shape shape = xt.shape();
    shape[shape.size() - 2] = oh;
    shape[shape.size() - 1] = ow;
    Tensor out(shape, 0.0);
    auto o = out.data();
    const auto xv = xt.data();
    const double inv = 1.0 / static_cast<double>(factor * factor);
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) o[(p * oh + y / factor) * ow + xx / factor] += xv[(p * h + y) * w + xx];
    for (auto& v : o) v *= inv;
    return x.graph->record("avg_pool", std::move(out), {x.id}, [x = x.id, planes, h, w, factor, inv](Graph& gr, std::size_t self) {
        if (!gr.requires_grad(x)) return;
        const auto gs = gr.grad_slot(self).data();
        auto dx = gr.grad_slot(x).data();
        const std::size_t oh = h / factor, ow = w / factor;
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t xx = 0; xx < w; ++xx) dx[(p * h + y) * w + xx] += inv * gs[(p * oh + y / factor) * ow + xx / factor];
    });
}

Var global_avg_pool(Var x) {
    require_rank("global_avg_pool", x, 4);
    const Tensor& xt = x.value();
    const std::size_t batch = xt.dim(0), c = xt.dim(1), plane = xt.dim(2) * xt.dim(3);
    Tensor out({batch, c}, 0.0);
    const auto xv = xt.data();
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t p = 0; p < batch * c; ++p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += xv[p * plane + i];
        out[p] = acc * inv;
    }
    return x.graph->record("global_avg_pool", std::move(out), {x.id}, [x = x.id, batch, c, plane, inv](Graph& gr, std::size_t self) {
        if (!gr.requires_grad(x)) return;
        const auto gs = gr.grad_slot(self).data();
        auto dx = gr.grad_slot(x).data();
        for (std::size_t p = 0; p < batch * c; ++p)
            for (std::size_t i = 0; i < plane; ++i) dx[p * plane + i] += gs[p] * inv;
    });
}

Var concat_channels(Var a, Var b) {
    Graph& g = graph_of(a, b);
    require_rank("concat_channels", a, 4);
    require_rank("concat_channels", b, 4);
    const Tensor& at = a.value();
    const Tensor& bt = b.value();
    if (at.dim(0) != bt.dim(0) || at.dim(2) != bt.dim(2) || at.dim(3) != bt.dim(3)) shape_error("concat_channels", at.shape(), bt.shape());
    const std::size_t batch = at.dim(0), ca = at.dim(1), cb = bt.dim(1), plane = at.dim(2) * at.dim(3);
    Tensor out({batch, ca + cb, at.dim(2), at.dim(3)}, 0.0);
    auto o = out.data();
    for (std::size_t n = 0; n < batch; ++n) {
        std::copy_n(at.data().data() + n * ca * plane, ca * plane, o.data() + n * (ca + cb) * plane);
        std::copy_n(bt.data().data() + n * cb * plane, cb * plane, o.data() + (n * (ca + cb) + ca) * plane);
    }
    return g.record("concat_channels", std::move(out), {a.id, b.id}, [a = a.id, b = b.id, batch, ca, cb, plane](Graph& gr, std::size_t self) {
        const auto gs = gr.grad_slot(self).data();
        if (gr.requires_grad(a)) {
            auto da = gr.grad_slot(a).data();
            for (std::size_t n = 0; n < batch; ++n)
                for (std::size_t i = 0; i < ca * plane; ++i) da[n * ca * plane + i] += gs[n * (ca + cb) * plane + i];
        }
        if (gr.requires_grad(b)) {
            auto db = gr.grad_slot(b).data();
            for (std::size_t n = 0; n < batch; ++n)
                for (std::size_t i = 0; i < cb * plane; ++i) db[n * cb * plane + i] += gs[(n * (ca + cb) + ca) * plane + i];
        }
    });
}

// ---------------------------------------------------------------- grad check

double gradient_check(const LossBuilder& build, const Tensor& leaf, double eps, const std::function<bool(std::size_t)>& skip) {
    if (!(eps > 0.0 && eps <= 1e-2)) throw Error(ErrorKind::invalid_argument, "gradient_check: eps must be in (0, 1e-2]");
    Tensor analytic;
    {
        Graph g;
        Var x = g.input(leaf, true);
        Var loss = build(g, x);
        g.backward(loss);
        analytic = g.grad(x);
    }
    auto eval = [&](const Tensor& point) {
        Graph g;
        Var x = g.input(point, false);
        return build(g, x).value().item();
    };
    double worst = 0.0;
    Tensor probe = leaf;
    for (std::size_t i = 0; i < leaf.size(); ++i) {
        if (skip && skip(i)) continue;
        probe[i] = leaf[i] + eps;
        const double up = eval(probe);
        probe[i] = leaf[i] - eps;
        const double down = eval(probe);
        probe[i] = leaf[i];
        const double cd = (up - down) / (2.0 * eps);
        const double err = std::abs(analytic[i] - cd) / (std::abs(analytic[i]) + std::abs(cd) + 1e-12);
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace mcfe
