#include "mcfe/layers.hpp"

#include <cmath>

namespace mcfe {

namespace {

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor t(std::move(shape), 0.0);
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

}  // namespace

void add_conv(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t out, std::size_t kernel, std::mt19937_64& rng) {
    const double fan_in = static_cast<double>(in * kernel * kernel);
    params[prefix + ".w"] = normal_tensor({out, in, kernel, kernel}, std::sqrt(2.0 / fan_in), rng);
    params[prefix + ".b"] = Tensor({out}, 0.0);
}

void add_linear(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    params[prefix + ".w"] = normal_tensor({in, out}, std::sqrt(1.0 / static_cast<double>(in)), rng);
    params[prefix + ".b"] = Tensor({out}, 0.0);
}

Var bind_param(Graph& graph, const ParamSet& params, const std::string& name, bool trainable) {
    const Tensor& t = params.at(name);
    return trainable ? graph.parameter(name, t) : graph.constant(t);
}

Var conv_layer(Graph& graph, const ParamSet& params, const std::string& prefix, Var x, bool trainable) {
    return conv2d(x, bind_param(graph, params, prefix + ".w", trainable), bind_param(graph, params, prefix + ".b", trainable));
}

Var linear_layer(Graph& graph, const ParamSet& params, const std::string& prefix, Var x, bool trainable) {
    return linear(x, bind_param(graph, params, prefix + ".w", trainable), bind_param(graph, params, prefix + ".b", trainable));
}

}  // namespace mcfe
