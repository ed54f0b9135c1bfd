#pragma once

#include <random>
#include <string>

#include "mcfe/adam.hpp"
#include "mcfe/autodiff.hpp"

namespace mcfe {

/// Registers a conv layer `{prefix}.w` [out,in,k,k] (He-normal) and
/// `{prefix}.b` [out] (zeros).
void add_conv(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t out, std::size_t kernel, std::mt19937_64& rng);
/// Registers `{prefix}.w` [in,out] and `{prefix}.b` [out].
void add_linear(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t out, std::mt19937_64& rng);

/// Enters a parameter on the graph as trainable (named) or constant.
Var bind_param(Graph& graph, const ParamSet& params, const std::string& name, bool trainable);

/// conv2d with the `{prefix}.w`/`{prefix}.b` pair.
Var conv_layer(Graph& graph, const ParamSet& params, const std::string& prefix, Var x, bool trainable);
Var linear_layer(Graph& graph, const ParamSet& params, const std::string& prefix, Var x, bool trainable);

}  // namespace mcfe
