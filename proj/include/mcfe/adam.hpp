#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "mcfe/tensor.hpp"

namespace mcfe {

/// Named parameter collection. std::map keeps iteration (and therefore
/// serialization and update) order deterministic.
using ParamSet = std::map<std::string, Tensor>;

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam.
class AdamState {
public:
    explicit AdamState(AdamConfig config = {});

    /// Updates every tensor in `params` in place. Every parameter must have a
    /// gradient of identical shape.
    void step(ParamSet& params, const std::map<std::string, Tensor>& grads);

    std::uint64_t steps() const noexcept { return step_; }
    const AdamConfig& config() const noexcept { return config_; }
    const Tensor& first_moment(const std::string& name) const { return first_.at(name); }
    const Tensor& second_moment(const std::string& name) const { return second_.at(name); }

private:
    AdamConfig config_;
    std::uint64_t step_ = 0;
    std::map<std::string, Tensor> first_;
    std::map<std::string, Tensor> second_;
};

}  // namespace mcfe
