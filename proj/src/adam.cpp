#include "mcfe/adam.hpp"

#include <cmath>

#include "mcfe/error.hpp"

namespace mcfe {

AdamState::AdamState(AdamConfig config) : config_(config) {
    if (!(config.lr > 0.0) || config.beta1 < 0.0 || config.beta1 >= 1.0 || config.beta2 < 0.0 || config.beta2 >= 1.0 ||
        !(config.eps > 0.0)) {
        throw Error(ErrorKind::invalid_argument, "adam: invalid hyper-parameters");
    }
}

void AdamState::step(ParamSet& params, const std::map<std::string, Tensor>& grads) {
    for (const auto& [name, value] : params) {
        auto it = grads.find(name);
        if (it == grads.end()) throw Error(ErrorKind::missing_gradient, "adam: no gradient for parameter '" + name + "'");
        if (it->second.shape() != value.shape()) {
            throw Error(ErrorKind::shape_mismatch, "adam: gradient for '" + name + "' has shape " + shape_string(it->second.shape()) +
                                                       ", parameter has " + shape_string(value.shape()));
        }
    }
    ++step_;
    const double t = static_cast<double>(step_);
    const double c1 = 1.0 - std::pow(config_.beta1, t);
    const double c2 = 1.0 - std::pow(config_.beta2, t);
    for (auto& [name, value] : params) {
        const Tensor& g = grads.at(name);
        auto [m_it, m_new] = first_.try_emplace(name, value.shape(), 0.0);
        auto [v_it, v_new] = second_.try_emplace(name, value.shape(), 0.0);
        auto p = value.data();
        auto m = m_it->second.data();
        auto v = v_it->second.data();
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            p[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
        }
    }
}

}  // namespace mcfe
