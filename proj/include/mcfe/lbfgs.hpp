#pragma once

#include <functional>
#include <span>
#include <vector>

namespace mcfe {

/// Objective callback: returns f(x) and writes the gradient into `grad`.
using Objective = std::function<double(std::span<const double> x, std::span<double> grad)>;

struct LbfgsOptions {
    std::size_t memory = 10;
    double grad_tol = 1e-8;
    std::size_t max_iter = 500;
    /// Armijo sufficient-decrease constant.
    double armijo_c = 1e-4;
    std::size_t max_halvings = 40;
    /// Also stop once three consecutive steps lower f by no more than
    /// value_tol * max(|f|, 1); rounding keeps |g| from shrinking further.
    double value_tol = 1e-15;
};

struct LbfgsResult {
    std::vector<double> x;
    double value = 0.0;
    double grad_norm = 0.0;
    std::size_t iterations = 0;
    bool converged = false;  // false means max_iter was reached
};

/// Limited-memory BFGS with the two-loop recursion and a halving Armijo
/// backtracking line search. Throws StalledError (carrying the best point)
/// when the line search fails after `max_halvings` halvings.
LbfgsResult lbfgs_minimize(const Objective& objective, std::vector<double> x0, const LbfgsOptions& options = {});

}  // namespace mcfe
