#include "mcfe/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "mcfe/error.hpp"

namespace mcfe {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

bool finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

struct Correction {
    std::vector<double> s;
    std::vector<double> y;
    double rho;
};

}  // namespace

LbfgsResult lbfgs_minimize(const Objective& objective, std::vector<double> x0, const LbfgsOptions& options) {
    if (options.memory == 0) throw Error(ErrorKind::invalid_argument, "lbfgs: memory must be positive");
    const std::size_t n = x0.size();
    LbfgsResult result;
    result.x = std::move(x0);
    std::vector<double> g(n), g_new(n), x_new(n), d(n), alpha(options.memory);
    double f = objective(result.x, g);
    if (!std::isfinite(f) || !finite(g)) throw Error(ErrorKind::precondition, "lbfgs: objective not finite at the starting point");

    std::deque<Correction> history;
    std::size_t flat_steps = 0;
    for (result.iterations = 0;; ++result.iterations) {
        const double gnorm = std::sqrt(dot(g, g));
        result.value = f;
        result.grad_norm = gnorm;
        if (gnorm <= options.grad_tol) {
            result.converged = true;
            return result;
        }
        if (result.iterations >= options.max_iter) return result;

        // Two-loop recursion: d = -H g.
        for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
        for (std::size_t k = history.size(); k-- > 0;) {
            alpha[k] = history[k].rho * dot(history[k].s, d);
            for (std::size_t i = 0; i < n; ++i) d[i] -= alpha[k] * history[k].y[i];
        }
        if (!history.empty()) {
            const auto& last = history.back();
            const double gamma = dot(last.s, last.y) / dot(last.y, last.y);
            for (auto& v : d) v *= gamma;
        }
        for (std::size_t k = 0; k < history.size(); ++k) {
            const double beta = history[k].rho * dot(history[k].y, d);
            for (std::size_t i = 0; i < n; ++i) d[i] += (alpha[k] - beta) * history[k].s[i];
        }

        double slope = dot(g, d);
        if (!(slope < 0.0)) {
            history.clear();
            for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
            slope = -gnorm * gnorm;
        }

        double step = 1.0;
        double f_new = 0.0;
        bool accepted = false;
        for (std::size_t halving = 0; halving <= options.max_halvings; ++halving) {
            for (std::size_t i = 0; i < n; ++i) x_new[i] = result.x[i] + step * d[i];
            f_new = objective(x_new, g_new);
            if (std::isfinite(f_new) && finite(g_new) && f_new <= f + options.armijo_c * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            throw StalledError("lbfgs: line search failed after " + std::to_string(options.max_halvings) + " halvings (f=" +
                                   std::to_string(f) + ", |g|=" + std::to_string(gnorm) + ")",
                               result.x, f);
        }

        Correction c{std::vector<double>(n), std::vector<double>(n), 0.0};
        for (std::size_t i = 0; i < n; ++i) {
            c.s[i] = x_new[i] - result.x[i];
            c.y[i] = g_new[i] - g[i];
        }
        const double sy = dot(c.s, c.y);
        if (sy > 1e-12 * std::sqrt(dot(c.s, c.s) * dot(c.y, c.y)) && sy > 0.0) {
            c.rho = 1.0 / sy;
            history.push_back(std::move(c));
            if (history.size() > options.memory) history.pop_front();
        }
        flat_steps = (f - f_new <= options.value_tol * std::max(std::abs(f), 1.0)) ? flat_steps + 1 : 0;
        result.x.swap(x_new);
        g.swap(g_new);
        f = f_new;
        if (flat_steps >= 3) {
            ++result.iterations;
            result.value = f;
            result.grad_norm = std::sqrt(dot(g, g));
            result.converged = true;
            return result;
        }
    }
}

}  // namespace mcfe
