#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mcfe {

enum class ErrorKind {
    invalid_argument,
    shape_mismatch,
    numeric_overflow,
    missing_gradient,
    degenerate_mirror,
    no_flip,
    stalled,
    reflection_unreachable,
    ratio_degenerate,
    not_normalized,
    not_binary,
    precondition,
    divergence,
    frozen_violation,
    io,
    format,
    config,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Base error for every failure raised by the library. The kind is stable and
/// machine-readable; the message is for humans.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Line search could not make progress; carries the best point seen.
class StalledError : public Error {
public:
    StalledError(const std::string& message, std::vector<double> best_x, double best_value)
        : Error(ErrorKind::stalled, message), best_x_(std::move(best_x)), best_value_(best_value) {}

    const std::vector<double>& best_x() const noexcept { return best_x_; }
    double best_value() const noexcept { return best_value_; }

private:
    std::vector<double> best_x_;
    double best_value_;
};

/// The requested reflection logits could not be reached by any latent point.
class ReflectionUnreachableError : public Error {
public:
    ReflectionUnreachableError(const std::string& message, double residual)
        : Error(ErrorKind::reflection_unreachable, message), residual_(residual) {}

    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

}  // namespace mcfe
