#pragma once

#include "csdnet/autodiff.hpp"
#include "csdnet/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace csdnet {

/// Builds a scalar on `tape` from the variable standing in for the checked input.
using ScalarFn = std::function<Var(Tape& tape, Var x)>;

struct GradCheckOptions {
    double step = 1e-6;
    /// Lower bound on the relative-error denominator, so that two gradients
    /// that are both ~0 compare as equal instead of dividing noise by noise.
    double denominator_floor = 1e-3;
    /// Check at most this many coordinates (chosen with `seed`); 0 means all.
    std::size_t max_coords = 0;
    std::uint64_t seed = 0;
};

/// Compares the reverse-mode gradient of f at x with central differences
/// (f(x + h e_i) - f(x - h e_i)) / 2h and returns the worst relative error
/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
double grad_check(const ScalarFn& f, const Tensor& x, const GradCheckOptions& options = {});

/// Reverse-mode gradient of f at x.
Tensor analytic_gradient(const ScalarFn& f, const Tensor& x);

/// Central-difference gradient of f at x.
Tensor numeric_gradient(const ScalarFn& f, const Tensor& x, double step);

struct GradSuiteEntry {
    std::string op;
    double worst_rel_error = 0.0;
    std::size_t trials = 0;
    bool passed = false;
};

struct GradSuiteOptions {
    double tolerance = 1e-4;
    std::size_t seeds = 20;
    std::uint64_t base_seed = 1;
};

/// Runs every differentiable operation of the pipeline through grad_check.
/// Each op appears exactly once in the result, in a fixed order.
std::vector<GradSuiteEntry> run_gradient_suite(const GradSuiteOptions& options = {});

} // namespace csdnet
