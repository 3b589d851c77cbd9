#include "csdnet/gradcheck.hpp"

#include "csdnet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace csdnet {

namespace {

double evaluate(const ScalarFn& f, const Tensor& x) {
    Tape tape;
    Var out = f(tape, tape.leaf(x));
    if (out.value().size() != 1) {
        throw std::invalid_argument("grad_check: function must return a scalar");
    }
    return out.value()[0];
}

double central_difference(const ScalarFn& f, Tensor& x, std::size_t i, double step) {
    const double saved = x[i];
    x[i] = saved + step;
    const double plus = evaluate(f, x);
    x[i] = saved - step;
    const double minus = evaluate(f, x);
    x[i] = saved;
    return (plus - minus) / (2.0 * step);
}

} // namespace

Tensor analytic_gradient(const ScalarFn& f, const Tensor& x) {
    Tape tape;
    Var in = tape.leaf(x);
    Var out = f(tape, in);
    tape.backward(out);
    return in.grad();
}

Tensor numeric_gradient(const ScalarFn& f, const Tensor& x, double step) {
    Tensor probe = x;
    Tensor grad(x.shape(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        grad[i] = central_difference(f, probe, i, step);
    }
    return grad;
}

double grad_check(const ScalarFn& f, const Tensor& x, const GradCheckOptions& options) {
    const Tensor analytic = analytic_gradient(f, x);

    std::vector<std::size_t> coords(x.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords != 0 && options.max_coords < coords.size()) {
        Rng rng(derive_seed(options.seed, {x.size()}));
        shuffle(coords.begin(), coords.end(), rng);
        coords.resize(options.max_coords);
        std::sort(coords.begin(), coords.end());
    }

    Tensor probe = x;
    double worst = 0.0;
    for (auto i : coords) {
        const double numeric = central_difference(f, probe, i, options.step);
        const double a = analytic[i];
        const double denom =
            std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
        const double rel = std::abs(a - numeric) / denom;
        if (!std::isfinite(rel)) {
            return std::numeric_limits<double>::infinity();
        }
        worst = std::max(worst, rel);
    }
    return worst;
}

} // namespace csdnet
