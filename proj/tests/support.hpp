#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "dimwm/layers.hpp"
#include "dimwm/random.hpp"

namespace dimwm::testing {

struct GradCheck {
    double max_rel_error = 0;
    std::size_t coordinates = 0;
};

/// Compares analytic gradients of `loss` against central differences on
/// `count` coordinates drawn uniformly from `params` (pooled).
inline GradCheck grad_check(const nn::ParamList<double>& params, const std::function<nn::Var<double>()>& loss,
                            std::size_t count, std::uint64_t seed, double h = 1e-6) {
    for (auto p : params) p.var.zero_grad();
    nn::backward(loss());
    std::size_t total = 0;
    for (const auto& p : params) total += p.var.value().size();
    Rng rng = make_rng({seed, 0x67726164});
    GradCheck out;
    for (std::size_t i = 0; i < count; ++i) {
        auto k = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(total) - 1));
        std::size_t pi = 0;
        while (k >= params[pi].var.value().size()) k -= params[pi].var.value().size(), ++pi;
        auto var = params[pi].var;
        const double analytic = var.grad()[k];
        const double orig = var.value()[k];
        var.mutable_value()[k] = orig + h;
        const double up = loss().value()[0];
        var.mutable_value()[k] = orig - h;
        const double down = loss().value()[0];
        var.mutable_value()[k] = orig;
        const double numeric = (up - down) / (2 * h);
        const double scale = std::max(std::abs(analytic), std::abs(numeric));
        const double rel = scale < 1e-9 ? 0.0 : std::abs(analytic - numeric) / scale;
        out.max_rel_error = std::max(out.max_rel_error, rel);
        ++out.coordinates;
    }
    return out;
}

inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    Rng rng = make_rng({seed, 0x74656e73});
    for (auto& v : t.storage()) v = uniform(rng, lo, hi);
    return t;
}

}  // namespace dimwm::testing
