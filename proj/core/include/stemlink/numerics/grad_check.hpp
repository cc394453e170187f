#pragma once

#include "stemlink/numerics/graph.hpp"
#include "stemlink/rng.hpp"

#include <stdexcept>
#include <vector>

namespace stemlink::numerics {

struct GradCheckResult {
    double max_rel_err = 0.0;
    int coordinates_checked = 0;
};

// Central finite differences against the analytic backward pass. The builder
// must be a pure function of the parameter values (dropout off, any internal
// seeding fixed) and return a scalar loss node after registering every tensor
// in `params` via g.param(). Double precision only; h = 1e-5.
template <typename Builder>
GradCheckResult grad_check(Builder&& build, const std::vector<Tensor<double>*>& params, int samples_per_tensor,
                           std::uint64_t seed) {
    constexpr double h = 1e-5;

    auto eval = [&](bool with_grad) {
        Graph<double> g;
        NodeId loss = build(g);
        const double l = g.value(loss).v[0];
        if (!std::isfinite(l)) throw std::runtime_error("grad_check: non-finite loss");
        if (with_grad) g.backward(loss);
        return l;
    };

    for (auto* p : params) p->zero_grad();
    eval(true);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto* p : params) {
        if (!p->grad_finite()) throw std::runtime_error("grad_check: non-finite analytic gradient");
        analytic.push_back(p->g);
    }

    GradCheckResult res;
    Rng rng(seed);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<double>& p = *params[pi];
        if (p.size() == 0) continue;
        std::vector<std::size_t> coords;
        if (static_cast<int>(p.size()) <= samples_per_tensor) {
            for (std::size_t i = 0; i < p.size(); ++i) coords.push_back(i);
        } else {
            std::uniform_int_distribution<std::size_t> pick(0, p.size() - 1);
            for (int i = 0; i < samples_per_tensor; ++i) coords.push_back(pick(rng));
        }
        for (std::size_t c : coords) {
            const double keep = p.v[c];
            p.v[c] = keep + h;
            const double lp = eval(false);
            p.v[c] = keep - h;
            const double lm = eval(false);
            p.v[c] = keep;
            const double numeric = (lp - lm) / (2.0 * h);
            const double a = analytic[pi][c];
            const double denom = std::max(1e-8, std::abs(a) + std::abs(numeric));
            res.max_rel_err = std::max(res.max_rel_err, std::abs(a - numeric) / denom);
            ++res.coordinates_checked;
        }
    }
    return res;
}

} // namespace stemlink::numerics
