#pragma once

#include "stemlink/numerics/tensor.hpp"

#include <cmath>

namespace stemlink::numerics {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.0;
    double eps = 1e-8;
};

template <typename S>
struct AdamState {
    Tensor<S> m;
    Tensor<S> v;

    void ensure(const Tensor<S>& p) {
        if (m.size() != p.size()) {
            m = Tensor<S>(p.shape);
            v = Tensor<S>(p.shape);
        }
    }
};

// Bias-corrected Adam with decoupled weight decay (p -= lr*wd*p before the
// moment update). Returns false and leaves everything untouched when the
// gradient contains a non-finite value; the caller counts the incident.
template <typename S>
bool adam_step(Tensor<S>& p, const Tensor<S>& grad, AdamState<S>& st, const AdamConfig& cfg, long t) {
    if (t < 1) throw std::invalid_argument("adam_step: step index must be >= 1");
    require_same_shape(p.shape, grad.shape, "adam_step");
    for (S g : grad.v)
        if (!std::isfinite(static_cast<double>(g))) return false;
    st.ensure(p);
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (cfg.weight_decay != 0.0) p.v[i] -= static_cast<S>(cfg.lr * cfg.weight_decay * p.v[i]);
        const double g = static_cast<double>(grad.v[i]);
        const double m = cfg.beta1 * st.m.v[i] + (1.0 - cfg.beta1) * g;
        const double v = cfg.beta2 * st.v.v[i] + (1.0 - cfg.beta2) * g * g;
        st.m.v[i] = static_cast<S>(m);
        st.v.v[i] = static_cast<S>(v);
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        p.v[i] -= static_cast<S>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
    return true;
}

} // namespace stemlink::numerics
