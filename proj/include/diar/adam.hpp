#pragma once

#include <cmath>
#include <cstdint>

#include "diar/tensor.hpp"

namespace diar {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
struct AdamState {
    Tensor<T> m, v;
    int64_t t = 0;

    explicit AdamState(const std::vector<int>& shape) : m(shape), v(shape) {}
    AdamState() = default;
};

// One bias-corrected Adam update. A non-finite gradient rejects the whole
// step so a NaN batch cannot poison the parameters.
template <class T>
void adam_step(Tensor<T>& param, const Tensor<T>& grad, AdamState<T>& state,
               const AdamConfig& cfg = {}) {
    if (!param.same_shape(grad))
        raise(errc::shape_mismatch, "adam: parameter/gradient shape mismatch");
    if (state.m.numel() == 0) state = AdamState<T>(param.shape);
    if (!grad.all_finite())
        raise(errc::numeric_error, "adam: non-finite gradient, step rejected");

    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < param.numel(); ++i) {
        const double g = static_cast<double>(grad.data[i]);
        const double m = cfg.beta1 * static_cast<double>(state.m.data[i]) + (1.0 - cfg.beta1) * g;
        const double v = cfg.beta2 * static_cast<double>(state.v.data[i]) + (1.0 - cfg.beta2) * g * g;
        state.m.data[i] = static_cast<T>(m);
        state.v.data[i] = static_cast<T>(v);
        const double m_hat = m / bc1;
        const double v_hat = v / bc2;
        param.data[i] =
            static_cast<T>(static_cast<double>(param.data[i]) - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
}

} // namespace diar
