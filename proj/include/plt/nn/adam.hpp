#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "plt/common.hpp"

namespace plt::nn {

template <class T>
struct AdamState {
    std::vector<T> m, v;
    long step = 0;

    explicit AdamState(size_t n = 0) : m(n, T(0)), v(n, T(0)) {}
};

// Standard bias-corrected ADAM update.
template <class T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& st, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    if (params.size() != grads.size()) throw shape_error("adam_step: shape mismatch");
    if (st.m.size() != params.size()) {
        st.m.assign(params.size(), T(0));
        st.v.assign(params.size(), T(0));
        st.step = 0;
    }
    ++st.step;
    const double c1 = 1.0 - std::pow(beta1, double(st.step));
    const double c2 = 1.0 - std::pow(beta2, double(st.step));
    for (size_t i = 0; i < params.size(); ++i) {
        const double g = double(grads[i]);
        const double m = beta1 * double(st.m[i]) + (1.0 - beta1) * g;
        const double v = beta2 * double(st.v[i]) + (1.0 - beta2) * g * g;
        st.m[i] = T(m);
        st.v[i] = T(v);
        params[i] -= T(lr * (m / c1) / (std::sqrt(v / c2) + eps));
    }
}

}  // namespace plt::nn
