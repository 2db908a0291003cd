#pragma once

#include <cmath>
#include <span>

#include "plt/common.hpp"
#include "plt/nn/tensor.hpp"

namespace plt::nn {

// Weighted MAE + MSE, both per-sample means. The MAE subgradient at a kink
// is taken as 0.
template <class T, class U>
double loss_mae_mse(const FeatureMap<T>& pred, std::span<const U> target, FeatureMap<T>* grad,
                    double w_mae = 1.0, double w_mse = 1.0) {
    if (pred.elements() != target.size()) throw shape_error("loss: length mismatch");
    const double n = double(target.size());
    double acc_mae = 0.0, acc_mse = 0.0;
    if (grad && (grad->channels != pred.channels || grad->length != pred.length))
        grad->reshape(pred.channels, pred.length);
    for (size_t i = 0; i < target.size(); ++i) {
        const double d = double(pred.v[i]) - double(target[i]);
        acc_mae += std::abs(d);
        acc_mse += d * d;
        if (grad) {
            const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            grad->v[i] = T((w_mae * sign + w_mse * 2.0 * d) / n);
        }
    }
    return w_mae * acc_mae / n + w_mse * acc_mse / n;
}

}  // namespace plt::nn
